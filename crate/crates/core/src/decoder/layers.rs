//! Decoder layers: attention blocks, prediction heads, and the recorded
//! forward pass with its reverse sweep.

use ndarray::{s, Array2, Array3};

use super::fields::{dq_neighborhood, refine_box, rf_grid};
use super::grid::FeatureGrid;
use super::ops::{sigmoid, softmax, softmax_backward, MlpCache, NormCache};
use super::params::{AttnParams, DecoderParams, LayerParams, Linear};
use super::{CrossMode, DecoderConfig, DecoderError, LayerGrad, RefineMode};
use crate::geometry::BBox;

/// Per-layer query state.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    /// Query features after the layer, `queries x channels`.
    pub features: Array2<f64>,
    /// Boxes predicted by the layer.
    pub boxes: Vec<BBox>,
    /// Boxes from the previous layer that shaped this layer's fields.
    pub reference_boxes: Vec<BBox>,
    /// Self-attention index field per query, nearest first.
    pub self_fields: Vec<Vec<usize>>,
    /// Self-attention weights per query, `heads x slots` flattened head-major.
    pub self_weights: Vec<Vec<f64>>,
    pub cross_mode: CrossMode,
    /// Cross-attention sampling points per query, `heads x slots` head-major.
    pub cross_points: Vec<Vec<[f64; 2]>>,
    pub cross_weights: Vec<Vec<f64>>,
    pub dense_queries: bool,
    /// Query-key pairs evaluated by self-attention.
    pub self_pairs: usize,
    /// Multiply-adds spent in self-attention (projections, scores, mixing).
    pub self_madds: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub class_logits: Vec<f64>,
    pub class_probs: Vec<f64>,
    pub boxes: Vec<BBox>,
    pub query_set: QuerySet,
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[derive(Debug, Clone)]
struct SelfCache {
    input: Array2<f64>,
    fields: Vec<Vec<usize>>,
    weights: Array2<f64>,
    values: Array2<f64>,
    mixed: Array2<f64>,
    pairs: usize,
    madds: u64,
}

fn self_attention(p: &AttnParams, q: &Array2<f64>, fields: Vec<Vec<usize>>) -> (Array2<f64>, SelfCache) {
    let (n, c) = q.dim();
    let heads = p.heads;
    let slots = p.slots();
    let d = c / heads;
    let mut weights = p.logits.forward(q);
    for mut row in weights.rows_mut() {
        let row = row.as_slice_mut().expect("row-major");
        for m in 0..heads {
            softmax(&mut row[m * slots..(m + 1) * slots]);
        }
    }
    let values = p.value.forward(q);
    let mut mixed = Array2::zeros((n, c));
    let mut pairs = 0;
    for (i, field) in fields.iter().enumerate() {
        debug_assert_eq!(field.len(), slots);
        pairs += field.len();
        for m in 0..heads {
            for (s, &k) in field.iter().enumerate() {
                let a = weights[[i, m * slots + s]];
                for ch in m * d..(m + 1) * d {
                    mixed[[i, ch]] += a * values[[k, ch]];
                }
            }
        }
    }
    let out = p.out.forward(&mixed);
    let (n64, c64, hs) = (n as u64, c as u64, (heads * slots) as u64);
    let madds = n64 * hs * c64 + 2 * n64 * c64 * c64 + pairs as u64 * c64;
    (out, SelfCache { input: q.clone(), fields, weights, values, mixed, pairs, madds })
}

fn self_attention_backward(p: &AttnParams, cache: &SelfCache, d_out: &Array2<f64>, g: &mut AttnParams) -> Array2<f64> {
    let (n, c) = cache.input.dim();
    let heads = p.heads;
    let slots = p.slots();
    let d = c / heads;
    let d_mixed = p.out.backward(&cache.mixed, d_out, &mut g.out);
    let mut d_values = Array2::zeros((n, c));
    let mut d_logits = Array2::zeros((n, heads * slots));
    let mut d_w = vec![0.0; slots];
    for (i, field) in cache.fields.iter().enumerate() {
        for m in 0..heads {
            for (s, &k) in field.iter().enumerate() {
                let a = cache.weights[[i, m * slots + s]];
                let mut acc = 0.0;
                for ch in m * d..(m + 1) * d {
                    acc += d_mixed[[i, ch]] * cache.values[[k, ch]];
                    d_values[[k, ch]] += a * d_mixed[[i, ch]];
                }
                d_w[s] = acc;
            }
            let probs = cache.weights.slice(s![i, m * slots..(m + 1) * slots]).to_vec();
            let mut dl = vec![0.0; slots];
            softmax_backward(&probs, &d_w, &mut dl);
            for (s, v) in dl.into_iter().enumerate() {
                d_logits[[i, m * slots + s]] = v;
            }
        }
    }
    p.logits.backward(&cache.input, &d_logits, &mut g.logits) + p.value.backward(&cache.input, &d_values, &mut g.value)
}

/// Generic attention for one query: head weights from a linear projection
/// of `query` (one score per head and field slot), softmax per head, then
/// `out(sum_m sum_k a_mk * value(z_k)[head m])`.
pub fn multi_head_attention(
    query: &[f64],
    keys: &[Vec<f64>],
    field: &[usize],
    params: &AttnParams,
) -> Result<Vec<f64>, DecoderError> {
    if field.is_empty() {
        return Err(DecoderError::EmptyField);
    }
    if field.len() != params.slots() || query.len() != params.logits.in_dim() {
        return Err(DecoderError::InvalidConfig(format!(
            "field of {} slots against a {}-slot attention block",
            field.len(),
            params.slots()
        )));
    }
    let c = query.len();
    // Value projection of only the keys in the field, placed in a compact table.
    let mut compact = Array2::zeros((field.len(), c));
    for (s, &k) in field.iter().enumerate() {
        compact.row_mut(s).assign(&ndarray::Array1::from(params.value.forward_vec(&keys[k])));
    }
    let heads = params.heads;
    let slots = params.slots();
    let d = c / heads;
    let mut weights = params.logits.forward_vec(query);
    for m in 0..heads {
        softmax(&mut weights[m * slots..(m + 1) * slots]);
    }
    let mut mixed = vec![0.0; c];
    for m in 0..heads {
        for s in 0..slots {
            for ch in m * d..(m + 1) * d {
                mixed[ch] += weights[m * slots + s] * compact[[s, ch]];
            }
        }
    }
    Ok(params.out.forward_vec(&mixed))
}

#[derive(Debug, Clone)]
struct CrossCache {
    input: Array2<f64>,
    mode: CrossMode,
    points: Vec<Vec<[f64; 2]>>,
    weights: Array2<f64>,
    /// Sampled features, `queries x (heads * slots) x channels`.
    samples: Array3<f64>,
    /// Per-head value vectors, `queries x (heads * slots) x head_dim`.
    values: Array3<f64>,
    mixed: Array2<f64>,
}

fn cross_points(
    mode: CrossMode,
    offsets: Option<&Array2<f64>>,
    refs: &[BBox],
    heads: usize,
    slots: usize,
    side: usize,
) -> Vec<Vec<[f64; 2]>> {
    refs.iter()
        .enumerate()
        .map(|(i, b)| match mode {
            CrossMode::DeformableLearned => {
                let [cx, cy] = b.center();
                let off = offsets.expect("deformable layer has offsets");
                (0..heads * slots).map(|j| [cx + off[[i, 2 * j]], cy + off[[i, 2 * j + 1]]]).collect()
            }
            CrossMode::RectifiedGrid => {
                let grid = rf_grid(b, side);
                (0..heads).flat_map(|_| grid.iter().copied()).collect()
            }
        })
        .collect()
}

fn cross_attention(
    p: &AttnParams,
    offsets: Option<&Linear>,
    h: &Array2<f64>,
    refs: &[BBox],
    side: usize,
    grid: &FeatureGrid,
) -> (Array2<f64>, CrossCache) {
    let (n, c) = h.dim();
    let heads = p.heads;
    let slots = p.slots();
    let d = c / heads;
    let mode = if offsets.is_some() { CrossMode::DeformableLearned } else { CrossMode::RectifiedGrid };
    let raw_offsets = offsets.map(|o| o.forward(h));
    let points = cross_points(mode, raw_offsets.as_ref(), refs, heads, slots, side);
    let mut weights = p.logits.forward(h);
    for mut row in weights.rows_mut() {
        let row = row.as_slice_mut().expect("row-major");
        for m in 0..heads {
            softmax(&mut row[m * slots..(m + 1) * slots]);
        }
    }
    let mut samples = Array3::zeros((n, heads * slots, c));
    let mut values = Array3::zeros((n, heads * slots, d));
    let mut mixed = Array2::zeros((n, c));
    let mut buf = vec![0.0; c];
    for i in 0..n {
        for m in 0..heads {
            for s in 0..slots {
                let j = m * slots + s;
                let [u, v] = points[i][j];
                grid.sample(u, v, &mut buf);
                samples.slice_mut(s![i, j, ..]).assign(&ndarray::ArrayView1::from(&buf[..]));
                let a = weights[[i, j]];
                for e in 0..d {
                    let row = m * d + e;
                    let val = p.value.bias[row]
                        + p.value.weight.row(row).iter().zip(&buf).map(|(w, x)| w * x).sum::<f64>();
                    values[[i, j, e]] = val;
                    mixed[[i, row]] += a * val;
                }
            }
        }
    }
    let out = p.out.forward(&mixed);
    (out, CrossCache { input: h.clone(), mode, points, weights, samples, values, mixed })
}

fn cross_attention_backward(
    p: &AttnParams,
    offsets: Option<&Linear>,
    cache: &CrossCache,
    grid: &FeatureGrid,
    d_out: &Array2<f64>,
    g: &mut AttnParams,
    g_offsets: Option<&mut Linear>,
) -> Array2<f64> {
    let (n, c) = cache.input.dim();
    let heads = p.heads;
    let slots = p.slots();
    let d = c / heads;
    let d_mixed = p.out.backward(&cache.mixed, d_out, &mut g.out);
    let mut d_logits = Array2::zeros((n, heads * slots));
    let mut d_offsets = Array2::zeros((n, heads * slots * 2));
    let mut d_w = vec![0.0; slots];
    let mut d_sample = vec![0.0; c];
    for i in 0..n {
        for m in 0..heads {
            for s in 0..slots {
                let j = m * slots + s;
                let a = cache.weights[[i, j]];
                let mut acc = 0.0;
                d_sample.fill(0.0);
                for e in 0..d {
                    let row = m * d + e;
                    acc += d_mixed[[i, row]] * cache.values[[i, j, e]];
                    let dv = a * d_mixed[[i, row]];
                    g.value.bias[row] += dv;
                    for ch in 0..c {
                        g.value.weight[[row, ch]] += dv * cache.samples[[i, j, ch]];
                        d_sample[ch] += dv * p.value.weight[[row, ch]];
                    }
                }
                d_w[s] = acc;
                if cache.mode == CrossMode::DeformableLearned {
                    let [u, v] = cache.points[i][j];
                    let dp = grid.sample_position_grad(u, v, &d_sample);
                    d_offsets[[i, 2 * j]] = dp[0];
                    d_offsets[[i, 2 * j + 1]] = dp[1];
                }
            }
            let probs = cache.weights.slice(s![i, m * slots..(m + 1) * slots]).to_vec();
            let mut dl = vec![0.0; slots];
            softmax_backward(&probs, &d_w, &mut dl);
            for (s, v) in dl.into_iter().enumerate() {
                d_logits[[i, m * slots + s]] = v;
            }
        }
    }
    let mut dh = p.logits.backward(&cache.input, &d_logits, &mut g.logits);
    if let (Some(off), Some(g_off)) = (offsets, g_offsets) {
        dh += &off.backward(&cache.input, &d_offsets, g_off);
    }
    dh
}

#[derive(Debug, Clone)]
struct HeadCache {
    input: Array2<f64>,
    box_mlp: MlpCache,
    jacobians: Vec<[[f64; 4]; 4]>,
}

fn predict(
    params: &LayerParams,
    q: &Array2<f64>,
    prev: &[BBox],
    refine: RefineMode,
) -> (Vec<f64>, Vec<BBox>, HeadCache) {
    let logits = params.class_head.forward(q).column(0).to_vec();
    let (delta, box_mlp) = params.box_head.forward(q);
    let mut boxes = Vec::with_capacity(prev.len());
    let mut jacobians = Vec::with_capacity(prev.len());
    for (b, row) in prev.iter().zip(delta.rows()) {
        let (nb, jac) = refine_box(b, [row[0], row[1], row[2], row[3]], refine);
        boxes.push(nb);
        jacobians.push(jac);
    }
    (logits, boxes, HeadCache { input: q.clone(), box_mlp, jacobians })
}

/// Class probabilities and refined boxes from query features. Box deltas are
/// applied to `prev_boxes` in normalized center-size space and the result is
/// clipped to the unit frame.
pub fn predict_boxes(
    features: &Array2<f64>,
    params: &LayerParams,
    prev_boxes: &[BBox],
    refine: RefineMode,
) -> (Vec<f64>, Vec<BBox>) {
    let (logits, boxes, _) = predict(params, features, prev_boxes, refine);
    (logits.into_iter().map(sigmoid).collect(), boxes)
}

/// Result of one self-attention sub-layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionOutput {
    pub features: Array2<f64>,
    pub fields: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
    pub pairs: usize,
    pub madds: u64,
}

/// `LN(MSA(q) + q)` followed by `LN(MLP(.) + .)`. With `neighbors = Some(k)`
/// each query only attends to its `k` nearest queries by reference box;
/// otherwise to all queries (still ordered nearest first).
pub fn self_attention_layer(
    features: &Array2<f64>,
    reference_boxes: &[BBox],
    params: &LayerParams,
    neighbors: Option<usize>,
) -> SelfAttentionOutput {
    let k = neighbors.unwrap_or(reference_boxes.len());
    let fields = dq_neighborhood(reference_boxes, k);
    let block = self_block(params, features, fields);
    SelfAttentionOutput {
        pairs: block.attn.pairs,
        madds: block.attn.madds,
        weights: rows_of(&block.attn.weights),
        fields: block.attn.fields.clone(),
        features: block.output,
    }
}

/// Result of one cross-attention sub-layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionOutput {
    pub features: Array2<f64>,
    pub points: Vec<Vec<[f64; 2]>>,
    pub weights: Vec<Vec<f64>>,
}

/// `LN(MCA(q, x) + q)` followed by `LN(MLP(.) + .)`. The mode follows the
/// parameters: a layer with an offset head samples learned points around
/// the reference-box center, one without samples the rectified grid.
pub fn cross_attention_layer(
    features: &Array2<f64>,
    reference_boxes: &[BBox],
    grid: &FeatureGrid,
    params: &LayerParams,
    grid_side: usize,
) -> CrossAttentionOutput {
    let block = cross_block(params, features, reference_boxes, grid_side, grid);
    CrossAttentionOutput {
        points: block.attn.points.clone(),
        weights: rows_of(&block.attn.weights),
        features: block.output,
    }
}

#[derive(Debug, Clone)]
struct SelfBlock {
    attn: SelfCache,
    norm1: NormCache,
    ffn: MlpCache,
    norm2: NormCache,
    output: Array2<f64>,
}

fn self_block(params: &LayerParams, q: &Array2<f64>, fields: Vec<Vec<usize>>) -> SelfBlock {
    let (msa, attn) = self_attention(&params.self_attn, q, fields);
    let (h1, norm1) = params.norm1.forward(&(msa + q));
    let (f1, ffn) = params.ffn1.forward(&h1);
    let (output, norm2) = params.norm2.forward(&(f1 + &h1));
    SelfBlock { attn, norm1, ffn, norm2, output }
}

#[derive(Debug, Clone)]
struct CrossBlock {
    attn: CrossCache,
    norm3: NormCache,
    ffn: MlpCache,
    norm4: NormCache,
    output: Array2<f64>,
}

fn cross_block(params: &LayerParams, h: &Array2<f64>, refs: &[BBox], side: usize, grid: &FeatureGrid) -> CrossBlock {
    let (mca, attn) = cross_attention(&params.cross_attn, params.offsets.as_ref(), h, refs, side, grid);
    let (h3, norm3) = params.norm3.forward(&(mca + h));
    let (f2, ffn) = params.ffn2.forward(&h3);
    let (output, norm4) = params.norm4.forward(&(f2 + &h3));
    CrossBlock { attn, norm3, ffn, norm4, output }
}

#[derive(Debug, Clone)]
struct LayerCache {
    refs: Vec<BBox>,
    dense_queries: bool,
    self_block: SelfBlock,
    cross_block: CrossBlock,
    heads: HeadCache,
    logits: Vec<f64>,
    boxes: Vec<BBox>,
}

/// Recorded forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    grid: FeatureGrid,
    layers: Vec<LayerCache>,
}

impl Forward {
    pub(crate) fn run(
        config: &DecoderConfig,
        params: &DecoderParams,
        grid: &FeatureGrid,
        references: Option<&[Vec<BBox>]>,
    ) -> Self {
        let mut q = params.query_embed.clone();
        let mut prev = params.init_box_list();
        let mut layers = Vec::with_capacity(config.layers);
        for (t, lp) in params.layers.iter().enumerate() {
            let refs = references.map_or_else(|| prev.clone(), |r| r[t].clone());
            let fields = dq_neighborhood(&refs, config.self_slots(t));
            let self_block = self_block(lp, &q, fields);
            let cross_block = cross_block(lp, &self_block.output, &refs, config.grid_side, grid);
            let (logits, boxes, heads) = predict(lp, &cross_block.output, &refs, config.refine);
            q = cross_block.output.clone();
            prev = boxes.clone();
            layers.push(LayerCache {
                refs,
                dense_queries: config.is_dq_layer(t),
                self_block,
                cross_block,
                heads,
                logits,
                boxes,
            });
        }
        Self { grid: grid.clone(), layers }
    }

    pub(crate) fn outputs(&self) -> Vec<LayerOutput> {
        self.layers
            .iter()
            .map(|l| {
                let query_set = QuerySet {
                    features: l.cross_block.output.clone(),
                    boxes: l.boxes.clone(),
                    reference_boxes: l.refs.clone(),
                    self_fields: l.self_block.attn.fields.clone(),
                    self_weights: rows_of(&l.self_block.attn.weights),
                    cross_mode: l.cross_block.attn.mode,
                    cross_points: l.cross_block.attn.points.clone(),
                    cross_weights: rows_of(&l.cross_block.attn.weights),
                    dense_queries: l.dense_queries,
                    self_pairs: l.self_block.attn.pairs,
                    self_madds: l.self_block.attn.madds,
                };
                LayerOutput {
                    class_probs: l.logits.iter().map(|&z| sigmoid(z)).collect(),
                    class_logits: l.logits.clone(),
                    boxes: l.boxes.clone(),
                    query_set,
                }
            })
            .collect()
    }

    pub(crate) fn backward(&self, config: &DecoderConfig, params: &DecoderParams, upstream: &[LayerGrad]) -> DecoderParams {
        let mut grads = DecoderParams::zeros(config);
        let (n, c) = params.query_embed.dim();
        let mut d_next = Array2::<f64>::zeros((n, c));
        for t in (0..self.layers.len()).rev() {
            let cache = &self.layers[t];
            let lp = &params.layers[t];
            let up = &upstream[t];
            let g = &mut grads.layers[t];

            let mut dq = d_next;
            if let Some(f) = &up.features {
                dq += &Array2::from_shape_vec((n, c), f.clone()).expect("features gradient is queries x channels");
            }
            // Heads.
            let d_logits = Array2::from_shape_vec((n, 1), up.logits.clone()).expect("one logit per query");
            dq += &lp.class_head.backward(&cache.heads.input, &d_logits, &mut g.class_head);
            let mut d_delta = Array2::zeros((n, 4));
            for (i, (jac, db)) in cache.heads.jacobians.iter().zip(&up.boxes).enumerate() {
                for j in 0..4 {
                    d_delta[[i, j]] = (0..4).map(|k| db[k] * jac[k][j]).sum();
                }
            }
            dq += &lp.box_head.backward(&cache.heads.box_mlp, &d_delta, &mut g.box_head);

            // Cross block.
            let cb = &cache.cross_block;
            let d_r4 = lp.norm4.backward(&cb.norm4, &dq, &mut g.norm4);
            let d_h3 = &d_r4 + &lp.ffn2.backward(&cb.ffn, &d_r4, &mut g.ffn2);
            let d_r3 = lp.norm3.backward(&cb.norm3, &d_h3, &mut g.norm3);
            let d_h2 = &d_r3
                + &cross_attention_backward(
                    &lp.cross_attn,
                    lp.offsets.as_ref(),
                    &cb.attn,
                    &self.grid,
                    &d_r3,
                    &mut g.cross_attn,
                    g.offsets.as_mut(),
                );

            // Self block.
            let sb = &cache.self_block;
            let d_r2 = lp.norm2.backward(&sb.norm2, &d_h2, &mut g.norm2);
            let d_h1 = &d_r2 + &lp.ffn1.backward(&sb.ffn, &d_r2, &mut g.ffn1);
            let d_r1 = lp.norm1.backward(&sb.norm1, &d_h1, &mut g.norm1);
            d_next = &d_r1 + &self_attention_backward(&lp.self_attn, &sb.attn, &d_r1, &mut g.self_attn);
        }
        grads.query_embed = d_next;
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// One query, one head, one channel, two learned sampling points.
    fn scalar_block() -> (AttnParams, Linear, Array2<f64>, Vec<BBox>, FeatureGrid) {
        let mut p = AttnParams::zeros(1, 2, 1);
        p.logits.weight = array![[0.7], [-0.4]];
        p.logits.bias = array![0.1, 0.3];
        p.value.weight = array![[1.3]];
        p.value.bias = array![-0.2];
        p.out.weight = array![[0.9]];
        p.out.bias = array![0.05];
        let off = Linear { weight: array![[0.11], [-0.07], [0.05], [0.13]], bias: array![0.01, 0.02, -0.03, 0.0] };
        let q = array![[0.8]];
        let refs = vec![BBox::new(0.3, 0.2, 0.5, 0.7).unwrap()];
        let grid = FeatureGrid::smooth_random(8, 8, 1, 4);
        (p, off, q, refs, grid)
    }

    fn scalar_output(p: &AttnParams, off: &Linear, q: &Array2<f64>, refs: &[BBox], grid: &FeatureGrid) -> f64 {
        cross_attention(p, Some(off), q, refs, 1, grid).0[[0, 0]]
    }

    #[test]
    fn scalar_block_gradients_match_differences() {
        let (p, off, q, refs, grid) = scalar_block();
        let (_, cache) = cross_attention(&p, Some(&off), &q, &refs, 1, &grid);
        let mut g = AttnParams::zeros(1, 2, 1);
        let mut g_off = Linear::zeros(4, 1);
        let dq = cross_attention_backward(&p, Some(&off), &cache, &grid, &array![[1.0]], &mut g, Some(&mut g_off));

        let h = 1e-5;
        let check = |analytic: f64, f: &dyn Fn(f64) -> f64| {
            let numeric = (f(h) - f(-h)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
            assert!(rel < 1e-6, "analytic {analytic} numeric {numeric}");
        };
        check(dq[[0, 0]], &|e| scalar_output(&p, &off, &(&q + e), &refs, &grid));
        for r in 0..2 {
            check(g.logits.weight[[r, 0]], &|e| {
                let mut pp = p.clone();
                pp.logits.weight[[r, 0]] += e;
                scalar_output(&pp, &off, &q, &refs, &grid)
            });
        }
        check(g.value.weight[[0, 0]], &|e| {
            let mut pp = p.clone();
            pp.value.weight[[0, 0]] += e;
            scalar_output(&pp, &off, &q, &refs, &grid)
        });
        check(g.out.bias[0], &|e| {
            let mut pp = p.clone();
            pp.out.bias[0] += e;
            scalar_output(&pp, &off, &q, &refs, &grid)
        });
        for r in 0..4 {
            check(g_off.weight[[r, 0]], &|e| {
                let mut o = off.clone();
                o.weight[[r, 0]] += e;
                scalar_output(&p, &o, &q, &refs, &grid)
            });
        }
    }
}
