//! Parameter containers, initialization and the named tensor bundle.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CrossMode, DecoderConfig, DecoderError};

/// Affine map `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Array2::zeros((out_dim, in_dim)), bias: Array1::zeros(out_dim) }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        Self { gamma: Array1::ones(dim), beta: Array1::zeros(dim) }
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Attention block. `logits` maps a query to one score per (head, slot);
/// `value` and `out` are the value and output projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams {
    pub heads: usize,
    pub logits: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl AttnParams {
    pub fn zeros(heads: usize, slots: usize, channels: usize) -> Self {
        Self {
            heads,
            logits: Linear::zeros(heads * slots, channels),
            value: Linear::zeros(channels, channels),
            out: Linear::zeros(channels, channels),
        }
    }

    pub fn slots(&self) -> usize {
        self.logits.out_dim() / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub self_attn: AttnParams,
    pub norm1: LayerNorm,
    pub ffn1: Mlp,
    pub norm2: LayerNorm,
    /// Present only in deformable layers: two coordinates per (head, point).
    pub offsets: Option<Linear>,
    pub cross_attn: AttnParams,
    pub norm3: LayerNorm,
    pub ffn2: Mlp,
    pub norm4: LayerNorm,
    pub class_head: Linear,
    pub box_head: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub query_embed: Array2<f64>,
    /// Starting boxes in corner form, `queries x 4`. Not trained.
    pub init_boxes: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

fn mlp_zeros(channels: usize, hidden: usize, out: usize) -> Mlp {
    Mlp { fc1: Linear::zeros(hidden, channels), fc2: Linear::zeros(out, hidden) }
}

impl DecoderParams {
    /// All-zero tensors with the shapes `config` requires (LayerNorm scales
    /// are zero too).
    pub fn zeros(config: &DecoderConfig) -> Self {
        let c = config.channels;
        let layers = (0..config.layers)
            .map(|t| {
                let deformable = config.cross_mode(t) == CrossMode::DeformableLearned;
                let zero_norm = LayerNorm { gamma: Array1::zeros(c), beta: Array1::zeros(c) };
                LayerParams {
                    self_attn: AttnParams::zeros(config.heads, config.self_slots(t), c),
                    norm1: zero_norm.clone(),
                    ffn1: mlp_zeros(c, config.ffn_dim, c),
                    norm2: zero_norm.clone(),
                    offsets: deformable.then(|| Linear::zeros(config.heads * config.sampling_points * 2, c)),
                    cross_attn: AttnParams::zeros(config.heads, config.cross_slots(t), c),
                    norm3: zero_norm.clone(),
                    ffn2: mlp_zeros(c, config.ffn_dim, c),
                    norm4: zero_norm,
                    class_head: Linear::zeros(1, c),
                    box_head: mlp_zeros(c, c, 4),
                }
            })
            .collect();
        Self {
            query_embed: Array2::zeros((config.queries, c)),
            init_boxes: Array2::zeros((config.queries, 4)),
            layers,
        }
    }

    /// Seeded initialization. Weights are uniform in `[-1/sqrt(C), 1/sqrt(C)]`,
    /// biases zero, LayerNorms identity. Offset heads and the final box-delta
    /// layer start at zero so sampling sits on the reference point and boxes
    /// pass through unchanged. Starting boxes are a random pedestrian-shaped
    /// layout inside the unit frame.
    pub fn init(config: &DecoderConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (config.channels as f64).sqrt();
        p.visit_mut(&mut |name, _, values| {
            if name == "init_boxes" || name.ends_with(".bias") || name.ends_with(".beta") {
                return;
            }
            if name.ends_with(".gamma") {
                values.fill(1.0);
                return;
            }
            if name.contains(".offsets.") || name.contains(".box_head.fc2.") {
                return;
            }
            for v in values.iter_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        });
        for mut row in p.init_boxes.rows_mut() {
            let h = rng.random_range(0.1..0.4);
            let w = h * rng.random_range(0.35..0.5);
            let cx = rng.random_range(w / 2.0..1.0 - w / 2.0);
            let cy = rng.random_range(h / 2.0..1.0 - h / 2.0);
            row.assign(&Array1::from(vec![cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]));
        }
        p
    }

    /// Adds seeded uniform noise in `[-scale, scale]` to every trainable
    /// tensor, including the ones that start at zero.
    pub fn perturb(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.visit_trainable_mut(&mut |_, _, values| {
            for v in values.iter_mut() {
                *v += rng.random_range(-scale..=scale);
            }
        });
    }

    /// Visits every tensor (trainable ones and `init_boxes`) in a fixed order.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_array2(f, "query_embed", &mut self.query_embed);
        visit_array2(f, "init_boxes", &mut self.init_boxes);
        for (t, layer) in self.layers.iter_mut().enumerate() {
            let pre = format!("layers.{t}");
            visit_attn(f, &format!("{pre}.self_attn"), &mut layer.self_attn);
            visit_norm(f, &format!("{pre}.norm1"), &mut layer.norm1);
            visit_mlp(f, &format!("{pre}.ffn1"), &mut layer.ffn1);
            visit_norm(f, &format!("{pre}.norm2"), &mut layer.norm2);
            if let Some(off) = layer.offsets.as_mut() {
                visit_linear(f, &format!("{pre}.offsets"), off);
            }
            visit_attn(f, &format!("{pre}.cross_attn"), &mut layer.cross_attn);
            visit_norm(f, &format!("{pre}.norm3"), &mut layer.norm3);
            visit_mlp(f, &format!("{pre}.ffn2"), &mut layer.ffn2);
            visit_norm(f, &format!("{pre}.norm4"), &mut layer.norm4);
            visit_linear(f, &format!("{pre}.class_head"), &mut layer.class_head);
            visit_mlp(f, &format!("{pre}.box_head"), &mut layer.box_head);
        }
    }

    /// Like [`visit_mut`](Self::visit_mut) but skips `init_boxes`.
    pub fn visit_trainable_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.visit_mut(&mut |name, shape, values| {
            if name != "init_boxes" {
                f(name, shape, values)
            }
        });
    }

    pub fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        // Visiting a clone keeps one traversal order without duplicating it.
        let mut copy = self.clone();
        copy.visit_mut(&mut |name, shape, values| f(name, shape, values));
    }

    pub fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |name, _, values| {
            if name != "init_boxes" {
                n += values.len();
            }
        });
        n
    }

    /// Flat copy of every trainable value in visit order.
    pub fn trainable_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |name, _, values| {
            if name != "init_boxes" {
                out.extend_from_slice(values);
            }
        });
        out
    }

    /// Names of trainable tensors, with the flat offset where each starts.
    pub fn trainable_layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut offset = 0;
        self.visit(&mut |name, _, values| {
            if name != "init_boxes" {
                out.push((name.to_string(), offset, values.len()));
                offset += values.len();
            }
        });
        out
    }

    /// Sets trainable value number `index` (visit order) and returns the old value.
    pub fn set_trainable(&mut self, index: usize, value: f64) -> f64 {
        let mut seen = 0;
        let mut old = f64::NAN;
        self.visit_trainable_mut(&mut |_, _, values| {
            if index >= seen && index < seen + values.len() {
                old = values[index - seen];
                values[index - seen] = value;
            }
            seen += values.len();
        });
        old
    }

    pub fn init_box_list(&self) -> Vec<crate::geometry::BBox> {
        self.init_boxes
            .rows()
            .into_iter()
            .map(|r| crate::geometry::BBox::new(r[0], r[1], r[2], r[3]).expect("init boxes are validated"))
            .collect()
    }

    pub fn check_shapes(&self, config: &DecoderConfig) -> Result<(), DecoderError> {
        let expected = Self::zeros(config).to_bundle();
        let got = self.to_bundle();
        ParamBundle::compare(&expected, &got)?;
        for r in self.init_boxes.rows() {
            if crate::geometry::BBox::new(r[0], r[1], r[2], r[3]).is_err() {
                return Err(DecoderError::InvalidConfig(format!("invalid init box {r}")));
            }
        }
        Ok(())
    }

    pub fn to_bundle(&self) -> ParamBundle {
        let mut tensors = Vec::new();
        self.visit(&mut |name, shape, values| {
            tensors.push(TensorEntry { name: name.to_string(), shape: shape.to_vec(), values: values.to_vec() })
        });
        ParamBundle { format: BUNDLE_FORMAT.to_string(), tensors }
    }

    /// Rebuilds parameters for `config` from a bundle. Every expected tensor
    /// must be present with the right shape and nothing else may appear.
    pub fn from_bundle(config: &DecoderConfig, bundle: &ParamBundle) -> Result<Self, DecoderError> {
        let mut p = Self::zeros(config);
        ParamBundle::compare(&p.to_bundle(), bundle)?;
        let mut it = bundle.tensors.iter();
        p.visit_mut(&mut |_, _, values| {
            let entry = it.next().expect("compare checked the tensor list");
            values.copy_from_slice(&entry.values);
        });
        p.check_shapes(config)?;
        Ok(p)
    }
}

fn visit_array2(f: &mut dyn FnMut(&str, &[usize], &mut [f64]), name: &str, a: &mut Array2<f64>) {
    let shape = [a.nrows(), a.ncols()];
    f(name, &shape, a.as_slice_mut().expect("standard layout"));
}

fn visit_array1(f: &mut dyn FnMut(&str, &[usize], &mut [f64]), name: &str, a: &mut Array1<f64>) {
    let shape = [a.len()];
    f(name, &shape, a.as_slice_mut().expect("standard layout"));
}

fn visit_linear(f: &mut dyn FnMut(&str, &[usize], &mut [f64]), pre: &str, l: &mut Linear) {
    visit_array2(f, &format!("{pre}.weight"), &mut l.weight);
    visit_array1(f, &format!("{pre}.bias"), &mut l.bias);
}

fn visit_norm(f: &mut dyn FnMut(&str, &[usize], &mut [f64]), pre: &str, n: &mut LayerNorm) {
    visit_array1(f, &format!("{pre}.gamma"), &mut n.gamma);
    visit_array1(f, &format!("{pre}.beta"), &mut n.beta);
}

fn visit_mlp(f: &mut dyn FnMut(&str, &[usize], &mut [f64]), pre: &str, m: &mut Mlp) {
    visit_linear(f, &format!("{pre}.fc1"), &mut m.fc1);
    visit_linear(f, &format!("{pre}.fc2"), &mut m.fc2);
}

fn visit_attn(f: &mut dyn FnMut(&str, &[usize], &mut [f64]), pre: &str, a: &mut AttnParams) {
    visit_linear(f, &format!("{pre}.logits"), &mut a.logits);
    visit_linear(f, &format!("{pre}.value"), &mut a.value);
    visit_linear(f, &format!("{pre}.out"), &mut a.out);
}

pub const BUNDLE_FORMAT: &str = "pedset-tensors-v1";

/// One named tensor: shape plus row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Flat JSON tensor bundle: `{"format": ..., "tensors": [{name, shape, values}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBundle {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
}

impl ParamBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn compare(expected: &ParamBundle, got: &ParamBundle) -> Result<(), DecoderError> {
        for (i, e) in expected.tensors.iter().enumerate() {
            let g = match got.tensors.get(i) {
                Some(g) if g.name == e.name => g,
                _ => match got.get(&e.name) {
                    // Present but out of order: still a layout error, reported by name.
                    Some(_) => return Err(DecoderError::UnknownParam(format!("{} (out of order)", e.name))),
                    None => return Err(DecoderError::MissingParam(e.name.clone())),
                },
            };
            let numel: usize = g.shape.iter().product();
            if g.shape != e.shape || numel != g.values.len() {
                return Err(DecoderError::ShapeMismatch {
                    name: e.name.clone(),
                    expected: e.shape.clone(),
                    got: g.shape.clone(),
                });
            }
        }
        if let Some(extra) = got.tensors.get(expected.tensors.len()) {
            return Err(DecoderError::UnknownParam(extra.name.clone()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_round_trips_bit_exactly() {
        let cfg = DecoderConfig::toy();
        let mut p = DecoderParams::init(&cfg, 3);
        p.perturb(4, 0.3);
        let json = p.to_bundle().to_json();
        let back = DecoderParams::from_bundle(&cfg, &ParamBundle::from_json(&json).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn bundle_shape_errors_are_reported() {
        let cfg = DecoderConfig::toy();
        let p = DecoderParams::init(&cfg, 1);
        let mut b = p.to_bundle();
        b.tensors[2].shape = vec![1, 1];
        assert!(matches!(DecoderParams::from_bundle(&cfg, &b), Err(DecoderError::ShapeMismatch { .. })));
        let mut b = p.to_bundle();
        b.tensors.pop();
        assert!(matches!(DecoderParams::from_bundle(&cfg, &b), Err(DecoderError::MissingParam(_))));
        let mut b = p.to_bundle();
        b.tensors.push(TensorEntry { name: "extra".into(), shape: vec![1], values: vec![0.0] });
        assert!(matches!(DecoderParams::from_bundle(&cfg, &b), Err(DecoderError::UnknownParam(_))));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = DecoderConfig::toy();
        let a = DecoderParams::init(&cfg, 9);
        assert_eq!(a, DecoderParams::init(&cfg, 9));
        let bound = 1.0 / (cfg.channels as f64).sqrt();
        a.visit(&mut |name, _, values| {
            if name != "init_boxes" {
                assert!(values.iter().all(|v| v.abs() <= bound || *v == 1.0), "{name}");
            }
            if name.contains("offsets") || name.contains("box_head.fc2") {
                assert!(values.iter().all(|&v| v == 0.0), "{name}");
            }
        });
        for b in a.init_box_list() {
            assert!(b.x_min() >= 0.0 && b.x_max() <= 1.0 && b.y_min() >= 0.0 && b.y_max() <= 1.0);
        }
    }

    #[test]
    fn set_trainable_addresses_visit_order() {
        let cfg = DecoderConfig::toy();
        let mut p = DecoderParams::init(&cfg, 2);
        let flat = p.trainable_values();
        let old = p.set_trainable(flat.len() - 1, 42.0);
        assert_eq!(old, flat[flat.len() - 1]);
        assert_eq!(*p.trainable_values().last().unwrap(), 42.0);
        assert_eq!(p.trainable_count(), flat.len());
    }
}
