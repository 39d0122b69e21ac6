//! Match-cost construction and minimum-cost bipartite assignment.
//!
//! Rows of a [`CostMatrix`] are predictions, columns are ground truths, and
//! every ground truth must be matched to a distinct prediction. Two solvers
//! share the same shortest-augmenting-path core:
//!
//! * [`solve_exact`] runs the dense Hungarian (Kuhn-Munkres) iteration over
//!   the full matrix.
//! * [`solve_fast_km`] first restricts every ground truth to its `k` nearest
//!   predictions under the query distance, solves that sparse problem, then
//!   checks the resulting dual potentials against the full matrix. A passing
//!   check proves global optimality; a failing one triggers a dense re-solve.
//!   The returned assignment is therefore always optimal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{query_distance_total, BBox};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignmentError {
    #[error("more GTs than predictions ({n_gt} > {n_pred})")]
    MoreGtsThanPredictions { n_gt: usize, n_pred: usize },
    #[error("cost matrix has {got} entries, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite cost at (pred {pred}, gt {gt})")]
    NonFinite { pred: usize, gt: usize },
    #[error("class probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("k_candidates must be at least 1")]
    ZeroCandidates,
    #[error("box lists do not match the cost matrix shape")]
    BoxCountMismatch,
}

/// Weights of the three matching terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub class: f64,
    pub l1: f64,
    pub giou: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self { class: 2.0, l1: 5.0, giou: 2.0 }
    }
}

/// One prediction entering the matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub prob: f64,
    pub bbox: BBox,
}

/// Dense prediction-by-GT cost table, row-major over predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n_pred: usize,
    n_gt: usize,
    data: Vec<f64>,
    weights: MatchWeights,
    max_abs: f64,
}

impl CostMatrix {
    pub fn new(n_pred: usize, n_gt: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        Self::with_weights(n_pred, n_gt, data, MatchWeights::default())
    }

    pub fn with_weights(
        n_pred: usize,
        n_gt: usize,
        data: Vec<f64>,
        weights: MatchWeights,
    ) -> Result<Self, AssignmentError> {
        if n_gt > n_pred {
            return Err(AssignmentError::MoreGtsThanPredictions { n_gt, n_pred });
        }
        if data.len() != n_pred * n_gt {
            return Err(AssignmentError::ShapeMismatch { expected: n_pred * n_gt, got: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(AssignmentError::NonFinite { pred: pos / n_gt.max(1), gt: pos % n_gt.max(1) });
        }
        let max_abs = data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        Ok(Self { n_pred, n_gt, data, weights, max_abs })
    }

    /// Builds from nested rows, one row per prediction.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let n_gt = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_gt);
        for row in rows {
            if row.len() != n_gt {
                return Err(AssignmentError::ShapeMismatch { expected: rows.len() * n_gt, got: rows.len() * row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), n_gt, data)
    }

    pub fn n_pred(&self) -> usize {
        self.n_pred
    }

    pub fn n_gt(&self) -> usize {
        self.n_gt
    }

    pub fn weights(&self) -> MatchWeights {
        self.weights
    }

    #[inline]
    pub fn get(&self, pred: usize, gt: usize) -> f64 {
        self.data[pred * self.n_gt + gt]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, AssignmentError> {
        Self::with_weights(self.n_pred, self.n_gt, self.data.iter().map(|v| v * factor).collect(), self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// Produced by the dense solver.
    OptimalExact,
    /// Pruned solution whose duals were verified on the full matrix.
    OptimalCertified,
    /// Pruned solution failed verification and was re-solved densely.
    FallbackExact,
}

impl Certificate {
    pub fn as_str(&self) -> &'static str {
        match self {
            Certificate::OptimalExact => "optimal_exact",
            Certificate::OptimalCertified => "optimal_certified",
            Certificate::FallbackExact => "fallback_exact",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `gt_to_pred[g]` is the prediction matched to ground truth `g`.
    pub gt_to_pred: Vec<usize>,
    pub total_cost: f64,
    pub certificate: Certificate,
}

impl Assignment {
    /// Inverse view: matched GT for every prediction.
    pub fn pred_to_gt(&self, n_pred: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_pred];
        for (g, &p) in self.gt_to_pred.iter().enumerate() {
            out[p] = Some(g);
        }
        out
    }
}

/// Dual potentials for the rectangular assignment LP: one per GT (`gt`) and
/// one per prediction (`pred`, always `<= 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct Duals {
    pub gt: Vec<f64>,
    pub pred: Vec<f64>,
}

/// DETR-style matching cost: `w_cls * (-p) + w_l1 * |box - gt|_1 + w_giou * (1 - giou)`.
pub fn build_match_cost(
    preds: &[Prediction],
    gts: &[BBox],
    weights: MatchWeights,
) -> Result<CostMatrix, AssignmentError> {
    if gts.len() > preds.len() {
        return Err(AssignmentError::MoreGtsThanPredictions { n_gt: gts.len(), n_pred: preds.len() });
    }
    let mut data = Vec::with_capacity(preds.len() * gts.len());
    for p in preds {
        if !(0.0..=1.0).contains(&p.prob) {
            return Err(AssignmentError::InvalidProbability(p.prob));
        }
        for g in gts {
            let dist = query_distance_total(&p.bbox, g);
            data.push(-weights.class * p.prob + weights.l1 * p.bbox.l1_distance(g) + weights.giou * dist);
        }
    }
    CostMatrix::with_weights(preds.len(), gts.len(), data, weights)
}

/// Dense Hungarian solve. Ties go to the lowest prediction index.
pub fn solve_exact(c: &CostMatrix) -> Assignment {
    let (gt_to_pred, _) = dense_with_duals(c);
    finish(c, gt_to_pred, Certificate::OptimalExact)
}

/// Dense solve that also returns the dual potentials.
pub fn solve_exact_with_duals(c: &CostMatrix) -> (Assignment, Duals) {
    let (gt_to_pred, duals) = dense_with_duals(c);
    (finish(c, gt_to_pred, Certificate::OptimalExact), duals)
}

/// Candidate-pruned solve. Always returns an optimal assignment; only the
/// certificate and the running time depend on how well pruning worked.
pub fn solve_fast_km(
    c: &CostMatrix,
    pred_boxes: &[BBox],
    gt_boxes: &[BBox],
    k_candidates: usize,
) -> Result<Assignment, AssignmentError> {
    if k_candidates == 0 {
        return Err(AssignmentError::ZeroCandidates);
    }
    if pred_boxes.len() != c.n_pred || gt_boxes.len() != c.n_gt {
        return Err(AssignmentError::BoxCountMismatch);
    }
    let candidates = candidate_lists(pred_boxes, gt_boxes, k_candidates);
    Ok(solve_with_lists(c, &candidates))
}

/// Sparse solve over explicit candidate lists (`candidates[g]` holds the
/// prediction indices GT `g` may use), certified against the full matrix.
pub fn solve_with_candidates(c: &CostMatrix, candidates: &[Vec<usize>]) -> Assignment {
    let mut lists = CandidateLists::with_capacity(candidates.len(), candidates.iter().map(Vec::len).sum());
    for list in candidates {
        lists.push(list.iter().map(|&p| p as u32));
    }
    solve_with_lists(c, &lists)
}

fn solve_with_lists(c: &CostMatrix, candidates: &CandidateLists) -> Assignment {
    if let Some((gt_to_pred, duals)) = sparse_with_duals(c, candidates) {
        if certify(c, &gt_to_pred, &duals) {
            return finish(c, gt_to_pred, Certificate::OptimalCertified);
        }
    }
    let (gt_to_pred, _) = dense_with_duals(c);
    finish(c, gt_to_pred, Certificate::FallbackExact)
}

/// For every GT, the `k` predictions with the smallest query distance,
/// ties broken by lower index. Returned lists are sorted by index.
pub fn nearest_candidates(pred_boxes: &[BBox], gt_boxes: &[BBox], k: usize) -> Vec<Vec<usize>> {
    let lists = candidate_lists(pred_boxes, gt_boxes, k);
    (0..gt_boxes.len())
        .map(|g| {
            let mut picked: Vec<usize> = lists.of(g).iter().map(|&p| p as usize).collect();
            picked.sort_unstable();
            picked
        })
        .collect()
}

/// Per-GT prediction lists stored back to back.
struct CandidateLists {
    start: Vec<usize>,
    preds: Vec<u32>,
}

impl CandidateLists {
    fn with_capacity(n_gt: usize, total: usize) -> Self {
        let mut start = Vec::with_capacity(n_gt + 1);
        start.push(0);
        Self { start, preds: Vec::with_capacity(total) }
    }

    fn push(&mut self, preds: impl IntoIterator<Item = u32>) {
        self.preds.extend(preds);
        self.start.push(self.preds.len());
    }

    fn of(&self, g: usize) -> &[u32] {
        &self.preds[self.start[g]..self.start[g + 1]]
    }
}

/// Unordered form of [`nearest_candidates`].
///
/// A prediction that does not overlap a GT sits at distance at least 1. So
/// when at least `k` predictions are closer than that, the overlapping ones
/// are all that matter, and [`SlabIndex`] finds them without touching the
/// rest. Any other GT gets a full scan.
fn candidate_lists(pred_boxes: &[BBox], gt_boxes: &[BBox], k: usize) -> CandidateLists {
    let m = pred_boxes.len();
    let k = k.min(m);
    let mut lists = CandidateLists::with_capacity(gt_boxes.len(), gt_boxes.len() * k);
    if k == m {
        for _ in gt_boxes {
            lists.push(0..m as u32);
        }
        return lists;
    }
    let slabs = SlabIndex::new(pred_boxes);
    let ranges = slabs.slabs(gt_boxes);
    let n_groups = slabs.groups.len();
    let mut hits = vec![0u32; m];
    let mut scratch = vec![0.0f64; m];
    let mut keys = vec![0u128; m];
    let mut spare = vec![0.0f64; m];
    for (gi, g) in gt_boxes.iter().enumerate() {
        let mut found = 0;
        if !g.is_degenerate() {
            found = slabs.close_keys(g, &ranges[gi * n_groups..][..n_groups], &mut hits, &mut scratch, &mut keys);
        }
        if found < k {
            if g.is_degenerate() {
                for (d, p) in scratch.iter_mut().zip(&slabs.sorted) {
                    *d = query_distance_total(p, g);
                }
            } else {
                slabs.all.distances_to(g, &mut scratch);
            }
            found = keys_up_to_kth(&scratch, &slabs.index, k, &mut keys, &mut spare);
        }
        let keys = &mut keys[..found];
        if k < found {
            keys.select_nth_unstable(k - 1);
        }
        lists.push(keys[..k].iter().map(|&key| key as u32));
    }
    lists
}

/// Keys for every distance no larger than the `k`-th smallest; returns how
/// many were written. Finds the cut on plain floats so only a handful of
/// keys get built.
fn keys_up_to_kth(dist: &[f64], index: &[u32], k: usize, keys: &mut [u128], spare: &mut [f64]) -> usize {
    spare.copy_from_slice(dist);
    let (_, &mut cut, _) = spare.select_nth_unstable_by(k - 1, f64::total_cmp);
    let mut found = 0;
    for (&d, &i) in dist.iter().zip(index) {
        keys[found] = distance_key(d, i);
        found += d.total_cmp(&cut).is_le() as usize;
    }
    found
}

/// Slack for rounding in the distance floors used to skip predictions.
const PRUNE_MARGIN: f64 = 1e-9;

/// Packs `(distance, index)` into one integer with the same ordering.
#[inline(always)]
fn distance_key(d: f64, i: u32) -> u128 {
    (ordered_bits(d) as u128) << 32 | i as u128
}

/// Predictions grouped by the binary exponent of their width, each group
/// sorted by left edge.
///
/// Inside a group every width is below the group's `max_width`, so a box
/// overlapping a query in x has its left edge in
/// `(query.x_min - max_width, query.x_max)`. Two binary searches bound that
/// slab; only boxes in it are tested for overlap.
struct SlabIndex {
    groups: Vec<WidthGroup>,
    /// Prediction index of every entry, in storage order.
    index: Vec<u32>,
    all: BoxColumns,
    sorted: Vec<BBox>,
}

struct WidthGroup {
    start: usize,
    end: usize,
    max_width: f64,
}

impl SlabIndex {
    fn new(boxes: &[BBox]) -> Self {
        // Width exponent, then left edge, then index: one integer sort.
        let mut keys: Vec<u128> = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let exponent = (b.width().to_bits() >> 52) as u128;
                exponent << 96 | (ordered_bits(b.x_min()) as u128) << 32 | i as u128
            })
            .collect();
        keys.sort_unstable();
        let order: Vec<u32> = keys.iter().map(|&key| key as u32).collect();
        let sorted: Vec<BBox> = order.iter().map(|&i| boxes[i as usize]).collect();
        let mut groups: Vec<WidthGroup> = Vec::new();
        for (t, (b, key)) in sorted.iter().zip(&keys).enumerate() {
            match groups.last_mut() {
                Some(g) if keys[g.start] >> 96 == key >> 96 => {
                    g.end = t + 1;
                    g.max_width = g.max_width.max(b.width());
                }
                _ => groups.push(WidthGroup { start: t, end: t + 1, max_width: b.width() }),
            }
        }
        Self { groups, index: order, all: BoxColumns::new(&sorted), sorted }
    }

    /// Storage range of each group's slab for each query, row-major by
    /// query. Queries are swept in edge order against each group, so no
    /// per-query search is needed.
    fn slabs(&self, queries: &[BBox]) -> Vec<[u32; 2]> {
        let n_groups = self.groups.len();
        let mut out = vec![[0u32; 2]; queries.len() * n_groups];
        let mut by_left: Vec<u32> = (0..queries.len() as u32).collect();
        by_left.sort_unstable_by(|&a, &b| queries[a as usize].x_min().total_cmp(&queries[b as usize].x_min()));
        let mut by_right: Vec<u32> = (0..queries.len() as u32).collect();
        by_right.sort_unstable_by(|&a, &b| queries[a as usize].x_max().total_cmp(&queries[b as usize].x_max()));
        for (gi, group) in self.groups.iter().enumerate() {
            let x0 = &self.all.x0[group.start..group.end];
            let mut t = 0;
            for &q in &by_left {
                let left = queries[q as usize].x_min();
                let reach = left - group.max_width - PRUNE_MARGIN * (1.0 + left.abs() + group.max_width);
                while t < x0.len() && x0[t] <= reach {
                    t += 1;
                }
                out[q as usize * n_groups + gi][0] = (group.start + t) as u32;
            }
            let mut t = 0;
            for &q in &by_right {
                let right = queries[q as usize].x_max();
                while t < x0.len() && x0[t] < right {
                    t += 1;
                }
                out[q as usize * n_groups + gi][1] = (group.start + t) as u32;
            }
        }
        out
    }

    /// Keys of the predictions in `slabs` that overlap `g` and sit strictly
    /// closer than the non-overlap floor; returns their count. Loops are kept
    /// free of data-dependent branches: hits are compacted by advancing the
    /// write position with the test result.
    fn close_keys(&self, g: &BBox, slabs: &[[u32; 2]], hits: &mut [u32], dist: &mut [f64], keys: &mut [u128]) -> usize {
        let gc = g.corners();
        let ga = g.area();
        let mut n = 0;
        for &[lo, hi] in slabs {
            for t in lo as usize..hi as usize {
                hits[n] = t as u32;
                n += ((gc[0] < self.all.x1[t]) & (self.all.y0[t] < gc[3]) & (gc[1] < self.all.y1[t])) as usize;
            }
        }
        for (d, &t) in dist[..n].iter_mut().zip(&hits[..n]) {
            let t = t as usize;
            *d = pair_distance([self.all.x0[t], self.all.y0[t], self.all.x1[t], self.all.y1[t]], self.all.area[t], gc, ga);
        }
        let limit = 1.0 - PRUNE_MARGIN;
        let mut found = 0;
        for (&d, &t) in dist[..n].iter().zip(&hits[..n]) {
            keys[found] = distance_key(d, self.index[t as usize]);
            found += (d < limit) as usize;
        }
        found
    }
}

/// Bit pattern of `v` reordered so unsigned comparison matches `total_cmp`.
#[inline(always)]
fn ordered_bits(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 { !bits } else { bits | 1 << 63 }
}


/// Prediction boxes split into coordinate columns for a tight distance loop.
struct BoxColumns {
    x0: Vec<f64>,
    y0: Vec<f64>,
    x1: Vec<f64>,
    y1: Vec<f64>,
    area: Vec<f64>,
}

impl BoxColumns {
    fn new(boxes: &[BBox]) -> Self {
        Self {
            x0: boxes.iter().map(BBox::x_min).collect(),
            y0: boxes.iter().map(BBox::y_min).collect(),
            x1: boxes.iter().map(BBox::x_max).collect(),
            y1: boxes.iter().map(BBox::y_max).collect(),
            area: boxes.iter().map(BBox::area).collect(),
        }
    }

    /// `1 - giou(pred, g)` for every prediction; `g` must be non-degenerate.
    fn distances_to(&self, g: &BBox, out: &mut [f64]) {
        self.distances_in(0, g.corners(), g.area(), out);
    }

    /// Distances for the `out.len()` predictions starting at `start`.
    #[inline(always)]
    fn distances_in(&self, start: usize, gc: [f64; 4], ga: f64, out: &mut [f64]) {
        let n = out.len();
        let (x0, y0, x1, y1, area) = (
            &self.x0[start..][..n],
            &self.y0[start..][..n],
            &self.x1[start..][..n],
            &self.y1[start..][..n],
            &self.area[start..][..n],
        );
        for i in 0..n {
            out[i] = pair_distance([x0[i], y0[i], x1[i], y1[i]], area[i], gc, ga);
        }
    }
}

/// Same expression sequence as [`giou`](crate::geometry::giou), so results
/// agree bitwise. Plain comparisons instead of `f64::min`/`max` let the
/// dense loop vectorize; inputs are finite so the two agree.
#[inline(always)]
fn pair_distance(p: [f64; 4], pa: f64, g: [f64; 4], ga: f64) -> f64 {
    #[inline(always)]
    fn lo(a: f64, b: f64) -> f64 {
        if a < b { a } else { b }
    }
    #[inline(always)]
    fn hi(a: f64, b: f64) -> f64 {
        if a > b { a } else { b }
    }
    let iw = hi(lo(p[2], g[2]) - hi(p[0], g[0]), 0.0);
    let ih = hi(lo(p[3], g[3]) - hi(p[1], g[1]), 0.0);
    let inter = iw * ih;
    let union = pa + ga - inter;
    let hull = (hi(p[2], g[2]) - lo(p[0], g[0])) * (hi(p[3], g[3]) - lo(p[1], g[1]));
    1.0 - (inter / union - (hull - union) / hull)
}

/// Reference selection by full sort; used to validate the pruned scan.
pub fn nearest_candidates_bruteforce(pred_boxes: &[BBox], gt_boxes: &[BBox], k: usize) -> Vec<Vec<usize>> {
    let k = k.min(pred_boxes.len());
    gt_boxes
        .iter()
        .map(|g| {
            let mut all: Vec<(f64, usize)> =
                pred_boxes.iter().enumerate().map(|(i, p)| (query_distance_total(p, g), i)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut picked: Vec<usize> = all[..k].iter().map(|&(_, i)| i).collect();
            picked.sort_unstable();
            picked
        })
        .collect()
}

/// Verifies LP optimality of `gt_to_pred` using `duals` over every entry of
/// the matrix: dual feasibility, nonpositive prediction potentials that vanish
/// on unmatched predictions, and tight reduced costs on matched pairs.
pub fn certify(c: &CostMatrix, gt_to_pred: &[usize], duals: &Duals) -> bool {
    let tol = 1e-9 * c.max_abs.max(1.0);
    let mut matched = vec![false; c.n_pred];
    for (g, &p) in gt_to_pred.iter().enumerate() {
        matched[p] = true;
        if (c.get(p, g) - duals.gt[g] - duals.pred[p]).abs() > tol {
            return false;
        }
    }
    for (p, &v) in duals.pred.iter().enumerate() {
        if v > tol || (!matched[p] && v.abs() > tol) {
            return false;
        }
    }
    if c.n_gt == 0 {
        return true;
    }
    for (row, &vp) in c.data.chunks_exact(c.n_gt).zip(&duals.pred) {
        let floor = vp - tol;
        let violated = row.iter().zip(&duals.gt).fold(false, |bad, (&cost, &u)| bad | (cost - u < floor));
        if violated {
            return false;
        }
    }
    true
}

fn finish(c: &CostMatrix, gt_to_pred: Vec<usize>, certificate: Certificate) -> Assignment {
    let total_cost = gt_to_pred.iter().enumerate().map(|(g, &p)| c.get(p, g)).sum();
    Assignment { gt_to_pred, total_cost, certificate }
}

/// Shortest-augmenting-path Hungarian iteration over the dense matrix.
/// GTs are inserted one at a time; each insertion runs a Dijkstra over
/// reduced costs that scans every prediction per step.
fn dense_with_duals(c: &CostMatrix) -> (Vec<usize>, Duals) {
    let n = c.n_gt;
    let m = c.n_pred;
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; m];
    let mut pred_owner: Vec<usize> = vec![usize::MAX; m];
    let mut gt_match: Vec<usize> = vec![usize::MAX; n];
    let mut min_dist = vec![0.0f64; m];
    let mut via = vec![usize::MAX; m];
    let mut used = vec![false; m];
    let mut used_list: Vec<usize> = Vec::with_capacity(m);

    for root in 0..n {
        min_dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        used.iter_mut().for_each(|f| *f = false);
        used_list.clear();

        // Row being expanded, and the path length accumulated so far.
        let mut row = root;
        let mut row_dist = 0.0f64;
        let free_col;
        loop {
            let mut best = f64::INFINITY;
            let mut best_col = usize::MAX;
            let ur = u[row];
            for j in 0..m {
                if used[j] {
                    continue;
                }
                let d = row_dist + c.get(j, row) - ur - v[j];
                if d < min_dist[j] {
                    min_dist[j] = d;
                    via[j] = row;
                }
                if min_dist[j] < best {
                    best = min_dist[j];
                    best_col = j;
                }
            }
            used[best_col] = true;
            used_list.push(best_col);
            if pred_owner[best_col] == usize::MAX {
                free_col = best_col;
                break;
            }
            row = pred_owner[best_col];
            row_dist = best;
        }

        let total = min_dist[free_col];
        u[root] += total;
        for &j in &used_list {
            if j == free_col {
                continue;
            }
            let delta = total - min_dist[j];
            v[j] -= delta;
            u[pred_owner[j]] += delta;
        }

        let mut j = free_col;
        loop {
            let r = via[j];
            let prev = gt_match[r];
            pred_owner[j] = r;
            gt_match[r] = j;
            if r == root {
                break;
            }
            j = prev;
        }
    }
    (gt_match, Duals { gt: u, pred: v })
}

/// Same iteration as the dense solver, restricted to candidate edges. The
/// candidate costs are gathered once, and each search only scans the columns
/// it has reached so far. Returns `None` when some GT cannot be matched
/// within its candidates.
fn sparse_with_duals(c: &CostMatrix, candidates: &CandidateLists) -> Option<(Vec<usize>, Duals)> {
    const UNSEEN: u8 = 0;
    const FRONTIER: u8 = 1;
    const SETTLED: u8 = 2;
    let n = c.n_gt;
    let m = c.n_pred;
    let row_start = &candidates.start;
    let cols = &candidates.preds;
    let costs: Vec<f64> = (0..n).flat_map(|g| candidates.of(g).iter().map(move |&p| c.get(p as usize, g))).collect();

    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; m];
    let mut pred_owner: Vec<usize> = vec![usize::MAX; m];
    let mut gt_match: Vec<usize> = vec![usize::MAX; n];
    let mut dist = vec![0.0f64; m];
    let mut via = vec![usize::MAX; m];
    let mut state = vec![UNSEEN; m];
    let mut reached: Vec<usize> = Vec::new();
    let mut frontier: Vec<usize> = Vec::new();
    let mut settled: Vec<usize> = Vec::new();

    for root in 0..n {
        for &j in &reached {
            state[j] = UNSEEN;
        }
        reached.clear();
        frontier.clear();
        settled.clear();

        let mut row = root;
        let mut row_dist = 0.0f64;
        let free_col = loop {
            let ur = u[row];
            for e in row_start[row]..row_start[row + 1] {
                let j = cols[e] as usize;
                let d = row_dist + costs[e] - ur - v[j];
                match state[j] {
                    UNSEEN => {
                        state[j] = FRONTIER;
                        reached.push(j);
                        frontier.push(j);
                        dist[j] = d;
                        via[j] = row;
                    }
                    FRONTIER if d < dist[j] => {
                        dist[j] = d;
                        via[j] = row;
                    }
                    _ => {}
                }
            }
            let mut best = *frontier.first()?;
            let mut best_at = 0;
            for (t, &j) in frontier.iter().enumerate().skip(1) {
                if dist[j] < dist[best] || (dist[j] == dist[best] && j < best) {
                    best = j;
                    best_at = t;
                }
            }
            frontier.swap_remove(best_at);
            state[best] = SETTLED;
            settled.push(best);
            if pred_owner[best] == usize::MAX {
                break best;
            }
            row = pred_owner[best];
            row_dist = dist[best];
        };

        let total = dist[free_col];
        u[root] += total;
        for &j in &settled {
            if j == free_col {
                continue;
            }
            let delta = total - dist[j];
            v[j] -= delta;
            u[pred_owner[j]] += delta;
        }

        let mut j = free_col;
        loop {
            let r = via[j];
            let prev = gt_match[r];
            pred_owner[j] = r;
            gt_match[r] = j;
            if r == root {
                break;
            }
            j = prev;
        }
    }
    Some((gt_match, Duals { gt: u, pred: v }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    /// Exhaustive search over injective GT -> prediction maps.
    fn brute_force(c: &CostMatrix) -> f64 {
        fn rec(c: &CostMatrix, g: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if g == c.n_gt() {
                *best = best.min(acc);
                return;
            }
            for p in 0..c.n_pred() {
                if !used[p] {
                    used[p] = true;
                    rec(c, g + 1, used, acc + c.get(p, g), best);
                    used[p] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(c, 0, &mut vec![false; c.n_pred()], 0.0, &mut best);
        best
    }

    #[test]
    fn match_cost_examples() {
        let w = MatchWeights { class: 1.0, l1: 1.0, giou: 1.0 };
        let g = bx(0., 0., 1., 1.);
        let c = build_match_cost(&[Prediction { prob: 1.0, bbox: g }], &[g], w).unwrap();
        assert_eq!(c.get(0, 0), -1.0);

        let c = build_match_cost(&[Prediction { prob: 0.5, bbox: bx(0., 0., 1., 1.) }], &[bx(2., 2., 3., 3.)], w)
            .unwrap();
        assert!((c.get(0, 0) - (-0.5 + 8.0 + 16.0 / 9.0)).abs() < 1e-12);

        let w0 = MatchWeights { class: 0.0, ..w };
        for p in [0.0, 0.3, 1.0] {
            let c = build_match_cost(&[Prediction { prob: p, bbox: g }], &[g], w0).unwrap();
            assert_eq!(c.get(0, 0), 0.0);
        }
    }

    #[test]
    fn match_cost_rejects_more_gts() {
        let g = bx(0., 0., 1., 1.);
        let err = build_match_cost(&[Prediction { prob: 0.5, bbox: g }], &[g, g], MatchWeights::default());
        assert!(matches!(err, Err(AssignmentError::MoreGtsThanPredictions { .. })));
    }

    #[test]
    fn solve_exact_two_by_two() {
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let a = solve_exact(&c);
        assert_eq!(a.gt_to_pred, vec![0, 1]);
        assert_eq!(a.total_cost, 2.0);
        assert_eq!(a.certificate, Certificate::OptimalExact);
    }

    #[test]
    fn solve_exact_single_entry() {
        let c = CostMatrix::from_rows(&[vec![3.5]]).unwrap();
        let a = solve_exact(&c);
        assert_eq!(a.gt_to_pred, vec![0]);
        assert_eq!(a.total_cost, 3.5);
    }

    #[test]
    fn ties_go_to_lowest_prediction_index() {
        let c = CostMatrix::new(4, 2, vec![1.0; 8]).unwrap();
        assert_eq!(solve_exact(&c).gt_to_pred, vec![0, 1]);
        let boxes = vec![bx(0., 0., 1., 1.); 4];
        let fast = solve_fast_km(&c, &boxes, &boxes[..2], 4).unwrap();
        assert_eq!(fast.gt_to_pred, vec![0, 1]);
    }

    #[test]
    fn empty_gt_set() {
        let c = CostMatrix::new(3, 0, vec![]).unwrap();
        let a = solve_exact(&c);
        assert!(a.gt_to_pred.is_empty());
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn exact_matches_permutation_oracle_on_8x8_integers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let data: Vec<f64> = (0..64).map(|_| rng.random_range(0..100) as f64).collect();
            let c = CostMatrix::new(8, 8, data).unwrap();
            assert_eq!(solve_exact(&c).total_cost, brute_force(&c));
        }
    }

    #[test]
    fn dense_duals_certify() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let c = CostMatrix::new(12, 5, data).unwrap();
        let (a, duals) = solve_exact_with_duals(&c);
        assert!(certify(&c, &a.gt_to_pred, &duals));
    }

    #[test]
    fn fast_km_disjoint_unique_best_with_k1() {
        let preds: Vec<BBox> = (0..5).map(|i| bx(3.0 * i as f64, 0., 3.0 * i as f64 + 1., 1.)).collect();
        let gts = vec![preds[3], preds[1], preds[4]];
        let pp: Vec<Prediction> = preds.iter().map(|&b| Prediction { prob: 0.5, bbox: b }).collect();
        let c = build_match_cost(&pp, &gts, MatchWeights::default()).unwrap();
        let exact = solve_exact(&c);
        let fast = solve_fast_km(&c, &preds, &gts, 1).unwrap();
        assert_eq!(fast.gt_to_pred, exact.gt_to_pred);
        assert_eq!(fast.gt_to_pred, vec![3, 1, 4]);
        assert_eq!(fast.certificate, Certificate::OptimalCertified);
    }

    #[test]
    fn fast_km_falls_back_when_pruning_drops_the_optimal_edge() {
        // The GT's nearest prediction has zero confidence; a distant one is
        // certain, and the class weight makes it the cheaper match.
        let gt = bx(0., 0., 1., 1.);
        let near = Prediction { prob: 0.0, bbox: gt };
        let far = Prediction { prob: 1.0, bbox: bx(1.5, 0., 2.5, 1.) };
        let w = MatchWeights { class: 100.0, l1: 1.0, giou: 1.0 };
        let c = build_match_cost(&[near, far], &[gt], w).unwrap();
        let exact = solve_exact(&c);
        assert_eq!(exact.gt_to_pred, vec![1]);
        let fast = solve_fast_km(&c, &[near.bbox, far.bbox], &[gt], 1).unwrap();
        assert_eq!(fast.certificate, Certificate::FallbackExact);
        assert_eq!(fast.total_cost, exact.total_cost);
    }

    #[test]
    fn fast_km_infeasible_pruning_falls_back() {
        // Both GTs sit on prediction 0, so k = 1 leaves them competing for it.
        let g = bx(0., 0., 1., 1.);
        let preds = [g, bx(5., 5., 6., 6.)];
        let pp: Vec<Prediction> = preds.iter().map(|&b| Prediction { prob: 0.5, bbox: b }).collect();
        let c = build_match_cost(&pp, &[g, g], MatchWeights::default()).unwrap();
        let fast = solve_fast_km(&c, &preds, &[g, g], 1).unwrap();
        assert_eq!(fast.certificate, Certificate::FallbackExact);
        assert_eq!(fast.total_cost, solve_exact(&c).total_cost);
    }

    #[test]
    fn fast_km_rejects_zero_k() {
        let c = CostMatrix::from_rows(&[vec![1.0]]).unwrap();
        let b = [bx(0., 0., 1., 1.)];
        assert_eq!(solve_fast_km(&c, &b, &b, 0), Err(AssignmentError::ZeroCandidates));
    }

    fn random_instance(seed: u64) -> (CostMatrix, Vec<BBox>, Vec<BBox>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_q = rng.random_range(2..40);
        let n_g = rng.random_range(1..=n_q.min(12));
        let mut boxes = |n: usize| -> Vec<BBox> {
            (0..n)
                .map(|_| {
                    let x = rng.random_range(0.0..1.0);
                    let y = rng.random_range(0.0..1.0);
                    BBox::from_xywh(x, y, rng.random_range(0.02..0.3), rng.random_range(0.02..0.3)).unwrap()
                })
                .collect()
        };
        let pb = boxes(n_q);
        let gb = boxes(n_g);
        let preds: Vec<Prediction> =
            pb.iter().map(|&b| Prediction { prob: rng.random_range(0.0..1.0), bbox: b }).collect();
        (build_match_cost(&preds, &gb, MatchWeights::default()).unwrap(), pb, gb)
    }

    proptest! {
        #[test]
        fn fast_equals_exact(seed in 0u64..10_000, k in 1usize..6) {
            let (c, pb, gb) = random_instance(seed);
            let exact = solve_exact(&c);
            let fast = solve_fast_km(&c, &pb, &gb, k).unwrap();
            prop_assert!((exact.total_cost - fast.total_cost).abs() <= 1e-9);
            let mut seen = std::collections::HashSet::new();
            prop_assert!(fast.gt_to_pred.iter().all(|p| seen.insert(*p)));
        }

        #[test]
        fn square_instances_match_brute_force(seed in 0u64..10_000, n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c = CostMatrix::new(n, n, data).unwrap();
            let bf = brute_force(&c);
            prop_assert!((solve_exact(&c).total_cost - bf).abs() < 1e-9);
            let all: Vec<Vec<usize>> = vec![(0..n).collect(); n];
            prop_assert!((solve_with_candidates(&c, &all).total_cost - bf).abs() < 1e-9);
        }

        #[test]
        fn pruned_candidate_scan_equals_full_sort(seed in 0u64..10_000, k in 1usize..20) {
            let (_, pb, gb) = random_instance(seed);
            prop_assert_eq!(nearest_candidates(&pb, &gb, k), nearest_candidates_bruteforce(&pb, &gb, k));
        }

        #[test]
        fn argmin_is_scale_invariant(seed in 0u64..10_000, factor in 0.01f64..100.0) {
            let (c, _, _) = random_instance(seed);
            let a = solve_exact(&c);
            let b = solve_exact(&c.scaled(factor).unwrap());
            prop_assert_eq!(a.gt_to_pred, b.gt_to_pred);
        }
    }
}
