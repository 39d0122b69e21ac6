//! Single-resolution feature map with bilinear sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

/// `height x width x channels` features, row-major with channels innermost.
///
/// Sampling positions are normalized to `[0, 1]` on both axes and map to
/// grid coordinates `u * (width - 1)`, `v * (height - 1)`, so the corners of
/// the unit frame land on the corner cells. Cells outside the grid read as
/// zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Option<Self> {
        (height > 0 && width > 0 && channels > 0 && data.len() == height * width * channels)
            .then_some(Self { height, width, channels, data })
    }

    pub fn constant(height: usize, width: usize, value: &[f64]) -> Self {
        let data = (0..height * width).flat_map(|_| value.iter().copied()).collect();
        Self { height, width, channels: value.len(), data }
    }

    /// Seeded low-frequency field: every channel is a sum of three random
    /// plane waves. Smoothness keeps bilinear kinks small.
    pub fn smooth_random(height: usize, width: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<[f64; 4]> = (0..channels * 3)
            .map(|_| {
                [
                    rng.random_range(0.3..1.0),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect();
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                let u = x as f64 / (width.max(2) - 1) as f64;
                let v = y as f64 / (height.max(2) - 1) as f64;
                for c in 0..channels {
                    data.push(waves[c * 3..c * 3 + 3].iter().map(|w| w[0] * (w[1] * u + w[2] * v + w[3]).sin()).sum());
                }
            }
        }
        Self { height, width, channels, data }
    }

    /// Smooth background plus a bump per box, so features carry where the
    /// pedestrians are. Channel `c` of a bump is `cos(c)` scaled by a Gaussian
    /// in the box-normalized offset.
    pub fn with_objects(height: usize, width: usize, channels: usize, boxes: &[BBox], seed: u64) -> Self {
        let mut grid = Self::smooth_random(height, width, channels, seed);
        for y in 0..height {
            for x in 0..width {
                let u = x as f64 / (width.max(2) - 1) as f64;
                let v = y as f64 / (height.max(2) - 1) as f64;
                let base = (y * width + x) * channels;
                for b in boxes {
                    let [cx, cy, w, h] = b.cxcywh();
                    if w <= 0.0 || h <= 0.0 {
                        continue;
                    }
                    let r2 = ((u - cx) / w).powi(2) + ((v - cy) / h).powi(2);
                    let g = (-2.0 * r2).exp();
                    for c in 0..channels {
                        grid.data[base + c] += 2.0 * g * (c as f64).cos();
                    }
                }
            }
        }
        grid
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Stored vector at integer cell `(x, y)`.
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    fn cell(&self, x: i64, y: i64) -> Option<&[f64]> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.at(x as usize, y as usize))
        }
    }

    fn to_grid(&self, u: f64, v: f64) -> (f64, f64) {
        (u * (self.width - 1) as f64, v * (self.height - 1) as f64)
    }

    /// Bilinear sample at grid coordinates.
    pub fn sample_grid(&self, gx: f64, gy: f64, out: &mut [f64]) {
        out.fill(0.0);
        let x0 = gx.floor();
        let y0 = gy.floor();
        let fx = gx - x0;
        let fy = gy - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let corners = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        for (x, y, w) in corners {
            if w == 0.0 {
                continue;
            }
            if let Some(cell) = self.cell(x, y) {
                for (o, v) in out.iter_mut().zip(cell) {
                    *o += w * v;
                }
            }
        }
    }

    /// Bilinear sample at a normalized position.
    pub fn sample(&self, u: f64, v: f64, out: &mut [f64]) {
        let (gx, gy) = self.to_grid(u, v);
        self.sample_grid(gx, gy, out);
    }

    /// Gradient of `<weights, sample(u, v)>` with respect to `(u, v)`.
    pub fn sample_position_grad(&self, u: f64, v: f64, weights: &[f64]) -> [f64; 2] {
        let (gx, gy) = self.to_grid(u, v);
        let x0 = gx.floor();
        let y0 = gy.floor();
        let fx = gx - x0;
        let fy = gy - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let dot = |x: i64, y: i64| self.cell(x, y).map_or(0.0, |c| c.iter().zip(weights).map(|(a, b)| a * b).sum());
        let v00 = dot(x0, y0);
        let v10 = dot(x0 + 1, y0);
        let v01 = dot(x0, y0 + 1);
        let v11 = dot(x0 + 1, y0 + 1);
        let d_gx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
        let d_gy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
        [d_gx * (self.width - 1) as f64, d_gy * (self.height - 1) as f64]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> FeatureGrid {
        let data = (0..3 * 4 * 2).map(|i| i as f64 * 0.5 - 3.0).collect();
        FeatureGrid::new(3, 4, 2, data).unwrap()
    }

    #[test]
    fn integer_positions_return_stored_vectors() {
        let g = ramp();
        let mut out = [0.0; 2];
        for y in 0..3 {
            for x in 0..4 {
                g.sample_grid(x as f64, y as f64, &mut out);
                assert_eq!(&out, g.at(x, y));
            }
        }
    }

    #[test]
    fn far_outside_samples_are_zero() {
        let g = ramp();
        let mut out = [1.0; 2];
        g.sample_grid(-1.0, 1.0, &mut out);
        assert_eq!(out, [0.0, 0.0]);
        g.sample_grid(2.0, 7.5, &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn midpoint_is_average_of_neighbors() {
        let g = ramp();
        let mut out = [0.0; 2];
        g.sample_grid(1.5, 1.0, &mut out);
        for c in 0..2 {
            assert!((out[c] - 0.5 * (g.at(1, 1)[c] + g.at(2, 1)[c])).abs() < 1e-15);
        }
    }

    #[test]
    fn position_gradient_matches_differences() {
        let g = FeatureGrid::smooth_random(6, 7, 3, 5);
        let w = [0.4, -1.0, 0.7];
        let f = |u: f64, v: f64| {
            let mut out = [0.0; 3];
            g.sample(u, v, &mut out);
            out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        for &(u, v) in &[(0.31, 0.47), (0.77, 0.12), (0.05, 0.93)] {
            let an = g.sample_position_grad(u, v, &w);
            let h = 1e-7;
            let nu = (f(u + h, v) - f(u - h, v)) / (2.0 * h);
            let nv = (f(u, v + h) - f(u, v - h)) / (2.0 * h);
            assert!((an[0] - nu).abs() < 1e-6 && (an[1] - nv).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_grid_samples_constant_inside() {
        let g = FeatureGrid::constant(5, 5, &[2.0, -1.0]);
        let mut out = [0.0; 2];
        g.sample(0.37, 0.81, &mut out);
        assert!((out[0] - 2.0).abs() < 1e-15 && (out[1] + 1.0).abs() < 1e-15);
    }
}
