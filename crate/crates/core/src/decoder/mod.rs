//! Toy-scale sparse query decoder.
//!
//! Each layer runs self-attention over a per-query index field, then
//! cross-attention over sampled points of a [`FeatureGrid`], then predicts a
//! class probability and a refined box. Trailing layers can swap in the two
//! sparse variants:
//!
//! * dense-query self-attention, where query `i` only attends to the `K`
//!   queries whose previous boxes are closest under `1 - GIoU`;
//! * rectified cross-attention, where the sampling points are a fixed
//!   `R x R` grid inside the previous box instead of learned offsets.
//!
//! Everything runs in `f64`. The forward pass records a [`Tape`] and
//! [`Tape::backward`] returns exact gradients for every trainable tensor.
//! Previous-layer boxes are treated as constants inside a layer, so no
//! gradient flows through neighbor selection, sampling-grid placement,
//! deformable reference points or the box chain itself.

mod diagnostics;
mod fields;
mod gradcheck;
mod grid;
mod layers;
mod ops;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{attention_diagnostics, AttentionReport, LayerAttention};
pub use fields::{dq_neighborhood, refine_box, rf_grid};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use grid::FeatureGrid;
pub use layers::{
    cross_attention_layer, multi_head_attention, predict_boxes, self_attention_layer, CrossAttentionOutput, LayerOutput,
    QuerySet, SelfAttentionOutput,
};
pub use ops::LN_EPS;
pub use params::{AttnParams, DecoderParams, LayerNorm, LayerParams, Linear, Mlp, ParamBundle, TensorEntry};

pub(crate) use layers::Forward;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecoderError {
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error("parameter shape mismatch for {name}: expected {expected:?}, got {got:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("feature grid has {got} channels, decoder expects {expected}")]
    GridChannels { expected: usize, got: usize },
    #[error("attention field is empty")]
    EmptyField,
    #[error("upstream gradients cover {got} layers, forward produced {expected}")]
    GradientShape { expected: usize, got: usize },
    #[error("backward called before forward")]
    NoForward,
}

/// How a layer places its cross-attention sampling points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossMode {
    /// Reference point at the previous box center plus learned offsets.
    DeformableLearned,
    /// Uniform `R x R` grid inside the previous box.
    RectifiedGrid,
}

/// How box deltas are applied to the previous box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    /// Add deltas to normalized `(cx, cy, w, h)` and clamp to `[0, 1]`.
    #[default]
    Additive,
    /// Add deltas in logit space: `sigmoid(logit(b) + delta)`.
    InverseSigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub channels: usize,
    pub queries: usize,
    /// Neighborhood size of dense-query self-attention.
    pub neighbors: usize,
    /// Side of the rectified sampling grid.
    pub grid_side: usize,
    /// Number of trailing layers using dense-query self-attention.
    pub dq_layers: usize,
    /// Number of trailing layers using rectified cross-attention.
    pub rf_layers: usize,
    /// Learned sampling points per head in deformable layers.
    pub sampling_points: usize,
    pub ffn_dim: usize,
    #[serde(default)]
    pub refine: RefineMode,
}

impl DecoderConfig {
    /// Small configuration used by tests and the gradient check.
    pub fn toy() -> Self {
        Self {
            layers: 2,
            heads: 2,
            channels: 8,
            queries: 12,
            neighbors: 4,
            grid_side: 2,
            dq_layers: 1,
            rf_layers: 1,
            sampling_points: 3,
            ffn_dim: 16,
            refine: RefineMode::Additive,
        }
    }

    pub fn validate(&self) -> Result<(), DecoderError> {
        let fail = |msg: String| Err(DecoderError::InvalidConfig(msg));
        if self.layers == 0 || self.heads == 0 || self.channels == 0 || self.queries == 0 {
            return fail("layers, heads, channels and queries must be positive".into());
        }
        if self.channels % self.heads != 0 {
            return fail(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if self.neighbors == 0 || self.neighbors > self.queries {
            return fail(format!("neighbors must be in 1..={}, got {}", self.queries, self.neighbors));
        }
        if self.grid_side == 0 {
            return fail("grid_side must be at least 1".into());
        }
        if self.dq_layers > self.layers || self.rf_layers > self.layers {
            return fail("dq_layers and rf_layers cannot exceed layers".into());
        }
        if self.sampling_points == 0 || self.ffn_dim == 0 {
            return fail("sampling_points and ffn_dim must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn is_dq_layer(&self, layer: usize) -> bool {
        layer + self.dq_layers >= self.layers
    }

    pub fn cross_mode(&self, layer: usize) -> CrossMode {
        if layer + self.rf_layers >= self.layers {
            CrossMode::RectifiedGrid
        } else {
            CrossMode::DeformableLearned
        }
    }

    /// Self-attention slots per head at `layer`.
    pub fn self_slots(&self, layer: usize) -> usize {
        if self.is_dq_layer(layer) {
            self.neighbors
        } else {
            self.queries
        }
    }

    /// Cross-attention points per head at `layer`.
    pub fn cross_slots(&self, layer: usize) -> usize {
        match self.cross_mode(layer) {
            CrossMode::DeformableLearned => self.sampling_points,
            CrossMode::RectifiedGrid => self.grid_side * self.grid_side,
        }
    }
}

/// Validated decoder: a config plus parameters whose shapes match it.
#[derive(Debug, Clone)]
pub struct Decoder {
    config: DecoderConfig,
    params: DecoderParams,
}

impl Decoder {
    pub fn new(config: DecoderConfig, params: DecoderParams) -> Result<Self, DecoderError> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn params(&self) -> &DecoderParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut DecoderParams {
        &mut self.params
    }

    /// Runs all layers and returns per-layer outputs.
    pub fn forward(&self, grid: &FeatureGrid) -> Result<Vec<LayerOutput>, DecoderError> {
        Ok(self.forward_with_tape(grid)?.0)
    }

    /// Forward pass that also records what backward needs.
    pub fn forward_with_tape(&self, grid: &FeatureGrid) -> Result<(Vec<LayerOutput>, Tape), DecoderError> {
        self.run(grid, None)
    }

    /// Forward pass with the per-layer reference boxes pinned to `references`
    /// (one list per layer). Backward through this pass sees the same
    /// function, which is what the finite-difference oracle relies on.
    pub fn forward_with_references(
        &self,
        grid: &FeatureGrid,
        references: &[Vec<crate::geometry::BBox>],
    ) -> Result<(Vec<LayerOutput>, Tape), DecoderError> {
        if references.len() != self.config.layers || references.iter().any(|r| r.len() != self.config.queries) {
            return Err(DecoderError::InvalidConfig("reference boxes do not match layers x queries".into()));
        }
        self.run(grid, Some(references))
    }

    fn run(
        &self,
        grid: &FeatureGrid,
        references: Option<&[Vec<crate::geometry::BBox>]>,
    ) -> Result<(Vec<LayerOutput>, Tape), DecoderError> {
        if grid.channels() != self.config.channels {
            return Err(DecoderError::GridChannels { expected: self.config.channels, got: grid.channels() });
        }
        let fwd = Forward::run(&self.config, &self.params, grid, references);
        let outputs = fwd.outputs();
        Ok((outputs, Tape { forward: Some(fwd) }))
    }
}

/// Upstream gradient for one layer's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    /// d loss / d class logit, one per query.
    pub logits: Vec<f64>,
    /// d loss / d box corners `[x_min, y_min, x_max, y_max]`, one per query.
    pub boxes: Vec<[f64; 4]>,
    /// Optional d loss / d query features (`queries x channels`, row-major).
    pub features: Option<Vec<f64>>,
}

impl LayerGrad {
    pub fn zeros(queries: usize) -> Self {
        Self { logits: vec![0.0; queries], boxes: vec![[0.0; 4]; queries], features: None }
    }
}

/// Recorded forward state.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    forward: Option<Forward>,
}

impl Tape {
    /// Empty tape, as if no forward pass had run.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Reverse pass: gradients of the loss for every trainable tensor.
    /// `init_boxes` is a constant and always receives zero.
    pub fn backward(&self, decoder: &Decoder, upstream: &[LayerGrad]) -> Result<DecoderParams, DecoderError> {
        let fwd = self.forward.as_ref().ok_or(DecoderError::NoForward)?;
        if upstream.len() != decoder.config.layers {
            return Err(DecoderError::GradientShape { expected: decoder.config.layers, got: upstream.len() });
        }
        Ok(fwd.backward(&decoder.config, &decoder.params, upstream))
    }
}

/// Per-layer reference boxes used by a finished forward pass.
pub fn reference_boxes(outputs: &[LayerOutput]) -> Vec<Vec<crate::geometry::BBox>> {
    outputs.iter().map(|o| o.query_set.reference_boxes.clone()).collect()
}

/// Validates `config` against `params` and runs the forward pass.
pub fn decoder_forward(
    grid: &FeatureGrid,
    config: &DecoderConfig,
    params: &DecoderParams,
) -> Result<Vec<LayerOutput>, DecoderError> {
    Decoder::new(config.clone(), params.clone())?.forward(grid)
}

/// Gradients of a scalar loss given its per-layer upstream gradients.
pub fn decoder_backward(tape: &Tape, decoder: &Decoder, upstream: &[LayerGrad]) -> Result<DecoderParams, DecoderError> {
    tape.backward(decoder, upstream)
}
