//! Central finite-difference oracle for decoder gradients.

use serde::Serialize;

use super::{reference_boxes, Decoder, DecoderError, FeatureGrid, LayerGrad, LayerOutput};

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
/// Gradients below the floor are compared in absolute terms; at `h = 1e-5`
/// the central difference itself is only good to about `1e-11 * |loss|`.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub step: f64,
    pub max_rel_err: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares reverse-mode gradients of `loss` against central differences
/// with step `step` on every trainable value.
///
/// `loss` maps layer outputs to the scalar and its upstream gradients. The
/// perturbed passes reuse the unperturbed reference boxes, so the oracle
/// differentiates the same function that backward does.
pub fn finite_difference_check<L>(
    decoder: &Decoder,
    grid: &FeatureGrid,
    loss: L,
    step: f64,
) -> Result<GradCheckReport, DecoderError>
where
    L: Fn(&[LayerOutput]) -> (f64, Vec<LayerGrad>),
{
    let (outputs, tape) = decoder.forward_with_tape(grid)?;
    let refs = reference_boxes(&outputs);
    let (_, upstream) = loss(&outputs);
    let analytic = tape.backward(decoder, &upstream)?.trainable_values();
    let layout = decoder.params().trainable_layout();

    let mut probe = decoder.clone();
    let mut report = GradCheckReport {
        checked: 0,
        step,
        max_rel_err: 0.0,
        worst: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (name, offset, len) in layout {
        for local in 0..len {
            let index = offset + local;
            let base = probe.params_mut().set_trainable(index, f64::NAN);
            probe.params_mut().set_trainable(index, base + step);
            let plus = loss(&probe.forward_with_references(grid, &refs)?.0).0;
            probe.params_mut().set_trainable(index, base - step);
            let minus = loss(&probe.forward_with_references(grid, &refs)?.0).0;
            probe.params_mut().set_trainable(index, base);
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[index], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = err;
                report.worst = format!("{name}[{local}]");
                report.worst_analytic = analytic[index];
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
