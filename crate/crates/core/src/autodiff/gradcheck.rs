//! Central finite-difference gradient checking.
//!
//! The numerical side only ever runs forward passes, so it stays independent
//! of the backward rules it validates.

use crate::error::TensorError;
use crate::tensor::Tensor;

use super::{Tape, Var};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error, keeping round-off on
/// near-zero gradients from dominating the ratio.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
    pub max_rel_error: f64,
    /// Number of scalar partial derivatives compared.
    pub checked: usize,
}

/// Compares reverse-mode gradients of a scalar function with central
/// differences. `f` receives one leaf per input and must return a
/// single-element output.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &leaves)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|&v| tape.grad_tensor(v)).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &leaves)?;
        Ok(tape.value(out).data()[0])
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        checked,
    })
}

/// Reduces any output to a scalar with fixed pseudo-random weights so that
/// symmetric errors in individual partials cannot cancel.
pub fn weighted_sum(tape: &mut Tape, y: Var, salt: u64) -> Result<Var, TensorError> {
    let shape = tape.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let weights: Vec<f64> = (0..n as u64)
        .map(|i| {
            let h = (i + 1)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(salt.wrapping_mul(0xBF58_476D_1CE4_E5B9));
            0.5 + ((h >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect();
    let w = tape.constant(Tensor::new(shape, weights)?);
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}
