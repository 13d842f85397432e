//! Central-difference gradient checking.

use thiserror::Error;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum GradCheckError {
    #[error("function is not finite at input {input}, coordinate {coordinate}")]
    NonFinite { input: usize, coordinate: usize },
}

/// Fixed projection weights so vector outputs reduce to a scalar without
/// symmetric cancellations.
fn projection(len: usize) -> Vec<f64> {
    (0..len).map(|i| 1.0 + 0.5 * ((i + 1) as f64).sin()).collect()
}

fn evaluate<F>(f: &F, points: &[Tensor]) -> (f64, usize)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::default();
    let vars: Vec<Var> = points.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars);
    let value = tape.value(out);
    let proj = projection(value.len());
    let total = value.data().iter().zip(&proj).map(|(a, b)| a * b).sum();
    (total, value.len())
}

/// Largest `|analytic − numeric| / max(1, |analytic|)` over every coordinate
/// of every input, where `numeric` is a central difference with step `eps`.
///
/// The output of `f` is reduced to a scalar with fixed positive weights
/// before differentiation.
pub fn grad_check<F>(f: F, points: &[Tensor], eps: f64) -> Result<f64, GradCheckError>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::default();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars);
    let value = tape.value(out);
    if !value.is_finite() {
        return Err(GradCheckError::NonFinite {
            input: 0,
            coordinate: 0,
        });
    }
    let seed = Tensor::new(value.shape(), projection(value.len()));
    let grads = tape.backward(&[(out, &seed)]);

    let mut worst = 0.0f64;
    let mut probe = points.to_vec();
    for (input, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        for coordinate in 0..points[input].len() {
            let original = points[input].data()[coordinate];
            probe[input].data_mut()[coordinate] = original + eps;
            let (plus, _) = evaluate(&f, &probe);
            probe[input].data_mut()[coordinate] = original - eps;
            let (minus, _) = evaluate(&f, &probe);
            probe[input].data_mut()[coordinate] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(GradCheckError::NonFinite { input, coordinate });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[coordinate];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
