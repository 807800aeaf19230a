//! Finite-difference gradient verification.
//!
//! The checker rebuilds the graph through a caller-supplied closure, so the
//! analytic gradient and the central-difference estimate run through exactly
//! the same forward path.

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

/// Default perturbation.
pub const DEFAULT_H: f64 = 1e-5;

/// Compares the reverse-mode gradient of a scalar function against central
/// differences at `points`, returning the maximum relative error over every
/// coordinate of every point.
pub fn grad_check_params<F>(build: F, points: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |points: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.input(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        if tape.value(loss).numel() != 1 {
            return Err(Error::shape("grad_check needs a scalar function".to_string()));
        }
        Ok(tape.value(loss).data[0])
    };

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.input(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(points)
        .map(|(v, p)| grads.get(*v, p))
        .collect();

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        for i in 0..point.numel() {
            let orig = point.data[i];
            work[pi].data[i] = orig + h;
            let plus = eval(&work)?;
            work[pi].data[i] = orig - h;
            let minus = eval(&work)?;
            work[pi].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data[i];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

/// Single-input convenience wrapper.
pub fn grad_check<F>(build: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_params(
        |tape, vars| build(tape, vars[0]),
        std::slice::from_ref(point),
        h,
    )
}
