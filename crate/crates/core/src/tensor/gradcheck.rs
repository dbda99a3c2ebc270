use super::{Tape, Tensor, Var};
use crate::error::Result;

fn eval_scalar<F>(f: &F, x: &Tensor) -> Option<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let out = f(&mut tape, xv).ok()?;
    let v = tape.value(out).data();
    (v.len() == 1).then(|| v[0])
}

/// Largest relative disagreement between the tape gradient of the scalar
/// function `f` at `x` and central finite differences with step `eps`.
///
/// The per-coordinate error is `|analytic − numeric| / max(1, |analytic|,
/// |numeric|)`. Any failure or non-finite value yields `f64::INFINITY`.
pub fn check_gradients<F>(f: F, x: &Tensor, eps: f64) -> f64
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    check_gradients_at(f, x, eps, &coords)
}

/// [`check_gradients`] restricted to the flat coordinates in `coords`.
pub fn check_gradients_at<F>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> f64
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let x_rg = x.clone().with_requires_grad(true);
    let mut tape = Tape::new();
    let xv = tape.leaf(&x_rg);
    let Ok(out) = f(&mut tape, xv) else {
        return f64::INFINITY;
    };
    let Ok(grads) = tape.backward(out) else {
        return f64::INFINITY;
    };
    let zeros = vec![0.0; x.numel()];
    let analytic = grads.get(xv).unwrap_or(&zeros);

    let mut worst: f64 = 0.0;
    let mut probe = x.clone().with_requires_grad(false);
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval_scalar(&f, &probe);
        probe.data_mut()[i] = orig - eps;
        let down = eval_scalar(&f, &probe);
        probe.data_mut()[i] = orig;
        let (Some(up), Some(down)) = (up, down) else {
            return f64::INFINITY;
        };
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        if !numeric.is_finite() || !a.is_finite() {
            return f64::INFINITY;
        }
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    worst
}
