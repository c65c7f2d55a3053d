use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function against central
/// differences and returns the worst relative error
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-8)`.
pub fn grad_check<F>(f: F, input: &Tensor, epsilon: f32) -> Result<f32>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let x = tape.var(input.clone());
    let y = f(&tape, x)?;
    if y.numel() != 1 {
        return Err(Error::contract(format!("grad_check function returned shape {:?}", y.shape())));
    }
    let analytic = tape.backward(y)?.wrt(x);

    let eval = |t: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(t);
        Ok(f(&tape, v)?.value().item() as f64)
    };
    let mut worst = 0.0f64;
    for i in 0..input.numel() {
        let mut plus = input.clone();
        plus.data_mut()[i] += epsilon;
        let mut minus = input.clone();
        minus.data_mut()[i] -= epsilon;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * epsilon as f64);
        let a = analytic.data()[i] as f64;
        let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst as f32)
}
