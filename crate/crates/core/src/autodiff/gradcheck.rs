use super::{Tape, Tensor, TensorError, Var};

/// Central finite-difference check of a scalar function of one tensor.
///
/// Returns the largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`
/// over all coordinates of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// Same as [`grad_check`] for a function of several tensors; every
/// coordinate of every input is perturbed.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut work: Vec<Tensor> = xs.to_vec();
    let mut worst: f64 = 0.0;
    for (which, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        for i in 0..xs[which].len() {
            let orig = xs[which].data()[i];
            work[which].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[which].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
