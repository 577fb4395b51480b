use super::{NumericError, Tape, Tensor, Var};

/// Compare the tape gradient of `f` at `x` with central differences.
///
/// Returns the largest relative error over coordinates, with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, NumericError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, NumericError>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// Multi-input variant: every input is differentiated and checked.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64, NumericError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericError>,
{
    if eps <= 0.0 {
        return Err(NumericError::InvalidArgument("eps must be positive".into()));
    }
    let names: Vec<String> = (0..inputs.len()).map(|i| format!("__input{i}")).collect();
    let eval = |values: &[Tensor]| -> Result<(f64, Tape, Var), NumericError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .zip(&names)
            .map(|(v, n)| tape.param(n, v))
            .collect();
        let out = f(&mut tape, &vars)?;
        let val = tape.value(out).item()?;
        Ok((val, tape, out))
    };
    let (_, tape, out) = eval(inputs)?;
    let grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (k, name) in names.iter().enumerate() {
        let analytic = grads.get(name).expect("registered input");
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let (plus, _, _) = eval(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let (minus, _, _) = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
