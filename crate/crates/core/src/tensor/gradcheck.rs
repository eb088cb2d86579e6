use super::{ParamSet, Tape, Tensor, Var};
use crate::error::Result;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over every
/// coordinate of `x`, for a scalar-valued `f`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let input = tape.variable(x.clone());
    let loss = f(&mut tape, input)?;
    let analytic = tape.grad_of(loss, input)?;

    let eval = |probe: Tensor| -> Result<f64> {
        let mut t = Tape::inference();
        let v = t.constant(probe);
        let out = f(&mut t, v)?;
        Ok(t.value(out).item())
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Same check against parameter gradients. At most `max_coords` evenly spaced
/// coordinates are probed per parameter tensor.
pub fn grad_check_params<F>(f: F, set: &ParamSet, h: f64, max_coords: usize) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, set)?;
    let grads = tape.gradients(loss)?;

    let mut probe = set.clone();
    let mut worst = 0.0f64;
    for idx in 0..set.len() {
        let id = super::ParamId(idx as u32);
        if !set.get(id).trainable {
            continue;
        }
        let n = set.get(id).value.len();
        let zero = Tensor::zeros(set.get(id).value.shape());
        let analytic = grads.get(&set.key(id)).unwrap_or(&zero);
        let step = n.div_ceil(max_coords.max(1)).max(1);
        for i in (0..n).step_by(step) {
            let orig = set.get(id).value.data()[i];
            probe.get_mut(id).value.data_mut()[i] = orig + h;
            let up = eval_loss(&f, &probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig - h;
            let down = eval_loss(&f, &probe)?;
            probe.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

fn eval_loss<F>(f: &F, set: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut t = Tape::inference();
    let out = f(&mut t, set)?;
    Ok(t.value(out).item())
}
