use super::{backward, Binding, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares `analytic` against central differences of `f` around `theta`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
pub fn finite_difference_check<F>(mut f: F, theta: &Tensor, analytic: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Usage(format!("finite difference step must be > 0, got {h}")));
    }
    if analytic.shape() != theta.shape() {
        return Err(Error::Shape {
            op: "finite_difference_check",
            left: theta.shape(),
            right: analytic.shape(),
        });
    }
    let base = f(theta)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("f(theta) is not finite: {base}")));
    }
    let mut probe = theta.detached();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value perturbing entry {i}")));
        }
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Builds `build(tape, theta)` once for the analytic gradient, then checks it
/// with [`finite_difference_check`].
pub fn gradient_check<B>(theta: &Tensor, h: f64, mut build: B) -> Result<f64>
where
    B: FnMut(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mut leaf = theta.detached();
    leaf.set_requires_grad(true);
    let x = tape.leaf(&leaf);
    let out = build(&mut tape, x)?;
    let grads = backward(&tape, out)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(theta.rows(), theta.cols()));
    finite_difference_check(
        |t| {
            let mut tape = Tape::new();
            let x = tape.constant(t.clone());
            let out = build(&mut tape, x)?;
            Ok(tape.scalar_value(out))
        },
        theta,
        &analytic,
        h,
    )
}

/// Gradient check of a scalar objective over every tensor of a [`ParamSet`].
///
/// Returns `(parameter name, max relative error)` in parameter order.
pub fn param_gradient_check<B>(params: &ParamSet, h: f64, mut build: B) -> Result<Vec<(String, f64)>>
where
    B: FnMut(&mut Tape, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bind = params.bind(&mut tape, true);
    let out = build(&mut tape, &bind)?;
    let grads = backward(&tape, out)?;
    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.len());
    for id in params.ids() {
        let analytic = grads
            .get(bind.var(id))
            .cloned()
            .expect("bound parameters always receive a gradient");
        let err = finite_difference_check(
            |t| {
                work.get_mut(id).data_mut().copy_from_slice(t.data());
                let mut tape = Tape::new();
                let b = work.bind(&mut tape, false);
                let o = build(&mut tape, &b)?;
                Ok(tape.scalar_value(o))
            },
            params.get(id),
            &analytic,
            h,
        )?;
        work.get_mut(id).data_mut().copy_from_slice(params.get(id).data());
        report.push((params.name(id).to_string(), err));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn linear_function_is_exact() {
        let theta = Tensor::randn(3, 3, 1.0, &mut Rng::new(5));
        let w = Tensor::randn(3, 3, 1.0, &mut Rng::new(6));
        let err = gradient_check(&theta, 1e-3, |tape, x| {
            let wv = tape.constant(w.clone());
            let m = tape.mul(x, wv)?;
            Ok(tape.sum(m))
        })
        .unwrap();
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn zero_step_rejected() {
        let theta = Tensor::zeros(1, 1);
        let r = finite_difference_check(|_| Ok(0.0), &theta, &theta, 0.0);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn non_finite_objective_rejected() {
        let theta = Tensor::zeros(1, 1);
        let r = finite_difference_check(|_| Ok(f64::NAN), &theta, &theta, 1e-4);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
