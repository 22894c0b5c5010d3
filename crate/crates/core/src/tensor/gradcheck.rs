use super::{Graph, Tensor, Var};
use crate::{Error, Result};

/// |analytic − numeric| / max(1, |analytic|, |numeric|).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor], track: bool) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t, track)).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out)?.len() != 1 {
        return Err(Error::Shape(format!(
            "grad_check: function output has shape {:?}, expected a scalar",
            g.value(out)?.shape()
        )));
    }
    Ok((g, vars, out))
}

/// Central-difference check of every input tensor of `f`.
///
/// Returns the maximum relative error per input, in input order.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Invalid(format!("grad_check step must be > 0, got {step}")));
    }
    let (mut g, vars, out) = eval_scalar(&f, inputs, true)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(|o| o.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        })
        .collect::<Result<_>>()?;

    let mut probe = inputs.to_vec();
    let mut worst = vec![0.0f64; inputs.len()];
    for (ti, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = probe[ti].data()[j];
            probe[ti].data_mut()[j] = orig + step;
            let plus = scalar_value(&f, &probe)?;
            probe[ti].data_mut()[j] = orig - step;
            let minus = scalar_value(&f, &probe)?;
            probe[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst[ti] = worst[ti].max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

fn scalar_value<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, _, out) = eval_scalar(f, inputs, false)?;
    Ok(g.value(out)?.data()[0])
}

/// Max relative error between the analytic gradient of scalar `f` at `x` and
/// central differences with the given step.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let errs = grad_check_many(|g, v| f(g, v[0]), std::slice::from_ref(x), step)?;
    Ok(errs[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_norm_is_accurate() {
        let x = Tensor::new([4], vec![0.3, -1.2, 2.5, 0.01]).unwrap();
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v, v)?;
                g.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::new([3], vec![1.0, 2.0, -3.0]).unwrap();
        let err = grad_check(
            |g, v| {
                let s = g.scale(v, 3.5)?;
                g.sum(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rejects_non_scalar_output() {
        let x = Tensor::zeros(&[2]);
        assert!(grad_check(|_, v| Ok(v), &x, 1e-5).is_err());
    }

    #[test]
    fn rejects_bad_step() {
        let x = Tensor::zeros(&[1]);
        assert!(grad_check(|g, v| g.sum(v), &x, 0.0).is_err());
    }
}
