use super::graph::{Graph, Var};
use super::param::Params;
use crate::error::{contract, Result};

/// Compares analytic gradients against central finite differences.
///
/// `build` must construct the same scalar loss from the current parameter
/// values on every call. Returns the maximum over all non-frozen parameter
/// entries of `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<M, F>(model: &mut M, eps: f64, mut build: F) -> Result<f64>
where
    M: Params,
    F: FnMut(&mut Graph, &M) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(contract("grad_check needs eps > 0"));
    }
    let eval = |model: &M, build: &mut F| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, model)?;
        Ok(g.scalar(l))
    };

    let mut g = Graph::new();
    let loss = build(&mut g, model)?;
    let base = g.scalar(loss);
    let grads = g.backward(loss)?;
    let again = eval(model, &mut build)?;
    if base.to_bits() != again.to_bits() {
        return Err(contract(format!(
            "loss is not deterministic ({base} vs {again})"
        )));
    }

    let targets: Vec<(super::ParamId, usize, bool)> = model
        .params()
        .iter()
        .map(|p| (p.id, p.value.len(), p.frozen))
        .collect();
    let mut worst = 0.0f64;
    for (k, (id, len, frozen)) in targets.into_iter().enumerate() {
        if frozen {
            continue;
        }
        for j in 0..len {
            let original = model.params()[k].value.data()[j];
            model.params_mut()[k].value.data_mut()[j] = original + eps;
            let plus = eval(model, &mut build)?;
            model.params_mut()[k].value.data_mut()[j] = original - eps;
            let minus = eval(model, &mut build)?;
            model.params_mut()[k].value.data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[j]);
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamId, Parameter};
    use crate::tensor::Tensor;

    #[test]
    fn cubic_passes() {
        let mut p = Parameter::new(ParamId(0), "x", Tensor::scalar(2.0));
        let err = grad_check(&mut p, 1e-5, |g, p| {
            let x = g.param(p, true);
            let x2 = g.square(x);
            let x3 = g.mul(x2, x);
            Ok(g.sum(x3))
        })
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn frozen_parameters_give_zero_error() {
        let mut p = Parameter::new(ParamId(0), "x", Tensor::scalar(2.0));
        p.frozen = true;
        let err = grad_check(&mut p, 1e-5, |g, p| {
            let x = g.param(p, true);
            let x2 = g.square(x);
            Ok(g.sum(x2))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let mut p = Parameter::new(ParamId(0), "x", Tensor::scalar(2.0));
        let mut calls = 0.0;
        let r = grad_check(&mut p, 1e-5, |g, p| {
            calls += 1.0;
            let x = g.param(p, true);
            let y = g.add_scalar(x, calls);
            Ok(g.sum(y))
        });
        assert!(r.is_err());
    }

    #[test]
    fn non_positive_eps_is_rejected() {
        let mut p = Parameter::new(ParamId(0), "x", Tensor::scalar(2.0));
        assert!(grad_check(&mut p, 0.0, |g, p| {
            let x = g.param(p, true);
            Ok(g.sum(x))
        })
        .is_err());
    }
}
