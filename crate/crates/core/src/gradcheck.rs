use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{bind, grads_for, Bound, ParamSet};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub coordinates_checked: usize,
    pub max_rel_err: f64,
    /// (param name, flat index, rel err) for coordinates over tolerance.
    pub failures: Vec<(String, usize, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Central-difference check of the tape gradients for a scalar loss built
/// by `build`. Samples `coords` random parameter coordinates, compares
/// d loss / d theta against (f(theta+h) - f(theta-h)) / 2h with relative
/// error max-normalized by the larger magnitude. Meant to run with f64
/// parameters; f32 cannot reach tight tolerances.
pub fn gradcheck<T: Scalar>(
    params: &mut ParamSet<T>,
    build: impl Fn(&mut Graph<T>, &Bound) -> Var,
    coords: usize,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    let eval = |p: &ParamSet<T>| -> Result<f64> {
        let mut g = Graph::new();
        let b = bind(&mut g, p, false);
        let loss = build(&mut g, &b);
        let v = g.value(loss).item().as_f64();
        if !v.is_finite() {
            return Err(Error::numerical("loss is not finite during gradcheck"));
        }
        Ok(v)
    };

    // analytic gradients once
    let analytic: Vec<Option<crate::tensor::Tensor<T>>> = {
        let mut g = Graph::new();
        let b = bind(&mut g, params, true);
        let loss = build(&mut g, &b);
        if !g.value(loss).item().as_f64().is_finite() {
            return Err(Error::numerical("loss is not finite during gradcheck"));
        }
        let mut grads = g.backward(loss);
        grads_for(&mut grads, &b, params)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = params.len();
    let mut report = GradcheckReport { coordinates_checked: 0, max_rel_err: 0.0, failures: Vec::new() };
    for _ in 0..coords {
        let e = rng.gen_range(0..entries);
        let numel = params.entry(e).1.numel();
        let i = rng.gen_range(0..numel);
        let name = params.entry(e).0.to_string();
        let a = match &analytic[e] {
            Some(t) => t.data()[i].as_f64(),
            None => 0.0,
        };
        let orig = params.entry_mut(e).data()[i];
        params.entry_mut(e).data_mut()[i] = orig + T::of(h);
        let fp = eval(params)?;
        params.entry_mut(e).data_mut()[i] = orig - T::of(h);
        let fm = eval(params)?;
        params.entry_mut(e).data_mut()[i] = orig;
        let n = (fp - fm) / (2.0 * h);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
        report.coordinates_checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
        }
        if rel > tol {
            report.failures.push((name, i, rel));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::kaiming_linear;
    use crate::tensor::Tensor;

    #[test]
    fn catches_correct_and_broken_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p: ParamSet<f64> = ParamSet::new();
        p.add("w", kaiming_linear(&mut rng, 3, 2));
        p.add("b", Tensor::zeros(&[2]));
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);

        let xc = x.clone();
        let rep = gradcheck(
            &mut p,
            move |g, b| {
                let xv = g.constant(xc.clone());
                let y = g.linear(xv, b.var("w"), b.var("b"));
                let s = g.sigmoid(y);
                g.mean_all(s)
            },
            30,
            1e-5,
            1e-6,
            7,
        )
        .unwrap();
        assert!(rep.passed(), "max rel err {}", rep.max_rel_err);
        assert_eq!(rep.coordinates_checked, 30);

        // a deliberately wrong loss pairing must fail: analytic gradient of
        // mean(w) vs numerical of mean(w^2) around nonzero w
        let xc = x.clone();
        let rep = gradcheck(
            &mut p,
            move |g, b| {
                let xv = g.constant(xc.clone());
                let y = g.linear(xv, b.var("w"), b.var("b"));
                // scale by a value read from the tensor, which the tape
                // cannot differentiate through; FD sees it, backward does not
                let leak = g.value(y).data()[0];
                let s = g.scale(y, leak);
                g.mean_all(s)
            },
            30,
            1e-5,
            1e-6,
            7,
        )
        .unwrap();
        assert!(!rep.passed());
    }
}
