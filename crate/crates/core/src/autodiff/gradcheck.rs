use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates checked per parameter tensor; `None` checks all of them.
    pub max_coords_per_param: Option<usize>,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub denom_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords_per_param: None,
            denom_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Compares reverse-mode gradients of `build` against central differences.
/// Frozen parameters are skipped. `build` must be deterministic.
pub fn grad_check<F>(params: &ParamSet, options: &GradCheckOptions, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        g.backward(loss)?.for_params(params)
    };

    let mut eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, p)?;
        let v = g.value(loss).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite("objective under grad_check".into()));
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coords_checked: 0,
    };
    for id in params.ids() {
        if params.is_frozen(id) {
            continue;
        }
        let n = params.get(id).len();
        let coords: Vec<usize> = match options.max_coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let original = params.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = original + options.step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[c] = original - options.step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[c] = original;

            let numeric = (plus - minus) / (2.0 * options.step);
            let exact = analytic[id.index()].data()[c];
            let denom = exact.abs().max(numeric.abs()).max(options.denom_floor);
            let rel = (exact - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = c;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn linear_function_is_exact() {
        let mut p = ParamSet::new();
        let w = p.insert("w", Tensor::row_vector(vec![0.3, -1.2, 2.5]));
        let report = grad_check(&p, &GradCheckOptions::default(), |g, p| {
            let x = g.param(p, w)?;
            let c = g.constant(Tensor::row_vector(vec![2.0, -3.0, 0.5]))?;
            let y = g.mul(x, c)?;
            g.sum(y)
        })
        .unwrap();
        assert_eq!(report.coords_checked, 3);
        assert!(report.max_rel_error <= 1e-10, "{report:?}");
    }

    #[test]
    fn frozen_parameter_is_excluded() {
        let mut p = ParamSet::new();
        let a = p.insert("a", Tensor::scalar(1.0));
        let b = p.insert("b", Tensor::scalar(2.0));
        p.set_frozen(b, true);
        let report = grad_check(&p, &GradCheckOptions::default(), |g, p| {
            let x = g.param(p, a)?;
            let y = g.param(p, b)?;
            g.mul(x, y)
        })
        .unwrap();
        assert_eq!(report.coords_checked, 1);
        assert_eq!(report.worst_param, "a");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut p = ParamSet::new();
        let a = p.insert("a", Tensor::scalar(1e-6));
        let opts = GradCheckOptions {
            step: 1e-3,
            ..Default::default()
        };
        let res = grad_check(&p, &opts, |g, p| {
            let x = g.param(p, a)?;
            g.ln(x)
        });
        assert!(res.is_err());
    }
}
