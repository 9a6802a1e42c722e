//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates probed per parameter; parameters at or below this size are probed exhaustively.
    pub max_probes_per_param: usize,
    pub seed: u64,
    /// Times a probe may shrink its step tenfold when successive estimates
    /// disagree, which happens when the step straddles a kink (ReLU, abs, max).
    pub refinements: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_probes_per_param: 6,
            seed: 0,
            refinements: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over probes of `|analytic − numeric| / max(1, |numeric|)`.
    pub max_rel_err: f64,
    pub probes: usize,
    /// Parameter path and flat index of the worst probe.
    pub worst: Option<(String, usize)>,
}

/// Compares `backward()` against central differences of the scalar `f` for
/// probed coordinates of every parameter in `store`. `store` is restored on return.
pub fn finite_diff_check<F>(store: &mut ParamStore, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &ParamStore) -> Result<Var>,
{
    let tape = Tape::new();
    let loss = f(&tape, store)?;
    let grads = tape.backward(loss)?;
    let ids: Vec<ParamId> = store.param_ids().collect();
    let analytic: Vec<Option<Vec<f64>>> = ids
        .iter()
        .map(|&id| grads.param_grad(id).map(|g| g.data().to_vec()))
        .collect();
    drop(grads);
    drop(tape);

    let eval = |store: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let v = f(&tape, store)?;
        Ok(tape.value(v).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        probes: 0,
        worst: None,
    };
    for (pi, &id) in ids.iter().enumerate() {
        let n = store.param(id).value.numel();
        let coords: Vec<usize> = if n <= opts.max_probes_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_probes_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for j in coords {
            let mut central = |eps: f64| -> Result<f64> {
                let orig = store.param(id).value.data()[j];
                store.param_mut(id).value.data_mut()[j] = orig + eps;
                let up = eval(store);
                store.param_mut(id).value.data_mut()[j] = orig - eps;
                let down = eval(store);
                store.param_mut(id).value.data_mut()[j] = orig;
                Ok((up? - down?) / (2.0 * eps))
            };
            let mut eps = opts.eps;
            let mut numeric = central(eps)?;
            for _ in 0..opts.refinements {
                let finer = central(eps / 10.0)?;
                let agree = (finer - numeric).abs() <= 1e-7 * numeric.abs().max(1.0);
                eps /= 10.0;
                numeric = finer;
                if agree {
                    break;
                }
            }
            let a = analytic[pi].as_ref().map_or(0.0, |g| g[j]);
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            report.probes += 1;
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = rel;
                report.worst = Some((store.param(id).name.clone(), j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn relu_near_kink() -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add_param("x", Tensor::vector(&[3e-6, -0.5, 0.7])).unwrap();
        (store, id)
    }

    #[test]
    fn straddled_kink_misleads_a_fixed_step() {
        let (mut store, id) = relu_near_kink();
        let f = |t: &Tape, s: &ParamStore| Ok(t.sum(t.relu(t.param(s, id))));
        let r = finite_diff_check(&mut store, f, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_err > 0.3, "{r:?}");
        assert_eq!(r.worst, Some(("x".into(), 0)));
    }

    #[test]
    fn refinement_steps_off_the_kink() {
        let (mut store, id) = relu_near_kink();
        let f = |t: &Tape, s: &ParamStore| Ok(t.sum(t.relu(t.param(s, id))));
        let opts = GradCheckOptions {
            refinements: 2,
            ..GradCheckOptions::default()
        };
        let r = finite_diff_check(&mut store, f, &opts).unwrap();
        assert!(r.max_rel_err < 1e-9, "{r:?}");
        assert_eq!(store.param(id).value.data(), &[3e-6, -0.5, 0.7]);
    }
}
