//! Central finite-difference gradient checking.
//!
//! The checker only evaluates forward passes, so it is independent of every
//! backward rule it verifies.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs_floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            step: 1e-4,
            rel: 1e-3,
            abs_floor: 1e-5,
        }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let err = (analytic - numeric).abs();
        err <= self.abs_floor || err <= self.rel * analytic.abs().max(numeric.abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares analytic gradients of a scalar function of `inputs` with central
/// differences. `build` must construct the same computation every call.
/// `max_coords` caps how many coordinates per input are probed (sampled
/// without replacement from `seed`).
pub fn check<F>(
    inputs: &[Tensor],
    build: F,
    tol: Tolerance,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.variable(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        g.value(loss).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match max_coords {
            Some(m) if m < input.len() => sample(&mut rng, input.len(), m).into_vec(),
            _ => (0..input.len()).collect(),
        };
        for coord in coords {
            let analytic = grads.get(vars[k]).map_or(0.0, |t| t.data()[coord]);
            let x0 = input.data()[coord];
            probe[k].data_mut()[coord] = x0 + tol.step;
            let up = eval(&probe)?;
            probe[k].data_mut()[coord] = x0 - tol.step;
            let down = eval(&probe)?;
            probe[k].data_mut()[coord] = x0;
            let numeric = (up - down) / (2.0 * tol.step);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max((analytic - numeric).abs());
            if !tol.accepts(analytic, numeric) {
                report.mismatches.push(Mismatch {
                    input: k,
                    coord,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Checks the gradients stored in `store` (from a backward pass of `loss`)
/// against central differences of `loss` on `coords` parameter coordinates
/// sampled uniformly over the whole registry. Mismatches report the
/// parameter index as `input`.
pub fn check_params<F>(store: &ParamStore, loss: F, tol: Tolerance, coords: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let total = store.numel();
    if coords > total {
        return Err(Error::Usage(format!("asked for {coords} coordinates, registry has {total}")));
    }
    let offsets: Vec<usize> = store
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.tensor.len();
            Some(start)
        })
        .collect();
    let ids: Vec<_> = store.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = sample(&mut rng, total, coords).into_vec();
    flat.sort_unstable();
    let mut probe = store.clone();
    let mut report = GradCheckReport::default();
    for k in flat {
        let pi = offsets.partition_point(|&o| o <= k) - 1;
        let (id, coord) = (ids[pi], k - offsets[pi]);
        let analytic = store.get(id).grad.as_ref().map_or(0.0, |g| g.data()[coord]);
        let x0 = store.get(id).tensor.data()[coord];
        probe.get_mut(id).tensor.data_mut()[coord] = x0 + tol.step;
        let up = loss(&probe)?;
        probe.get_mut(id).tensor.data_mut()[coord] = x0 - tol.step;
        let down = loss(&probe)?;
        probe.get_mut(id).tensor.data_mut()[coord] = x0;
        let numeric = (up - down) / (2.0 * tol.step);
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max((analytic - numeric).abs());
        if !tol.accepts(analytic, numeric) {
            report.mismatches.push(Mismatch {
                input: pi,
                coord,
                analytic,
                numeric,
            });
        }
    }
    Ok(report)
}

/// Fixed random projection `sum(x ⊗ r)` turning any tensor into a scalar
/// loss whose gradient exercises every output element differently.
pub fn project(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let dims = g.dims(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::from_fn(dims, |_, _, _, _| rng.gen_range(-1.0..1.0));
    let r = g.constant(r);
    let prod = g.mul(x, r)?;
    Ok(g.sum(prod))
}
