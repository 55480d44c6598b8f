//! Central finite-difference verification of analytic gradients.
//!
//! The computation under test reruns from scratch for every probe, so it must
//! be deterministic (re-derive any rng from a fixed seed on each call).

use rand::Rng;

use crate::autodiff::store::ParamStore;
use crate::rng::derive_rng;

#[derive(Debug, Copy, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates probed per parameter (sampled without replacement when the
    /// parameter is larger).
    pub coords_per_param: usize,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { h: 1e-5, coords_per_param: 24, seed: 0x9c0ffee }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Coordinate index and (analytic, numeric) pair behind `max_rel_err`.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        // Both effectively zero: agree.
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares the gradients produced by `run(store, true)` against central
/// differences of `run(store, false)` on a sampled coordinate subset.
/// Discrepancies are reported, never thrown.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    mut run: F,
    cfg: GradCheckConfig,
) -> GradCheckReport
where
    F: FnMut(&mut ParamStore<f64>, bool) -> f64,
{
    store.zero_grads();
    let _ = run(store, true);
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| store.grad(id).data().to_vec())
        .collect();
    let names: Vec<String> = store.ids().map(|id| store.name(id).to_string()).collect();

    let mut rng = derive_rng(cfg.seed, "gradcheck-coords", &[]);
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for (slot, id) in ids.iter().enumerate() {
        let len = store.value(*id).len();
        let mut coords: Vec<usize> = (0..len).collect();
        if len > cfg.coords_per_param {
            // Partial Fisher-Yates: the first coords_per_param entries become
            // a uniform sample without replacement.
            for i in 0..cfg.coords_per_param {
                let j = rng.gen_range(i..len);
                coords.swap(i, j);
            }
            coords.truncate(cfg.coords_per_param);
        }

        let mut check = ParamCheck { name: names[slot].clone(), max_rel_err: 0.0, worst: None };
        for &coord in &coords {
            let original = store.value(*id).data()[coord];
            store.value_mut(*id).data_mut()[coord] = original + cfg.h;
            let plus = run(store, false);
            store.value_mut(*id).data_mut()[coord] = original - cfg.h;
            let minus = run(store, false);
            store.value_mut(*id).data_mut()[coord] = original;

            let numeric = (plus - minus) / (2.0 * cfg.h);
            let err = relative_error(analytic[slot][coord], numeric);
            if err >= check.max_rel_err {
                check.max_rel_err = err;
                check.worst = Some((coord, analytic[slot][coord], numeric));
            }
        }
        report.per_param.push(check);
    }
    store.zero_grads();
    report
}
