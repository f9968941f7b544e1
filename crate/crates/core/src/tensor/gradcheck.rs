//! Central-difference gradient checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Denominator floor: `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (uniformly sampled).
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tol: 1e-4,
            floor: 1e-6,
            max_coords_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares back-propagated gradients of the scalar built by `f` against
/// central differences. `params` defaults to every trainable parameter.
///
/// `f` must be deterministic; graphs are built with training disabled.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    params: Option<&[ParamId]>,
    mut f: F,
    opts: &GradCheckOptions,
) -> GradCheckReport
where
    F: FnMut(&ParamStore, &mut Graph) -> Var,
{
    let mut g = Graph::new(false);
    let out = f(store, &mut g);
    let grads = g.backward(out, store.len());
    drop(g);

    let ids: Vec<ParamId> = match params {
        Some(p) => p.to_vec(),
        None => store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut eval = |store: &ParamStore| {
        let mut g = Graph::new(false);
        let v = f(store, &mut g);
        g.value(v).item()
    };

    let mut entries = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut entry = ParamCheck {
            name: store.get(id).name.clone(),
            checked: coords.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for c in coords {
            let analytic = grads.get(id).map_or(0.0, |m| m.data()[c]);
            let orig = store.value(id).data()[c];
            store.value_mut(id).data_mut()[c] = orig + opts.step;
            let up = eval(store);
            store.value_mut(id).data_mut()[c] = orig - opts.step;
            let down = eval(store);
            store.value_mut(id).data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(analytic, numeric, opts.floor);
            if err > entry.max_rel_err || entry.max_rel_err.is_nan() || err.is_nan() {
                entry.max_rel_err = err;
                entry.worst_index = c;
                entry.analytic = analytic;
                entry.numeric = numeric;
            }
        }
        entries.push(entry);
    }
    let max_rel_err = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    let passed = entries.iter().all(|e| e.max_rel_err < opts.tol);
    GradCheckReport {
        entries,
        max_rel_err,
        tol: opts.tol,
        passed,
    }
}
