//! Central finite-difference audit of tape gradients.
//!
//! The caller runs one forward/backward pass so the parameter tensors hold
//! their analytic gradients, then hands over a closure that re-evaluates the
//! same scalar function from the current parameter values. Each checked
//! entry is perturbed in place by ±step, the function re-evaluated, and the
//! central difference compared against the analytic value.
//!
//! All storage is f32, so the comparison uses the effective (post-rounding)
//! perturbation and a relative error with a floor: below `rel_floor` the
//! check degrades to an absolute one, which keeps finite-difference rounding
//! noise from failing entries whose true gradient is tiny.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Nominal perturbation step.
    pub step: f32,
    /// Per-entry relative error threshold.
    pub tol: f32,
    /// Denominator floor for the relative error.
    pub rel_floor: f32,
    /// When set, check at most this many entries per tensor (sampled
    /// deterministically from `seed`); `None` sweeps every entry.
    pub max_entries_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tol: 1e-2,
            rel_floor: 0.05,
            max_entries_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_err: f32,
    /// Flat index of the worst entry, with its analytic/numeric values.
    pub worst_index: usize,
    pub worst_analytic: f32,
    pub worst_numeric: f32,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f32,
    pub per_tensor: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.per_tensor.iter().all(|e| e.max_rel_err < self.tol)
    }

    pub fn max_rel_err(&self) -> f32 {
        self.per_tensor
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f32::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.per_tensor
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Audit the analytic gradients stored on `params` against central finite
/// differences of `f`. `f` must be deterministic and must read the
/// parameter tensors afresh on every call.
pub fn grad_check(
    f: &mut dyn FnMut() -> f64,
    params: &[(String, Tensor)],
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut per_tensor = Vec::with_capacity(params.len());
    for (name, tensor) in params {
        let analytic = tensor.grad().unwrap_or_else(|| vec![0.0; tensor.len()]);
        let n = tensor.len();
        let indices: Vec<usize> = match cfg.max_entries_per_tensor {
            Some(m) if m < n => rand::seq::index::sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        let mut entry = GradCheckEntry {
            name: name.clone(),
            entries_checked: indices.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for idx in indices {
            let orig = tensor.data()[idx];
            let up = orig + cfg.step;
            let down = orig - cfg.step;
            tensor.data_mut()[idx] = up;
            let f_up = f();
            tensor.data_mut()[idx] = down;
            let f_down = f();
            tensor.data_mut()[idx] = orig;
            // effective step after f32 rounding of the perturbed values
            let h_eff = up as f64 - down as f64;
            let numeric = ((f_up - f_down) / h_eff) as f32;
            let ad = analytic[idx];
            let denom = ad.abs().max(numeric.abs()).max(cfg.rel_floor);
            let rel = (ad - numeric).abs() / denom;
            if rel > entry.max_rel_err {
                entry.max_rel_err = rel;
                entry.worst_index = idx;
                entry.worst_analytic = ad;
                entry.worst_numeric = numeric;
            }
        }
        per_tensor.push(entry);
    }
    GradCheckReport {
        tol: cfg.tol,
        per_tensor,
    }
}
