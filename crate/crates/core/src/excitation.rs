//! Interval excitation and identifiability diagnostics for sampled regressors.

use crate::numcore::{lambda_min_sym, numeric_rank, Mat, TimeGrid, Vector};
use crate::{Error, Mode, Result};

/// Default IE threshold per regressor dimension.
pub const DEFAULT_IE_THRESHOLD_PER_DIM: f64 = 1e-6;

/// Uniformly sampled regressor `φ(t_k)`.
#[derive(Clone, Debug)]
pub struct RegressorTrace {
    pub grid: TimeGrid,
    pub mode: Mode,
    pub samples: Vec<Vector>,
}

/// Outcome of an interval-excitation scan.
#[derive(Clone, Debug, PartialEq)]
pub struct IeCertificate {
    pub excited: bool,
    /// Smallest Gramian eigenvalue at `horizon` (the last horizon when not excited).
    pub level: f64,
    /// `t_c` in seconds (CT) or `k_d` in steps (DT).
    pub horizon: f64,
    pub horizon_index: usize,
    /// `max |φ|²` over `[0, horizon]`.
    pub phi_max_sq: f64,
}

impl RegressorTrace {
    pub fn new(grid: TimeGrid, mode: Mode, samples: Vec<Vector>) -> Result<Self> {
        let q = samples.first().map(|s| s.len()).unwrap_or(0);
        if samples.iter().any(|s| s.len() != q) {
            return Err(Error::Dimension("regressor samples of differing length".into()));
        }
        if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Domain("regressor trace contains non-finite samples".into()));
        }
        Ok(Self { grid, mode, samples })
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map(|s| s.len()).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn horizon_value(&self, k: usize) -> f64 {
        match self.mode {
            Mode::Continuous => self.grid.time(k) - self.grid.t0,
            Mode::Discrete => k as f64,
        }
    }
}

fn add_outer(acc: &mut Mat, v: &Vector, w: f64) {
    acc.ger(w, v, v, 1.0);
}

/// Gramian of the trace over `[0, horizon_index]`.
///
/// CT uses the trapezoidal rule on the grid, DT the exact sum `Σ_{j≤k} φφᵀ`.
pub fn ie_gramian(trace: &RegressorTrace, horizon_index: usize) -> Result<Mat> {
    if trace.is_empty() {
        return Err(Error::Dimension("empty regressor trace".into()));
    }
    if horizon_index >= trace.len() {
        return Err(Error::Dimension(format!(
            "horizon index {horizon_index} beyond trace of length {}",
            trace.len()
        )));
    }
    let q = trace.dim();
    let mut g = Mat::zeros(q, q);
    match trace.mode {
        Mode::Continuous => {
            let h = trace.grid.h;
            for j in 0..horizon_index {
                add_outer(&mut g, &trace.samples[j], 0.5 * h);
                add_outer(&mut g, &trace.samples[j + 1], 0.5 * h);
            }
        }
        Mode::Discrete => {
            for s in &trace.samples[..=horizon_index] {
                add_outer(&mut g, s, 1.0);
            }
        }
    }
    Ok(g)
}

/// Scans horizons and stops at the first one whose Gramian has `λ_min ≥ threshold`.
pub fn check_ie(trace: &RegressorTrace, threshold: f64) -> Result<IeCertificate> {
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!("IE threshold must be positive, got {threshold}")));
    }
    if trace.is_empty() {
        return Ok(IeCertificate {
            excited: false,
            level: 0.0,
            horizon: 0.0,
            horizon_index: 0,
            phi_max_sq: 0.0,
        });
    }
    let q = trace.dim();
    let mut g = Mat::zeros(q, q);
    let mut phi_max_sq: f64 = 0.0;
    let h = trace.grid.h;
    for k in 0..trace.len() {
        let s = &trace.samples[k];
        phi_max_sq = phi_max_sq.max(s.norm_squared());
        match trace.mode {
            Mode::Continuous if k > 0 => {
                add_outer(&mut g, &trace.samples[k - 1], 0.5 * h);
                add_outer(&mut g, s, 0.5 * h);
            }
            Mode::Continuous => {}
            Mode::Discrete => add_outer(&mut g, s, 1.0),
        }
        // λ_min ≤ trace/q, so skip the eigen solve while the trace is too small
        if g.trace() < threshold * q as f64 {
            continue;
        }
        let level = lambda_min_sym(&g)?.max(0.0);
        if level >= threshold {
            return Ok(IeCertificate {
                excited: true,
                level,
                horizon: trace.horizon_value(k),
                horizon_index: k,
                phi_max_sq,
            });
        }
    }
    let last = trace.len() - 1;
    Ok(IeCertificate {
        excited: false,
        level: lambda_min_sym(&g)?.max(0.0),
        horizon: trace.horizon_value(last),
        horizon_index: last,
        phi_max_sq,
    })
}

/// Greedy search for `q` samples spanning `R^q`; earliest samples win ties.
pub fn check_identifiability(trace: &RegressorTrace, tol: f64) -> Result<(bool, Vec<usize>)> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("rank tolerance must be positive, got {tol}")));
    }
    let q = trace.dim();
    let mut kept: Vec<usize> = Vec::with_capacity(q);
    if q == 0 {
        return Ok((false, kept));
    }
    for (k, s) in trace.samples.iter().enumerate() {
        if s.iter().all(|&v| v == 0.0) {
            continue;
        }
        let cols: Vec<Vector> = kept.iter().map(|&i| trace.samples[i].clone()).chain(std::iter::once(s.clone())).collect();
        let m = Mat::from_columns(&cols);
        if numeric_rank(&m, tol)? == cols.len() {
            kept.push(k);
            if kept.len() == q {
                return Ok((true, kept));
            }
        }
    }
    Ok((false, kept))
}

/// `ε = 1 − sqrt(1 − γ̄ C_c / (1 + γ̄² t_c² φ_M²))`; `ε^q` lower-bounds `|Δ(t)|` after `t_c`.
///
/// `phi_max_sq` is `max |φ|²` over `[0, t_c]`.
pub fn lemma3_epsilon(gamma_bar: f64, c_c: f64, t_c: f64, phi_max_sq: f64) -> Result<f64> {
    if !(gamma_bar > 0.0 && c_c > 0.0 && t_c > 0.0 && phi_max_sq > 0.0) {
        return Err(Error::Domain("all bound arguments must be positive".into()));
    }
    let ratio = gamma_bar * c_c / (1.0 + gamma_bar * gamma_bar * t_c * t_c * phi_max_sq * phi_max_sq);
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Domain(format!("contraction ratio {ratio} outside (0, 1)")));
    }
    Ok(1.0 - (1.0 - ratio).sqrt())
}
