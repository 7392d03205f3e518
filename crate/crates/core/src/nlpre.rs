//! G+D estimation for separable, nonlinearly parameterized regressions
//! `y = φᵀ S(θ)` whose map `S: R^q → R^p` is strongly P-monotone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gd_estimator::{Derived, GainSchedule};
use crate::lre::{LreSample, LreSource};
use crate::numcore::{lambda_min_sym, rk4_step_nodes, Mat, StepInput, TimeGrid, Vector};
use crate::{Error, Result};

/// The parameterizations available to the estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    /// `S(θ) = θ`
    Identity { q: usize },
    /// `S(θ₁, θ₂) = col(θ₁, θ₁θ₂, θ₂)`
    ThetaMu,
    /// scalar `S(θ) = θ³`
    Cubic,
}

impl MapKind {
    pub fn q(&self) -> usize {
        match self {
            MapKind::Identity { q } => *q,
            MapKind::ThetaMu => 2,
            MapKind::Cubic => 1,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            MapKind::Identity { q } => *q,
            MapKind::ThetaMu => 3,
            MapKind::Cubic => 1,
        }
    }

    pub fn eval(&self, th: &[f64]) -> Vector {
        match self {
            MapKind::Identity { .. } => Vector::from_column_slice(th),
            MapKind::ThetaMu => Vector::from_vec(vec![th[0], th[0] * th[1], th[1]]),
            MapKind::Cubic => Vector::from_vec(vec![th[0] * th[0] * th[0]]),
        }
    }

    /// `∇S(θ)`, `p × q`.
    pub fn jacobian(&self, th: &[f64]) -> Mat {
        match self {
            MapKind::Identity { q } => Mat::identity(*q, *q),
            MapKind::ThetaMu => Mat::from_row_slice(3, 2, &[1.0, 0.0, th[1], th[0], 0.0, 1.0]),
            MapKind::Cubic => Mat::from_element(1, 1, 3.0 * th[0] * th[0]),
        }
    }
}

/// A map `S` together with the weighting `P` (`q × p`) and claimed constant `ρ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneMap {
    pub kind: MapKind,
    pub p_mat: Mat,
    pub rho: f64,
}

impl MonotoneMap {
    pub fn new(kind: MapKind, p_mat: Mat, rho: f64) -> Result<Self> {
        if p_mat.nrows() != kind.q() || p_mat.ncols() != kind.p() {
            return Err(Error::Dimension(format!(
                "P must be {}x{}, got {}x{}",
                kind.q(),
                kind.p(),
                p_mat.nrows(),
                p_mat.ncols()
            )));
        }
        if !(rho > 0.0) {
            return Err(Error::InvalidConfig(format!("rho must be positive, got {rho}")));
        }
        Ok(Self { kind, p_mat, rho })
    }

    /// Identity map with `P = I`.
    pub fn identity(q: usize) -> Self {
        Self { kind: MapKind::Identity { q }, p_mat: Mat::identity(q, q), rho: 1.0 }
    }

    /// `S(θ₁, θ₂) = col(θ₁, θ₁θ₂, θ₂)` with `P` selecting the first and third entries.
    pub fn theta_mu() -> Self {
        Self {
            kind: MapKind::ThetaMu,
            p_mat: Mat::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
            rho: 1.0,
        }
    }

    pub fn q(&self) -> usize {
        self.kind.q()
    }

    pub fn p(&self) -> usize {
        self.kind.p()
    }

    /// `P∇S(θ) + (P∇S(θ))ᵀ`
    pub fn symmetric_jacobian(&self, th: &[f64]) -> Mat {
        let pj = &self.p_mat * self.kind.jacobian(th);
        &pj + pj.transpose()
    }
}

/// Outcome of a sampled monotonicity check.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneReport {
    pub passes: bool,
    /// smallest `(a−b)ᵀP[S(a)−S(b)] / |a−b|²` over the sampled pairs
    pub rho_hat: f64,
    /// smallest `λ_min(P∇S + (P∇S)ᵀ)` over the sampled points
    pub jac_lambda_min: f64,
}

/// Relative slack allowed on the sampled constants (roundoff only).
const MONO_REL_TOL: f64 = 1e-12;

/// Samples `n_samples` pairs uniformly in the box `[lo, hi]` from a seeded stream.
pub fn check_p_monotone(map: &MonotoneMap, lo: &[f64], hi: &[f64], n_samples: usize, seed: u64) -> Result<MonotoneReport> {
    let q = map.q();
    if lo.len() != q || hi.len() != q {
        return Err(Error::Dimension(format!("box must have {q} bounds per side")));
    }
    if n_samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::Domain("box lower bound exceeds upper bound".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..q).map(|i| if lo[i] == hi[i] { lo[i] } else { rng.random_range(lo[i]..=hi[i]) }).collect()
    };
    let mut rho_hat = f64::INFINITY;
    let mut jac_lambda_min = f64::INFINITY;
    for _ in 0..n_samples {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let diff = Vector::from_iterator(q, a.iter().zip(&b).map(|(x, y)| x - y));
        let dist2 = diff.norm_squared();
        if dist2 > 0.0 {
            let ds = map.kind.eval(&a) - map.kind.eval(&b);
            let quot = diff.dot(&(&map.p_mat * ds)) / dist2;
            rho_hat = rho_hat.min(quot);
        }
        jac_lambda_min = jac_lambda_min.min(lambda_min_sym(&map.symmetric_jacobian(&a))?);
    }
    let floor = map.rho * (1.0 - MONO_REL_TOL);
    Ok(MonotoneReport {
        passes: rho_hat >= floor && jac_lambda_min >= 2.0 * floor,
        rho_hat,
        jac_lambda_min,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NlpreConfig {
    pub gamma: f64,
    pub gamma_g: GainSchedule,
    /// first-stage initial estimate, `p` entries
    pub theta_g0: Vector,
    /// second-stage initial estimate, `q` entries
    pub theta0: Vector,
    pub map: MonotoneMap,
}

impl NlpreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        self.gamma_g.validate()?;
        if self.theta_g0.len() != self.map.p() || self.theta0.len() != self.map.q() {
            return Err(Error::Dimension(format!(
                "initial estimates must have {} and {} entries",
                self.map.p(),
                self.map.q()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NlpreState {
    pub theta_g: Vector,
    pub phi: Mat,
    pub theta: Vector,
}

impl NlpreState {
    pub fn new(cfg: &NlpreConfig) -> Self {
        let p = cfg.map.p();
        Self { theta_g: cfg.theta_g0.clone(), phi: Mat::identity(p, p), theta: cfg.theta0.clone() }
    }

    pub fn derived(&self, cfg: &NlpreConfig) -> Result<Derived> {
        Derived::compute(&self.theta_g, &self.phi, &cfg.theta_g0)
    }

    fn pack(&self) -> Vec<f64> {
        let mut v = self.theta_g.as_slice().to_vec();
        v.extend_from_slice(self.phi.as_slice());
        v.extend_from_slice(self.theta.as_slice());
        v
    }

    fn unpack(p: usize, v: &[f64]) -> Self {
        Self {
            theta_g: Vector::from_column_slice(&v[..p]),
            phi: Mat::from_column_slice(p, p, &v[p..p + p * p]),
            theta: Vector::from_column_slice(&v[p + p * p..]),
        }
    }
}

fn nlpre_rhs(cfg: &NlpreConfig, t: f64, x: &[f64], s: &LreSample, dx: &mut [f64]) -> Result<()> {
    let p = cfg.map.p();
    let gg = cfg.gamma_g.value(t);
    let theta_g = Vector::from_column_slice(&x[..p]);
    let fund = Mat::from_column_slice(p, p, &x[p..p + p * p]);
    let theta = &x[p + p * p..];

    let err = s.y - s.phi.dot(&theta_g);
    for i in 0..p {
        dx[i] = gg * s.phi[i] * err;
    }
    for c in 0..p {
        let proj: f64 = (0..p).map(|r| s.phi[r] * fund[(r, c)]).sum();
        for r in 0..p {
            dx[p + c * p + r] = -gg * s.phi[r] * proj;
        }
    }
    let der = Derived::compute(&theta_g, &fund, &cfg.theta_g0)?;
    let mismatch = &der.y - cfg.map.kind.eval(theta) * der.delta;
    let upd = &cfg.map.p_mat * mismatch * (cfg.gamma * der.delta);
    dx[p + p * p..].copy_from_slice(upd.as_slice());
    Ok(())
}

/// One RK4 step of `θ̂' = γPΔ(Y − ΔS(θ̂))` together with the first stage.
pub fn nlpre_step(state: &NlpreState, input: &StepInput<LreSample>, t: f64, h: f64, cfg: &NlpreConfig) -> Result<NlpreState> {
    let p = cfg.map.p();
    if input.start.phi.len() != p {
        return Err(Error::Dimension(format!("regressor has {} entries, map outputs {p}", input.start.phi.len())));
    }
    let mut inner = Ok(());
    let next = rk4_step_nodes(
        |node, s, x, dx| {
            if let Err(e) = nlpre_rhs(cfg, s, x, input.at(node), dx) {
                inner = Err(e);
                dx.fill(f64::NAN);
            }
        },
        t,
        &state.pack(),
        h,
    );
    inner?;
    Ok(NlpreState::unpack(p, &next?))
}

/// What an observer sees at each grid point.
pub struct NlprePoint<'a> {
    pub k: usize,
    pub t: f64,
    pub state: &'a NlpreState,
    pub derived: &'a Derived,
    pub sample: &'a LreSample,
}

/// Continuous-time driver; `observe` is called at `k = 0..=n_steps` unless the grid is empty.
pub fn run_nlpre_with<F>(source: &mut dyn LreSource, cfg: &NlpreConfig, grid: &TimeGrid, mut observe: F) -> Result<NlpreState>
where
    F: FnMut(&NlprePoint<'_>),
{
    cfg.validate()?;
    if source.dim() != cfg.map.p() {
        return Err(Error::Dimension("source dimension differs from map output dimension".into()));
    }
    let mut state = NlpreState::new(cfg);
    if grid.n_steps == 0 {
        return Ok(state);
    }
    let mut step = source.advance(grid.time(0), grid.h)?;
    for k in 0..grid.n_steps {
        let t = grid.time(k);
        let der = state.derived(cfg)?;
        observe(&NlprePoint { k, t, state: &state, derived: &der, sample: &step.start });
        state = nlpre_step(&state, &step, t, grid.h, cfg)?;
        if k + 1 < grid.n_steps {
            step = source.advance(grid.time(k + 1), grid.h)?;
        }
    }
    let der = state.derived(cfg)?;
    let n = grid.n_steps;
    observe(&NlprePoint { k: n, t: grid.time(n), state: &state, derived: &der, sample: &step.end });
    Ok(state)
}

/// Result of checking `U(t) ≤ U(0) exp(−2ργ ∫_0^t Δ²)` with `U = ½|θ̃|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecrementCheck {
    pub holds: bool,
    /// smallest `U(0)e^{…} − U(t)` along the run
    pub min_slack: f64,
    /// largest single-step increase of `U`
    pub max_increase: f64,
}

/// Verifies the integrated Lyapunov decrement along a sampled run
/// (trapezoidal `∫Δ²`), allowing `tol` of negative slack.
pub fn lyapunov_decrement(time: &[f64], theta_err: &[Vector], delta: &[f64], rho: f64, gamma: f64, tol: f64) -> Result<DecrementCheck> {
    if time.len() != theta_err.len() || time.len() != delta.len() {
        return Err(Error::Dimension("decrement traces differ in length".into()));
    }
    let mut out = DecrementCheck { holds: true, min_slack: f64::INFINITY, max_increase: 0.0 };
    let Some(first) = theta_err.first() else {
        return Ok(out);
    };
    let u0 = 0.5 * first.norm_squared();
    let mut integral = 0.0;
    let mut prev_u = u0;
    for k in 0..time.len() {
        if k > 0 {
            integral += 0.5 * (time[k] - time[k - 1]) * (delta[k - 1].powi(2) + delta[k].powi(2));
        }
        let u = 0.5 * theta_err[k].norm_squared();
        let slack = u0 * (-2.0 * rho * gamma * integral).exp() - u;
        out.min_slack = out.min_slack.min(slack);
        out.max_increase = out.max_increase.max(u - prev_u);
        prev_u = u;
    }
    out.holds = out.min_slack >= -tol;
    Ok(out)
}
