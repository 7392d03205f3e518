//! Interlaced gradient-then-mixing (G+D) estimator in continuous and discrete time.
//!
//! A first-stage gradient estimator `θ̂_g` runs together with its fundamental
//! matrix `Φ`. Since `θ̂_g − Φθ_g0 = (I − Φ)θ`, multiplying by the adjugate of
//! `𝒟 = I − Φ` yields the scalar regressions `Y_i = Δθ_i` with `Δ = det 𝒟`,
//! which drive the second-stage gradient estimator `θ̂`.

use serde::{Deserialize, Serialize};

use crate::lre::{LreSample, LreSource};
use crate::numcore::{adjugate, det, rk4_step_nodes, Mat, StepInput, TimeGrid, Vector};
use crate::{Error, Mode, Result};

/// Time-varying first-stage gain `γ_g(t)` (or `γ_g(k)` in discrete time).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainSchedule {
    Constant { value: f64 },
    /// `c / (b + t²)`, integrable on `[0, ∞)`
    InverseQuadratic { c: f64, b: f64 },
    /// `c0 + c2 t²`, with summable reciprocal in discrete time
    QuadraticGrowth { c0: f64, c2: f64 },
}

impl GainSchedule {
    pub fn constant(value: f64) -> Self {
        GainSchedule::Constant { value }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            GainSchedule::Constant { value } => value,
            GainSchedule::InverseQuadratic { c, b } => c / (b + t * t),
            GainSchedule::QuadraticGrowth { c0, c2 } => c0 + c2 * t * t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            GainSchedule::Constant { value } => value > 0.0,
            GainSchedule::InverseQuadratic { c, b } => c > 0.0 && b > 0.0,
            GainSchedule::QuadraticGrowth { c0, c2 } => c0 > 0.0 && c2 >= 0.0,
        };
        if ok && self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("gain schedule {self:?} is not positive")))
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            GainSchedule::Constant { value } => value.is_finite(),
            GainSchedule::InverseQuadratic { c, b } => c.is_finite() && b.is_finite(),
            GainSchedule::QuadraticGrowth { c0, c2 } => c0.is_finite() && c2.is_finite(),
        }
    }

    /// `∫_0^t γ_g(s) ds` in closed form.
    pub fn integral(&self, t: f64) -> f64 {
        match *self {
            GainSchedule::Constant { value } => value * t,
            GainSchedule::InverseQuadratic { c, b } => c / b.sqrt() * (t / b.sqrt()).atan(),
            GainSchedule::QuadraticGrowth { c0, c2 } => c0 * t + c2 * t * t * t / 3.0,
        }
    }

    /// `∫_0^∞ γ_g`, finite only for the decaying schedule.
    pub fn total_integral(&self) -> f64 {
        match *self {
            GainSchedule::InverseQuadratic { c, b } => c / b.sqrt() * std::f64::consts::FRAC_PI_2,
            _ => f64::INFINITY,
        }
    }

    /// `Σ_{j<k} 1/γ_g(j)`.
    pub fn reciprocal_sum(&self, k: usize) -> f64 {
        (0..k).map(|j| 1.0 / self.value(j as f64)).sum()
    }

    /// Whether `Σ_j 1/γ_g(j)` converges.
    pub fn reciprocal_summable(&self) -> bool {
        matches!(*self, GainSchedule::QuadraticGrowth { c2, .. } if c2 > 0.0)
    }

    /// `min γ_g` over `[0, t]`.
    pub fn min_over(&self, t: f64) -> f64 {
        match *self {
            GainSchedule::Constant { value } => value,
            GainSchedule::InverseQuadratic { .. } => self.value(t),
            GainSchedule::QuadraticGrowth { .. } => self.value(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GdConfig {
    /// second-stage gain `γ`
    pub gamma: f64,
    pub gamma_g: GainSchedule,
    pub theta_g0: Vector,
    pub theta0: Vector,
    pub mode: Mode,
}

impl GdConfig {
    pub fn new(q: usize, gamma: f64, gamma_g: GainSchedule, mode: Mode) -> Self {
        Self { gamma, gamma_g, theta_g0: Vector::zeros(q), theta0: Vector::zeros(q), mode }
    }

    pub fn with_initial(mut self, theta_g0: Vector, theta0: Vector) -> Self {
        self.theta_g0 = theta_g0;
        self.theta0 = theta0;
        self
    }

    pub fn q(&self) -> usize {
        self.theta_g0.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        self.gamma_g.validate()?;
        if self.theta_g0.len() != self.theta0.len() || self.theta0.is_empty() {
            return Err(Error::Dimension(format!(
                "theta_g0 has {} entries, theta0 has {}",
                self.theta_g0.len(),
                self.theta0.len()
            )));
        }
        Ok(())
    }
}

/// Quantities that are algebraic functions of the estimator state.
#[derive(Clone, Debug, PartialEq)]
pub struct Derived {
    /// `𝒟 = I − Φ`
    pub d_mat: Mat,
    /// `Δ = det 𝒟`
    pub delta: f64,
    /// `Y = adj(𝒟)(θ̂_g − Φθ_g0)`
    pub y: Vector,
}

impl Derived {
    pub fn compute(theta_g: &Vector, phi: &Mat, theta_g0: &Vector) -> Result<Self> {
        let q = phi.nrows();
        let d_mat = Mat::identity(q, q) - phi;
        let delta = det(&d_mat)?;
        let y = adjugate(&d_mat)? * (theta_g - phi * theta_g0);
        Ok(Self { d_mat, delta, y })
    }
}

/// State of the interlaced estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct GdState {
    pub theta_g: Vector,
    /// fundamental matrix `Φ`
    pub phi: Mat,
    pub theta: Vector,
}

impl GdState {
    pub fn new(cfg: &GdConfig) -> Self {
        let q = cfg.q();
        Self { theta_g: cfg.theta_g0.clone(), phi: Mat::identity(q, q), theta: cfg.theta0.clone() }
    }

    pub fn q(&self) -> usize {
        self.theta.len()
    }

    pub fn derived(&self, cfg: &GdConfig) -> Result<Derived> {
        Derived::compute(&self.theta_g, &self.phi, &cfg.theta_g0)
    }

    /// `[θ̂_g; vec Φ; θ̂]`, with `Φ` column-major.
    pub fn pack(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.q() + self.q() * self.q());
        v.extend_from_slice(self.theta_g.as_slice());
        v.extend_from_slice(self.phi.as_slice());
        v.extend_from_slice(self.theta.as_slice());
        v
    }

    pub fn unpack(q: usize, v: &[f64]) -> Self {
        Self {
            theta_g: Vector::from_column_slice(&v[..q]),
            phi: Mat::from_column_slice(q, q, &v[q..q + q * q]),
            theta: Vector::from_column_slice(&v[q + q * q..]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pack().iter().all(|v| v.is_finite())
    }
}

fn check_sample(q: usize, s: &LreSample) -> Result<()> {
    if s.phi.len() != q {
        return Err(Error::Dimension(format!("regressor has {} entries, estimator expects {q}", s.phi.len())));
    }
    Ok(())
}

/// Right-hand side of the continuous-time estimator on the packed state.
pub(crate) fn gd_rhs(cfg: &GdConfig, t: f64, x: &[f64], sample: &LreSample, dx: &mut [f64]) -> Result<()> {
    let q = cfg.q();
    let gg = cfg.gamma_g.value(t);
    let phi_v = &sample.phi;
    let theta_g = Vector::from_column_slice(&x[..q]);
    let fund = Mat::from_column_slice(q, q, &x[q..q + q * q]);
    let theta = &x[q + q * q..];

    let err = sample.y - phi_v.dot(&theta_g);
    for i in 0..q {
        dx[i] = gg * phi_v[i] * err;
    }
    // Φ' = −γ_g φ (φᵀ Φ)
    for c in 0..q {
        let proj: f64 = (0..q).map(|r| phi_v[r] * fund[(r, c)]).sum();
        for r in 0..q {
            dx[q + c * q + r] = -gg * phi_v[r] * proj;
        }
    }
    let der = Derived::compute(&theta_g, &fund, &cfg.theta_g0)?;
    let gd = cfg.gamma * der.delta;
    for i in 0..q {
        dx[q + q * q + i] = gd * (der.y[i] - der.delta * theta[i]);
    }
    Ok(())
}

/// One RK4 step of the continuous-time estimator; `Δ`, `Y` are recomputed at every stage.
pub fn gd_step_ct(state: &GdState, input: &StepInput<LreSample>, t: f64, h: f64, cfg: &GdConfig) -> Result<GdState> {
    let q = state.q();
    check_sample(q, &input.start)?;
    let mut inner: Result<()> = Ok(());
    let next = rk4_step_nodes(
        |node, s, x, dx| {
            if let Err(e) = gd_rhs(cfg, s, x, input.at(node), dx) {
                inner = Err(e);
                dx.fill(f64::NAN);
            }
        },
        t,
        &state.pack(),
        h,
    );
    inner?;
    Ok(GdState::unpack(q, &next?))
}

/// One discrete-time recursion at sample index `k`.
///
/// `θ̂` is updated with `Δ(k)`, `Y(k)` from the state before the update, so
/// `θ̃(k+1) = γ/(γ + Δ²(k)) θ̃(k)` under noiseless data.
pub fn gd_step_dt(state: &GdState, sample: &LreSample, k: usize, cfg: &GdConfig) -> Result<GdState> {
    let q = state.q();
    check_sample(q, sample)?;
    let phi_v = &sample.phi;
    let g = 1.0 / (cfg.gamma_g.value(k as f64) + phi_v.norm_squared());
    let der = state.derived(cfg)?;

    let err = sample.y - phi_v.dot(&state.theta_g);
    let theta_g = &state.theta_g + phi_v * (g * err);
    let proj = phi_v.transpose() * &state.phi;
    let phi = &state.phi - (phi_v * proj) * g;
    let theta = &state.theta + (&der.y - &state.theta * der.delta) * (der.delta / (cfg.gamma + der.delta * der.delta));

    let next = GdState { theta_g, phi, theta };
    if !next.is_finite() {
        return Err(Error::NumericOverflow { t: k as f64 });
    }
    Ok(next)
}

/// State of the linear operator `ℋ` behind the estimator: `x_y` filters `y`,
/// column `i` of `x_phi` filters `φ_i`, both with zero initial conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct DremOperatorState {
    pub x_y: Vector,
    pub x_phi: Mat,
}

impl DremOperatorState {
    pub fn new(q: usize) -> Self {
        Self { x_y: Vector::zeros(q), x_phi: Mat::zeros(q, q) }
    }

    fn pack(&self) -> Vec<f64> {
        let mut v = self.x_y.as_slice().to_vec();
        v.extend_from_slice(self.x_phi.as_slice());
        v
    }

    fn unpack(q: usize, v: &[f64]) -> Self {
        Self { x_y: Vector::from_column_slice(&v[..q]), x_phi: Mat::from_column_slice(q, q, &v[q..]) }
    }
}

/// Advances `ℋ` with the same gains and stepping scheme as the estimator.
///
/// In continuous time `input` holds the three RK4 nodes; in discrete time
/// only `input.start` (sample `k = t`) is used.
pub fn drem_operator_step(
    op: &DremOperatorState,
    input: &StepInput<LreSample>,
    t: f64,
    h: f64,
    cfg: &GdConfig,
) -> Result<DremOperatorState> {
    let q = op.x_y.len();
    check_sample(q, &input.start)?;
    match cfg.mode {
        Mode::Continuous => {
            let next = rk4_step_nodes(
                |node, s, x, dx| {
                    let smp = input.at(node);
                    let gg = cfg.gamma_g.value(s);
                    // every column c obeys x' = −γ_g φ(φᵀx) + γ_g φ u_c
                    for c in 0..=q {
                        let col = &x[c * q..(c + 1) * q];
                        let u = if c == 0 { smp.y } else { smp.phi[c - 1] };
                        let e = u - (0..q).map(|r| smp.phi[r] * col[r]).sum::<f64>();
                        for r in 0..q {
                            dx[c * q + r] = gg * smp.phi[r] * e;
                        }
                    }
                },
                t,
                &op.pack(),
                h,
            )?;
            Ok(DremOperatorState::unpack(q, &next))
        }
        Mode::Discrete => {
            let smp = &input.start;
            let g = 1.0 / (cfg.gamma_g.value(t) + smp.phi.norm_squared());
            let mut x = op.pack();
            for c in 0..=q {
                let col = &mut x[c * q..(c + 1) * q];
                let u = if c == 0 { smp.y } else { smp.phi[c - 1] };
                let e = u - (0..q).map(|r| smp.phi[r] * col[r]).sum::<f64>();
                for r in 0..q {
                    col[r] += g * smp.phi[r] * e;
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow { t });
            }
            Ok(DremOperatorState::unpack(q, &x))
        }
    }
}

/// Recorded trajectory of a G+D run, one entry per grid point.
#[derive(Clone, Debug, Default)]
pub struct GdTrace {
    pub time: Vec<f64>,
    pub theta_g: Vec<Vector>,
    pub theta: Vec<Vector>,
    pub delta: Vec<f64>,
    /// `‖θ̂ − θ‖` when the source knows `θ`
    pub error_norm: Option<Vec<f64>>,
}

/// What an observer sees at grid point `k`.
pub struct GdPoint<'a> {
    pub k: usize,
    pub t: f64,
    pub state: &'a GdState,
    pub derived: &'a Derived,
    pub sample: &'a LreSample,
}

/// Steps the estimator across `grid`, calling `observe` at every grid point
/// `k = 0..=n_steps`. An empty grid performs no work.
pub fn run_gd_with<F>(source: &mut dyn LreSource, cfg: &GdConfig, grid: &TimeGrid, mut observe: F) -> Result<GdState>
where
    F: FnMut(&GdPoint<'_>),
{
    cfg.validate()?;
    if source.dim() != cfg.q() {
        return Err(Error::Dimension(format!(
            "source dimension {} differs from estimator dimension {}",
            source.dim(),
            cfg.q()
        )));
    }
    let mut state = GdState::new(cfg);
    if grid.n_steps == 0 {
        return Ok(state);
    }
    let h = match cfg.mode {
        Mode::Continuous => grid.h,
        Mode::Discrete => 1.0,
    };
    let mut step = source.advance(grid.time(0), h)?;
    for k in 0..grid.n_steps {
        let t = grid.time(k);
        let der = state.derived(cfg)?;
        observe(&GdPoint { k, t, state: &state, derived: &der, sample: &step.start });
        state = match cfg.mode {
            Mode::Continuous => gd_step_ct(&state, &step, t, h, cfg)?,
            Mode::Discrete => gd_step_dt(&state, &step.start, k, cfg)?,
        };
        if k + 1 < grid.n_steps {
            step = source.advance(grid.time(k + 1), h)?;
        }
    }
    let n = grid.n_steps;
    let der = state.derived(cfg)?;
    observe(&GdPoint { k: n, t: grid.time(n), state: &state, derived: &der, sample: &step.end });
    Ok(state)
}

/// Whole-trajectory driver recording `θ̂_g`, `θ̂`, `Δ` and `‖θ̃‖`.
pub fn run_gd(source: &mut dyn LreSource, cfg: &GdConfig, grid: &TimeGrid) -> Result<GdTrace> {
    let truth = source.true_theta();
    let mut tr = GdTrace { error_norm: truth.as_ref().map(|_| Vec::new()), ..Default::default() };
    run_gd_with(source, cfg, grid, |p| {
        tr.time.push(p.t);
        tr.theta_g.push(p.state.theta_g.clone());
        tr.theta.push(p.state.theta.clone());
        tr.delta.push(p.derived.delta);
        if let (Some(th), Some(e)) = (&truth, tr.error_norm.as_mut()) {
            e.push((&p.state.theta - th).norm());
        }
    })?;
    Ok(tr)
}

/// Discrete-time excitation floor `(1 − ‖Φ(k_d)‖₂)^q`, or zero when `‖Φ(k_d)‖₂ ≥ 1`.
pub fn dt_excitation_floor(phi_at_kd: &Mat) -> f64 {
    let q = phi_at_kd.nrows() as i32;
    let alpha0 = phi_at_kd.clone().svd(false, false).singular_values.max();
    if alpha0 < 1.0 {
        (1.0 - alpha0).powi(q)
    } else {
        0.0
    }
}
