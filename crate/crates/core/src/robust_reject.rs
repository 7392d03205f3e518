//! Estimation under additive perturbations: the G+D estimator with an
//! integrable (or reciprocal-summable) first-stage gain, and rejection of a
//! sinusoid of unknown frequency entering the mixed scalar regression
//! `Y = Δθ + ξ` through filtering plus a GPEBO-style dynamic extension.

use serde::{Deserialize, Serialize};

use crate::gd_estimator::{drem_operator_step, gd_step_ct, gd_step_dt, DremOperatorState, GainSchedule, GdConfig, GdState, GdTrace};
use crate::lre::{LreSample, LreSource};
use crate::numcore::{rk4_step_nodes, LtiFilter, Mat, StepInput, TimeGrid, Vector};
use crate::signals::Signal;
use crate::{Error, Mode, Result};

/// Additive perturbation of a linear regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    None,
    /// `y = φᵀθ + d_y`
    Measurement { signal: Signal },
    /// the estimator sees `φ + d_φ` while `y` is generated from `φ`
    Regressor { signals: Vec<Signal> },
    /// `y = φᵀ(θ + d_θ)`
    ParameterDrift { signals: Vec<Signal> },
    /// `y = φᵀθ + a sin(ωt + ψ)`
    Sinusoid { amplitude: f64, omega: f64, phase: f64 },
}

impl Disturbance {
    pub fn validate(&self, q: usize) -> Result<()> {
        match self {
            Disturbance::Regressor { signals } | Disturbance::ParameterDrift { signals } if signals.len() != q => {
                Err(Error::Dimension(format!("disturbance has {} channels, regression has {q}", signals.len())))
            }
            Disturbance::Sinusoid { amplitude, omega, .. } if !(*amplitude > 0.0 && *omega > 0.0) => {
                Err(Error::InvalidConfig("sinusoidal disturbance needs amplitude > 0 and omega > 0".into()))
            }
            _ => Ok(()),
        }
    }

    fn apply(&self, t: f64, clean: &LreSample) -> LreSample {
        match self {
            Disturbance::None => clean.clone(),
            Disturbance::Measurement { signal } => LreSample { phi: clean.phi.clone(), y: clean.y + signal.eval(t) },
            Disturbance::Regressor { signals } => LreSample {
                phi: Vector::from_iterator(clean.phi.len(), clean.phi.iter().zip(signals).map(|(p, s)| p + s.eval(t))),
                y: clean.y,
            },
            Disturbance::ParameterDrift { signals } => {
                let drift: f64 = clean.phi.iter().zip(signals).map(|(p, s)| p * s.eval(t)).sum();
                LreSample { phi: clean.phi.clone(), y: clean.y + drift }
            }
            Disturbance::Sinusoid { amplitude, omega, phase } => LreSample {
                phi: clean.phi.clone(),
                y: clean.y + amplitude * (omega * t + phase).sin(),
            },
        }
    }
}

/// Wraps a clean source and perturbs every sample it emits.
pub struct PerturbedLre<S> {
    pub inner: S,
    pub disturbance: Disturbance,
}

impl<S: LreSource> PerturbedLre<S> {
    pub fn new(inner: S, disturbance: Disturbance) -> Result<Self> {
        disturbance.validate(inner.dim())?;
        Ok(Self { inner, disturbance })
    }
}

impl<S: LreSource> LreSource for PerturbedLre<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn true_theta(&self) -> Option<Vector> {
        self.inner.true_theta()
    }

    fn advance(&mut self, t: f64, h: f64) -> Result<StepInput<LreSample>> {
        let clean = self.inner.advance(t, h)?;
        Ok(StepInput {
            start: self.disturbance.apply(t, &clean.start),
            mid: self.disturbance.apply(t + 0.5 * h, &clean.mid),
            end: self.disturbance.apply(t + h, &clean.end),
        })
    }
}

/// First-stage gain whose energy budget is finite: `∫γ_g < ∞` (CT) or `Σ1/γ_g < ∞` (DT).
#[derive(Clone, Debug, PartialEq)]
pub struct RobustGainSchedule(GainSchedule);

impl RobustGainSchedule {
    pub fn new(schedule: GainSchedule, mode: Mode) -> Result<Self> {
        schedule.validate()?;
        let ok = match mode {
            Mode::Continuous => schedule.total_integral().is_finite(),
            Mode::Discrete => schedule.reciprocal_summable(),
        };
        if !ok {
            return Err(Error::InvalidConfig(format!("gain schedule {schedule:?} has an unbounded energy budget")));
        }
        Ok(Self(schedule))
    }

    pub fn schedule(&self) -> &GainSchedule {
        &self.0
    }
}

/// Result of a perturbed run.
#[derive(Clone, Debug, Default)]
pub struct PerturbedReport {
    pub trace: GdTrace,
    pub sup_error: f64,
    /// `sup |d|` of the effective additive perturbation `y − φᵀθ` seen by the estimator
    pub sup_disturbance: f64,
    /// `min_t [bound(t) − (V(t) − V(0))]`; non-negative when the energy inequality holds
    pub energy_slack: f64,
    pub energy_bound_holds: bool,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
}

/// Tolerance added to the energy inequality.
pub const ENERGY_TOL: f64 = 1e-6;

/// Runs the G+D estimator on a perturbed source with a finite-energy gain.
///
/// The energy `V = |x_d|²` of the operator state driven by the effective
/// perturbation alone is tracked alongside and compared against
/// `sup|d|² ∫_0^t γ_g` (CT) or `Σ_{j<k} 4 d(j)²/γ_g(j)` (DT). A non-finite
/// state ends the run and is reported, not raised.
pub fn run_perturbed_gd(
    source: &mut dyn LreSource,
    schedule: &RobustGainSchedule,
    cfg: &GdConfig,
    grid: &TimeGrid,
) -> Result<PerturbedReport> {
    let cfg = GdConfig { gamma_g: schedule.schedule().clone(), ..cfg.clone() };
    cfg.validate()?;
    let q = cfg.q();
    if source.dim() != q {
        return Err(Error::Dimension("source and estimator dimensions differ".into()));
    }
    let truth = source
        .true_theta()
        .ok_or_else(|| Error::InvalidConfig("perturbed runs need a source with known θ".into()))?;
    let mut rep = PerturbedReport { energy_slack: f64::INFINITY, energy_bound_holds: true, ..Default::default() };
    rep.trace.error_norm = Some(Vec::new());
    if grid.n_steps == 0 {
        return Ok(rep);
    }
    let h = match cfg.mode {
        Mode::Continuous => grid.h,
        Mode::Discrete => 1.0,
    };
    let effective = |s: &LreSample| LreSample { phi: s.phi.clone(), y: s.residual(&truth) };

    let mut state = GdState::new(&cfg);
    let mut op = DremOperatorState::new(q);
    let mut dt_budget = 0.0;
    let mut step = source.advance(grid.time(0), h)?;

    let record = |rep: &mut PerturbedReport, t: f64, state: &GdState, sample: &LreSample, op: &DremOperatorState, budget: f64| -> Result<()> {
        let der = state.derived(&cfg)?;
        let err = (&state.theta - &truth).norm();
        rep.trace.time.push(t);
        rep.trace.theta_g.push(state.theta_g.clone());
        rep.trace.theta.push(state.theta.clone());
        rep.trace.delta.push(der.delta);
        if let Some(e) = rep.trace.error_norm.as_mut() {
            e.push(err);
        }
        rep.sup_error = rep.sup_error.max(err);
        rep.sup_disturbance = rep.sup_disturbance.max(sample.residual(&truth).abs());
        let bound = match cfg.mode {
            Mode::Continuous => rep.sup_disturbance.powi(2) * cfg.gamma_g.integral(t - grid.t0),
            Mode::Discrete => budget,
        };
        let slack = bound + ENERGY_TOL - op.x_y.norm_squared();
        rep.energy_slack = rep.energy_slack.min(slack - ENERGY_TOL);
        if slack < 0.0 {
            rep.energy_bound_holds = false;
        }
        Ok(())
    };

    for k in 0..grid.n_steps {
        let t = grid.time(k);
        record(&mut rep, t, &state, &step.start, &op, dt_budget)?;
        let d_nodes = step.map(effective);
        let next = match cfg.mode {
            Mode::Continuous => gd_step_ct(&state, &step, t, h, &cfg),
            Mode::Discrete => gd_step_dt(&state, &step.start, k, &cfg),
        };
        let next_op = drem_operator_step(&op, &d_nodes, if cfg.mode == Mode::Discrete { k as f64 } else { t }, h, &cfg);
        match (next, next_op) {
            (Ok(s), Ok(o)) => {
                state = s;
                op = o;
            }
            (Err(Error::NumericOverflow { t }), _) | (_, Err(Error::NumericOverflow { t })) => {
                rep.diverged = true;
                rep.divergence_time = Some(t);
                rep.energy_bound_holds = false;
                return Ok(rep);
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
        if cfg.mode == Mode::Discrete {
            let d = step.start.residual(&truth);
            dt_budget += 4.0 * d * d / cfg.gamma_g.value(k as f64);
        }
        if k + 1 < grid.n_steps {
            step = source.advance(grid.time(k + 1), h)?;
        }
    }
    record(&mut rep, grid.t_end(), &state, &step.end, &op, dt_budget)?;
    Ok(rep)
}

/// Shared realization of `F(𝒫) = λ²/(𝒫+λ)²` with outputs `(F[v], 𝒫²F[v])`.
///
/// The second output is the proper operator `λ²𝒫²/(𝒫+λ)²`, whose feedthrough is `λ²`.
pub fn rejection_filter(lambda: f64) -> Result<LtiFilter> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("filter constant must be positive, got {lambda}")));
    }
    let l2 = lambda * lambda;
    let den = [1.0, 2.0 * lambda, l2];
    let f = LtiFilter::realize_rational(&[l2], &den)?;
    let dd = LtiFilter::realize_rational(&[l2, 0.0, 0.0], &den)?;
    let mut c = Mat::zeros(2, 2);
    c.row_mut(0).copy_from(&f.c.row(0));
    c.row_mut(1).copy_from(&dd.c.row(0));
    let d = Mat::from_column_slice(2, 1, &[f.d[(0, 0)], dd.d[(0, 0)]]);
    LtiFilter::new(f.a, f.b, c, d)
}

/// Filtered signals feeding the dynamic extension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilteredTraces {
    pub y_f: Vec<f64>,
    pub delta_f: Vec<f64>,
    pub y_f_dd: Vec<f64>,
    pub delta_f_dd: Vec<f64>,
}

/// Applies `F` and `𝒫²F` to sampled `Y` and `Δ` (linear interpolation between samples).
pub fn filtered_lre(y: &[f64], delta: &[f64], lambda: f64, h: f64) -> Result<FilteredTraces> {
    if y.len() != delta.len() {
        return Err(Error::Dimension("Y and Δ traces differ in length".into()));
    }
    let mut fy = rejection_filter(lambda)?;
    let mut fd = fy.clone();
    let mut out = FilteredTraces::default();
    for k in 0..y.len() {
        if k == 0 {
            let a = fy.output(&[y[0]]);
            let b = fd.output(&[delta[0]]);
            out.push(a[0], b[0], a[1], b[1]);
            continue;
        }
        let t = (k - 1) as f64 * h;
        let a = fy.step_at(t, &StepInput::<f64>::linear(y[k - 1], y[k]).map(|v| vec![*v]), h)?;
        let b = fd.step_at(t, &StepInput::<f64>::linear(delta[k - 1], delta[k]).map(|v| vec![*v]), h)?;
        out.push(a[0], b[0], a[1], b[1]);
    }
    Ok(out)
}

impl FilteredTraces {
    fn push(&mut self, y_f: f64, delta_f: f64, y_f_dd: f64, delta_f_dd: f64) {
        self.y_f.push(y_f);
        self.delta_f.push(delta_f);
        self.y_f_dd.push(y_f_dd);
        self.delta_f_dd.push(delta_f_dd);
    }
}

/// Filtered inputs of the dynamic extension at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FilteredSample {
    pub y_f: f64,
    pub delta_f: f64,
    pub y_f_dd: f64,
    pub delta_f_dd: f64,
}

/// State of the dynamic extension `(z, r, Ω, Φ_ξ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GpeboExtState {
    pub z: f64,
    pub r: [f64; 2],
    /// row-major 2×2
    pub omega: [f64; 4],
    /// row-major 2×2
    pub phi_xi: [f64; 4],
}

impl Default for GpeboExtState {
    fn default() -> Self {
        Self { z: 0.0, r: [0.0; 2], omega: [0.0; 4], phi_xi: [1.0, 0.0, 0.0, 1.0] }
    }
}

pub const EXT_DIM: usize = 11;

impl GpeboExtState {
    pub fn pack(&self) -> [f64; EXT_DIM] {
        let mut v = [0.0; EXT_DIM];
        v[0] = self.z;
        v[1..3].copy_from_slice(&self.r);
        v[3..7].copy_from_slice(&self.omega);
        v[7..11].copy_from_slice(&self.phi_xi);
        v
    }

    pub fn unpack(v: &[f64]) -> Self {
        let mut s = Self { z: v[0], ..Default::default() };
        s.r.copy_from_slice(&v[1..3]);
        s.omega.copy_from_slice(&v[3..7]);
        s.phi_xi.copy_from_slice(&v[7..11]);
        s
    }
}

/// Vector field of the extension on its packed state.
pub fn gpebo_extension_rhs(x: &[f64], f: &FilteredSample, dx: &mut [f64]) {
    let z = x[0];
    let (r, om, ph) = (&x[1..3], &x[3..7], &x[7..11]);
    let df = f.delta_f;
    // A_ξ = [[0, Δ_F], [−Δ_F, −1]]
    let a = |m0: f64, m1: f64| (df * m1, -df * m0 - m1);
    dx[0] = -z - f.y_f;
    let (r0, r1) = a(r[0], r[1]);
    dx[1] = r0 - df * z;
    dx[2] = r1;
    let reg = [f.delta_f_dd, -f.y_f_dd];
    for c in 0..2 {
        let (o0, o1) = a(om[c], om[2 + c]);
        dx[3 + c] = o0;
        dx[5 + c] = o1 - reg[c];
        let (p0, p1) = a(ph[c], ph[2 + c]);
        dx[7 + c] = p0;
        dx[9 + c] = p1;
    }
}

/// One RK4 step of the extension with filtered inputs at the three stage nodes.
pub fn gpebo_extension_step(ext: &GpeboExtState, input: &StepInput<FilteredSample>, t: f64, h: f64) -> Result<GpeboExtState> {
    let next = rk4_step_nodes(|node, _, x, dx| gpebo_extension_rhs(x, input.at(node), dx), t, &ext.pack(), h)?;
    Ok(GpeboExtState::unpack(&next))
}

/// Disturbance-free regression `z − r₂ = [(Φ_ξ)₂₁, Ω₂₁, Ω₂₂]·col(θ, θ/ω², 1/ω²)`.
pub fn extract_unperturbed_lre(ext: &GpeboExtState) -> LreSample {
    LreSample {
        y: ext.z - ext.r[1],
        phi: Vector::from_vec(vec![ext.phi_xi[2], ext.omega[2], ext.omega[3]]),
    }
}

/// Parameters `col(θ, θ/ω², 1/ω²)` of the extracted regression.
pub fn overparameterized_theta(theta: f64, omega: f64) -> Vector {
    let inv = 1.0 / (omega * omega);
    Vector::from_vec(vec![theta, theta * inv, inv])
}

/// Mixed scalar regression `Y = Δ θ + ξ` filtered and extended in one ODE.
///
/// Acts as a three-dimensional [`LreSource`] emitting the extracted regression.
#[derive(Clone, Debug)]
pub struct RejectionPipeline {
    pub excitation: Signal,
    pub disturbance: Signal,
    pub theta: f64,
    filter: LtiFilter,
    /// `[Y filter (2) | Δ filter (2) | extension (11)]`
    x: Vec<f64>,
    last: LreSample,
}

impl RejectionPipeline {
    /// With `steady_state_init`, the `Y` filter starts on the forced orbit of the
    /// sinusoidal disturbance, so `ξ_F` is an exact sinusoid from `t = 0`.
    pub fn new(excitation: Signal, disturbance: Signal, theta: f64, lambda: f64, steady_state_init: bool) -> Result<Self> {
        let filter = rejection_filter(lambda)?;
        let mut x = vec![0.0; 4 + EXT_DIM];
        x[4..].copy_from_slice(&GpeboExtState::default().pack());
        if steady_state_init {
            let (amp, omega, phase) = disturbance.as_pure_sinusoid().ok_or_else(|| {
                Error::InvalidConfig("steady-state initialization needs a pure sinusoidal disturbance".into())
            })?;
            let mut f = filter.clone();
            f.set_sinusoid_steady_state(amp, omega, phase, 0.0)?;
            x[..2].copy_from_slice(f.x.as_slice());
        }
        let mut p = Self { excitation, disturbance, theta, filter, x, last: LreSample::zeros(3) };
        p.last = p.read(0.0, &p.x.clone());
        Ok(p)
    }

    fn inputs(&self, t: f64) -> (f64, f64) {
        let delta = self.excitation.eval(t);
        (delta * self.theta + self.disturbance.eval(t), delta)
    }

    fn filtered(&self, t: f64, x: &[f64]) -> FilteredSample {
        let (y, d) = self.inputs(t);
        let mut oy = [0.0; 2];
        let mut od = [0.0; 2];
        self.filter.output_of(&x[0..2], &[y], &mut oy);
        self.filter.output_of(&x[2..4], &[d], &mut od);
        FilteredSample { y_f: oy[0], delta_f: od[0], y_f_dd: oy[1], delta_f_dd: od[1] }
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let (y, d) = self.inputs(t);
        self.filter.deriv(&x[0..2], &[y], &mut dx[0..2]);
        self.filter.deriv(&x[2..4], &[d], &mut dx[2..4]);
        let f = self.filtered(t, x);
        gpebo_extension_rhs(&x[4..], &f, &mut dx[4..]);
    }

    fn read(&self, _t: f64, x: &[f64]) -> LreSample {
        extract_unperturbed_lre(&GpeboExtState::unpack(&x[4..]))
    }

    pub fn extension(&self) -> GpeboExtState {
        GpeboExtState::unpack(&self.x[4..])
    }

    pub fn filtered_now(&self, t: f64) -> FilteredSample {
        self.filtered(t, &self.x)
    }

    /// `|𝒴₂ − regᵀ col(θ, θ/ω², 1/ω²)|` for a known disturbance frequency.
    pub fn residual(&self, omega: f64) -> f64 {
        self.last.residual(&overparameterized_theta(self.theta, omega)).abs()
    }
}

impl LreSource for RejectionPipeline {
    fn dim(&self) -> usize {
        3
    }

    fn true_theta(&self) -> Option<Vector> {
        self.disturbance
            .as_pure_sinusoid()
            .map(|(_, omega, _)| overparameterized_theta(self.theta, omega))
    }

    fn advance(&mut self, t: f64, h: f64) -> Result<StepInput<LreSample>> {
        let x0 = self.x.clone();
        let x1 = rk4_step_nodes(|_, s, x, dx| self.rhs(s, x, dx), t, &x0, h)?;
        let n = x0.len();
        let mut f0 = vec![0.0; n];
        let mut f1 = vec![0.0; n];
        self.rhs(t, &x0, &mut f0);
        self.rhs(t + h, &x1, &mut f1);
        let xm: Vec<f64> = (0..n).map(|i| 0.5 * (x0[i] + x1[i]) + h / 8.0 * (f0[i] - f1[i])).collect();
        let start = self.last.clone();
        let mid = self.read(t + 0.5 * h, &xm);
        let end = self.read(t + h, &x1);
        self.x = x1;
        self.last = end.clone();
        Ok(StepInput { start, mid, end })
    }
}
