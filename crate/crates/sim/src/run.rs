//! Wires a scenario to its source and estimator and collects traces and metrics.

use std::collections::BTreeMap;
use std::time::Instant;

use interlace::dg_baseline::{run_dg_with, DgConfig};
use interlace::gd_estimator::{run_gd_with, GdConfig};
use interlace::lre::{DirectLre, FilteredPlantLre, LreSource};
use interlace::mrac::{first_order_ideal_theta, ClosedLoop, MracFilters, Plant, ReferenceModel};
use interlace::nlpre::{check_p_monotone, lyapunov_decrement, run_nlpre_with, MonotoneMap, NlpreConfig};
use interlace::numcore::TimeGrid;
use interlace::robust_reject::{overparameterized_theta, run_perturbed_gd, PerturbedLre, RejectionPipeline, RobustGainSchedule};
use interlace::{Error, Mat, Mode, Vector};

use crate::error::{SimError, SimResult};
use crate::report::RunReport;
use crate::scenario::{EstimatorSpec, Scenario, SystemSpec};

/// `1/θ̂₂` is only inverted above this level.
const OMEGA_GUARD: f64 = 1e-9;
/// Seed of the sampled monotonicity certificate.
const MONOTONE_SEED: u64 = 0x5eed;

/// Recorded columns of a run, header first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
enum Extra {
    Scalar(f64),
    Vector(Vec<f64>),
}

struct Sample<'a> {
    t: f64,
    theta: &'a Vector,
    theta_g: Option<&'a Vector>,
    delta: f64,
    phi: &'a Vector,
    y: f64,
    extras: Vec<(&'static str, Extra)>,
}

const BASE_GROUPS: [&str; 6] = ["theta", "error", "error_norm", "delta", "phi", "y"];

fn extra_groups(s: &Scenario) -> &'static [&'static str] {
    match (&s.system, &s.estimator) {
        (SystemSpec::Mrac { .. }, _) => &["theta_g", "y_p", "y_m", "u_p", "r", "tracking_error"],
        (_, EstimatorSpec::Dg { .. }) => &["new_output", "new_regressor", "new_lre_residual"],
        (_, EstimatorSpec::Nlpre { .. }) => &["theta_g", "lre_residual", "omega_hat"],
        (_, EstimatorSpec::Gd { .. }) => &["theta_g", "lre_residual", "mixing_residual"],
    }
}

/// Trace groups a scenario may request.
pub fn available_traces(s: &Scenario) -> Vec<&'static str> {
    BASE_GROUPS.iter().chain(extra_groups(s)).copied().collect()
}

struct Collector<'a> {
    groups: &'a [String],
    stride: usize,
    truth: Option<Vector>,
    theta_scale: f64,
    level: f64,
    t_c: f64,
    tail_start: f64,
    table: Table,
    report: RunReport,
    conv_candidate: Option<f64>,
    metric_max: BTreeMap<&'static str, f64>,
}

impl<'a> Collector<'a> {
    fn new(s: &'a Scenario, truth: Option<Vector>, grid: &TimeGrid) -> Self {
        let theta_scale = truth.as_ref().map(|t| t.norm()).unwrap_or(0.0);
        let report = RunReport {
            name: s.name.clone(),
            family: s.family.clone(),
            sweep_value: s.sweep_value,
            true_theta: truth.as_ref().map(|t| t.as_slice().to_vec()),
            ..Default::default()
        };
        Self {
            groups: &s.output.traces,
            stride: s.output.stride,
            truth,
            theta_scale,
            level: s.report.convergence_level,
            t_c: s.report.t_c,
            tail_start: grid.t0 + 0.8 * (grid.t_end() - grid.t0),
            table: Table::default(),
            report,
            conv_candidate: None,
            metric_max: BTreeMap::new(),
        }
    }

    fn bump(&mut self, key: &'static str, v: f64) {
        let e = self.metric_max.entry(key).or_insert(f64::NEG_INFINITY);
        if v > *e || v.is_nan() {
            *e = v;
        }
    }

    fn header_for(&self, s: &Sample) -> Vec<String> {
        let mut h = vec!["time".to_string()];
        let indexed = |h: &mut Vec<String>, name: &str, n: usize| {
            for i in 1..=n {
                h.push(format!("{name}_{i}"));
            }
        };
        for g in self.groups {
            match g.as_str() {
                "theta" => indexed(&mut h, "theta", s.theta.len()),
                "error" => indexed(&mut h, "error", s.theta.len()),
                "theta_g" => indexed(&mut h, "theta_g", s.theta_g.map(|v| v.len()).unwrap_or(0)),
                "phi" => indexed(&mut h, "phi", s.phi.len()),
                "error_norm" | "delta" | "y" => h.push(g.clone()),
                other => match s.extras.iter().find(|(n, _)| *n == other) {
                    Some((_, Extra::Vector(v))) => indexed(&mut h, other, v.len()),
                    _ => h.push(other.to_string()),
                },
            }
        }
        h
    }

    fn push(&mut self, k: usize, s: &Sample) {
        let err = self.truth.as_ref().map(|th| s.theta - th);
        let err_norm = err.as_ref().map(|e| e.norm());

        let r = &mut self.report;
        r.n_points += 1;
        r.final_time = s.t;
        r.final_theta = s.theta.as_slice().to_vec();
        let mut sup = s.theta.amax();
        if let Some(g) = s.theta_g {
            sup = sup.max(g.amax());
        }
        r.sup_signal = r.sup_signal.max(sup);
        if let (Some(e), Some(n)) = (&err, err_norm) {
            r.final_error = Some(n);
            r.sup_error = Some(r.sup_error.unwrap_or(0.0).max(n));
            if n < self.level * self.theta_scale {
                self.conv_candidate.get_or_insert(s.t);
            } else {
                self.conv_candidate = None;
            }
            if s.t >= self.tail_start {
                r.oscillation = Some(r.oscillation.unwrap_or(0.0).max(e.amax()));
            }
        }
        if s.t >= self.t_c {
            r.min_abs_delta = Some(r.min_abs_delta.unwrap_or(f64::INFINITY).min(s.delta.abs()));
        }

        if k % self.stride != 0 {
            return;
        }
        if self.table.header.is_empty() {
            self.table.header = self.header_for(s);
        }
        let mut row = Vec::with_capacity(self.table.header.len());
        row.push(s.t);
        for g in self.groups {
            match g.as_str() {
                "theta" => row.extend_from_slice(s.theta.as_slice()),
                "error" => row.extend(err.as_ref().map(|e| e.as_slice().to_vec()).unwrap_or_default()),
                "error_norm" => row.push(err_norm.unwrap_or(f64::NAN)),
                "theta_g" => row.extend(s.theta_g.map(|v| v.as_slice().to_vec()).unwrap_or_default()),
                "delta" => row.push(s.delta),
                "phi" => row.extend_from_slice(s.phi.as_slice()),
                "y" => row.push(s.y),
                other => match s.extras.iter().find(|(n, _)| *n == other) {
                    Some((_, Extra::Scalar(v))) => row.push(*v),
                    Some((_, Extra::Vector(v))) => row.extend_from_slice(v),
                    None => row.push(f64::NAN),
                },
            }
        }
        self.table.rows.push(row);
    }

    fn finish(mut self, started: Instant) -> (RunReport, Table) {
        self.report.convergence_time = if self.truth.is_some() { self.conv_candidate } else { None };
        for (k, v) in self.metric_max {
            self.report.metrics.insert(k.to_string(), v);
        }
        self.report.wall_clock_s = started.elapsed().as_secs_f64();
        (self.report, self.table)
    }

    fn diverge(&mut self, t: f64) {
        self.report.diverged = true;
        self.report.divergence_time.get_or_insert(t);
    }
}

fn grid_of(s: &Scenario) -> SimResult<TimeGrid> {
    match s.mode {
        Mode::Continuous => TimeGrid::horizon(s.grid.t_end, s.grid.h).map_err(|e| SimError::validation("grid", e.to_string())),
        Mode::Discrete => Ok(TimeGrid::discrete(s.grid.t_end as usize)),
    }
}

fn vec_or_zeros(v: &Option<Vec<f64>>, n: usize) -> Vector {
    v.as_ref().map(|v| Vector::from_column_slice(v)).unwrap_or_else(|| Vector::zeros(n))
}

fn open_loop_source(s: &Scenario) -> SimResult<Box<dyn LreSource>> {
    let clean: Box<dyn LreSource> = match &s.system {
        SystemSpec::FilteredPlant { num, den, filter, input } => {
            Box::new(FilteredPlantLre::new(num, den, filter, input.clone()).map_err(|e| SimError::validation("system", e.to_string()))?)
        }
        SystemSpec::Direct { regressor, theta } => Box::new(
            DirectLre::new(regressor.clone(), Vector::from_column_slice(theta)).map_err(|e| SimError::validation("system", e.to_string()))?,
        ),
        _ => return Err(SimError::validation("system.kind", "not an open-loop regression")),
    };
    Ok(match &s.disturbance {
        Some(d) => Box::new(PerturbedLre::new(BoxedSource(clean), d.clone())?),
        None => clean,
    })
}

struct BoxedSource(Box<dyn LreSource>);

impl LreSource for BoxedSource {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn true_theta(&self) -> Option<Vector> {
        self.0.true_theta()
    }
    fn advance(&mut self, t: f64, h: f64) -> interlace::Result<interlace::numcore::StepInput<interlace::lre::LreSample>> {
        self.0.advance(t, h)
    }
}

/// Maps an estimator failure to divergence when it is numeric overflow.
fn settle(c: &mut Collector, r: interlace::Result<()>) -> SimResult<()> {
    match r {
        Ok(()) => Ok(()),
        Err(Error::NumericOverflow { t }) => {
            c.diverge(t);
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

/// Runs a scenario; numeric divergence is reported in the result, not raised.
pub fn execute(s: &Scenario) -> SimResult<(RunReport, Table)> {
    s.validate()?;
    let available = available_traces(s);
    for t in &s.output.traces {
        if !available.contains(&t.as_str()) {
            return Err(SimError::validation("output.traces", format!("unknown trace `{t}`; available: {}", available.join(", "))));
        }
    }
    let grid = grid_of(s)?;
    let started = Instant::now();
    let threshold = s.report.divergence_threshold;
    let q = s.regression_dim();

    match (&s.system, &s.estimator) {
        (SystemSpec::Mrac { plant, model, lambda, ideal_theta }, EstimatorSpec::Gd { gamma, gamma_g, theta_g0, theta0 }) => {
            let plant = Plant::new(
                plant.kp,
                plant.num.clone(),
                plant.den.clone(),
                plant.unmodeled.as_ref().map(|u| (u.num.clone(), u.den.clone())),
            )
            .map_err(|e| SimError::validation("system.plant", e.to_string()))?;
            let model = ReferenceModel { km: model.km, dm: model.dm.clone(), reference: model.reference.clone() };
            let filters = MracFilters { lambda: lambda.clone() };
            let cfg = GdConfig::new(q, *gamma, gamma_g.clone(), Mode::Continuous)
                .with_initial(vec_or_zeros(theta_g0, q), vec_or_zeros(theta0, q));
            let truth = ideal_theta.as_ref().map(|v| Vector::from_column_slice(v)).or_else(|| first_order_ideal_theta(&plant, &model));
            require_truth(s, &truth)?;
            let looped = ClosedLoop::new(&plant, &model, &filters, &cfg).map_err(|e| SimError::validation("system", e.to_string()))?;
            let mut c = Collector::new(s, truth, &grid);
            let out = looped.run(&grid, threshold, |p| {
                let e = p.tracking_error();
                c.bump("sup_tracking_error_after_t_c", if p.t >= c.t_c { e.abs() } else { 0.0 });
                c.report.sup_signal = c.report.sup_signal.max(p.y_p.abs()).max(p.u_p.abs()).max(p.y_m.abs());
                let sample = Sample {
                    t: p.t,
                    theta: &p.estimator.theta,
                    theta_g: Some(&p.estimator.theta_g),
                    delta: p.delta,
                    phi: &p.regressors.phi_ie,
                    y: p.regressors.u_ie,
                    extras: vec![
                        ("y_p", Extra::Scalar(p.y_p)),
                        ("y_m", Extra::Scalar(p.y_m)),
                        ("u_p", Extra::Scalar(p.u_p)),
                        ("r", Extra::Scalar(p.r)),
                        ("tracking_error", Extra::Scalar(e)),
                    ],
                };
                c.push(p.k, &sample);
                c.report.final_tracking_error = Some(e);
            })?;
            c.report.sup_signal = c.report.sup_signal.max(out.max_state).max(out.max_signal);
            if out.diverged {
                c.diverge(out.divergence_time.unwrap_or(grid.t_end()));
            }
            Ok(c.finish(started))
        }
        (SystemSpec::Rejection { excitation, theta, disturbance, lambda, steady_state_init }, EstimatorSpec::Nlpre { gamma, gamma_g, map, p_mat, rho, theta_g0, theta0, monotone_box }) => {
            let mut source = RejectionPipeline::new(excitation.clone(), disturbance.clone(), *theta, *lambda, *steady_state_init)
                .map_err(|e| SimError::validation("system", e.to_string()))?;
            let monotone = build_map(map, p_mat, *rho)?;
            let cfg = NlpreConfig {
                gamma: *gamma,
                gamma_g: gamma_g.clone(),
                theta_g0: vec_or_zeros(theta_g0, map.p()),
                theta0: vec_or_zeros(theta0, map.q()),
                map: monotone.clone(),
            };
            let omega = disturbance.as_pure_sinusoid().map(|(_, w, _)| w);
            let over = omega.map(|w| overparameterized_theta(*theta, w));
            let truth = omega.map(|w| Vector::from_vec(vec![*theta, 1.0 / (w * w)]));
            require_truth(s, &truth)?;
            let mut c = Collector::new(s, truth.clone(), &grid);
            let mut times = Vec::new();
            let mut errs = Vec::new();
            let mut deltas = Vec::new();
            let r = run_nlpre_with(&mut source, &cfg, &grid, |p| {
                let resid = over.as_ref().map(|o| p.sample.residual(o).abs()).unwrap_or(f64::NAN);
                c.bump("lre_residual_max", resid);
                let th2 = p.state.theta[1];
                let omega_hat = if th2 > OMEGA_GUARD { 1.0 / th2.sqrt() } else { f64::NAN };
                if let Some(tr) = &truth {
                    times.push(p.t);
                    errs.push(&p.state.theta - tr);
                    deltas.push(p.derived.delta);
                }
                let sample = Sample {
                    t: p.t,
                    theta: &p.state.theta,
                    theta_g: Some(&p.state.theta_g),
                    delta: p.derived.delta,
                    phi: &p.sample.phi,
                    y: p.sample.y,
                    extras: vec![("lre_residual", Extra::Scalar(resid)), ("omega_hat", Extra::Scalar(omega_hat))],
                };
                c.push(p.k, &sample);
                if p.state.theta.amax() > threshold {
                    c.diverge(p.t);
                }
            })
            .map(|_| ());
            settle(&mut c, r)?;
            if !times.is_empty() {
                let dec = lyapunov_decrement(&times, &errs, &deltas, monotone.rho, *gamma, 0.0)?;
                c.report.metrics.insert("decrement_min_slack".into(), dec.min_slack);
                c.report.metrics.insert("decrement_max_increase".into(), dec.max_increase);
            }
            if let Some(b) = monotone_box {
                let rep = check_p_monotone(&monotone, &b.lo, &b.hi, b.samples, MONOTONE_SEED)?;
                c.report.metrics.insert("monotone_passes".into(), if rep.passes { 1.0 } else { 0.0 });
                c.report.metrics.insert("monotone_rho_hat".into(), rep.rho_hat);
                c.report.metrics.insert("monotone_jac_lambda_min".into(), rep.jac_lambda_min);
            }
            Ok(c.finish(started))
        }
        (_, EstimatorSpec::Gd { gamma, gamma_g, theta_g0, theta0 }) => {
            let mut source = open_loop_source(s)?;
            let truth = source.true_theta();
            require_truth(s, &truth)?;
            let cfg = GdConfig::new(q, *gamma, gamma_g.clone(), s.mode).with_initial(vec_or_zeros(theta_g0, q), vec_or_zeros(theta0, q));
            let mut c = Collector::new(s, truth.clone(), &grid);
            let eye = Mat::identity(q, q);
            let r = run_gd_with(source.as_mut(), &cfg, &grid, |p| {
                let (mut lre_res, mut mix_res) = (f64::NAN, f64::NAN);
                if let Some(th) = &truth {
                    let lhs = (&eye - &p.state.phi) * th;
                    let rhs = &p.state.theta_g - &p.state.phi * &cfg.theta_g0;
                    lre_res = (lhs - rhs).amax();
                    mix_res = (&p.derived.y - th * p.derived.delta).amax();
                    c.bump("lre_residual_max", lre_res);
                    c.bump("mixing_residual_max", mix_res);
                }
                let sample = Sample {
                    t: p.t,
                    theta: &p.state.theta,
                    theta_g: Some(&p.state.theta_g),
                    delta: p.derived.delta,
                    phi: &p.sample.phi,
                    y: p.sample.y,
                    extras: vec![("lre_residual", Extra::Scalar(lre_res)), ("mixing_residual", Extra::Scalar(mix_res))],
                };
                c.push(p.k, &sample);
                if p.state.theta.amax() > threshold || p.state.theta_g.amax() > threshold {
                    c.diverge(p.t);
                }
            })
            .map(|_| ());
            settle(&mut c, r)?;
            if s.disturbance.is_some() {
                if let Ok(robust) = RobustGainSchedule::new(gamma_g.clone(), s.mode) {
                    let mut fresh = open_loop_source(s)?;
                    let rep = run_perturbed_gd(fresh.as_mut(), &robust, &cfg, &grid)?;
                    c.report.metrics.insert("energy_slack".into(), rep.energy_slack);
                    c.report.metrics.insert("energy_bound_holds".into(), if rep.energy_bound_holds { 1.0 } else { 0.0 });
                    c.report.metrics.insert("sup_disturbance".into(), rep.sup_disturbance);
                }
            }
            Ok(c.finish(started))
        }
        (_, EstimatorSpec::Dg { lambda, g, k, beta, kappa, theta0 }) => {
            let mut source = open_loop_source(s)?;
            let truth = source.true_theta();
            require_truth(s, &truth)?;
            let cfg = DgConfig { lambda: *lambda, g: *g, k: *k, beta: *beta, kappa: *kappa, theta0: theta0.clone() };
            let mut c = Collector::new(s, truth.clone(), &grid);
            let r = run_dg_with(source.as_mut(), &cfg, &grid, |p| {
                let outputs: Vec<f64> = p.state.ext.iter().map(|e| e.new_output()).collect();
                let regs: Vec<f64> = p.state.ext.iter().map(|e| e.new_regressor()).collect();
                let resid = truth
                    .as_ref()
                    .map(|th| outputs.iter().zip(&regs).zip(th.iter()).map(|((y, r), t)| (y - r * t).abs()).fold(0.0, f64::max))
                    .unwrap_or(f64::NAN);
                if p.t >= c.t_c {
                    c.bump("new_lre_residual_max", resid);
                }
                let ext_sup = p
                    .state
                    .ext
                    .iter()
                    .flat_map(|e| [e.z, e.zeta[0], e.zeta[1], e.phi_bar[0], e.phi_bar[1]])
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                c.bump("extension_sup", ext_sup);
                let delta = p.state.mixed().map(|m| m.delta).unwrap_or(f64::NAN);
                let sample = Sample {
                    t: p.t,
                    theta: &p.state.theta,
                    theta_g: None,
                    delta,
                    phi: &p.sample.phi,
                    y: p.sample.y,
                    extras: vec![
                        ("new_output", Extra::Vector(outputs)),
                        ("new_regressor", Extra::Vector(regs)),
                        ("new_lre_residual", Extra::Scalar(resid)),
                    ],
                };
                c.push(p.k, &sample);
                if p.state.theta.amax() > threshold || ext_sup > threshold {
                    c.diverge(p.t);
                }
            })
            .map(|_| ());
            settle(&mut c, r)?;
            Ok(c.finish(started))
        }
        (_, EstimatorSpec::Nlpre { .. }) => Err(SimError::validation("estimator.kind", "nlpre needs the rejection system")),
    }
}

fn require_truth(s: &Scenario, truth: &Option<Vector>) -> SimResult<()> {
    if truth.is_none() && s.output.traces.iter().any(|t| t == "error" || t == "error_norm") {
        return Err(SimError::validation("output.traces", "error traces need a known parameter vector"));
    }
    Ok(())
}

fn build_map(kind: &interlace::nlpre::MapKind, p_mat: &Option<Vec<Vec<f64>>>, rho: f64) -> SimResult<MonotoneMap> {
    use interlace::nlpre::MapKind;
    let p = match p_mat {
        Some(rows) => Mat::from_fn(kind.q(), kind.p(), |r, c| rows[r][c]),
        None => match kind {
            MapKind::ThetaMu => MonotoneMap::theta_mu().p_mat,
            _ => Mat::identity(kind.q(), kind.p()),
        },
    };
    MonotoneMap::new(kind.clone(), p, rho).map_err(|e| SimError::validation("estimator.p_mat", e.to_string()))
}
