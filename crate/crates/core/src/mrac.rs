//! Input-error model reference adaptive control with the G+D estimator.
//!
//! The controller `u_p = θ̂ᵀφ_PE` uses the classical model-reference
//! regressor, while `θ̂` is estimated from the input-error regression
//! `u_IE = θᵀφ_IE`, which needs no knowledge of the sign of `k_p`.

use crate::gd_estimator::{gd_rhs, GdConfig, GdState};
use crate::lre::LreSample;
use crate::numcore::{poly, rk4_step_nodes, LtiFilter, Mat, TimeGrid, Vector};
use crate::signals::Signal;
use crate::{Error, Mode, Result};

/// Roots must sit left of this abscissa to count as Hurwitz.
pub const HURWITZ_MARGIN: f64 = 1e-9;
/// Any state above this magnitude ends a closed-loop run as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

fn require_hurwitz(p: &[f64], what: &str) -> Result<()> {
    if poly::is_hurwitz(p, HURWITZ_MARGIN)? {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} polynomial {p:?} is not Hurwitz")))
    }
}

fn require_monic(p: &[f64], what: &str) -> Result<()> {
    if poly::trim(p)[0] == 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{what} polynomial {p:?} is not monic")))
    }
}

/// `D(𝒫) y_p = k_p N(𝒫) u_p`, optionally followed by unmodeled dynamics.
#[derive(Clone, Debug, PartialEq)]
pub struct Plant {
    pub kp: f64,
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    /// proper rational factor `(num, den)` in series with the nominal plant
    pub unmodeled: Option<(Vec<f64>, Vec<f64>)>,
}

impl Plant {
    pub fn new(kp: f64, num: Vec<f64>, den: Vec<f64>, unmodeled: Option<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let p = Self { kp, num: poly::trim(&num), den: poly::trim(&den), unmodeled };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kp == 0.0 || !self.kp.is_finite() {
            return Err(Error::InvalidConfig("high-frequency gain must be nonzero".into()));
        }
        require_monic(&self.num, "plant numerator")?;
        require_monic(&self.den, "plant denominator")?;
        require_hurwitz(&self.num, "plant numerator")?;
        if self.order() < 1 || self.relative_degree() < 1 {
            return Err(Error::InvalidConfig(format!(
                "plant needs order ≥ 1 and relative degree ≥ 1, got n_p = {}, m_p = {}",
                self.order(),
                self.num_degree()
            )));
        }
        if let Some((n, d)) = &self.unmodeled {
            if poly::degree(n) > poly::degree(d) {
                return Err(Error::Improper { num: poly::degree(n), den: poly::degree(d) });
            }
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        poly::degree(&self.den)
    }

    pub fn num_degree(&self) -> usize {
        poly::degree(&self.num)
    }

    pub fn relative_degree(&self) -> usize {
        self.order().saturating_sub(self.num_degree())
    }

    /// State-space realization of the full plant, unmodeled factor included.
    pub fn realize(&self) -> Result<LtiFilter> {
        let nominal = LtiFilter::realize_rational(&poly::scale(&self.num, self.kp), &self.den)?;
        match &self.unmodeled {
            None => Ok(nominal),
            Some((n, d)) => nominal.series(&LtiFilter::realize_rational(n, d)?),
        }
    }
}

/// One RK4 step of the plant with `u_p` held; returns `y_p`.
pub fn plant_step(plant: &mut LtiFilter, u_p: f64, h: f64) -> Result<f64> {
    plant.step_scalar(u_p, h)
}

/// `y_m = k_m / D_m(𝒫) r`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceModel {
    pub km: f64,
    pub dm: Vec<f64>,
    pub reference: Signal,
}

impl ReferenceModel {
    pub fn validate(&self, plant: &Plant) -> Result<()> {
        if self.km == 0.0 || !self.km.is_finite() {
            return Err(Error::InvalidConfig("model gain must be nonzero".into()));
        }
        require_monic(&self.dm, "model denominator")?;
        require_hurwitz(&self.dm, "model denominator")?;
        if poly::degree(&self.dm) != plant.relative_degree() {
            return Err(Error::InvalidConfig(format!(
                "model denominator degree {} differs from the plant relative degree {}",
                poly::degree(&self.dm),
                plant.relative_degree()
            )));
        }
        if !self.reference.sup_abs().is_finite() {
            return Err(Error::InvalidConfig("reference must be bounded".into()));
        }
        Ok(())
    }
}

/// Designer polynomial `λ(𝒫)`, monic Hurwitz of degree `n_p − 1` (`[1]` when `n_p = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct MracFilters {
    pub lambda: Vec<f64>,
}

impl MracFilters {
    pub fn first_order() -> Self {
        Self { lambda: vec![1.0] }
    }

    pub fn validate(&self, plant: &Plant) -> Result<()> {
        require_monic(&self.lambda, "filter")?;
        require_hurwitz(&self.lambda, "filter")?;
        if poly::degree(&self.lambda) + 1 != plant.order() {
            return Err(Error::InvalidConfig(format!(
                "filter degree {} must be n_p − 1 = {}",
                poly::degree(&self.lambda),
                plant.order() - 1
            )));
        }
        Ok(())
    }
}

/// Regressors of one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct MracRegressors {
    pub phi_pe: Vector,
    pub phi_ie: Vector,
    pub u_ie: f64,
}

/// Filter bank with inputs `(u_p, y_p, r)` and outputs `[φ_PE; φ_IE; u_IE]`.
#[derive(Clone, Debug)]
pub struct RegressorBank {
    pub filt: LtiFilter,
    np: usize,
}

impl RegressorBank {
    pub fn new(plant: &Plant, model: &ReferenceModel, filters: &MracFilters) -> Result<Self> {
        filters.validate(plant)?;
        model.validate(plant)?;
        let np = plant.order();
        let chains = np - 1;
        let dm_lambda = poly::mul(&model.dm, &filters.lambda);

        // stacked chains; each entry is (driving input, filter)
        let mut parts: Vec<(usize, LtiFilter)> = Vec::new();
        if chains > 0 {
            parts.push((0, LtiFilter::state_chain(&filters.lambda)?));
            parts.push((1, LtiFilter::state_chain(&filters.lambda)?));
            parts.push((0, LtiFilter::state_chain(&dm_lambda)?));
            parts.push((1, LtiFilter::state_chain(&dm_lambda)?));
        }
        parts.push((1, LtiFilter::realize_rational(&[1.0], &model.dm)?));
        parts.push((0, LtiFilter::realize_rational(&[1.0], &model.dm)?));

        let stacked = LtiFilter::block_diag(&parts.iter().map(|(_, f)| f.clone()).collect::<Vec<_>>())?;
        let mut route = Mat::zeros(parts.len(), 3);
        for (i, (input, _)) in parts.iter().enumerate() {
            route[(i, *input)] = 1.0;
        }
        // offsets of each part's outputs in the stacked output vector
        let mut offs = Vec::new();
        let mut acc = 0;
        for (_, f) in &parts {
            offs.push(acc);
            acc += f.n_outputs();
        }
        let n_out = 4 * np + 1;
        let mut sel = Mat::zeros(n_out, acc);
        let mut direct = Mat::zeros(n_out, 3);
        let (ie0, uie) = (2 * np, 4 * np);
        let mut part = 0;
        if chains > 0 {
            for i in 0..chains {
                sel[(i, offs[0] + i)] = 1.0;
                sel[(chains + i, offs[1] + i)] = 1.0;
                sel[(ie0 + i, offs[2] + i)] = 1.0;
                sel[(ie0 + chains + i, offs[3] + i)] = 1.0;
            }
            part = 4;
        }
        // λy/λ = y and λr/λ = r
        direct[(2 * chains, 1)] = 1.0;
        direct[(2 * chains + 1, 2)] = 1.0;
        sel[(ie0 + 2 * chains, offs[part])] = 1.0;
        direct[(ie0 + 2 * chains + 1, 1)] = 1.0 / model.km;
        sel[(uie, offs[part + 1])] = 1.0;

        let filt = LtiFilter::new(
            stacked.a.clone(),
            &stacked.b * &route,
            &sel * &stacked.c,
            &sel * &stacked.d * &route + direct,
        )?;
        Ok(Self { filt, np })
    }

    pub fn split(&self, out: &[f64]) -> MracRegressors {
        let q = 2 * self.np;
        MracRegressors {
            phi_pe: Vector::from_column_slice(&out[..q]),
            phi_ie: Vector::from_column_slice(&out[q..2 * q]),
            u_ie: out[2 * q],
        }
    }

    pub fn read(&self, x: &[f64], u: f64, y: f64, r: f64) -> MracRegressors {
        let mut out = vec![0.0; self.filt.n_outputs()];
        self.filt.output_of(x, &[u, y, r], &mut out);
        self.split(&out)
    }

    /// Advances the bank with held `(u_p, y_p, r)`; returns the regressors at the step end.
    pub fn step(&mut self, u: f64, y: f64, r: f64, h: f64) -> Result<MracRegressors> {
        let out = self.filt.step(&[u, y, r], h)?;
        Ok(self.split(out.as_slice()))
    }
}

/// Regressors from sampled plant signals, zero initial filter states, held inputs.
pub fn build_regressors(
    u_p: &[f64],
    y_p: &[f64],
    r: &[f64],
    h: f64,
    plant: &Plant,
    model: &ReferenceModel,
    filters: &MracFilters,
) -> Result<Vec<MracRegressors>> {
    if u_p.len() != y_p.len() || u_p.len() != r.len() {
        return Err(Error::Dimension("signal traces differ in length".into()));
    }
    let mut bank = RegressorBank::new(plant, model, filters)?;
    let mut out = Vec::with_capacity(u_p.len());
    for k in 0..u_p.len() {
        if k > 0 {
            bank.step(u_p[k - 1], y_p[k - 1], r[k - 1], h)?;
        }
        out.push(bank.read(bank.filt.x.as_slice(), u_p[k], y_p[k], r[k]));
    }
    Ok(out)
}

/// Model-matching gains for `k_p/(𝒫+a)` against `k_m/(𝒫+a_m)` in the regressor order
/// `(y_p, r)`: `col((a − a_m)/k_p, k_m/k_p)`. `None` for other structures.
pub fn first_order_ideal_theta(plant: &Plant, model: &ReferenceModel) -> Option<Vector> {
    if plant.order() != 1 || plant.num_degree() != 0 || poly::degree(&model.dm) != 1 {
        return None;
    }
    let a = plant.den[1] / plant.den[0];
    let am = model.dm[1] / model.dm[0];
    Some(Vector::from_vec(vec![(a - am) / plant.kp, model.km / plant.kp]))
}

/// One recorded instant of a closed-loop run.
pub struct MracPoint<'a> {
    pub k: usize,
    pub t: f64,
    pub y_p: f64,
    pub y_m: f64,
    pub u_p: f64,
    pub r: f64,
    pub estimator: &'a GdState,
    pub delta: f64,
    pub regressors: &'a MracRegressors,
}

impl MracPoint<'_> {
    pub fn tracking_error(&self) -> f64 {
        self.y_p - self.y_m
    }
}

/// How a closed-loop run ended.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MracOutcome {
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    /// largest state magnitude seen
    pub max_state: f64,
    /// largest magnitude of `y_p`, `u_p` and `θ̂` seen
    pub max_signal: f64,
    pub final_theta: Vector,
}

/// Full closed loop integrated as one ODE.
///
/// The state is `[plant | bank | model | estimator]`; the control
/// `u_p = θ̂ᵀφ_PE` is re-evaluated at every RK4 stage. A run stops as
/// diverged once any state exceeds `threshold` or turns non-finite; points
/// observed up to then are kept by the caller.
pub struct ClosedLoop {
    plant: LtiFilter,
    bank: RegressorBank,
    model: LtiFilter,
    reference: Signal,
    cfg: GdConfig,
    q: usize,
}

impl ClosedLoop {
    pub fn new(plant: &Plant, model: &ReferenceModel, filters: &MracFilters, cfg: &GdConfig) -> Result<Self> {
        plant.validate()?;
        cfg.validate()?;
        if cfg.mode != Mode::Continuous {
            return Err(Error::InvalidConfig("the adaptive loop runs in continuous time".into()));
        }
        let q = 2 * plant.order();
        if cfg.q() != q {
            return Err(Error::Dimension(format!("estimator has {} parameters, loop needs {q}", cfg.q())));
        }
        let plant_f = plant.realize()?;
        if !plant_f.is_strictly_proper() {
            return Err(Error::InvalidConfig("plant with unmodeled dynamics must be strictly proper".into()));
        }
        Ok(Self {
            plant: plant_f,
            bank: RegressorBank::new(plant, model, filters)?,
            model: LtiFilter::realize_rational(&[model.km], &model.dm)?,
            reference: model.reference.clone(),
            cfg: cfg.clone(),
            q,
        })
    }

    fn sizes(&self) -> [usize; 4] {
        [self.plant.order(), self.bank.filt.order(), self.model.order(), 2 * self.q + self.q * self.q]
    }

    fn initial_state(&self) -> Vec<f64> {
        let [np, nb, nm, _] = self.sizes();
        let mut x = vec![0.0; np + nb + nm];
        x.extend(GdState::new(&self.cfg).pack());
        x
    }

    /// Algebraic signals `(y_p, u_p, r, regressors)` at a packed state.
    fn signals(&self, t: f64, x: &[f64]) -> (f64, f64, f64, MracRegressors) {
        let [np, nb, nm, _] = self.sizes();
        let xp = &x[..np];
        let xb = &x[np..np + nb];
        let est = &x[np + nb + nm..];
        let r = self.reference.eval(t);
        let mut y = [0.0];
        self.plant.output_of(xp, &[0.0], &mut y);
        // φ_PE has no feedthrough from u_p
        let pre = self.bank.read(xb, 0.0, y[0], r);
        let theta = &est[self.q + self.q * self.q..];
        let u: f64 = pre.phi_pe.iter().zip(theta).map(|(a, b)| a * b).sum();
        let regs = self.bank.read(xb, u, y[0], r);
        (y[0], u, r, regs)
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) -> Result<()> {
        let [np, nb, nm, _] = self.sizes();
        let (y, u, r, regs) = self.signals(t, x);
        self.plant.deriv(&x[..np], &[u], &mut dx[..np]);
        self.bank.filt.deriv(&x[np..np + nb], &[u, y, r], &mut dx[np..np + nb]);
        self.model.deriv(&x[np + nb..np + nb + nm], &[r], &mut dx[np + nb..np + nb + nm]);
        let sample = LreSample { phi: regs.phi_ie, y: regs.u_ie };
        gd_rhs(&self.cfg, t, &x[np + nb + nm..], &sample, &mut dx[np + nb + nm..])
    }

    /// Runs over `grid`, observing every grid point up to divergence.
    pub fn run<F>(&self, grid: &TimeGrid, threshold: f64, mut observe: F) -> Result<MracOutcome>
    where
        F: FnMut(&MracPoint<'_>),
    {
        let mut x = self.initial_state();
        let [np, nb, nm, _] = self.sizes();
        let mut out = MracOutcome::default();
        if grid.n_steps == 0 {
            out.final_theta = self.cfg.theta0.clone();
            return Ok(out);
        }
        for k in 0..=grid.n_steps {
            let t = grid.time(k);
            let est = GdState::unpack(self.q, &x[np + nb + nm..]);
            let (y, u, r, regs) = self.signals(t, &x);
            let mut ym = [0.0];
            self.model.output_of(&x[np + nb..np + nb + nm], &[r], &mut ym);
            let delta = est.derived(&self.cfg)?.delta;
            observe(&MracPoint { k, t, y_p: y, y_m: ym[0], u_p: u, r, estimator: &est, delta, regressors: &regs });
            out.max_state = out.max_state.max(x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            out.max_signal = out.max_signal.max(y.abs()).max(u.abs()).max(est.theta.amax());
            out.final_theta = est.theta.clone();
            if k == grid.n_steps {
                break;
            }
            let mut failed = None;
            let next = rk4_step_nodes(
                |_, s, xs, dx| {
                    if let Err(e) = self.rhs(s, xs, dx) {
                        failed.get_or_insert(e);
                        dx.fill(f64::NAN);
                    }
                },
                t,
                &x,
                grid.h,
            );
            if let Some(e) = failed {
                if !matches!(e, Error::NumericOverflow { .. }) {
                    return Err(e);
                }
            }
            match next {
                Ok(v) if v.iter().all(|s| s.abs() <= threshold) => x = v,
                Ok(_) | Err(Error::NumericOverflow { .. }) => {
                    out.diverged = true;
                    out.divergence_time = Some(t + grid.h);
                    return Ok(out);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper: build the loop and run it with the default divergence threshold.
pub fn mrac_closed_loop<F>(
    plant: &Plant,
    model: &ReferenceModel,
    filters: &MracFilters,
    cfg: &GdConfig,
    grid: &TimeGrid,
    observe: F,
) -> Result<MracOutcome>
where
    F: FnMut(&MracPoint<'_>),
{
    ClosedLoop::new(plant, model, filters, cfg)?.run(grid, DIVERGENCE_THRESHOLD, observe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gd_estimator::GainSchedule;

    fn rohrs_plant(kp: f64, unmodeled: bool) -> Plant {
        let um = unmodeled.then(|| (vec![229.0], vec![1.0, 30.0, 229.0]));
        Plant::new(kp, vec![1.0], vec![1.0, 1.0], um).unwrap()
    }

    fn model(r: Signal) -> ReferenceModel {
        ReferenceModel { km: 3.0, dm: vec![1.0, 3.0], reference: r }
    }

    #[test]
    fn plant_step_response() {
        let mut p = rohrs_plant(2.0, false).realize().unwrap();
        let h = 1e-3;
        let mut worst: f64 = 0.0;
        for k in 1..=5000 {
            let y = plant_step(&mut p, 1.0, h).unwrap();
            worst = worst.max((y - 2.0 * (1.0 - (-(k as f64) * h).exp())).abs());
        }
        assert!(worst < 1e-6);
        let mut z = rohrs_plant(2.0, false).realize().unwrap();
        assert_eq!(plant_step(&mut z, 0.0, h).unwrap(), 0.0);
    }

    #[test]
    fn cascade_dc_gain() {
        let mut p = rohrs_plant(2.0, true).realize().unwrap();
        let mut y = 0.0;
        for _ in 0..20_000 {
            y = plant_step(&mut p, 1.0, 1e-3).unwrap();
        }
        assert!((y - 2.0).abs() < 1e-3);
    }

    #[test]
    fn plant_assumptions_are_checked() {
        assert!(Plant::new(2.0, vec![1.0, -1.0], vec![1.0, 1.0, 1.0], None).is_err());
        assert!(Plant::new(2.0, vec![1.0, 1.0], vec![1.0, 1.0], None).is_err());
        assert!(Plant::new(0.0, vec![1.0], vec![1.0, 1.0], None).is_err());
    }

    #[test]
    fn ideal_theta_by_matching() {
        let m = model(Signal::Constant { value: 2.0 });
        assert_eq!(first_order_ideal_theta(&rohrs_plant(2.0, false), &m).unwrap(), Vector::from_vec(vec![-1.0, 1.5]));
        assert_eq!(first_order_ideal_theta(&rohrs_plant(-2.0, false), &m).unwrap(), Vector::from_vec(vec![1.0, -1.5]));
    }

    #[test]
    fn first_order_regressors() {
        // n_p = 1: φ_PE = (y, r), φ_IE = (y/D_m, y/k_m), u_IE = u/D_m
        let p = rohrs_plant(2.0, false);
        let m = model(Signal::zero());
        let h = 1e-3;
        let n = 2000;
        let u: Vec<f64> = (0..n).map(|k| (k as f64 * h).sin()).collect();
        let y: Vec<f64> = (0..n).map(|k| 1.0 + k as f64 * h).collect();
        let r: Vec<f64> = (0..n).map(|k| (2.0 * k as f64 * h).cos()).collect();
        let regs = build_regressors(&u, &y, &r, h, &p, &m, &MracFilters::first_order()).unwrap();
        let mut fy = LtiFilter::realize_rational(&[1.0], &[1.0, 3.0]).unwrap();
        let mut fu = fy.clone();
        for k in 0..n {
            if k > 0 {
                fy.step_scalar(y[k - 1], h).unwrap();
                fu.step_scalar(u[k - 1], h).unwrap();
            }
            let g = &regs[k];
            assert_eq!(g.phi_pe.as_slice(), &[y[k], r[k]]);
            assert!((g.phi_ie[0] - fy.x[0]).abs() < 1e-14);
            assert!((g.phi_ie[1] - y[k] / 3.0).abs() < 1e-15);
            assert!((g.u_ie - fu.x[0]).abs() < 1e-14);
        }
        let zeros = vec![0.0; 10];
        let regs = build_regressors(&zeros, &zeros, &zeros, h, &p, &m, &MracFilters::first_order()).unwrap();
        assert!(regs.iter().all(|g| g.phi_pe.amax() == 0.0 && g.phi_ie.amax() == 0.0 && g.u_ie == 0.0));
    }

    #[test]
    fn pinned_ideal_gains_track() {
        let p = rohrs_plant(2.0, false);
        let m = model(Signal::Sinusoid { amplitude: 18.5, omega: 16.1, phase: 0.0, offset: 0.3 });
        let ideal = first_order_ideal_theta(&p, &m).unwrap();
        // γ tiny and θ̂(0) at the ideal gains: the estimate cannot move in 10 time constants
        let cfg = GdConfig::new(2, 1e-300, GainSchedule::constant(1e-300), Mode::Continuous).with_initial(Vector::zeros(2), ideal.clone());
        let grid = TimeGrid::horizon(10.0 / 3.0 * 10.0, 1e-3).unwrap();
        let mut last = f64::INFINITY;
        let mut ie_resid: f64 = 0.0;
        mrac_closed_loop(&p, &m, &MracFilters::first_order(), &cfg, &grid, |pt| {
            last = pt.tracking_error().abs();
            ie_resid = ie_resid.max((pt.regressors.u_ie - ideal.dot(&pt.regressors.phi_ie)).abs());
        })
        .unwrap();
        assert!(last < 1e-3, "{last}");
        assert!(ie_resid < 1e-4, "{ie_resid}");
    }
}
