//! D+G baseline: DREM mixing first, then a per-parameter GPEBO-style
//! extension that turns each scalar LRE into one with an exciting regressor.

use serde::{Deserialize, Serialize};

use crate::lre::{LreSample, LreSource};
use crate::numcore::{adjugate, det, rk4_step_nodes, Mat, StepInput, TimeGrid, Vector};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgConfig {
    /// filter pole of `g/(𝒫 + λ)`
    pub lambda: f64,
    /// filter gain
    pub g: f64,
    /// extension gain
    pub k: f64,
    /// energy level, must exceed ½
    pub beta: f64,
    /// gradient gain
    pub kappa: f64,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
}

impl DgConfig {
    pub fn new(lambda: f64, g: f64, k: f64, beta: f64, kappa: f64) -> Self {
        Self { lambda, g, k, beta, kappa, theta0: None }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("g", self.g), ("k", self.k), ("kappa", self.kappa)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.beta > 0.5) || !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!("beta must exceed 1/2, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Extension chain of one parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DgExtension {
    pub z: f64,
    pub zeta: [f64; 2],
    pub phi_bar: [f64; 2],
}

impl Default for DgExtension {
    fn default() -> Self {
        Self { z: 0.0, zeta: [0.0; 2], phi_bar: [1.0, 0.0] }
    }
}

impl DgExtension {
    /// Output of the new LRE `Ȳ = z − ζ₂`.
    pub fn new_output(&self) -> f64 {
        self.z - self.zeta[1]
    }

    /// Regressor of the new LRE, `Φ̄₂`.
    pub fn new_regressor(&self) -> f64 {
        self.phi_bar[1]
    }

    fn pack(&self, out: &mut [f64]) {
        out.copy_from_slice(&[self.z, self.zeta[0], self.zeta[1], self.phi_bar[0], self.phi_bar[1]]);
    }

    fn unpack(v: &[f64]) -> Self {
        Self { z: v[0], zeta: [v[1], v[2]], phi_bar: [v[3], v[4]] }
    }
}

const EXT_LEN: usize = 5;

/// `ζ` is the GPEBO observer of the virtual state `col(θ_i, z)`, whose
/// dynamics are `Ā col(θ_i, z) + col(kΔ̄Φ̄₁z, (Ṽ − k)z)`.
fn extension_rhs(cfg: &DgConfig, x: &[f64], mixed: f64, delta_bar: f64, dx: &mut [f64]) {
    let (z, z1, z2, p1, p2) = (x[0], x[1], x[2], x[3], x[4]);
    let v = 0.5 * (p1 * p1 + p2 * p2) - cfg.beta;
    let a = cfg.k * delta_bar * p1;
    dx[0] = -cfg.k * z + cfg.k * p1 * mixed;
    dx[1] = -a * z2 + a * z;
    dx[2] = a * z1 - v * z2 + (v - cfg.k) * z;
    dx[3] = -a * p2;
    dx[4] = a * p1 - v * p2;
}

/// Full estimator state.
#[derive(Clone, Debug, PartialEq)]
pub struct DgState {
    pub z_filt: Vector,
    pub psi: Mat,
    pub ext: Vec<DgExtension>,
    pub theta: Vector,
}

/// `𝒴 = adj{Ψ} Z` and `Δ̄ = det Ψ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DgMixed {
    pub y: Vector,
    pub delta: f64,
}

impl DgState {
    pub fn new(q: usize, cfg: &DgConfig) -> Result<Self> {
        let theta = match &cfg.theta0 {
            Some(v) if v.len() != q => {
                return Err(Error::Dimension(format!("theta0 has {} entries, expected {q}", v.len())))
            }
            Some(v) => Vector::from_column_slice(v),
            None => Vector::zeros(q),
        };
        Ok(Self { z_filt: Vector::zeros(q), psi: Mat::zeros(q, q), ext: vec![DgExtension::default(); q], theta })
    }

    pub fn q(&self) -> usize {
        self.theta.len()
    }

    pub fn mixed(&self) -> Result<DgMixed> {
        Ok(DgMixed { y: adjugate(&self.psi)? * &self.z_filt, delta: det(&self.psi)? })
    }

    fn pack(&self) -> Vec<f64> {
        let q = self.q();
        let mut v = Vec::with_capacity(q + q * q + EXT_LEN * q + q);
        v.extend_from_slice(self.z_filt.as_slice());
        v.extend_from_slice(self.psi.as_slice());
        let mut buf = [0.0; EXT_LEN];
        for e in &self.ext {
            e.pack(&mut buf);
            v.extend_from_slice(&buf);
        }
        v.extend_from_slice(self.theta.as_slice());
        v
    }

    fn unpack(q: usize, v: &[f64]) -> Self {
        let e0 = q + q * q;
        Self {
            z_filt: Vector::from_column_slice(&v[..q]),
            psi: Mat::from_column_slice(q, q, &v[q..e0]),
            ext: (0..q).map(|i| DgExtension::unpack(&v[e0 + EXT_LEN * i..e0 + EXT_LEN * (i + 1)])).collect(),
            theta: Vector::from_column_slice(&v[e0 + EXT_LEN * q..]),
        }
    }
}

fn mixing_rhs(cfg: &DgConfig, q: usize, x: &[f64], s: &LreSample, dx: &mut [f64]) {
    for i in 0..q {
        dx[i] = -cfg.lambda * x[i] + cfg.g * s.phi[i] * s.y;
    }
    for c in 0..q {
        for r in 0..q {
            let idx = q + c * q + r;
            dx[idx] = -cfg.lambda * x[idx] + cfg.g * s.phi[r] * s.phi[c];
        }
    }
}

fn check(q: usize, s: &LreSample) -> Result<()> {
    if s.phi.len() == q {
        Ok(())
    } else {
        Err(Error::Dimension(format!("regressor has {} entries, estimator expects {q}", s.phi.len())))
    }
}

/// Advances the mixing filters `Z`, `Ψ` only.
pub fn dg_mixing_step(state: &DgState, input: &StepInput<LreSample>, t: f64, h: f64, cfg: &DgConfig) -> Result<DgState> {
    let q = state.q();
    check(q, &input.start)?;
    let mut x0 = state.z_filt.as_slice().to_vec();
    x0.extend_from_slice(state.psi.as_slice());
    let x = rk4_step_nodes(|node, _, x, dx| mixing_rhs(cfg, q, x, input.at(node), dx), t, &x0, h)?;
    let mut out = state.clone();
    out.z_filt.copy_from_slice(&x[..q]);
    out.psi.copy_from_slice(&x[q..]);
    Ok(out)
}

/// Advances one extension chain driven by `𝒴_i` and `Δ̄`.
pub fn dg_extension_step(
    ext: &DgExtension,
    mixed_y: &StepInput<f64>,
    delta_bar: &StepInput<f64>,
    t: f64,
    h: f64,
    cfg: &DgConfig,
) -> Result<DgExtension> {
    let mut x0 = [0.0; EXT_LEN];
    ext.pack(&mut x0);
    let x = rk4_step_nodes(|n, _, x, dx| extension_rhs(cfg, x, *mixed_y.at(n), *delta_bar.at(n), dx), t, &x0, h)?;
    Ok(DgExtension::unpack(&x))
}

/// Gradient step on the scalar LREs `Ȳ_i = Φ̄₂ θ_i`; inputs are `(Ȳ_i, Φ̄₂)` pairs.
pub fn dg_gradient_step(theta: &Vector, new_lre: &StepInput<Vec<(f64, f64)>>, t: f64, h: f64, cfg: &DgConfig) -> Result<Vector> {
    if new_lre.start.len() != theta.len() {
        return Err(Error::Dimension("one new LRE per parameter required".into()));
    }
    let x = rk4_step_nodes(
        |n, _, x, dx| {
            for (i, &(yb, reg)) in new_lre.at(n).iter().enumerate() {
                dx[i] = cfg.kappa * reg * (yb - reg * x[i]);
            }
        },
        t,
        theta.as_slice(),
        h,
    )?;
    Ok(Vector::from_vec(x))
}

fn joint_rhs(cfg: &DgConfig, q: usize, x: &[f64], s: &LreSample, dx: &mut [f64]) -> Result<()> {
    mixing_rhs(cfg, q, x, s, dx);
    let z = Vector::from_column_slice(&x[..q]);
    let psi = Mat::from_column_slice(q, q, &x[q..q + q * q]);
    let mixed = adjugate(&psi)? * z;
    let delta_bar = det(&psi)?;
    let e0 = q + q * q;
    let t0 = e0 + EXT_LEN * q;
    for i in 0..q {
        let r = e0 + EXT_LEN * i..e0 + EXT_LEN * (i + 1);
        extension_rhs(cfg, &x[r.clone()], mixed[i], delta_bar, &mut dx[r.clone()]);
        let e = DgExtension::unpack(&x[r]);
        let reg = e.new_regressor();
        dx[t0 + i] = cfg.kappa * reg * (e.new_output() - reg * x[t0 + i]);
    }
    Ok(())
}

/// One RK4 step of the whole cascade with every block seeing the same stage values.
pub fn dg_step(state: &DgState, input: &StepInput<LreSample>, t: f64, h: f64, cfg: &DgConfig) -> Result<DgState> {
    let q = state.q();
    check(q, &input.start)?;
    let mut inner = Ok(());
    let next = rk4_step_nodes(
        |node, _, x, dx| {
            if let Err(e) = joint_rhs(cfg, q, x, input.at(node), dx) {
                inner = Err(e);
                dx.fill(f64::NAN);
            }
        },
        t,
        &state.pack(),
        h,
    );
    inner?;
    Ok(DgState::unpack(q, &next?))
}

pub struct DgPoint<'a> {
    pub k: usize,
    pub t: f64,
    pub state: &'a DgState,
    pub sample: &'a LreSample,
}

/// Runs the baseline over `grid`, observing grid points `0..=n_steps`.
pub fn run_dg_with<F>(source: &mut dyn LreSource, cfg: &DgConfig, grid: &TimeGrid, mut observe: F) -> Result<DgState>
where
    F: FnMut(&DgPoint<'_>),
{
    cfg.validate()?;
    let q = source.dim();
    let mut state = DgState::new(q, cfg)?;
    if grid.n_steps == 0 {
        return Ok(state);
    }
    let mut step = source.advance(grid.time(0), grid.h)?;
    for k in 0..grid.n_steps {
        let t = grid.time(k);
        observe(&DgPoint { k, t, state: &state, sample: &step.start });
        state = dg_step(&state, &step, t, grid.h, cfg)?;
        if k + 1 < grid.n_steps {
            step = source.advance(grid.time(k + 1), grid.h)?;
        }
    }
    let n = grid.n_steps;
    observe(&DgPoint { k: n, t: grid.time(n), state: &state, sample: &step.end });
    Ok(state)
}
