//! Scenario files: one TOML document per experiment.

use serde::{Deserialize, Serialize};

use interlace::gd_estimator::GainSchedule;
use interlace::nlpre::MapKind;
use interlace::robust_reject::Disturbance;
use interlace::signals::Signal;
use interlace::Mode;

use crate::error::{SimError, SimResult};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TRACES: [&str; 3] = ["theta", "error_norm", "delta"];
/// Relative error level that counts as converged.
pub const DEFAULT_CONVERGENCE_LEVEL: f64 = 1e-2;
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e6;

fn default_mode() -> Mode {
    Mode::Continuous
}
fn default_step() -> f64 {
    DEFAULT_STEP
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_stride() -> usize {
    1
}
fn default_traces() -> Vec<String> {
    DEFAULT_TRACES.iter().map(|s| s.to_string()).collect()
}
fn default_lambda_poly() -> Vec<f64> {
    vec![1.0]
}
fn default_convergence() -> f64 {
    DEFAULT_CONVERGENCE_LEVEL
}
fn default_divergence() -> f64 {
    DEFAULT_DIVERGENCE_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// runs sharing a family are compared against each other
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// value of the swept knob within the family
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_value: Option<f64>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub grid: GridSpec,
    pub system: SystemSpec,
    pub estimator: EstimatorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Disturbance>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub report: ReportSpec,
}

/// In discrete time `t_end` counts samples and `h` is ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_end: f64,
    #[serde(default = "default_step")]
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rational {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub kp: f64,
    pub num: Vec<f64>,
    pub den: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unmodeled: Option<Rational>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub km: f64,
    pub dm: Vec<f64>,
    pub reference: Signal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// `D y = N u` observed through `1/R`; coefficients in descending powers
    FilteredPlant { num: Vec<f64>, den: Vec<f64>, filter: Vec<f64>, input: Signal },
    /// regressor given in closed form, `y = φᵀθ`
    Direct { regressor: Vec<Signal>, theta: Vec<f64> },
    Mrac {
        plant: PlantSpec,
        model: ModelSpec,
        #[serde(default = "default_lambda_poly")]
        lambda: Vec<f64>,
        /// overrides the model-matching gains
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ideal_theta: Option<Vec<f64>>,
    },
    /// `Y = Δθ + ξ` passed through the rejection filter and extension
    Rejection {
        excitation: Signal,
        theta: f64,
        disturbance: Signal,
        #[serde(default = "default_one")]
        lambda: f64,
        #[serde(default = "default_true")]
        steady_state_init: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotoneBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Gd {
        gamma: f64,
        gamma_g: GainSchedule,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_g0: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta0: Option<Vec<f64>>,
    },
    Dg {
        lambda: f64,
        g: f64,
        k: f64,
        beta: f64,
        kappa: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta0: Option<Vec<f64>>,
    },
    Nlpre {
        gamma: f64,
        gamma_g: GainSchedule,
        map: MapKind,
        /// rows of `P`; defaults to the selector that makes `P∇S = I` for the built-in maps
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p_mat: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_one")]
        rho: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_g0: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta0: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        monotone_box: Option<MonotoneBox>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// file name relative to the output directory; `<name>.csv` when absent
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    /// write every `stride`-th grid point
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_traces")]
    pub traces: Vec<String>,
    #[serde(default = "default_true")]
    pub plot: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { csv: None, stride: 1, traces: default_traces(), plot: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    /// start of the window for the excitation summary `min |Δ|`
    #[serde(default)]
    pub t_c: f64,
    /// converged once `‖θ̃‖ < level · ‖θ‖` for the rest of the run
    #[serde(default = "default_convergence")]
    pub convergence_level: f64,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
}

impl Default for ReportSpec {
    fn default() -> Self {
        Self { t_c: 0.0, convergence_level: DEFAULT_CONVERGENCE_LEVEL, divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> SimResult<Scenario> {
    if text.trim().is_empty() {
        return Err(SimError::Parse { line: 1, message: "empty scenario file".into() });
    }
    let scenario: Scenario = toml::from_str(text).map_err(|e| SimError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

fn positive(field: &str, v: f64) -> SimResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SimError::validation(field, format!("must be positive and finite, got {v}")))
    }
}

fn len_is(field: &str, v: &Option<Vec<f64>>, n: usize) -> SimResult<()> {
    match v {
        Some(v) if v.len() != n => Err(SimError::validation(field, format!("expected {n} entries, got {}", v.len()))),
        _ => Ok(()),
    }
}

fn schedule(field: &str, s: &GainSchedule) -> SimResult<()> {
    s.validate().map_err(|e| SimError::validation(field, e.to_string()))
}

impl Scenario {
    /// Number of regression entries the estimator consumes.
    pub fn regression_dim(&self) -> usize {
        match &self.system {
            SystemSpec::FilteredPlant { den, .. } => 2 * (interlace::numcore::poly::degree(den)),
            SystemSpec::Direct { regressor, .. } => regressor.len(),
            SystemSpec::Mrac { plant, .. } => 2 * interlace::numcore::poly::degree(&plant.den),
            SystemSpec::Rejection { .. } => 3,
        }
    }

    pub fn validate(&self) -> SimResult<()> {
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            return Err(SimError::validation("name", "must be a non-empty file-name-safe string"));
        }
        positive("grid.h", self.grid.h)?;
        if !(self.grid.t_end >= 0.0) || !self.grid.t_end.is_finite() {
            return Err(SimError::validation("grid.t_end", format!("must be non-negative, got {}", self.grid.t_end)));
        }
        if self.mode == Mode::Discrete && self.grid.t_end.fract() != 0.0 {
            return Err(SimError::validation("grid.t_end", "discrete runs need an integer number of samples"));
        }
        if self.output.stride == 0 {
            return Err(SimError::validation("output.stride", "must be at least 1"));
        }
        if !(self.report.t_c >= 0.0) {
            return Err(SimError::validation("report.t_c", "must be non-negative"));
        }
        positive("report.convergence_level", self.report.convergence_level)?;
        positive("report.divergence_threshold", self.report.divergence_threshold)?;
        let q = self.regression_dim();

        match &self.system {
            SystemSpec::FilteredPlant { num, den, filter, input } => {
                if input.sup_abs().is_nan() {
                    return Err(SimError::validation("system.input", "not a valid signal"));
                }
                if den.is_empty() || filter.is_empty() || num.is_empty() {
                    return Err(SimError::validation("system", "num, den and filter must be non-empty"));
                }
            }
            SystemSpec::Direct { regressor, theta } => {
                if regressor.is_empty() {
                    return Err(SimError::validation("system.regressor", "needs at least one entry"));
                }
                if theta.len() != regressor.len() {
                    return Err(SimError::validation("system.theta", format!("expected {} entries, got {}", regressor.len(), theta.len())));
                }
            }
            SystemSpec::Mrac { ideal_theta, .. } => {
                if self.mode != Mode::Continuous {
                    return Err(SimError::validation("mode", "the adaptive loop runs in continuous time"));
                }
                len_is("system.ideal_theta", ideal_theta, q)?;
            }
            SystemSpec::Rejection { lambda, .. } => {
                positive("system.lambda", *lambda)?;
                if self.mode != Mode::Continuous {
                    return Err(SimError::validation("mode", "disturbance rejection runs in continuous time"));
                }
            }
        }

        match &self.estimator {
            EstimatorSpec::Gd { gamma, gamma_g, theta_g0, theta0 } => {
                positive("estimator.gamma", *gamma)?;
                schedule("estimator.gamma_g", gamma_g)?;
                len_is("estimator.theta_g0", theta_g0, q)?;
                len_is("estimator.theta0", theta0, q)?;
                if matches!(self.system, SystemSpec::Rejection { .. }) {
                    return Err(SimError::validation("estimator.kind", "the rejection regression needs the nlpre estimator"));
                }
            }
            EstimatorSpec::Dg { lambda, g, k, beta, kappa, theta0 } => {
                for (f, v) in [("lambda", lambda), ("g", g), ("k", k), ("kappa", kappa)] {
                    positive(&format!("estimator.{f}"), *v)?;
                }
                if !(*beta > 0.5) {
                    return Err(SimError::validation("estimator.beta", format!("must exceed 1/2, got {beta}")));
                }
                len_is("estimator.theta0", theta0, q)?;
                if self.mode != Mode::Continuous || !matches!(self.system, SystemSpec::FilteredPlant { .. } | SystemSpec::Direct { .. }) {
                    return Err(SimError::validation("estimator.kind", "dg runs on continuous-time open-loop regressions only"));
                }
            }
            EstimatorSpec::Nlpre { gamma, gamma_g, map, p_mat, rho, theta_g0, theta0, monotone_box } => {
                positive("estimator.gamma", *gamma)?;
                positive("estimator.rho", *rho)?;
                schedule("estimator.gamma_g", gamma_g)?;
                if map.p() != q {
                    return Err(SimError::validation("estimator.map", format!("map has {} outputs, regression has {q}", map.p())));
                }
                if let Some(rows) = p_mat {
                    if rows.len() != map.q() || rows.iter().any(|r| r.len() != map.p()) {
                        return Err(SimError::validation("estimator.p_mat", format!("must be {}x{}", map.q(), map.p())));
                    }
                }
                len_is("estimator.theta_g0", theta_g0, map.p())?;
                len_is("estimator.theta0", theta0, map.q())?;
                if let Some(b) = monotone_box {
                    if b.lo.len() != map.q() || b.hi.len() != map.q() || b.samples == 0 {
                        return Err(SimError::validation("estimator.monotone_box", "bounds must match the parameter count"));
                    }
                }
                if self.mode != Mode::Continuous {
                    return Err(SimError::validation("mode", "nlpre runs in continuous time"));
                }
            }
        }

        if let Some(d) = &self.disturbance {
            d.validate(q).map_err(|e| SimError::validation("disturbance", e.to_string()))?;
            if !matches!(self.estimator, EstimatorSpec::Gd { .. })
                || !matches!(self.system, SystemSpec::FilteredPlant { .. } | SystemSpec::Direct { .. })
            {
                return Err(SimError::validation("disturbance", "additive disturbances apply to open-loop G+D runs"));
            }
        }
        Ok(())
    }

    /// Resolved scenario, every default filled in, as TOML.
    pub fn echo(&self) -> String {
        let mut resolved = self.clone();
        if resolved.output.csv.is_none() {
            resolved.output.csv = Some(format!("{}.csv", self.name));
        }
        toml::to_string(&resolved).unwrap_or_default()
    }

    pub fn csv_name(&self) -> String {
        self.output.csv.clone().unwrap_or_else(|| format!("{}.csv", self.name))
    }

    /// Applies command-line overrides and re-validates.
    pub fn with_overrides(mut self, h: Option<f64>, t_end: Option<f64>) -> SimResult<Self> {
        if let Some(h) = h {
            self.grid.h = h;
        }
        if let Some(t) = t_end {
            self.grid.t_end = t;
        }
        self.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "scalar"
[grid]
t_end = 1.0
[system]
kind = "direct"
regressor = [{ kind = "constant", value = 1.0 }]
theta = [3.0]
[estimator]
kind = "gd"
gamma = 1.0
gamma_g = { kind = "constant", value = 1.0 }
"#;

    #[test]
    fn defaults_resolve() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.grid.h, DEFAULT_STEP);
        assert_eq!(s.mode, Mode::Continuous);
        assert_eq!(s.output.stride, 1);
        assert_eq!(s.csv_name(), "scalar.csv");
        let echoed = s.echo();
        assert!(echoed.contains("h = 0.001"));
        assert_eq!(parse_scenario(&echoed).unwrap().output.csv.as_deref(), Some("scalar.csv"));
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(parse_scenario(""), Err(SimError::Parse { line: 1, .. })));
    }

    #[test]
    fn parse_error_reports_line() {
        let bad = MINIMAL.replace("gamma = 1.0", "gamma = [");
        match parse_scenario(&bad) {
            Err(SimError::Parse { line, .. }) => assert!(line >= 12, "{line}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_gain_names_the_field() {
        let bad = MINIMAL.replace("gamma = 1.0", "gamma = -1.0");
        match parse_scenario(&bad) {
            Err(SimError::Validation { field, .. }) => assert_eq!(field, "estimator.gamma"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("t_end = 1.0", "t_end = 1.0\nstep = 2");
        assert!(matches!(parse_scenario(&bad), Err(SimError::Parse { .. })));
    }
}
