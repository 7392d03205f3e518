use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

/// Summary of one scenario run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub family: Option<String>,
    pub sweep_value: Option<f64>,
    pub true_theta: Option<Vec<f64>>,
    pub final_theta: Vec<f64>,
    pub final_time: f64,
    /// `‖θ̃‖` at the last recorded point
    pub final_error: Option<f64>,
    pub sup_error: Option<f64>,
    /// first time after which `‖θ̃‖` stays below the convergence level for good
    pub convergence_time: Option<f64>,
    /// `min |Δ|` over `t ≥ t_c`
    pub min_abs_delta: Option<f64>,
    /// `max ‖θ̃‖∞` over the final fifth of the horizon
    pub oscillation: Option<f64>,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    /// largest magnitude of any recorded estimate or loop signal
    pub sup_signal: f64,
    pub final_tracking_error: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub n_points: usize,
    pub wall_clock_s: f64,
}

impl RunReport {
    /// `final ‖θ̃‖ / ‖θ‖`, when the parameters are known.
    pub fn relative_error(&self) -> Option<f64> {
        let th = self.true_theta.as_ref()?;
        let scale = th.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.final_error.map(|e| e / scale)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario        {}", self.name)?;
        if let Some(fam) = &self.family {
            writeln!(f, "family          {fam} ({})", opt(self.sweep_value))?;
        }
        writeln!(f, "points          {} (t_end {:.6})", self.n_points, self.final_time)?;
        writeln!(f, "final theta     {:?}", self.final_theta)?;
        writeln!(f, "final |err|     {}", opt(self.final_error))?;
        writeln!(f, "sup |err|       {}", opt(self.sup_error))?;
        writeln!(f, "converged at    {}", opt(self.convergence_time))?;
        writeln!(f, "min |Delta|     {}", opt(self.min_abs_delta))?;
        writeln!(f, "tail oscill.    {}", opt(self.oscillation))?;
        writeln!(f, "sup signal      {:.6e}", self.sup_signal)?;
        writeln!(f, "diverged        {}{}", self.diverged, self.divergence_time.map(|t| format!(" at t = {t}")).unwrap_or_default())?;
        for (k, v) in &self.metrics {
            writeln!(f, "{k:<15} {v:.6e}")?;
        }
        write!(f, "wall clock      {:.3} s", self.wall_clock_s)
    }
}
