//! Excitation diagnostics on a trace CSV.

use std::path::Path;

use interlace::excitation::{check_identifiability, check_ie, IeCertificate, RegressorTrace, DEFAULT_IE_THRESHOLD_PER_DIM};
use interlace::numcore::TimeGrid;
use interlace::{Mode, Vector};

use crate::error::{SimError, SimResult};
use crate::output::read_csv;

/// Relative spacing error tolerated when recovering the step from the time column.
const SPACING_TOL: f64 = 1e-9;
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ExcitationSummary {
    pub columns: Vec<String>,
    pub certificate: IeCertificate,
    pub identifiable: bool,
    /// sample indices whose regressors span the parameter space
    pub spanning: Vec<usize>,
}

/// Reads `phi_*` columns (all non-time columns when none exist) and runs both checks.
/// `threshold` defaults to `1e-6 · q`.
pub fn check_excitation_csv(path: &Path, mode: Mode, threshold: Option<f64>, rank_tol: f64) -> SimResult<ExcitationSummary> {
    let table = read_csv(path)?;
    let time_col = table.header.iter().position(|h| h == "time");
    let mut cols: Vec<usize> = table.header.iter().enumerate().filter(|(_, h)| h.starts_with("phi_")).map(|(i, _)| i).collect();
    if cols.is_empty() {
        cols = (0..table.header.len()).filter(|&i| Some(i) != time_col).collect();
    }
    if cols.is_empty() || table.rows.is_empty() {
        return Err(SimError::Csv { path: path.into(), message: "no regressor columns or no rows".into() });
    }
    let grid = match (mode, time_col) {
        (Mode::Discrete, _) => TimeGrid::discrete(table.rows.len() - 1),
        (Mode::Continuous, None) => return Err(SimError::Csv { path: path.into(), message: "continuous traces need a time column".into() }),
        (Mode::Continuous, Some(tc)) => {
            let t: Vec<f64> = table.rows.iter().map(|r| r[tc]).collect();
            if t.len() < 2 {
                return Err(SimError::Csv { path: path.into(), message: "need at least two samples".into() });
            }
            let h = t[1] - t[0];
            let uniform = t.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= SPACING_TOL * h.abs().max(1.0));
            if !(h > 0.0) || !uniform {
                return Err(SimError::Csv { path: path.into(), message: "time column is not uniformly increasing".into() });
            }
            TimeGrid::new(t[0], h, t.len() - 1)?
        }
    };
    let samples = table.rows.iter().map(|r| Vector::from_iterator(cols.len(), cols.iter().map(|&c| r[c]))).collect();
    let trace = RegressorTrace::new(grid, mode, samples)?;
    let threshold = threshold.unwrap_or(DEFAULT_IE_THRESHOLD_PER_DIM * cols.len() as f64);
    let certificate = check_ie(&trace, threshold)?;
    let (identifiable, spanning) = check_identifiability(&trace, rank_tol)?;
    Ok(ExcitationSummary { columns: cols.iter().map(|&c| table.header[c].clone()).collect(), certificate, identifiable, spanning })
}
