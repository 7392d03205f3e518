//! Side-by-side metrics for families of runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{SimError, SimResult};
use crate::output::{run_scenario, RunOutput};
use crate::report::RunReport;
use crate::scenario::parse_scenario;

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyRow {
    pub name: String,
    pub sweep_value: Option<f64>,
    pub convergence_time: Option<f64>,
    pub final_error: Option<f64>,
    pub relative_error: Option<f64>,
    pub oscillation: Option<f64>,
    pub diverged: bool,
}

/// Runs of one family ordered by the swept value.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilySummary {
    pub family: String,
    pub rows: Vec<FamilyRow>,
    /// every run converged and convergence time strictly decreases along the sweep
    pub convergence_decreasing: bool,
}

fn family_key(r: &RunReport) -> String {
    r.family.clone().unwrap_or_else(|| r.name.clone())
}

fn sort_key(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NEG_INFINITY)
}

/// Groups reports by family, families in name order.
pub fn summarize(reports: &[RunReport]) -> Vec<FamilySummary> {
    let mut fams: Vec<String> = reports.iter().map(family_key).collect();
    fams.sort();
    fams.dedup();
    fams.into_iter()
        .map(|family| {
            let mut rows: Vec<FamilyRow> = reports
                .iter()
                .filter(|r| family_key(r) == family)
                .map(|r| FamilyRow {
                    name: r.name.clone(),
                    sweep_value: r.sweep_value,
                    convergence_time: r.convergence_time,
                    final_error: r.final_error,
                    relative_error: r.relative_error(),
                    oscillation: r.oscillation,
                    diverged: r.diverged,
                })
                .collect();
            rows.sort_by(|a, b| sort_key(a.sweep_value).total_cmp(&sort_key(b.sweep_value)).then(a.name.cmp(&b.name)));
            let times: Option<Vec<f64>> = rows.iter().map(|r| r.convergence_time).collect();
            let convergence_decreasing = times.map(|t| t.windows(2).all(|w| w[1] < w[0])).unwrap_or(false);
            FamilySummary { family, rows, convergence_decreasing }
        })
        .collect()
}

/// One matched pair of runs and the differences `b − a`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub family: String,
    pub sweep_value: Option<f64>,
    pub a: String,
    pub b: String,
    pub d_convergence_time: Option<f64>,
    pub d_final_error: Option<f64>,
    pub d_oscillation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

/// Pairs two report sets by `(family, sweep value)`; both sets must cover the same pairs.
pub fn compare_runs(a: &[RunReport], b: &[RunReport]) -> SimResult<Comparison> {
    let key = |r: &RunReport| (family_key(r), r.sweep_value.map(f64::to_bits));
    let mut ka: Vec<_> = a.iter().map(key).collect();
    let mut kb: Vec<_> = b.iter().map(key).collect();
    ka.sort();
    kb.sort();
    if ka != kb {
        return Err(SimError::validation("families", "the two report sets cover different families or sweep values"));
    }
    let mut rows = Vec::new();
    for fa in summarize(a) {
        for ra in &fa.rows {
            let rb = b
                .iter()
                .find(|r| family_key(r) == fa.family && r.sweep_value.map(f64::to_bits) == ra.sweep_value.map(f64::to_bits))
                .ok_or_else(|| SimError::validation("families", format!("no match for {}", ra.name)))?;
            rows.push(ComparisonRow {
                family: fa.family.clone(),
                sweep_value: ra.sweep_value,
                a: ra.name.clone(),
                b: rb.name.clone(),
                d_convergence_time: diff(ra.convergence_time, rb.convergence_time),
                d_final_error: diff(ra.final_error, rb.final_error),
                d_oscillation: diff(ra.oscillation, rb.oscillation),
            });
        }
    }
    Ok(Comparison { rows })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

pub fn summary_text(fams: &[FamilySummary]) -> String {
    let mut s = String::new();
    for f in fams {
        let _ = writeln!(s, "family {}  (convergence time decreasing along sweep: {})", f.family, f.convergence_decreasing);
        let _ = writeln!(s, "  {:<28} {:>14} {:>14} {:>14} {:>14} {:>14} {:>8}", "scenario", "sweep", "t_conv", "final_err", "rel_err", "oscillation", "diverged");
        for r in &f.rows {
            let _ = writeln!(
                s,
                "  {:<28} {:>14} {:>14} {:>14} {:>14} {:>14} {:>8}",
                r.name,
                cell(r.sweep_value),
                cell(r.convergence_time),
                cell(r.final_error),
                cell(r.relative_error),
                cell(r.oscillation),
                r.diverged
            );
        }
    }
    s
}

pub fn summary_csv(fams: &[FamilySummary]) -> String {
    let mut s = String::from("family,scenario,sweep_value,convergence_time,final_error,relative_error,oscillation,diverged\n");
    for f in fams {
        for r in &f.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                f.family,
                r.name,
                cell(r.sweep_value),
                cell(r.convergence_time),
                cell(r.final_error),
                cell(r.relative_error),
                cell(r.oscillation),
                r.diverged
            );
        }
    }
    s
}

pub fn comparison_text(c: &Comparison) -> String {
    let mut s = format!("{:<20} {:>14} {:<28} {:<28} {:>14} {:>14} {:>14}\n", "family", "sweep", "a", "b", "d_t_conv", "d_final_err", "d_oscill");
    for r in &c.rows {
        let _ = writeln!(
            s,
            "{:<20} {:>14} {:<28} {:<28} {:>14} {:>14} {:>14}",
            r.family,
            cell(r.sweep_value),
            r.a,
            r.b,
            cell(r.d_convergence_time),
            cell(r.d_final_error),
            cell(r.d_oscillation)
        );
    }
    s
}

/// Scenario files (`*.toml`) directly inside `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> SimResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| SimError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads, overrides and runs a scenario file.
pub fn run_file(path: &Path, out_dir: &Path, h: Option<f64>, t_end: Option<f64>) -> SimResult<RunOutput> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    let s = parse_scenario(&text)?.with_overrides(h, t_end)?;
    run_scenario(&s, out_dir)
}

/// Runs every scenario in `dir` on worker threads; results follow file order.
pub fn run_directory(dir: &Path, out_dir: &Path, h: Option<f64>, t_end: Option<f64>) -> SimResult<Vec<(PathBuf, SimResult<RunOutput>)>> {
    let files = scenario_files(dir)?;
    Ok(files
        .into_par_iter()
        .map(|f| {
            let r = run_file(&f, out_dir, h, t_end);
            (f, r)
        })
        .collect())
}
