//! CSV traces, plot scripts and report files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{SimError, SimResult};
use crate::report::RunReport;
use crate::run::{execute, Table};
use crate::scenario::Scenario;

/// Seventeen significant digits, so a round trip through text is exact.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a table: header row, comma separated, LF line endings.
pub fn table_to_csv(table: &Table) -> SimResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let fail = |e: csv::Error| SimError::Csv { path: PathBuf::from("<memory>"), message: e.to_string() };
    w.write_record(&table.header).map_err(fail)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| format_value(*v))).map_err(fail)?;
    }
    w.into_inner().map_err(|e| SimError::Csv { path: PathBuf::from("<memory>"), message: e.to_string() })
}

/// Reads a trace CSV back: header plus numeric rows.
pub fn read_csv(path: &Path) -> SimResult<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| SimError::Csv { path: path.into(), message: e.to_string() })?;
    let header = r
        .headers()
        .map_err(|e| SimError::Csv { path: path.into(), message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| SimError::Csv { path: path.into(), message: e.to_string() })?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| SimError::Csv { path: path.into(), message: format!("row {}: {e}", i + 2) })?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Gnuplot script plotting every column against time.
pub fn plot_script(csv_name: &str, header: &[String]) -> String {
    let mut s = String::new();
    s.push_str(&format!("# columns of {csv_name}\n"));
    for (i, h) in header.iter().enumerate() {
        s.push_str(&format!("#   {:>3}  {h}\n", i + 1));
    }
    s.push_str("set datafile separator ','\n");
    s.push_str("set key autotitle columnhead\n");
    s.push_str("set xlabel 'time'\n");
    if header.len() > 1 {
        s.push_str(&format!("plot for [i=2:{}] '{csv_name}' using 1:i with lines\n", header.len()));
    }
    s
}

/// Files written by one run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub csv: PathBuf,
    pub report_file: PathBuf,
    pub plot: Option<PathBuf>,
}

fn write(path: &Path, bytes: &[u8]) -> SimResult<()> {
    fs::write(path, bytes).map_err(|e| SimError::io(path, e))
}

/// Runs a scenario and writes `<csv>`, `<name>.report.json`, `<name>.resolved.toml`
/// and, when enabled, `<name>.gp` into `out_dir`.
pub fn run_scenario(s: &Scenario, out_dir: &Path) -> SimResult<RunOutput> {
    fs::create_dir_all(out_dir).map_err(|e| SimError::io(out_dir, e))?;
    let (report, mut table) = execute(s)?;
    if table.header.is_empty() {
        table.header = vec!["time".into()];
        table.header.extend(header_without_data(s));
    }
    let csv_name = s.csv_name();
    let csv = out_dir.join(&csv_name);
    write(&csv, &table_to_csv(&table)?)?;
    let report_file = out_dir.join(format!("{}.report.json", s.name));
    write(&report_file, report.to_json().as_bytes())?;
    write(&out_dir.join(format!("{}.resolved.toml", s.name)), s.echo().as_bytes())?;
    let plot = if s.output.plot {
        let p = out_dir.join(format!("{}.gp", s.name));
        write(&p, plot_script(&csv_name, &table.header).as_bytes())?;
        Some(p)
    } else {
        None
    };
    Ok(RunOutput { report, csv, report_file, plot })
}

/// Column names for a run that produced no rows, from the declared dimensions.
fn header_without_data(s: &Scenario) -> Vec<String> {
    use crate::scenario::EstimatorSpec;
    let p = s.regression_dim();
    let q = match &s.estimator {
        EstimatorSpec::Nlpre { map, .. } => map.q(),
        _ => p,
    };
    let has_theta_g = !matches!(s.estimator, EstimatorSpec::Dg { .. });
    let mut h = Vec::new();
    let indexed = |h: &mut Vec<String>, name: &str, n: usize| h.extend((1..=n).map(|i| format!("{name}_{i}")));
    for g in &s.output.traces {
        match g.as_str() {
            "theta" | "error" => indexed(&mut h, g, q),
            "theta_g" if has_theta_g => indexed(&mut h, g, p),
            "phi" => indexed(&mut h, g, p),
            "new_output" | "new_regressor" => indexed(&mut h, g, q),
            _ => h.push(g.clone()),
        }
    }
    h
}
