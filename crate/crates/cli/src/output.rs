use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hinfq::amod::DemandTrace;
use hinfq::qlearn::LearningTrace;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Layout of a file listed in a run manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    /// `row,col,value`
    Matrix,
    /// `matrix,row,col,value` with matrix in {kv, kd}
    Gains,
    /// The learning trace.
    Trace,
    /// `window,start_step,queue,carrying,rebalancing`
    Metrics,
    /// `q_bar,rls_seconds,batch_seconds`
    Bench,
    /// `series,slope,intercept,ci_low,ci_high`
    Fit,
    /// `link,origin,dest,r_bar`
    Rebalancing,
    /// `iteration,origin,dest,count`
    Demand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory.
    pub path: String,
    pub kind: FileKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub command: String,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    /// `|S - S*|_F / |S*|_F` when an oracle was solved.
    pub s_rel_error: Option<f64>,
    pub gamma: Option<f64>,
    pub wall_seconds: f64,
    pub details: serde_json::Map<String, serde_json::Value>,
    pub manifest: Vec<ManifestEntry>,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        RunReport {
            schema: crate::config::SCHEMA_VERSION,
            command: command.to_owned(),
            converged: None,
            iterations: None,
            s_rel_error: None,
            gamma: None,
            wall_seconds: 0.0,
            details: serde_json::Map::new(),
            manifest: Vec::new(),
        }
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.details.insert(key.to_owned(), v);
    }

    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

/// Collects output files and their manifest entries.
#[derive(Debug)]
pub struct OutputDir {
    pub root: PathBuf,
    pub manifest: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            manifest: Vec::new(),
        })
    }

    fn open(&mut self, name: &str, kind: FileKind) -> CliResult<csv::Writer<BufWriter<File>>> {
        let file = File::create(self.root.join(name))?;
        self.manifest.push(ManifestEntry { path: name.to_owned(), kind });
        Ok(csv::Writer::from_writer(BufWriter::new(file)))
    }

    pub fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> CliResult<()> {
        let mut w = self.open(name, FileKind::Matrix)?;
        w.write_record(["row", "col", "value"])?;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_record([i.to_string(), j.to_string(), m[(i, j)].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn gains(&mut self, name: &str, kv: &DMatrix<f64>, kd: &DMatrix<f64>) -> CliResult<()> {
        let mut w = self.open(name, FileKind::Gains)?;
        w.write_record(["matrix", "row", "col", "value"])?;
        for (label, m) in [("kv", kv), ("kd", kd)] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_record([label.to_owned(), i.to_string(), j.to_string(), m[(i, j)].to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn trace(&mut self, name: &str, trace: &LearningTrace) -> CliResult<()> {
        let file = File::create(self.root.join(name))?;
        self.manifest.push(ManifestEntry { path: name.to_owned(), kind: FileKind::Trace });
        trace.write_csv(BufWriter::new(file))?;
        Ok(())
    }

    pub fn demand(&mut self, name: &str, trace: &DemandTrace) -> CliResult<()> {
        let file = File::create(self.root.join(name))?;
        self.manifest.push(ManifestEntry { path: name.to_owned(), kind: FileKind::Demand });
        trace.write_csv(BufWriter::new(file))?;
        Ok(())
    }

    /// Writes a table with a fixed header and one record per row.
    pub fn table(&mut self, name: &str, kind: FileKind, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = self.open(name, kind)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const METRICS_HEADER: [&str; 5] = ["window", "start_step", "queue", "carrying", "rebalancing"];
pub const BENCH_HEADER: [&str; 3] = ["q_bar", "rls_seconds", "batch_seconds"];
pub const FIT_HEADER: [&str; 5] = ["series", "slope", "intercept", "ci_low", "ci_high"];
pub const REBALANCING_HEADER: [&str; 4] = ["link", "origin", "dest", "r_bar"];

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn check_header(rd: &mut csv::Reader<File>, expected: &[&str], path: &Path) -> CliResult<()> {
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != expected {
        return Err(CliError::Io(format!("{}: header {header:?}, expected {expected:?}", path.display())));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, path: &Path) -> CliResult<T> {
    s.parse().map_err(|_| CliError::Io(format!("{}: cannot parse {s:?}", path.display())))
}

/// Reads a long-format matrix. The shape is taken from the largest indices.
pub fn read_matrix_csv(path: &Path) -> CliResult<DMatrix<f64>> {
    let mut rd = reader(path)?;
    check_header(&mut rd, &["row", "col", "value"], path)?;
    let mut entries = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let i: usize = parse(&rec[0], path)?;
        let j: usize = parse(&rec[1], path)?;
        let v: f64 = parse(&rec[2], path)?;
        entries.push((i, j, v));
    }
    Ok(assemble(&entries))
}

fn assemble(entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let nrows = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let ncols = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
    let mut m = DMatrix::zeros(nrows, ncols);
    for &(i, j, v) in entries {
        m[(i, j)] = v;
    }
    m
}

/// Reads `(kv, kd)` from a gains file.
pub fn read_gains_csv(path: &Path) -> CliResult<(DMatrix<f64>, DMatrix<f64>)> {
    let mut rd = reader(path)?;
    check_header(&mut rd, &["matrix", "row", "col", "value"], path)?;
    let (mut kv, mut kd) = (Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec?;
        let entry = (parse(&rec[1], path)?, parse(&rec[2], path)?, parse(&rec[3], path)?);
        match &rec[0] {
            "kv" => kv.push(entry),
            "kd" => kd.push(entry),
            other => return Err(CliError::Io(format!("{}: unknown gain {other:?}", path.display()))),
        }
    }
    Ok((assemble(&kv), assemble(&kd)))
}

fn read_table(path: &Path, header: &[&str], numeric_from: usize) -> CliResult<usize> {
    let mut rd = reader(path)?;
    check_header(&mut rd, header, path)?;
    let mut n = 0;
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(CliError::Io(format!("{}: row {n} has {} fields", path.display(), rec.len())));
        }
        for field in rec.iter().skip(numeric_from) {
            parse::<f64>(field, path)?;
        }
        n += 1;
    }
    Ok(n)
}

/// Parses every file of a report's manifest under its declared layout.
pub fn verify_manifest(dir: &Path, report: &RunReport) -> CliResult<()> {
    for entry in &report.manifest {
        let path = dir.join(&entry.path);
        match entry.kind {
            FileKind::Matrix => {
                read_matrix_csv(&path)?;
            }
            FileKind::Gains => {
                read_gains_csv(&path)?;
            }
            FileKind::Trace => {
                let trace = LearningTrace::read_csv(File::open(&path)?)?;
                if !trace.is_monotone() {
                    return Err(CliError::Io(format!("{}: iterations not increasing", path.display())));
                }
            }
            FileKind::Metrics => {
                read_table(&path, &METRICS_HEADER, 0)?;
            }
            FileKind::Bench => {
                read_table(&path, &BENCH_HEADER, 0)?;
            }
            FileKind::Fit => {
                read_table(&path, &FIT_HEADER, 1)?;
            }
            FileKind::Rebalancing => {
                read_table(&path, &REBALANCING_HEADER, 0)?;
            }
            FileKind::Demand => {
                let n = report
                    .details
                    .get("stations")
                    .and_then(|v| v.as_u64())
                    .ok_or_else(|| CliError::Io("demand file without a station count in the report".into()))?;
                DemandTrace::read_csv(File::open(&path)?, n as usize)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -0.1, 1e-300, 0.0, 3.5, 1.0 / 3.0]);
        out.matrix("m.csv", &m).unwrap();
        assert_eq!(read_matrix_csv(&dir.path().join("m.csv")).unwrap(), m);
        let kd = DMatrix::from_row_slice(1, 3, &[0.25, 0.0, -2.0]);
        out.gains("g.csv", &m, &kd).unwrap();
        let (kv2, kd2) = read_gains_csv(&dir.path().join("g.csv")).unwrap();
        assert_eq!((kv2, kd2), (m, kd));
    }
}
