//! File formats: JSON for instances, configs and reports, CSV for traces
//! and sweeps.
//!
//! All writes go through a temp-then-rename so partial runs never leave a
//! corrupt file behind. Floating-point numbers serialize with the shortest
//! round-trip decimal representation, so save → load is bitwise lossless
//! for finite doubles.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::VerificationReport;
use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, SweepResult};
use crate::kernel::{InstanceMetadata, ProblemInstance};
use crate::solver::SolverTrace;

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    schema_version: u32,
    n: usize,
    d: usize,
    /// Row-major entries of A.
    a: Vec<f64>,
    b: Vec<f64>,
    w: Vec<f64>,
    gamma: f64,
    l: f64,
    r: f64,
    #[serde(default)]
    metadata: InstanceMetadata,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, err: &serde_json::Error) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: err.line(),
        column: err.column(),
        detail: err.to_string(),
    }
}

/// Writes via a temporary sibling file and an atomic rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn read_versioned_json<T: for<'de> Deserialize<'de>>(path: &Path, expected: u32) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let probe: VersionProbe =
        serde_json::from_str(&text).map_err(|e| parse_err(path, &e))?;
    if probe.schema_version != expected {
        return Err(Error::Version {
            found: probe.schema_version,
            expected,
        });
    }
    serde_json::from_str(&text).map_err(|e| parse_err(path, &e))
}

pub fn save_instance(problem: &ProblemInstance, path: &Path) -> Result<()> {
    let file = InstanceFile {
        schema_version: INSTANCE_SCHEMA_VERSION,
        n: problem.n(),
        d: problem.d(),
        a: problem
            .a()
            .row_iter()
            .flat_map(|r| r.iter().copied().collect::<Vec<f64>>())
            .collect(),
        b: problem.b().iter().copied().collect(),
        w: problem.w().iter().copied().collect(),
        gamma: problem.gamma(),
        l: problem.l(),
        r: problem.r(),
        metadata: problem.metadata.clone(),
    };
    let text = serde_json::to_string_pretty(&file).expect("instance serializes");
    write_atomic(path, &text)
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance> {
    let file: InstanceFile = read_versioned_json(path, INSTANCE_SCHEMA_VERSION)?;
    if file.a.len() != file.n * file.d {
        return Err(Error::shape(format!(
            "A carries {} entries, expected {}x{}",
            file.a.len(),
            file.n,
            file.d
        )));
    }
    let a = DMatrix::from_row_slice(file.n, file.d, &file.a);
    let b = DVector::from_vec(file.b);
    let w = DVector::from_vec(file.w);
    let mut problem = ProblemInstance::new(a, b, w, file.gamma, file.l, file.r)?;
    problem.metadata = file.metadata;
    Ok(problem)
}

pub fn save_config(config: &ExperimentConfig, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    write_atomic(path, &text)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| parse_err(path, &e))?;
    config.validate()?;
    Ok(config)
}

pub fn save_report(report: &VerificationReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    write_atomic(path, &text)
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Trace CSV with the fixed column set
/// `iter,grad_norm,loss,loss_exp,loss_ent,loss_reg,res_to_opt,sample_count,time_ms`.
pub fn trace_to_csv(trace: &SolverTrace) -> String {
    let mut out =
        String::from("iter,grad_norm,loss,loss_exp,loss_ent,loss_reg,res_to_opt,sample_count,time_ms\n");
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.grad_norm,
            r.loss,
            r.loss_exp,
            r.loss_ent,
            r.loss_reg,
            fmt_opt(&r.res_to_opt),
            fmt_opt(&r.sample_count),
            r.time_ms
        ));
    }
    out
}

pub fn save_trace(trace: &SolverTrace, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_atomic(&dir.join("trace.csv"), &trace_to_csv(trace))?;
    let json = serde_json::to_string_pretty(trace).expect("trace serializes");
    write_atomic(&dir.join("trace.json"), &json)
}

/// Sweep CSV: one row per γ grid point. Wall time deliberately stays out of
/// this file so identical (config, seed) runs are byte-identical.
pub fn sweep_to_csv(result: &SweepResult) -> String {
    let mut out = String::from("gamma,iterations,converged,loss_exp_at_opt,loss_ent_at_opt,error\n");
    for r in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.gamma,
            r.iterations,
            r.converged,
            r.l_exp_at_opt,
            r.l_ent_at_opt,
            r.error.clone().unwrap_or_default()
        ));
    }
    out
}

pub fn save_sweep(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_atomic(&dir.join("sweep.csv"), &sweep_to_csv(result))?;
    let json = serde_json::to_string_pretty(result).expect("sweep serializes");
    write_atomic(&dir.join("sweep.json"), &json)
}

/// Matrix import: a `n,d` header line followed by n comma-separated rows.
pub fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        column: 1,
        detail: "empty file".into(),
    })?;
    let parse_field = |line: usize, column: usize, s: &str| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line,
            column,
            detail: format!("'{s}': {e}"),
        })
    };
    let dims: Vec<&str> = header.split(',').collect();
    if dims.len() != 2 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            column: 1,
            detail: "header must be 'n,d'".into(),
        });
    }
    let n = parse_field(1, 1, dims[0])? as usize;
    let d = parse_field(1, 2, dims[1])? as usize;
    let mut entries = Vec::with_capacity(n * d);
    let mut rows = 0usize;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                column: 1,
                detail: format!("expected {d} fields, found {}", fields.len()),
            });
        }
        for (col, f) in fields.iter().enumerate() {
            entries.push(parse_field(idx + 1, col + 1, f)?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: rows + 1,
            column: 1,
            detail: format!("expected {n} rows, found {rows}"),
        });
    }
    Ok(DMatrix::from_row_slice(n, d, &entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{generate_instance, BMode};

    fn tmp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("entreg-io-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn instance_roundtrip_is_bitwise() {
        let dir = tmp_dir("roundtrip");
        let path = dir.join("instance.json");
        let mut p =
            generate_instance(7, 3, 1.5, 99, BMode::SoftmaxOfRandomX, 200.0, 1.0, 0.4).unwrap();
        crate::harness::attach_oracle(&mut p).unwrap();
        save_instance(&p, &path).unwrap();
        let q = load_instance(&path).unwrap();
        assert_eq!(p, q);
        for (x, y) in p.a().iter().zip(q.a().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn hand_written_minimal_instance_loads() {
        let dir = tmp_dir("minimal");
        let path = dir.join("tiny.json");
        fs::write(
            &path,
            r#"{"schema_version":1,"n":2,"d":1,"a":[0.5,-0.5],"b":[1.0,0.0],"w":[0.0,0.0],"gamma":0.0,"l":1.0,"r":1.5}"#,
        )
        .unwrap();
        let p = load_instance(&path).unwrap();
        assert_eq!(p.n(), 2);
        assert_eq!(p.d(), 1);
        assert_eq!(p.b()[0], 1.0);
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tmp_dir("truncated");
        let path = dir.join("broken.json");
        fs::write(&path, r#"{"schema_version":1,"n":2,"d":1,"a":[0.5"#).unwrap();
        assert!(matches!(load_instance(&path), Err(Error::Parse { .. })));
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tmp_dir("version");
        let path = dir.join("v9.json");
        fs::write(
            &path,
            r#"{"schema_version":9,"n":2,"d":1,"a":[0.5,-0.5],"b":[1.0,0.0],"w":[0.0,0.0],"gamma":0.0,"l":1.0,"r":1.5}"#,
        )
        .unwrap();
        assert!(matches!(
            load_instance(&path),
            Err(Error::Version { found: 9, expected: 1 })
        ));
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn trace_csv_has_the_documented_columns() {
        use crate::solver::{solve, SolverConfig, SolverMode};
        let p = generate_instance(6, 2, 1.5, 31, BMode::SimplexRandom, 200.0, 1.0, 0.5).unwrap();
        let config = SolverConfig::new(SolverMode::ApproxNewton, p.l());
        let (_, trace) = solve(&p, &nalgebra::DVector::zeros(2), &config).unwrap();
        let csv = trace_to_csv(&trace);
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "iter,grad_norm,loss,loss_exp,loss_ent,loss_reg,res_to_opt,sample_count,time_ms"
        );
        // One line per record, each with exactly nine fields.
        assert_eq!(csv.lines().count(), trace.records.len() + 1);
        for line in csv.lines().skip(1) {
            assert_eq!(line.split(',').count(), 9, "{line}");
        }
    }

    #[test]
    fn matrix_csv_roundtrip_and_errors() {
        let dir = tmp_dir("matrix");
        let path = dir.join("m.csv");
        fs::write(&path, "2,3\n1,2,3\n4,5,6.5\n").unwrap();
        let m = load_matrix_csv(&path).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m[(1, 2)], 6.5);
        fs::write(&path, "2,3\n1,2\n4,5,6\n").unwrap();
        assert!(matches!(load_matrix_csv(&path), Err(Error::Parse { .. })));
        fs::remove_dir_all(dir).ok();
    }
}
