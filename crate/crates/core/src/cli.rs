//! `run` and `sweep` drivers plus result emission.
//!
//! Every artifact is rendered in memory before anything touches the output
//! directory, so a failed run never leaves partial CSVs behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::config::{self, ConfigFile, LoadedConfig, SweepSpec};
use crate::error::{FdError, Result};
use crate::exec::{self, Execution};
use crate::knowledge::{write_knowledge_header, write_knowledge_rows};
use crate::sim::{run_experiment, ExperimentConfig, ExperimentOutcome, Role, RunOptions};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const PER_CLIENT_CSV: &str = "per_client.csv";
pub const PCA_CSV: &str = "pca.csv";
pub const KNOWLEDGE_CSV: &str = "knowledge.csv";
pub const MANIFEST: &str = "manifest.toml";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, Copy, Default)]
pub struct CliOptions {
    pub seed: Option<u64>,
    pub dump_knowledge: bool,
    pub quiet: bool,
    pub execution: Execution,
}

/// A file to be written, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub artifacts: Vec<String>,
    pub config: ConfigFile,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let internal = |e: csv::Error| FdError::Internal(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(internal)?;
    for row in rows {
        w.write_record(&row).map_err(internal)?;
    }
    w.into_inner()
        .map_err(|e| FdError::Internal(format!("csv encoding failed: {e}")))
}

pub fn summary_csv(outcome: &ExperimentOutcome) -> Result<Vec<u8>> {
    csv_bytes(
        &["round", "tol_avg_acc", "vctm_avg_acc", "misdirection_count"],
        outcome.reports.iter().map(|r| {
            vec![
                r.round.to_string(),
                r.tol_avg_acc.to_string(),
                r.vctm_avg_acc.to_string(),
                r.misdirection_count.to_string(),
            ]
        }),
    )
}

pub fn per_client_csv(outcome: &ExperimentOutcome) -> Result<Vec<u8>> {
    csv_bytes(
        &["round", "client_id", "role", "accuracy"],
        outcome.reports.iter().flat_map(|r| {
            r.per_client_acc.iter().enumerate().map(move |(id, acc)| {
                let role = if r.malicious[id] { Role::Malicious } else { Role::Honest };
                vec![
                    r.round.to_string(),
                    id.to_string(),
                    role.name().to_string(),
                    acc.to_string(),
                ]
            })
        }),
    )
}

pub fn pca_csv(outcome: &ExperimentOutcome) -> Result<Vec<u8>> {
    csv_bytes(
        &["client_id", "role", "x", "y"],
        outcome.pca.iter().map(|p| {
            vec![
                p.client_id.to_string(),
                p.role.name().to_string(),
                p.x.to_string(),
                p.y.to_string(),
            ]
        }),
    )
}

pub fn knowledge_csv(outcome: &ExperimentOutcome) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encode = |e: std::io::Error| FdError::Internal(format!("knowledge dump failed: {e}"));
    write_knowledge_header(&mut out, outcome.n_classes).map_err(encode)?;
    for (round, records) in &outcome.uploads {
        write_knowledge_rows(&mut out, *round, records).map_err(encode)?;
    }
    Ok(out)
}

/// Metric CSVs (and the knowledge dump when requested) for one run.
pub fn render_run(outcome: &ExperimentOutcome, dump_knowledge: bool) -> Result<Vec<Artifact>> {
    let mut files = vec![
        Artifact { path: SUMMARY_CSV.into(), bytes: summary_csv(outcome)? },
        Artifact { path: PER_CLIENT_CSV.into(), bytes: per_client_csv(outcome)? },
        Artifact { path: PCA_CSV.into(), bytes: pca_csv(outcome)? },
    ];
    if dump_knowledge {
        files.push(Artifact { path: KNOWLEDGE_CSV.into(), bytes: knowledge_csv(outcome)? });
    }
    Ok(files)
}

fn manifest_artifact(
    cfg: &ExperimentConfig,
    sweep: Option<&SweepSpec>,
    artifacts: &[Artifact],
    started: String,
) -> Result<Artifact> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: now(),
        artifacts: artifacts
            .iter()
            .map(|a| a.path.to_string_lossy().replace('\\', "/"))
            .collect(),
        config: config::to_file(cfg, sweep),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| FdError::Internal(format!("manifest serialisation failed: {e}")))?;
    Ok(Artifact { path: MANIFEST.into(), bytes: text.into_bytes() })
}

/// Writes all artifacts or none: files go to temporary names first and are
/// renamed only once every write succeeded.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FdError::io(dir, e))?;
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let mut stage = || -> Result<()> {
        for a in artifacts {
            let dest = dir.join(&a.path);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| FdError::io(parent, e))?;
            }
            let mut tmp = dest.clone().into_os_string();
            tmp.push(".partial");
            let tmp = PathBuf::from(tmp);
            fs::write(&tmp, &a.bytes).map_err(|e| FdError::io(&tmp, e))?;
            staged.push((tmp, dest));
        }
        Ok(())
    };
    if let Err(e) = stage() {
        for (tmp, _) in &staged {
            let _ = fs::remove_file(tmp);
        }
        return Err(e);
    }
    for (i, (tmp, dest)) in staged.iter().enumerate() {
        if let Err(e) = fs::rename(tmp, dest) {
            for (tmp, dest) in &staged[..i] {
                let _ = fs::remove_file(dest);
                let _ = fs::remove_file(tmp);
            }
            for (tmp, _) in &staged[i..] {
                let _ = fs::remove_file(tmp);
            }
            return Err(FdError::io(dest, e));
        }
    }
    Ok(())
}

fn report_warnings(loaded: &LoadedConfig, opts: &CliOptions) {
    if !opts.quiet {
        for w in &loaded.warnings {
            eprintln!("warning: {w}");
        }
    }
}

pub fn run(config_path: &Path, out: &Path, opts: &CliOptions) -> Result<()> {
    let loaded = config::parse_config(config_path)?;
    report_warnings(&loaded, opts);
    let mut cfg = loaded.experiment;
    if let Some(seed) = opts.seed {
        cfg.run.seed = seed;
    }
    let started = now();
    let outcome = run_experiment(
        &cfg,
        RunOptions { execution: opts.execution, record_knowledge: opts.dump_knowledge },
    )?;
    let mut artifacts = render_run(&outcome, opts.dump_knowledge)?;
    let manifest = manifest_artifact(&cfg, None, &artifacts, started)?;
    artifacts.push(manifest);
    write_artifacts(out, &artifacts)?;
    if !opts.quiet {
        let last = outcome.final_report();
        println!(
            "{} rounds: tol_avg_acc {:.4}, vctm_avg_acc {:.4}, misdirection {} -> {}",
            outcome.reports.len(),
            last.tol_avg_acc,
            last.vctm_avg_acc,
            last.misdirection_count,
            out.display()
        );
    }
    Ok(())
}

/// Seed-averaged final metrics of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub method: AttackKind,
    pub value: String,
    pub tol_avg_acc: f64,
    pub vctm_avg_acc: f64,
    pub misdirection_count: f64,
}

pub fn grid_dir(method: AttackKind, spec: &SweepSpec, value: &str) -> PathBuf {
    PathBuf::from(format!("{}-{}-{}", method.name(), spec.axis.name(), value))
}

pub fn sweep_csv(spec: &SweepSpec, results: &[GridResult]) -> Result<Vec<u8>> {
    csv_bytes(
        &["method", "axis", "value", "tol_avg_acc", "vctm_avg_acc", "misdirection_count"],
        results.iter().map(|r| {
            vec![
                r.method.name().to_string(),
                spec.axis.name().to_string(),
                r.value.clone(),
                r.tol_avg_acc.to_string(),
                r.vctm_avg_acc.to_string(),
                r.misdirection_count.to_string(),
            ]
        }),
    )
}

pub fn sweep(config_path: &Path, out: &Path, opts: &CliOptions) -> Result<()> {
    let loaded = config::parse_config(config_path)?;
    report_warnings(&loaded, opts);
    let mut spec = loaded
        .sweep
        .clone()
        .ok_or_else(|| FdError::usage("config has no [sweep] section"))?;
    let mut base = loaded.experiment;
    if let Some(seed) = opts.seed {
        base.run.seed = seed;
        spec.seeds = vec![seed];
    }
    let started = now();

    let jobs: Vec<(usize, usize, u64)> = (0..spec.methods.len())
        .flat_map(|m| (0..spec.values.len()).map(move |v| (m, v)))
        .flat_map(|(m, v)| spec.seeds.iter().map(move |&s| (m, v, s)))
        .collect();
    let runs = exec::map(opts.execution, &jobs, |&(m, v, seed)| {
        let mut cfg = spec.values[v].apply(spec.axis, &base);
        cfg.attack.kind = spec.methods[m];
        cfg.run.seed = seed;
        // Grid points already run side by side; each run stays sequential.
        let outcome = run_experiment(
            &cfg,
            RunOptions { execution: Execution::Sequential, record_knowledge: opts.dump_knowledge },
        )?;
        Ok((cfg, outcome))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let mut artifacts = Vec::new();
    let mut results = Vec::new();
    for (g, chunk) in runs.chunks(spec.seeds.len()).enumerate() {
        let method = spec.methods[g / spec.values.len()];
        let value = spec.values[g % spec.values.len()].to_string();
        let dir = grid_dir(method, &spec, &value);
        let (mut tol, mut vctm, mut mis) = (0.0, 0.0, 0.0);
        for ((cfg, outcome), seed) in chunk.iter().zip(&spec.seeds) {
            let sub = if spec.seeds.len() == 1 {
                dir.clone()
            } else {
                dir.join(format!("seed-{seed}"))
            };
            let mut files = render_run(outcome, opts.dump_knowledge)?;
            files.push(manifest_artifact(cfg, None, &files, started.clone())?);
            artifacts.extend(files.into_iter().map(|mut a| {
                a.path = sub.join(a.path);
                a
            }));
            let last = outcome.final_report();
            tol += last.tol_avg_acc;
            vctm += last.vctm_avg_acc;
            mis += last.misdirection_count as f64;
        }
        let n = chunk.len() as f64;
        results.push(GridResult {
            method,
            value,
            tol_avg_acc: tol / n,
            vctm_avg_acc: vctm / n,
            misdirection_count: mis / n,
        });
    }
    artifacts.push(Artifact { path: SWEEP_CSV.into(), bytes: sweep_csv(&spec, &results)? });
    let manifest = manifest_artifact(&base, Some(&spec), &artifacts, started)?;
    artifacts.push(manifest);
    write_artifacts(out, &artifacts)?;

    if !opts.quiet {
        for r in &results {
            println!(
                "{:>7} {}={:<6} tol_avg_acc {:.4} vctm_avg_acc {:.4}",
                r.method.name(),
                spec.axis.name(),
                r.value,
                r.tol_avg_acc,
                r.vctm_avg_acc
            );
        }
        println!("{} grid points -> {}", results.len(), out.display());
    }
    Ok(())
}

/// Process exit code for an outcome: 0 success, 1 validation, 2 runtime.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_validation() => 1,
        Err(_) => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_or_nothing_write() {
        let dir = tempfile::tempdir().unwrap();
        let ok = [
            Artifact { path: "a.csv".into(), bytes: b"x\n".to_vec() },
            Artifact { path: "sub/b.csv".into(), bytes: b"y\n".to_vec() },
        ];
        write_artifacts(dir.path(), &ok).unwrap();
        assert_eq!(fs::read(dir.path().join("sub/b.csv")).unwrap(), b"y\n");

        // A directory squatting on a target name makes the rename fail.
        let out = dir.path().join("out");
        fs::create_dir_all(out.join("z.csv")).unwrap();
        let bad = [
            Artifact { path: "y.csv".into(), bytes: b"1\n".to_vec() },
            Artifact { path: "z.csv".into(), bytes: b"2\n".to_vec() },
        ];
        assert!(write_artifacts(&out, &bad).is_err());
        let left: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(left, vec!["z.csv".to_string()]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Ok(())), 0);
        assert_eq!(exit_code(&Err(FdError::config("x"))), 1);
        assert_eq!(exit_code(&Err(FdError::Internal("x".into()))), 2);
    }
}
