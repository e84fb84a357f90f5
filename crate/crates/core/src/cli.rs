//! Command-line front end: check-params, run, certify, sweep.
//!
//! Exit codes: 0 when everything passes, 1 on an admissibility or
//! certificate failure, 2 on a runtime or configuration error.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chemotaxis::{simulate, FieldState, RunMeta, RunOutcome, Trajectory};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::{read_snapshot, write_snapshot, Grid, ScalarField, VectorField};
use crate::monitor::{certify, read_csv, write_csv, CertificateReport, MonitorRecord, Status};
use crate::params::check_pq;
use crate::testfn::VectorTestFunction;

/// Overrides the output root of every subcommand.
pub const OUTPUT_ENV: &str = "KSCERT_OUTPUT_ROOT";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "kscert",
    version,
    about = "Keller-Segel-Stokes runs with a priori estimate certificates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the exponent window and admissibility flags of a config.
    CheckParams {
        config: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Simulate, certify and write all artifacts.
    Run {
        config: PathBuf,
        /// Output root (takes precedence over the environment and the config).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-evaluate the certificates of a stored run directory.
    Certify {
        run_dir: PathBuf,
        /// Use this config's test functions and tolerances instead of the
        /// stored one.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// One run per value of a parameter; writes a summary table.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma separated; h values accept fractions such as 1/64.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Eps,
    H,
    Chi,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_ERROR
            } else {
                EXIT_PASS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::CheckParams { config, json } => {
            let cfg = RunConfig::load(&config)?;
            let (text, ok) = check_params_text(&cfg, json)?;
            print!("{text}");
            Ok(if ok { EXIT_PASS } else { EXIT_FAIL })
        }
        Command::Run { config, output } => {
            let cfg = RunConfig::load(&config)?;
            let root = output_root(output.as_deref(), &cfg);
            let out = run_config(&cfg, &root)?;
            println!("{}", out.summary());
            Ok(out.exit_code())
        }
        Command::Certify { run_dir, config } => {
            let stored = load_run(&run_dir)?;
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::parse(&stored.meta.config)?,
            };
            let report = certify_trajectory(&cfg, &stored.traj);
            let path = run_dir.join(format!("report-{}.json", stored.meta.config_hash));
            std::fs::write(&path, report.to_json()?)?;
            print!("{}", report_table(&report));
            Ok(if report.all_pass() {
                EXIT_PASS
            } else {
                EXIT_FAIL
            })
        }
        Command::Sweep {
            config,
            axis,
            values,
            jobs,
            output,
        } => {
            let cfg = RunConfig::load(&config)?;
            let values = parse_values(axis, &values)?;
            let root = output_root(output.as_deref(), &cfg);
            let summary = sweep(&cfg, axis, &values, jobs, &root)?;
            print!("{}", summary.table);
            Ok(summary.exit_code)
        }
    }
}

/// Priority: explicit flag, then the environment, then the config, then
/// `kscert-out` in the working directory.
pub fn output_root(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.output
        .clone()
        .unwrap_or_else(|| PathBuf::from("kscert-out"))
}

/// Human (or JSON) admissibility report and whether it is fully admissible.
pub fn check_params_text(cfg: &RunConfig, json: bool) -> Result<(String, bool)> {
    let r = check_pq(&cfg.params);
    let ok = r.fully_admissible();
    if json {
        return Ok((serde_json::to_string_pretty(&r)? + "\n", ok));
    }
    let p = &cfg.params;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "chi = {}, p = {}, q = {}, dim = {}",
        p.chi, p.p, p.q, p.dim
    );
    match r.q_window {
        Some(w) => {
            let _ = writeln!(s, "q window: ({:.12}, {:.12})", w.low, w.high);
        }
        None => {
            let _ = writeln!(s, "q window: empty (p >= 1/chi^2)");
        }
    }
    let _ = writeln!(s, "coefficient floor: {:.12e}", r.coefficient_floor);
    let _ = writeln!(s, "exponent infimum: {:.12}", r.exponent_infimum);
    let _ = writeln!(s, "p_ok = {}", r.p_ok);
    let _ = writeln!(s, "q_ok = {}", r.q_ok);
    let _ = writeln!(s, "pq_cond = {}", r.pq_cond);
    let _ = writeln!(s, "chi_ok = {}", r.chi_ok);
    let _ = writeln!(s, "admissible = {ok}");
    Ok((s, ok))
}

pub fn certify_trajectory(cfg: &RunConfig, traj: &Trajectory) -> CertificateReport {
    let phis = cfg.test_functions();
    let psis = cfg.stream_functions();
    let refs: Vec<&dyn VectorTestFunction> =
        psis.iter().map(|p| p as &dyn VectorTestFunction).collect();
    certify(traj, &cfg.params, &phis, &refs, &cfg.certify)
}

/// Metadata written next to every run; `config` is the verbatim config text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: String,
    pub run: RunMeta,
    pub outcome: RunOutcome,
    pub snapshot_steps: Vec<usize>,
    pub snapshot_times: Vec<f64>,
    pub version: String,
}

/// Artifacts of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub hash: String,
    pub outcome: RunOutcome,
    pub report: CertificateReport,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        match (&self.outcome, self.report.all_pass()) {
            (RunOutcome::Aborted { .. }, _) => EXIT_ERROR,
            (_, true) => EXIT_PASS,
            (_, false) => EXIT_FAIL,
        }
    }

    pub fn summary(&self) -> String {
        let failed: Vec<&str> = self
            .report
            .entries
            .iter()
            .filter(|e| e.status == Status::Fail)
            .map(|e| e.name.as_str())
            .collect();
        let mut s = format!("{}\n", self.dir.display());
        if let RunOutcome::Aborted { step, reason } = &self.outcome {
            let _ = writeln!(s, "aborted at step {step}: {reason}");
        }
        s + &report_table(&self.report)
            + &if failed.is_empty() {
                "all certificates pass".to_string()
            } else {
                format!("failed: {}", failed.join(", "))
            }
    }
}

pub fn report_table(r: &CertificateReport) -> String {
    let mut s = String::new();
    for e in &r.entries {
        let status = match e.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::NotApplicable => "n/a",
        };
        let _ = writeln!(
            s,
            "{:<30} {:<5} residual {:>11.4e}  tol {:>10.3e}",
            e.name, status, e.residual, e.tolerance
        );
    }
    s
}

/// Runs one config into `<root>/run-<hash>` and writes all artifacts. An
/// aborted run still writes everything it has plus an `ABORTED-<hash>`
/// marker.
pub fn run_config(cfg: &RunConfig, root: &Path) -> Result<RunOutput> {
    let grid = cfg.grid();
    let hash = cfg.short_hash();
    let dir = root.join(format!("run-{hash}"));
    std::fs::create_dir_all(&dir)?;
    let marker = dir.join(format!("ABORTED-{hash}"));
    if marker.exists() {
        std::fs::remove_file(&marker)?;
    }
    let traj = simulate(
        &cfg.params,
        &grid,
        &cfg.initial,
        &cfg.potential,
        &cfg.scheme,
    )?;
    if let RunOutcome::Aborted { step, reason } = &traj.outcome {
        std::fs::write(&marker, format!("step {step}: {reason}\n"))?;
    }
    save_trajectory(&dir, cfg, &traj)?;
    let report = certify_trajectory(cfg, &traj);
    std::fs::write(dir.join(format!("report-{hash}.json")), report.to_json()?)?;
    write_plots(&dir, &hash, &traj.records, &report)?;
    Ok(RunOutput {
        dir,
        hash,
        outcome: traj.outcome.clone(),
        report,
    })
}

fn snapshot_stem(dir: &Path, hash: &str, step: usize, field: &str) -> PathBuf {
    dir.join("snapshots")
        .join(format!("step{step:06}-{field}-{hash}"))
}

/// Writes the monitor CSV, manifest and every stored snapshot.
pub fn save_trajectory(dir: &Path, cfg: &RunConfig, traj: &Trajectory) -> Result<()> {
    let hash = cfg.short_hash();
    let mut csv = std::io::BufWriter::new(std::fs::File::create(
        dir.join(format!("monitor-{hash}.csv")),
    )?);
    write_csv(&traj.records, &mut csv)?;
    csv.flush()?;
    std::fs::create_dir_all(dir.join("snapshots"))?;
    for (s, &step) in traj.snapshots.iter().zip(&traj.snapshot_steps) {
        let g = s.grid();
        for (name, f) in [("n", &s.n), ("c", &s.c), ("p", &s.p)] {
            write_snapshot(
                &snapshot_stem(dir, &hash, step, name),
                g.n,
                &g,
                s.t,
                name,
                &f.values,
            )?;
        }
        for a in 0..g.ndim {
            let name = format!("u{a}");
            write_snapshot(
                &snapshot_stem(dir, &hash, step, &name),
                g.face_dims(a),
                &g,
                s.t,
                &name,
                &s.u.comps[a],
            )?;
        }
    }
    let manifest = RunManifest {
        config_hash: hash.clone(),
        config: cfg.source.clone(),
        run: traj.meta.clone(),
        outcome: traj.outcome.clone(),
        snapshot_steps: traj.snapshot_steps.clone(),
        snapshot_times: traj.times(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
    };
    std::fs::write(
        dir.join(format!("meta-{hash}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct StoredRun {
    pub meta: RunManifest,
    pub traj: Trajectory,
}

pub fn load_run(dir: &Path) -> Result<StoredRun> {
    let meta_path = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .find(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("meta-") && n.ends_with(".json"))
        })
        .ok_or_else(|| Error::domain(format!("no meta-*.json in {}", dir.display())))?;
    let meta: RunManifest = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
    let hash = &meta.config_hash;
    let records = read_csv(&std::fs::read_to_string(
        dir.join(format!("monitor-{hash}.csv")),
    )?)?;
    let g: Grid = meta.run.grid;
    let read = |step: usize, name: &str, len: usize| -> Result<Vec<f64>> {
        let (_, v) = read_snapshot(&snapshot_stem(dir, hash, step, name))?;
        if v.len() != len {
            return Err(Error::domain(format!(
                "snapshot {name} at step {step} has {} values, expected {len}",
                v.len()
            )));
        }
        Ok(v)
    };
    let mut snapshots = Vec::with_capacity(meta.snapshot_steps.len());
    for (&step, &t) in meta.snapshot_steps.iter().zip(&meta.snapshot_times) {
        let cells = g.num_cells();
        let mut u = VectorField::zeros(g);
        for a in 0..g.ndim {
            u.comps[a] = read(step, &format!("u{a}"), g.num_faces(a))?;
        }
        snapshots.push(FieldState {
            n: ScalarField {
                grid: g,
                values: read(step, "n", cells)?,
            },
            c: ScalarField {
                grid: g,
                values: read(step, "c", cells)?,
            },
            p: ScalarField {
                grid: g,
                values: read(step, "p", cells)?,
            },
            u,
            t,
        });
    }
    let traj = Trajectory {
        snapshots,
        snapshot_steps: meta.snapshot_steps.clone(),
        records,
        meta: meta.run.clone(),
        outcome: meta.outcome.clone(),
        error: None,
    };
    Ok(StoredRun { meta, traj })
}

/// Monitor column plotted for each time-series certificate.
fn plot_column(cert: &str) -> Option<&'static str> {
    Some(match cert {
        "mass_conservation" => "mass_n",
        "c_envelope" => "min_c",
        "positivity" => "min_n",
        "divergence_free" => "max_div_u",
        "weighted_gradient_transfer" => "cum_cq_grad_np2",
        "young_split" | "balance_bound" => "int_npcq",
        "log_n_lower_bound" => "int_ln_n",
        "velocity_bounded" => "norm_u_2",
        "l2_growth" => "norm_n_l2",
        "boundary_positivity" => "min_boundary_npcq",
        other => {
            let col = other.strip_prefix("bounded_")?;
            return MonitorRecord::COLUMNS
                .iter()
                .copied()
                .find(|c| c.strip_prefix("cum_") == Some(col));
        }
    })
}

/// Two-column text files under `plots/`: `t value` per time-series
/// certificate, plus `index residual` for the weak-form residuals.
pub fn write_plots(
    dir: &Path,
    hash: &str,
    records: &[MonitorRecord],
    report: &CertificateReport,
) -> Result<()> {
    let pdir = dir.join("plots");
    std::fs::create_dir_all(&pdir)?;
    let cols = MonitorRecord::COLUMNS;
    let mut residuals = String::from("# index residual\n");
    let mut k = 0;
    for e in &report.entries {
        match plot_column(&e.name) {
            Some(col) => {
                let j = cols.iter().position(|c| *c == col).expect("known column");
                let mut s = format!("# t {col}\n");
                for r in records {
                    let v = r.values();
                    let _ = writeln!(s, "{:e} {:e}", v[0], v[j]);
                }
                std::fs::write(pdir.join(format!("{}-{hash}.dat", e.name)), s)?;
            }
            None if e.status != Status::NotApplicable && e.name != "coefficient_positivity" => {
                let _ = writeln!(residuals, "{k} {:e} # {}", e.residual, e.name);
                k += 1;
            }
            None => {}
        }
    }
    std::fs::write(pdir.join(format!("residuals-{hash}.dat")), residuals)?;
    Ok(())
}

/// Parses sweep values; `h` accepts `a/b` fractions.
pub fn parse_values(axis: Axis, raw: &[String]) -> Result<Vec<f64>> {
    let vals: Vec<f64> = raw
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            let v = match s.split_once('/') {
                Some((a, b)) => a
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .zip(b.trim().parse::<f64>().ok())
                    .map(|(a, b)| a / b),
                None => s.parse::<f64>().ok(),
            };
            v.filter(|v| v.is_finite() && *v > 0.0).ok_or_else(|| {
                Error::config(Some("values"), None, format!("not a positive number: {s}"))
            })
        })
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        return Err(Error::config(
            Some("values"),
            None,
            "sweep needs at least one value",
        ));
    }
    let inc = vals.windows(2).all(|w| w[1] > w[0]);
    let dec = vals.windows(2).all(|w| w[1] < w[0]);
    if !(inc || dec) {
        return Err(Error::config(
            Some("values"),
            None,
            "sweep values must be strictly monotone",
        ));
    }
    if axis == Axis::H && vals.iter().any(|h| *h >= 1.0 && raw.len() > 1) {
        return Err(Error::config(
            Some("values"),
            None,
            "h values are cell widths and must be below 1",
        ));
    }
    Ok(vals)
}

/// Derives the config of one sweep point. The text is re-emitted so the
/// hash and echo identify the point.
pub fn sweep_point(cfg: &RunConfig, axis: Axis, v: f64) -> Result<RunConfig> {
    let mut c = cfg.clone();
    match axis {
        Axis::Eps => c.params.eps = v,
        Axis::Chi => c.params.chi = v,
        Axis::H => {
            let len = c.grid().len;
            let ndim = c.grid().ndim;
            c.grid.n = (0..ndim)
                .map(|a| (len[a] / v).round().max(1.0) as usize)
                .collect();
        }
    }
    let text = format!("# sweep {axis:?} = {v}\n{}", c.to_toml()?);
    RunConfig::parse(&text)
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub table: String,
    pub exit_code: i32,
    pub path: PathBuf,
}

/// One run per value, `jobs` at a time. Failed runs are recorded and the
/// sweep continues.
pub fn sweep(
    cfg: &RunConfig,
    axis: Axis,
    values: &[f64],
    jobs: usize,
    root: &Path,
) -> Result<SweepSummary> {
    if values.is_empty() {
        return Err(Error::config(
            Some("values"),
            None,
            "sweep needs at least one value",
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunOutput>> = pool.install(|| {
        values
            .par_iter()
            .map(|&v| sweep_point(cfg, axis, v).and_then(|c| run_config(&c, root)))
            .collect()
    });

    let names: Vec<String> = results
        .iter()
        .find_map(|r| r.as_ref().ok())
        .map(|o| o.report.entries.iter().map(|e| e.name.clone()).collect())
        .unwrap_or_default();
    let mut table = format!("{:?},status,{}\n", axis, names.join(",")).to_lowercase();
    let mut exit = EXIT_PASS;
    for (v, r) in values.iter().zip(&results) {
        match r {
            Ok(o) => {
                let status = match &o.outcome {
                    RunOutcome::Completed if o.report.all_pass() => "pass",
                    RunOutcome::Completed => "fail",
                    RunOutcome::Aborted { .. } => "aborted",
                };
                if status != "pass" {
                    exit = exit.max(EXIT_FAIL);
                }
                let res: Vec<String> = names
                    .iter()
                    .map(|n| {
                        o.report
                            .get(n)
                            .map_or("".into(), |e| format!("{:e}", e.residual))
                    })
                    .collect();
                let _ = writeln!(table, "{v:e},{status},{}", res.join(","));
            }
            Err(e) => {
                exit = exit.max(EXIT_FAIL);
                let _ = writeln!(
                    table,
                    "{v:e},error: {},{}",
                    e.to_string().replace(',', ";"),
                    vec![""; names.len()].join(",")
                );
            }
        }
    }
    if axis == Axis::H {
        table.push_str(&convergence_orders(values, &results));
    }
    std::fs::create_dir_all(root)?;
    let tag = format!("{axis:?}").to_lowercase();
    let path = root.join(format!("sweep-{tag}-{}.csv", cfg.short_hash()));
    std::fs::write(&path, &table)?;
    Ok(SweepSummary {
        table,
        exit_code: exit,
        path,
    })
}

/// Empirical orders log(r_i / r_{i+1}) / log(h_i / h_{i+1}) of the
/// weak-form residuals between consecutive grid widths.
fn convergence_orders(h: &[f64], results: &[Result<RunOutput>]) -> String {
    let mut s = String::from("# convergence orders\n");
    let Some(first) = results.iter().find_map(|r| r.as_ref().ok()) else {
        return s;
    };
    let names: Vec<&str> = first
        .report
        .entries
        .iter()
        .map(|e| e.name.as_str())
        .filter(|n| n.starts_with("identity_") || n.starts_with("weak_"))
        .collect();
    for i in 1..h.len() {
        let (Ok(a), Ok(b)) = (&results[i - 1], &results[i]) else {
            continue;
        };
        for n in &names {
            if let (Some(x), Some(y)) = (a.report.get(n), b.report.get(n)) {
                let order = (x.residual.abs() / y.residual.abs()).ln() / (h[i - 1] / h[i]).ln();
                let _ = writeln!(s, "# {n} h={:e}->{:e} order {order:.3}", h[i - 1], h[i]);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "[params]\nchi = 2.0\neps = 0.1\np = 0.2\nq = 0.3\n\n[grid]\nn = [8, 8]\n\n[scheme]\nT = 0.05\n";

    #[test]
    fn values_parse_and_validate() {
        let v = parse_values(Axis::H, &["1/32".into(), "1/64".into()]).unwrap();
        assert_eq!(v, vec![1.0 / 32.0, 1.0 / 64.0]);
        assert!(matches!(
            parse_values(Axis::Eps, &[]),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            parse_values(Axis::Eps, &["".into()]),
            Err(Error::Config { .. })
        ));
        assert!(parse_values(Axis::Eps, &["0.1".into(), "0.2".into(), "0.05".into()]).is_err());
        assert!(parse_values(Axis::Chi, &["x".into()]).is_err());
    }

    #[test]
    fn sweep_point_rewrites_axis() {
        let cfg = RunConfig::parse(SMALL).unwrap();
        let c = sweep_point(&cfg, Axis::H, 1.0 / 16.0).unwrap();
        assert_eq!(c.grid().n, [16, 16, 1]);
        let c = sweep_point(&cfg, Axis::Eps, 0.05).unwrap();
        assert_eq!(c.params.eps, 0.05);
        assert_ne!(c.hash(), cfg.hash());
    }

    #[test]
    fn plot_columns_exist() {
        for name in ["bounded_grad_cq2", "bounded_n_rho", "mass_conservation"] {
            let col = plot_column(name).unwrap();
            assert!(MonitorRecord::COLUMNS.contains(&col));
        }
        assert!(plot_column("identity_one").is_none());
    }

    #[test]
    fn run_store_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::parse(SMALL).unwrap();
        let out = run_config(&cfg, dir.path()).unwrap();
        assert_eq!(out.outcome, RunOutcome::Completed);
        let h = cfg.short_hash();
        for f in [
            format!("monitor-{h}.csv"),
            format!("meta-{h}.json"),
            format!("report-{h}.json"),
        ] {
            assert!(out.dir.join(&f).exists(), "{f}");
        }
        assert!(out
            .dir
            .join(format!("plots/mass_conservation-{h}.dat"))
            .exists());
        let stored = load_run(&out.dir).unwrap();
        assert_eq!(stored.meta.config, SMALL);
        let again = certify_trajectory(&cfg, &stored.traj);
        assert_eq!(again, out.report);
    }
}
