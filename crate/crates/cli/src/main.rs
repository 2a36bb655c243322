mod config;
mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsdp::experiments::{
    load_galaxy_csv, modal_k, posterior_k_histogram, run_consistency_grid, topic_density_report, topic_samples,
    write_density_csv, write_galaxy_assignments_csv, GalaxyRecord,
};
use dsdp::partition_laws::{
    enumerate_set_partitions, log_marked_q_exact, log_mass_from_sizes, log_partition_mass,
    log_partition_normalizer, ordered_size_prob_by_enumeration, MarkedHyper, QMode, SizeVector,
};
use dsdp::samplers::{run_chain, Chain, Model, Observations, SamplerConfig};
use dsdp::DsdpError;
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::{DataFormat, RunConfig};

const ENUMERATION_CEILING: usize = 12;

#[derive(Parser)]
#[command(name = "dsdp", version, about = "Doubly stochastic Dirichlet process mixtures: verification, fitting and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "DSDP_OUT_DIR", default_value = "dsdp-out")]
    out: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the partition laws against exhaustive enumeration and the prior chain.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Largest number of items to enumerate (at most 12).
        #[arg(long)]
        max_n: Option<usize>,
    },
    /// Fit one chain to a CSV dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Data CSV; overrides `data.path` from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also draw the posterior K histogram as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Run the single-cluster consistency grid.
    SimulateGrid {
        #[command(flatten)]
        common: Common,
        /// One SVG bar chart per (n, model) panel.
        #[arg(long)]
        svg: bool,
    },
}

enum Failure {
    /// Checks ran and at least one failed.
    Checks(String),
    Usage(String),
}

impl From<DsdpError> for Failure {
    fn from(e: DsdpError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify { common, max_n } => cmd_verify(&common, max_n),
        Command::Fit { common, data, svg } => cmd_fit(&common, data, svg),
        Command::SimulateGrid { common, svg } => cmd_simulate_grid(&common, svg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks(msg)) => {
            eprintln!("dsdp: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("dsdp: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            DsdpError::Io(io) => Failure::Usage(format!("{}: {io}", p.display())),
            other => other.into(),
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    artifacts: Vec<String>,
}

struct Outputs {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
    }

    fn finish(mut self, command: &str, cfg: &RunConfig) -> Result<(), Failure> {
        let canonical = toml::to_string(cfg).map_err(|e| Failure::Usage(e.to_string()))?;
        let digest = Sha256::digest(canonical.as_bytes());
        let hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.artifacts.push("manifest.json".into());
        let manifest = Manifest {
            tool: "dsdp",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cfg.seed,
            config_sha256: hash,
            config: cfg,
            artifacts: self.artifacts.clone(),
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::Usage(e.to_string()))?;
        fs::write(self.dir.join("manifest.json"), json)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct CheckResult {
    name: String,
    value: f64,
    bound: f64,
    pass: bool,
}

impl CheckResult {
    fn at_most(name: String, value: f64, bound: f64) -> Self {
        CheckResult {
            name,
            value,
            bound,
            pass: value <= bound,
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    max_n: usize,
    passed: bool,
    checks: Vec<CheckResult>,
}

fn bell(n: usize) -> usize {
    let mut row = vec![1usize];
    for _ in 0..n {
        let mut next = vec![*row.last().expect("nonempty")];
        for v in &row {
            next.push(next.last().expect("nonempty") + v);
        }
        row = next;
    }
    row[0]
}

/// Integer partitions of `n`, parts in non-increasing order.
fn integer_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, cap: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for part in (1..=cap.min(left)).rev() {
            cur.push(part);
            rec(left - part, part, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, n, &mut Vec::new(), &mut out);
    out
}

/// Number of distinct sequences with the multiset of parts in `sizes`.
fn distinct_orderings(sizes: &[usize]) -> f64 {
    let fact = |k: usize| (1..=k).map(|j| j as f64).product::<f64>();
    let mut mult: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in sizes {
        *mult.entry(s).or_insert(0) += 1;
    }
    fact(sizes.len()) / mult.values().map(|&m| fact(m)).product::<f64>()
}

fn prior_chain_tv(n: usize, h: MarkedHyper, sweeps: usize, seed: u64) -> Result<f64, DsdpError> {
    let parts = enumerate_set_partitions(n)?;
    let logs: Vec<f64> = parts.iter().map(|p| log_partition_mass(p, &h, QMode::Exact)).collect();
    let z = log_partition_normalizer(n, &h, QMode::Exact)?;
    let mut exact: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (p, l) in parts.iter().zip(&logs) {
        exact.insert(p.canonical().assignments().to_vec(), (l - z).exp());
    }
    let data = Observations::scalar(vec![0.0; n])?;
    let cfg = SamplerConfig {
        model: Model::Dsdp,
        use_thinning: false,
        ..SamplerConfig::default()
    };
    let spec = dsdp::expfam_model::ExpFamSpec::standard(1, 1.0, 1.0)?;
    let kp = dsdp::sgp_prior::KernelParams::isotropic(1, 1.0, 1.0, 1e-6)?;
    let mut chain = Chain::new(&data, cfg, h, spec, kp, seed)?;
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..sweeps {
        chain.prior_partition_step()?;
        *counts
            .entry(chain.partition().canonical().assignments().to_vec())
            .or_insert(0) += 1;
    }
    let mut tv = 0.0;
    for (key, p) in &exact {
        let q = *counts.get(key).unwrap_or(&0) as f64 / sweeps as f64;
        tv += (p - q).abs();
    }
    Ok(0.5 * tv)
}

fn cmd_verify(common: &Common, max_n: Option<usize>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let max_n = max_n.unwrap_or(cfg.verify.max_n);
    if max_n > ENUMERATION_CEILING {
        return Err(Failure::Usage(
            DsdpError::ResourceLimit {
                what: "max_n",
                requested: max_n,
                ceiling: ENUMERATION_CEILING,
            }
            .to_string(),
        ));
    }
    if max_n == 0 {
        return Err(Failure::Usage("max_n must be >= 1".into()));
    }
    let h = cfg.hyper()?;
    let collapsed = MarkedHyper { a0: 1.0, ..h };
    let mut checks = Vec::new();
    for n in 1..=max_n {
        let parts = enumerate_set_partitions(n)?;
        checks.push(CheckResult::at_most(
            format!("n={n}: partition count minus Bell number"),
            (parts.len() as f64 - bell(n) as f64).abs(),
            0.0,
        ));
        let z = log_partition_normalizer(n, &h, QMode::Exact)?;
        let total: f64 = parts.iter().map(|p| (log_partition_mass(p, &h, QMode::Exact) - z).exp()).sum();
        checks.push(CheckResult::at_most(
            format!("n={n}: normalized mass total minus one"),
            (total - 1.0).abs(),
            1e-9,
        ));
        let exch = parts
            .iter()
            .map(|p| {
                let mut sizes = p.block_sizes().to_vec();
                sizes.sort_unstable();
                (log_partition_mass(p, &h, QMode::Exact) - log_mass_from_sizes(&sizes, &h, QMode::Exact)).abs()
            })
            .fold(0.0, f64::max);
        checks.push(CheckResult::at_most(
            format!("n={n}: mass depends only on block sizes"),
            exch,
            1e-12,
        ));
        let collapse = (1..=n)
            .map(|nk| {
                let q = log_marked_q_exact(nk, n, &collapsed).unwrap_or(f64::NAN);
                (q + (n as f64 + h.b0).ln()).abs()
            })
            .fold(0.0, f64::max);
        checks.push(CheckResult::at_most(
            format!("n={n}: unit shape marked function equals 1/(n+b0)"),
            collapse,
            1e-12,
        ));
        let mut ordered = 0.0;
        for sizes in integer_partitions(n) {
            let arrangements = distinct_orderings(&sizes);
            ordered += arrangements * ordered_size_prob_by_enumeration(&SizeVector::new(sizes)?, &h)?;
        }
        checks.push(CheckResult::at_most(
            format!("n={n}: ordered size probabilities over all compositions sum to the normalizer"),
            (ordered / z.exp() - 1.0).abs(),
            1e-9,
        ));
    }
    for n in 2..=max_n.min(cfg.verify.chain_max_n) {
        let seed = dsdp::experiments::derive_seed(cfg.seed, &[n as u64]);
        let tv = prior_chain_tv(n, h, cfg.verify.chain_sweeps, seed)?;
        checks.push(CheckResult::at_most(
            format!("n={n}: prior chain total variation to the enumerated law"),
            tv,
            cfg.verify.tv_bound,
        ));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let failed_msg = failed.join("; ");
    let report = VerifyReport {
        max_n,
        passed: failed.is_empty(),
        checks,
    };
    for c in &report.checks {
        println!(
            "{} {} = {:.3e} (bound {:.1e})",
            if c.pass { "ok  " } else { "FAIL" },
            c.name,
            c.value,
            c.bound
        );
    }
    let mut out = Outputs::new(&common.out)?;
    out.write(
        "verify_report.json",
        &serde_json::to_vec_pretty(&report).map_err(|e| Failure::Usage(e.to_string()))?,
    )?;
    out.finish("verify", &cfg)?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Checks(format!("failed checks: {failed_msg}")))
    }
}

/// Numeric CSV; a first row with any non-numeric field is taken as a header.
fn load_generic_csv(path: &Path) -> Result<Observations, Failure> {
    let display = path.display().to_string();
    let format_err = |line: u64, message: String| {
        Failure::Usage(
            DsdpError::Format {
                path: display.clone(),
                line,
                message,
            }
            .to_string(),
        )
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Usage(format!("{display}: {e}")))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 1;
        let record = record.map_err(|e| format_err(line, e.to_string()))?;
        let parsed: Vec<Result<f64, _>> = record.iter().map(|f| f.parse::<f64>()).collect();
        if idx == 0 && parsed.iter().any(|r| r.is_err()) {
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (col, value) in parsed.into_iter().enumerate() {
            match value {
                Ok(v) if v.is_finite() => row.push(v),
                _ => return Err(format_err(line, format!("column {}: not a finite number", col + 1))),
            }
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_err(line, format!("expected {} columns, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format_err(1, "no data rows".into()));
    }
    Ok(Observations::from_rows(&rows)?)
}

fn histogram_csv(hist: &BTreeMap<usize, f64>) -> String {
    let mut s = String::from("K,frequency\n");
    for (k, f) in hist {
        s.push_str(&format!("{k},{f}\n"));
    }
    s
}

fn cmd_fit(common: &Common, data: Option<PathBuf>, svg: bool) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if data.is_some() {
        cfg.data.path = data;
    }
    let Some(path) = cfg.data.path.clone() else {
        return Err(Failure::Usage("no data file: pass --data or set data.path".into()));
    };
    let mut galaxy: Option<Vec<GalaxyRecord>> = None;
    let obs = match cfg.data.format {
        DataFormat::Generic => load_generic_csv(&path)?,
        DataFormat::Galaxy => {
            let g = load_galaxy_csv(&path)?;
            if cfg.report.density_dimension >= 3 {
                return Err(Failure::Usage("report.density_dimension: must be 0, 1 or 2 for galaxy data".into()));
            }
            galaxy = Some(g.records);
            g.standardized
        }
    };
    let dim = obs.dim();
    let h = cfg.hyper()?;
    let spec = cfg.expfam(dim)?;
    let kp = cfg.kernel(dim)?;
    let trace = run_chain(&obs, &cfg.sampler, &h, &spec, &kp, cfg.seed)?;
    let window = cfg.report.score_last.min(cfg.sampler.iters - cfg.sampler.burn_in);
    let hist = posterior_k_histogram(&trace, window)?;

    let mut out = Outputs::new(&common.out)?;
    let p = out.path("trace.jsonl");
    trace.save_jsonl(&p)?;
    let p = out.path("summary.csv");
    trace.save_summary_csv(&p)?;
    out.write("histogram.csv", histogram_csv(&hist).as_bytes())?;
    if let Some(records) = &galaxy {
        let samples = topic_samples(&trace, cfg.report.density_dimension, cfg.sampler.burn_in);
        let bins = topic_density_report(&samples, cfg.report.density_bin_width)?;
        let mut buf = Vec::new();
        write_density_csv(&bins, &mut buf)?;
        out.write("galaxy_density.csv", &buf)?;
        let mut buf = Vec::new();
        write_galaxy_assignments_csv(records, &trace.final_assignments, &mut buf)?;
        out.write("galaxy_assignments.csv", &buf)?;
    }
    if svg {
        let title = format!("posterior K, n={}, α*={}", obs.len(), h.alpha_star);
        let chart = svg::histogram_chart(&title, &[(cfg.sampler.model.name().to_string(), hist.clone())]);
        out.write("histogram.svg", chart.as_bytes())?;
    }
    out.finish("fit", &cfg)?;
    if let Some(mode) = modal_k(&hist) {
        println!("n={} modal K={} (frequency {:.3}) over the last {window} iterations", obs.len(), mode, hist[&mode]);
    }
    Ok(())
}

fn cmd_simulate_grid(common: &Common, svg: bool) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let grid = cfg.grid();
    let report = run_consistency_grid(&grid, &cfg.sampler, &cfg.hyper()?, &cfg.expfam(1)?, &cfg.kernel(1)?, cfg.seed)?;
    let mut out = Outputs::new(&common.out)?;
    let p = out.path("grid_report.csv");
    report.save_csv(&p)?;
    for &n in &grid.data_sizes {
        for &model in &grid.models {
            println!(
                "n={n} {}: max pairwise TV across α* = {:.4}",
                model.name(),
                report.max_pairwise_tv(n, model)
            );
            if !svg {
                continue;
            }
            // replicate-averaged histogram per α* fraction
            let mut series = Vec::new();
            for &d in &grid.alpha_fractions {
                let mut avg: BTreeMap<usize, f64> = BTreeMap::new();
                let cells: Vec<_> = report.cells_for(n, model).filter(|c| c.alpha_fraction == d).collect();
                for c in &cells {
                    for (k, f) in &c.histogram {
                        *avg.entry(*k).or_insert(0.0) += f / cells.len() as f64;
                    }
                }
                series.push((format!("α* = n/{d}"), avg));
            }
            let chart = svg::histogram_chart(&format!("posterior K, n={n}, {}", model.name()), &series);
            out.write(&format!("grid_n{n}_{}.svg", model.name()), chart.as_bytes())?;
        }
    }
    out.finish("simulate-grid", &cfg)?;
    Ok(())
}
