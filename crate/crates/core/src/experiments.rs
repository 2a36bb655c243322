//! Experiment drivers: the single-cluster consistency grid, posterior-K
//! histograms, galaxy catalogue loading and topic density reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsdpError, Result};
use crate::expfam_model::ExpFamSpec;
use crate::partition_laws::MarkedHyper;
use crate::samplers::{run_chain, Model, Observations, SamplerConfig, Trace};
use crate::sgp_prior::KernelParams;

/// `n` draws from a one-dimensional standard Gaussian.
pub fn gen_single_cluster(n: usize, seed: u64) -> Result<Observations> {
    if n == 0 {
        return Err(DsdpError::domain("single-cluster data needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Observations::scalar(v)
}

/// Frequencies of `K` over the final `last` records.
pub fn posterior_k_histogram(trace: &Trace, last: usize) -> Result<BTreeMap<usize, f64>> {
    if last == 0 || trace.is_empty() {
        return Err(DsdpError::domain("empty histogram window"));
    }
    if last > trace.len() {
        return Err(DsdpError::domain(format!(
            "window of {last} exceeds trace length {}",
            trace.len()
        )));
    }
    let mut counts = BTreeMap::new();
    for r in &trace.records[trace.len() - last..] {
        *counts.entry(r.k).or_insert(0usize) += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / last as f64))
        .collect())
}

/// Most frequent `K` (smallest on ties).
pub fn modal_k(hist: &BTreeMap<usize, f64>) -> Option<usize> {
    hist.iter()
        .fold(None, |best: Option<(usize, f64)>, (&k, &f)| match best {
            Some((_, bf)) if bf >= f => best,
            _ => Some((k, f)),
        })
        .map(|(k, _)| k)
}

/// Total-variation distance between two histograms.
pub fn total_variation(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>) -> f64 {
    let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).unwrap_or(&0.0) - b.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Mixes a master seed with cell coordinates (SplitMix64 finalizer per word).
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    let mut z = master;
    for &w in words {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(w);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub data_sizes: Vec<usize>,
    /// Divisors `d`; each cell uses `α* = n / d`.
    pub alpha_fractions: Vec<f64>,
    pub replicates: usize,
    pub models: Vec<Model>,
    /// Records at the end of each chain that enter the histogram.
    #[serde(default = "default_score_last")]
    pub score_last: usize,
}

fn default_score_last() -> usize {
    1000
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<()> {
        if self.data_sizes.is_empty() || self.data_sizes.iter().any(|&n| n < 2) {
            return Err(DsdpError::config("grid.data_sizes", "need at least one entry, all >= 2"));
        }
        if self.alpha_fractions.is_empty()
            || self.alpha_fractions.iter().any(|d| !(d.is_finite() && *d >= 1.0))
        {
            return Err(DsdpError::config("grid.alpha_fractions", "need at least one entry, all >= 1"));
        }
        if self.replicates == 0 {
            return Err(DsdpError::config("grid.replicates", "must be >= 1"));
        }
        if self.models.is_empty() {
            return Err(DsdpError::config("grid.models", "need at least one model"));
        }
        if self.score_last == 0 {
            return Err(DsdpError::config("grid.score_last", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub alpha_fraction: f64,
    pub model: Model,
    pub replicate: usize,
    pub histogram: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
}

impl GridReport {
    /// Long-format `n,alpha_fraction,model,replicate,K,frequency`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| DsdpError::Numerical(format!("grid csv: {e}"));
        w.write_record(["n", "alpha_fraction", "model", "replicate", "K", "frequency"])
            .map_err(csv_err)?;
        for c in &self.cells {
            for (k, f) in &c.histogram {
                w.write_record([
                    c.n.to_string(),
                    c.alpha_fraction.to_string(),
                    c.model.name().to_string(),
                    c.replicate.to_string(),
                    k.to_string(),
                    f.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn cells_for(&self, n: usize, model: Model) -> impl Iterator<Item = &GridCell> {
        self.cells.iter().filter(move |c| c.n == n && c.model == model)
    }

    /// Largest pairwise TV across α* fractions between histograms of the same
    /// replicate, maximized over replicates.
    pub fn max_pairwise_tv(&self, n: usize, model: Model) -> f64 {
        let mut by_rep: BTreeMap<usize, Vec<&GridCell>> = BTreeMap::new();
        for c in self.cells_for(n, model) {
            by_rep.entry(c.replicate).or_default().push(c);
        }
        let mut worst = 0.0f64;
        for cells in by_rep.values() {
            for (a, ca) in cells.iter().enumerate() {
                for cb in &cells[a + 1..] {
                    worst = worst.max(total_variation(&ca.histogram, &cb.histogram));
                }
            }
        }
        worst
    }
}

/// Runs one chain per `(n, d, model, replicate)` cell in parallel. Every cell
/// with the same `(n, replicate)` sees the same dataset.
pub fn run_consistency_grid(
    grid: &ExperimentGrid,
    cfg: &SamplerConfig,
    h_template: &MarkedHyper,
    spec: &ExpFamSpec,
    kp: &KernelParams,
    seed: u64,
) -> Result<GridReport> {
    grid.validate()?;
    cfg.validate()?;
    let window = grid.score_last.min(cfg.iters - cfg.burn_in);
    let mut jobs = Vec::new();
    for &n in &grid.data_sizes {
        for (di, &d) in grid.alpha_fractions.iter().enumerate() {
            for &model in &grid.models {
                for rep in 0..grid.replicates {
                    jobs.push((n, di, d, model, rep));
                }
            }
        }
    }
    let cells = jobs
        .par_iter()
        .map(|&(n, di, d, model, rep)| {
            let data = gen_single_cluster(n, derive_seed(seed, &[n as u64, rep as u64]))?;
            let h = h_template.with_alpha(n as f64 / d)?;
            let cell_cfg = SamplerConfig {
                model,
                ..cfg.clone()
            };
            let chain_seed = derive_seed(seed, &[n as u64, rep as u64, di as u64, model as u64 + 1]);
            let trace = run_chain(&data, &cell_cfg, &h, spec, kp, chain_seed)?;
            Ok(GridCell {
                n,
                alpha_fraction: d,
                model,
                replicate: rep,
                histogram: posterior_k_histogram(&trace, window)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridReport { cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GalaxyRecord {
    /// Degrees.
    pub right_ascension: f64,
    /// Degrees.
    pub declination: f64,
    /// km/s.
    pub velocity: f64,
}

impl GalaxyRecord {
    /// Display coordinates `10⁻⁴·v·(cos δ, sin δ)`.
    pub fn plot_coordinates(&self) -> (f64, f64) {
        let r = 1e-4 * self.velocity;
        let dec = self.declination.to_radians();
        (r * dec.cos(), r * dec.sin())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalaxyData {
    pub records: Vec<GalaxyRecord>,
    pub raw: Observations,
    /// Each feature shifted and scaled to zero mean and unit (population) variance.
    pub standardized: Observations,
    pub means: [f64; 3],
    pub std_devs: [f64; 3],
}

const RA_NAMES: &[&str] = &["ra", "r.a.", "r.a", "right_ascension", "right ascension"];
const DEC_NAMES: &[&str] = &["dec", "dec.", "declination"];
const VEL_NAMES: &[&str] = &["vel", "vel.", "velocity", "v", "speed", "cz"];

fn find_column(headers: &csv::StringRecord, names: &[&str], path: &str, canonical: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| names.contains(&h.trim().to_ascii_lowercase().as_str()))
        .ok_or_else(|| DsdpError::MissingColumn {
            path: path.to_string(),
            column: canonical.to_string(),
        })
}

/// Reads a comma-separated galaxy catalogue with a header row naming the
/// right ascension, declination and velocity columns.
pub fn load_galaxy_csv(path: &Path) -> Result<GalaxyData> {
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => DsdpError::Io(io),
            other => DsdpError::Format {
                path: shown.clone(),
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| DsdpError::Format {
            path: shown.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols = [
        find_column(&headers, RA_NAMES, &shown, "ra")?,
        find_column(&headers, DEC_NAMES, &shown, "dec")?,
        find_column(&headers, VEL_NAMES, &shown, "velocity")?,
    ];
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| DsdpError::Format {
            path: shown.clone(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let mut vals = [0.0; 3];
        for (slot, (&c, name)) in vals.iter_mut().zip(cols.iter().zip(["ra", "dec", "velocity"])) {
            let field = row.get(c).unwrap_or("");
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DsdpError::Format {
                    path: shown.clone(),
                    line,
                    message: format!("{name} value '{field}' is not a finite number"),
                })?;
        }
        if vals[2] <= 0.0 {
            return Err(DsdpError::Format {
                path: shown.clone(),
                line,
                message: format!("velocity must be > 0, got {}", vals[2]),
            });
        }
        records.push(GalaxyRecord {
            right_ascension: vals[0],
            declination: vals[1],
            velocity: vals[2],
        });
    }
    if records.is_empty() {
        return Err(DsdpError::Format {
            path: shown,
            line: 1,
            message: "no data rows".into(),
        });
    }
    galaxy_data(records)
}

fn galaxy_data(records: Vec<GalaxyRecord>) -> Result<GalaxyData> {
    let raw: Vec<f64> = records
        .iter()
        .flat_map(|r| [r.right_ascension, r.declination, r.velocity])
        .collect();
    let n = records.len() as f64;
    let mut means = [0.0; 3];
    let mut std_devs = [0.0; 3];
    for d in 0..3 {
        let mean = raw.iter().skip(d).step_by(3).sum::<f64>() / n;
        let var = raw.iter().skip(d).step_by(3).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        means[d] = mean;
        // a constant feature is only centred
        std_devs[d] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let standardized = raw
        .chunks_exact(3)
        .flat_map(|row| (0..3).map(move |d| (row[d] - means[d]) / std_devs[d]))
        .collect();
    Ok(GalaxyData {
        records,
        raw: Observations::new(3, raw)?,
        standardized: Observations::new(3, standardized)?,
        means,
        std_devs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    pub center: f64,
    pub density: f64,
}

/// Coordinate `dimension` of every block topic in the records after `burn_in`.
pub fn topic_samples(trace: &Trace, dimension: usize, burn_in: usize) -> Vec<f64> {
    trace
        .records
        .iter()
        .skip(burn_in)
        .flat_map(|r| r.topics.iter().filter_map(move |t| t.get(dimension).copied()))
        .collect()
}

/// Histogram density over bins `[j·w, (j+1)·w)`, covering the contiguous
/// range from the lowest to the highest occupied bin.
pub fn topic_density_report(samples: &[f64], bin_width: f64) -> Result<Vec<DensityBin>> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(DsdpError::domain(format!("bin width must be > 0, got {bin_width}")));
    }
    if samples.is_empty() {
        return Err(DsdpError::domain("no topic samples"));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &s in samples {
        if !s.is_finite() {
            return Err(DsdpError::domain("non-finite topic sample"));
        }
        *counts.entry((s / bin_width).floor() as i64).or_insert(0) += 1;
    }
    let lo = *counts.keys().next().expect("nonempty");
    let hi = *counts.keys().next_back().expect("nonempty");
    let total = samples.len() as f64;
    Ok((lo..=hi)
        .map(|j| DensityBin {
            center: (j as f64 + 0.5) * bin_width,
            density: *counts.get(&j).unwrap_or(&0) as f64 / (total * bin_width),
        })
        .collect())
}

pub fn write_density_csv<W: Write>(bins: &[DensityBin], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| DsdpError::Numerical(format!("density csv: {e}"));
    w.write_record(["bin_center", "density"]).map_err(csv_err)?;
    for b in bins {
        w.write_record([b.center.to_string(), b.density.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `row,block,plot_x,plot_y` for a galaxy clustering.
pub fn write_galaxy_assignments_csv<W: Write>(
    records: &[GalaxyRecord],
    assignments: &[usize],
    out: W,
) -> Result<()> {
    if records.len() != assignments.len() {
        return Err(DsdpError::DimensionMismatch {
            expected: records.len(),
            got: assignments.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| DsdpError::Numerical(format!("assignment csv: {e}"));
    w.write_record(["row", "block", "plot_x", "plot_y"]).map_err(csv_err)?;
    for (i, (r, b)) in records.iter().zip(assignments).enumerate() {
        let (x, y) = r.plot_coordinates();
        w.write_record([i.to_string(), b.to_string(), x.to_string(), y.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::TraceRecord;

    fn trace_of(ks: &[usize]) -> Trace {
        Trace {
            records: ks
                .iter()
                .enumerate()
                .map(|(i, &k)| TraceRecord {
                    iteration: i + 1,
                    k,
                    block_sizes: vec![1; k],
                    latent_count: 0,
                    split_merge: None,
                    birth_death: Vec::new(),
                    topics: vec![vec![0.0]; k],
                    wall_time: 0.0,
                })
                .collect(),
            final_assignments: Vec::new(),
        }
    }

    #[test]
    fn histogram_examples() {
        let h = posterior_k_histogram(&trace_of(&[3; 20]), 10).unwrap();
        assert_eq!(h.into_iter().collect::<Vec<_>>(), vec![(3, 1.0)]);

        let ks: Vec<usize> = (0..1500).map(|i| 1 + i % 2).collect();
        let h = posterior_k_histogram(&trace_of(&ks), 1000).unwrap();
        assert_eq!(h[&1], 0.5);
        assert_eq!(h[&2], 0.5);

        assert!(posterior_k_histogram(&trace_of(&[1; 5]), 0).is_err());
        assert!(posterior_k_histogram(&trace_of(&[1; 5]), 6).is_err());
    }

    #[test]
    fn single_cluster_examples() {
        let x = gen_single_cluster(100, 17).unwrap();
        let mean = x.rows().map(|r| r[0]).sum::<f64>() / 100.0;
        assert!(mean.abs() < 0.3);
        assert_eq!(x, gen_single_cluster(100, 17).unwrap());

        let x = gen_single_cluster(10_000, 3).unwrap();
        let m = x.rows().map(|r| r[0]).sum::<f64>() / 1e4;
        let v = x.rows().map(|r| (r[0] - m).powi(2)).sum::<f64>() / 1e4;
        assert!((0.94..=1.06).contains(&v));
    }

    #[test]
    fn density_examples() {
        let bins = topic_density_report(&[0.42; 7], 0.1).unwrap();
        assert_eq!(bins.iter().filter(|b| b.density > 0.0).count(), 1);

        let samples: Vec<f64> = (0..10_000).map(|i| (i as f64 + 0.5) / 10_000.0).collect();
        let bins = topic_density_report(&samples, 0.1).unwrap();
        assert_eq!(bins.len(), 10);
        for b in &bins {
            assert!((b.density * 0.1 - 0.1).abs() < 0.02);
        }
        let mass: f64 = bins.iter().map(|b| b.density * 0.1).sum();
        assert!((mass - 1.0).abs() < 1e-9);

        assert!(topic_density_report(&[], 0.1).is_err());
        assert!(topic_density_report(&[1.0], 0.0).is_err());
    }

    #[test]
    fn modal_and_tv() {
        let a: BTreeMap<usize, f64> = [(1, 0.7), (2, 0.3)].into_iter().collect();
        let b: BTreeMap<usize, f64> = [(2, 0.3), (3, 0.7)].into_iter().collect();
        assert_eq!(modal_k(&a), Some(1));
        assert!((total_variation(&a, &b) - 0.7).abs() < 1e-15);
        assert_eq!(total_variation(&a, &a), 0.0);
    }

    #[test]
    fn plot_coordinates_scale_velocity() {
        let r = GalaxyRecord {
            right_ascension: 200.0,
            declination: 0.0,
            velocity: 15_000.0,
        };
        assert_eq!(r.plot_coordinates(), (1.5, 0.0));
    }
}
