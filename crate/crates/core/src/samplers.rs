//! Markov chain samplers for the DSDP mixture and its DPMM baseline.
//!
//! Cluster parameters are collapsed out of the assignment weights. In the DSDP
//! model each block also owns a knot of the sigmoidal GP (its location is the
//! block's posterior mean), and new clusters are proposed through `M`
//! auxiliary components drawn from the base measure.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DsdpError, Result};
use crate::expfam_model::{log_marginal_mq, ExpFamSpec, SuffStats};
use crate::partition_laws::{log_marked_q_exact_unchecked, MarkedHyper, Partition, QMode};
use crate::sgp_prior::{
    birth_death_in_place, solve_intensity_from, GpConditional, KernelParams, MoveRecord, SgpState,
    TopicDomain,
};
use crate::special::{ln_gamma, ln_sigmoid, normalize_log_weights, sample_index};

/// Row-major observation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    dim: usize,
    values: Vec<f64>,
}

impl Observations {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(DsdpError::domain("observations need dimension >= 1"));
        }
        if values.len() % dim != 0 {
            return Err(DsdpError::DimensionMismatch {
                expected: dim,
                got: values.len() % dim,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DsdpError::domain("non-finite observation"));
        }
        Ok(Observations { dim, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        for r in rows {
            if r.len() != dim {
                return Err(DsdpError::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
        }
        Self::new(dim, rows.concat())
    }

    /// One-dimensional observations.
    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Dsdp,
    Dpmm,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Dsdp => "dsdp",
            Model::Dpmm => "dpmm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub model: Model,
    /// Auxiliary components offered to each observation as new clusters.
    pub aux_m: usize,
    pub iters: usize,
    pub burn_in: usize,
    pub split_merge_every: usize,
    pub restricted_scans: usize,
    /// Weight clusters by `σ(Y)`; off reduces the DSDP to its size prior.
    pub use_thinning: bool,
    /// Birth/death moves on the latent thinned points per iteration.
    pub latent_moves: usize,
    pub q_mode: QMode,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            model: Model::Dsdp,
            aux_m: 3,
            iters: 1000,
            burn_in: 0,
            split_merge_every: 1,
            restricted_scans: 3,
            use_thinning: true,
            latent_moves: 1,
            q_mode: QMode::Exact,
            solver_tol: 1e-8,
            solver_max_iter: 10_000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.aux_m == 0 {
            return Err(DsdpError::config("sampler.aux_m", "must be >= 1"));
        }
        if self.iters == 0 {
            return Err(DsdpError::config("sampler.iters", "must be >= 1"));
        }
        if self.burn_in >= self.iters {
            return Err(DsdpError::config(
                "sampler.burn_in",
                format!("must be < iters ({}), got {}", self.iters, self.burn_in),
            ));
        }
        if self.split_merge_every == 0 {
            return Err(DsdpError::config("sampler.split_merge_every", "must be >= 1"));
        }
        if !(self.solver_tol > 0.0 && self.solver_tol.is_finite()) {
            return Err(DsdpError::config("sampler.solver_tol", "must be finite and > 0"));
        }
        if self.solver_max_iter == 0 {
            return Err(DsdpError::config("sampler.solver_max_iter", "must be >= 1"));
        }
        Ok(())
    }

    fn thinning(&self) -> bool {
        self.model == Model::Dsdp && self.use_thinning
    }
}

/// Full mutable state of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub partition: Partition,
    pub cluster_stats: Vec<SuffStats>,
    /// Knots `0..K` mirror the blocks when thinning is active; empty otherwise.
    pub sgp: SgpState,
    pub hyper: MarkedHyper,
    pub spec: ExpFamSpec,
    pub iteration: usize,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMergeKind {
    Split,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMergeRecord {
    pub kind: SplitMergeKind,
    pub accepted: bool,
    pub log_accept: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub k: usize,
    /// Block sizes, largest first.
    pub block_sizes: Vec<usize>,
    pub latent_count: usize,
    pub split_merge: Option<SplitMergeRecord>,
    pub birth_death: Vec<MoveRecord>,
    /// Posterior mean of every block.
    pub topics: Vec<Vec<f64>>,
    /// Seconds spent on this iteration; kept out of serialized output so
    /// traces stay byte-identical across runs.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Records compare equal regardless of timing.
impl PartialEq for TraceRecord {
    fn eq(&self, other: &Self) -> bool {
        self.iteration == other.iteration
            && self.k == other.k
            && self.block_sizes == other.block_sizes
            && self.latent_count == other.latent_count
            && self.split_merge == other.split_merge
            && self.birth_death == other.birth_death
            && self.topics == other.topics
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub final_assignments: Vec<usize>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            let line = serde_json::to_string(r)
                .map_err(|e| DsdpError::Numerical(format!("trace serialization: {e}")))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// `iteration,K,max_block_size,accepted_splits,accepted_merges` with
    /// cumulative acceptance counts.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| DsdpError::Numerical(format!("summary csv: {e}"));
        w.write_record(["iteration", "K", "max_block_size", "accepted_splits", "accepted_merges"])
            .map_err(csv_err)?;
        let (mut splits, mut merges) = (0usize, 0usize);
        for r in &self.records {
            if let Some(sm) = r.split_merge {
                if sm.accepted {
                    match sm.kind {
                        SplitMergeKind::Split => splits += 1,
                        SplitMergeKind::Merge => merges += 1,
                    }
                }
            }
            w.write_record([
                r.iteration.to_string(),
                r.k.to_string(),
                r.block_sizes.first().copied().unwrap_or(0).to_string(),
                splits.to_string(),
                merges.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)
    }

    pub fn save_summary_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_summary_csv(f)
    }
}

/// One chain: immutable data and settings plus its evolving [`ChainState`].
pub struct Chain<'a> {
    data: &'a Observations,
    cfg: SamplerConfig,
    kernel: KernelParams,
    state: ChainState,
    rng: ChaCha8Rng,
    gp: Option<GpConditional>,
}

impl<'a> Chain<'a> {
    /// Starts with every observation in one block.
    pub fn new(
        data: &'a Observations,
        cfg: SamplerConfig,
        hyper: MarkedHyper,
        spec: ExpFamSpec,
        kernel: KernelParams,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        hyper.validate()?;
        spec.validate()?;
        kernel.validate()?;
        if data.is_empty() {
            return Err(DsdpError::domain("no observations"));
        }
        if data.dim() != spec.dimension {
            return Err(DsdpError::DimensionMismatch {
                expected: spec.dimension,
                got: data.dim(),
            });
        }
        if kernel.lengthscale.len() != spec.dimension {
            return Err(DsdpError::config(
                "kernel.lengthscale",
                format!("needs {} entries, got {}", spec.dimension, kernel.lengthscale.len()),
            ));
        }
        let n = data.len();
        let partition = Partition::single_block(n);
        let stats = vec![SuffStats::from_points(&spec, data.rows())?];
        let domain = TopicDomain::from_points(data.rows())?;
        let mut sgp = SgpState::new(hyper.alpha_star, domain);
        if cfg.thinning() {
            sgp.push_accepted(spec.posterior_mean(&stats[0]), 0.0);
        }
        let state = ChainState {
            partition,
            cluster_stats: stats,
            sgp,
            hyper,
            spec,
            iteration: 0,
            rng_seed: seed,
        };
        let mut chain = Chain {
            data,
            cfg,
            kernel,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            gp: None,
        };
        if chain.cfg.thinning() {
            chain.refresh_knots()?;
        }
        Ok(chain)
    }

    /// Replaces the partition (statistics and knots are rebuilt from it).
    pub fn with_partition(mut self, partition: Partition) -> Result<Self> {
        if partition.n() != self.data.len() {
            return Err(DsdpError::DimensionMismatch {
                expected: self.data.len(),
                got: partition.n(),
            });
        }
        self.state.partition = partition;
        self.state.cluster_stats = self.recompute_stats();
        if self.cfg.thinning() {
            let k = self.state.partition.num_blocks();
            while self.state.sgp.accepted_count > 0 {
                self.state.sgp.swap_remove_accepted(0);
            }
            for b in 0..k {
                let loc = self.state.spec.posterior_mean(&self.state.cluster_stats[b]);
                self.state.sgp.push_accepted(loc, 0.0);
            }
            self.gp = None;
            self.refresh_knots()?;
        }
        Ok(self)
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn partition(&self) -> &Partition {
        &self.state.partition
    }

    fn n(&self) -> usize {
        self.data.len()
    }

    fn gp(&mut self) -> Result<&GpConditional> {
        if self.gp.is_none() {
            self.gp = Some(GpConditional::new(&self.state.sgp, &self.kernel)?);
        }
        Ok(self.gp.as_ref().expect("just built"))
    }

    /// `ln[Q(m+1)/Q(m)]`; zero in the DPMM.
    #[inline]
    fn log_q_ratio(&self, m: usize, model: Model) -> f64 {
        if model == Model::Dpmm {
            return 0.0;
        }
        let a0 = self.state.hyper.a0;
        let m = m as f64;
        match self.cfg.q_mode {
            QMode::Exact => (a0 + m).ln() - (m + 1.0).ln(),
            QMode::Asymptotic => (a0 - 1.0) * ((m + 2.0) / (m + 1.0)).ln(),
        }
    }

    fn log_q(&self, m: usize) -> f64 {
        let h = &self.state.hyper;
        let n = self.n();
        match self.cfg.q_mode {
            QMode::Exact => log_marked_q_exact_unchecked(m, n, h.a0, h.b0),
            QMode::Asymptotic => (h.a0 - 1.0) * (m as f64 + 1.0).ln() - h.a0 * (n as f64).ln(),
        }
    }

    /// Log weight shared by all new-cluster proposals: `ln α* + ln Q(1)` (DSDP)
    /// or `ln α*` (DPMM).
    fn log_new_cluster(&self, model: Model) -> f64 {
        let a = self.state.hyper.alpha_star.ln();
        match model {
            Model::Dsdp => a + self.log_q(1),
            Model::Dpmm => a,
        }
    }

    fn open_block(&mut self, i: usize, theta: Vec<f64>, y: f64) {
        let k = self.state.partition.num_blocks();
        self.state.partition.attach(i, k);
        let mut s = SuffStats::empty(self.state.spec.dimension);
        s.add_unchecked(&self.state.spec, self.data.row(i));
        self.state.cluster_stats.push(s);
        if self.cfg.thinning() {
            self.state.sgp.push_accepted(theta, y);
            self.gp = None;
        }
    }

    /// Removes `i` from its block; returns the block's statistics when `i`
    /// was its only member.
    fn remove_item(&mut self, i: usize) -> Option<SuffStats> {
        let x = self.data.row(i);
        let old = self.state.partition.block_of(i);
        let detached = self.state.partition.detach(i);
        if detached.emptied.is_some() {
            let stats = self.state.cluster_stats.swap_remove(old);
            if self.cfg.thinning() {
                self.state.sgp.swap_remove_accepted(old);
                self.gp = None;
            }
            Some(stats)
        } else {
            self.state.cluster_stats[old].remove_unchecked(&self.state.spec, x);
            None
        }
    }

    /// Collapsed Gibbs update of observation `i` (thinned weights in the DSDP).
    pub fn assignment_step(&mut self, i: usize) -> Result<()> {
        let model = self.cfg.model;
        self.assign(i, model)
    }

    /// Auxiliary-component DPMM update of observation `i`.
    pub fn dpmm_baseline_step(&mut self, i: usize) -> Result<()> {
        if self.cfg.model != Model::Dpmm {
            return Err(DsdpError::domain("dpmm_baseline_step on a chain configured for dsdp"));
        }
        self.assign(i, Model::Dpmm)
    }

    /// Normalized assignment probabilities for observation `i` (existing
    /// blocks in order, then the auxiliary components), drawn with `rng`
    /// without changing the chain.
    pub fn assignment_probabilities<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Result<Vec<f64>> {
        let mut scratch = Chain {
            data: self.data,
            cfg: self.cfg.clone(),
            kernel: self.kernel.clone(),
            state: self.state.clone(),
            rng: self.rng.clone(),
            gp: self.gp.clone(),
        };
        scratch.check_index(i)?;
        let singleton = scratch.remove_item(i);
        if scratch.cfg.thinning() {
            scratch.gp()?;
        }
        let (mut w, _) = scratch.weights(i, singleton.as_ref(), self.cfg.model, rng)?;
        normalize_log_weights(&mut w);
        Ok(w)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(DsdpError::domain(format!("observation {i} out of range 0..{}", self.n())));
        }
        Ok(())
    }

    fn assign(&mut self, i: usize, model: Model) -> Result<()> {
        self.check_index(i)?;
        let singleton = self.remove_item(i);
        if self.cfg.thinning() && model == Model::Dsdp {
            self.gp()?;
        }
        // the weights borrow the chain immutably while drawing auxiliary components
        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        let result = self.weights(i, singleton.as_ref(), model, &mut rng);
        self.rng = rng;
        let (mut w, aux) = result?;
        normalize_log_weights(&mut w);
        let choice = sample_index(&w, &mut self.rng);
        let k = self.state.partition.num_blocks();
        if choice < k {
            self.state.partition.attach(i, choice);
            self.state.cluster_stats[choice].add_unchecked(&self.state.spec, self.data.row(i));
        } else {
            let (theta, y) = aux.into_iter().nth(choice - k).expect("auxiliary index");
            self.open_block(i, theta, y);
        }
        Ok(())
    }

    /// Log weights over existing blocks and auxiliary components for the
    /// detached observation `i`, together with the auxiliary `(θ, Y)` pairs.
    #[allow(clippy::type_complexity)]
    fn weights<R: Rng + ?Sized>(
        &self,
        i: usize,
        singleton: Option<&SuffStats>,
        model: Model,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<(Vec<f64>, f64)>)> {
        let thin = self.cfg.thinning() && model == Model::Dsdp;
        let x = self.data.row(i);
        let spec = &self.state.spec;
        let k = self.state.partition.num_blocks();
        let m_aux = self.cfg.aux_m;
        let mut w = Vec::with_capacity(k + m_aux);
        for b in 0..k {
            let m = self.state.partition.block_sizes()[b];
            let mut lw = (m as f64).ln() + self.log_q_ratio(m, model);
            if thin {
                lw += ln_sigmoid(self.state.sgp.values[b]);
            }
            lw += spec.log_predictive(&self.state.cluster_stats[b], x);
            w.push(lw);
        }
        let new_base = self.log_new_cluster(model) - (m_aux as f64).ln();
        let mut aux = Vec::with_capacity(m_aux);
        for a in 0..m_aux {
            let theta = match singleton {
                // the removed singleton's parameter, drawn from its posterior
                Some(s) if a == 0 => spec.sample_posterior(s, rng),
                _ => {
                    let mut t = vec![0.0; spec.dimension];
                    spec.sample_prior_into(rng, &mut t);
                    t
                }
            };
            let mut lw = new_base + spec.log_likelihood(x, &theta);
            let y = if thin {
                let gp = self.gp.as_ref().ok_or_else(|| DsdpError::Invariant("stale GP cache".into()))?;
                let (mean, var) = gp.mean_and_variance(&theta);
                let z: f64 = rng.sample(StandardNormal);
                let y = mean + var.sqrt() * z;
                lw += ln_sigmoid(y);
                y
            } else {
                0.0
            };
            w.push(lw);
            aux.push((theta, y));
        }
        if w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(DsdpError::Numerical(format!("assignment weights {w:?}")));
        }
        Ok((w, aux))
    }

    /// Full sweep of [`Chain::assignment_step`] over all observations.
    pub fn sweep(&mut self) -> Result<()> {
        for i in 0..self.n() {
            self.assignment_step(i)?;
        }
        Ok(())
    }

    /// One sweep of the likelihood-free chain: each observation is
    /// reassigned from the exact conditional of the partition prior alone
    /// (`σ ≡ 1`, no data).
    pub fn prior_partition_step(&mut self) -> Result<()> {
        let model = self.cfg.model;
        for i in 0..self.n() {
            self.remove_item(i);
            let k = self.state.partition.num_blocks();
            let mut w = Vec::with_capacity(k + 1);
            for b in 0..k {
                let m = self.state.partition.block_sizes()[b];
                w.push((m as f64).ln() + self.log_q_ratio(m, model));
            }
            w.push(self.log_new_cluster(model));
            normalize_log_weights(&mut w);
            let choice = sample_index(&w, &mut self.rng);
            if choice < k {
                self.state.partition.attach(i, choice);
                self.state.cluster_stats[choice].add_unchecked(&self.state.spec, self.data.row(i));
            } else {
                let loc = self.data.row(i).to_vec();
                self.open_block(i, loc, 0.0);
            }
        }
        Ok(())
    }

    /// `ln Γ(|A|) + ln Q(|A|) + ln σ(Y(θ̄_A)) + ln m_q(A)` for one block;
    /// the `Q` and `σ` factors apply to the DSDP only.
    fn log_block_term(&self, stats: &SuffStats) -> Result<f64> {
        let mut t = ln_gamma(stats.count as f64) + log_marginal_mq(stats, &self.state.spec, None)?;
        if self.cfg.model == Model::Dsdp {
            t += self.log_q(stats.count);
            if self.cfg.thinning() {
                let loc = self.state.spec.posterior_mean(stats);
                t += ln_sigmoid(self.gp.as_ref().expect("gp built").mean(&loc));
            }
        }
        Ok(t)
    }

    /// `ln` of the restricted-scan weight for adding an item to a side.
    #[inline]
    fn side_weight(&self, side: &SuffStats, x: &[f64]) -> f64 {
        (side.count as f64).ln()
            + self.log_q_ratio(side.count, self.cfg.model)
            + self.state.spec.log_predictive(side, x)
    }

    /// Draws (or, with `target`, scores) one pass over `items`, moving each
    /// to side 0 or 1. Returns the log probability of the realized pass.
    fn restricted_pass(
        &mut self,
        items: &[usize],
        sides: &mut [u8],
        stats: &mut [SuffStats; 2],
        sequential: bool,
        target: Option<&[u8]>,
    ) -> f64 {
        let spec = self.state.spec.clone();
        let mut log_t = 0.0;
        for (pos, &item) in items.iter().enumerate() {
            let x = self.data.row(item);
            if !sequential {
                stats[sides[pos] as usize].remove_unchecked(&spec, x);
            }
            let mut w = [self.side_weight(&stats[0], x), self.side_weight(&stats[1], x)];
            normalize_log_weights(&mut w);
            let pick = match target {
                Some(t) => t[pos],
                None => {
                    if self.rng.random::<f64>() < w[0] {
                        0
                    } else {
                        1
                    }
                }
            };
            log_t += w[pick as usize].ln();
            sides[pos] = pick;
            stats[pick as usize].add_unchecked(&spec, x);
        }
        log_t
    }

    /// One split–merge Metropolis–Hastings proposal with restricted Gibbs
    /// launch states. Returns `None` when `n < 2`.
    pub fn split_merge_step(&mut self) -> Result<Option<SplitMergeRecord>> {
        let n = self.n();
        if n < 2 {
            return Ok(None);
        }
        if self.cfg.thinning() {
            self.gp()?;
        }
        let i = self.rng.random_range(0..n);
        let mut j = self.rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let ci = self.state.partition.block_of(i);
        let cj = self.state.partition.block_of(j);
        let mut items: Vec<usize> = (0..n)
            .filter(|&k| {
                k != i && k != j && {
                    let b = self.state.partition.block_of(k);
                    b == ci || b == cj
                }
            })
            .collect();
        items.shuffle(&mut self.rng);

        let spec = self.state.spec.clone();
        let seeds = || {
            let mut a = SuffStats::empty(spec.dimension);
            a.add_unchecked(&spec, self.data.row(i));
            let mut b = SuffStats::empty(spec.dimension);
            b.add_unchecked(&spec, self.data.row(j));
            [a, b]
        };
        let mut stats = seeds();
        let mut sides = vec![0u8; items.len()];
        let scans = self.cfg.restricted_scans;
        let split = ci == cj;
        let current: Vec<u8> = items
            .iter()
            .map(|&k| u8::from(self.state.partition.block_of(k) != ci))
            .collect();

        // launch state: sequential allocation, then scans − 1 restricted sweeps
        let log_t = if scans == 0 {
            self.restricted_pass(&items, &mut sides, &mut stats, true, (!split).then_some(&current[..]))
        } else {
            self.restricted_pass(&items, &mut sides, &mut stats, true, None);
            for _ in 1..scans {
                self.restricted_pass(&items, &mut sides, &mut stats, false, None);
            }
            self.restricted_pass(&items, &mut sides, &mut stats, false, (!split).then_some(&current[..]))
        };

        let [left, right] = stats;
        let merged = left.merged(&right);
        let delta = self.state.hyper.alpha_star.ln() + self.log_block_term(&left)?
            + self.log_block_term(&right)?
            - self.log_block_term(&merged)?;
        let log_accept = if split { delta - log_t } else { log_t - delta };
        if !log_accept.is_finite() && log_accept != f64::NEG_INFINITY {
            return Err(DsdpError::Numerical(format!("split-merge log acceptance {log_accept}")));
        }
        let u: f64 = self.rng.random();
        let accepted = u.ln() < log_accept;
        if accepted {
            if split {
                let movers: Vec<usize> = std::iter::once(j)
                    .chain(items.iter().zip(&sides).filter(|(_, s)| **s == 1).map(|(k, _)| *k))
                    .collect();
                self.state.partition.split_off(ci, &movers);
                self.state.cluster_stats[ci] = left;
                self.state.cluster_stats.push(right);
                if self.cfg.thinning() {
                    let k = self.state.partition.num_blocks() - 1;
                    let loc = spec.posterior_mean(&self.state.cluster_stats[k]);
                    let y = self.gp.as_ref().expect("gp built").mean(&loc);
                    self.state.sgp.push_accepted(loc, y);
                    self.set_knot(ci);
                }
            } else {
                self.state.cluster_stats[ci] = merged;
                let last = self.state.partition.merge_blocks(ci, cj);
                self.state.cluster_stats.swap_remove(cj);
                if self.cfg.thinning() {
                    self.state.sgp.swap_remove_accepted(cj);
                    let into = if ci == last { cj } else { ci };
                    self.set_knot(into);
                }
            }
            self.gp = None;
        }
        Ok(Some(SplitMergeRecord {
            kind: if split {
                SplitMergeKind::Split
            } else {
                SplitMergeKind::Merge
            },
            accepted,
            log_accept,
        }))
    }

    /// Moves knot `b` to its block's posterior mean with the GP mean there.
    fn set_knot(&mut self, b: usize) {
        let loc = self.state.spec.posterior_mean(&self.state.cluster_stats[b]);
        let y = self.gp.as_ref().expect("gp built").mean(&loc);
        self.state.sgp.locations[b] = loc;
        self.state.sgp.values[b] = y;
    }

    /// Birth/death moves on the latent thinned points.
    pub fn latent_step(&mut self) -> Result<Vec<MoveRecord>> {
        let mut out = Vec::with_capacity(self.cfg.latent_moves);
        if !self.cfg.thinning() {
            return Ok(out);
        }
        for _ in 0..self.cfg.latent_moves {
            self.gp()?;
            let gp = self.gp.as_ref().expect("gp built");
            let rec = birth_death_in_place(&mut self.state.sgp, gp, &mut self.rng)?;
            if rec.accepted {
                self.gp = None;
            }
            out.push(rec);
        }
        Ok(out)
    }

    /// Moves every block knot to its posterior mean and re-solves `Y` at all knots.
    pub fn refresh_knots(&mut self) -> Result<()> {
        if !self.cfg.thinning() {
            return Ok(());
        }
        for b in 0..self.state.partition.num_blocks() {
            self.state.sgp.locations[b] = self.state.spec.posterior_mean(&self.state.cluster_stats[b]);
        }
        let start = self.state.sgp.values.clone();
        let y = solve_intensity_from(
            &self.state.sgp,
            &self.kernel,
            &start,
            self.cfg.solver_tol,
            self.cfg.solver_max_iter,
        )?;
        self.state.sgp.values = y;
        self.gp = None;
        self.state.sgp.check_thinning_range()
    }

    fn recompute_stats(&self) -> Vec<SuffStats> {
        let spec = &self.state.spec;
        let mut stats = vec![SuffStats::empty(spec.dimension); self.state.partition.num_blocks()];
        for (i, &b) in self.state.partition.assignments().iter().enumerate() {
            stats[b].add_unchecked(spec, self.data.row(i));
        }
        stats
    }

    /// Verifies the cached statistics and knot bookkeeping against a fresh
    /// recomputation from the assignments.
    pub fn check_consistency(&self) -> Result<()> {
        self.state.partition.validate()?;
        let fresh = self.recompute_stats();
        if fresh.len() != self.state.cluster_stats.len() {
            return Err(DsdpError::Invariant(format!(
                "{} cached block statistics for {} blocks",
                self.state.cluster_stats.len(),
                fresh.len()
            )));
        }
        for (b, (f, c)) in fresh.iter().zip(&self.state.cluster_stats).enumerate() {
            let close = f
                .stat_sum
                .iter()
                .zip(&c.stat_sum)
                .all(|(a, b)| (a - b).abs() <= 1e-8 * (1.0 + a.abs()));
            if f.count != c.count || !close {
                return Err(DsdpError::Invariant(format!(
                    "block {b}: cached statistics {c:?} disagree with recomputed {f:?}"
                )));
            }
        }
        if self.cfg.thinning() {
            self.state.sgp.validate()?;
            if self.state.sgp.accepted_count != self.state.partition.num_blocks() {
                return Err(DsdpError::Invariant(format!(
                    "{} accepted knots for {} blocks",
                    self.state.sgp.accepted_count,
                    self.state.partition.num_blocks()
                )));
            }
        }
        Ok(())
    }

    /// One full iteration: latent moves, knot refresh, assignment sweep and
    /// (every `split_merge_every` iterations) a split–merge proposal.
    pub fn iterate(&mut self) -> Result<TraceRecord> {
        let start = Instant::now();
        let birth_death = self.latent_step()?;
        self.refresh_knots()?;
        self.sweep()?;
        let split_merge = if (self.state.iteration + 1) % self.cfg.split_merge_every == 0 {
            self.split_merge_step()?
        } else {
            None
        };
        self.check_consistency()?;
        // drop accumulated rounding in the incremental statistics
        self.state.cluster_stats = self.recompute_stats();
        self.state.iteration += 1;
        let mut block_sizes = self.state.partition.block_sizes().to_vec();
        block_sizes.sort_unstable_by(|a, b| b.cmp(a));
        let topics = self
            .state
            .cluster_stats
            .iter()
            .map(|s| self.state.spec.posterior_mean(s))
            .collect();
        Ok(TraceRecord {
            iteration: self.state.iteration,
            k: self.state.partition.num_blocks(),
            block_sizes,
            latent_count: self.state.sgp.thinned_count(),
            split_merge,
            birth_death,
            topics,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }

    pub fn run(mut self) -> Result<Trace> {
        let mut records = Vec::with_capacity(self.cfg.iters);
        for _ in 0..self.cfg.iters {
            records.push(self.iterate()?);
        }
        Ok(Trace {
            records,
            final_assignments: self.state.partition.assignments().to_vec(),
        })
    }
}

/// Runs `cfg.iters` iterations from the one-block start.
pub fn run_chain(
    data: &Observations,
    cfg: &SamplerConfig,
    h: &MarkedHyper,
    spec: &ExpFamSpec,
    kp: &KernelParams,
    seed: u64,
) -> Result<Trace> {
    Chain::new(data, cfg.clone(), *h, spec.clone(), kp.clone(), seed)?.run()
}
