//! Exchangeable partition laws of the marked DSDP prior.
//!
//! Every law here depends on a partition only through its block sizes. All
//! values are natural logs unless a function says otherwise; `Γ(α* + n)` alone
//! overflows a double near `n = 170`.

use serde::{Deserialize, Serialize};

use crate::error::{DsdpError, Result};
use crate::special::{ln_gamma, ln_gamma_ratio, log_sum_exp};

/// Largest `n` accepted by [`enumerate_set_partitions`]; Bell(12) = 4 213 597.
pub const MAX_ENUMERATION_N: usize = 12;

/// Scalar hyperparameters shared by every partition law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkedHyper {
    /// DP concentration, also the intensity bound of the Cox process.
    pub alpha_star: f64,
    /// Gamma shape of the marked function.
    pub a0: f64,
    /// Gamma rate of the marked function.
    pub b0: f64,
    /// Size exponent parameter of the MFM comparison law.
    pub gamma_mfm: f64,
}

impl MarkedHyper {
    pub fn new(alpha_star: f64, a0: f64, b0: f64, gamma_mfm: f64) -> Result<Self> {
        let h = MarkedHyper {
            alpha_star,
            a0,
            b0,
            gamma_mfm,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_star", self.alpha_star),
            ("a0", self.a0),
            ("b0", self.b0),
            ("gamma_mfm", self.gamma_mfm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DsdpError::config(
                    format!("hyper.{name}"),
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }

    pub fn with_alpha(self, alpha_star: f64) -> Result<Self> {
        MarkedHyper::new(alpha_star, self.a0, self.b0, self.gamma_mfm)
    }
}

/// Which marked function `Q` a law should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QMode {
    Exact,
    Asymptotic,
}

/// An assignment of `n` items to `K` nonempty blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    assignments: Vec<usize>,
    block_sizes: Vec<usize>,
}

/// Result of detaching one item from its block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Detached {
    pub old_block: usize,
    /// `Some(last)` when the old block emptied and block `last` was relabelled
    /// into its slot (`last == old_block` when it was already the last one).
    pub emptied: Option<usize>,
}

const DETACHED: usize = usize::MAX;

impl Partition {
    /// Builds a partition from arbitrary labels, relabelled as a restricted
    /// growth string (first occurrence of each label gets the next index).
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(DsdpError::domain("partition of zero items"));
        }
        let mut map = std::collections::HashMap::new();
        let mut assignments = Vec::with_capacity(labels.len());
        let mut block_sizes = Vec::new();
        for &l in labels {
            let next = map.len();
            let b = *map.entry(l).or_insert(next);
            if b == block_sizes.len() {
                block_sizes.push(0);
            }
            block_sizes[b] += 1;
            assignments.push(b);
        }
        Ok(Partition {
            assignments,
            block_sizes,
        })
    }

    /// Builds a partition whose block indices are used as given; they must be
    /// dense in `[0, K)` with every block nonempty.
    pub fn from_assignments(assignments: Vec<usize>) -> Result<Self> {
        if assignments.is_empty() {
            return Err(DsdpError::domain("partition of zero items"));
        }
        let k = assignments.iter().max().map_or(0, |m| m + 1);
        let mut block_sizes = vec![0usize; k];
        for &b in &assignments {
            block_sizes[b] += 1;
        }
        if let Some(empty) = block_sizes.iter().position(|&s| s == 0) {
            return Err(DsdpError::domain(format!("block {empty} is empty")));
        }
        Ok(Partition {
            assignments,
            block_sizes,
        })
    }

    pub fn single_block(n: usize) -> Self {
        Partition {
            assignments: vec![0; n],
            block_sizes: vec![n],
        }
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            assignments: (0..n).collect(),
            block_sizes: vec![1; n],
        }
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn block_of(&self, item: usize) -> usize {
        self.assignments[item]
    }

    pub fn members(&self, block: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == block)
            .map(|(i, _)| i)
            .collect()
    }

    /// Canonical restricted-growth relabelling of this partition.
    pub fn canonical(&self) -> Partition {
        Partition::from_labels(&self.assignments).expect("nonempty partition")
    }

    /// Block sizes sorted in decreasing order.
    pub fn size_vector(&self) -> SizeVector {
        let mut sizes = self.block_sizes.clone();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        SizeVector(sizes)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.block_sizes.len();
        let mut counts = vec![0usize; k];
        for (i, &b) in self.assignments.iter().enumerate() {
            if b >= k {
                return Err(DsdpError::Invariant(format!(
                    "item {i} assigned to block {b} but K = {k}"
                )));
            }
            counts[b] += 1;
        }
        if counts != self.block_sizes {
            return Err(DsdpError::Invariant(format!(
                "cached block sizes {:?} disagree with assignments {:?}",
                self.block_sizes, counts
            )));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(DsdpError::Invariant("empty block".into()));
        }
        Ok(())
    }

    /// Removes `item` from its block. An emptied block is removed by moving the
    /// last block into its slot.
    pub(crate) fn detach(&mut self, item: usize) -> Detached {
        let old = self.assignments[item];
        debug_assert_ne!(old, DETACHED);
        self.assignments[item] = DETACHED;
        self.block_sizes[old] -= 1;
        if self.block_sizes[old] > 0 {
            return Detached {
                old_block: old,
                emptied: None,
            };
        }
        let last = self.block_sizes.len() - 1;
        self.remove_empty_block(old);
        Detached {
            old_block: old,
            emptied: Some(last),
        }
    }

    /// Attaches a detached `item` to `block`; `block == K` opens a new block.
    pub(crate) fn attach(&mut self, item: usize, block: usize) {
        debug_assert_eq!(self.assignments[item], DETACHED);
        if block == self.block_sizes.len() {
            self.block_sizes.push(0);
        }
        self.block_sizes[block] += 1;
        self.assignments[item] = block;
    }

    /// Moves every member of `from` into `into` and removes `from`. Returns the
    /// index of the block relabelled into the freed slot.
    pub(crate) fn merge_blocks(&mut self, into: usize, from: usize) -> usize {
        debug_assert_ne!(into, from);
        for b in self.assignments.iter_mut() {
            if *b == from {
                *b = into;
            }
        }
        self.block_sizes[into] += self.block_sizes[from];
        self.block_sizes[from] = 0;
        let last = self.block_sizes.len() - 1;
        self.remove_empty_block(from);
        last
    }

    /// Moves the listed members of `from` into a freshly opened block.
    pub(crate) fn split_off(&mut self, from: usize, movers: &[usize]) -> usize {
        let new_block = self.block_sizes.len();
        self.block_sizes.push(0);
        for &i in movers {
            debug_assert_eq!(self.assignments[i], from);
            self.assignments[i] = new_block;
            self.block_sizes[from] -= 1;
            self.block_sizes[new_block] += 1;
        }
        new_block
    }

    fn remove_empty_block(&mut self, empty: usize) {
        let last = self.block_sizes.len() - 1;
        if empty != last {
            for b in self.assignments.iter_mut() {
                if *b == last {
                    *b = empty;
                }
            }
            self.block_sizes.swap(empty, last);
        }
        self.block_sizes.pop();
    }
}

/// Positive block sizes `(n_1, …, n_K)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SizeVector(Vec<usize>);

impl SizeVector {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(DsdpError::domain("size vector must have at least one entry"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(DsdpError::domain("size vector entries must be >= 1"));
        }
        Ok(SizeVector(sizes))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.0.len()
    }

    pub fn sorted_desc(&self) -> SizeVector {
        let mut s = self.0.clone();
        s.sort_unstable_by(|a, b| b.cmp(a));
        SizeVector(s)
    }
}

fn check_block(n_k: usize, n: usize) -> Result<()> {
    if n_k < 1 || n_k > n {
        return Err(DsdpError::domain(format!(
            "block size {n_k} outside [1, {n}]"
        )));
    }
    Ok(())
}

/// `ln Q(n_k)` with `Q(m) = Γ(a₀+m) / (Γ(a₀)Γ(m)) · m⁻¹ · (n+b₀)^(−a₀)`.
pub fn log_marked_q_exact(n_k: usize, n: usize, h: &MarkedHyper) -> Result<f64> {
    check_block(n_k, n)?;
    Ok(log_marked_q_exact_unchecked(n_k, n, h.a0, h.b0))
}

#[inline]
pub(crate) fn log_marked_q_exact_unchecked(n_k: usize, n: usize, a0: f64, b0: f64) -> f64 {
    let m = n_k as f64;
    ln_gamma_ratio(m, a0) - ln_gamma(a0) - m.ln() - a0 * (n as f64 + b0).ln()
}

/// Large-`n` form `ln[(n_k + 1)^(a₀−1) / n^(a₀)]`.
pub fn log_marked_q_asymptotic(n_k: usize, n: usize, a0: f64) -> Result<f64> {
    check_block(n_k, n)?;
    Ok((a0 - 1.0) * (n_k as f64 + 1.0).ln() - a0 * (n as f64).ln())
}

fn log_q(n_k: usize, n: usize, h: &MarkedHyper, mode: QMode) -> f64 {
    match mode {
        QMode::Exact => log_marked_q_exact_unchecked(n_k, n, h.a0, h.b0),
        QMode::Asymptotic => (h.a0 - 1.0) * (n_k as f64 + 1.0).ln() - h.a0 * (n as f64).ln(),
    }
}

/// Unnormalized log mass of any partition with these block sizes:
/// `(α*)^K Γ(α*)/Γ(α*+n) · ∏ Γ(n_k) Q(n_k)`.
pub fn log_mass_from_sizes(sizes: &[usize], h: &MarkedHyper, mode: QMode) -> f64 {
    let n: usize = sizes.iter().sum();
    let k = sizes.len() as f64;
    // summing in sorted order makes the value bitwise independent of block labels
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    let blocks: f64 = sorted
        .iter()
        .map(|&s| ln_gamma(s as f64) + log_q(s, n, h, mode))
        .sum();
    k * h.alpha_star.ln() - ln_gamma_ratio(h.alpha_star, n as f64) + blocks
}

pub fn log_partition_mass(p: &Partition, h: &MarkedHyper, mode: QMode) -> f64 {
    log_mass_from_sizes(p.block_sizes(), h, mode)
}

fn check_enumeration_n(n: usize) -> Result<()> {
    if n < 1 {
        return Err(DsdpError::domain("cannot enumerate partitions of zero items"));
    }
    if n > MAX_ENUMERATION_N {
        return Err(DsdpError::ResourceLimit {
            what: "n",
            requested: n,
            ceiling: MAX_ENUMERATION_N,
        });
    }
    Ok(())
}

/// Calls `visit(rgs, block_sizes)` for every set partition of `n` items, in
/// lexicographic order of restricted growth strings.
pub fn for_each_set_partition<F>(n: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&[usize], &[usize]),
{
    check_enumeration_n(n)?;
    let mut rgs = vec![0usize; n];
    let mut sizes = Vec::with_capacity(n);
    sizes.push(1);
    rgs_recurse(1, &mut rgs, &mut sizes, &mut visit);
    Ok(())
}

fn rgs_recurse<F>(pos: usize, rgs: &mut [usize], sizes: &mut Vec<usize>, visit: &mut F)
where
    F: FnMut(&[usize], &[usize]),
{
    if pos == rgs.len() {
        visit(rgs, sizes);
        return;
    }
    let k = sizes.len();
    for b in 0..=k {
        rgs[pos] = b;
        if b == k {
            sizes.push(1);
        } else {
            sizes[b] += 1;
        }
        rgs_recurse(pos + 1, rgs, sizes, visit);
        if b == k {
            sizes.pop();
        } else {
            sizes[b] -= 1;
        }
    }
}

/// Every set partition of `{1, …, n}` exactly once, as restricted growth strings
/// in lexicographic order.
pub fn enumerate_set_partitions(n: usize) -> Result<Vec<Partition>> {
    let mut out = Vec::new();
    for_each_set_partition(n, |rgs, sizes| {
        out.push(Partition {
            assignments: rgs.to_vec(),
            block_sizes: sizes.to_vec(),
        })
    })?;
    Ok(out)
}

/// `ln Z_n`, the log of the summed unnormalized mass over all partitions of `n`.
pub fn log_partition_normalizer(n: usize, h: &MarkedHyper, mode: QMode) -> Result<f64> {
    let mut logs = Vec::new();
    for_each_set_partition(n, |_, sizes| logs.push(log_mass_from_sizes(sizes, h, mode)))?;
    Ok(log_sum_exp(&logs))
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// Probability (unnormalized, in the scale of the partition mass) that a
/// uniformly ordered partition has exactly the ordered size vector `sizes`.
///
/// Computed by the definitional sum over enumerated partitions:
/// `Σ P(𝓜)/K!` over ordered partitions with size vector `sizes`.
pub fn ordered_size_prob_by_enumeration(sizes: &SizeVector, h: &MarkedHyper) -> Result<f64> {
    let n = sizes.total();
    check_enumeration_n(n)?;
    let target = sizes.sorted_desc();
    let k = target.num_blocks();
    // orderings of one unordered partition that reproduce `sizes` exactly
    let mut consistent = 1.0;
    let mut run = 1usize;
    for w in target.sizes().windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            consistent *= factorial(run);
            run = 1;
        }
    }
    consistent *= factorial(run);
    let per_ordering = consistent / factorial(k);

    let mut total = 0.0;
    let mut scratch = Vec::with_capacity(n);
    for_each_set_partition(n, |_, block_sizes| {
        if block_sizes.len() != k {
            return;
        }
        scratch.clear();
        scratch.extend_from_slice(block_sizes);
        scratch.sort_unstable_by(|a, b| b.cmp(a));
        if scratch == target.sizes() {
            total += log_mass_from_sizes(block_sizes, h, QMode::Exact).exp() * per_ordering;
        }
    })?;
    Ok(total)
}

/// `ln ∏ n_k⁻¹ Γ(a₀+n_k)/(Γ(a₀)Γ(n_k))`, the conditional size weight given K.
pub fn log_cond_size_weight(sizes: &SizeVector, a0: f64) -> f64 {
    sizes
        .sizes()
        .iter()
        .map(|&s| {
            let m = s as f64;
            ln_gamma_ratio(m, a0) - ln_gamma(a0) - m.ln()
        })
        .sum()
}

/// Unnormalized asymptotic size laws given K, as logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeLaws {
    /// `Σ (a₀ − 2) ln n_k`
    pub log_ds: f64,
    /// `Σ (γ − 1) ln n_k`
    pub log_fm: f64,
    /// `−Σ ln n_k`
    pub log_dp: f64,
}

impl SizeLaws {
    /// `(P_DS, P_FM, P_DP)` on the linear scale.
    pub fn values(&self) -> (f64, f64, f64) {
        (self.log_ds.exp(), self.log_fm.exp(), self.log_dp.exp())
    }
}

pub fn size_law_compare(sizes: &SizeVector, a0: f64, gamma_mfm: f64) -> SizeLaws {
    let ln_sum: f64 = sizes.sizes().iter().map(|&s| (s as f64).ln()).sum();
    SizeLaws {
        log_ds: (a0 - 2.0) * ln_sum,
        log_fm: (gamma_mfm - 1.0) * ln_sum,
        log_dp: -ln_sum,
    }
}
