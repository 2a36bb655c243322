//! Conjugate exponential-family machinery for the cluster likelihood.
//!
//! The shipped family is the diagonal Gaussian with known per-dimension
//! variance `v_d` and conjugate prior `θ_d ~ N(m₀_d, v_d / η₂)`, i.e. prior
//! pseudo-statistic `η₁ = η₂ m₀` and pseudo-count `η₂`. In natural form each
//! dimension factors as
//!
//! ```text
//! p(x | θ) = p₀(x) · exp((xθ − θ²/2) / v),      p₀(x) = N(x; 0, v)
//! ```
//!
//! so the block marginal is `∏ p₀(x_j) · ∫ exp(η_A f_A(θ)) dθ` with
//! `η_A = η₂ + |A|` and `η_A f_A(θ) = ((η₁ + Σx) θ − η_A θ²/2) / v + ln c₀`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DsdpError, Result};
use crate::partition_laws::MarkedHyper;
use crate::special::{ln_gamma, ln_normal_pdf};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    GaussianKnownVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpFamSpec {
    pub dimension: usize,
    /// Prior pseudo-statistic η₁ (one entry per dimension).
    pub base_eta1: Vec<f64>,
    /// Prior pseudo-count η₂.
    pub base_eta2: f64,
    pub family: Family,
    pub known_variance: Vec<f64>,
}

impl ExpFamSpec {
    pub fn gaussian_known_variance(
        prior_mean: Vec<f64>,
        eta2: f64,
        known_variance: Vec<f64>,
    ) -> Result<Self> {
        let spec = ExpFamSpec {
            dimension: prior_mean.len(),
            base_eta1: prior_mean.iter().map(|m| m * eta2).collect(),
            base_eta2: eta2,
            family: Family::GaussianKnownVariance,
            known_variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Standard-normal-centred prior in `dimension` dimensions.
    pub fn standard(dimension: usize, eta2: f64, known_variance: f64) -> Result<Self> {
        Self::gaussian_known_variance(vec![0.0; dimension], eta2, vec![known_variance; dimension])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(DsdpError::config("expfam.dimension", "must be >= 1"));
        }
        if !(self.base_eta2.is_finite() && self.base_eta2 > 0.0) {
            return Err(DsdpError::config("expfam.eta2", "must be finite and > 0"));
        }
        if self.base_eta1.len() != self.dimension {
            return Err(DsdpError::config(
                "expfam.prior_mean",
                format!("expected {} entries", self.dimension),
            ));
        }
        if self.base_eta1.iter().any(|v| !v.is_finite()) {
            return Err(DsdpError::config("expfam.prior_mean", "must be finite"));
        }
        if self.known_variance.len() != self.dimension {
            return Err(DsdpError::config(
                "expfam.known_variance",
                format!("expected {} entries", self.dimension),
            ));
        }
        if self.known_variance.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(DsdpError::config("expfam.known_variance", "entries must be > 0"));
        }
        Ok(())
    }

    pub fn prior_mean(&self) -> Vec<f64> {
        self.base_eta1.iter().map(|e| e / self.base_eta2).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(DsdpError::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `ln p₀(x)`, the data-only factor of the likelihood.
    #[inline]
    pub fn ln_base_measure(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.known_variance)
            .map(|(&xd, &v)| ln_normal_pdf(xd, 0.0, v))
            .sum()
    }

    /// `ln p(x | θ)`.
    #[inline]
    pub fn log_likelihood(&self, x: &[f64], theta: &[f64]) -> f64 {
        x.iter()
            .zip(theta)
            .zip(&self.known_variance)
            .map(|((&xd, &td), &v)| ln_normal_pdf(xd, td, v))
            .sum()
    }

    /// Posterior predictive `ln p(x | block)`; an empty block gives the prior predictive.
    #[inline]
    pub fn log_predictive(&self, stats: &SuffStats, x: &[f64]) -> f64 {
        let eta = self.base_eta2 + stats.count as f64;
        let mut acc = 0.0;
        for d in 0..self.dimension {
            let v = self.known_variance[d];
            let mean = (self.base_eta1[d] + stats.stat_sum[d]) / eta;
            acc += ln_normal_pdf(x[d], mean, v * (1.0 + 1.0 / eta));
        }
        acc
    }

    /// Conjugate posterior mean `(η₁ + Σx) / (η₂ + |A|)`.
    pub fn posterior_mean(&self, stats: &SuffStats) -> Vec<f64> {
        let eta = self.base_eta2 + stats.count as f64;
        self.base_eta1
            .iter()
            .zip(&stats.stat_sum)
            .map(|(e1, s)| (e1 + s) / eta)
            .collect()
    }

    /// Draw from the posterior of θ given the block (the prior when empty).
    pub fn sample_posterior<R: Rng + ?Sized>(&self, stats: &SuffStats, rng: &mut R) -> Vec<f64> {
        let eta = self.base_eta2 + stats.count as f64;
        (0..self.dimension)
            .map(|d| {
                let mean = (self.base_eta1[d] + stats.stat_sum[d]) / eta;
                let z: f64 = rng.sample(StandardNormal);
                mean + z * (self.known_variance[d] / eta).sqrt()
            })
            .collect()
    }

    /// Writes a draw from the base distribution H₀ into `out`.
    #[inline]
    pub fn sample_prior_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for d in 0..self.dimension {
            let z: f64 = rng.sample(StandardNormal);
            out[d] = self.base_eta1[d] / self.base_eta2
                + z * (self.known_variance[d] / self.base_eta2).sqrt();
        }
    }

    /// `η_A f_A(θ)` for one block, summed over dimensions.
    pub fn scaled_log_kernel(&self, stats: &SuffStats, theta: &[f64]) -> f64 {
        let eta = self.base_eta2 + stats.count as f64;
        let mut acc = 0.0;
        for d in 0..self.dimension {
            let v = self.known_variance[d];
            let e1 = self.base_eta1[d];
            let b = e1 + stats.stat_sum[d];
            let m0 = e1 / self.base_eta2;
            let ln_c0 = 0.5 * (self.base_eta2 / (2.0 * PI * v)).ln()
                - self.base_eta2 * m0 * m0 / (2.0 * v);
            acc += (b * theta[d] - 0.5 * eta * theta[d] * theta[d]) / v + ln_c0;
        }
        acc
    }
}

/// Accumulated statistics of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffStats {
    /// `|A|`
    pub count: usize,
    /// `Σ T₁(x_j)`
    pub stat_sum: Vec<f64>,
    /// `Σ ln p₀(x_j)`, the data-only part of the evidence.
    pub log_base_sum: f64,
}

impl SuffStats {
    pub fn empty(dimension: usize) -> Self {
        SuffStats {
            count: 0,
            stat_sum: vec![0.0; dimension],
            log_base_sum: 0.0,
        }
    }

    pub fn from_points<'a, I>(spec: &ExpFamSpec, points: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut s = SuffStats::empty(spec.dimension);
        for x in points {
            s.add(spec, x)?;
        }
        Ok(s)
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn add(&mut self, spec: &ExpFamSpec, x: &[f64]) -> Result<()> {
        spec.check_dim(x)?;
        self.add_unchecked(spec, x);
        Ok(())
    }

    #[inline]
    pub(crate) fn add_unchecked(&mut self, spec: &ExpFamSpec, x: &[f64]) {
        self.count += 1;
        for (s, xd) in self.stat_sum.iter_mut().zip(x) {
            *s += xd;
        }
        self.log_base_sum += spec.ln_base_measure(x);
    }

    #[inline]
    pub(crate) fn remove_unchecked(&mut self, spec: &ExpFamSpec, x: &[f64]) {
        debug_assert!(self.count > 0);
        self.count -= 1;
        if self.count == 0 {
            self.stat_sum.iter_mut().for_each(|s| *s = 0.0);
            self.log_base_sum = 0.0;
            return;
        }
        for (s, xd) in self.stat_sum.iter_mut().zip(x) {
            *s -= xd;
        }
        self.log_base_sum -= spec.ln_base_measure(x);
    }

    pub fn merged(&self, other: &SuffStats) -> SuffStats {
        SuffStats {
            count: self.count + other.count,
            stat_sum: self
                .stat_sum
                .iter()
                .zip(&other.stat_sum)
                .map(|(a, b)| a + b)
                .collect(),
            log_base_sum: self.log_base_sum + other.log_base_sum,
        }
    }
}

/// Returns `stats` with one more observation.
pub fn accumulate(stats: &SuffStats, x: &[f64], spec: &ExpFamSpec) -> Result<SuffStats> {
    let mut out = stats.clone();
    out.add(spec, x)?;
    Ok(out)
}

fn require_nonempty(stats: &SuffStats) -> Result<()> {
    if stats.is_empty() {
        return Err(DsdpError::domain("statistics of an empty block"));
    }
    Ok(())
}

/// Closed-form `ln ∫ exp(η_A f_A(θ)) dθ` per block.
fn log_integral_closed_form(stats: &SuffStats, spec: &ExpFamSpec) -> f64 {
    let eta = spec.base_eta2 + stats.count as f64;
    let mut acc = 0.0;
    for d in 0..spec.dimension {
        let v = spec.known_variance[d];
        let e1 = spec.base_eta1[d];
        let b = e1 + stats.stat_sum[d];
        let m0 = e1 / spec.base_eta2;
        acc += 0.5 * (spec.base_eta2 / eta).ln() + (b * b / eta - spec.base_eta2 * m0 * m0) / (2.0 * v);
    }
    acc
}

/// `ln m_q(x_A)`: conjugate log evidence of a block, plus `ln c` when a
/// thinning correction `c` is supplied.
pub fn log_marginal_mq(
    stats: &SuffStats,
    spec: &ExpFamSpec,
    sgp_correction: Option<f64>,
) -> Result<f64> {
    require_nonempty(stats)?;
    let base = stats.log_base_sum + log_integral_closed_form(stats, spec);
    match sgp_correction {
        None => Ok(base),
        Some(c) if c.is_finite() && c > 0.0 => Ok(base + c.ln()),
        Some(c) => Err(DsdpError::domain(format!("thinning correction must be > 0, got {c}"))),
    }
}

/// Empirical topic estimate `A₁'⁻¹(mean T₁(x))`; the sample mean for this family.
pub fn map_topic(stats: &SuffStats, spec: &ExpFamSpec) -> Result<Vec<f64>> {
    require_nonempty(stats)?;
    let _ = spec;
    let m = stats.count as f64;
    Ok(stats.stat_sum.iter().map(|s| s / m).collect())
}

/// Laplace approximation of `ln ∫ exp(η_A f_A(θ)) dθ` around the maximizer of `f_A`.
pub fn laplace_log_integral(stats: &SuffStats, spec: &ExpFamSpec) -> Result<f64> {
    require_nonempty(stats)?;
    let eta = spec.base_eta2 + stats.count as f64;
    let mode = spec.posterior_mean(stats);
    let peak = spec.scaled_log_kernel(stats, &mode);
    let mut log_width = 0.0;
    for d in 0..spec.dimension {
        // f_A''(θ) = −1 / v_d for this family
        let curvature = -1.0 / spec.known_variance[d];
        if !(curvature < 0.0) {
            return Err(DsdpError::Numerical(format!(
                "non-negative curvature {curvature} at the mode"
            )));
        }
        log_width += 0.5 * (2.0 * PI / (eta * curvature.abs())).ln();
    }
    Ok(peak + log_width)
}

/// A block `B_l` and the two pieces `A_l`, `A_{K+1}` it splits into.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTriple {
    pub parent: SuffStats,
    pub left: SuffStats,
    pub right: SuffStats,
}

impl SplitTriple {
    pub fn new(parent: SuffStats, left: SuffStats, right: SuffStats) -> Result<Self> {
        if left.is_empty() || right.is_empty() {
            return Err(DsdpError::domain("split with an empty side"));
        }
        if parent.count != left.count + right.count {
            return Err(DsdpError::domain(format!(
                "parent count {} != {} + {}",
                parent.count, left.count, right.count
            )));
        }
        for ((p, l), r) in parent.stat_sum.iter().zip(&left.stat_sum).zip(&right.stat_sum) {
            let scale = 1.0 + p.abs().max(l.abs()).max(r.abs());
            if (p - (l + r)).abs() > 1e-9 * scale {
                return Err(DsdpError::domain("parent statistic is not the sum of its parts"));
            }
        }
        Ok(SplitTriple {
            parent,
            left,
            right,
        })
    }

    pub fn from_parts(left: SuffStats, right: SuffStats) -> Result<Self> {
        let parent = left.merged(&right);
        SplitTriple::new(parent, left, right)
    }
}

/// `ln(c_Γ c_Q)`, the mass-and-marked-function ratio of a split.
pub fn log_ratio_mass_marked(t: &SplitTriple, n: usize, h: &MarkedHyper) -> Result<f64> {
    let (l, r, b) = (t.left.count, t.right.count, t.parent.count);
    if l == 0 || r == 0 {
        return Err(DsdpError::domain("split with an empty side"));
    }
    let (lf, rf, bf) = (l as f64, r as f64, b as f64);
    let sizes = 1.5 * lf.ln() + 1.5 * rf.ln();
    let gammas = ln_gamma(h.a0 + lf) + ln_gamma(h.a0 + rf);
    Ok(sizes - 1.5 * bf.ln() + h.a0 * (n as f64 + h.b0).ln() + ln_gamma(h.a0)
        + ln_gamma(h.a0 + bf)
        - gammas)
}

/// `ln c_φ = ln m_q(A_l) + ln m_q(A_{K+1}) − ln m_q(B_l)`.
pub fn log_ratio_c_phi(t: &SplitTriple, spec: &ExpFamSpec) -> Result<f64> {
    let left = log_marginal_mq(&t.left, spec, None)?;
    let right = log_marginal_mq(&t.right, spec, None)?;
    let parent = log_marginal_mq(&t.parent, spec, None)?;
    Ok((left + right) - parent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec1() -> ExpFamSpec {
        ExpFamSpec::standard(1, 1.0, 1.0).unwrap()
    }

    fn stats(spec: &ExpFamSpec, xs: &[f64]) -> SuffStats {
        SuffStats::from_points(spec, xs.iter().map(std::slice::from_ref)).unwrap()
    }

    #[test]
    fn accumulate_examples() {
        let spec = spec1();
        let s = accumulate(&SuffStats::empty(1), &[2.0], &spec).unwrap();
        assert_eq!((s.count, s.stat_sum.clone()), (1, vec![2.0]));
        let two = SuffStats {
            count: 2,
            stat_sum: vec![3.0],
            log_base_sum: 0.0,
        };
        let s = accumulate(&two, &[1.0], &spec).unwrap();
        assert_eq!((s.count, s.stat_sum.clone()), (3, vec![4.0]));
        let s = accumulate(&SuffStats::empty(1), &[0.0], &spec).unwrap();
        assert_eq!((s.count, s.stat_sum), (1, vec![0.0]));
    }

    #[test]
    fn accumulate_rejects_wrong_dimension() {
        let spec = spec1();
        assert!(matches!(
            accumulate(&SuffStats::empty(1), &[1.0, 2.0], &spec),
            Err(DsdpError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn marginal_closed_form_values() {
        let spec = spec1();
        let got = log_marginal_mq(&stats(&spec, &[0.0]), &spec, None).unwrap();
        assert!((got - (-0.5 * (4.0 * PI).ln())).abs() < 1e-14);
        assert!((got - (-1.26551)).abs() < 1e-5);
        let got = log_marginal_mq(&stats(&spec, &[1.0]), &spec, None).unwrap();
        assert!((got - (-1.51551)).abs() < 1e-5);
        // chain rule of predictives: N(0;0,2) N(0;0,1.5)
        let got = log_marginal_mq(&stats(&spec, &[0.0, 0.0]), &spec, None).unwrap();
        let chain = ln_normal_pdf(0.0, 0.0, 2.0) + ln_normal_pdf(0.0, 0.0, 1.5);
        assert!((got - chain).abs() < 1e-13);
    }

    #[test]
    fn marginal_adds_thinning_correction() {
        let spec = spec1();
        let s = stats(&spec, &[0.3]);
        let a = log_marginal_mq(&s, &spec, None).unwrap();
        let b = log_marginal_mq(&s, &spec, Some(2.0)).unwrap();
        assert!((b - a - 2f64.ln()).abs() < 1e-15);
        assert!(log_marginal_mq(&s, &spec, Some(0.0)).is_err());
        assert!(log_marginal_mq(&SuffStats::empty(1), &spec, None).is_err());
    }

    #[test]
    fn incremental_evidence_matches_batch() {
        let spec = ExpFamSpec::gaussian_known_variance(vec![0.5, -1.0], 0.7, vec![1.3, 0.4]).unwrap();
        let pts: Vec<[f64; 2]> = (0..40)
            .map(|i| [(i as f64 * 0.37).sin() * 3.0, (i as f64 * 1.1).cos()])
            .collect();
        let mut incremental = 0.0;
        let mut s = SuffStats::empty(2);
        for p in &pts {
            incremental += spec.log_predictive(&s, p);
            s = accumulate(&s, p, &spec).unwrap();
        }
        let batch = log_marginal_mq(&s, &spec, None).unwrap();
        assert!((incremental - batch).abs() < 1e-12 * batch.abs().max(1.0));
    }

    #[test]
    fn map_topic_examples() {
        let spec = spec1();
        assert_eq!(map_topic(&stats(&spec, &[1.0, 2.0, 3.0]), &spec).unwrap(), vec![2.0]);
        assert_eq!(map_topic(&stats(&spec, &[5.0]), &spec).unwrap(), vec![5.0]);
        assert_eq!(map_topic(&stats(&spec, &[-1.0, 1.0]), &spec).unwrap(), vec![0.0]);
        assert!(map_topic(&SuffStats::empty(1), &spec).is_err());
    }

    #[test]
    fn laplace_equals_evidence_without_data_term() {
        let spec = ExpFamSpec::gaussian_known_variance(vec![0.2, 3.0], 2.5, vec![0.5, 2.0]).unwrap();
        let s = SuffStats::from_points(
            &spec,
            [[1.0, 2.0], [0.5, 4.0], [-0.3, 2.2]].iter().map(|p| &p[..]),
        )
        .unwrap();
        let laplace = laplace_log_integral(&s, &spec).unwrap();
        let evidence = log_marginal_mq(&s, &spec, None).unwrap();
        assert!((laplace - (evidence - s.log_base_sum)).abs() < 1e-12);
    }

    #[test]
    fn mass_marked_ratio_examples() {
        let h = MarkedHyper::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let spec = spec1();
        let t = SplitTriple::from_parts(stats(&spec, &[0.0, 0.0]), stats(&spec, &[0.0, 0.0])).unwrap();
        // (2√2·2√2/8)·5·Γ(1)Γ(5)/(Γ(3)Γ(3)) = 30
        assert!((log_ratio_mass_marked(&t, 4, &h).unwrap() - 30f64.ln()).abs() < 1e-13);
        let t = SplitTriple::from_parts(stats(&spec, &[0.0]), stats(&spec, &[0.0])).unwrap();
        let oracle = 1.0 / (2.0 * 2f64.sqrt()) * 3.0 * 2.0;
        assert!((log_ratio_mass_marked(&t, 2, &h).unwrap() - oracle.ln()).abs() < 1e-13);
        assert!((oracle - 2.12132).abs() < 1e-5);

        // b0 → 0 with a0 = 1 leaves (n + b0)^{a0} → n
        let tiny = MarkedHyper::new(1.0, 1.0, 1e-300, 1.0).unwrap();
        let with = log_ratio_mass_marked(&t, 2, &tiny).unwrap();
        assert!((with - (oracle / 3.0 * 2.0).ln()).abs() < 1e-13);
    }

    #[test]
    fn mass_marked_ratio_is_symmetric() {
        let h = MarkedHyper::new(2.0, 1.7, 0.4, 1.0).unwrap();
        let spec = spec1();
        for (l, r) in [(1usize, 9usize), (3, 4), (10, 200)] {
            let sl = stats(&spec, &vec![0.1; l]);
            let sr = stats(&spec, &vec![0.2; r]);
            let a = SplitTriple::from_parts(sl.clone(), sr.clone()).unwrap();
            let b = SplitTriple::from_parts(sr, sl).unwrap();
            assert_eq!(
                log_ratio_mass_marked(&a, 500, &h).unwrap(),
                log_ratio_mass_marked(&b, 500, &h).unwrap()
            );
        }
    }

    #[test]
    fn c_phi_examples() {
        let spec = spec1();
        let t = SplitTriple::from_parts(stats(&spec, &[0.0]), stats(&spec, &[0.0])).unwrap();
        let got = log_ratio_c_phi(&t, &spec).unwrap();
        let want = ln_normal_pdf(0.0, 0.0, 2.0) - ln_normal_pdf(0.0, 0.0, 1.5);
        assert!((got - want).abs() < 1e-13);
        assert_eq!(got, log_ratio_c_phi(&t, &spec).unwrap());

        let far = SplitTriple::from_parts(stats(&spec, &[-10.0]), stats(&spec, &[10.0])).unwrap();
        assert!(log_ratio_c_phi(&far, &spec).unwrap() > 10.0);
    }

    #[test]
    fn split_triple_validation() {
        let spec = spec1();
        let a = stats(&spec, &[1.0]);
        let b = stats(&spec, &[2.0]);
        assert!(SplitTriple::new(a.clone(), a.clone(), b.clone()).is_err());
        assert!(SplitTriple::from_parts(SuffStats::empty(1), b).is_err());
    }
}
