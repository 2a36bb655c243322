//! Sigmoidal Gaussian Cox-process prior over topic locations.
//!
//! Knots `0..K` are the accepted topics (one per cluster); knots `K..K+M` are
//! latent thinned points. The intensity over the topic window is
//! `λ(θ) = (α* / |V|) σ(Y(θ))`, so `α*` bounds the expected total point count.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DsdpError, Result};
use crate::special::sigmoid;

/// Squared-exponential kernel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub variance: f64,
    pub lengthscale: Vec<f64>,
    pub jitter: f64,
}

impl KernelParams {
    pub fn new(variance: f64, lengthscale: Vec<f64>, jitter: f64) -> Result<Self> {
        let kp = KernelParams {
            variance,
            lengthscale,
            jitter,
        };
        kp.validate()?;
        Ok(kp)
    }

    pub fn isotropic(dimension: usize, variance: f64, lengthscale: f64, jitter: f64) -> Result<Self> {
        Self::new(variance, vec![lengthscale; dimension], jitter)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(DsdpError::config("kernel.variance", "must be finite and > 0"));
        }
        if self.lengthscale.is_empty() || self.lengthscale.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(DsdpError::config("kernel.lengthscale", "entries must be finite and > 0"));
        }
        if !(self.jitter > 0.0 && self.jitter <= 1e-4 * self.variance) {
            return Err(DsdpError::config(
                "kernel.jitter",
                format!("must lie in (0, 1e-4 * variance], got {}", self.jitter),
            ));
        }
        Ok(())
    }

    /// `k(a, b) = variance · exp(−½ Σ_d (a_d − b_d)² / ℓ_d²)`
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscale) {
            let z = (x - y) / l;
            r2 += z * z;
        }
        self.variance * (-0.5 * r2).exp()
    }
}

/// Axis-aligned window in which latent points are proposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TopicDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(DsdpError::domain("topic domain bounds must have equal nonzero length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u)) {
            return Err(DsdpError::domain("topic domain needs finite lower < upper"));
        }
        Ok(TopicDomain { lower, upper })
    }

    /// Bounding box of `rows`, widened by 10% of its extent (5% per side).
    pub fn from_points<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut lower: Vec<f64> = Vec::new();
        let mut upper: Vec<f64> = Vec::new();
        for row in rows {
            if lower.is_empty() {
                lower = row.to_vec();
                upper = row.to_vec();
                continue;
            }
            for d in 0..row.len() {
                lower[d] = lower[d].min(row[d]);
                upper[d] = upper[d].max(row[d]);
            }
        }
        if lower.is_empty() {
            return Err(DsdpError::domain("topic domain of an empty dataset"));
        }
        for d in 0..lower.len() {
            let pad = if upper[d] > lower[d] {
                0.05 * (upper[d] - lower[d])
            } else {
                0.5
            };
            lower[d] -= pad;
            upper[d] += pad;
        }
        TopicDomain::new(lower, upper)
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgpState {
    pub locations: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub accepted_count: usize,
    pub alpha_star: f64,
    /// Probability of proposing an insertion, `b(·,·)`.
    pub proposal_b: f64,
    pub domain: TopicDomain,
}

impl SgpState {
    pub fn new(alpha_star: f64, domain: TopicDomain) -> Self {
        SgpState {
            locations: Vec::new(),
            values: Vec::new(),
            accepted_count: 0,
            alpha_star,
            proposal_b: 0.5,
            domain,
        }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn thinned_count(&self) -> usize {
        self.locations.len() - self.accepted_count
    }

    pub fn push_accepted(&mut self, location: Vec<f64>, value: f64) {
        let k = self.accepted_count;
        self.locations.insert(k, location);
        self.values.insert(k, value);
        self.accepted_count += 1;
    }

    pub fn push_thinned(&mut self, location: Vec<f64>, value: f64) {
        self.locations.push(location);
        self.values.push(value);
    }

    /// Removes accepted knot `k`, moving the last accepted knot into its slot
    /// (mirrors the block relabelling of the partition).
    pub fn swap_remove_accepted(&mut self, k: usize) -> (Vec<f64>, f64) {
        let last = self.accepted_count - 1;
        self.locations.swap(k, last);
        self.values.swap(k, last);
        self.accepted_count -= 1;
        (self.locations.remove(last), self.values.remove(last))
    }

    pub fn remove_thinned(&mut self, j: usize) -> (Vec<f64>, f64) {
        let idx = self.accepted_count + j;
        (self.locations.remove(idx), self.values.remove(idx))
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations.len() != self.values.len() || self.accepted_count > self.locations.len() {
            return Err(DsdpError::Invariant("SGP knot bookkeeping is inconsistent".into()));
        }
        self.check_thinning_range()
    }

    /// Every stored value must map to a thinning probability strictly inside (0, 1).
    pub fn check_thinning_range(&self) -> Result<()> {
        for (i, &y) in self.values.iter().enumerate() {
            let s = sigmoid(y);
            if !(s > 0.0 && s < 1.0) {
                return Err(DsdpError::Invariant(format!(
                    "σ(Y_{i}) = {s} outside (0, 1) for Y = {y}"
                )));
            }
        }
        Ok(())
    }
}

/// `Σ_ij = k(θ_i, θ_j) + jitter·[i = j]`.
pub fn kernel_matrix(locs: &[Vec<f64>], kp: &KernelParams) -> Result<DMatrix<f64>> {
    if locs.is_empty() {
        return Err(DsdpError::domain("kernel matrix of zero locations"));
    }
    if locs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DsdpError::domain("non-finite topic location"));
    }
    let mut m = raw_kernel(locs, kp);
    for i in 0..locs.len() {
        m[(i, i)] += kp.jitter;
    }
    Ok(m)
}

fn raw_kernel(locs: &[Vec<f64>], kp: &KernelParams) -> DMatrix<f64> {
    let n = locs.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = kp.variance;
        for j in 0..i {
            let v = kp.eval(&locs[i], &locs[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Right-hand side of the stationarity system:
/// `F_k(Y) = Σ_{i<K} σ(−Y_i) k_ki − Σ_{i≥K} σ(Y_i) k_ki`.
fn fixed_point_map(kernel: &DMatrix<f64>, accepted: usize, y: &DVector<f64>) -> DVector<f64> {
    let drive = DVector::from_iterator(
        y.len(),
        y.iter()
            .enumerate()
            .map(|(i, &v)| if i < accepted { sigmoid(-v) } else { -sigmoid(v) }),
    );
    kernel * drive
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Max-norm residual `‖F(Y) − Y‖∞` of the stationarity system at `values`.
pub fn intensity_residual(state: &SgpState, kp: &KernelParams, values: &[f64]) -> f64 {
    let kernel = raw_kernel(&state.locations, kp);
    let y = DVector::from_column_slice(values);
    max_abs(&(fixed_point_map(&kernel, state.accepted_count, &y) - &y))
}

const DAMPING: f64 = 0.5;

/// Solves `Y = F(Y)` by damped fixed-point iteration from `Y = 0`.
///
/// When the damped map stops contracting (dense knot sets make its Jacobian
/// exceed the contraction range) the solver continues with Newton steps on
/// `Y − F(Y)`, whose Jacobian `I + KD` is always nonsingular.
pub fn solve_intensity_values(
    state: &SgpState,
    kp: &KernelParams,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    solve_intensity_from(state, kp, &vec![0.0; state.len()], tol, max_iter)
}

/// As [`solve_intensity_values`] but warm-started from `start`.
pub fn solve_intensity_from(
    state: &SgpState,
    kp: &KernelParams,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    if state.is_empty() {
        return Err(DsdpError::domain("no knots to solve for"));
    }
    let kernel = raw_kernel(&state.locations, kp);
    let k = state.accepted_count;
    let mut y = DVector::from_column_slice(start);
    let mut residual = fixed_point_map(&kernel, k, &y) - &y;
    let mut norm = max_abs(&residual);
    let mut iter = 0;
    let mut newton = false;
    while norm >= tol {
        if iter >= max_iter {
            return Err(DsdpError::Convergence {
                iterations: iter,
                residual: norm,
            });
        }
        iter += 1;
        let candidate = if newton {
            newton_step(&kernel, k, &y, &residual)?
        } else {
            &y + &residual * DAMPING
        };
        let next_residual = fixed_point_map(&kernel, k, &candidate) - &candidate;
        let next_norm = max_abs(&next_residual);
        if !newton && next_norm > norm {
            newton = true;
            continue;
        }
        y = candidate;
        residual = next_residual;
        norm = next_norm;
    }
    Ok(y.iter().copied().collect())
}

fn newton_step(
    kernel: &DMatrix<f64>,
    accepted: usize,
    y: &DVector<f64>,
    residual: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = y.len();
    let mut jac = DMatrix::identity(n, n);
    for j in 0..n {
        let s = sigmoid(y[j]);
        let slope = s * (1.0 - s);
        for i in 0..n {
            jac[(i, j)] += kernel[(i, j)] * slope;
        }
    }
    let step = jac
        .lu()
        .solve(residual)
        .ok_or_else(|| DsdpError::Numerical("singular Newton system".into()))?;
    // backtrack on the residual norm
    let base = max_abs(residual);
    let mut t = 1.0;
    for _ in 0..30 {
        let cand = y + &step * t;
        let r = fixed_point_map(kernel, accepted, &cand) - &cand;
        if max_abs(&r) < base {
            return Ok(cand);
        }
        t *= 0.5;
    }
    Ok(y + &step * t)
}

/// GP conditional of `Y(·)` given the knots of an [`SgpState`].
#[derive(Debug, Clone)]
pub struct GpConditional {
    locations: Vec<Vec<f64>>,
    chol: Option<Cholesky<f64, Dyn>>,
    weights: DVector<f64>,
    kernel: KernelParams,
}

impl GpConditional {
    pub fn new(state: &SgpState, kp: &KernelParams) -> Result<Self> {
        if state.is_empty() {
            return Ok(GpConditional {
                locations: Vec::new(),
                chol: None,
                weights: DVector::zeros(0),
                kernel: kp.clone(),
            });
        }
        let cov = kernel_matrix(&state.locations, kp)?;
        let chol = Cholesky::new(cov)
            .ok_or_else(|| DsdpError::Numerical("kernel matrix is not positive definite".into()))?;
        let weights = chol.solve(&DVector::from_column_slice(&state.values));
        Ok(GpConditional {
            locations: state.locations.clone(),
            chol: Some(chol),
            weights,
            kernel: kp.clone(),
        })
    }

    /// Conditional mean `k*ᵀ Σ⁻¹ Y` at `theta`.
    #[inline]
    pub fn mean(&self, theta: &[f64]) -> f64 {
        self.locations
            .iter()
            .zip(self.weights.iter())
            .map(|(loc, w)| self.kernel.eval(theta, loc) * w)
            .sum()
    }

    /// Conditional mean and variance at `theta`.
    pub fn mean_and_variance(&self, theta: &[f64]) -> (f64, f64) {
        let Some(chol) = &self.chol else {
            return (0.0, self.kernel.variance);
        };
        let kstar = DVector::from_iterator(
            self.locations.len(),
            self.locations.iter().map(|loc| self.kernel.eval(theta, loc)),
        );
        let mean = kstar.dot(&self.weights);
        let v = chol.l().solve_lower_triangular(&kstar).expect("triangular factor");
        let var = (self.kernel.variance - v.norm_squared()).max(0.0);
        (mean, var)
    }
}

/// `σ(Y(θ))` with `Y(θ)` the GP conditional mean given the knots.
pub fn thinning_value(theta: &[f64], state: &SgpState, kp: &KernelParams) -> Result<f64> {
    if state.is_empty() {
        return Err(DsdpError::domain("thinning value needs at least one knot"));
    }
    let gp = GpConditional::new(state, kp)?;
    Ok(sigmoid(gp.mean(theta)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Insert,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub kind: MoveKind,
    pub accepted: bool,
    /// `a_ins` or `a_del` before truncation at one; zero for a delete with `M = 0`.
    pub ratio: f64,
}

/// One birth/death Metropolis–Hastings move on the latent thinned points.
pub fn latent_birth_death_step<R: Rng + ?Sized>(
    state: &SgpState,
    kp: &KernelParams,
    rng: &mut R,
) -> Result<(SgpState, MoveRecord)> {
    let mut next = state.clone();
    let gp = GpConditional::new(state, kp)?;
    let record = birth_death_in_place(&mut next, &gp, rng)?;
    Ok((next, record))
}

/// In-place birth/death move; `gp` must be the conditional of the current knots.
pub(crate) fn birth_death_in_place<R: Rng + ?Sized>(
    state: &mut SgpState,
    gp: &GpConditional,
    rng: &mut R,
) -> Result<MoveRecord> {
    let b = state.proposal_b;
    let m = state.thinned_count();
    if rng.random::<f64>() < b {
        let loc = state.domain.sample_uniform(rng);
        let (mean, var) = gp.mean_and_variance(&loc);
        let z: f64 = rng.sample(StandardNormal);
        let y = mean + var.sqrt() * z;
        let ratio = (1.0 - b) / b * state.alpha_star * sigmoid(-y) / (m as f64 + 1.0);
        let accepted = rng.random::<f64>() < ratio;
        if accepted {
            state.push_thinned(loc, y);
        }
        Ok(MoveRecord {
            kind: MoveKind::Insert,
            accepted,
            ratio,
        })
    } else {
        if m == 0 {
            return Ok(MoveRecord {
                kind: MoveKind::Delete,
                accepted: false,
                ratio: 0.0,
            });
        }
        let j = rng.random_range(0..m);
        let y = state.values[state.accepted_count + j];
        let ratio = b / (1.0 - b) * m as f64 / (state.alpha_star * sigmoid(-y));
        let accepted = rng.random::<f64>() < ratio;
        if accepted {
            state.remove_thinned(j);
        }
        Ok(MoveRecord {
            kind: MoveKind::Delete,
            accepted,
            ratio,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kp1(jitter: f64) -> KernelParams {
        KernelParams::isotropic(1, 1.0, 1.0, jitter).unwrap()
    }

    fn domain1() -> TopicDomain {
        TopicDomain::new(vec![-2.0], vec![2.0]).unwrap()
    }

    fn state_with(acc: &[(f64, f64)], thin: &[(f64, f64)], alpha: f64) -> SgpState {
        let mut s = SgpState::new(alpha, domain1());
        for &(loc, y) in acc {
            s.push_accepted(vec![loc], y);
        }
        for &(loc, y) in thin {
            s.push_thinned(vec![loc], y);
        }
        s
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn kernel_matrix_examples() {
        let kp = KernelParams::isotropic(1, 2.0, 0.5, 1e-6).unwrap();
        let m = kernel_matrix(&[vec![0.3]], &kp).unwrap();
        assert_eq!(m[(0, 0)], 2.0 + 1e-6);
        let m = kernel_matrix(&[vec![0.3], vec![0.3]], &kp).unwrap();
        assert_eq!(m[(0, 1)], 2.0);
        let d = 0.5 * 2f64.sqrt();
        let m = kernel_matrix(&[vec![0.0], vec![d]], &kp).unwrap();
        assert!((m[(0, 1)] - 2.0 * (-1.0f64).exp()).abs() < 1e-15);
        assert!(m.clone().cholesky().is_some());
        assert!(kernel_matrix(&[vec![f64::NAN]], &kp).is_err());
    }

    #[test]
    fn kernel_params_validation() {
        assert!(KernelParams::isotropic(1, 1.0, 1.0, 1e-3).is_err());
        assert!(KernelParams::isotropic(1, 0.0, 1.0, 1e-9).is_err());
        assert!(KernelParams::isotropic(1, 1.0, -1.0, 1e-9).is_err());
    }

    #[test]
    fn fixed_point_single_accepted_knot() {
        let s = state_with(&[(0.0, 0.0)], &[], 1.0);
        let y = solve_intensity_values(&s, &kp1(1e-9), 1e-12, 10_000).unwrap();
        let root = bisect(|y| y - sigmoid(-y), -5.0, 5.0);
        assert!((y[0] - root).abs() < 1e-8);
        assert!((root - 0.40105).abs() < 1e-5);
    }

    #[test]
    fn fixed_point_single_thinned_knot() {
        let s = state_with(&[], &[(0.0, 0.0)], 1.0);
        let y = solve_intensity_values(&s, &kp1(1e-9), 1e-12, 10_000).unwrap();
        let root = bisect(|y| y + sigmoid(y), -5.0, 5.0);
        assert!((y[0] - root).abs() < 1e-8);
        assert!((y[0] + 0.40105).abs() < 1e-5);
    }

    #[test]
    fn fixed_point_coincident_pair_matches_newton_oracle() {
        let s = state_with(&[(0.5, 0.0)], &[(0.5, 0.0)], 1.0);
        let kp = kp1(1e-9);
        let y = solve_intensity_values(&s, &kp, 1e-10, 10_000).unwrap();
        // independent 2-D damped Newton on G(Y) = Y − F(Y) with k ≡ 1
        let g = |y1: f64, y2: f64| {
            let f = sigmoid(-y1) - sigmoid(y2);
            (y1 - f, y2 - f)
        };
        let (mut a, mut b) = (0.7, -0.3);
        for _ in 0..100 {
            let (g1, g2) = g(a, b);
            let d1 = sigmoid(a) * sigmoid(-a);
            let d2 = sigmoid(b) * sigmoid(-b);
            // Jacobian [[1 + d1, d2], [d1, 1 + d2]]
            let det = (1.0 + d1) * (1.0 + d2) - d1 * d2;
            let s1 = ((1.0 + d2) * g1 - d2 * g2) / det;
            let s2 = (-d1 * g1 + (1.0 + d1) * g2) / det;
            a -= 0.5 * s1;
            b -= 0.5 * s2;
        }
        assert!((y[0] - a).abs() < 1e-8 && (y[1] - b).abs() < 1e-8);
        assert!((y[0] - y[1]).abs() < 1e-8);
        assert!(intensity_residual(&s, &kp, &y) < 1e-10);
    }

    #[test]
    fn fixed_point_dense_knots_converges() {
        // dense knots push the damped map outside its contraction range
        let acc: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * 0.1, 0.0)).collect();
        let thin: Vec<(f64, f64)> = (0..40).map(|i| (-1.0 + i as f64 * 0.05, 0.0)).collect();
        let s = state_with(&acc, &thin, 10.0);
        let kp = kp1(1e-9);
        let y = solve_intensity_values(&s, &kp, 1e-8, 10_000).unwrap();
        assert!(intensity_residual(&s, &kp, &y) < 1e-8);
    }

    #[test]
    fn fixed_point_reports_non_convergence() {
        let s = state_with(&[(0.0, 0.0)], &[(1.0, 0.0)], 1.0);
        match solve_intensity_values(&s, &kp1(1e-9), 1e-15, 1) {
            Err(DsdpError::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn thinning_value_examples() {
        let kp = kp1(1e-12);
        let s = state_with(&[(0.0, 1.3)], &[(3.0, -0.7)], 1.0);
        assert!((thinning_value(&[0.0], &s, &kp).unwrap() - sigmoid(1.3)).abs() < 1e-6);
        assert!((thinning_value(&[3.0], &s, &kp).unwrap() - sigmoid(-0.7)).abs() < 1e-6);

        let zeros = state_with(&[(0.0, 0.0), (1.0, 0.0)], &[], 1.0);
        assert_eq!(thinning_value(&[0.4], &zeros, &kp).unwrap(), 0.5);

        let far = thinning_value(&[50.0], &s, &kp).unwrap();
        assert!((far - 0.5).abs() < 1e-12);
    }

    #[test]
    fn delete_with_no_latent_points_is_rejected() {
        let s = state_with(&[(0.0, 0.2)], &[], 1.0);
        let kp = kp1(1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut saw_delete = false;
        for _ in 0..50 {
            let (next, rec) = latent_birth_death_step(&s, &kp, &mut rng).unwrap();
            if rec.kind == MoveKind::Delete {
                saw_delete = true;
                assert!(!rec.accepted);
                assert_eq!(next, s);
            }
        }
        assert!(saw_delete);
    }

    #[test]
    fn vanishing_intensity_never_inserts() {
        let mut s = state_with(&[(0.0, 0.2)], &[], 1e-300);
        let kp = kp1(1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let (next, _) = latent_birth_death_step(&s, &kp, &mut rng).unwrap();
            s = next;
            assert_eq!(s.thinned_count(), 0);
        }
    }

    #[test]
    fn birth_death_is_deterministic_per_seed() {
        let kp = kp1(1e-6);
        let run = |seed| {
            let mut s = state_with(&[(0.0, 0.2)], &[], 5.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut recs = Vec::new();
            for _ in 0..200 {
                let (next, rec) = latent_birth_death_step(&s, &kp, &mut rng).unwrap();
                s = next;
                recs.push(rec);
                s.check_thinning_range().unwrap();
            }
            (s, recs)
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn domain_from_points_pads_extent() {
        let rows = [[0.0, 5.0], [10.0, 5.0]];
        let d = TopicDomain::from_points(rows.iter().map(|r| &r[..])).unwrap();
        assert_eq!(d.lower, vec![-0.5, 4.5]);
        assert_eq!(d.upper, vec![10.5, 5.5]);
        assert!((d.volume() - 11.0).abs() < 1e-12);
    }
}
