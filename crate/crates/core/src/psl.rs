//! Precision sampling: the weight distribution `W(k)`, the approximator
//! predicate and the deterministic sum reconstruction.
//!
//! A weight is `w = max_j 1/u_j` over `k` uniforms in `(0, 1]`, so its CDF is
//! `(1 - 1/x)^k` on `[1, inf)`. An estimator that only receives each summand
//! `a_i` up to additive error `1/w_i` can still recover `sum a_i` to within a
//! `(rho, e^eps)` factor by thresholding `a_i * w_i` against `t = 4/eps` and
//! replacing every crossing index with the conditional expectation of its
//! share of the `k` underlying indicator variables.

use crate::error::{invalid, Result};
use crate::hashing::{uniform_from_raw, AffineSeed, SeedRole, SeedTree, MERSENNE_61};

/// Accuracy parameters of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PslParams {
    pub epsilon: f64,
    pub rho: f64,
    pub zeta: f64,
    /// Number of uniform columns per weight.
    pub k: u64,
    /// Threshold `4 / epsilon`.
    pub t: f64,
}

impl PslParams {
    pub const DEFAULT_ZETA: f64 = 8.0;

    /// `k = ceil(zeta / (rho * eps^2))`, `t = 4 / eps`.
    pub fn new(epsilon: f64, rho: f64, zeta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0 / 3.0) {
            return invalid(format!("epsilon={epsilon} must lie in (0, 1/3]"));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return invalid(format!("rho={rho} must lie in (0, 1]"));
        }
        if !(zeta > 0.0 && zeta.is_finite()) {
            return invalid(format!("zeta={zeta} must be a positive constant"));
        }
        let k = (zeta / (rho * epsilon * epsilon)).ceil();
        if k > u32::MAX as f64 {
            return invalid(format!("k={k} columns is beyond what can be sampled"));
        }
        Ok(PslParams {
            epsilon,
            rho,
            zeta,
            k: k as u64,
            t: 4.0 / epsilon,
        })
    }

    /// Parameters with `k` fixed directly rather than derived from `rho`.
    /// `rho` is reported as the value that would have produced this `k`.
    pub fn with_columns(epsilon: f64, k: u64, zeta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0 / 3.0) {
            return invalid(format!("epsilon={epsilon} must lie in (0, 1/3]"));
        }
        if k == 0 {
            return invalid("k must be at least 1");
        }
        Ok(PslParams {
            epsilon,
            rho: zeta / (k as f64 * epsilon * epsilon),
            zeta,
            k,
            t: 4.0 / epsilon,
        })
    }
}

/// Per-index weights `w_i = max_j 1/u_{i,j}`, recomputed from column seeds.
///
/// Each column is an independent pairwise family, so `w_i` has law `W(k)`
/// and the weights are pairwise independent across indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionWeights {
    columns: Vec<AffineSeed>,
}

impl PrecisionWeights {
    pub fn new(tree: &SeedTree, k: u64) -> Self {
        let columns = (0..k)
            .map(|j| tree.affine(SeedRole::WeightColumn, j))
            .collect();
        PrecisionWeights { columns }
    }

    /// All columns must share one modulus.
    pub fn from_columns(columns: Vec<AffineSeed>) -> Result<Self> {
        let Some(first) = columns.first() else {
            return invalid("at least one weight column is required");
        };
        let p = first.modulus();
        if columns.iter().any(|c| c.modulus() != p) {
            return invalid("weight columns use different moduli");
        }
        Ok(PrecisionWeights { columns })
    }

    pub fn k(&self) -> u64 {
        self.columns.len() as u64
    }

    pub fn columns(&self) -> &[AffineSeed] {
        &self.columns
    }

    fn modulus(&self) -> u64 {
        self.columns.first().map_or(MERSENNE_61, |c| c.modulus())
    }

    /// `w_i`. Since `1/u` is monotone in the raw hash, the maximum over the
    /// columns is attained at the smallest raw value.
    pub fn weight(&self, i: u64) -> f64 {
        let min_raw = self
            .columns
            .iter()
            .map(|c| c.raw(i))
            .min()
            .expect("at least one column");
        1.0 / uniform_from_raw(min_raw, self.modulus())
    }

    /// `w_{i,j} = 1/u_{i,j}` for a single column.
    pub fn column_weight(&self, i: u64, j: usize) -> f64 {
        1.0 / self.columns[j].uniform01(i)
    }

    /// `w_i` for `i in 0..n`, bit-identical to [`PrecisionWeights::weight`].
    pub fn weights(&self, n: u64) -> Vec<f64> {
        let mut min_raw = vec![u64::MAX; n as usize];
        for col in &self.columns {
            for (slot, raw) in min_raw.iter_mut().zip(col.raw_sweep()) {
                if raw < *slot {
                    *slot = raw;
                }
            }
        }
        let p = self.modulus();
        min_raw
            .into_iter()
            .map(|r| 1.0 / uniform_from_raw(r, p))
            .collect()
    }
}

/// `(rho, f)` in the predicate `tau/f - rho <= tau_hat <= f*tau + rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximatorSpec {
    pub rho: f64,
    pub f: f64,
}

impl ApproximatorSpec {
    pub fn new(rho: f64, f: f64) -> Result<Self> {
        if !(rho >= 0.0) {
            return invalid(format!("additive slack rho={rho} must be non-negative"));
        }
        if !(1.0..=2.0).contains(&f) {
            return invalid(format!("multiplicative factor f={f} must lie in [1, 2]"));
        }
        Ok(ApproximatorSpec { rho, f })
    }
}

pub fn is_approximator(tau_hat: f64, tau: f64, spec: ApproximatorSpec) -> bool {
    tau / spec.f - spec.rho <= tau_hat && tau_hat <= spec.f * tau + spec.rho
}

/// Output of [`reconstruct_detailed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub value: f64,
    /// Indices with `estimate * weight >= t`.
    pub contributing: usize,
    /// Contributing indices whose weight was exactly 1 (limit value used).
    pub degenerate: usize,
}

/// Share `s_i` of one index. Zero below the threshold.
#[inline]
pub fn index_share(estimate: f64, weight: f64, params: &PslParams) -> Option<f64> {
    let scaled = estimate * weight / params.t;
    if !(scaled >= 1.0) {
        return None;
    }
    let k = params.k as f64;
    if weight <= 1.0 {
        return Some(1.0 / k);
    }
    Some(1.0 / k + (k - 1.0) / k * (scaled - 1.0) / (weight - 1.0))
}

/// Estimate of `sum a_i` from weights `w_i` and estimates `a_hat_i >= 0`.
pub fn reconstruct(weights: &[f64], estimates: &[f64], params: &PslParams) -> f64 {
    reconstruct_detailed(weights, estimates, params).value
}

pub fn reconstruct_detailed(
    weights: &[f64],
    estimates: &[f64],
    params: &PslParams,
) -> Reconstruction {
    assert_eq!(
        weights.len(),
        estimates.len(),
        "one estimate per weight is required"
    );
    let mut total = 0.0;
    let mut contributing = 0;
    let mut degenerate = 0;
    for (&w, &est) in weights.iter().zip(estimates) {
        if let Some(s) = index_share(est, w, params) {
            total += s;
            contributing += 1;
            if w <= 1.0 {
                degenerate += 1;
            }
        }
    }
    Reconstruction {
        value: params.t * total,
        contributing,
        degenerate,
    }
}

/// `E[w^alpha]` for `w ~ W(k)`, by adaptive quadrature.
///
/// After the change of variables `u = v^(1/(1-alpha))` the integrand
/// `u^-alpha * k (1-u)^(k-1)` becomes the bounded function
/// `k/(1-alpha) * (1 - v^(1/(1-alpha)))^(k-1)` on `[0, 1]`.
pub fn expected_weight_power(k: u64, alpha: f64) -> Result<f64> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid(format!("alpha={alpha} must lie in (0, 1)"));
    }
    let beta = 1.0 / (1.0 - alpha);
    let kf = k as f64;
    let g = move |v: f64| {
        if k == 1 {
            return kf * beta;
        }
        kf * beta * ((kf - 1.0) * (-v.powf(beta)).ln_1p()).exp()
    };

    // The mass sits at v below roughly k^(-1/beta); split geometrically from there.
    let mut breaks = vec![0.0];
    let mut edge = kf.powf(-1.0 / beta).min(1.0);
    while edge < 1.0 {
        breaks.push(edge);
        edge *= 2.0;
    }
    breaks.push(1.0);

    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += adaptive_simpson(&g, w[0], w[1], 1e-11, 48);
    }
    Ok(total)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let c = 0.5 * (a + b);
    let fc = f(c);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    let tol = rel_tol * whole.abs().max(f64::MIN_POSITIVE);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = f(d);
    let fe = f(e);
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, c, fa, fc, fd, left, tol / 2.0, depth - 1)
        + simpson_step(f, c, b, fc, fb, fe, right, tol / 2.0, depth - 1)
}

/// Closed-form bound `k ln(n^5) / (1 - n^-5)` on `E[w | w <= n^5]`.
pub fn conditional_weight_bound(k: u64, n: u64) -> f64 {
    let n = n as f64;
    k as f64 * 5.0 * n.ln() / (1.0 - n.powi(-5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::ln_gamma;

    /// Independent oracle: `E[w^alpha] = k B(1 - alpha, k)`.
    fn beta_form(k: u64, alpha: f64) -> f64 {
        let kf = k as f64;
        kf * (ln_gamma(1.0 - alpha) + ln_gamma(kf) - ln_gamma(kf + 1.0 - alpha)).exp()
    }

    fn params(k: u64, t: f64) -> PslParams {
        PslParams {
            epsilon: 4.0 / t,
            rho: 0.1,
            zeta: 8.0,
            k,
            t,
        }
    }

    #[test]
    fn params_derivation() {
        let p = PslParams::new(0.2, 0.1, 8.0).unwrap();
        assert_eq!(p.k, 2000);
        assert!((p.t - 20.0).abs() < 1e-12);
        assert!(p.t > 12.0);
        assert!(PslParams::new(0.5, 0.1, 8.0).is_err());
        assert!(PslParams::new(0.2, 0.0, 8.0).is_err());
        assert!(PslParams::new(0.2, 0.1, -1.0).is_err());
    }

    #[test]
    fn approximator_predicate() {
        let spec = ApproximatorSpec::new(0.5, 1.0).unwrap();
        assert!(is_approximator(3.0, 3.0, spec));
        assert!(!is_approximator(0.0, 1.0, spec));
        let spec = ApproximatorSpec::new(0.1, 2.0).unwrap();
        assert!(is_approximator(2.1, 1.0, spec));
        assert!(!is_approximator(2.2, 1.0, spec));
        assert!(ApproximatorSpec::new(0.1, 0.9).is_err());
        assert!(ApproximatorSpec::new(-0.1, 1.0).is_err());
    }

    #[test]
    fn reconstruct_all_zero_is_zero() {
        let w = vec![5.0, 100.0, 1e9];
        let est = vec![0.0; 3];
        assert_eq!(reconstruct(&w, &est, &params(10, 20.0)), 0.0);
    }

    #[test]
    fn reconstruct_hand_evaluation() {
        let p = params(10, 20.0);
        let value = reconstruct(&[100.0], &[0.4], &p);
        let s = 0.1 + 0.9 * (1.0 / 99.0);
        assert!((value - 20.0 * s).abs() < 1e-12);
        assert!((value - 2.181_818_181_818).abs() < 1e-9);
    }

    #[test]
    fn degenerate_unit_weight_uses_limit_value() {
        let p = params(10, 20.0);
        let r = reconstruct_detailed(&[1.0], &[25.0], &p);
        assert_eq!(r.degenerate, 1);
        assert!((r.value - 20.0 / 10.0).abs() < 1e-12);
        let r = reconstruct_detailed(&[1.0], &[5.0], &p);
        assert_eq!(r.contributing, 0);
    }

    #[test]
    fn doubling_threshold_never_adds_contributors() {
        let tree = SeedTree::new(5);
        let pw = PrecisionWeights::new(&tree, 50);
        let w = pw.weights(500);
        let est: Vec<f64> = (0..500).map(|i| (i % 17) as f64 / 17.0).collect();
        let p1 = params(50, 20.0);
        let p2 = params(50, 40.0);
        let r1 = reconstruct_detailed(&w, &est, &p1);
        let r2 = reconstruct_detailed(&w, &est, &p2);
        assert!(r2.contributing <= r1.contributing);
    }

    #[test]
    fn weights_match_columnwise_maximum() {
        let tree = SeedTree::new(77);
        let pw = PrecisionWeights::new(&tree, 25);
        let all = pw.weights(300);
        for i in 0..300u64 {
            let direct = (0..25)
                .map(|j| pw.column_weight(i, j))
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(all[i as usize], direct);
            assert_eq!(pw.weight(i), direct);
            assert!(direct >= 1.0);
        }
    }

    fn ks_against_wk(k: u64, draws: u64, offset: u64) -> f64 {
        let mut ws: Vec<f64> = (0..draws)
            .map(|d| PrecisionWeights::new(&SeedTree::new(offset + d), k).weight(3))
            .collect();
        ws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nd = draws as f64;
        ws.iter()
            .enumerate()
            .map(|(idx, &x)| {
                let cdf = (1.0 - 1.0 / x).powi(k as i32);
                ((idx + 1) as f64 / nd - cdf).max(cdf - idx as f64 / nd)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn weight_law_matches_wk() {
        for (k, offset) in [(1u64, 0u64), (5, 1 << 40), (20, 2 << 40)] {
            let d = ks_against_wk(k, 100_000, offset);
            assert!(d < 0.01, "k={k}: KS distance {d}");
        }
    }

    #[test]
    fn quadrature_closed_form_cases() {
        let v = expected_weight_power(1, 0.5).unwrap();
        assert!((v - 2.0).abs() < 2e-6, "{v}");
        let v = expected_weight_power(7, 1e-6).unwrap();
        assert!((v - 1.0).abs() < 1e-4);
        assert!(expected_weight_power(5, 1.0).is_err());
        assert!(expected_weight_power(5, 0.0).is_err());
        assert!(expected_weight_power(0, 0.5).is_err());
    }

    #[test]
    fn quadrature_matches_beta_function() {
        for &k in &[1u64, 2, 5, 20, 300, 4096, 26_815] {
            for &alpha in &[0.1, 1.0 / 3.0, 0.5, 2.0 / 3.0, 0.9] {
                let q = expected_weight_power(k, alpha).unwrap();
                let b = beta_form(k, alpha);
                assert!(
                    ((q - b) / b).abs() < 1e-6,
                    "k={k} alpha={alpha}: quadrature {q} vs closed form {b}"
                );
            }
        }
    }

    #[test]
    fn quadrature_respects_moment_bound() {
        // E[w^alpha] <= k^alpha/(1-alpha) * (1 + 1/(1 - alpha)) from splitting at u = 1/k.
        for &k in &[1u64, 20, 1000] {
            for &alpha in &[0.25, 0.5, 2.0 / 3.0] {
                let q = expected_weight_power(k, alpha).unwrap();
                let bound = (k as f64).powf(alpha) / (1.0 - alpha) + (k as f64).powf(alpha);
                assert!(q <= bound, "k={k} alpha={alpha}: {q} > {bound}");
            }
        }
    }

    #[test]
    fn closed_form_conditional_bound() {
        let b = conditional_weight_bound(20, 10_000);
        assert!((b - 20.0 * 5.0 * (10_000f64).ln()).abs() < 1e-6);
    }
}
