//! Brute-force references and the seeded trial harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::beta::beta_reg;

use crate::cascaded::{minimal_regime, regime_kappa};
use crate::error::{invalid, Result};
use crate::hashing::{IndexHash, SeedRole, SeedTree};
use crate::psl::{index_share, PslParams};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `sum |x_i|^p`.
pub fn exact_norm(x: &[f64], p: f64) -> f64 {
    compensated_sum(x.iter().map(|v| v.abs().powf(p)))
}

/// `sum_i ||x_i||_q^p`, the `p`-th power of the cascaded norm.
pub fn exact_cascaded_pow(rows: &[Vec<f64>], p: f64, q: f64) -> f64 {
    compensated_sum(rows.iter().map(|row| exact_norm(row, q).powf(p / q)))
}

/// `||x||_{p,q} = (sum_i (sum_j |x_ij|^q)^(p/q))^(1/p)`.
pub fn exact_cascaded(rows: &[Vec<f64>], p: f64, q: f64) -> f64 {
    exact_cascaded_pow(rows, p, q).powf(1.0 / p)
}

/// `|x_i|^p / ||x||_p^p`.
pub fn exact_sampling_target(x: &[f64], p: f64) -> Result<Vec<f64>> {
    let total = exact_norm(x, p);
    if total == 0.0 {
        return invalid("the sampling distribution of the zero vector is undefined");
    }
    Ok(x.iter().map(|v| v.abs().powf(p) / total).collect())
}

/// Two-sided Clopper-Pearson lower bound for a binomial proportion.
pub fn clopper_pearson_lower(successes: u64, trials: u64, confidence: f64) -> f64 {
    assert!(successes <= trials && trials > 0);
    assert!(confidence > 0.0 && confidence < 1.0);
    if successes == 0 {
        return 0.0;
    }
    let tail = (1.0 - confidence) / 2.0;
    let (a, b) = (successes as f64, (trials - successes + 1) as f64);
    // P[Bin(n, x) >= s] = I_x(s, n - s + 1), increasing in x.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < tail {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub const REPORT_CONFIDENCE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport<T> {
    pub trials: u64,
    pub successes: u64,
    pub success_rate: f64,
    /// Clopper-Pearson lower bound at [`REPORT_CONFIDENCE`].
    pub ci_low: f64,
    /// Per-trial experiment outputs in trial order.
    pub outcomes: Vec<T>,
}

impl<T> TrialReport<T> {
    pub fn from_outcomes(outcomes: Vec<T>, success: impl Fn(&T) -> bool) -> Self {
        let trials = outcomes.len() as u64;
        let successes = outcomes.iter().filter(|o| success(o)).count() as u64;
        TrialReport {
            trials,
            successes,
            success_rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            ci_low: if trials == 0 {
                0.0
            } else {
                clopper_pearson_lower(successes, trials, REPORT_CONFIDENCE)
            },
            outcomes,
        }
    }

    pub fn key_values(&self) -> String {
        format!(
            "trials={} successes={} rate={:.4} ci_low={:.4}",
            self.trials, self.successes, self.success_rate, self.ci_low
        )
    }
}

/// Seed of trial `index` under `harness_seed`.
pub fn trial_seed(harness_seed: u64, index: u64) -> u64 {
    SeedTree::new(harness_seed).child(SeedRole::Replica, index)
}

/// Runs `experiment` once per trial with independent derived seeds.
pub fn run_trials<T>(
    harness_seed: u64,
    trials: u64,
    mut experiment: impl FnMut(u64) -> T,
    success: impl Fn(&T) -> bool,
) -> TrialReport<T> {
    let outcomes = (0..trials).map(|t| experiment(trial_seed(harness_seed, t))).collect();
    TrialReport::from_outcomes(outcomes, success)
}

/// How the adversary perturbs each `a_i` by at most `1/w_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversaryMode {
    Zero,
    AllPlus,
    AllMinus,
    /// Per-index signs pushing the reconstruction away from the truth.
    Greedy,
    /// Independent uniform offsets in `[-1, 1] / w_i`.
    Honest(u64),
}

/// `a_hat_i = max(0, a_i + c_i / w_i)` with `c` chosen by `mode`.
pub fn psl_adversary(a: &[f64], weights: &[f64], mode: AdversaryMode, params: &PslParams) -> Vec<f64> {
    assert_eq!(a.len(), weights.len());
    let with_signs = |c: &dyn Fn(usize) -> f64| -> Vec<f64> {
        a.iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (&ai, &w))| (ai + c(i) / w).max(0.0))
            .collect()
    };
    match mode {
        AdversaryMode::Zero => a.to_vec(),
        AdversaryMode::AllPlus => with_signs(&|_| 1.0),
        AdversaryMode::AllMinus => with_signs(&|_| -1.0),
        AdversaryMode::Honest(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<f64> = (0..a.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            with_signs(&|i| c[i])
        }
        AdversaryMode::Greedy => {
            let share = |est: f64, w: f64| params.t * index_share(est, w, params).unwrap_or(0.0);
            // Pursue each direction greedily, keep the one that ends farther out.
            let mut best: Option<(f64, Vec<f64>)> = None;
            for direction in [1.0, -1.0] {
                let mut dev = 0.0;
                let mut out = Vec::with_capacity(a.len());
                for (&ai, &w) in a.iter().zip(weights) {
                    let up = (ai + 1.0 / w).max(0.0);
                    let down = (ai - 1.0 / w).max(0.0);
                    let (du, dd) = (share(up, w) - ai, share(down, w) - ai);
                    let (est, d) = if (direction > 0.0) == (du >= dd) { (up, du) } else { (down, dd) };
                    dev += d;
                    out.push(est);
                }
                if best.as_ref().is_none_or(|(b, _)| dev.abs() > *b) {
                    best = Some((dev.abs(), out));
                }
            }
            best.expect("two directions tried").1
        }
    }
}

/// Monte Carlo `E[|sum g_i chi_i x_i|^p]` with fully independent signs and
/// `Pr[chi_i = 1] = rate`.
pub fn khintchine_mean(x: &[f64], p: f64, rate: f64, draws: u64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(draws as usize);
    for _ in 0..draws {
        let mut s = 0.0;
        for &v in x {
            if rng.gen::<f64>() < rate {
                s += if rng.gen::<bool>() { v } else { -v };
            }
        }
        samples.push(s.abs().powf(p));
    }
    compensated_sum(samples) / draws as f64
}

/// One draw of the pairwise variant: signs from a pairwise hash and
/// `chi_i = [h(i) mod buckets == 0]` from an independent one. Returns
/// `|sum g_i chi_i x_i|^p`.
pub fn khintchine_pairwise_draw(x: &[f64], p: f64, buckets: u64, seed: u64) -> f64 {
    let tree = SeedTree::new(seed);
    let g = tree.affine(SeedRole::Sign, 0);
    let chi = tree.affine(SeedRole::Bucket, 0);
    let s: f64 = x
        .iter()
        .enumerate()
        .filter(|(i, _)| chi.bucket(*i as u64, buckets) == 0)
        .map(|(i, &v)| g.sign(i as u64) * v)
        .sum();
    s.abs().powf(p)
}

/// One draw of the generalized p-type event for rows `x_i in l_q`: with
/// subsampling rate `1/m` for `m = ceil(p_type_bound)`, is
/// `||sum g_i chi_i x_i||_q^p <= 1`? Hashes are as independent as the
/// regime requires.
pub fn p_type_draw(rows: &[Vec<f64>], p: f64, q: f64, omega: f64, seed: u64) -> Result<bool> {
    let n = rows.len() as u64;
    let (regime, bound) = minimal_regime(p, q, n.max(2), omega, q * q)?;
    let m = bound.ceil() as u64;
    let kappa = regime_kappa(regime, q);
    let tree = SeedTree::new(seed);
    let g = IndexHash::derive(&tree, SeedRole::Sign, 0, kappa);
    let chi = IndexHash::derive(&tree, SeedRole::Bucket, 0, kappa);
    let width = rows.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; width];
    for (i, row) in rows.iter().enumerate() {
        if chi.bucket(i as u64, m) == 0 {
            let s = g.sign(i as u64);
            for (a, v) in acc.iter_mut().zip(row) {
                *a += s * v;
            }
        }
    }
    Ok(exact_norm(&acc, q).powf(p / q) <= 1.0)
}

/// Monte Carlo weight statistics for `w ~ W(k)`: the mean of `w` over draws
/// with `w <= cap`, and the mean of `w^(1/2)` over all draws.
pub fn weight_moments(k: u64, cap: f64, draws: u64, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(draws as usize);
    let mut roots = Vec::with_capacity(draws as usize);
    for _ in 0..draws {
        // 1 - U lies in (0, 1], so 1/u is finite.
        let u_min = (0..k).map(|_| 1.0 - rng.gen::<f64>()).fold(1.0, f64::min);
        let w = 1.0 / u_min;
        if w <= cap {
            kept.push(w);
        }
        roots.push(w.sqrt());
    }
    let cond = compensated_sum(kept.iter().copied()) / kept.len().max(1) as f64;
    (cond, compensated_sum(roots) / draws as f64)
}
