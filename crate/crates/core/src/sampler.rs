//! `l_p` sampling from a sampler sketch.
//!
//! With `r` close to `||x||_p^p`, each index gets `x_hat_i = med_i^p / (r w_i)`,
//! an estimate of `|x_i|^p / r`. Index `i` survives column `j` when
//! `x_hat_i * w_{i,j} >= t`, which happens with probability about
//! `x_hat_i / t`; the first column with a single survivor names the sample.

use crate::error::{invalid, Result};
use crate::estimators::{estimate_lp, median_in_place, EstimateReport};
use crate::hashing::{SeedRole, SeedTree};
use crate::sketch::{LinearSketch, Problem, SketchConfig};

/// Accuracy of the auxiliary `l_p` sketch that supplies `r`.
pub const AUX_EPSILON: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOutcome {
    pub index: u64,
    /// Estimate of `|x_index|^p`.
    pub value: f64,
    pub j_star: u64,
    pub failed: bool,
}

impl SampleOutcome {
    fn fail() -> Self {
        SampleOutcome {
            index: 0,
            value: 0.0,
            j_star: 0,
            failed: true,
        }
    }
}

/// Draws one sample, using `r` as the approximation of `||x||_p^p`.
pub fn sample(sketch: &LinearSketch, r: f64) -> Result<SampleOutcome> {
    let c = sketch.config();
    if c.problem != Problem::Sampler {
        return invalid(format!("expected a sampler sketch, got {}", c.problem));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return invalid(format!("r={r} must be a finite nonnegative number"));
    }
    if r == 0.0 {
        return Ok(SampleOutcome::fail());
    }

    let mut column = vec![0.0; c.l as usize];
    let mut candidates = Vec::new();
    for i in 0..c.n {
        for (j, slot) in column.iter_mut().enumerate() {
            *slot = sketch.cell_of(j, i).abs();
        }
        let med = median_in_place(&mut column);
        if med > 0.0 {
            candidates.push((i, med.powf(c.p) / (r * sketch.weight(i))));
        }
    }

    let weights = sketch.precision_weights();
    for j in 0..c.k as usize {
        let mut survivor = None;
        let mut count = 0;
        for &(i, xhat) in &candidates {
            if xhat * weights.column_weight(i, j) >= c.t {
                count += 1;
                if count > 1 {
                    break;
                }
                survivor = Some((i, xhat));
            }
        }
        if count == 1 {
            let (index, xhat) = survivor.expect("one survivor");
            return Ok(SampleOutcome {
                index,
                value: xhat * r,
                j_star: j as u64,
                failed: false,
            });
        }
    }
    Ok(SampleOutcome::fail())
}

/// Configuration of the auxiliary `l_p` sketch paired with a sampler sketch.
/// Its seed is derived from, and independent of, the sampler's seed.
pub fn auxiliary_config(sampler: &SketchConfig) -> Result<SketchConfig> {
    let seed = SeedTree::new(sampler.master_seed).child(SeedRole::Replica, u64::MAX);
    SketchConfig::with_l_multiplier(
        Problem::Lp,
        sampler.n,
        sampler.p,
        AUX_EPSILON,
        sampler.zeta,
        seed,
        sampler.l_multiplier,
    )
}

/// Factor-2 approximation of `||x||_p^p` from the auxiliary sketch.
pub fn sampler_r(aux: &LinearSketch) -> Result<EstimateReport> {
    estimate_lp(aux)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::create;

    fn small(seed: u64) -> LinearSketch {
        create(Problem::Sampler, 64, 1.0, 0.25, 0.5, seed).unwrap()
    }

    #[test]
    fn zero_vector_fails() {
        let s = small(1);
        assert!(sample(&s, 1.0).unwrap().failed);
        assert!(sample(&s, 0.0).unwrap().failed);
    }

    #[test]
    fn single_nonzero_is_always_the_sample() {
        let mut non_fail = 0;
        for seed in 0..40 {
            let mut s = small(seed);
            s.update(5, -3.0).unwrap();
            let out = sample(&s, 3.0).unwrap();
            if !out.failed {
                non_fail += 1;
                assert_eq!(out.index, 5);
                assert!((out.value - 3.0).abs() < 1e-9, "{}", out.value);
            }
        }
        assert!(non_fail > 30);
    }

    #[test]
    fn column_scan_is_deterministic() {
        let mut s = small(9);
        for i in 0..64 {
            s.update(i, (i % 5) as f64 + 1.0).unwrap();
        }
        let a = sample(&s, 190.0).unwrap();
        let b = sample(&s.clone(), 190.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = small(1);
        assert!(sample(&s, -1.0).is_err());
        assert!(sample(&s, f64::NAN).is_err());
        let l1 = create(Problem::L1, 64, 1.0, 0.25, 0.5, 1).unwrap();
        assert!(sample(&l1, 1.0).is_err());
    }

    #[test]
    fn auxiliary_sketch_uses_fresh_seed() {
        let c = *small(3).config();
        let aux = auxiliary_config(&c).unwrap();
        assert_eq!(aux.problem, Problem::Lp);
        assert_eq!(aux.epsilon, AUX_EPSILON);
        assert_ne!(aux.master_seed, c.master_seed);
        assert_eq!(auxiliary_config(&c).unwrap(), aux);
    }

    #[test]
    fn sampler_r_of_zero_is_zero() {
        let aux = LinearSketch::new(auxiliary_config(small(2).config()).unwrap());
        let rep = sampler_r(&aux).unwrap();
        assert_eq!(rep.value, 0.0);
        assert!(!rep.success_flag);
    }
}
