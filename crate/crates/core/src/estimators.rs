//! Norm and moment estimates read off a quiesced [`LinearSketch`].
//!
//! For a guess `r` each index gets `x_hat_i = median_j |H_j(h_j(i)) / r|^p / w_i`,
//! and the precision-sampling reconstruction of those estimates is scaled back
//! by `r` (for `l_1`) or `r^p` (for `l_p` and `F_k`).

use crate::error::{invalid, Result, SketchError};
use crate::psl::{index_share, PslParams};
use crate::sketch::{ceil_log2, LinearSketch, Problem};

/// Default bound on `|x_i|` used to place the first guess.
pub const DEFAULT_MAGNITUDE_BITS: u32 = 31;

/// Smallest guess tried by the halving search.
pub const R_MIN: f64 = 1.0 / (1u64 << 20) as f64;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub value: f64,
    pub r_used: f64,
    /// `(r, sigma_hat(r))` for every guess tried, largest first.
    pub halving_trace: Vec<(f64, f64)>,
    /// False when the search ran down to `R_MIN` without stopping.
    pub success_flag: bool,
}

impl EstimateReport {
    fn zero(trace: Vec<(f64, f64)>) -> Self {
        EstimateReport {
            value: 0.0,
            r_used: trace.last().map_or(0.0, |t| t.0),
            halving_trace: trace,
            success_flag: false,
        }
    }
}

/// Per-index `median_j |H_j(h_j(i))|` together with `w_i`; a guess `r` turns
/// it into `x_hat_i = (med_i / r)^p / w_i`. The median is taken once since
/// `l` is odd and the map `|h| -> (|h|/r)^p` is increasing.
pub struct XhatTable {
    p: f64,
    /// `(w_i, med_i)` for indices with a nonzero median.
    entries: Vec<(f64, f64)>,
    params: PslParams,
}

impl XhatTable {
    pub fn new(sketch: &LinearSketch) -> Self {
        let c = sketch.config();
        let mut column = vec![0.0; c.l as usize];
        let mut entries = Vec::new();
        for i in 0..c.n {
            for (j, slot) in column.iter_mut().enumerate() {
                *slot = sketch.cell_of(j, i).abs();
            }
            let med = median_in_place(&mut column);
            if med > 0.0 {
                entries.push((sketch.weight(i), med));
            }
        }
        Self::from_entries(c.p, c.psl_params(), entries)
    }

    /// Table from precomputed `(w_i, med_i)` pairs; zero medians may be omitted.
    pub fn from_entries(p: f64, params: PslParams, entries: Vec<(f64, f64)>) -> Self {
        XhatTable { p, entries, params }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// The precision-sampling reconstruction of the `x_hat_i` at guess `r`.
    pub fn sigma_hat(&self, r: f64) -> f64 {
        let total: f64 = self
            .entries
            .iter()
            .filter_map(|&(w, med)| index_share((med / r).powf(self.p) / w, w, &self.params))
            .fold(0.0, |acc, v| acc + v);
        self.params.t * total
    }

    /// Halves `r` from `r_start` until `sigma_hat(r) > (1 + 2 eps) / 4`, and
    /// reports `r * sigma_hat` (`linear`) or `r^p * sigma_hat`.
    pub fn halving_search(&self, r_start: f64, linear: bool) -> EstimateReport {
        let threshold = (1.0 + 2.0 * self.params.epsilon) / 4.0;
        let mut trace = Vec::new();
        if self.is_zero() {
            return EstimateReport::zero(trace);
        }
        let mut r = r_start;
        while r >= R_MIN {
            let sigma = self.sigma_hat(r);
            trace.push((r, sigma));
            if sigma > threshold {
                let scale = if linear { r } else { r.powf(self.p) };
                return EstimateReport {
                    value: scale * sigma,
                    r_used: r,
                    halving_trace: trace,
                    success_flag: true,
                };
            }
            r *= 0.5;
        }
        EstimateReport::zero(trace)
    }
}

/// Median of an odd-length slice, reordering it.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Median of a nonempty sample; the mean of the middle pair for even length.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// `x_hat_i` at guess `r`.
pub fn recover_xhat(sketch: &LinearSketch, r: f64, i: u64) -> Result<f64> {
    let c = sketch.config();
    if !(r > 0.0 && r.is_finite()) {
        return invalid(format!("guess r={r} must be positive"));
    }
    if i >= c.n {
        return Err(SketchError::IndexOutOfRange { index: i, n: c.n });
    }
    let mut column: Vec<f64> = (0..c.l as usize).map(|j| sketch.cell_of(j, i).abs()).collect();
    let med = median_in_place(&mut column);
    Ok((med / r).powf(c.p) / sketch.weight(i))
}

fn output_scale(problem: Problem, p: f64, r: f64) -> f64 {
    match problem {
        Problem::L1 => r,
        _ => r.powf(p),
    }
}

/// Reconstruction at a fixed guess `r`, scaled back to the original units.
pub fn estimate_at_r(sketch: &LinearSketch, r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return invalid(format!("guess r={r} must be positive"));
    }
    let c = sketch.config();
    let table = XhatTable::new(sketch);
    Ok(output_scale(c.problem, c.p, r) * table.sigma_hat(r))
}

/// First guess of the halving search: `2^ceil(log2(n * 2^bits))`.
pub fn r_max(n: u64, magnitude_bits: u32) -> f64 {
    2f64.powi((ceil_log2(n) + magnitude_bits) as i32)
}

fn halving_search(sketch: &LinearSketch, magnitude_bits: u32) -> EstimateReport {
    let c = sketch.config();
    XhatTable::new(sketch).halving_search(r_max(c.n, magnitude_bits), c.problem == Problem::L1)
}

fn expect_problem(sketch: &LinearSketch, problem: Problem) -> Result<()> {
    let got = sketch.config().problem;
    if got != problem {
        return invalid(format!("expected a {problem} sketch, got {got}"));
    }
    Ok(())
}

pub fn estimate_l1(sketch: &LinearSketch) -> Result<EstimateReport> {
    expect_problem(sketch, Problem::L1)?;
    Ok(halving_search(sketch, DEFAULT_MAGNITUDE_BITS))
}

pub fn estimate_lp(sketch: &LinearSketch) -> Result<EstimateReport> {
    expect_problem(sketch, Problem::Lp)?;
    Ok(halving_search(sketch, DEFAULT_MAGNITUDE_BITS))
}

/// `l_1` or `l_p` estimate with an explicit magnitude bound for `r_max`.
pub fn estimate_with_bound(sketch: &LinearSketch, magnitude_bits: u32) -> Result<EstimateReport> {
    match sketch.config().problem {
        Problem::L1 | Problem::Lp => Ok(halving_search(sketch, magnitude_bits)),
        other => invalid(format!("no halving search for {other} sketches")),
    }
}

/// `F_p` estimate with the guess taken from the AMS companion.
pub fn estimate_fk(sketch: &LinearSketch) -> Result<EstimateReport> {
    expect_problem(sketch, Problem::Fk)?;
    let ams = sketch
        .ams()
        .ok_or_else(|| SketchError::InconsistentStream("F_k sketch without AMS state".into()))?;
    let r = ams.ams_estimate();
    let table = XhatTable::new(sketch);
    if r <= 0.0 {
        if table.is_zero() {
            return Ok(EstimateReport {
                value: 0.0,
                r_used: 0.0,
                halving_trace: Vec::new(),
                success_flag: true,
            });
        }
        return Err(SketchError::InconsistentStream(
            "AMS estimate is zero but the sketch holds mass".into(),
        ));
    }
    let sigma = table.sigma_hat(r);
    Ok(EstimateReport {
        value: r.powf(sketch.config().p) * sigma,
        r_used: r,
        halving_trace: vec![(r, sigma)],
        success_flag: true,
    })
}

/// Dispatches on the sketch's problem kind.
pub fn estimate(sketch: &LinearSketch) -> Result<EstimateReport> {
    match sketch.config().problem {
        Problem::Fk => estimate_fk(sketch),
        Problem::L1 => estimate_l1(sketch),
        Problem::Lp => estimate_lp(sketch),
        Problem::Sampler => invalid("sampler sketches are read with `sample`, not `estimate`"),
    }
}

/// Median of the estimates of independent replicas.
pub fn estimate_median(replicas: &[LinearSketch]) -> Result<f64> {
    if replicas.is_empty() {
        return invalid("at least one replica is required");
    }
    let values = replicas
        .iter()
        .map(|s| estimate(s).map(|r| r.value))
        .collect::<Result<Vec<_>>>()?;
    Ok(median(&values))
}
