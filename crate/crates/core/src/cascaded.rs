//! `l_p(l_q)` cascaded norms of an `n1 x n2` matrix.
//!
//! Rows play the role of coordinates: each outer cell holds
//! `sum_{i: h_j(i) = z} g_j(i) * w_i^(1/p) * L(x_i)` where `L` is either the
//! identity on `R^n2` or an inner linear sketch shared by every cell. The
//! per-row statistic is the median over tables of the inner `l_q` norm, and
//! the outer layer reuses the flat `l_p` reconstruction and halving search.

use std::collections::HashMap;

use crate::codec::{Reader, Writer};
use crate::error::{invalid, Result, SketchError};
use crate::estimators::{estimate, median_in_place, EstimateReport, XhatTable, DEFAULT_MAGNITUDE_BITS};
use crate::hashing::{IndexHash, SeedRole, SeedTree, MERSENNE_61};
use crate::psl::{PrecisionWeights, PslParams};
use crate::sketch::{
    ceil_log2, omega_closed_form, read_header, table_count, LinearSketch, Problem, SketchConfig, FORMAT_VERSION, MAGIC,
};

/// Problem tag of cascaded records in the binary format.
pub const CASCADED_TAG: u8 = 4;

/// Rows of the p-type table. Several may apply to one `(p, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `0 < p <= q <= 2`.
    SmallQ,
    /// `q >= 2`.
    LargeQ,
    /// `q < p`.
    QBelowP,
}

/// Regimes covering `(p, q)`; empty when `p` or `q` is not a positive number.
pub fn applicable_regimes(p: f64, q: f64) -> Vec<Regime> {
    let mut out = Vec::new();
    if !(p > 0.0 && q > 0.0 && p.is_finite() && q.is_finite()) {
        return out;
    }
    if p <= q && q <= 2.0 {
        out.push(Regime::SmallQ);
    }
    if q >= 2.0 {
        out.push(Regime::LargeQ);
    }
    if q < p {
        out.push(Regime::QBelowP);
    }
    out
}

/// Bound of a single regime, with `q_factor` standing in for `q^O(1)`.
pub fn regime_bound(regime: Regime, p: f64, n: u64, omega: f64, q_factor: f64) -> f64 {
    let n = n as f64;
    match regime {
        Regime::SmallQ => 81.0 * omega,
        Regime::LargeQ if p >= 2.0 => 81.0 * q_factor * omega.powf(2.0 / p) * n.powf(1.0 - 2.0 / p),
        Regime::LargeQ => 81.0 * q_factor * omega.powf(2.0 / p),
        Regime::QBelowP if p >= 1.0 => 9.0 * n.powf(1.0 - 1.0 / p) * omega.powf(1.0 / p),
        Regime::QBelowP => 9.0 * omega.powf(1.0 / p),
    }
}

/// Smallest applicable p-type bound with the default `q_factor = q^2`.
pub fn p_type_bound(p: f64, q: f64, n: u64, omega: f64) -> Result<f64> {
    p_type_bound_with(p, q, n, omega, q * q)
}

pub fn p_type_bound_with(p: f64, q: f64, n: u64, omega: f64, q_factor: f64) -> Result<f64> {
    Ok(minimal_regime(p, q, n, omega, q_factor)?.1)
}

/// The applicable regime with the smallest bound, and that bound.
pub fn minimal_regime(p: f64, q: f64, n: u64, omega: f64, q_factor: f64) -> Result<(Regime, f64)> {
    if !(omega > 0.0 && omega.is_finite()) {
        return invalid(format!("omega={omega} must be positive"));
    }
    applicable_regimes(p, q)
        .into_iter()
        .map(|r| (r, regime_bound(r, p, n, omega, q_factor)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or_else(
            || invalid(format!("(p, q) = ({p}, {q}) lies outside every p-type regime")),
            Ok,
        )
}

/// Independence degree of the outer hashes under `regime`.
pub fn regime_kappa(regime: Regime, q: f64) -> usize {
    match regime {
        Regime::LargeQ => 2 * q.ceil() as usize + 2,
        _ => 2,
    }
}

/// What an outer cell stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerKind {
    /// The raw `n2`-vector.
    Exact,
    /// An `l_q` sketch at `eps/2` (`F_q` with AMS when `q > 2`).
    Sketched,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadedConfig {
    pub n1: u64,
    pub n2: u64,
    pub p: f64,
    pub q: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub zeta: f64,
    pub k: u64,
    pub t: f64,
    pub m: u64,
    pub l: u64,
    pub omega: f64,
    /// The p-type bound `m` was rounded up from.
    pub bound: f64,
    pub q_factor: f64,
    pub kappa: u32,
    pub inner: InnerKind,
    pub l_multiplier: u32,
    pub master_seed: u64,
}

impl CascadedConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n1: u64,
        n2: u64,
        p: f64,
        q: f64,
        epsilon: f64,
        zeta: f64,
        inner: InnerKind,
        master_seed: u64,
    ) -> Result<Self> {
        Self::with_options(n1, n2, p, q, epsilon, zeta, inner, master_seed, q * q, SketchConfig::DEFAULT_L_MULTIPLIER)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_options(
        n1: u64,
        n2: u64,
        p: f64,
        q: f64,
        epsilon: f64,
        zeta: f64,
        inner: InnerKind,
        master_seed: u64,
        q_factor: f64,
        l_multiplier: u32,
    ) -> Result<Self> {
        if n1 < 8 {
            return invalid(format!("row count n1={n1} must be at least 8"));
        }
        if n1 >= MERSENNE_61 {
            return invalid(format!("row count n1={n1} must be below 2^61 - 1"));
        }
        if n2 == 0 {
            return invalid("column count n2 must be positive");
        }
        if inner == InnerKind::Exact && n2 > 1 << 16 {
            return invalid(format!("exact inner cells need n2 <= 65536, got {n2}"));
        }
        if !(q_factor > 0.0 && q_factor.is_finite()) {
            return invalid(format!("q factor {q_factor} must be positive"));
        }
        if l_multiplier == 0 {
            return invalid("table-count multiplier must be positive");
        }
        let psl = PslParams::new(epsilon, epsilon / 8.0, zeta)?;
        let omega = omega_closed_form(psl.k, n1);
        let (regime, bound) = minimal_regime(p, q, n1, 3.0 * p * omega / epsilon, q_factor)?;
        let width = bound.ceil();
        if !(1.0..=(1u64 << 62) as f64).contains(&width) {
            return invalid(format!("outer width {width} is out of range"));
        }
        let config = CascadedConfig {
            n1,
            n2,
            p,
            q,
            epsilon,
            rho: psl.rho,
            zeta,
            k: psl.k,
            t: psl.t,
            m: width as u64,
            l: table_count(n1, l_multiplier),
            omega,
            bound,
            q_factor,
            kappa: regime_kappa(regime, q) as u32,
            inner,
            l_multiplier,
            master_seed,
        };
        if inner == InnerKind::Sketched {
            config.inner_config()?;
        }
        Ok(config)
    }

    fn psl_params(&self) -> PslParams {
        PslParams {
            epsilon: self.epsilon,
            rho: self.rho,
            zeta: self.zeta,
            k: self.k,
            t: self.t,
        }
    }

    /// Configuration of the inner sketch; only meaningful for [`InnerKind::Sketched`].
    pub fn inner_config(&self) -> Result<SketchConfig> {
        let seed = SeedTree::new(self.master_seed).child(SeedRole::Inner, 0);
        let problem = if self.q > 2.0 {
            Problem::Fk
        } else if self.q >= 1.0 {
            Problem::Lp
        } else {
            return invalid(format!("sketched inner cells need q >= 1, got q={}", self.q));
        };
        SketchConfig::with_l_multiplier(problem, self.n2, self.q, self.epsilon / 2.0, self.zeta, seed, self.l_multiplier)
    }

    /// Reals held per nonzero outer cell.
    pub fn inner_words(&self) -> Result<u128> {
        match self.inner {
            InnerKind::Exact => Ok(self.n2 as u128),
            InnerKind::Sketched => {
                let c = self.inner_config()?;
                Ok(c.total_cells() + c.ams_width().unwrap_or(0) as u128)
            }
        }
    }

    /// Total words of a fully populated sketch: `l * m * inner_words`.
    pub fn space_words(&self) -> Result<u128> {
        Ok(self.l as u128 * self.m as u128 * self.inner_words()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Exact(Vec<f64>),
    Sketched(Box<LinearSketch>),
}

/// Outer tables whose cells hold inner sketch states.
#[derive(Debug, Clone)]
pub struct NestedSketch {
    config: CascadedConfig,
    buckets: Vec<IndexHash>,
    signs: Vec<IndexHash>,
    weights: PrecisionWeights,
    template: Option<LinearSketch>,
    /// Keyed by `table * m + bucket`.
    cells: HashMap<u64, Cell>,
    update_count: u64,
}

impl PartialEq for NestedSketch {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.update_count == other.update_count && self.cells == other.cells
    }
}

impl NestedSketch {
    pub fn new(config: CascadedConfig) -> Result<Self> {
        let tree = SeedTree::new(config.master_seed);
        let kappa = config.kappa as usize;
        let template = match config.inner {
            InnerKind::Exact => None,
            InnerKind::Sketched => Some(LinearSketch::new(config.inner_config()?)),
        };
        Ok(NestedSketch {
            buckets: (0..config.l).map(|j| IndexHash::derive(&tree, SeedRole::Bucket, j, kappa)).collect(),
            signs: (0..config.l).map(|j| IndexHash::derive(&tree, SeedRole::Sign, j, kappa)).collect(),
            weights: PrecisionWeights::new(&tree, config.k),
            template,
            cells: HashMap::new(),
            update_count: 0,
            config,
        })
    }

    pub fn config(&self) -> &CascadedConfig {
        &self.config
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn weight(&self, row: u64) -> f64 {
        self.weights.weight(row)
    }

    fn empty_cell(&self) -> Cell {
        match &self.template {
            None => Cell::Exact(vec![0.0; self.config.n2 as usize]),
            Some(t) => Cell::Sketched(Box::new(t.empty_like())),
        }
    }

    /// Adds `delta` to entry `(row, col)`.
    pub fn update(&mut self, row: u64, col: u64, delta: f64) -> Result<()> {
        let c = self.config;
        if row >= c.n1 {
            return Err(SketchError::IndexOutOfRange { index: row, n: c.n1 });
        }
        if col >= c.n2 {
            return Err(SketchError::IndexOutOfRange { index: col, n: c.n2 });
        }
        if delta == 0.0 {
            return Ok(());
        }
        let scale = self.weights.weight(row).powf(1.0 / c.p) * delta;
        for j in 0..c.l as usize {
            let key = j as u64 * c.m + self.buckets[j].bucket(row, c.m);
            let v = self.signs[j].sign(row) * scale;
            if !self.cells.contains_key(&key) {
                let fresh = self.empty_cell();
                self.cells.insert(key, fresh);
            }
            match self.cells.get_mut(&key).expect("inserted above") {
                Cell::Exact(vec) => vec[col as usize] += v,
                Cell::Sketched(inner) => inner.update(col, v)?,
            }
        }
        self.update_count += 1;
        Ok(())
    }

    /// Applies a row-major `n1 x n2` matrix (shorter inputs are zero-padded).
    pub fn update_matrix(&mut self, rows: &[Vec<f64>]) -> Result<()> {
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                self.update(i as u64, j as u64, v)?;
            }
        }
        Ok(())
    }

    pub fn merge_from(&mut self, other: &NestedSketch) -> Result<()> {
        if self.config != other.config {
            return Err(SketchError::ConfigMismatch("cascaded sketches differ in configuration".into()));
        }
        for (key, cell) in &other.cells {
            match (self.cells.get_mut(key), cell) {
                (None, _) => {
                    self.cells.insert(*key, cell.clone());
                }
                (Some(Cell::Exact(a)), Cell::Exact(b)) => {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += *y;
                    }
                }
                (Some(Cell::Sketched(a)), Cell::Sketched(b)) => a.merge_from(b)?,
                _ => unreachable!("cell kind is fixed by the configuration"),
            }
        }
        self.update_count += other.update_count;
        Ok(())
    }

    /// `l_q` norm of one cell's contents.
    fn cell_norm(&self, cell: &Cell) -> Result<f64> {
        let q = self.config.q;
        match cell {
            Cell::Exact(v) => Ok(v.iter().map(|x| x.abs().powf(q)).sum::<f64>().powf(1.0 / q)),
            Cell::Sketched(inner) => Ok(estimate(inner)?.value.max(0.0).powf(1.0 / q)),
        }
    }

    /// Median over tables of the inner norm at each row's cells, with `w_i`.
    fn row_table(&self) -> Result<XhatTable> {
        let c = &self.config;
        let mut norms: HashMap<u64, f64> = HashMap::with_capacity(self.cells.len());
        for (&key, cell) in &self.cells {
            norms.insert(key, self.cell_norm(cell)?);
        }
        let mut column = vec![0.0; c.l as usize];
        let mut entries = Vec::new();
        for i in 0..c.n1 {
            for (j, slot) in column.iter_mut().enumerate() {
                let key = j as u64 * c.m + self.buckets[j].bucket(i, c.m);
                *slot = norms.get(&key).copied().unwrap_or(0.0);
            }
            let med = median_in_place(&mut column);
            if med > 0.0 {
                entries.push((self.weights.weight(i), med));
            }
        }
        Ok(XhatTable::from_entries(c.p, self.config.psl_params(), entries))
    }

    /// Estimate of `||x||_{p,q}^p` by the halving search.
    pub fn estimate(&self) -> Result<EstimateReport> {
        let c = &self.config;
        let start = 2f64.powi((ceil_log2(c.n1) + ceil_log2(c.n2) + DEFAULT_MAGNITUDE_BITS) as i32);
        Ok(self.row_table()?.halving_search(start, false))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.into_inner()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        let c = &self.config;
        w.bytes(MAGIC);
        w.u16(FORMAT_VERSION);
        w.u8(CASCADED_TAG);
        w.u8(match c.inner {
            InnerKind::Exact => 0,
            InnerKind::Sketched => 1,
        });
        w.u64(c.n1);
        w.u64(c.n2);
        w.f64(c.p);
        w.f64(c.q);
        w.f64(c.epsilon);
        w.f64(c.rho);
        w.f64(c.zeta);
        w.u64(c.k);
        w.f64(c.t);
        w.u64(c.m);
        w.u64(c.l);
        w.f64(c.omega);
        w.f64(c.bound);
        w.f64(c.q_factor);
        w.u32(c.kappa);
        w.u32(c.l_multiplier);
        w.u64(c.master_seed);
        w.u64(self.update_count);
        let mut keys: Vec<u64> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        w.u64(keys.len() as u64);
        for key in keys {
            w.u64(key);
            match &self.cells[&key] {
                Cell::Exact(v) => v.iter().for_each(|&x| w.f64(x)),
                Cell::Sketched(inner) => inner.write(w),
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let (tag, encoding) = read_header(&mut r)?;
        if tag != CASCADED_TAG {
            return Err(SketchError::Format(format!("expected a cascaded record, got tag {tag}")));
        }
        let out = Self::read_body(&mut r, encoding)?;
        if !r.is_empty() {
            return Err(SketchError::Format("trailing bytes after cascaded record".into()));
        }
        Ok(out)
    }

    pub(crate) fn read_body(r: &mut Reader<'_>, encoding: u8) -> Result<Self> {
        let inner = match encoding {
            0 => InnerKind::Exact,
            1 => InnerKind::Sketched,
            other => return Err(SketchError::Format(format!("unknown inner encoding {other}"))),
        };
        let n1 = r.u64()?;
        let n2 = r.u64()?;
        let p = r.f64()?;
        let q = r.f64()?;
        let epsilon = r.f64()?;
        let rho = r.f64()?;
        let zeta = r.f64()?;
        let k = r.u64()?;
        let t = r.f64()?;
        let m = r.u64()?;
        let l = r.u64()?;
        let omega = r.f64()?;
        let bound = r.f64()?;
        let q_factor = r.f64()?;
        let kappa = r.u32()?;
        let l_multiplier = r.u32()?;
        let master_seed = r.u64()?;
        let update_count = r.u64()?;
        let config = CascadedConfig::with_options(n1, n2, p, q, epsilon, zeta, inner, master_seed, q_factor, l_multiplier)
            .map_err(|e| SketchError::Format(format!("stored parameters are invalid: {e}")))?;
        let stored = CascadedConfig {
            n1,
            n2,
            p,
            q,
            epsilon,
            rho,
            zeta,
            k,
            t,
            m,
            l,
            omega,
            bound,
            q_factor,
            kappa,
            inner,
            l_multiplier,
            master_seed,
        };
        if stored != config {
            return Err(SketchError::Format(
                "stored derived parameters do not match their recomputation".into(),
            ));
        }
        let mut sketch = NestedSketch::new(config)?;
        sketch.update_count = update_count;
        let count = r.u64()?;
        let total = l as u128 * m as u128;
        let mut last: Option<u64> = None;
        for _ in 0..count {
            let key = r.u64()?;
            if key as u128 >= total || last.is_some_and(|prev| key <= prev) {
                return Err(SketchError::Format(format!("outer cell {key} out of order or out of range")));
            }
            last = Some(key);
            let cell = match &sketch.template {
                None => Cell::Exact((0..n2).map(|_| r.f64()).collect::<Result<_>>()?),
                Some(template) => {
                    let inner = LinearSketch::read(r)?;
                    if inner.config() != template.config() {
                        return Err(SketchError::Format("inner sketch configuration mismatch".into()));
                    }
                    Cell::Sketched(Box::new(inner))
                }
            };
            sketch.cells.insert(key, cell);
        }
        Ok(sketch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::estimate_lp;

    #[test]
    fn bound_examples() {
        assert_eq!(p_type_bound(1.0, 1.0, 512, 100.0).unwrap(), 8100.0);
        let b = p_type_bound(3.0, 3.0, 512, 100.0).unwrap();
        let expected = 81.0 * 9.0 * 100f64.powf(2.0 / 3.0) * 512f64.powf(1.0 / 3.0);
        assert!((b - expected).abs() <= 1e-9 * expected);
        // q < p < 1 and q < 2: only the last row applies.
        assert_eq!(applicable_regimes(0.8, 0.5), vec![Regime::QBelowP]);
        assert!((p_type_bound(0.8, 0.5, 64, 100.0).unwrap() - 9.0 * 100f64.powf(1.25)).abs() < 1e-6);
    }

    #[test]
    fn overlapping_regimes_take_the_minimum() {
        let (p, q, n, w) = (4.0, 3.0, 1u64 << 12, 1e4);
        let regimes = applicable_regimes(p, q);
        assert_eq!(regimes, vec![Regime::LargeQ, Regime::QBelowP]);
        let b = p_type_bound(p, q, n, w).unwrap();
        let a = regime_bound(Regime::LargeQ, p, n, w, q * q);
        let c = regime_bound(Regime::QBelowP, p, n, w, q * q);
        assert_eq!(b, a.min(c));
    }

    #[test]
    fn large_q_exponent_grows_with_p() {
        let n = 1000u64;
        let mut prev = 0.0;
        for p in [2.0, 3.0, 5.0, 10.0, 100.0] {
            let e = (n as f64).powf(1.0 - 2.0 / p);
            assert!(e > prev);
            prev = e;
        }
        assert!(prev < n as f64);
    }

    #[test]
    fn outside_regimes_rejected() {
        assert!(p_type_bound(0.0, 1.0, 64, 10.0).is_err());
        assert!(p_type_bound(1.0, -1.0, 64, 10.0).is_err());
        assert!(p_type_bound(1.0, 1.0, 64, 0.0).is_err());
    }

    #[test]
    fn config_arithmetic_matches_regime_formula() {
        let c = CascadedConfig::new(64, 64, 1.0, 2.0, 0.3, 8.0, InnerKind::Exact, 1).unwrap();
        let k = (8.0 / (0.3 / 8.0 * 0.09f64)).ceil() as u64;
        assert_eq!(c.k, k);
        let omega = 10.0 * k as f64 * 5.0 * 64f64.ln();
        assert!((c.omega - omega).abs() < 1e-6);
        assert_eq!(c.m, (81.0 * 3.0 * omega / 0.3).ceil() as u64);
        assert_eq!(c.kappa, 2);
        assert_eq!(c.l, 25);
        assert_eq!(c.space_words().unwrap(), 25 * c.m as u128 * 64);

        let c = CascadedConfig::new(64, 64, 3.0, 3.0, 0.3, 8.0, InnerKind::Exact, 1).unwrap();
        let w = 3.0 * 3.0 * c.omega / 0.3;
        let expected = 81.0 * 9.0 * w.powf(2.0 / 3.0) * 64f64.powf(1.0 / 3.0);
        assert_eq!(c.m, expected.ceil() as u64);
        assert_eq!(c.kappa, 8);
    }

    fn small(p: f64, q: f64, seed: u64) -> NestedSketch {
        NestedSketch::new(CascadedConfig::new(16, 8, p, q, 0.3, 0.05, InnerKind::Exact, seed).unwrap()).unwrap()
    }

    #[test]
    fn zero_matrix_estimates_zero() {
        let s = small(1.0, 2.0, 1);
        let rep = s.estimate().unwrap();
        assert_eq!(rep.value, 0.0);
        assert!(!rep.success_flag);
    }

    #[test]
    fn single_update_cell_recomputation() {
        for (p, q) in [(1.0, 2.0), (3.0, 3.0)] {
            let mut s = small(p, q, 7);
            s.update(3, 5, 2.0).unwrap();
            let c = *s.config();
            let tree = SeedTree::new(c.master_seed);
            let w = PrecisionWeights::new(&tree, c.k).weight(3);
            for j in 0..c.l {
                let b = IndexHash::derive(&tree, SeedRole::Bucket, j, c.kappa as usize);
                let g = IndexHash::derive(&tree, SeedRole::Sign, j, c.kappa as usize);
                let key = j * c.m + b.bucket(3, c.m);
                let Cell::Exact(v) = &s.cells[&key] else { panic!() };
                assert_eq!(v[5], g.sign(3) * w.powf(1.0 / p) * 2.0);
                assert_eq!(v.iter().filter(|x| **x != 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn zero_delta_and_linearity() {
        let mut a = small(1.0, 2.0, 3);
        a.update(2, 2, 0.0).unwrap();
        assert!(a.cells.is_empty());
        a.update(2, 2, 1.5).unwrap();
        a.update(2, 2, 2.5).unwrap();
        let mut b = small(1.0, 2.0, 3);
        b.update(2, 2, 4.0).unwrap();
        for (key, cell) in &b.cells {
            let (Cell::Exact(x), Cell::Exact(y)) = (cell, &a.cells[key]) else { panic!() };
            assert!((x[2] - y[2]).abs() <= 1e-12 * x[2].abs());
        }
    }

    #[test]
    fn index_range_checked() {
        let mut s = small(1.0, 2.0, 1);
        assert!(s.update(16, 0, 1.0).is_err());
        assert!(s.update(0, 8, 1.0).is_err());
    }

    #[test]
    fn nesting_consistency_with_flat_lp() {
        let p = 1.5;
        for seed in 0..5 {
            let config = CascadedConfig::new(64, 64, p, p, 0.3, 8.0, InnerKind::Exact, seed).unwrap();
            let mut nested = NestedSketch::new(config).unwrap();
            let mut flat = LinearSketch::new(SketchConfig::new(Problem::Lp, 64, p, 0.3, 8.0, seed).unwrap());
            for i in 0..64u64 {
                let v = (i % 7) as f64 - 3.0;
                nested.update(i, i, v).unwrap();
                flat.update(i, v).unwrap();
            }
            let a = nested.estimate().unwrap();
            let b = estimate_lp(&flat).unwrap();
            assert!((a.value - b.value).abs() <= 1e-9 * b.value, "{} vs {}", a.value, b.value);
            assert_eq!(a.r_used, b.r_used);
        }
    }

    #[test]
    fn serialization_round_trip_and_merge() {
        let mut a = small(1.0, 2.0, 11);
        let mut b = small(1.0, 2.0, 11);
        let mut both = small(1.0, 2.0, 11);
        for i in 0..16u64 {
            a.update(i, i % 8, 1.0).unwrap();
            b.update(i, (i + 3) % 8, -2.0).unwrap();
            both.update(i, i % 8, 1.0).unwrap();
            both.update(i, (i + 3) % 8, -2.0).unwrap();
        }
        let back = NestedSketch::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), a.to_bytes());
        a.merge_from(&b).unwrap();
        assert_eq!(a.to_bytes(), both.to_bytes());
        assert!(a.merge_from(&small(1.0, 2.0, 12)).is_err());
    }

    #[test]
    fn sketched_inner_cells() {
        let config = CascadedConfig::new(8, 16, 1.0, 2.0, 0.3, 0.05, InnerKind::Sketched, 5).unwrap();
        let inner = config.inner_config().unwrap();
        assert_eq!(inner.problem, Problem::Lp);
        assert_eq!(inner.epsilon, 0.15);
        let mut s = NestedSketch::new(config).unwrap();
        s.update(1, 3, 4.0).unwrap();
        let rep = s.estimate().unwrap();
        assert!(rep.success_flag);
        assert!((rep.value - 4.0).abs() <= 0.3 * 4.0, "{}", rep.value);
        let back = NestedSketch::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), s.to_bytes());

        let fq = CascadedConfig::new(8, 16, 1.0, 3.0, 0.3, 0.05, InnerKind::Sketched, 5).unwrap();
        assert_eq!(fq.inner_config().unwrap().problem, Problem::Fk);
        assert!(CascadedConfig::new(8, 16, 0.5, 0.5, 0.3, 0.05, InnerKind::Sketched, 5).is_err());
    }
}
