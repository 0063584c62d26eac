//! The linear sketch: `l` hash tables of `m` cells fed with weight-scaled,
//! sign-flipped updates, plus the AMS sketch used to normalise `F_k`.
//!
//! Cell `z` of table `j` holds `sum_{i: h_j(i) = z} g_j(i) * w_i^(1/p) * x_i`.
//! The map from `x` to the cells is linear, so a stream update `(i, delta)`
//! touches one cell per table and two sketches built from the same master
//! seed merge by cell-wise addition.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::codec::{Reader, Writer};
use crate::error::{invalid, Result, SketchError};
use crate::hashing::{AffineSeed, PolySeed, SeedRole, SeedTree, MERSENNE_61};
use crate::psl::{expected_weight_power, PrecisionWeights, PslParams};

/// Leading bytes of every serialized sketch record.
pub const MAGIC: &[u8; 4] = b"PSK1";
pub const FORMAT_VERSION: u16 = 1;

/// Above this many cells the tables are kept as sparse maps.
const DENSE_CELL_LIMIT: u128 = 1 << 22;

/// Largest accepted table width.
const MAX_WIDTH: f64 = (1u64 << 62) as f64;

/// Which estimator a sketch is dimensioned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Problem {
    /// `F_p = sum |x_i|^p` for `p > 2`.
    Fk,
    /// `||x||_1`.
    L1,
    /// `||x||_p^p` for `p in [1, 2]`.
    Lp,
    /// `l_p` sampling for `p in [1, 2]`.
    Sampler,
}

impl Problem {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Problem::Fk => 0,
            Problem::L1 => 1,
            Problem::Lp => 2,
            Problem::Sampler => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Problem::Fk),
            1 => Some(Problem::L1),
            2 => Some(Problem::Lp),
            3 => Some(Problem::Sampler),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Problem::Fk => "fk",
            Problem::L1 => "l1",
            Problem::Lp => "lp",
            Problem::Sampler => "sampler",
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every dimensioning parameter of a sketch. All fields past the inputs
/// (`problem`, `n`, `p`, `epsilon`, `zeta`, `l_multiplier`, `master_seed`)
/// are derived and recomputable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchConfig {
    pub problem: Problem,
    pub n: u64,
    pub p: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub zeta: f64,
    /// Uniform columns per weight.
    pub k: u64,
    /// Reconstruction threshold `4/eps`.
    pub t: f64,
    /// Table width.
    pub m: u64,
    /// Number of tables (odd).
    pub l: u64,
    /// Weight budget the table width is sized against.
    pub omega: f64,
    /// Width multiplier: `m = ceil(alpha_blowup * omega)`.
    pub alpha_blowup: f64,
    pub l_multiplier: u32,
    pub master_seed: u64,
}

/// `ceil(log2 n)` for `n >= 1`.
pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Smallest odd integer `>= multiplier * ceil(log2 n)`, and at least 3.
pub fn table_count(n: u64, multiplier: u32) -> u64 {
    let base = (multiplier as u64 * ceil_log2(n) as u64).max(3);
    if base % 2 == 0 {
        base + 1
    } else {
        base
    }
}

/// `omega = 10 * k * ln(n^5)`, the closed form of ten times the conditional
/// weight mean bound.
pub fn omega_closed_form(k: u64, n: u64) -> f64 {
    10.0 * k as f64 * 5.0 * (n as f64).ln()
}

impl SketchConfig {
    pub const DEFAULT_L_MULTIPLIER: u32 = 4;

    pub fn new(problem: Problem, n: u64, p: f64, epsilon: f64, zeta: f64, master_seed: u64) -> Result<Self> {
        Self::with_l_multiplier(problem, n, p, epsilon, zeta, master_seed, Self::DEFAULT_L_MULTIPLIER)
    }

    pub fn with_l_multiplier(
        problem: Problem,
        n: u64,
        p: f64,
        epsilon: f64,
        zeta: f64,
        master_seed: u64,
        l_multiplier: u32,
    ) -> Result<Self> {
        if n < 8 {
            return invalid(format!("domain size n={n} must be at least 8"));
        }
        if n >= MERSENNE_61 {
            return invalid(format!("domain size n={n} must be below 2^61 - 1"));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0 / 3.0) {
            return invalid(format!("epsilon={epsilon} must lie in (0, 1/3]"));
        }
        if !(zeta > 0.0 && zeta.is_finite()) {
            return invalid(format!("zeta={zeta} must be positive"));
        }
        if l_multiplier == 0 {
            return invalid("table-count multiplier must be positive");
        }
        match problem {
            Problem::Fk if !(p > 2.0 && p.is_finite()) => {
                return invalid(format!("fk requires p > 2, got p={p}"));
            }
            Problem::L1 if p != 1.0 => {
                return invalid(format!("l1 requires p = 1, got p={p}"));
            }
            Problem::Lp | Problem::Sampler if !(1.0..=2.0).contains(&p) => {
                return invalid(format!("{problem} requires p in [1, 2], got p={p}"));
            }
            _ => {}
        }

        let nf = n as f64;
        let t = 4.0 / epsilon;
        let (rho, k, omega, alpha_blowup) = match problem {
            Problem::Fk => {
                let rho = (epsilon / 4.0) / nf.powf(p / 2.0 - 1.0);
                let psl = PslParams::new(epsilon, rho.min(1.0), zeta)?;
                let omega = 9.0 * expected_weight_power(psl.k, 2.0 / p)?;
                let alpha = (6.0 * p).powi(2) / epsilon.powf(2.0 - 2.0 / p);
                (rho, psl.k, omega, alpha)
            }
            Problem::L1 => {
                let psl = PslParams::new(epsilon, epsilon / 8.0, zeta)?;
                (psl.rho, psl.k, omega_closed_form(psl.k, n), 3.0)
            }
            Problem::Lp => {
                let psl = PslParams::new(epsilon, epsilon / 8.0, zeta)?;
                let alpha = 3f64.powf(2.0 + p) * epsilon.powf(1.0 - p);
                (psl.rho, psl.k, omega_closed_form(psl.k, n), alpha)
            }
            Problem::Sampler => {
                let k = (zeta * t * ceil_log2(n) as f64).ceil();
                if k > u32::MAX as f64 {
                    return invalid(format!("sampler needs k={k} columns"));
                }
                let k = k as u64;
                let psl = PslParams::with_columns(epsilon, k, zeta)?;
                let alpha = 3f64.powf(2.0 + p) * epsilon.powf(1.0 - p);
                (psl.rho, k, omega_closed_form(k, n), alpha)
            }
        };
        let width = (alpha_blowup * omega).ceil();
        if !(width >= 1.0 && width <= MAX_WIDTH) {
            return invalid(format!("table width {width} is out of range"));
        }
        Ok(SketchConfig {
            problem,
            n,
            p,
            epsilon,
            rho,
            zeta,
            k,
            t,
            m: width as u64,
            l: table_count(n, l_multiplier),
            omega,
            alpha_blowup,
            l_multiplier,
            master_seed,
        })
    }

    /// The same construction under another master seed.
    pub fn reseeded(&self, master_seed: u64) -> Self {
        SketchConfig {
            master_seed,
            ..*self
        }
    }

    pub fn psl_params(&self) -> PslParams {
        PslParams {
            epsilon: self.epsilon,
            rho: self.rho,
            zeta: self.zeta,
            k: self.k,
            t: self.t,
        }
    }

    /// Total number of cells `l * m`.
    pub fn total_cells(&self) -> u128 {
        self.l as u128 * self.m as u128
    }

    /// Width of the AMS companion, present only for `F_k`.
    pub fn ams_width(&self) -> Option<u64> {
        (self.problem == Problem::Fk).then(|| AmsSketch::width_for(self.p, self.n))
    }

    fn mismatch(&self, other: &SketchConfig) -> Option<&'static str> {
        if self.problem != other.problem {
            return Some("problem kind");
        }
        if self.master_seed != other.master_seed {
            return Some("master seed");
        }
        if self.n != other.n || self.m != other.m || self.l != other.l || self.k != other.k {
            return Some("dimensions");
        }
        if self != other {
            return Some("parameters");
        }
        None
    }
}

/// Seeds and weights shared by every sketch built from one configuration.
#[derive(Debug)]
pub(crate) struct SketchContext {
    buckets: Vec<AffineSeed>,
    signs: Vec<AffineSeed>,
    weights: PrecisionWeights,
    weight_cache: OnceLock<Vec<f64>>,
}

impl SketchContext {
    fn new(config: &SketchConfig) -> Self {
        let tree = SeedTree::new(config.master_seed);
        SketchContext {
            buckets: (0..config.l).map(|j| tree.affine(SeedRole::Bucket, j)).collect(),
            signs: (0..config.l).map(|j| tree.affine(SeedRole::Sign, j)).collect(),
            weights: PrecisionWeights::new(&tree, config.k),
            weight_cache: OnceLock::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Cells {
    Dense(Vec<f64>),
    /// One map per table; absent cells are zero.
    Sparse(Vec<HashMap<u64, f64>>),
}

impl Cells {
    fn zeroed(l: u64, m: u64) -> Self {
        if l as u128 * m as u128 <= DENSE_CELL_LIMIT {
            Cells::Dense(vec![0.0; (l * m) as usize])
        } else {
            Cells::Sparse((0..l).map(|_| HashMap::new()).collect())
        }
    }
}

/// The sketch of Alg.-1 shape: `l` tables of `m` real cells.
#[derive(Debug, Clone)]
pub struct LinearSketch {
    config: SketchConfig,
    ctx: Arc<SketchContext>,
    cells: Cells,
    update_count: u64,
    ams: Option<AmsSketch>,
}

impl PartialEq for LinearSketch {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.update_count == other.update_count
            && self.ams == other.ams
            && self.nonzero_cells() == other.nonzero_cells()
    }
}

/// Zeroed sketch for `problem`; see [`SketchConfig::new`] for the parameters.
pub fn create(problem: Problem, n: u64, p: f64, epsilon: f64, zeta: f64, master_seed: u64) -> Result<LinearSketch> {
    Ok(LinearSketch::new(SketchConfig::new(problem, n, p, epsilon, zeta, master_seed)?))
}

/// Cell-wise sum of two sketches with identical configuration.
pub fn merge(a: &LinearSketch, b: &LinearSketch) -> Result<LinearSketch> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}

impl LinearSketch {
    pub fn new(config: SketchConfig) -> Self {
        let ams = config
            .ams_width()
            .map(|_| AmsSketch::new(config.p, config.n, config.master_seed));
        LinearSketch {
            ctx: Arc::new(SketchContext::new(&config)),
            cells: Cells::zeroed(config.l, config.m),
            update_count: 0,
            ams,
            config,
        }
    }

    /// A zeroed sketch sharing this sketch's seeds and cached weights.
    pub fn empty_like(&self) -> Self {
        LinearSketch {
            config: self.config,
            ctx: Arc::clone(&self.ctx),
            cells: Cells::zeroed(self.config.l, self.config.m),
            update_count: 0,
            ams: self.ams.as_ref().map(AmsSketch::empty_like),
        }
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn ams(&self) -> Option<&AmsSketch> {
        self.ams.as_ref()
    }

    pub fn precision_weights(&self) -> &PrecisionWeights {
        &self.ctx.weights
    }

    /// `w_i` for every index, computed once and cached.
    pub fn weights(&self) -> &[f64] {
        self.ctx
            .weight_cache
            .get_or_init(|| self.ctx.weights.weights(self.config.n))
    }

    pub fn weight(&self, i: u64) -> f64 {
        match self.ctx.weight_cache.get() {
            Some(all) => all[i as usize],
            None => self.ctx.weights.weight(i),
        }
    }

    #[inline]
    pub fn bucket(&self, table: usize, i: u64) -> u64 {
        self.ctx.buckets[table].bucket(i, self.config.m)
    }

    #[inline]
    pub fn sign(&self, table: usize, i: u64) -> f64 {
        self.ctx.signs[table].sign(i)
    }

    pub fn cell(&self, table: usize, z: u64) -> f64 {
        match &self.cells {
            Cells::Dense(v) => v[table * self.config.m as usize + z as usize],
            Cells::Sparse(maps) => maps[table].get(&z).copied().unwrap_or(0.0),
        }
    }

    /// `H_j(h_j(i))` for table `j`.
    #[inline]
    pub fn cell_of(&self, table: usize, i: u64) -> f64 {
        self.cell(table, self.bucket(table, i))
    }

    fn add_to_cell(&mut self, table: usize, z: u64, v: f64) {
        match &mut self.cells {
            Cells::Dense(cells) => cells[table * self.config.m as usize + z as usize] += v,
            Cells::Sparse(maps) => *maps[table].entry(z).or_insert(0.0) += v,
        }
    }

    /// Adds `delta` to `x_i`.
    pub fn update(&mut self, i: u64, delta: f64) -> Result<()> {
        if i >= self.config.n {
            return Err(SketchError::IndexOutOfRange {
                index: i,
                n: self.config.n,
            });
        }
        if delta == 0.0 {
            return Ok(());
        }
        let scale = self.weight(i).powf(1.0 / self.config.p);
        for j in 0..self.config.l as usize {
            let z = self.bucket(j, i);
            let v = self.sign(j, i) * scale * delta;
            self.add_to_cell(j, z, v);
        }
        if let Some(ams) = self.ams.as_mut() {
            ams.update(i, delta);
        }
        self.update_count += 1;
        Ok(())
    }

    /// Applies `x` as one update per nonzero coordinate.
    pub fn update_vector(&mut self, x: &[f64]) -> Result<()> {
        if x.len() as u64 > self.config.n {
            return invalid(format!(
                "vector of length {} exceeds domain size {}",
                x.len(),
                self.config.n
            ));
        }
        self.weights();
        for (i, &v) in x.iter().enumerate() {
            self.update(i as u64, v)?;
        }
        Ok(())
    }

    pub fn merge_from(&mut self, other: &LinearSketch) -> Result<()> {
        if let Some(what) = self.config.mismatch(&other.config) {
            return Err(SketchError::ConfigMismatch(format!(
                "sketches differ in {what}"
            )));
        }
        match (&mut self.cells, &other.cells) {
            (Cells::Dense(a), Cells::Dense(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += *y;
                }
            }
            (Cells::Sparse(a), Cells::Sparse(b)) => {
                for (ta, tb) in a.iter_mut().zip(b) {
                    for (&z, &v) in tb {
                        *ta.entry(z).or_insert(0.0) += v;
                    }
                }
            }
            _ => unreachable!("storage is a function of the configuration"),
        }
        if let (Some(a), Some(b)) = (self.ams.as_mut(), other.ams.as_ref()) {
            a.merge_from(b);
        }
        self.update_count += other.update_count;
        Ok(())
    }

    /// Cells holding a value other than `+0.0`, as `(table * m + bucket, value)`
    /// in increasing index order.
    pub fn nonzero_cells(&self) -> Vec<(u64, f64)> {
        let m = self.config.m;
        match &self.cells {
            Cells::Dense(v) => v
                .iter()
                .enumerate()
                .filter(|(_, c)| c.to_bits() != 0)
                .map(|(idx, &c)| (idx as u64, c))
                .collect(),
            Cells::Sparse(maps) => {
                let mut out: Vec<(u64, f64)> = maps
                    .iter()
                    .enumerate()
                    .flat_map(|(j, map)| {
                        map.iter()
                            .filter(|(_, c)| c.to_bits() != 0)
                            .map(move |(&z, &c)| (j as u64 * m + z, c))
                    })
                    .collect();
                out.sort_unstable_by_key(|&(idx, _)| idx);
                out
            }
        }
    }

    /// Adds raw values to cells addressed as `table * m + bucket`.
    #[cfg(test)]
    pub(crate) fn inject_cells(&mut self, cells: &[(u64, f64)]) {
        let m = self.config.m;
        for &(idx, v) in cells {
            self.add_to_cell((idx / m) as usize, idx % m, v);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.nonzero_cells().iter().all(|&(_, c)| c == 0.0)
    }

    /// Serialized record; see the crate README for the layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.into_inner()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        let c = &self.config;
        let nonzero = self.nonzero_cells();
        let dense = c.total_cells() <= 2 * nonzero.len() as u128 + 1;
        w.bytes(MAGIC);
        w.u16(FORMAT_VERSION);
        w.u8(c.problem.tag());
        w.u8(if dense { 0 } else { 1 });
        w.u64(c.n);
        w.f64(c.p);
        w.f64(c.epsilon);
        w.f64(c.rho);
        w.f64(c.zeta);
        w.u64(c.k);
        w.f64(c.t);
        w.u64(c.m);
        w.u64(c.l);
        w.f64(c.omega);
        w.f64(c.alpha_blowup);
        w.u32(c.l_multiplier);
        w.u64(c.master_seed);
        w.u64(self.update_count);
        if let Some(ams) = &self.ams {
            w.u64(ams.counters.len() as u64);
            for &v in &ams.counters {
                w.f64(v);
            }
        }
        if dense {
            let mut next = nonzero.iter().peekable();
            for idx in 0..c.total_cells() as u64 {
                match next.peek() {
                    Some(&&(at, v)) if at == idx => {
                        w.f64(v);
                        next.next();
                    }
                    _ => w.f64(0.0),
                }
            }
        } else {
            w.u64(nonzero.len() as u64);
            for (idx, v) in nonzero {
                w.u64(idx);
                w.f64(v);
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let sketch = Self::read(&mut r)?;
        if !r.is_empty() {
            return Err(SketchError::Format(format!(
                "{} trailing bytes after sketch record",
                bytes.len() - r.position()
            )));
        }
        Ok(sketch)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let (problem, encoding) = read_header(r)?;
        let problem = Problem::from_tag(problem)
            .ok_or_else(|| SketchError::Format(format!("unknown problem tag {problem}")))?;
        Self::read_body(r, problem, encoding)
    }

    pub(crate) fn read_body(r: &mut Reader<'_>, problem: Problem, encoding: u8) -> Result<Self> {
        let n = r.u64()?;
        let p = r.f64()?;
        let epsilon = r.f64()?;
        let rho = r.f64()?;
        let zeta = r.f64()?;
        let k = r.u64()?;
        let t = r.f64()?;
        let m = r.u64()?;
        let l = r.u64()?;
        let omega = r.f64()?;
        let alpha_blowup = r.f64()?;
        let l_multiplier = r.u32()?;
        let master_seed = r.u64()?;
        let update_count = r.u64()?;

        let config = SketchConfig::with_l_multiplier(problem, n, p, epsilon, zeta, master_seed, l_multiplier)
            .map_err(|e| SketchError::Format(format!("stored parameters are invalid: {e}")))?;
        let stored = SketchConfig {
            problem,
            n,
            p,
            epsilon,
            rho,
            zeta,
            k,
            t,
            m,
            l,
            omega,
            alpha_blowup,
            l_multiplier,
            master_seed,
        };
        if stored != config {
            return Err(SketchError::Format(
                "stored derived parameters do not match their recomputation".into(),
            ));
        }

        let mut sketch = LinearSketch::new(config);
        sketch.update_count = update_count;
        if let Some(ams) = sketch.ams.as_mut() {
            let width = r.u64()?;
            if width != ams.counters.len() as u64 {
                return Err(SketchError::Format(format!(
                    "AMS width {width} does not match configuration ({})",
                    ams.counters.len()
                )));
            }
            for slot in ams.counters.iter_mut() {
                *slot = r.f64()?;
            }
        }
        let total = config.total_cells() as u64;
        match encoding {
            0 => {
                if config.total_cells() > (1u128 << 40) {
                    return Err(SketchError::Format("dense encoding of an oversized sketch".into()));
                }
                for idx in 0..total {
                    let v = r.f64()?;
                    if v.to_bits() != 0 {
                        sketch.add_to_cell((idx / m) as usize, idx % m, v);
                    }
                }
            }
            1 => {
                let count = r.u64()?;
                let mut last: Option<u64> = None;
                for _ in 0..count {
                    let idx = r.u64()?;
                    let v = r.f64()?;
                    if idx >= total || last.is_some_and(|prev| idx <= prev) {
                        return Err(SketchError::Format(format!(
                            "sparse cell index {idx} out of order or out of range"
                        )));
                    }
                    last = Some(idx);
                    sketch.add_to_cell((idx / m) as usize, idx % m, v);
                }
            }
            other => {
                return Err(SketchError::Format(format!("unknown cell encoding {other}")));
            }
        }
        Ok(sketch)
    }
}

/// Reads magic, version, problem tag and encoding byte.
pub(crate) fn read_header(r: &mut Reader<'_>) -> Result<(u8, u8)> {
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(SketchError::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(SketchError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    Ok((r.u8()?, r.u8()?))
}

/// Median-of-means `l_2` sketch with 4-wise independent signs.
#[derive(Debug, Clone, PartialEq)]
pub struct AmsSketch {
    p: f64,
    seeds: Vec<PolySeed>,
    counters: Vec<f64>,
}

impl AmsSketch {
    pub const GROUP: usize = 6;

    /// `6 * ceil(p^2 ln n)` counters.
    pub fn width_for(p: f64, n: u64) -> u64 {
        Self::GROUP as u64 * (p * p * (n as f64).ln()).ceil().max(1.0) as u64
    }

    pub fn new(p: f64, n: u64, master_seed: u64) -> Self {
        let tree = SeedTree::new(master_seed);
        let width = Self::width_for(p, n);
        AmsSketch {
            p,
            seeds: (0..width).map(|r| tree.poly(SeedRole::AmsSign, r, 4)).collect(),
            counters: vec![0.0; width as usize],
        }
    }

    fn empty_like(&self) -> Self {
        AmsSketch {
            p: self.p,
            seeds: self.seeds.clone(),
            counters: vec![0.0; self.counters.len()],
        }
    }

    pub fn width(&self) -> usize {
        self.counters.len()
    }

    pub fn counters(&self) -> &[f64] {
        &self.counters
    }

    pub fn update(&mut self, i: u64, delta: f64) {
        for (c, s) in self.counters.iter_mut().zip(&self.seeds) {
            *c += s.sign(i) * delta;
        }
    }

    pub fn merge_from(&mut self, other: &AmsSketch) {
        for (a, b) in self.counters.iter_mut().zip(&other.counters) {
            *a += *b;
        }
    }

    /// `sqrt` of the median over groups of the mean squared counter.
    pub fn l2_estimate(&self) -> f64 {
        let mut means: Vec<f64> = self
            .counters
            .chunks(Self::GROUP)
            .map(|g| g.iter().map(|c| c * c).sum::<f64>() / g.len() as f64)
            .collect();
        means.sort_by(f64::total_cmp);
        let mid = means.len() / 2;
        let median = if means.len() % 2 == 1 {
            means[mid]
        } else {
            0.5 * (means[mid - 1] + means[mid])
        };
        median.sqrt()
    }

    /// `r` with `(1 - 1/p) ||x||_2 <= r <= ||x||_2` with high probability:
    /// the `l_2` estimate shrunk by `1 - 1/(3p)` into that window.
    pub fn ams_estimate(&self) -> f64 {
        (1.0 - 1.0 / (3.0 * self.p)) * self.l2_estimate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_count_is_odd_and_at_least_three() {
        assert_eq!(ceil_log2(8), 3);
        assert_eq!(ceil_log2(9), 4);
        assert_eq!(ceil_log2(4096), 12);
        assert_eq!(table_count(4096, 4), 49);
        assert_eq!(table_count(512, 4), 37);
        assert_eq!(table_count(1024, 4), 41);
        assert_eq!(table_count(8, 1), 3);
        for n in 8..2000 {
            let l = table_count(n, 4);
            assert_eq!(l % 2, 1);
            assert!(l >= 4 * ceil_log2(n) as u64);
        }
    }

    #[test]
    fn l1_config_arithmetic() {
        let c = SketchConfig::new(Problem::L1, 1 << 16, 1.0, 0.125, 8.0, 1).unwrap();
        let rho = 0.125 / 8.0;
        let k = (8.0 / (rho * 0.125 * 0.125) as f64).ceil() as u64;
        assert_eq!(c.k, k);
        let omega = 10.0 * k as f64 * 5.0 * (65536f64).ln();
        assert!((c.omega - omega).abs() <= 1e-9 * omega);
        assert_eq!(c.m, (3.0 * c.omega).ceil() as u64);
        assert_eq!(c.l, 65);
        assert_eq!(c.total_cells(), 65 * c.m as u128);
        // m scales as eps^-3 log n: halving eps multiplies it by 8.
        let c2 = SketchConfig::new(Problem::L1, 1 << 16, 1.0, 0.0625, 8.0, 1).unwrap();
        let ratio = c2.m as f64 / c.m as f64;
        assert!((ratio - 8.0).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn fk_config_arithmetic() {
        let c = SketchConfig::new(Problem::Fk, 512, 3.0, 0.3, 8.0, 1).unwrap();
        let rho = (0.3 / 4.0) / 512f64.sqrt();
        assert!((c.rho - rho).abs() < 1e-15);
        assert_eq!(c.k, (8.0 / (rho * 0.09)).ceil() as u64);
        let alpha = 18f64.powi(2) / 0.3f64.powf(2.0 - 2.0 / 3.0);
        assert!((c.alpha_blowup - alpha).abs() < 1e-9);
        let omega = 9.0 * expected_weight_power(c.k, 2.0 / 3.0).unwrap();
        assert_eq!(c.omega, omega);
        assert_eq!(c.m, (alpha * omega).ceil() as u64);
        assert_eq!(c.ams_width(), Some(6 * (9.0 * 512f64.ln()).ceil() as u64));
    }

    #[test]
    fn lp_and_sampler_config_arithmetic() {
        let c = SketchConfig::new(Problem::Lp, 1024, 2.0, 0.2, 8.0, 1).unwrap();
        assert!((c.alpha_blowup - 405.0).abs() < 1e-9);
        let s = SketchConfig::new(Problem::Sampler, 256, 1.0, 0.2, 8.0, 1).unwrap();
        assert_eq!(s.k, (8.0f64 * 20.0 * 8.0).ceil() as u64);
        assert!((s.alpha_blowup - 27.0).abs() < 1e-12);
        assert_eq!(s.m, (27.0 * omega_closed_form(s.k, 256)).ceil() as u64);
    }

    #[test]
    fn parameter_domain_violations() {
        assert!(SketchConfig::new(Problem::L1, 4, 1.0, 0.1, 8.0, 0).is_err());
        assert!(SketchConfig::new(Problem::L1, 64, 1.0, 0.5, 8.0, 0).is_err());
        assert!(SketchConfig::new(Problem::L1, 64, 2.0, 0.1, 8.0, 0).is_err());
        assert!(SketchConfig::new(Problem::Fk, 64, 2.0, 0.1, 8.0, 0).is_err());
        assert!(SketchConfig::new(Problem::Lp, 64, 2.5, 0.1, 8.0, 0).is_err());
        assert!(SketchConfig::new(Problem::Sampler, 64, 0.5, 0.1, 8.0, 0).is_err());
        assert!(SketchConfig::new(Problem::Lp, 64, 1.5, 0.1, 0.0, 0).is_err());
    }

    fn small_config(seed: u64) -> SketchConfig {
        // Small zeta keeps the tables dense and collisions frequent.
        SketchConfig::new(Problem::Lp, 64, 1.5, 0.3, 0.01, seed).unwrap()
    }

    #[test]
    fn zero_delta_leaves_sketch_unchanged() {
        let mut s = LinearSketch::new(small_config(3));
        s.update(5, 2.0).unwrap();
        let before = s.to_bytes();
        s.update(7, 0.0).unwrap();
        assert_eq!(before, s.to_bytes());
    }

    #[test]
    fn update_then_inverse_cancels() {
        let mut s = LinearSketch::new(small_config(4));
        s.update(9, 3.0).unwrap();
        let before: Vec<f64> = (0..s.config().l as usize).map(|j| s.cell_of(j, 9)).collect();
        s.update(5, 7.0).unwrap();
        s.update(5, -7.0).unwrap();
        for (j, b) in before.iter().enumerate() {
            assert!((s.cell_of(j, 9) - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn single_update_matches_seed_recomputation() {
        for config in [
            small_config(11),
            SketchConfig::new(Problem::L1, 4096, 1.0, 0.2, 8.0, 11).unwrap(),
        ] {
            let mut s = LinearSketch::new(config);
            s.update(5, 1.0).unwrap();
            let tree = SeedTree::new(config.master_seed);
            let w = PrecisionWeights::new(&tree, config.k).weight(5);
            for j in 0..config.l {
                let z = tree.affine(SeedRole::Bucket, j).bucket(5, config.m);
                let g = tree.affine(SeedRole::Sign, j).sign(5);
                assert_eq!(s.cell(j as usize, z), g * w.powf(1.0 / config.p));
            }
        }
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let mut s = LinearSketch::new(small_config(1));
        assert!(matches!(
            s.update(64, 1.0),
            Err(SketchError::IndexOutOfRange { index: 64, n: 64 })
        ));
    }

    #[test]
    fn merge_identity_and_cancellation() {
        let mut a = LinearSketch::new(small_config(21));
        for i in 0..64 {
            a.update(i, (i as f64) - 30.0).unwrap();
        }
        let zero = a.empty_like();
        let merged = merge(&a, &zero).unwrap();
        assert_eq!(merged.to_bytes(), a.to_bytes());

        let mut neg = a.empty_like();
        for i in 0..64 {
            neg.update(i, 30.0 - (i as f64)).unwrap();
        }
        let sum = merge(&a, &neg).unwrap();
        assert!(sum.nonzero_cells().iter().all(|&(_, c)| c.abs() < 1e-6));
    }

    #[test]
    fn merge_rejects_mismatched_configs() {
        let a = LinearSketch::new(small_config(1));
        let b = LinearSketch::new(small_config(2));
        assert!(matches!(merge(&a, &b), Err(SketchError::ConfigMismatch(_))));
        let c = LinearSketch::new(SketchConfig::new(Problem::Sampler, 64, 1.5, 0.3, 0.01, 1).unwrap());
        assert!(merge(&a, &c).is_err());
    }

    #[test]
    fn serialization_round_trips_dense_and_sparse() {
        let mut dense = LinearSketch::new(small_config(8));
        assert!(matches!(dense.cells, Cells::Dense(_)));
        assert_eq!(LinearSketch::from_bytes(&dense.to_bytes()).unwrap(), dense);
        for i in 0..64 {
            dense.update(i, 1.0 + i as f64).unwrap();
        }
        let back = LinearSketch::from_bytes(&dense.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), dense.to_bytes());

        let mut sparse = create(Problem::L1, 4096, 1.0, 0.2, 8.0, 8).unwrap();
        assert!(matches!(sparse.cells, Cells::Sparse(_)));
        sparse.update(17, -4.0).unwrap();
        let back = LinearSketch::from_bytes(&sparse.to_bytes()).unwrap();
        assert_eq!(back, sparse);
        assert_eq!(back.to_bytes(), sparse.to_bytes());
    }

    #[test]
    fn fk_round_trip_keeps_ams_counters() {
        let mut s = create(Problem::Fk, 64, 3.0, 0.3, 0.001, 2).unwrap();
        s.update(3, 5.0).unwrap();
        let back = LinearSketch::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back.ams(), s.ams());
        assert_eq!(back.to_bytes(), s.to_bytes());
    }

    #[test]
    fn corrupted_input_is_a_format_error() {
        let s = LinearSketch::new(small_config(8));
        let mut bytes = s.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(LinearSketch::from_bytes(&bytes), Err(SketchError::Format(_))));

        let bytes = s.to_bytes();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(LinearSketch::from_bytes(truncated), Err(SketchError::Format(_))));

        let mut bytes = s.to_bytes();
        bytes[4] = 9;
        assert!(matches!(LinearSketch::from_bytes(&bytes), Err(SketchError::Format(_))));

        // Tampered derived field (m lives after the header and eight scalars).
        let mut bytes = s.to_bytes();
        let m_offset = 4 + 2 + 1 + 1 + 8 + 8 * 4 + 8 + 8;
        bytes[m_offset] ^= 1;
        assert!(matches!(LinearSketch::from_bytes(&bytes), Err(SketchError::Format(_))));
    }

    #[test]
    fn ams_zero_and_spike() {
        let ams = AmsSketch::new(3.0, 512, 1);
        assert_eq!(ams.ams_estimate(), 0.0);
        let mut ams = AmsSketch::new(3.0, 512, 1);
        ams.update(10, -7.0);
        let r = ams.ams_estimate();
        assert!((2.0 / 3.0) * 7.0 <= r && r <= 7.0, "{r}");
    }

    #[test]
    fn ams_within_window_on_spread_vectors() {
        let trials = 200;
        let mut hits = 0;
        for seed in 0..trials {
            let mut ams = AmsSketch::new(3.0, 1024, 1000 + seed);
            for i in 0..1024u64 {
                ams.update(i, if (i * 7 + seed) % 3 == 0 { -1.0 } else { 1.0 });
            }
            let r = ams.ams_estimate();
            if (2.0 / 3.0) * 32.0 <= r && r <= 32.0 {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.95 * trials as f64, "{hits}/{trials}");
    }
}
