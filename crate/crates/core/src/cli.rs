//! The `psketch` command line.
//!
//! A sketch file is a concatenation of records: one per replica, and for
//! sampler files one auxiliary `l_p` record per replica after them. Replica 0
//! is built from `--seed` itself, so a one-replica file is byte-identical to
//! the library's serialization of the same sketch.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cascaded::{InnerKind, NestedSketch, CASCADED_TAG};
use crate::codec::{Reader, Writer};
use crate::error::{Result, SketchError};
use crate::estimators::{estimate, median, EstimateReport};
use crate::hashing::{SeedRole, SeedTree};
use crate::psl::PslParams;
use crate::sampler::{auxiliary_config, sample, sampler_r};
use crate::sketch::{read_header, LinearSketch, Problem, SketchConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_FAIL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "psketch", version, about = "Linear sketches for turnstile streams")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a zeroed sketch file and print its derived parameters.
    Create(CreateArgs),
    /// Apply "i delta" (or "i j delta") lines to a sketch file in place.
    Update(UpdateArgs),
    /// Add two sketch files built with identical parameters.
    Merge(MergeArgs),
    /// Estimate the norm or moment the sketch was built for.
    Estimate(EstimateArgs),
    /// Draw an l_p sample from a sampler sketch.
    Sample(SampleArgs),
    /// Print the parameters and occupancy of a sketch file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProblemArg {
    Fk,
    L1,
    Lp,
    Sampler,
    Cascaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InnerArg {
    Exact,
    Sketched,
}

#[derive(Debug, Args)]
struct CreateArgs {
    #[arg(long, value_enum)]
    problem: ProblemArg,
    /// Domain size (rows for cascaded).
    #[arg(long)]
    n: u64,
    /// Columns, cascaded only.
    #[arg(long)]
    n2: Option<u64>,
    #[arg(long)]
    p: Option<f64>,
    /// Inner norm, cascaded only.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = PslParams::DEFAULT_ZETA)]
    zeta: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Independent copies stored for `estimate --repetitions` and `sample --retries`.
    #[arg(long, default_value_t = 1)]
    replicas: u32,
    /// Cell contents for cascaded sketches.
    #[arg(long, value_enum, default_value_t = InnerArg::Exact)]
    inner: InnerArg,
}

#[derive(Debug, Args)]
struct UpdateArgs {
    #[arg(long)]
    sketch: PathBuf,
    /// Stream file; standard input when absent.
    #[arg(long = "in")]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MergeArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    sketch: PathBuf,
    /// Median over this many stored replicas.
    #[arg(long, default_value_t = 1)]
    repetitions: u32,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("guess").required(true).args(["r", "auto_r"]))]
struct SampleArgs {
    #[arg(long)]
    sketch: PathBuf,
    /// Approximation of ||x||_p^p.
    #[arg(long)]
    r: Option<f64>,
    /// Take r from the auxiliary l_p sketch.
    #[arg(long)]
    auto_r: bool,
    /// Attempts before reporting FAIL, cycling through replicas.
    #[arg(long, default_value_t = 3)]
    retries: u32,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    sketch: PathBuf,
}

/// One record of a sketch file.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Flat(LinearSketch),
    Cascaded(NestedSketch),
}

impl Record {
    fn write(&self, w: &mut Writer) {
        match self {
            Record::Flat(s) => s.write(w),
            Record::Cascaded(s) => s.write(w),
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let (tag, encoding) = read_header(r)?;
        if tag == CASCADED_TAG {
            return Ok(Record::Cascaded(NestedSketch::read_body(r, encoding)?));
        }
        let problem =
            Problem::from_tag(tag).ok_or_else(|| SketchError::Format(format!("unknown problem tag {tag}")))?;
        Ok(Record::Flat(LinearSketch::read_body(r, problem, encoding)?))
    }

    fn merge_from(&mut self, other: &Record) -> Result<()> {
        match (self, other) {
            (Record::Flat(a), Record::Flat(b)) => a.merge_from(b),
            (Record::Cascaded(a), Record::Cascaded(b)) => a.merge_from(b),
            _ => Err(SketchError::ConfigMismatch("flat and cascaded sketches cannot be merged".into())),
        }
    }

    fn estimate(&self) -> Result<EstimateReport> {
        match self {
            Record::Flat(s) => estimate(s),
            Record::Cascaded(s) => s.estimate(),
        }
    }
}

/// Replicas plus, for sampler files, their auxiliary `l_p` sketches.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchFile {
    pub replicas: Vec<Record>,
    pub auxiliary: Vec<LinearSketch>,
}

/// Master seed of replica `index` under `seed`.
pub fn replica_seed(seed: u64, index: u32) -> u64 {
    if index == 0 {
        seed
    } else {
        SeedTree::new(seed).child(SeedRole::Replica, index as u64)
    }
}

impl SketchFile {
    /// Replicas of a flat sketch; sampler files get auxiliary sketches.
    pub fn flat(config: SketchConfig, replicas: u32) -> Result<Self> {
        let mut out = SketchFile {
            replicas: Vec::new(),
            auxiliary: Vec::new(),
        };
        for r in 0..replicas.max(1) {
            let c = config.reseeded(replica_seed(config.master_seed, r));
            if c.problem == Problem::Sampler {
                out.auxiliary.push(LinearSketch::new(auxiliary_config(&c)?));
            }
            out.replicas.push(Record::Flat(LinearSketch::new(c)));
        }
        Ok(out)
    }

    pub fn cascaded(config: crate::cascaded::CascadedConfig, replicas: u32) -> Result<Self> {
        let replicas = (0..replicas.max(1))
            .map(|r| {
                let mut c = config;
                c.master_seed = replica_seed(config.master_seed, r);
                NestedSketch::new(c).map(Record::Cascaded)
            })
            .collect::<Result<_>>()?;
        Ok(SketchFile {
            replicas,
            auxiliary: Vec::new(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        for rec in &self.replicas {
            rec.write(&mut w);
        }
        for aux in &self.auxiliary {
            aux.write(&mut w);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let mut records = Vec::new();
        while !r.is_empty() {
            records.push(Record::read(&mut r)?);
        }
        let Some(first) = records.first() else {
            return Err(SketchError::Format("empty sketch file".into()));
        };
        let is_sampler = matches!(first, Record::Flat(s) if s.config().problem == Problem::Sampler);
        let mut file = SketchFile {
            replicas: Vec::new(),
            auxiliary: Vec::new(),
        };
        for rec in records {
            match rec {
                Record::Flat(s) if is_sampler && s.config().problem == Problem::Lp => file.auxiliary.push(s),
                rec => {
                    if !file.auxiliary.is_empty() {
                        return Err(SketchError::Format("replica record after auxiliary records".into()));
                    }
                    file.replicas.push(rec)
                }
            }
        }
        file.validate()?;
        Ok(file)
    }

    fn validate(&self) -> Result<()> {
        let kind = |r: &Record| match r {
            Record::Flat(s) => Some(s.config().problem),
            Record::Cascaded(_) => None,
        };
        let first = kind(&self.replicas[0]);
        if self.replicas.iter().any(|r| kind(r) != first) {
            return Err(SketchError::Format("replicas of different kinds in one file".into()));
        }
        if first == Some(Problem::Sampler) {
            if self.auxiliary.len() != self.replicas.len() {
                return Err(SketchError::Format(format!(
                    "{} sampler replicas but {} auxiliary sketches",
                    self.replicas.len(),
                    self.auxiliary.len()
                )));
            }
            for (rec, aux) in self.replicas.iter().zip(&self.auxiliary) {
                let Record::Flat(s) = rec else { unreachable!() };
                if *aux.config() != auxiliary_config(s.config())? {
                    return Err(SketchError::Format("auxiliary sketch does not match its replica".into()));
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
        let result = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        Ok(result?)
    }

    fn is_cascaded(&self) -> bool {
        matches!(self.replicas[0], Record::Cascaded(_))
    }

    /// Applies one stream record to every replica and auxiliary sketch.
    pub fn apply(&mut self, update: StreamRecord) -> Result<()> {
        for rec in &mut self.replicas {
            match (rec, update) {
                (Record::Flat(s), StreamRecord::Vector { i, delta }) => s.update(i, delta)?,
                (Record::Cascaded(s), StreamRecord::Matrix { i, j, delta }) => s.update(i, j, delta)?,
                _ => unreachable!("record shape checked by the parser"),
            }
        }
        if let StreamRecord::Vector { i, delta } = update {
            for aux in &mut self.auxiliary {
                aux.update(i, delta)?;
            }
        }
        Ok(())
    }
}

/// One parsed stream line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamRecord {
    Vector { i: u64, delta: f64 },
    Matrix { i: u64, j: u64, delta: f64 },
}

/// Parses "i delta" or, when `matrix`, "i j delta". Blank lines and lines
/// starting with '#' yield `None`.
pub fn parse_stream_line(line: &str, matrix: bool) -> std::result::Result<Option<StreamRecord>, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = trimmed.split_whitespace().collect();
    let want = if matrix { 3 } else { 2 };
    if fields.len() != want {
        return Err(format!("expected {want} fields, found {}", fields.len()));
    }
    let index = |s: &str| s.parse::<u64>().map_err(|_| format!("invalid index {s:?}"));
    let delta = fields[want - 1]
        .parse::<f64>()
        .ok()
        .filter(|d| d.is_finite())
        .ok_or_else(|| format!("invalid delta {:?}", fields[want - 1]))?;
    Ok(Some(if matrix {
        StreamRecord::Matrix {
            i: index(fields[0])?,
            j: index(fields[1])?,
            delta,
        }
    } else {
        StreamRecord::Vector {
            i: index(fields[0])?,
            delta,
        }
    }))
}

/// An error carrying its exit status.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn format(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_FORMAT,
            message: message.into(),
        }
    }
}

impl From<SketchError> for Failure {
    fn from(e: SketchError) -> Self {
        let code = match e {
            SketchError::InvalidParameter(_) | SketchError::ConfigMismatch(_) => EXIT_USAGE,
            _ => EXIT_FORMAT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            // The reader went away; nothing left to report.
            return Failure {
                code: EXIT_OK,
                message: String::new(),
            };
        }
        Failure::format(e.to_string())
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Runs the command line; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Create(a) => cmd_create(a, &mut out),
        Command::Update(a) => cmd_update(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Estimate(a) => cmd_estimate(a, &mut out),
        Command::Sample(a) => cmd_sample(a, &mut out),
        Command::Inspect(a) => cmd_inspect(a, &mut out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("psketch: {}", f.message);
            }
            f.code
        }
    }
}

fn cmd_create(a: CreateArgs, out: &mut impl Write) -> CmdResult {
    if a.replicas == 0 {
        return Err(Failure::usage("--replicas must be at least 1"));
    }
    let needs_p = || a.p.ok_or_else(|| Failure::usage(format!("--p is required for --problem {:?}", a.problem).to_lowercase()));
    let only_cascaded = |flag: &str, present: bool| {
        if present {
            Err(Failure::usage(format!("{flag} applies to --problem cascaded only")))
        } else {
            Ok(())
        }
    };
    let file = if a.problem == ProblemArg::Cascaded {
        let n2 = a.n2.ok_or_else(|| Failure::usage("--n2 is required for --problem cascaded"))?;
        let q = a.q.ok_or_else(|| Failure::usage("--q is required for --problem cascaded"))?;
        let inner = match a.inner {
            InnerArg::Exact => InnerKind::Exact,
            InnerArg::Sketched => InnerKind::Sketched,
        };
        let config =
            crate::cascaded::CascadedConfig::new(a.n, n2, needs_p()?, q, a.epsilon, a.zeta, inner, a.seed)?;
        writeln!(
            out,
            "problem=cascaded n1={} n2={} p={} q={} k={} t={} m={} l={} omega={} alpha={} rho={} kappa={}",
            config.n1,
            config.n2,
            config.p,
            config.q,
            config.k,
            config.t,
            config.m,
            config.l,
            config.omega,
            config.bound,
            config.rho,
            config.kappa
        )?;
        SketchFile::cascaded(config, a.replicas)?
    } else {
        only_cascaded("--n2", a.n2.is_some())?;
        only_cascaded("--q", a.q.is_some())?;
        let (problem, p) = match a.problem {
            ProblemArg::Fk => (Problem::Fk, needs_p()?),
            ProblemArg::L1 => (Problem::L1, a.p.unwrap_or(1.0)),
            ProblemArg::Lp => (Problem::Lp, needs_p()?),
            _ => (Problem::Sampler, needs_p()?),
        };
        let config = SketchConfig::new(problem, a.n, p, a.epsilon, a.zeta, a.seed)?;
        writeln!(
            out,
            "problem={} n={} p={} k={} t={} m={} l={} omega={} alpha={} rho={}",
            problem, config.n, config.p, config.k, config.t, config.m, config.l, config.omega, config.alpha_blowup, config.rho
        )?;
        SketchFile::flat(config, a.replicas)?
    };
    file.write_atomic(&a.out)?;
    Ok(EXIT_OK)
}

fn cmd_update(a: UpdateArgs) -> CmdResult {
    let mut file = SketchFile::read(&a.sketch)?;
    let matrix = file.is_cascaded();
    let reader: Box<dyn Read> = match &a.input {
        Some(path) => Box::new(fs::File::open(path)?),
        None => Box::new(io::stdin()),
    };
    for (number, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let parsed = parse_stream_line(&line, matrix)
            .map_err(|e| Failure::format(format!("line {}: {e}", number + 1)))?;
        if let Some(update) = parsed {
            file.apply(update).map_err(|e| {
                let f = Failure::from(e);
                Failure {
                    code: f.code,
                    message: format!("line {}: {}", number + 1, f.message),
                }
            })?;
        }
    }
    file.write_atomic(&a.sketch)?;
    Ok(EXIT_OK)
}

fn cmd_merge(a: MergeArgs) -> CmdResult {
    let mut left = SketchFile::read(&a.a)?;
    let right = SketchFile::read(&a.b)?;
    if left.replicas.len() != right.replicas.len() {
        return Err(Failure::usage(format!(
            "replica counts differ ({} vs {})",
            left.replicas.len(),
            right.replicas.len()
        )));
    }
    for (x, y) in left.replicas.iter_mut().zip(&right.replicas) {
        x.merge_from(y)?;
    }
    for (x, y) in left.auxiliary.iter_mut().zip(&right.auxiliary) {
        x.merge_from(y)?;
    }
    left.write_atomic(&a.out)?;
    Ok(EXIT_OK)
}

fn cmd_estimate(a: EstimateArgs, out: &mut impl Write) -> CmdResult {
    let file = SketchFile::read(&a.sketch)?;
    let wanted = a.repetitions as usize;
    if wanted == 0 || wanted > file.replicas.len() {
        return Err(Failure::usage(format!(
            "--repetitions must lie in 1..={} (the file holds {} replicas)",
            file.replicas.len(),
            file.replicas.len()
        )));
    }
    let reports = file.replicas[..wanted]
        .iter()
        .map(Record::estimate)
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = reports.iter().map(|r| r.value).collect();
    let value = median(&values);
    let first = &reports[0];
    writeln!(
        out,
        "value={value} r_used={} success={} repetitions={wanted}",
        first.r_used, first.success_flag
    )?;
    for (r, sigma) in &first.halving_trace {
        writeln!(out, "trace r={r} sigma={sigma}")?;
    }
    Ok(EXIT_OK)
}

fn cmd_sample(a: SampleArgs, out: &mut impl Write) -> CmdResult {
    let file = SketchFile::read(&a.sketch)?;
    if file.is_cascaded() {
        return Err(Failure::usage("sampling needs a sampler sketch"));
    }
    if let Some(r) = a.r {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Failure::usage(format!("--r must be positive, got {r}")));
        }
    }
    let attempts = a.retries.max(1) as usize;
    for attempt in 0..attempts {
        let slot = attempt % file.replicas.len();
        let Record::Flat(sketch) = &file.replicas[slot] else { unreachable!() };
        let r = match a.r {
            Some(r) => r,
            None => sampler_r(&file.auxiliary[slot])?.value,
        };
        let outcome = sample(sketch, r)?;
        if !outcome.failed {
            writeln!(
                out,
                "index={} value={} j_star={} replica={slot} r={r}",
                outcome.index, outcome.value, outcome.j_star
            )?;
            return Ok(EXIT_OK);
        }
    }
    writeln!(out, "FAIL")?;
    Ok(EXIT_FAIL)
}

fn cmd_inspect(a: InspectArgs, out: &mut impl Write) -> CmdResult {
    let file = SketchFile::read(&a.sketch)?;
    writeln!(out, "replicas={} auxiliary={}", file.replicas.len(), file.auxiliary.len())?;
    for (idx, rec) in file.replicas.iter().enumerate() {
        match rec {
            Record::Flat(s) => {
                let c = s.config();
                writeln!(
                    out,
                    "replica={idx} problem={} n={} p={} epsilon={} zeta={} k={} t={} m={} l={} omega={} alpha={} rho={} seed={} updates={} nonzero_cells={}",
                    c.problem, c.n, c.p, c.epsilon, c.zeta, c.k, c.t, c.m, c.l, c.omega, c.alpha_blowup, c.rho,
                    c.master_seed, s.update_count(), s.nonzero_cells().len()
                )?;
            }
            Record::Cascaded(s) => {
                let c = s.config();
                writeln!(
                    out,
                    "replica={idx} problem=cascaded n1={} n2={} p={} q={} epsilon={} k={} t={} m={} l={} omega={} alpha={} rho={} kappa={} seed={} updates={}",
                    c.n1, c.n2, c.p, c.q, c.epsilon, c.k, c.t, c.m, c.l, c.omega, c.bound, c.rho, c.kappa,
                    c.master_seed, s.update_count()
                )?;
            }
        }
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_lines() {
        assert_eq!(
            parse_stream_line("5 1.5", false).unwrap(),
            Some(StreamRecord::Vector { i: 5, delta: 1.5 })
        );
        assert_eq!(
            parse_stream_line("  3\t4 -2 ", true).unwrap(),
            Some(StreamRecord::Matrix { i: 3, j: 4, delta: -2.0 })
        );
        assert_eq!(parse_stream_line("", false).unwrap(), None);
        assert_eq!(parse_stream_line("# note", false).unwrap(), None);
        assert!(parse_stream_line("5", false).is_err());
        assert!(parse_stream_line("-1 2", false).is_err());
        assert!(parse_stream_line("1 x", false).is_err());
        assert!(parse_stream_line("1 inf", false).is_err());
        assert!(parse_stream_line("1 2 3", false).is_err());
    }

    #[test]
    fn single_replica_file_is_the_plain_record() {
        let config = SketchConfig::new(Problem::Lp, 64, 1.5, 0.3, 0.05, 4).unwrap();
        let file = SketchFile::flat(config, 1).unwrap();
        assert_eq!(file.to_bytes(), LinearSketch::new(config).to_bytes());
        let back = SketchFile::from_bytes(&file.to_bytes()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn sampler_files_carry_auxiliary_sketches() {
        let config = SketchConfig::new(Problem::Sampler, 64, 1.0, 0.3, 0.05, 4).unwrap();
        let file = SketchFile::flat(config, 3).unwrap();
        assert_eq!(file.auxiliary.len(), 3);
        let back = SketchFile::from_bytes(&file.to_bytes()).unwrap();
        assert_eq!(back.replicas.len(), 3);
        assert_eq!(back.auxiliary.len(), 3);
        let seeds: Vec<u64> = back
            .replicas
            .iter()
            .map(|r| match r {
                Record::Flat(s) => s.config().master_seed,
                Record::Cascaded(_) => unreachable!(),
            })
            .collect();
        assert_eq!(seeds[0], 4);
        assert!(seeds[1] != seeds[2] && seeds[1] != 4);
    }

    #[test]
    fn empty_and_dangling_files_rejected() {
        assert!(SketchFile::from_bytes(&[]).is_err());
        let config = SketchConfig::new(Problem::Sampler, 64, 1.0, 0.3, 0.05, 4).unwrap();
        let mut file = SketchFile::flat(config, 2).unwrap();
        file.auxiliary.pop();
        assert!(SketchFile::from_bytes(&file.to_bytes()).is_err());
    }
}
