//! Supervised imitation data: closed-loop backstepping rollouts sampled at a
//! fixed cadence, stored in a packed little-endian binary file.
//!
//! File layout:
//!
//! ```text
//! "PDDS"  version:u16  kind:u8  n:u32  count:u64  seed:u64
//! gamma_lo:f64  gamma_hi:f64  max_abs_control:f64
//! count × (coeff f64×n, state f64×n, target f64)
//! checksum:u64   wrapping sum of every preceding byte
//! ```

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::backstepping::{backstepping_control, Kernel};
use crate::env::{sample_coefficient, BenchmarkKind, CoefficientFn, EnvConfig, PdeEnv};
use crate::error::{Error, Result};
use crate::numerics::{Grid, Rng};
use crate::parallel::with_pool;

const MAGIC: &[u8; 4] = b"PDDS";
pub const DATASET_VERSION: u16 = 1;
const HEADER_BYTES: usize = 4 + 2 + 1 + 4 + 8 + 8 + 8 * 3;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::DatasetFormat(msg.into())
}

/// One borrowed row of a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<'a> {
    pub coeff: &'a [f64],
    pub state: &'a [f64],
    pub target: f64,
}

/// Samples stored as a flat row-major array of `count × (2n + 1)` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: BenchmarkKind,
    pub n_points: usize,
    pub seed: u64,
    pub gamma_range: (f64, f64),
    pub max_abs_control: f64,
    data: Vec<f64>,
}

impl Dataset {
    pub fn new(kind: BenchmarkKind, n_points: usize, seed: u64, gamma_range: (f64, f64)) -> Self {
        Dataset {
            kind,
            n_points,
            seed,
            gamma_range,
            max_abs_control: 0.0,
            data: Vec::new(),
        }
    }

    pub fn row_width(&self) -> usize {
        2 * self.n_points + 1
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.row_width()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        let n = self.n_points;
        let row = &self.data[i * self.row_width()..(i + 1) * self.row_width()];
        Sample {
            coeff: &row[..n],
            state: &row[n..2 * n],
            target: row[2 * n],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Sample<'_>> {
        (0..self.len()).map(move |i| self.sample(i))
    }

    pub fn push(&mut self, coeff: &[f64], state: &[f64], target: f64) -> Result<()> {
        if coeff.len() != self.n_points || state.len() != self.n_points {
            return Err(Error::invalid(format!(
                "sample lengths ({}, {}) do not match grid size {}",
                coeff.len(),
                state.len(),
                self.n_points
            )));
        }
        if !target.is_finite() || coeff.iter().chain(state).any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample contains non-finite values"));
        }
        self.data.extend_from_slice(coeff);
        self.data.extend_from_slice(state);
        self.data.push(target);
        Ok(())
    }

    /// Largest `|target|` actually stored.
    pub fn stored_max_abs_target(&self) -> f64 {
        self.iter().fold(0.0, |m, s| m.max(s.target.abs()))
    }

    fn same_header(&self) -> Dataset {
        Dataset {
            data: Vec::new(),
            ..*self
        }
    }

    /// Uniformly permutes the samples and splits off the first
    /// `round(ratio · len)` of them as the training part.
    pub fn shuffle_split(mut self, ratio: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::invalid(format!("split ratio {ratio} outside [0, 1]")));
        }
        if self.is_empty() {
            return Err(Error::invalid("cannot split an empty dataset"));
        }
        let len = self.len();
        let perm = rng.permutation(len);
        let width = self.row_width();
        permute_rows(&mut self.data, width, &perm);
        let n_train = (ratio * len as f64).round() as usize;
        let mut test = self.same_header();
        let cut = n_train * width;
        test.data = self.data.split_off(cut);
        self.data.shrink_to_fit();
        Ok((self, test))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = ChecksumWriter {
            inner: BufWriter::new(File::create(path)?),
            sum: 0,
        };
        w.put(MAGIC)?;
        w.put(&DATASET_VERSION.to_le_bytes())?;
        w.put(&[self.kind.code()])?;
        w.put(&(self.n_points as u32).to_le_bytes())?;
        w.put(&(self.len() as u64).to_le_bytes())?;
        w.put(&self.seed.to_le_bytes())?;
        for v in [self.gamma_range.0, self.gamma_range.1, self.max_abs_control] {
            w.put(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in self.data.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.put(&buf)?;
        }
        let sum = w.sum;
        w.inner.write_all(&sum.to_le_bytes())?;
        w.inner.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Dataset> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        let mut r = ChecksumReader {
            inner: BufReader::new(file),
            sum: 0,
        };
        if file_len < (HEADER_BYTES + 8) as u64 {
            return Err(fmt_err("file too short for a dataset header"));
        }
        let mut header = [0u8; HEADER_BYTES];
        r.get(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(fmt_err("bad magic, not a dataset file"));
        }
        let le_u64 = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        let le_f64 = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != DATASET_VERSION {
            return Err(fmt_err(format!(
                "unsupported version: expected {DATASET_VERSION}, found {version}"
            )));
        }
        let kind = BenchmarkKind::from_code(header[6])
            .ok_or_else(|| fmt_err(format!("unknown benchmark code {}", header[6])))?;
        let n_points = u32::from_le_bytes(header[7..11].try_into().unwrap()) as usize;
        let count = le_u64(&header[11..19]);
        let seed = le_u64(&header[19..27]);
        let gamma_range = (le_f64(&header[27..35]), le_f64(&header[35..43]));
        let max_abs_control = le_f64(&header[43..51]);
        if n_points == 0 {
            return Err(fmt_err("grid size is zero"));
        }
        let width = (2 * n_points + 1) as u64;
        let expected = count
            .checked_mul(width * 8)
            .and_then(|b| b.checked_add((HEADER_BYTES + 8) as u64))
            .ok_or_else(|| fmt_err("declared sample count overflows"))?;
        if expected != file_len {
            return Err(fmt_err(format!(
                "declared count {count} needs {expected} bytes, file has {file_len}"
            )));
        }
        let total = (count * width) as usize;
        let mut data = Vec::with_capacity(total);
        let mut buf = vec![0u8; 8 * 4096];
        while data.len() < total {
            let take = (total - data.len()).min(4096);
            r.get(&mut buf[..8 * take])?;
            data.extend(buf[..8 * take].chunks_exact(8).map(le_f64));
        }
        let computed = r.sum;
        let mut tail = [0u8; 8];
        r.inner.read_exact(&mut tail)?;
        if u64::from_le_bytes(tail) != computed {
            return Err(fmt_err("checksum mismatch (file truncated or corrupted)"));
        }
        Ok(Dataset {
            kind,
            n_points,
            seed,
            gamma_range,
            max_abs_control,
            data,
        })
    }
}

/// Reorders rows so that row `k` of the result is row `perm[k]` of the input.
fn permute_rows(data: &mut [f64], width: usize, perm: &[usize]) {
    let mut visited = vec![false; perm.len()];
    let mut tmp = vec![0.0; width];
    for start in 0..perm.len() {
        if visited[start] {
            continue;
        }
        tmp.copy_from_slice(&data[start * width..(start + 1) * width]);
        let mut k = start;
        loop {
            visited[k] = true;
            let src = perm[k];
            if src == start {
                data[k * width..(k + 1) * width].copy_from_slice(&tmp);
                break;
            }
            data.copy_within(src * width..(src + 1) * width, k * width);
            k = src;
        }
    }
}

struct ChecksumWriter<W: Write> {
    inner: W,
    sum: u64,
}

impl<W: Write> ChecksumWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.sum = bytes.iter().fold(self.sum, |a, &b| a.wrapping_add(u64::from(b)));
        self.inner.write_all(bytes)?;
        Ok(())
    }
}

struct ChecksumReader<R: Read> {
    inner: R,
    sum: u64,
}

impl<R: Read> ChecksumReader<R> {
    fn get(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => fmt_err("file truncated"),
            _ => Error::Io(e),
        })?;
        self.sum = buf.iter().fold(self.sum, |a, &b| a.wrapping_add(u64::from(b)));
        Ok(())
    }
}

/// Generation protocol: `n_coeffs` coefficients crossed with `n_inits`
/// constant initial profiles, each rollout sampled every `record_every`
/// solver steps starting from step 0.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    pub env: EnvConfig,
    pub n_coeffs: usize,
    pub n_inits: usize,
    pub record_every: usize,
    pub gamma_range: (f64, f64),
    pub seed: u64,
}

impl GenerationConfig {
    pub fn defaults(kind: BenchmarkKind) -> Self {
        GenerationConfig {
            env: EnvConfig::defaults(kind),
            n_coeffs: 100,
            n_inits: 60,
            record_every: match kind {
                BenchmarkKind::Hyperbolic => 50,
                BenchmarkKind::Parabolic => 100,
            },
            gamma_range: kind.gamma_range(),
            seed: 0,
        }
    }

    pub fn samples_per_rollout(&self) -> usize {
        self.env.solver_steps().div_ceil(self.record_every)
    }

    pub fn planned_rollouts(&self) -> usize {
        self.n_coeffs * self.n_inits
    }

    pub fn planned_samples(&self) -> usize {
        self.planned_rollouts() * self.samples_per_rollout()
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let (lo, hi) = self.gamma_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("invalid gamma range [{lo}, {hi}]")));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedCoefficient {
    pub index: usize,
    pub gamma: f64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationReport {
    pub rollouts: usize,
    pub samples: usize,
    pub max_abs_control: f64,
    pub skipped: Vec<SkippedCoefficient>,
}

fn draw(rng: &mut Rng, lo: f64, hi: f64) -> Result<f64> {
    if lo == hi {
        Ok(lo)
    } else {
        rng.uniform(lo, hi)
    }
}

/// Draws the coefficient parameters and initial levels from the master seed.
/// All coefficients come first, then all initial levels, so both lists are
/// fixed before any rollout runs.
pub fn draw_protocol(cfg: &GenerationConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = Rng::new(cfg.seed);
    let gammas = (0..cfg.n_coeffs)
        .map(|_| draw(&mut rng, cfg.gamma_range.0, cfg.gamma_range.1))
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = cfg.env.u0_range;
    let inits = (0..cfg.n_inits)
        .map(|_| draw(&mut rng, lo, hi))
        .collect::<Result<Vec<_>>>()?;
    Ok((gammas, inits))
}

struct CoefficientBlock {
    data: Vec<f64>,
    rollouts: usize,
    max_abs_control: f64,
    skipped: Option<SkippedCoefficient>,
}

/// Closed-loop backstepping rollout from `u₀ ≡ level`, appending samples to
/// `out` and returning the largest `|U|` applied at any solver step.
fn rollout(
    cfg: &GenerationConfig,
    kernel: &Kernel,
    coeff: &CoefficientFn,
    level: f64,
    rollout_id: usize,
    out: &mut Vec<f64>,
) -> Result<f64> {
    let mut env = PdeEnv::new(cfg.env.clone(), coeff.clone())?;
    env.reset_to(level);
    let mut max_u: f64 = 0.0;
    for step in 0..cfg.env.solver_steps() {
        let u = env.state().values.as_slice();
        let control = backstepping_control(kernel, u)?;
        if !control.is_finite() || !env.state().is_finite() {
            return Err(Error::numerical(format!(
                "rollout {rollout_id} diverged at solver step {step}"
            )));
        }
        if step % cfg.record_every == 0 {
            out.extend_from_slice(coeff.samples());
            out.extend_from_slice(u);
            out.push(control);
        }
        max_u = max_u.max(control.abs());
        env.solver_step(control)?;
    }
    Ok(max_u)
}

fn generate_block(cfg: &GenerationConfig, index: usize, gamma: f64, inits: &[f64]) -> Result<CoefficientBlock> {
    let coeff = sample_coefficient(cfg.env.kind, gamma, &cfg.env.grid)?;
    let kernel = match Kernel::solve(&coeff) {
        Ok(k) => k,
        Err(e @ Error::NumericalFailure(_)) => {
            return Ok(CoefficientBlock {
                data: Vec::new(),
                rollouts: 0,
                max_abs_control: 0.0,
                skipped: Some(SkippedCoefficient {
                    index,
                    gamma,
                    reason: e.to_string(),
                }),
            })
        }
        Err(e) => return Err(e),
    };
    let width = 2 * cfg.env.grid.n_points() + 1;
    let mut data = Vec::with_capacity(inits.len() * cfg.samples_per_rollout() * width);
    let mut max_abs_control: f64 = 0.0;
    for (i, &level) in inits.iter().enumerate() {
        let id = index * inits.len() + i;
        max_abs_control = max_abs_control.max(rollout(cfg, &kernel, &coeff, level, id, &mut data)?);
    }
    Ok(CoefficientBlock {
        data,
        rollouts: inits.len(),
        max_abs_control,
        skipped: None,
    })
}

/// Runs every rollout of the protocol on `threads` workers. Rollouts are
/// deterministic given their coefficient and initial level, and blocks are
/// merged in coefficient order, so the output does not depend on `threads`.
pub fn generate_dataset(cfg: &GenerationConfig, threads: usize) -> Result<(Dataset, GenerationReport)> {
    cfg.validate()?;
    let (gammas, inits) = draw_protocol(cfg)?;
    let blocks = with_pool(threads, || {
        gammas
            .par_iter()
            .enumerate()
            .map(|(c, &g)| generate_block(cfg, c, g, &inits))
            .collect::<Result<Vec<_>>>()
    })??;
    let mut ds = Dataset::new(cfg.env.kind, cfg.env.grid.n_points(), cfg.seed, cfg.gamma_range);
    let mut report = GenerationReport {
        rollouts: 0,
        samples: 0,
        max_abs_control: 0.0,
        skipped: Vec::new(),
    };
    ds.data.reserve_exact(blocks.iter().map(|b| b.data.len()).sum());
    for b in blocks {
        ds.data.extend_from_slice(&b.data);
        report.rollouts += b.rollouts;
        report.max_abs_control = report.max_abs_control.max(b.max_abs_control);
        report.skipped.extend(b.skipped);
    }
    ds.max_abs_control = report.max_abs_control;
    report.samples = ds.len();
    Ok((ds, report))
}

/// Action bound derived from a dataset: `⌈1.5 · max|U|⌉`.
pub fn calibrated_action_bound(max_abs_control: f64) -> f64 {
    (1.5 * max_abs_control).ceil()
}

/// Recomputes every target from its stored coefficient and state and returns
/// the largest absolute discrepancy.
pub fn verify_targets(ds: &Dataset, threads: usize) -> Result<f64> {
    let mut kernels: HashMap<Vec<u64>, Kernel> = HashMap::new();
    for s in ds.iter() {
        let key: Vec<u64> = s.coeff.iter().map(|v| v.to_bits()).collect();
        if let Entry::Vacant(slot) = kernels.entry(key) {
            let coeff = CoefficientFn::from_samples(ds.kind, s.coeff.to_vec())?;
            slot.insert(Kernel::solve(&coeff)?);
        }
    }
    let kernels = &kernels;
    with_pool(threads, || {
        (0..ds.len())
            .into_par_iter()
            .map(|i| {
                let s = ds.sample(i);
                let key: Vec<u64> = s.coeff.iter().map(|v| v.to_bits()).collect();
                let u = backstepping_control(&kernels[&key], s.state)?;
                Ok((u - s.target).abs())
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
    })?
}

/// Kernel table as a dataset: one sample per grid node `x_i`, carrying the
/// coefficient, the row `k(x_i, ·)` zero beyond the diagonal, and `x_i` as
/// the target.
pub fn kernel_table(kernel: &Kernel, coeff: &CoefficientFn) -> Result<Dataset> {
    let n = kernel.n_points();
    let grid = Grid::new(n)?;
    let gamma = coeff.gamma().unwrap_or(f64::NAN);
    let mut ds = Dataset::new(kernel.kind(), n, 0, (gamma, gamma));
    let mut row = vec![0.0; n];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = if j <= i { kernel.k(i, j) } else { 0.0 };
        }
        ds.push(coeff.samples(), &row, grid.x(i))?;
    }
    ds.max_abs_control = kernel.gain().iter().fold(0.0, |m, g| m.max(g.abs()));
    Ok(ds)
}
