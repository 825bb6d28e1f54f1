//! Multilinear moments: exact, empirical (from packed samples) and
//! exact-plus-bounded-perturbation, behind one cached oracle.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{MixtureModel, Subset};

const BINARY_MAGIC: &[u8; 5] = b"MIXB1";
const SAMPLE_CHUNK: usize = 1 << 15;
const SCAN_CHUNK: usize = 1 << 14;

/// N records of n bits, each record packed LSB-first into u64 words.
#[derive(Clone, PartialEq, Eq)]
pub struct Dataset {
    n: usize,
    words: usize,
    len: usize,
    data: Vec<u64>,
}

impl fmt::Debug for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dataset").field("n", &self.n).field("N", &self.len).finish()
    }
}

impl Dataset {
    fn empty(n: usize, capacity: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Dataset { n, words, len: 0, data: Vec::with_capacity(capacity * words) }
    }

    /// Builds a dataset from explicit 0/1 records.
    pub fn from_records(n: usize, records: &[Vec<u8>]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Parse("a dataset needs at least one record".into()));
        }
        let mut ds = Dataset::empty(n, records.len());
        for (r, rec) in records.iter().enumerate() {
            if rec.len() != n {
                return Err(Error::Parse(format!("record {r} has {} bits, expected {n}", rec.len())));
            }
            let mut packed = vec![0u64; ds.words];
            for (i, &b) in rec.iter().enumerate() {
                match b {
                    0 => {}
                    1 => packed[i / 64] |= 1 << (i % 64),
                    _ => return Err(Error::Parse(format!("record {r} has non-binary entry {b}"))),
                }
            }
            ds.push(&packed);
        }
        Ok(ds)
    }

    fn push(&mut self, packed: &[u64]) {
        self.data.extend_from_slice(packed);
        self.len += 1;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of records N.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, record: usize, i: usize) -> bool {
        self.data[record * self.words + i / 64] >> (i % 64) & 1 == 1
    }

    fn record(&self, r: usize) -> &[u64] {
        &self.data[r * self.words..(r + 1) * self.words]
    }

    fn mask(&self, s: &Subset) -> Result<Vec<u64>> {
        let mut mask = vec![0u64; self.words];
        for i in s.iter() {
            if i >= self.n {
                return Err(Error::IndexOutOfRange { index: i, n: self.n });
            }
            mask[i / 64] |= 1 << (i % 64);
        }
        Ok(mask)
    }

    /// Counts, for every subset, the records whose bits on it are all one.
    /// One pass over the data; chunk counts are merged as integers.
    pub fn count_all_ones(&self, subsets: &[Subset]) -> Result<Vec<u64>> {
        let masks: Vec<Vec<u64>> = subsets.iter().map(|s| self.mask(s)).collect::<Result<_>>()?;
        let words = self.words;
        let counts = (0..self.len)
            .into_par_iter()
            .step_by(SCAN_CHUNK)
            .map(|start| {
                let end = (start + SCAN_CHUNK).min(self.len);
                let mut local = vec![0u64; masks.len()];
                for r in start..end {
                    let rec = self.record(r);
                    for (c, mask) in local.iter_mut().zip(&masks) {
                        if (0..words).all(|w| rec[w] & mask[w] == mask[w]) {
                            *c += 1;
                        }
                    }
                }
                local
            })
            .reduce(
                || vec![0u64; masks.len()],
                |mut a, b| {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        Ok(counts)
    }

    /// Text format: header `n N`, then N lines of n characters `0`/`1`.
    pub fn write_text<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        writeln!(out, "{} {}", self.n, self.len)?;
        let mut line = Vec::with_capacity(self.n + 1);
        for r in 0..self.len {
            line.clear();
            line.extend((0..self.n).map(|i| if self.bit(r, i) { b'1' } else { b'0' }));
            line.push(b'\n');
            out.write_all(&line)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_text<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))??;
        let (n, count) = parse_header(&header)?;
        let mut ds = Dataset::empty(n, count);
        let mut packed = vec![0u64; ds.words];
        for r in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("expected {count} records, found {r}")))??;
            let line = line.trim_end();
            if line.len() != n {
                return Err(Error::Parse(format!("record {r} has {} characters, expected {n}", line.len())));
            }
            packed.iter_mut().for_each(|w| *w = 0);
            for (i, c) in line.bytes().enumerate() {
                match c {
                    b'0' => {}
                    b'1' => packed[i / 64] |= 1 << (i % 64),
                    _ => return Err(Error::Parse(format!("record {r} has character {:?}", c as char))),
                }
            }
            ds.push(&packed);
        }
        if lines.any(|l| l.map(|l| !l.trim().is_empty()).unwrap_or(true)) {
            return Err(Error::Parse("trailing data after the declared records".into()));
        }
        Ok(ds)
    }

    /// Binary format: `MIXB1`, u32 n (LE), u64 N (LE), then ⌈n/8⌉ bytes per
    /// record with bit i at byte i/8, position i%8.
    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        out.write_all(BINARY_MAGIC)?;
        let n32 = u32::try_from(self.n).map_err(|_| Error::Parse("n does not fit in u32".into()))?;
        out.write_all(&n32.to_le_bytes())?;
        out.write_all(&(self.len as u64).to_le_bytes())?;
        let bytes = self.n.div_ceil(8);
        for r in 0..self.len {
            let rec = self.record(r);
            let buf: Vec<u8> = (0..bytes).map(|b| (rec[b / 8] >> (8 * (b % 8))) as u8).collect();
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let mut input = BufReader::new(input);
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("missing MIXB1 magic".into()));
        }
        let mut n_bytes = [0u8; 4];
        let mut count_bytes = [0u8; 8];
        input.read_exact(&mut n_bytes)?;
        input.read_exact(&mut count_bytes)?;
        let n = u32::from_le_bytes(n_bytes) as usize;
        let count = usize::try_from(u64::from_le_bytes(count_bytes))
            .map_err(|_| Error::Parse("record count too large".into()))?;
        if n == 0 || count == 0 {
            return Err(Error::Parse("n and N must be positive".into()));
        }
        let bytes = n.div_ceil(8);
        let mut ds = Dataset::empty(n, count);
        let mut buf = vec![0u8; bytes];
        let mut packed = vec![0u64; ds.words];
        for _ in 0..count {
            input.read_exact(&mut buf)?;
            packed.iter_mut().for_each(|w| *w = 0);
            for (b, &byte) in buf.iter().enumerate() {
                packed[b / 8] |= u64::from(byte) << (8 * (b % 8));
            }
            // bits past n must be zero
            if n % 64 != 0 && packed[ds.words - 1] >> (n % 64) != 0 {
                return Err(Error::Parse("padding bits set in binary record".into()));
            }
            ds.push(&packed);
        }
        Ok(ds)
    }

    /// Reads either format, detected by the binary magic.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            Self::read_binary(&bytes[..])
        } else {
            Self::read_text(&bytes[..])
        }
    }

    /// Writes the binary format when `binary` is set, text otherwise.
    pub fn save(&self, path: impl AsRef<Path>, binary: bool) -> Result<()> {
        let file = std::fs::File::create(path)?;
        if binary {
            self.write_binary(file)
        } else {
            self.write_text(file)
        }
    }
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("bad header field {s:?}: {e}")));
    match fields.as_slice() {
        [n, count] => {
            let (n, count) = (parse(n)?, parse(count)?);
            if n == 0 || count == 0 {
                return Err(Error::Parse("n and N must be positive".into()));
            }
            Ok((n, count))
        }
        _ => Err(Error::Parse(format!("header must be \"n N\", got {line:?}"))),
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn chunk_seed(seed: u64, chunk: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ chunk)
}

/// Uniform value in [0, 1) keyed by (seed, S).
fn keyed_uniform(seed: u64, s: &Subset) -> f64 {
    let mut h = splitmix64(seed ^ 0xD1B5_4A32_D192_ED03);
    h = splitmix64(h ^ s.len() as u64);
    for i in s.iter() {
        h = splitmix64(h ^ (i as u64).wrapping_add(1));
    }
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// I.i.d. records: H ~ π, then bit i ~ Bernoulli(m_iH). Records are drawn
/// in fixed-size chunks, each with its own seed, so the output does not
/// depend on thread scheduling.
pub fn draw_samples(model: &MixtureModel, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Precondition("sample count must be at least 1".into()));
    }
    let n = model.n();
    let mut cumulative: Vec<f64> = model
        .pi()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    *cumulative.last_mut().expect("k >= 1") = f64::INFINITY;
    let words = n.div_ceil(64).max(1);
    let chunks = count.div_ceil(SAMPLE_CHUNK);
    let data: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let rows = SAMPLE_CHUNK.min(count - c * SAMPLE_CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(chunk_seed(seed, c as u64));
            let mut out = vec![0u64; rows * words];
            for r in 0..rows {
                let u: f64 = rng.random();
                let h = cumulative.iter().position(|&c| u < c).expect("last bound is infinite");
                let rec = &mut out[r * words..(r + 1) * words];
                for (i, row) in model.rows().iter().enumerate() {
                    if rng.random::<f64>() < row[h] {
                        rec[i / 64] |= 1 << (i % 64);
                    }
                }
            }
            out
        })
        .collect();
    Ok(Dataset { n, words, len: count, data: data.concat() })
}

/// Fraction of records with every bit in `s` set; exactly 1 for ∅.
pub fn empirical_moment(dataset: &Dataset, s: &Subset) -> Result<f64> {
    if s.is_empty() {
        return Ok(1.0);
    }
    let count = dataset.count_all_ones(std::slice::from_ref(s))?[0];
    Ok(count as f64 / dataset.len() as f64)
}

/// User-supplied perturbation δ_S; the oracle clamps it to [−ε, ε].
pub type Perturbation = Arc<dyn Fn(&Subset) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum OracleMode {
    Exact(MixtureModel),
    Empirical(Dataset),
    /// exact moment plus δ_S uniform on [−ε, ε], keyed by (seed, S)
    Perturbed { model: MixtureModel, eps: f64, seed: u64 },
    Custom { model: MixtureModel, eps: f64, perturbation: Perturbation },
}

impl fmt::Debug for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleMode::Exact(_) => f.write_str("Exact"),
            OracleMode::Empirical(d) => write!(f, "Empirical(N = {})", d.len()),
            OracleMode::Perturbed { eps, seed, .. } => write!(f, "Perturbed(eps = {eps:e}, seed = {seed})"),
            OracleMode::Custom { eps, .. } => write!(f, "Custom(eps = {eps:e})"),
        }
    }
}

/// Moment access with a thread-safe cache: a given subset always gets the
/// same value from the same oracle.
#[derive(Debug)]
pub struct MomentOracle {
    mode: OracleMode,
    n: usize,
    cache: RwLock<HashMap<Subset, f64>>,
}

impl MomentOracle {
    pub fn new(mode: OracleMode) -> Result<Self> {
        let n = match &mode {
            OracleMode::Exact(m) => m.n(),
            OracleMode::Empirical(d) => d.n(),
            OracleMode::Perturbed { model, eps, .. } | OracleMode::Custom { model, eps, .. } => {
                if !(*eps >= 0.0 && eps.is_finite()) {
                    return Err(Error::Precondition(format!("perturbation level {eps} must be finite and >= 0")));
                }
                model.n()
            }
        };
        Ok(MomentOracle { mode, n, cache: RwLock::new(HashMap::new()) })
    }

    pub fn exact(model: MixtureModel) -> Self {
        Self::new(OracleMode::Exact(model)).expect("exact mode has no preconditions")
    }

    pub fn empirical(dataset: Dataset) -> Self {
        Self::new(OracleMode::Empirical(dataset)).expect("empirical mode has no preconditions")
    }

    pub fn perturbed(model: MixtureModel, eps: f64, seed: u64) -> Result<Self> {
        Self::new(OracleMode::Perturbed { model, eps, seed })
    }

    pub fn with_perturbation(model: MixtureModel, eps: f64, perturbation: Perturbation) -> Result<Self> {
        Self::new(OracleMode::Custom { model, eps, perturbation })
    }

    pub fn mode(&self) -> &OracleMode {
        &self.mode
    }

    /// Number of observable bits.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Ground-truth model, when the oracle has one.
    pub fn model(&self) -> Option<&MixtureModel> {
        match &self.mode {
            OracleMode::Exact(m) | OracleMode::Perturbed { model: m, .. } | OracleMode::Custom { model: m, .. } => {
                Some(m)
            }
            OracleMode::Empirical(_) => None,
        }
    }

    pub fn cached_len(&self) -> usize {
        self.cache.read().len()
    }

    fn check(&self, s: &Subset) -> Result<()> {
        match s.max() {
            Some(i) if i >= self.n => Err(Error::IndexOutOfRange { index: i, n: self.n }),
            _ => Ok(()),
        }
    }

    fn compute(&self, s: &Subset) -> Result<f64> {
        match &self.mode {
            OracleMode::Exact(m) => m.exact_moment(s),
            OracleMode::Empirical(d) => empirical_moment(d, s),
            OracleMode::Perturbed { model, eps, seed } => {
                let exact = model.exact_moment(s)?;
                if s.is_empty() {
                    return Ok(exact);
                }
                let delta = eps * (2.0 * keyed_uniform(*seed, s) - 1.0);
                Ok((exact + delta).clamp(0.0, 1.0))
            }
            OracleMode::Custom { model, eps, perturbation } => {
                let exact = model.exact_moment(s)?;
                if s.is_empty() {
                    return Ok(exact);
                }
                let delta = perturbation(s).clamp(-eps, *eps);
                Ok((exact + delta).clamp(0.0, 1.0))
            }
        }
    }

    /// `emom(S)` under this oracle's mode.
    pub fn query(&self, s: &Subset) -> Result<f64> {
        self.check(s)?;
        if let Some(&v) = self.cache.read().get(s) {
            return Ok(v);
        }
        let v = self.compute(s)?;
        // a concurrent writer may have stored the same deterministic value
        Ok(*self.cache.write().entry(s.clone()).or_insert(v))
    }

    /// Values for every member of `family`, in order. In empirical mode all
    /// uncached subsets are counted in a single scan of the dataset.
    pub fn moment_table(&self, family: &[Subset]) -> Result<Vec<f64>> {
        family.iter().try_for_each(|s| self.check(s))?;
        if let OracleMode::Empirical(d) = &self.mode {
            let missing: Vec<Subset> = {
                let cache = self.cache.read();
                let mut m: Vec<Subset> = family.iter().filter(|s| !cache.contains_key(*s)).cloned().collect();
                m.sort();
                m.dedup();
                m
            };
            if !missing.is_empty() {
                let counts = d.count_all_ones(&missing)?;
                let mut cache = self.cache.write();
                for (s, c) in missing.into_iter().zip(counts) {
                    let v = if s.is_empty() { 1.0 } else { c as f64 / d.len() as f64 };
                    cache.entry(s).or_insert(v);
                }
            }
            let cache = self.cache.read();
            return Ok(family.iter().map(|s| cache[s]).collect());
        }
        family.iter().map(|s| self.query(s)).collect()
    }
}
