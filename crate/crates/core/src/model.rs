//! Mixtures of binary product distributions: parameters, exact moments,
//! separation reports, random instances and label-invariant comparison.

use std::fmt;
use std::path::Path;

use itertools::Itertools;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when comparing a measured gap against a separation level.
pub const SEPARATION_TOL: f64 = 1e-12;

/// A set of observable bit indices (0-based), kept sorted and duplicate-free.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct Subset(Vec<usize>);

impl Subset {
    pub fn empty() -> Self {
        Subset(Vec::new())
    }

    pub fn singleton(i: usize) -> Self {
        Subset(vec![i])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn union(&self, other: &Subset) -> Subset {
        self.iter().chain(other.iter()).collect()
    }

    pub fn with(&self, i: usize) -> Subset {
        self.iter().chain(std::iter::once(i)).collect()
    }

    pub fn is_disjoint(&self, other: &Subset) -> bool {
        self.iter().all(|i| !other.contains(i))
    }

    pub fn is_subset_of(&self, ground: &[usize]) -> bool {
        self.iter().all(|i| ground.contains(&i))
    }

    /// Largest index, if any.
    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// All subsets of `ground`, ordered lexicographically by member list.
    pub fn power_set(ground: &[usize]) -> Vec<Subset> {
        let mut out: Vec<Subset> = ground.iter().copied().powerset().map(Subset::from).collect();
        out.sort();
        out.dedup();
        out
    }
}

impl From<Vec<usize>> for Subset {
    fn from(mut v: Vec<usize>) -> Self {
        v.sort_unstable();
        v.dedup();
        Subset(v)
    }
}

impl From<Subset> for Vec<usize> {
    fn from(s: Subset) -> Self {
        s.0
    }
}

impl FromIterator<usize> for Subset {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Subset::from(iter.into_iter().collect::<Vec<_>>())
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.iter().join(","))
    }
}

/// Mixing weights `pi` (length k) and conditional probabilities `M` (n×k),
/// `M[i][j] = Pr[X_i = 1 | H = j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct MixtureModel {
    pi: Vec<f64>,
    m: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    k: usize,
    n: usize,
    pi: Vec<f64>,
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
}

impl TryFrom<ModelFile> for MixtureModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.pi.len() != f.k || f.m.len() != f.n {
            return Err(Error::InvalidModel(format!(
                "declared k = {}, n = {} but pi has {} entries and M has {} rows",
                f.k,
                f.n,
                f.pi.len(),
                f.m.len()
            )));
        }
        MixtureModel::new(f.pi, f.m)
    }
}

impl From<MixtureModel> for ModelFile {
    fn from(m: MixtureModel) -> Self {
        ModelFile { k: m.k(), n: m.n(), pi: m.pi, m: m.m }
    }
}

impl MixtureModel {
    /// Validates and builds a model. Weights must be positive and sum to one
    /// within 1e-12; every entry of `m` must lie in [0, 1].
    pub fn new(pi: Vec<f64>, m: Vec<Vec<f64>>) -> Result<Self> {
        let k = pi.len();
        if k == 0 {
            return Err(Error::InvalidModel("k must be at least 1".into()));
        }
        if m.is_empty() {
            return Err(Error::InvalidModel("n must be at least 1".into()));
        }
        if let Some((j, &p)) = pi.iter().enumerate().find(|(_, p)| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidModel(format!("pi[{j}] = {p} is not positive")));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("mixing weights sum to {total}")));
        }
        for (i, row) in m.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidModel(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidModel(format!("row {i} has entry {v} outside [0, 1]")));
            }
        }
        Ok(MixtureModel { pi, m })
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn pi_min(&self) -> f64 {
        self.pi.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn check_subset(&self, s: &Subset) -> Result<()> {
        match s.max() {
            Some(i) if i >= self.n() => Err(Error::IndexOutOfRange { index: i, n: self.n() }),
            _ => Ok(()),
        }
    }

    /// `M_S`: entrywise product of the rows indexed by `s` (all ones for ∅).
    pub fn hadamard_row(&self, s: &Subset) -> Result<Vec<f64>> {
        self.check_subset(s)?;
        let mut out = vec![1.0; self.k()];
        for i in s.iter() {
            for (o, v) in out.iter_mut().zip(&self.m[i]) {
                *o *= v;
            }
        }
        Ok(out)
    }

    /// `mom(S) = M_S πᵀ`.
    pub fn exact_moment(&self, s: &Subset) -> Result<f64> {
        let row = self.hadamard_row(s)?;
        Ok(row.iter().zip(&self.pi).map(|(a, b)| a * b).sum())
    }

    /// The k×k (or |family|×k) matrix `M[family]`.
    pub fn family_matrix(&self, family: &[Subset]) -> Result<Vec<Vec<f64>>> {
        family.iter().map(|s| self.hadamard_row(s)).collect()
    }

    pub fn separation_report(&self) -> SeparationReport {
        let per_row_gap = self
            .m
            .iter()
            .map(|row| if self.k() == 1 { f64::INFINITY } else { crate::linalg::min_gap(row) })
            .collect();
        SeparationReport { per_row_gap }
    }

    /// Returns a copy whose components are relabelled: component `j` of the
    /// result is component `perm[j]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k() || !is_permutation(perm) {
            return Err(Error::DimensionMismatch("not a permutation of the components".into()));
        }
        let pi = perm.iter().map(|&p| self.pi[p]).collect();
        let m = self.m.iter().map(|row| perm.iter().map(|&p| row[p]).collect()).collect();
        Ok(MixtureModel { pi, m })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
}

/// Per-row minimum pairwise gap `min_{j≠j'} |m_ij − m_ij'|`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationReport {
    pub per_row_gap: Vec<f64>,
}

impl SeparationReport {
    /// Rows whose gap is at least `zeta` (up to [`SEPARATION_TOL`]).
    pub fn separated_rows(&self, zeta: f64) -> Vec<usize> {
        self.per_row_gap
            .iter()
            .enumerate()
            .filter(|(_, g)| **g >= zeta - SEPARATION_TOL)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_separated(&self, row: usize, zeta: f64) -> bool {
        self.per_row_gap[row] >= zeta - SEPARATION_TOL
    }
}

/// Best relabelling of `b`'s components onto `a`'s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentAlignment {
    /// `permutation[j]` is the component of `b` matched to component `j` of `a`.
    pub permutation: Vec<usize>,
    pub max_param_error: f64,
}

/// Max-norm parameter distance minimized over all k! relabellings (k ≤ 8).
pub fn model_distance(a: &MixtureModel, b: &MixtureModel) -> Result<ComponentAlignment> {
    if a.k() != b.k() || a.n() != b.n() {
        return Err(Error::DimensionMismatch(format!(
            "models have (k, n) = ({}, {}) and ({}, {})",
            a.k(),
            a.n(),
            b.k(),
            b.n()
        )));
    }
    let k = a.k();
    if k > 8 {
        return Err(Error::TooManyComponents(k));
    }
    let error_for = |perm: &[usize]| {
        let mut worst: f64 = 0.0;
        for (j, &p) in perm.iter().enumerate() {
            worst = worst.max((a.pi[j] - b.pi[p]).abs());
            for (ra, rb) in a.m.iter().zip(&b.m) {
                worst = worst.max((ra[j] - rb[p]).abs());
            }
        }
        worst
    };
    let mut best = ComponentAlignment { permutation: (0..k).collect(), max_param_error: f64::INFINITY };
    for perm in (0..k).permutations(k) {
        let e = error_for(&perm);
        if e < best.max_param_error {
            best = ComponentAlignment { permutation: perm, max_param_error: e };
        }
    }
    Ok(best)
}

/// Which rows of a random model must be ζ-separated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeparatedRows {
    All,
    /// The first `count` rows.
    Count(usize),
}

/// Random mixture honoring a separation level and a weight floor.
///
/// Separated rows place k values on a ζ-spaced grid (sampled without
/// replacement), jitter them right-to-left inside the remaining slack and
/// shuffle them across components. Weights are `π_min + (1 − kπ_min)·w` with
/// `w` drawn by stick breaking. Other rows are uniform on [0, 1].
pub fn random_model(
    k: usize,
    n: usize,
    zeta: f64,
    pi_min: f64,
    separated: SeparatedRows,
    seed: u64,
) -> Result<MixtureModel> {
    if k == 0 || n == 0 {
        return Err(Error::Infeasible("k and n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::Infeasible(format!("zeta = {zeta} outside [0, 1]")));
    }
    if k >= 2 && zeta > 1.0 / (k - 1) as f64 + 1e-12 {
        return Err(Error::Infeasible(format!("zeta = {zeta} exceeds 1/(k-1) = {}", 1.0 / (k - 1) as f64)));
    }
    if !(0.0..=1.0 / k as f64 + 1e-12).contains(&pi_min) {
        return Err(Error::Infeasible(format!("pi_min = {pi_min} outside [0, 1/k]")));
    }
    let n_separated = match separated {
        SeparatedRows::All => n,
        SeparatedRows::Count(c) if c <= n => c,
        SeparatedRows::Count(c) => {
            return Err(Error::Infeasible(format!("{c} separated rows requested but n = {n}")));
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = floored_simplex(&mut rng, k, pi_min);
    let m = (0..n)
        .map(|i| {
            if i < n_separated && k >= 2 && zeta > 0.0 {
                separated_row(&mut rng, k, zeta)
            } else {
                (0..k).map(|_| rng.random::<f64>()).collect()
            }
        })
        .collect();
    MixtureModel::new(pi, m)
}

fn floored_simplex(rng: &mut ChaCha8Rng, k: usize, pi_min: f64) -> Vec<f64> {
    let free = (1.0 - k as f64 * pi_min).max(0.0);
    let mut rest = 1.0;
    let mut w = Vec::with_capacity(k);
    for j in 0..k {
        let pieces_after = (k - j - 1) as f64;
        let piece = if pieces_after == 0.0 {
            rest
        } else {
            // Beta(1, pieces_after) by inversion
            let b = 1.0 - rng.random::<f64>().powf(1.0 / pieces_after);
            rest * b
        };
        rest -= piece;
        w.push(piece);
    }
    let mut pi: Vec<f64> = w.iter().map(|wj| pi_min + free * wj.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    pi
}

fn separated_row(rng: &mut ChaCha8Rng, k: usize, zeta: f64) -> Vec<f64> {
    let grid = (1.0 / zeta + 1e-9).floor() as usize + 1;
    let mut picks: Vec<usize> = index::sample(rng, grid, k).into_vec();
    picks.sort_unstable();
    let mut x: Vec<f64> = picks.iter().map(|&g| (g as f64 * zeta).min(1.0)).collect();
    let mut upper = 1.0;
    for i in (0..k).rev() {
        let lo = x[i];
        if upper > lo {
            x[i] = lo + rng.random::<f64>() * (upper - lo);
        }
        upper = (x[i] - zeta).min(1.0);
    }
    x.shuffle(rng);
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_by_two() -> MixtureModel {
        MixtureModel::new(vec![0.5, 0.5], vec![vec![0.2, 0.8], vec![0.4, 0.6]]).unwrap()
    }

    /// Enumerates hidden state and every bit pattern on `s`.
    fn brute_force_moment(model: &MixtureModel, s: &[usize]) -> f64 {
        let mut total = 0.0;
        for j in 0..model.k() {
            for pattern in 0..(1u32 << s.len()) {
                let mut p = model.pi()[j];
                let mut all_one = true;
                for (b, &i) in s.iter().enumerate() {
                    let bit = pattern >> b & 1 == 1;
                    let m = model.row(i)[j];
                    p *= if bit { m } else { 1.0 - m };
                    all_one &= bit;
                }
                if all_one {
                    total += p;
                }
            }
        }
        total
    }

    #[test]
    fn hadamard_row_examples() {
        let m = two_by_two();
        assert_eq!(m.hadamard_row(&Subset::empty()).unwrap(), vec![1.0, 1.0]);
        assert_eq!(m.hadamard_row(&Subset::singleton(0)).unwrap(), vec![0.2, 0.8]);
        let both = m.hadamard_row(&Subset::from(vec![0, 1])).unwrap();
        assert!((both[0] - 0.08).abs() < 1e-15 && (both[1] - 0.48).abs() < 1e-15);
        assert!(matches!(
            m.hadamard_row(&Subset::singleton(2)),
            Err(Error::IndexOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn exact_moment_matches_enumeration() {
        let m = two_by_two();
        assert_eq!(m.exact_moment(&Subset::empty()).unwrap(), 1.0);
        let one = brute_force_moment(&m, &[0]);
        assert!((one - 0.5).abs() < 1e-15);
        assert!((m.exact_moment(&Subset::singleton(0)).unwrap() - one).abs() < 1e-15);
        let two = brute_force_moment(&m, &[0, 1]);
        assert!((two - 0.28).abs() < 1e-15);
        assert!((m.exact_moment(&Subset::from(vec![0, 1])).unwrap() - two).abs() < 1e-15);
    }

    #[test]
    fn separation_examples() {
        let m = MixtureModel::new(vec![0.5, 0.5], vec![vec![0.2, 0.8], vec![0.3, 0.3]]).unwrap();
        let r = m.separation_report();
        assert!((r.per_row_gap[0] - 0.6).abs() < 1e-15);
        assert_eq!(r.per_row_gap[1], 0.0);
        assert_eq!(r.separated_rows(1e-9), vec![0]);

        let m3 = MixtureModel::new(vec![0.3, 0.3, 0.4], vec![vec![0.1, 0.5, 0.55]]).unwrap();
        assert!((m3.separation_report().per_row_gap[0] - 0.05).abs() < 1e-12);

        let m1 = MixtureModel::new(vec![1.0], vec![vec![0.3]]).unwrap();
        assert_eq!(m1.separation_report().per_row_gap[0], f64::INFINITY);
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(MixtureModel::new(vec![0.6, 0.6], vec![vec![0.1, 0.2]]).is_err());
        assert!(MixtureModel::new(vec![1.0, 0.0], vec![vec![0.1, 0.2]]).is_err());
        assert!(MixtureModel::new(vec![0.5, 0.5], vec![vec![0.1, 1.2]]).is_err());
        assert!(MixtureModel::new(vec![0.5, 0.5], vec![vec![0.1]]).is_err());
    }

    #[test]
    fn random_model_degenerate_and_infeasible() {
        let m = random_model(1, 2, 0.9, 0.5, SeparatedRows::All, 1).unwrap();
        assert_eq!(m.pi(), &[1.0]);
        assert!(random_model(3, 4, 0.6, 0.1, SeparatedRows::All, 0).is_err());
        assert!(random_model(2, 4, 0.5, 0.6, SeparatedRows::All, 0).is_err());
        assert!(random_model(2, 4, 0.5, 0.1, SeparatedRows::Count(5), 0).is_err());
    }

    #[test]
    fn random_model_is_deterministic_and_separated() {
        let a = random_model(2, 5, 0.5, 0.2, SeparatedRows::All, 7).unwrap();
        let b = random_model(2, 5, 0.5, 0.2, SeparatedRows::All, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.separation_report().separated_rows(0.5), (0..5).collect::<Vec<_>>());
        // boundary case: zeta = 1/(k-1)
        let c = random_model(4, 3, 1.0 / 3.0, 0.25, SeparatedRows::All, 3).unwrap();
        assert_eq!(c.separation_report().separated_rows(1.0 / 3.0).len(), 3);
    }

    #[test]
    fn distance_examples() {
        let a = MixtureModel::new(vec![0.3, 0.7], vec![vec![0.1, 0.9], vec![0.2, 0.7]]).unwrap();
        let d = model_distance(&a, &a).unwrap();
        assert_eq!(d.permutation, vec![0, 1]);
        assert_eq!(d.max_param_error, 0.0);

        let swapped = a.permuted(&[1, 0]).unwrap();
        let d = model_distance(&a, &swapped).unwrap();
        assert_eq!(d.permutation, vec![1, 0]);
        assert_eq!(d.max_param_error, 0.0);

        let shifted = MixtureModel::new(vec![0.3, 0.7], vec![vec![0.11, 0.9], vec![0.2, 0.7]]).unwrap();
        // identity: 0.01; swap: at least |0.3 - 0.7|
        let d = model_distance(&a, &shifted).unwrap();
        assert_eq!(d.permutation, vec![0, 1]);
        assert!((d.max_param_error - 0.01).abs() < 1e-15);

        let wide = MixtureModel::new(vec![0.1; 10], vec![vec![0.5; 10]]).unwrap();
        assert!(matches!(model_distance(&wide, &wide), Err(Error::TooManyComponents(10))));
    }

    #[test]
    fn json_round_trip_and_layout() {
        let a = two_by_two();
        let text = a.to_json().unwrap();
        assert!(text.contains("\"M\""));
        assert!(text.contains("2.0000000000000001e-1"));
        assert_eq!(MixtureModel::from_json(&text).unwrap(), a);
        let bad = r#"{"k":2,"n":1,"pi":[0.5,0.5],"M":[[0.1,0.2],[0.3,0.4]]}"#;
        assert!(MixtureModel::from_json(bad).is_err());
    }

    #[test]
    fn power_set_order() {
        let p = Subset::power_set(&[3, 5]);
        let lists: Vec<Vec<usize>> = p.into_iter().map(Into::into).collect();
        assert_eq!(lists, vec![vec![], vec![3], vec![3, 5], vec![5]]);
        assert_eq!(Subset::power_set(&[]), vec![Subset::empty()]);
        assert_eq!(Subset::power_set(&[0, 1, 2, 3]).len(), 16);
    }

    fn arb_model() -> impl Strategy<Value = MixtureModel> {
        (1usize..=4, 1usize..=5, any::<u64>()).prop_map(|(k, n, seed)| {
            random_model(k, n, 0.0, 0.0, SeparatedRows::Count(0), seed).unwrap()
        })
    }

    proptest! {
        #[test]
        fn moments_bounded_and_monotone(model in arb_model(), mask in 0u32..32, extra in 0u32..32) {
            let n = model.n();
            let small: Subset = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let big = small.union(&(0..n).filter(|i| extra >> i & 1 == 1).collect());
            let a = model.exact_moment(&small).unwrap();
            let b = model.exact_moment(&big).unwrap();
            prop_assert!((0.0..=1.0 + 1e-15).contains(&a));
            prop_assert!(b <= a + 1e-15);
        }

        #[test]
        fn hadamard_multiplicative_on_disjoint(model in arb_model(), mask in 0u32..32, split in 0u32..32) {
            let n = model.n();
            let s: Subset = (0..n).filter(|i| mask >> i & 1 == 1 && split >> i & 1 == 1).collect();
            let t: Subset = (0..n).filter(|i| mask >> i & 1 == 1 && split >> i & 1 == 0).collect();
            let joint = model.hadamard_row(&s.union(&t)).unwrap();
            let a = model.hadamard_row(&s).unwrap();
            let b = model.hadamard_row(&t).unwrap();
            for j in 0..model.k() {
                prop_assert!((joint[j] - a[j] * b[j]).abs() < 1e-15);
            }
        }

        #[test]
        fn distance_symmetric(a in arb_model(), seed in any::<u64>()) {
            let b = random_model(a.k(), a.n(), 0.0, 0.0, SeparatedRows::Count(0), seed).unwrap();
            let ab = model_distance(&a, &b).unwrap().max_param_error;
            let ba = model_distance(&b, &a).unwrap().max_param_error;
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert_eq!(model_distance(&a, &a).unwrap().max_param_error, 0.0);
        }

        #[test]
        fn random_rows_respect_separation(
            k in 2usize..=5, n in 1usize..=6, frac in 0.05f64..=1.0, seed in any::<u64>()
        ) {
            let zeta = frac / (k - 1) as f64;
            let pi_min = 0.5 / k as f64;
            let model = random_model(k, n, zeta, pi_min, SeparatedRows::All, seed).unwrap();
            prop_assert_eq!(model.separation_report().separated_rows(zeta).len(), n);
            prop_assert!(model.pi_min() >= pi_min - 1e-12);
        }
    }
}
