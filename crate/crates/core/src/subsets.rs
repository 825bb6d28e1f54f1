//! Subset families, observable moment matrices C_BA, and the search for
//! well-conditioned families (A, B, B') over row triples (S, T, T').

use std::collections::HashMap;
use std::ops::ControlFlow;
use std::sync::Arc;

use itertools::Itertools;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Subset;
use crate::moments::MomentOracle;

/// Scores below this are treated as numerically singular regardless of the
/// configured threshold.
pub const SCORE_FLOOR: f64 = 1e-13;

/// Which bootstrap recursion the selected families must support.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// 2k−1 rows: target, T, S.
    Sequential,
    /// 3k−3 rows: T (holding the target), T', S.
    Doubling,
}

impl Strategy {
    /// Smallest n the strategy can work with.
    pub fn min_rows(self, k: usize) -> usize {
        match self {
            Strategy::Sequential => 2 * k - 1,
            Strategy::Doubling => (3 * k).saturating_sub(3).max(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Every disjoint row triple, in lexicographic order.
    Exhaustive,
    /// Only the leading rows, as if every row were separated.
    AllSeparated,
}

/// Default line-search threshold `π_min · ζ^{c·k²}`.
pub fn selection_threshold(pi_min: f64, zeta: f64, k: usize, exponent: f64) -> f64 {
    pi_min * zeta.powf(exponent * (k * k) as f64)
}

/// k subsets of a common ground set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetFamily {
    ground: Vec<usize>,
    members: Vec<Subset>,
}

impl SubsetFamily {
    pub fn new(ground: Vec<usize>, members: Vec<Subset>) -> Result<Self> {
        let ground: Vec<usize> = Subset::from(ground).into();
        if let Some(m) = members.iter().find(|m| !m.is_subset_of(&ground)) {
            return Err(Error::Precondition(format!("member {m} is not inside the ground set")));
        }
        if members.iter().duplicates().next().is_some() {
            return Err(Error::Precondition("family members must be distinct".into()));
        }
        Ok(SubsetFamily { ground, members })
    }

    pub fn ground(&self) -> &[usize] {
        &self.ground
    }

    pub fn members(&self) -> &[Subset] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains_empty(&self) -> bool {
        self.members.iter().any(Subset::is_empty)
    }

    fn ground_disjoint(&self, other: &SubsetFamily) -> bool {
        self.ground.iter().all(|i| !other.ground.contains(i))
    }
}

/// `C[ℓ][i] = oracle(B_ℓ ∪ A_i)` with its extreme singular values.
#[derive(Clone, Debug)]
pub struct MomentMatrixC {
    pub row_family: SubsetFamily,
    pub col_family: SubsetFamily,
    pub values: DMatrix<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

pub fn build_c(oracle: &MomentOracle, b: &SubsetFamily, a: &SubsetFamily) -> Result<MomentMatrixC> {
    if !b.ground_disjoint(a) {
        return Err(Error::GroundOverlap(format!("{:?} and {:?}", b.ground, a.ground)));
    }
    let unions: Vec<Subset> = b
        .members
        .iter()
        .flat_map(|bl| a.members.iter().map(move |ai| bl.union(ai)))
        .collect();
    let flat = oracle.moment_table(&unions)?;
    let values = DMatrix::from_row_slice(b.len(), a.len(), &flat);
    let (sigma_min, sigma_max) = linalg::extreme_singular_values(&values);
    Ok(MomentMatrixC { row_family: b.clone(), col_family: a.clone(), values, sigma_min, sigma_max })
}

/// `B + B' = {B_ℓ ∪ B'_j}` in row-major (ℓ, j) order.
pub fn family_sum(b: &SubsetFamily, bp: &SubsetFamily) -> Result<SubsetFamily> {
    if !b.ground_disjoint(bp) {
        return Err(Error::GroundOverlap(format!("{:?} and {:?}", b.ground, bp.ground)));
    }
    let members = b
        .members
        .iter()
        .flat_map(|bl| bp.members.iter().map(move |bj| bl.union(bj)))
        .collect();
    let ground = b.ground.iter().chain(&bp.ground).copied().collect();
    SubsetFamily::new(ground, members)
}

/// Rows feeding one identification attempt. `tp = None` selects the
/// sequential layout, where `target` must be given; for the doubling
/// layout the target is picked from `t` unless `t` is empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowLayout {
    pub s: Vec<usize>,
    pub t: Vec<usize>,
    pub tp: Option<Vec<usize>>,
    pub target: Option<usize>,
}

impl RowLayout {
    /// The fixed layout on the leading rows: doubling uses
    /// T = {0..k−2}, T' = {k−1..2k−3}, S = {2k−2..3k−4}; sequential uses
    /// target 0, T = {1..k−1}, S = {k..2k−2}.
    pub fn leading(k: usize, strategy: Strategy) -> Self {
        let km = k - 1;
        match strategy {
            Strategy::Doubling => RowLayout {
                t: (0..km).collect(),
                tp: Some((km..2 * km).collect()),
                s: (2 * km..3 * km).collect(),
                target: if k == 1 { Some(0) } else { None },
            },
            Strategy::Sequential => RowLayout {
                target: Some(0),
                t: (1..k).collect(),
                s: (k..2 * k - 1).collect(),
                tp: None,
            },
        }
    }

    pub fn strategy(&self) -> Strategy {
        if self.tp.is_some() {
            Strategy::Doubling
        } else {
            Strategy::Sequential
        }
    }

    fn validate(&self, k: usize, n: usize) -> Result<()> {
        let mut all: Vec<usize> = self.s.iter().chain(&self.t).copied().collect();
        if let Some(tp) = &self.tp {
            all.extend(tp);
        }
        for (name, set) in [("S", Some(&self.s)), ("T", Some(&self.t)), ("T'", self.tp.as_ref())] {
            if let Some(set) = set {
                if set.len() != k - 1 {
                    return Err(Error::Precondition(format!("{name} must have k - 1 = {} rows", k - 1)));
                }
            }
        }
        match (self.strategy(), self.target) {
            (Strategy::Sequential, None) => {
                return Err(Error::Precondition("the sequential layout needs an explicit target".into()));
            }
            (Strategy::Sequential, Some(t)) => all.push(t),
            (Strategy::Doubling, Some(t)) if !self.t.is_empty() && !self.t.contains(&t) => {
                return Err(Error::Precondition("the doubling target must lie in T".into()));
            }
            (Strategy::Doubling, None) if self.t.is_empty() => {
                return Err(Error::Precondition("k = 1 needs an explicit target".into()));
            }
            (Strategy::Doubling, Some(t)) if self.t.is_empty() => all.push(t),
            _ => {}
        }
        if let Some(&i) = all.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        let len = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != len {
            return Err(Error::GroundOverlap("S, T, T' and the target must be disjoint".into()));
        }
        Ok(())
    }
}

/// Outcome of the family search for one row triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySelection {
    #[serde(rename = "S")]
    pub s: Vec<usize>,
    #[serde(rename = "T")]
    pub t: Vec<usize>,
    #[serde(rename = "Tp")]
    pub tp: Vec<usize>,
    #[serde(rename = "A")]
    pub a: Vec<Subset>,
    #[serde(rename = "B")]
    pub b: Vec<Subset>,
    /// Absent for the sequential layout.
    #[serde(rename = "Bp")]
    pub bp: Option<Vec<Subset>>,
    pub score: f64,
    pub target_bit: usize,
}

impl FamilySelection {
    pub fn strategy(&self) -> Strategy {
        if self.bp.is_some() {
            Strategy::Doubling
        } else {
            Strategy::Sequential
        }
    }

    pub fn family_a(&self) -> Result<SubsetFamily> {
        SubsetFamily::new(self.s.clone(), self.a.clone())
    }

    pub fn family_b(&self) -> Result<SubsetFamily> {
        SubsetFamily::new(self.t.clone(), self.b.clone())
    }

    pub fn family_bp(&self) -> Result<Option<SubsetFamily>> {
        self.bp.as_ref().map(|bp| SubsetFamily::new(self.tp.clone(), bp.clone())).transpose()
    }

    /// Structural checks for selections read from a file.
    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        let layout = RowLayout {
            s: self.s.clone(),
            t: self.t.clone(),
            tp: self.bp.as_ref().map(|_| self.tp.clone()),
            target: Some(self.target_bit),
        };
        layout.validate(k, n)?;
        let fams = [Some(self.family_a()?), Some(self.family_b()?), self.family_bp()?];
        for f in fams.iter().flatten() {
            if f.len() != k {
                return Err(Error::Precondition(format!("families must have k = {k} members")));
            }
        }
        if self.a.first().is_none_or(|a| !a.is_empty()) {
            return Err(Error::Precondition("the first member of A must be the empty set".into()));
        }
        if self.strategy() == Strategy::Sequential && self.b.iter().any(|b| b.contains(self.target_bit)) {
            return Err(Error::Precondition("sequential target may not appear in B".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Index combinations shared by every pool of size 2^{k−1}: candidate A
/// families (position 0, the empty set, plus k−1 others) and candidate B
/// families (any k positions).
struct Candidates {
    a: Vec<Vec<usize>>,
    b: Vec<Vec<usize>>,
}

impl Candidates {
    fn new(k: usize) -> Self {
        let pool = 1usize << (k - 1);
        let a = (1..pool)
            .combinations(k - 1)
            .map(|c| std::iter::once(0).chain(c).collect())
            .collect();
        let b = (0..pool).combinations(k).collect();
        Candidates { a, b }
    }
}

/// For every candidate A over `s`, the best σ_k(C_BA) over candidate B
/// families over `x`, and the index of that B (first on ties).
#[derive(Debug)]
struct PairScore {
    best: Vec<(f64, usize)>,
}

fn score_pair(oracle: &MomentOracle, cand: &Candidates, k: usize, s: &[usize], x: &[usize]) -> Result<PairScore> {
    let pool_s = Subset::power_set(s);
    let pool_x = Subset::power_set(x);
    let unions: Vec<Subset> = pool_x.iter().flat_map(|b| pool_s.iter().map(move |a| b.union(a))).collect();
    let flat = oracle.moment_table(&unions)?;
    let width = pool_s.len();
    let best = cand
        .a
        .iter()
        .map(|a_idx| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (bi, b_idx) in cand.b.iter().enumerate() {
                let c = DMatrix::from_fn(k, k, |l, i| flat[b_idx[l] * width + a_idx[i]]);
                let sigma = linalg::sigma_min(&c);
                if sigma > best.0 {
                    best = (sigma, bi);
                }
            }
            best
        })
        .collect();
    Ok(PairScore { best })
}

fn pick_members(pool: &[Subset], idx: &[usize]) -> Vec<Subset> {
    idx.iter().map(|&i| pool[i].clone()).collect()
}

/// Best A (first in lexicographic order on ties) for a triple given the
/// per-A scores against T and, for doubling, T'.
fn best_a(gt: &PairScore, gtp: Option<&PairScore>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (ai, &(st, _)) in gt.best.iter().enumerate() {
        let score = match gtp {
            Some(g) => st.min(g.best[ai].0),
            None => st,
        };
        if score > best.1 {
            best = (ai, score);
        }
    }
    best
}

fn assemble(
    cand: &Candidates,
    layout: &RowLayout,
    gt: &PairScore,
    gtp: Option<&PairScore>,
    ai: usize,
    score: f64,
) -> FamilySelection {
    let pool_s = Subset::power_set(&layout.s);
    let pool_t = Subset::power_set(&layout.t);
    let a = pick_members(&pool_s, &cand.a[ai]);
    let b = pick_members(&pool_t, &cand.b[gt.best[ai].1]);
    let bp = gtp.map(|g| pick_members(&Subset::power_set(layout.tp.as_deref().unwrap_or(&[])), &cand.b[g.best[ai].1]));
    let target_bit = match (layout.strategy(), layout.target) {
        (Strategy::Doubling, _) if !layout.t.is_empty() => layout
            .t
            .iter()
            .copied()
            .find(|&t| b.iter().all(|m| !m.contains(t)))
            .unwrap_or(layout.t[0]),
        (_, Some(t)) => t,
        _ => unreachable!("layout validated"),
    };
    FamilySelection {
        s: layout.s.clone(),
        t: layout.t.clone(),
        tp: layout.tp.clone().unwrap_or_default(),
        a,
        b,
        bp,
        score,
        target_bit,
    }
}

/// Exhaustive family search on one row layout, maximizing
/// `min(σ_k(C̃_BA), σ_k(C̃_B'A))` (just σ_k(C̃_BA) for the sequential layout).
/// Fails when the best score is below `threshold` or numerically zero.
pub fn select_families(oracle: &MomentOracle, layout: &RowLayout, k: usize, threshold: f64) -> Result<FamilySelection> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    layout.validate(k, oracle.n())?;
    let cand = Candidates::new(k);
    let score_t = |x: &[usize]| score_pair(oracle, &cand, k, &layout.s, x);
    let (gt, gtp) = match &layout.tp {
        Some(tp) => {
            let (a, b) = rayon::join(|| score_t(&layout.t), || score_t(tp));
            (a?, Some(b?))
        }
        None => (score_t(&layout.t)?, None),
    };
    let (ai, score) = best_a(&gt, gtp.as_ref());
    if !(score >= threshold.max(SCORE_FLOOR)) {
        return Err(Error::SelectionFailed { score, threshold });
    }
    Ok(assemble(&cand, layout, &gt, gtp.as_ref(), ai, score))
}

/// Memo of per-(S, X) scores, filled in parallel batches.
struct PairMemo<'a> {
    oracle: &'a MomentOracle,
    cand: Candidates,
    k: usize,
    map: HashMap<(Vec<usize>, Vec<usize>), Arc<PairScore>>,
}

impl PairMemo<'_> {
    fn ensure(&mut self, pairs: &[(&[usize], &[usize])]) -> Result<()> {
        let missing: Vec<(Vec<usize>, Vec<usize>)> = pairs
            .iter()
            .map(|(s, x)| (s.to_vec(), x.to_vec()))
            .filter(|key| !self.map.contains_key(key))
            .collect();
        let (oracle, cand, k) = (self.oracle, &self.cand, self.k);
        let scored: Vec<Result<PairScore>> =
            missing.par_iter().map(|(s, x)| score_pair(oracle, cand, k, s, x)).collect();
        for (key, score) in missing.into_iter().zip(scored) {
            self.map.insert(key, Arc::new(score?));
        }
        Ok(())
    }

    fn get(&self, s: &[usize], x: &[usize]) -> Arc<PairScore> {
        Arc::clone(&self.map[&(s.to_vec(), x.to_vec())])
    }
}

fn combos_avoiding(n: usize, size: usize, avoid: &[usize]) -> Vec<Vec<usize>> {
    (0..n).filter(|i| !avoid.contains(i)).combinations(size).collect()
}

/// Calls `visit` on every passing selection in search order until it
/// breaks. All-separated mode tries only [`RowLayout::leading`] and
/// reports its selection failure; exhaustive mode walks disjoint triples
/// lexicographically, as (T, T', S) for doubling and (target, T, S) for
/// sequential, and reports `Exhausted` when no triple passes. Returns
/// `Ok(None)` when every passing selection was visited without a break.
pub fn for_each_selection<R>(
    oracle: &MomentOracle,
    k: usize,
    strategy: Strategy,
    mode: SearchMode,
    threshold: f64,
    mut visit: impl FnMut(FamilySelection) -> ControlFlow<R>,
) -> Result<Option<R>> {
    let n = oracle.n();
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    if n < strategy.min_rows(k) {
        return Err(Error::Precondition(format!(
            "n = {n} is below the {} rows the {strategy:?} strategy needs for k = {k}",
            strategy.min_rows(k)
        )));
    }
    if mode == SearchMode::AllSeparated || k == 1 {
        let sel = select_families(oracle, &RowLayout::leading(k, strategy), k, threshold)?;
        return Ok(visit(sel).break_value());
    }

    let floor = threshold.max(SCORE_FLOOR);
    let km = k - 1;
    let mut memo = PairMemo { oracle, cand: Candidates::new(k), k, map: HashMap::new() };
    let mut passed = 0usize;

    // viable S for a fixed X: some A reaches the threshold against X
    let viable = |memo: &mut PairMemo, x: &[usize], ss: &[Vec<usize>]| -> Result<Vec<Vec<usize>>> {
        let pairs: Vec<(&[usize], &[usize])> = ss.iter().map(|s| (s.as_slice(), x)).collect();
        memo.ensure(&pairs)?;
        Ok(ss
            .iter()
            .filter(|s| memo.get(s, x).best.iter().any(|&(v, _)| v >= floor))
            .cloned()
            .collect())
    };

    match strategy {
        Strategy::Doubling => {
            for t in (0..n).combinations(km) {
                let s_for_t = viable(&mut memo, &t, &combos_avoiding(n, km, &t))?;
                if s_for_t.is_empty() {
                    continue;
                }
                for tp in combos_avoiding(n, km, &t) {
                    let cands: Vec<Vec<usize>> =
                        s_for_t.iter().filter(|s| s.iter().all(|i| !tp.contains(i))).cloned().collect();
                    let s_ok = viable(&mut memo, &tp, &cands)?;
                    for s in s_ok {
                        let (gt, gtp) = (memo.get(&s, &t), memo.get(&s, &tp));
                        let (ai, score) = best_a(&gt, Some(&gtp));
                        if score >= floor {
                            passed += 1;
                            let layout = RowLayout { s, t: t.clone(), tp: Some(tp.clone()), target: None };
                            let sel = assemble(&memo.cand, &layout, &gt, Some(&gtp), ai, score);
                            if let ControlFlow::Break(r) = visit(sel) {
                                return Ok(Some(r));
                            }
                        }
                    }
                }
            }
        }
        Strategy::Sequential => {
            for target in 0..n {
                for t in combos_avoiding(n, km, &[target]) {
                    let mut avoid = t.clone();
                    avoid.push(target);
                    for s in viable(&mut memo, &t, &combos_avoiding(n, km, &avoid))? {
                        let gt = memo.get(&s, &t);
                        let (ai, score) = best_a(&gt, None);
                        passed += 1;
                        let layout = RowLayout { s, t: t.clone(), tp: None, target: Some(target) };
                        let sel = assemble(&memo.cand, &layout, &gt, None, ai, score);
                        if let ControlFlow::Break(r) = visit(sel) {
                            return Ok(Some(r));
                        }
                    }
                }
            }
        }
    }
    if passed == 0 {
        Err(Error::Exhausted)
    } else {
        Ok(None)
    }
}

/// First passing selection in search order.
pub fn search_triples(
    oracle: &MomentOracle,
    k: usize,
    strategy: Strategy,
    mode: SearchMode,
    threshold: f64,
) -> Result<FamilySelection> {
    for_each_selection(oracle, k, strategy, mode, threshold, ControlFlow::Break)?.ok_or(Error::Exhausted)
}

/// Columns chosen by [`fos_column_select`] and the guarantee they meet.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColumnSelection {
    pub columns: Vec<usize>,
    pub sigma_k: f64,
    pub input_sigma_k: f64,
    pub bound: f64,
}

const BRUTE_FORCE_COLUMNS: usize = 20;
const BRUTE_FORCE_FALLBACK: usize = 2_000_000;

fn sigma_k_of_columns(m: &DMatrix<f64>, cols: &[usize], k: usize) -> f64 {
    let sub = m.select_columns(cols);
    linalg::singular_values(&sub).get(k - 1).copied().unwrap_or(0.0)
}

fn brute_force_columns(m: &DMatrix<f64>, k: usize) -> (Vec<usize>, f64) {
    (0..m.ncols())
        .combinations(k)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|cols| {
            let s = sigma_k_of_columns(m, &cols, k);
            (cols, s)
        })
        .reduce_with(|a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a })
        .expect("at least one combination")
}

/// Greedy pivoted Gram–Schmidt, then single swaps while σ_k improves.
fn greedy_columns(m: &DMatrix<f64>, k: usize) -> (Vec<usize>, f64) {
    let mut residual = m.clone();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let (best, _) = (0..residual.ncols())
            .filter(|c| !chosen.contains(c))
            .map(|c| (c, residual.column(c).norm()))
            .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        chosen.push(best);
        let q = residual.column(best).normalize();
        if q.iter().all(|v| v.is_finite()) {
            for c in 0..residual.ncols() {
                let proj = q.dot(&residual.column(c));
                let update = &q * proj;
                residual.column_mut(c).axpy(-1.0, &update, 1.0);
            }
        }
    }
    chosen.sort_unstable();
    let mut best = sigma_k_of_columns(m, &chosen, k);
    let mut improved = true;
    let mut rounds = 0;
    while improved && rounds < 100 {
        improved = false;
        rounds += 1;
        for slot in 0..k {
            for c in 0..m.ncols() {
                if chosen.contains(&c) {
                    continue;
                }
                let mut trial = chosen.clone();
                trial[slot] = c;
                let s = sigma_k_of_columns(m, &trial, k);
                if s > best * (1.0 + 1e-12) {
                    best = s;
                    chosen = trial;
                    improved = true;
                }
            }
        }
    }
    chosen.sort_unstable();
    (chosen, best)
}

/// Picks k columns of an r×c matrix (r ≥ k, c ≥ k) whose submatrix keeps
/// σ_k at least σ_k(input)/√(k(c−k)+1). Brute force for c ≤ 20; otherwise
/// greedy with swaps, checked afterwards and falling back to brute force
/// when the combination count allows.
pub fn fos_column_select(matrix: &DMatrix<f64>, k: usize) -> Result<ColumnSelection> {
    let (r, c) = matrix.shape();
    if k == 0 || r < k || c < k {
        return Err(Error::DimensionMismatch(format!("cannot choose {k} columns of a {r}x{c} matrix")));
    }
    let input_sigma_k = linalg::singular_values(matrix)[k - 1];
    if !(input_sigma_k > 0.0) {
        return Err(Error::Precondition("input has sigma_k = 0".into()));
    }
    let bound = input_sigma_k / ((k * (c - k) + 1) as f64).sqrt();
    let (columns, sigma_k) = if c <= BRUTE_FORCE_COLUMNS {
        brute_force_columns(matrix, k)
    } else {
        let greedy = greedy_columns(matrix, k);
        if greedy.1 >= bound {
            greedy
        } else if binomial(c, k) <= BRUTE_FORCE_FALLBACK {
            brute_force_columns(matrix, k)
        } else {
            return Err(Error::CheckFailed { achieved: greedy.1, required: bound });
        }
    };
    if sigma_k < bound {
        return Err(Error::CheckFailed { achieved: sigma_k, required: bound });
    }
    Ok(ColumnSelection { columns, sigma_k, input_sigma_k, bound })
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}
