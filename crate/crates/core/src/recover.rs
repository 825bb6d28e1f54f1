//! From the recovered target row and weights to the full model: Ã, B̃, B̃',
//! every remaining row, and the end-to-end `identify` pipeline.

use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::bootstrap::{
    assemble_hankel, bootstrap_doubling, bootstrap_sequential, hankel_gate, BootstrapState, HankelGate,
};
use crate::error::{Error, Result, Stage};
use crate::linalg;
use crate::model::{MixtureModel, Subset};
use crate::moments::MomentOracle;
use crate::power::{learn_power_distribution, PowerSolution};
use crate::subsets::{for_each_selection, selection_threshold, FamilySelection, SearchMode, Strategy, SubsetFamily};

/// Nodes closer than this make the Vandermonde system singular.
pub const VANDERMONDE_GAP_FLOOR: f64 = 1e-10;

/// Ãᵀ = diag(π̃)^{−1} Vand(m̃)^{−1} Ṽ, with Ṽ stacking ṽ_0..ṽ_{k−1} and
/// Vand having rows m̃^{⊙0}..m̃^{⊙(k−1)}. Rows of the result are
/// components, columns are the members of A.
pub fn recover_a(v: &[Vec<f64>], m1: &[f64], pi: &[f64]) -> Result<DMatrix<f64>> {
    let k = m1.len();
    if pi.len() != k || v.len() < k || v.iter().take(k).any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch("recover_a needs k vectors of length k".into()));
    }
    if let Some((index, &value)) = pi.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(Error::ZeroWeight { index, value });
    }
    let gap = if k == 1 { f64::INFINITY } else { linalg::min_gap(m1) };
    if gap < VANDERMONDE_GAP_FLOOR {
        return Err(Error::SingularVandermonde { gap });
    }
    let vt = linalg::from_rows(&v[..k]);
    let x = linalg::vandermonde(m1).lu().solve(&vt).ok_or(Error::SingularVandermonde { gap })?;
    let at = DMatrix::from_fn(k, k, |j, i| x[(j, i)] / pi[j]);
    if at.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularVandermonde { gap });
    }
    Ok(at)
}

/// B̃ = C̃_BA (Ãᵀ)^{−1} diag(π̃)^{−1}; rows are members of B, columns components.
pub fn recover_b(c: &DMatrix<f64>, a_t: &DMatrix<f64>, pi: &[f64]) -> Result<DMatrix<f64>> {
    let k = pi.len();
    if c.ncols() != k || a_t.shape() != (k, k) {
        return Err(Error::DimensionMismatch("recover_b needs k×k inputs".into()));
    }
    if let Some((index, &value)) = pi.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(Error::ZeroWeight { index, value });
    }
    // X Ãᵀ = C  ⇔  Ã Xᵀ = Cᵀ
    let xt = a_t.transpose().lu().solve(&c.transpose()).ok_or(Error::SingularA)?;
    let b = DMatrix::from_fn(c.nrows(), k, |l, j| xt[(j, l)] / pi[j]);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularA);
    }
    Ok(b)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowRecovery {
    /// Clamped to [0, 1].
    pub row: Vec<f64>,
    pub raw: Vec<f64>,
}

impl RowRecovery {
    pub fn clamp_amount(&self) -> f64 {
        self.row.iter().zip(&self.raw).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// m̃_i = e (F̃ᵀ)^{−1} diag(π̃)^{−1} with e_ℓ = oracle(F_ℓ ∪ {i}).
pub fn recover_row(
    oracle: &MomentOracle,
    i: usize,
    family: &SubsetFamily,
    f: &DMatrix<f64>,
    pi: &[f64],
) -> Result<RowRecovery> {
    if family.ground().contains(&i) {
        return Err(Error::GroundOverlap(format!("row {i} lies in the family's ground set")));
    }
    let k = pi.len();
    if f.shape() != (family.len(), k) || family.len() != k {
        return Err(Error::DimensionMismatch("family matrix must be k×k".into()));
    }
    if let Some((index, &value)) = pi.iter().enumerate().find(|(_, p)| !(**p > 0.0)) {
        return Err(Error::ZeroWeight { index, value });
    }
    let unions: Vec<Subset> = family.members().iter().map(|s| s.with(i)).collect();
    let e = oracle.moment_table(&unions)?;
    // x Fᵀ = e  ⇔  F xᵀ = eᵀ
    let x = linalg::solve_col(f, &e).ok_or(Error::SingularFamilyMatrix)?;
    let raw: Vec<f64> = x.iter().zip(pi).map(|(xj, p)| xj / p).collect();
    let row = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(RowRecovery { row, raw })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentifyOptions {
    pub strategy: Strategy,
    pub search: SearchMode,
    /// c in the selection threshold π_min ζ^{c k²}.
    pub threshold_exponent: f64,
    /// Overrides the selection threshold when set.
    pub threshold: Option<f64>,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            strategy: Strategy::Doubling,
            search: SearchMode::AllSeparated,
            threshold_exponent: 10.0,
            threshold: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub search_ms: f64,
    pub bootstrap_ms: f64,
    pub power_ms: f64,
    pub recover_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub strategy: Strategy,
    pub search: SearchMode,
    pub selection: FamilySelection,
    pub selection_threshold: f64,
    pub hankel: HankelGate,
    pub hankel_eigenvalues: Vec<f64>,
    pub power_residual: f64,
    pub power_base_sigma_k: f64,
    pub sigma_k_ba: f64,
    pub sigma_k_bpa: Option<f64>,
    pub vandermonde_condition: f64,
    pub a_condition: f64,
    /// Largest distance any recovered entry moved when clamped into [0, 1].
    pub max_clamp: f64,
    /// Whether π̃ needed the π_min/2 floor.
    pub weight_floor_applied: bool,
    /// Row triples that passed selection before one succeeded.
    pub triples_tried: usize,
    /// Wall-clock stage times; not deterministic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

/// The identified model with its diagnostics. Serializes as the model
/// format plus a `diagnostics` object.
#[derive(Clone, Debug, Serialize)]
pub struct RecoveredModel {
    #[serde(flatten)]
    pub model: MixtureModel,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub bootstrap: BootstrapState,
}

impl RecoveredModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(self)?)
    }

    /// Drops wall-clock data so the output is reproducible.
    pub fn without_timings(mut self) -> Self {
        self.diagnostics.timings = None;
        self
    }
}

/// Identification failure; `stage()` names the step that rejected it.
#[derive(Debug)]
pub struct Failure {
    pub error: Error,
    pub triples_tried: usize,
}

impl Failure {
    pub fn stage(&self) -> Option<Stage> {
        self.error.stage()
    }
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = linalg::extreme_singular_values(m);
    hi / lo
}

struct Attempt {
    model: MixtureModel,
    state: BootstrapState,
    gate: HankelGate,
    eigenvalues: Vec<f64>,
    power: PowerSolution,
    vandermonde_condition: f64,
    a_condition: f64,
    max_clamp: f64,
    weight_floor_applied: bool,
    bootstrap_time: Duration,
    power_time: Duration,
    recover_time: Duration,
}

/// Bootstrap, gate, spike recovery and linear solves for one selection.
fn attempt(oracle: &MomentOracle, sel: &FamilySelection, zeta: f64, pi_min: f64) -> Result<Attempt> {
    let n = oracle.n();
    let clock = Instant::now();
    let a_fam = sel.family_a()?;
    let b_fam = sel.family_b()?;
    let bp_fam = sel.family_bp()?;
    let state = match &bp_fam {
        Some(bp) => bootstrap_doubling(oracle, &a_fam, &b_fam, bp, sel.target_bit)?,
        None => bootstrap_sequential(oracle, &a_fam, &b_fam, sel.target_bit)?,
    };
    let bootstrap_time = clock.elapsed();

    let clock = Instant::now();
    let h = assemble_hankel(&state)?;
    let gate = hankel_gate(&h, pi_min, zeta);
    if !gate.pass {
        return Err(Error::HankelGate { lambda2: gate.lambda2, threshold: gate.threshold });
    }
    let power = learn_power_distribution(&h)?;
    let power_time = clock.elapsed();

    let clock = Instant::now();
    let m1 = power.distribution.support().to_vec();
    let floor = pi_min / 2.0;
    let weight_floor_applied = power.distribution.weights().iter().any(|&w| w < floor);
    let pi: Vec<f64> = power.distribution.weights().iter().map(|&w| w.max(floor)).collect();

    let a_t = recover_a(&state.v, &m1, &pi)?;
    let b = recover_b(&state.c_ba, &a_t, &pi)?;
    let a_mat = a_t.transpose();

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut max_clamp: f64 = 0.0;
    for i in 0..n {
        if i == sel.target_bit {
            rows.push(m1.clone());
            continue;
        }
        let rec = if a_fam.ground().contains(&i) {
            recover_row(oracle, i, &b_fam, &b, &pi)?
        } else {
            recover_row(oracle, i, &a_fam, &a_mat, &pi)?
        };
        max_clamp = max_clamp.max(rec.clamp_amount());
        rows.push(rec.row);
    }
    let total: f64 = pi.iter().sum();
    let pi_out: Vec<f64> = pi.iter().map(|p| p / total).collect();
    let model = MixtureModel::new(pi_out, rows)?;
    let recover_time = clock.elapsed();

    Ok(Attempt {
        model,
        eigenvalues: h.eigenvalues.clone(),
        state,
        gate,
        vandermonde_condition: condition(&linalg::vandermonde(&m1)),
        a_condition: condition(&a_mat),
        power,
        max_clamp,
        weight_floor_applied,
        bootstrap_time,
        power_time,
        recover_time,
    })
}

fn finish(
    att: Attempt,
    sel: FamilySelection,
    options: &IdentifyOptions,
    threshold: f64,
    triples_tried: usize,
    search_time: Duration,
) -> RecoveredModel {
    let timings = StageTimings {
        search_ms: ms(search_time),
        bootstrap_ms: ms(att.bootstrap_time),
        power_ms: ms(att.power_time),
        recover_ms: ms(att.recover_time),
    };
    RecoveredModel {
        model: att.model,
        diagnostics: Diagnostics {
            strategy: sel.strategy(),
            search: options.search,
            selection_threshold: threshold,
            hankel: att.gate,
            hankel_eigenvalues: att.eigenvalues,
            power_residual: att.power.residual,
            power_base_sigma_k: att.power.base_sigma_k,
            sigma_k_ba: att.state.sigma_k_ba,
            sigma_k_bpa: att.state.sigma_k_bpa,
            vandermonde_condition: att.vandermonde_condition,
            a_condition: att.a_condition,
            max_clamp: att.max_clamp,
            weight_floor_applied: att.weight_floor_applied,
            triples_tried,
            timings: Some(timings),
            selection: sel,
        },
        bootstrap: att.state,
    }
}

fn check_inputs(oracle: &MomentOracle, k: usize, zeta: f64, pi_min: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::Domain(format!("zeta must lie in (0, 1], got {zeta}")));
    }
    if !(pi_min > 0.0 && pi_min * k as f64 <= 1.0 + 1e-12) {
        return Err(Error::Domain(format!("pi_min must lie in (0, 1/k], got {pi_min}")));
    }
    if oracle.n() == 0 {
        return Err(Error::Precondition("no rows".into()));
    }
    Ok(())
}

/// The selection threshold `identify` uses for these options.
pub fn effective_threshold(options: &IdentifyOptions, k: usize, zeta: f64, pi_min: f64) -> f64 {
    options
        .threshold
        .unwrap_or_else(|| selection_threshold(pi_min, zeta, k, options.threshold_exponent))
}

/// Learns a k-component model from the oracle. In exhaustive search a
/// selection that fails downstream (Hankel gate, spike recovery, linear
/// solves) moves the search on to the next passing selection; the first
/// such failure is reported if none succeeds.
pub fn identify(
    oracle: &MomentOracle,
    k: usize,
    zeta: f64,
    pi_min: f64,
    options: &IdentifyOptions,
) -> std::result::Result<RecoveredModel, Failure> {
    check_inputs(oracle, k, zeta, pi_min).map_err(|error| Failure { error, triples_tried: 0 })?;
    let threshold = effective_threshold(options, k, zeta, pi_min);
    let exhaustive = options.search == SearchMode::Exhaustive;
    let mut tried = 0usize;
    let mut first_error: Option<Error> = None;
    let mut clock = Instant::now();
    let outcome = for_each_selection(oracle, k, options.strategy, options.search, threshold, |sel| {
        tried += 1;
        let search_time = clock.elapsed();
        match attempt(oracle, &sel, zeta, pi_min) {
            Ok(att) => ControlFlow::Break(Ok(finish(att, sel, options, threshold, tried, search_time))),
            Err(e) => {
                if !exhaustive {
                    return ControlFlow::Break(Err(e));
                }
                first_error.get_or_insert(e);
                clock = Instant::now();
                ControlFlow::Continue(())
            }
        }
    });
    match outcome {
        Ok(Some(Ok(model))) => Ok(model),
        Ok(Some(Err(error))) => Err(Failure { error, triples_tried: tried }),
        Ok(None) => Err(Failure { error: first_error.unwrap_or(Error::Exhausted), triples_tried: tried }),
        Err(Error::Exhausted) if first_error.is_some() => {
            Err(Failure { error: first_error.unwrap(), triples_tried: tried })
        }
        Err(error) => Err(Failure { error, triples_tried: tried }),
    }
}

/// Runs the pipeline on a fixed selection, skipping the search.
pub fn identify_with_selection(
    oracle: &MomentOracle,
    selection: FamilySelection,
    zeta: f64,
    pi_min: f64,
) -> std::result::Result<RecoveredModel, Failure> {
    let k = selection.a.len();
    let fail = |error| Failure { error, triples_tried: 1 };
    check_inputs(oracle, k, zeta, pi_min).map_err(|e| Failure { error: e, triples_tried: 0 })?;
    selection.validate(oracle.n(), k).map_err(fail)?;
    let options = IdentifyOptions {
        strategy: selection.strategy(),
        search: SearchMode::AllSeparated,
        threshold_exponent: 0.0,
        threshold: Some(selection.score),
    };
    let att = attempt(oracle, &selection, zeta, pi_min).map_err(fail)?;
    let score = selection.score;
    Ok(finish(att, selection, &options, score, 1, Duration::ZERO))
}
