//! Numerical checks of the separation-based singular value bounds, the
//! matrix-inverse perturbation bound, Vandermonde conditioning and the
//! Lagrange coefficient norm, plus seeded Monte-Carlo sweeps over them.

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{random_model, SeparatedRows, Subset, SEPARATION_TOL};
use crate::subsets::fos_column_select;

fn check_domain(zeta: f64, k: usize) -> Result<()> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::Domain(format!("zeta = {zeta} outside (0, 1]")));
    }
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    Ok(())
}

/// β = (ζ/2)^{k−1} / (3k³).
pub fn beta(zeta: f64, k: usize) -> Result<f64> {
    check_domain(zeta, k)?;
    Ok((zeta / 2.0).powi(k as i32 - 1) / (3.0 * (k as f64).powi(3)))
}

/// The k² variant, (ζ/2)^{k−1} / (3k²), reported alongside [`beta`].
pub fn beta_k2(zeta: f64, k: usize) -> Result<f64> {
    check_domain(zeta, k)?;
    Ok((zeta / 2.0).powi(k as i32 - 1) / (3.0 * (k as f64).powi(2)))
}

/// Monomial coefficients p_0..p_{k−1} of the Lagrange basis polynomial
/// that is 1 at `v[i]` and 0 at the other nodes.
pub fn lagrange_coefficients(v: &[f64], i: usize) -> Result<Vec<f64>> {
    if i >= v.len() {
        return Err(Error::IndexOutOfRange { index: i, n: v.len() });
    }
    if linalg::min_gap(v) == 0.0 {
        return Err(Error::DuplicateEntries);
    }
    let mut coeffs = vec![1.0];
    let mut denom = 1.0;
    for (j, &vj) in v.iter().enumerate() {
        if j == i {
            continue;
        }
        // multiply by (x − v_j)
        let mut next = vec![0.0; coeffs.len() + 1];
        for (d, c) in coeffs.iter().enumerate() {
            next[d + 1] += c;
            next[d] -= vj * c;
        }
        coeffs = next;
        denom *= v[i] - vj;
    }
    Ok(coeffs.into_iter().map(|c| c / denom).collect())
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LagrangeNorm {
    /// Σ_j j·|p_j|.
    pub norm: f64,
    /// (k−1)(2/ζ)^{k−1} with ζ the minimum gap of the nodes.
    pub bound: f64,
    /// max_j |p(v_j) − δ_ij|.
    pub interpolation_error: f64,
}

pub fn lagrange_coeff_norm(v: &[f64], i: usize) -> Result<LagrangeNorm> {
    let coeffs = lagrange_coefficients(v, i)?;
    let norm = coeffs.iter().enumerate().map(|(j, c)| j as f64 * c.abs()).sum();
    let k = v.len();
    let zeta = linalg::min_gap(v);
    let bound = if k == 1 { 0.0 } else { (k - 1) as f64 * (2.0 / zeta).powi(k as i32 - 1) };
    let interpolation_error = v
        .iter()
        .enumerate()
        .map(|(j, &x)| (horner(&coeffs, x) - if j == i { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    Ok(LagrangeNorm { norm, bound, interpolation_error })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub k: usize,
    pub zeta: f64,
    pub beta: f64,
    pub beta_k2: f64,
    pub sigma_k_observed: f64,
    pub sigma_k_bound: f64,
    pub sigma_max_observed: f64,
    pub sigma_max_bound: f64,
    /// σ_k of the best k-row submatrix of M[2^S] that keeps the all-ones row.
    pub submatrix_sigma_k: f64,
    pub submatrix_bound: f64,
    pub submatrix_rows: Vec<Subset>,
    pub sigma_k_pass: bool,
    pub sigma_max_pass: bool,
    pub submatrix_pass: bool,
}

impl StabilityReport {
    pub fn pass(&self) -> bool {
        self.sigma_k_pass && self.sigma_max_pass && self.submatrix_pass
    }
}

/// The 2^{k−1}×k matrix M[2^S] for rows indexed 0..k−2, power set in
/// lexicographic order (first row is the empty set).
pub fn power_set_matrix(rows: &[Vec<f64>], k: usize) -> (Vec<Subset>, DMatrix<f64>) {
    let idx: Vec<usize> = (0..rows.len()).collect();
    let sets = Subset::power_set(&idx);
    let m = DMatrix::from_fn(sets.len(), k, |r, j| sets[r].iter().map(|i| rows[i][j]).product());
    (sets, m)
}

/// Checks σ_k(M[2^S]) ≥ β^k 2^{−k}/k, σ_max(M[2^S]) ≤ k·2^{k−1}, and that
/// some k rows including 𝟙 reach σ_k ≥ β^k 2^{−3k/2} k^{−3/2}, for k−1
/// ζ-separated rows of length k.
pub fn verify_core_stability(rows: &[Vec<f64>], zeta: f64) -> Result<StabilityReport> {
    let k = rows.len() + 1;
    let b = beta(zeta, k)?;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(Error::DimensionMismatch(format!("row {i} has {} entries, expected {k}", row.len())));
        }
        if linalg::min_gap(row) < zeta - SEPARATION_TOL {
            return Err(Error::Precondition(format!("row {i} is not {zeta}-separated")));
        }
    }
    let kf = k as f64;
    let (sets, m) = power_set_matrix(rows, k);
    let (sigma_k_observed, sigma_max_observed) = linalg::extreme_singular_values(&m);
    let sigma_k_bound = b.powi(k as i32) * 2f64.powi(-(k as i32)) / kf;
    let sigma_max_bound = kf * 2f64.powi(k as i32 - 1);

    let (best_rows, submatrix_sigma_k) = (1..sets.len())
        .combinations(k - 1)
        .map(|c| {
            let rows: Vec<usize> = std::iter::once(0).chain(c).collect();
            let s = linalg::sigma_min(&m.select_rows(&rows));
            (rows, s)
        })
        .fold((vec![0], f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let submatrix_bound = b.powi(k as i32) * 2f64.powf(-1.5 * kf) * kf.powf(-1.5);

    Ok(StabilityReport {
        k,
        zeta,
        beta: b,
        beta_k2: beta_k2(zeta, k)?,
        sigma_k_observed,
        sigma_k_bound,
        sigma_max_observed,
        sigma_max_bound,
        submatrix_sigma_k,
        submatrix_bound,
        submatrix_rows: best_rows.iter().map(|&r| sets[r].clone()).collect(),
        sigma_k_pass: sigma_k_observed >= sigma_k_bound,
        sigma_max_pass: sigma_max_observed <= sigma_max_bound * (1.0 + 1e-12),
        submatrix_pass: submatrix_sigma_k >= submatrix_bound,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationCheck {
    pub error_norm: f64,
    pub sigma_min: f64,
    /// ‖M̃ − M‖ ≤ σ_min(M)/2.
    pub hypothesis_holds: bool,
    pub diff_norm: f64,
    pub diff_bound: f64,
    pub inverse_norm: f64,
    pub inverse_bound: f64,
    /// `None` when the hypothesis fails and the bounds do not apply.
    pub pass: Option<bool>,
}

/// Checks ‖M̃^{−1} − M^{−1}‖ ≤ 2‖M^{−1}‖²‖M̃ − M‖ and ‖M̃^{−1}‖ ≤ 2‖M^{−1}‖.
pub fn inverse_perturbation_check(m: &DMatrix<f64>, mt: &DMatrix<f64>) -> Result<PerturbationCheck> {
    if !m.is_square() || m.shape() != mt.shape() {
        return Err(Error::DimensionMismatch("need two square matrices of the same size".into()));
    }
    let e = mt - m;
    let error_norm = linalg::operator_norm(&e);
    let sigma_min = linalg::sigma_min(m);
    let inv = m.clone().try_inverse().ok_or_else(|| Error::Domain("M is singular".into()))?;
    let inv_norm = linalg::operator_norm(&inv);
    let hypothesis_holds = error_norm <= sigma_min / 2.0;
    let diff_bound = 2.0 * inv_norm * inv_norm * error_norm;
    let inverse_bound = 2.0 * inv_norm;
    let (diff_norm, inverse_norm) = match mt.clone().try_inverse() {
        Some(inv_t) => (linalg::operator_norm(&(&inv_t - &inv)), linalg::operator_norm(&inv_t)),
        None => (f64::INFINITY, f64::INFINITY),
    };
    let slack = 1.0 + 1e-10;
    let pass = hypothesis_holds.then(|| diff_norm <= diff_bound * slack && inverse_norm <= inverse_bound * slack);
    Ok(PerturbationCheck {
        error_norm,
        sigma_min,
        hypothesis_holds,
        diff_norm,
        diff_bound,
        inverse_norm,
        inverse_bound,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VandermondeCheck {
    pub norm: f64,
    pub zeta: f64,
    /// 2^k / ζ^{k−1}.
    pub bound: f64,
    pub pass: bool,
}

/// Operator norm of the inverse Vandermonde matrix (rows m^{⊙0}..m^{⊙(k−1)}).
pub fn vandermonde_inverse_norm(m: &[f64]) -> Result<VandermondeCheck> {
    let k = m.len();
    if k == 0 {
        return Err(Error::DimensionMismatch("empty node vector".into()));
    }
    let zeta = linalg::min_gap(m);
    if zeta == 0.0 {
        return Err(Error::DuplicateEntries);
    }
    let inv = linalg::vandermonde(m).try_inverse().ok_or(Error::DuplicateEntries)?;
    let norm = linalg::operator_norm(&inv);
    let bound = if k == 1 { 2.0 } else { 2f64.powi(k as i32) / zeta.powi(k as i32 - 1) };
    Ok(VandermondeCheck { norm, zeta, bound, pass: norm <= bound * (1.0 + 1e-12) })
}

/// Monte-Carlo sweep settings; instance `i` of a check uses a seed derived
/// from `seed` and `i`, so results are independent of scheduling.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepConfig {
    pub instances: usize,
    pub zeta: f64,
    /// Largest k for the core-stability and FOS checks.
    pub k_max_core: usize,
    /// Largest k for the Vandermonde and Lagrange checks.
    pub k_max_nodes: usize,
    /// Largest dimension for the inverse-perturbation check.
    pub dim_max: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { instances: 1000, zeta: 0.2, k_max_core: 4, k_max_nodes: 5, dim_max: 6, seed: 0 }
    }
}

/// Tally for one bound. `worst_margin` is the smallest observed/bound ratio
/// for lower bounds (bound/observed for upper bounds); ≥ 1 means no violation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub instances: usize,
    pub violations: usize,
    pub skipped: usize,
    pub worst_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub beta: Vec<(usize, f64)>,
    pub beta_k2: Vec<(usize, f64)>,
    pub checks: Vec<CheckSummary>,
}

impl SweepReport {
    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }

    pub fn check(&self, name: &str) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn instance_rng(seed: u64, check: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(check);
    rng.set_word_pos((i as u128) << 8);
    ChaCha8Rng::seed_from_u64(rng.random())
}

fn separated_vectors(rng: &mut ChaCha8Rng, k: usize, count: usize, zeta: f64) -> Vec<Vec<f64>> {
    if count == 0 {
        return Vec::new();
    }
    random_model(k, count, zeta, 0.0, SeparatedRows::All, rng.random())
        .expect("zeta feasible for k")
        .rows()
        .to_vec()
}

/// Tallies a check where each instance returns Some(margin) or None (skip).
fn tally(name: &str, margins: Vec<Option<f64>>) -> CheckSummary {
    let instances = margins.len();
    let skipped = margins.iter().filter(|m| m.is_none()).count();
    let present: Vec<f64> = margins.into_iter().flatten().collect();
    CheckSummary {
        name: name.to_string(),
        instances,
        violations: present.iter().filter(|&&m| !(m >= 1.0)).count(),
        skipped,
        worst_margin: present.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, d, d).qr().q()
}

/// Runs every check over `config.instances` seeded instances each.
pub fn stability_sweep(config: &SweepConfig) -> Result<SweepReport> {
    let SweepConfig { instances, zeta, k_max_core, k_max_nodes, dim_max, seed } = *config;
    if k_max_core == 0 || k_max_nodes == 0 || dim_max == 0 {
        return Err(Error::Domain("sweep sizes must be at least 1".into()));
    }
    for k in 2..=k_max_core.max(k_max_nodes) {
        if zeta > 1.0 / (k - 1) as f64 {
            return Err(Error::Domain(format!("zeta = {zeta} cannot separate k = {k} values")));
        }
    }
    let pick_k = |rng: &mut ChaCha8Rng, max: usize| rng.random_range(1..=max);

    let core: Vec<Result<StabilityReport>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 1, i);
            let k = pick_k(&mut rng, k_max_core);
            verify_core_stability(&separated_vectors(&mut rng, k, k - 1, zeta), zeta)
        })
        .collect();
    let core: Vec<StabilityReport> = core.into_iter().collect::<Result<_>>()?;

    let fos: Vec<Option<f64>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 2, i);
            let k = pick_k(&mut rng, k_max_core);
            let rows = separated_vectors(&mut rng, k, k - 1, zeta);
            let (_, m) = power_set_matrix(&rows, k);
            fos_column_select(&m.transpose(), k).ok().map(|sel| sel.sigma_k / sel.bound)
        })
        .collect();

    let perturbation: Vec<Option<f64>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 3, i);
            let d = pick_k(&mut rng, dim_max);
            let sigma_min = 10f64.powf(rng.random_range(-3.0..0.0));
            let mut s: Vec<f64> = (0..d).map(|_| sigma_min * 10f64.powf(rng.random_range(0.0..3.0))).collect();
            s[0] = sigma_min;
            let m = random_orthogonal(&mut rng, d)
                * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s))
                * random_orthogonal(&mut rng, d).transpose();
            let e = gaussian_matrix(&mut rng, d, d);
            let e = &e * (sigma_min / 4.0 / linalg::operator_norm(&e));
            let check = inverse_perturbation_check(&m, &(&m + e)).ok()?;
            check.pass?;
            Some((check.diff_bound / check.diff_norm).min(check.inverse_bound / check.inverse_norm))
        })
        .collect();

    let nodes: Vec<(Option<f64>, Option<f64>)> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = instance_rng(seed, 4, i);
            let k = pick_k(&mut rng, k_max_nodes);
            let v = separated_vectors(&mut rng, k, 1, zeta).pop().expect("one row");
            let vdm = vandermonde_inverse_norm(&v).ok().map(|c| c.bound / c.norm);
            let lag = if k == 1 {
                None
            } else {
                let j = rng.random_range(0..k);
                lagrange_coeff_norm(&v, j).ok().map(|l| {
                    if l.interpolation_error > 1e-9 {
                        0.0
                    } else {
                        l.bound / l.norm.max(f64::MIN_POSITIVE)
                    }
                })
            };
            (vdm, lag)
        })
        .collect();

    let ratio = |num: fn(&StabilityReport) -> f64, den: fn(&StabilityReport) -> f64| -> Vec<Option<f64>> {
        core.iter().map(|r| Some(num(r) / den(r))).collect()
    };
    let checks = vec![
        tally("core_sigma_k", ratio(|r| r.sigma_k_observed, |r| r.sigma_k_bound)),
        tally("core_sigma_max", ratio(|r| r.sigma_max_bound, |r| r.sigma_max_observed)),
        tally("core_submatrix", ratio(|r| r.submatrix_sigma_k, |r| r.submatrix_bound)),
        tally("fos_column_select", fos),
        tally("inverse_perturbation", perturbation),
        tally("vandermonde_inverse", nodes.iter().map(|n| n.0).collect()),
        tally("lagrange_coeff_norm", nodes.iter().map(|n| n.1).collect()),
    ];
    let kmax = k_max_core.max(k_max_nodes);
    Ok(SweepReport {
        config: config.clone(),
        beta: (1..=kmax).map(|k| Ok((k, beta(zeta, k)?))).collect::<Result<_>>()?,
        beta_k2: (1..=kmax).map(|k| Ok((k, beta_k2(zeta, k)?))).collect::<Result<_>>()?,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn beta_examples() {
        assert!((beta(0.7, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((beta(0.2, 3).unwrap() - 0.01 / 81.0).abs() < 1e-18);
        assert!((beta(0.5, 2).unwrap() - 0.25 / 24.0).abs() < 1e-15);
        assert!((beta_k2(1.0, 2).unwrap() - 1.0 / 24.0).abs() < 1e-15);
        assert!(beta(0.0, 2).is_err());
        assert!(beta(1.5, 2).is_err());
        assert!(beta(0.5, 0).is_err());
    }

    #[test]
    fn beta_dominance_fails_near_one_half() {
        // (0.5, 2): β = 1/96 while ζ^{3k} = 1/64
        let b = beta(0.5, 2).unwrap();
        assert!(b < 0.5f64.powi(6));
    }

    #[test]
    fn lagrange_examples() {
        let x = lagrange_coeff_norm(&[0.0, 1.0], 1).unwrap();
        assert!((x.norm - 1.0).abs() < 1e-15);
        let one_minus_x = lagrange_coeff_norm(&[0.0, 1.0], 0).unwrap();
        assert!((one_minus_x.norm - 1.0).abs() < 1e-15);
        assert_eq!(lagrange_coefficients(&[0.0, 1.0], 0).unwrap(), vec![1.0, -1.0]);
        assert!(matches!(lagrange_coeff_norm(&[0.3, 0.3], 0), Err(Error::DuplicateEntries)));
    }

    #[test]
    fn core_stability_examples() {
        let r = verify_core_stability(&[], 0.5).unwrap();
        assert_eq!(r.k, 1);
        assert!((r.sigma_k_observed - 1.0).abs() < 1e-15);
        assert!(r.pass());

        let r = verify_core_stability(&[vec![0.0, 1.0]], 1.0).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((r.sigma_k_observed - 1.0 / phi).abs() < 1e-12);
        // either β variant clears the bound with room to spare
        let b_k2: f64 = 1.0 / 24.0;
        assert!(r.sigma_k_observed >= b_k2.powi(2) / 4.0 / 2.0);
        assert!(r.pass());
        assert_eq!(r.submatrix_rows[0], Subset::empty());

        assert!(verify_core_stability(&[vec![0.3, 0.35]], 0.2).is_err());
    }

    #[test]
    fn perturbation_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        let c = inverse_perturbation_check(&i, &(&i * 1.1)).unwrap();
        assert!((c.diff_norm - 0.1 / 1.1).abs() < 1e-12);
        assert!(c.diff_norm <= 0.2);
        assert_eq!(c.pass, Some(true));
        let same = inverse_perturbation_check(&i, &i).unwrap();
        assert_eq!(same.diff_norm, 0.0);
        assert_eq!(same.pass, Some(true));
        let big = inverse_perturbation_check(&i, &(&i * 3.0)).unwrap();
        assert!(!big.hypothesis_holds);
        assert_eq!(big.pass, None);
    }

    #[test]
    fn vandermonde_examples() {
        let c = vandermonde_inverse_norm(&[0.0, 1.0]).unwrap();
        assert!((c.norm - ((3.0 + 5f64.sqrt()) / 2.0).sqrt()).abs() < 1e-12);
        assert!(c.pass && c.bound == 4.0);
        let one = vandermonde_inverse_norm(&[0.4]).unwrap();
        assert!((one.norm - 1.0).abs() < 1e-15 && one.bound == 2.0);
        assert!(vandermonde_inverse_norm(&[0.2, 0.2]).is_err());
    }

    #[test]
    fn small_sweep_is_clean_and_deterministic() {
        let config = SweepConfig { instances: 60, ..SweepConfig::default() };
        let a = stability_sweep(&config).unwrap();
        let b = stability_sweep(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_violations(), 0, "{:#?}", a.checks);
    }

    proptest! {
        #[test]
        fn beta_dominates_for_small_zeta(zeta in 0.001f64..=0.4, k in 1usize..=6) {
            prop_assert!(beta(zeta, k).unwrap() >= zeta.powi(3 * k as i32));
        }

        #[test]
        fn interpolation_identity(seed in any::<u64>(), k in 2usize..=5, i in 0usize..5) {
            let zeta = 0.2;
            let v = random_model(k, 1, zeta, 0.0, SeparatedRows::All, seed).unwrap().rows()[0].clone();
            let l = lagrange_coeff_norm(&v, i % k).unwrap();
            prop_assert!(l.interpolation_error <= 1e-9);
            prop_assert!(l.norm <= (k - 1) as f64 * (2.0 / zeta).powi(k as i32 - 1));
        }
    }
}
