//! Synthetic-bit bootstrapping: the moment vectors ṽ_r ≈ m^{⊙r} diag(π) Aᵀ
//! of a target row for r = 0..2k, their coefficient vectors, and the Hankel
//! matrix and eigenvalue gate built from them.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{CMatrixKind, Error, Result};
use crate::linalg;
use crate::model::Subset;
use crate::moments::MomentOracle;
use crate::subsets::{build_c, family_sum, MomentMatrixC, Strategy, SubsetFamily};

/// C matrices with σ_k below this are treated as singular.
pub const SINGULAR_C_FLOOR: f64 = 1e-13;

/// `(x ⊗ y)_{(ℓ, j)} = x_ℓ y_j`, row-major in (ℓ, j).
pub fn kron_vec(x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("kron of lengths {} and {}", x.len(), y.len())));
    }
    Ok(x.iter().flat_map(|a| y.iter().map(move |b| a * b)).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct BootstrapState {
    pub strategy: Strategy,
    pub target: usize,
    pub k: usize,
    /// ṽ_0..ṽ_{2k}.
    pub v: Vec<Vec<f64>>,
    /// ũ_r with ũ_r B ≈ m^{⊙r}.
    pub u: BTreeMap<usize, Vec<f64>>,
    /// ũ'_r with ũ'_r B' ≈ m^{⊙r} (doubling only).
    pub up: BTreeMap<usize, Vec<f64>>,
    pub sigma_k_ba: f64,
    pub sigma_k_bpa: Option<f64>,
    /// Whether A_1 = ∅, so that (ṽ_r)_1 is the r-th moment of the target.
    pub a_first_empty: bool,
    #[serde(skip)]
    pub c_ba: DMatrix<f64>,
    #[serde(skip)]
    pub c_bpa: Option<DMatrix<f64>>,
}

impl BootstrapState {
    pub fn to_json(&self) -> Result<String> {
        Ok(crate::json::to_string_pretty(self)?)
    }
}

fn check_families(a: &SubsetFamily, others: &[&SubsetFamily]) -> Result<usize> {
    let k = a.len();
    if k == 0 {
        return Err(Error::Precondition("families must be nonempty".into()));
    }
    if others.iter().any(|f| f.len() != k) {
        return Err(Error::DimensionMismatch("families must all have k members".into()));
    }
    Ok(k)
}

fn checked_c(oracle: &MomentOracle, b: &SubsetFamily, a: &SubsetFamily, which: CMatrixKind) -> Result<MomentMatrixC> {
    let c = build_c(oracle, b, a)?;
    if !(c.sigma_min >= SINGULAR_C_FLOOR) {
        return Err(Error::SingularC { which, sigma: c.sigma_min });
    }
    Ok(c)
}

fn solve(c: &DMatrix<f64>, v: &[f64], which: CMatrixKind) -> Result<Vec<f64>> {
    linalg::solve_row(c, v).ok_or(Error::SingularC { which, sigma: 0.0 })
}

fn first_two(oracle: &MomentOracle, a: &SubsetFamily, target: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let v0 = oracle.moment_table(a.members())?;
    let with_t: Vec<Subset> = a.members().iter().map(|s| s.with(target)).collect();
    let v1 = oracle.moment_table(&with_t)?;
    Ok((v0, v1))
}

/// ṽ_r = ũ_{r−1} C̃_{B+{t},A}, ũ_r = ṽ_r C̃_BA^{−1}, with ṽ_0 and ṽ_1 read
/// from the oracle. The target must avoid both ground sets.
pub fn bootstrap_sequential(
    oracle: &MomentOracle,
    a: &SubsetFamily,
    b: &SubsetFamily,
    target: usize,
) -> Result<BootstrapState> {
    let k = check_families(a, &[b])?;
    if a.ground().contains(&target) || b.ground().contains(&target) {
        return Err(Error::GroundOverlap(format!("target {target} lies in the ground set of A or B")));
    }
    let c_ba = checked_c(oracle, b, a, CMatrixKind::BA)?;
    let bt = SubsetFamily::new(
        b.ground().iter().copied().chain(std::iter::once(target)).collect(),
        b.members().iter().map(|s| s.with(target)).collect(),
    )?;
    let c_bt = build_c(oracle, &bt, a)?;

    let (v0, v1) = first_two(oracle, a, target)?;
    let mut u = BTreeMap::new();
    u.insert(0, solve(&c_ba.values, &v0, CMatrixKind::BA)?);
    let mut v = vec![v0, v1];
    for r in 1..=2 * k {
        let ur = solve(&c_ba.values, &v[r], CMatrixKind::BA)?;
        if r < 2 * k {
            v.push(linalg::row_times(&ur, &c_bt.values));
        }
        u.insert(r, ur);
    }
    Ok(BootstrapState {
        strategy: Strategy::Sequential,
        target,
        k,
        v,
        u,
        up: BTreeMap::new(),
        sigma_k_ba: c_ba.sigma_min,
        sigma_k_bpa: None,
        a_first_empty: a.members()[0].is_empty(),
        c_ba: c_ba.values,
        c_bpa: None,
    })
}

/// Doubling recursion: with h = 2^{i−1}, ṽ_{h+j} = (ũ_j ⊗ ũ'_h) C̃_{B+B',A}
/// for j = 1..h, then ũ'_{2h} = ṽ_{2h} C̃_{B'A}^{−1}. Starting at h = 1
/// covers r = 2; the schedule stops once ṽ_{2k} exists and skips ũ'
/// values no later step reads. The target may lie in ground(B) but not in
/// ground(A) or ground(B').
pub fn bootstrap_doubling(
    oracle: &MomentOracle,
    a: &SubsetFamily,
    b: &SubsetFamily,
    bp: &SubsetFamily,
    target: usize,
) -> Result<BootstrapState> {
    let k = check_families(a, &[b, bp])?;
    if a.ground().contains(&target) || bp.ground().contains(&target) {
        return Err(Error::GroundOverlap(format!("target {target} lies in the ground set of A or B'")));
    }
    let sum = family_sum(b, bp)?;
    let c_ba = checked_c(oracle, b, a, CMatrixKind::BA)?;
    let c_bpa = checked_c(oracle, bp, a, CMatrixKind::BpA)?;
    let c_sum = build_c(oracle, &sum, a)?;

    let (v0, v1) = first_two(oracle, a, target)?;
    let mut v: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut u = BTreeMap::new();
    let mut up = BTreeMap::new();
    u.insert(0, solve(&c_ba.values, &v0, CMatrixKind::BA)?);
    u.insert(1, solve(&c_ba.values, &v1, CMatrixKind::BA)?);
    up.insert(1, solve(&c_bpa.values, &v1, CMatrixKind::BpA)?);
    v.insert(0, v0);
    v.insert(1, v1);

    let top = 2 * k;
    let mut h = 1;
    while h < top {
        for j in 1..=h {
            let r = h + j;
            if r > top {
                break;
            }
            let x = kron_vec(&u[&j], &up[&h])?;
            let vr = linalg::row_times(&x, &c_sum.values);
            u.insert(r, solve(&c_ba.values, &vr, CMatrixKind::BA)?);
            v.insert(r, vr);
        }
        if 2 * h < top {
            up.insert(2 * h, solve(&c_bpa.values, &v[&(2 * h)], CMatrixKind::BpA)?);
        }
        h *= 2;
    }
    debug_assert!((0..=top).all(|r| v.contains_key(&r)));
    Ok(BootstrapState {
        strategy: Strategy::Doubling,
        target,
        k,
        v: v.into_values().collect(),
        u,
        up,
        sigma_k_ba: c_ba.sigma_min,
        sigma_k_bpa: Some(c_bpa.sigma_min),
        a_first_empty: a.members()[0].is_empty(),
        c_ba: c_ba.values,
        c_bpa: Some(c_bpa.values),
    })
}

/// (k+1)×(k+1) Hankel matrix of moments, `H[i][j] = μ_{i+j}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HankelMatrix {
    pub k: usize,
    /// μ_0..μ_{2k}.
    pub moments: Vec<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
}

impl HankelMatrix {
    pub fn from_moments(moments: Vec<f64>) -> Result<Self> {
        if moments.is_empty() || moments.len() % 2 == 0 {
            return Err(Error::DimensionMismatch(format!("need 2k+1 moments, got {}", moments.len())));
        }
        let k = (moments.len() - 1) / 2;
        let eigenvalues = linalg::symmetric_eigenvalues(&hankel(&moments, k + 1, 0));
        Ok(HankelMatrix { k, moments, eigenvalues })
    }

    /// Full (k+1)×(k+1) matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        hankel(&self.moments, self.k + 1, 0)
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.moments[i + j]
    }

    /// Second-smallest eigenvalue (the largest when k = 1 gives a 2×2).
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues[1]
    }
}

/// size×size Hankel block starting at moment `offset`.
pub(crate) fn hankel(moments: &[f64], size: usize, offset: usize) -> DMatrix<f64> {
    DMatrix::from_fn(size, size, |i, j| moments[offset + i + j])
}

/// `H[i][j] = (ṽ_{i+j})_1`; needs A_1 = ∅ and all of ṽ_0..ṽ_{2k}.
pub fn assemble_hankel(state: &BootstrapState) -> Result<HankelMatrix> {
    if !state.a_first_empty {
        return Err(Error::Precondition("the first member of A must be the empty set".into()));
    }
    let moments = (0..=2 * state.k)
        .map(|r| state.v.get(r).map(|v| v[0]).ok_or(Error::MissingMoment(r)))
        .collect::<Result<Vec<_>>>()?;
    HankelMatrix::from_moments(moments)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HankelGate {
    pub lambda2: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// `(π_min/2)(ζ/16)^{2k−2}`.
pub fn hankel_threshold(pi_min: f64, zeta: f64, k: usize) -> f64 {
    pi_min / 2.0 * (zeta / 16.0).powi(2 * k as i32 - 2)
}

/// Passes iff λ_2(H) ≥ `(π_min/2)(ζ/16)^{2k−2}`.
pub fn hankel_gate(h: &HankelMatrix, pi_min: f64, zeta: f64) -> HankelGate {
    let threshold = hankel_threshold(pi_min, zeta, h.k);
    let lambda2 = h.lambda2();
    HankelGate { lambda2, threshold, pass: lambda2 >= threshold }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_model, MixtureModel, SeparatedRows};
    use crate::subsets::{select_families, RowLayout};
    use proptest::prelude::*;
    use crate::subsets::Strategy;

    fn fam(ground: &[usize], members: &[&[usize]]) -> SubsetFamily {
        SubsetFamily::new(ground.to_vec(), members.iter().map(|m| Subset::from(m.to_vec())).collect()).unwrap()
    }

    /// m_t^{⊙r} diag(π) M[A]^T straight from the model.
    fn expected_v(model: &MixtureModel, a: &SubsetFamily, t: usize, r: usize) -> Vec<f64> {
        a.members()
            .iter()
            .map(|s| {
                let row = model.hadamard_row(s).unwrap();
                (0..model.k()).map(|j| model.row(t)[j].powi(r as i32) * model.pi()[j] * row[j]).sum()
            })
            .collect()
    }

    fn max_v_error(model: &MixtureModel, state: &BootstrapState, a: &SubsetFamily) -> f64 {
        let mut worst: f64 = 0.0;
        for (r, v) in state.v.iter().enumerate() {
            let e = expected_v(model, a, state.target, r);
            worst = worst.max(v.iter().zip(&e).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }
        worst
    }

    fn selected(model: &MixtureModel, k: usize, strategy: Strategy) -> crate::subsets::FamilySelection {
        let oracle = MomentOracle::exact(model.clone());
        select_families(&oracle, &RowLayout::leading(k, strategy), k, 0.0).unwrap()
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron_vec(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), vec![3.0, 4.0, 6.0, 8.0]);
        assert_eq!(kron_vec(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(kron_vec(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![0.0; 4]);
        assert!(kron_vec(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_component_is_scalar_recursion() {
        let model = MixtureModel::new(vec![1.0], vec![vec![0.7]]).unwrap();
        let oracle = MomentOracle::exact(model);
        let e = fam(&[], &[&[]]);
        for state in [
            bootstrap_sequential(&oracle, &e, &e, 0).unwrap(),
            bootstrap_doubling(&oracle, &e, &e, &e, 0).unwrap(),
        ] {
            assert_eq!(state.v.len(), 3);
            for (r, v) in state.v.iter().enumerate() {
                assert!((v[0] - 0.7f64.powi(r as i32)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn second_moment_on_four_bits() {
        let model = MixtureModel::new(
            vec![0.5, 0.5],
            vec![vec![0.2, 0.8], vec![0.4, 0.6], vec![0.1, 0.5], vec![0.3, 0.9]],
        )
        .unwrap();
        let oracle = MomentOracle::exact(model);
        let state = bootstrap_sequential(&oracle, &fam(&[3], &[&[], &[3]]), &fam(&[1], &[&[], &[1]]), 0).unwrap();
        // Σ_j π_j m_0j² = 0.5·0.04 + 0.5·0.64
        assert!((state.v[2][0] - 0.34).abs() < 1e-12);
    }

    #[test]
    fn doubling_index_coverage() {
        // First k members of each power set; generic rows keep C invertible.
        for k in 1..=5 {
            let layout = RowLayout::leading(k, Strategy::Doubling);
            let model = random_model(k, (3 * k - 3).max(1), 0.15, 0.1, SeparatedRows::All, k as u64).unwrap();
            let prefix = |ground: &[usize]| {
                let members: Vec<Subset> = Subset::power_set(ground).into_iter().take(k).collect();
                SubsetFamily::new(ground.to_vec(), members).unwrap()
            };
            let tp = layout.tp.clone().unwrap();
            let oracle = MomentOracle::exact(model);
            let target = layout.target.or(layout.t.first().copied()).unwrap();
            let state = bootstrap_doubling(&oracle, &prefix(&layout.s), &prefix(&layout.t), &prefix(&tp), target).unwrap();
            assert_eq!(state.v.len(), 2 * k + 1);
            assert!((0..=2 * k).all(|r| state.u.contains_key(&r)));
            assert!(state.up.keys().all(|&r| r < 2 * k && r.is_power_of_two()));
        }
    }

    #[test]
    fn overlapping_target_rejected() {
        let model = random_model(2, 4, 0.3, 0.2, SeparatedRows::All, 1).unwrap();
        let oracle = MomentOracle::exact(model);
        let a = fam(&[1], &[&[], &[1]]);
        let b = fam(&[2], &[&[], &[2]]);
        assert!(matches!(bootstrap_sequential(&oracle, &a, &b, 2), Err(Error::GroundOverlap(_))));
        assert!(matches!(bootstrap_doubling(&oracle, &a, &b, &fam(&[0], &[&[], &[0]]), 0), Err(Error::GroundOverlap(_))));
        // target inside ground(B) is allowed for doubling
        assert!(bootstrap_doubling(&oracle, &a, &fam(&[0], &[&[], &[0]]), &b, 0).is_ok());
    }

    #[test]
    fn singular_c_is_tagged() {
        let model = MixtureModel::new(vec![0.5, 0.5], vec![vec![0.2, 0.8], vec![0.5, 0.5], vec![0.3, 0.7]]).unwrap();
        let oracle = MomentOracle::exact(model);
        let a = fam(&[2], &[&[], &[2]]);
        let good = fam(&[0], &[&[], &[0]]);
        let flat = fam(&[1], &[&[], &[1]]);
        let err = bootstrap_doubling(&oracle, &a, &good, &flat, 0).unwrap_err();
        assert!(matches!(err, Error::SingularC { which: CMatrixKind::BpA, .. }), "{err:?}");
        let err = bootstrap_sequential(&oracle, &a, &flat, 0).unwrap_err();
        assert!(matches!(err, Error::SingularC { which: CMatrixKind::BA, .. }));
    }

    #[test]
    fn hankel_examples() {
        let h = HankelMatrix::from_moments(vec![1.0, 0.3, 0.09]).unwrap();
        assert_eq!(h.matrix(), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.09]));
        assert!(h.eigenvalues[0].abs() < 1e-15);
        assert!((hankel_threshold(0.4, 0.3, 1) - 0.2).abs() < 1e-15);
        assert!(HankelMatrix::from_moments(vec![1.0, 0.5]).is_err());
    }

    #[test]
    fn gate_examples() {
        // separated target, k = 2, ζ = 0.5, π_min = 0.3
        let model = MixtureModel::new(vec![0.4, 0.6], vec![vec![0.2, 0.8], vec![0.1, 0.7], vec![0.3, 0.9]]).unwrap();
        let sel = selected(&model, 2, Strategy::Doubling);
        let oracle = MomentOracle::exact(model);
        let state = bootstrap_doubling(
            &oracle,
            &sel.family_a().unwrap(),
            &sel.family_b().unwrap(),
            &sel.family_bp().unwrap().unwrap(),
            sel.target_bit,
        )
        .unwrap();
        let h = assemble_hankel(&state).unwrap();
        let gate = hankel_gate(&h, 0.3, 0.5);
        assert!((gate.threshold - 0.15 * (0.5f64 / 16.0).powi(2)).abs() < 1e-18);
        assert!(gate.pass, "{gate:?}");

        // duplicate entries in the target row
        let flat = MixtureModel::new(vec![0.4, 0.6], vec![vec![0.5, 0.5], vec![0.1, 0.7], vec![0.3, 0.9]]).unwrap();
        let oracle = MomentOracle::exact(flat);
        let state = bootstrap_sequential(&oracle, &fam(&[2], &[&[], &[2]]), &fam(&[1], &[&[], &[1]]), 0).unwrap();
        let gate = hankel_gate(&assemble_hankel(&state).unwrap(), 0.3, 0.5);
        assert!(!gate.pass && gate.lambda2.abs() < 1e-12, "{gate:?}");
    }

    #[test]
    fn perturbed_bootstrap_close_to_exact() {
        for seed in 0..10 {
            let model = random_model(2, 3, 0.3, 0.2, SeparatedRows::All, seed).unwrap();
            let sel = selected(&model, 2, Strategy::Sequential);
            let (a, b) = (sel.family_a().unwrap(), sel.family_b().unwrap());
            let exact = bootstrap_sequential(&MomentOracle::exact(model.clone()), &a, &b, sel.target_bit).unwrap();
            let noisy_oracle = MomentOracle::perturbed(model, 1e-10, seed).unwrap();
            let noisy = bootstrap_sequential(&noisy_oracle, &a, &b, sel.target_bit).unwrap();
            for (x, y) in exact.v.iter().zip(&noisy.v) {
                assert!(linalg::norm2(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>()) <= 1e-4);
            }
        }
    }

    #[test]
    fn dump_has_expected_keys() {
        let model = random_model(2, 3, 0.3, 0.2, SeparatedRows::All, 3).unwrap();
        let sel = selected(&model, 2, Strategy::Doubling);
        let oracle = MomentOracle::exact(model);
        let state = bootstrap_doubling(
            &oracle,
            &sel.family_a().unwrap(),
            &sel.family_b().unwrap(),
            &sel.family_bp().unwrap().unwrap(),
            sel.target_bit,
        )
        .unwrap();
        let text = state.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["v"].as_array().unwrap().len(), 5);
        assert!(value["u"].is_object() && value["up"].is_object());
        assert_eq!(value["strategy"], "doubling");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn exact_identities_and_strategy_agreement(seed in any::<u64>(), k in 1usize..=4) {
            let n = (3 * k - 3).max(2 * k - 1);
            let model = random_model(k, n, 0.3 / k as f64 + 0.05, 0.1, SeparatedRows::All, seed).unwrap();
            let oracle = MomentOracle::exact(model.clone());

            let sel = selected(&model, k, Strategy::Doubling);
            let a = sel.family_a().unwrap();
            let b = sel.family_b().unwrap();
            let dbl = bootstrap_doubling(&oracle, &a, &b, &sel.family_bp().unwrap().unwrap(), sel.target_bit).unwrap();
            prop_assert!(max_v_error(&model, &dbl, &a) <= 1e-9);

            // u_r M[B] = m_t^{⊙r}
            let mb = linalg::from_rows(&model.family_matrix(b.members()).unwrap());
            for (r, ur) in &dbl.u {
                let got = linalg::row_times(ur, &mb);
                for j in 0..k {
                    prop_assert!((got[j] - model.row(dbl.target)[j].powi(*r as i32)).abs() <= 1e-9);
                }
            }

            // the sequential run with A and B reused, target moved off B's ground
            let seq_sel = selected(&model, k, Strategy::Sequential);
            let sa = seq_sel.family_a().unwrap();
            let seq = bootstrap_sequential(&oracle, &sa, &seq_sel.family_b().unwrap(), seq_sel.target_bit).unwrap();
            prop_assert!(max_v_error(&model, &seq, &sa) <= 1e-9);
            if seq_sel.target_bit == dbl.target && sa == a {
                for (x, y) in seq.v.iter().zip(&dbl.v) {
                    for (p, q) in x.iter().zip(y) {
                        prop_assert!((p - q).abs() <= 1e-9);
                    }
                }
            }

            // moments of a [0, 1] variable: in range and nonincreasing
            let h = assemble_hankel(&dbl).unwrap();
            for w in h.moments.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            prop_assert!(h.moments.iter().all(|m| (-1e-9..=1.0 + 1e-9).contains(m)));
            prop_assert!(h.eigenvalues[0] >= -1e-9);
            for i in 0..=k {
                for j in 0..=k {
                    prop_assert_eq!(h.entry(i, j), h.entry(j, i));
                }
            }
        }
    }
}
