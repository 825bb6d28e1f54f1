//! k-spike distributions on [0, 1] and their recovery from a Hankel matrix
//! of 2k+1 moments: matrix pencil for a starting point, then a
//! least-squares polish against every moment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bootstrap::{hankel, HankelMatrix};
use crate::error::{Error, Result};
use crate::linalg;

/// σ_k(H_base) below this means the moments do not determine k spikes.
pub const DEGENERATE_HANKEL_FLOOR: f64 = 1e-14;
/// Pencil eigenvalues with a larger imaginary part are rejected.
pub const MAX_IMAGINARY: f64 = 1e-6;

/// Support points (ascending, in [0, 1]) with nonnegative weights summing
/// to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeDistribution {
    support: Vec<f64>,
    weights: Vec<f64>,
}

impl SpikeDistribution {
    /// Sorts the spikes by location; rejects points outside [0, 1], negative
    /// weights, or weights not summing to one within 1e-9.
    pub fn new(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() || support.is_empty() {
            return Err(Error::DimensionMismatch("support and weights must be nonempty and equally long".into()));
        }
        if support.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Domain("support points must lie in [0, 1]".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("weights sum to {total}")));
        }
        let mut pairs: Vec<(f64, f64)> = support.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (support, weights) = pairs.into_iter().unzip();
        Ok(SpikeDistribution { support, weights })
    }

    pub fn k(&self) -> usize {
        self.support.len()
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// μ_0..μ_{r_max} with μ_0 = 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSequence {
    pub mu: Vec<f64>,
}

/// μ_r = Σ_j π_j m_j^r for r = 0..=r_max.
pub fn spike_moments(d: &SpikeDistribution, r_max: usize) -> MomentSequence {
    let mut powers = vec![1.0; d.k()];
    let mut mu = Vec::with_capacity(r_max + 1);
    for r in 0..=r_max {
        if r > 0 {
            powers.iter_mut().zip(&d.support).for_each(|(p, m)| *p *= m);
        }
        mu.push(powers.iter().zip(&d.weights).map(|(p, w)| p * w).sum());
    }
    MomentSequence { mu }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerSolution {
    pub distribution: SpikeDistribution,
    /// max_r |Σ_j w_j m_j^r − μ_r| over all 2k+1 moments.
    pub residual: f64,
    /// Gauss–Newton steps accepted by the polish.
    pub polish_steps: usize,
    /// σ_k of the k×k leading Hankel block.
    pub base_sigma_k: f64,
    /// Largest imaginary part among the pencil eigenvalues (truncated).
    pub max_imaginary: f64,
}

/// Nonnegative least squares by the Lawson–Hanson active-set method.
pub fn nnls(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = a.ncols();
    let b = DVector::from_column_slice(b);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-14 * a.norm().max(1.0) * b.norm().max(1.0);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut z = DVector::zeros(n);
        if cols.is_empty() {
            return z;
        }
        let sub = a.select_columns(&cols);
        let sol = sub.clone().svd(true, true).solve(&b, 1e-15).expect("SVD with both factors solves");
        for (i, &c) in cols.iter().enumerate() {
            z[c] = sol[i];
        }
        z
    };
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (&b - a * &x);
        let candidate = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else { break };
        passive[t] = true;
        loop {
            let z = solve_passive(&passive);
            if (0..n).filter(|&j| passive[j]).all(|j| z[j] > 0.0) {
                x = z;
                break;
            }
            let alpha = (0..n)
                .filter(|&j| passive[j] && z[j] <= 0.0)
                .map(|j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for j in 0..n {
                if passive[j] && x[j] <= 1e-15 {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x.iter().copied().collect()
}

/// μ_0 = 1 is exact, so its equation is weighted to act as a constraint.
const MASS_WEIGHT: f64 = 1e6;

fn misfit(mu: &[f64], support: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut powers = vec![1.0; support.len()];
    mu.iter()
        .enumerate()
        .map(|(r, &target)| {
            if r > 0 {
                powers.iter_mut().zip(support).for_each(|(p, m)| *p *= m);
            }
            let d = powers.iter().zip(weights).map(|(p, w)| p * w).sum::<f64>() - target;
            if r == 0 { MASS_WEIGHT * d } else { d }
        })
        .collect()
}

const POLISH_MAX_STEPS: usize = 50;

/// Gauss–Newton on Σ_r (Σ_j w_j m_j^r − μ_r)² over all given moments,
/// keeping m in [0, 1] and w ≥ 0. Parameters sitting on a bound whose
/// step points outward are held fixed for that step. Steps that do not
/// reduce the misfit are halved, then abandoned.
fn polish(mu: &[f64], support: &mut Vec<f64>, weights: &mut Vec<f64>) -> usize {
    let k = support.len();
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut current = norm(&misfit(mu, support, weights));
    let mut accepted = 0;
    for _ in 0..POLISH_MAX_STEPS {
        if current == 0.0 {
            break;
        }
        let res = DVector::from_vec(misfit(mu, support, weights));
        let jac = DMatrix::from_fn(mu.len(), 2 * k, |r, c| {
            if c < k {
                if r == 0 {
                    0.0
                } else {
                    weights[c] * r as f64 * support[c].powi(r as i32 - 1)
                }
            } else if r == 0 {
                MASS_WEIGHT
            } else {
                support[c - k].powi(r as i32)
            }
        });
        // parameter c moves by −step[c]
        let outward = |c: usize, step: f64| {
            if c < k {
                (support[c] <= 0.0 && step > 0.0) || (support[c] >= 1.0 && step < 0.0)
            } else {
                weights[c - k] <= 0.0 && step > 0.0
            }
        };
        let mut free: Vec<usize> = (0..2 * k).collect();
        let mut step = DVector::<f64>::zeros(2 * k);
        for _ in 0..=2 * k {
            let Ok(sub) = jac.select_columns(&free).svd(true, true).solve(&res, 1e-14) else { break };
            step.fill(0.0);
            for (i, &c) in free.iter().enumerate() {
                step[c] = sub[i];
            }
            let before = free.len();
            free.retain(|&c| !outward(c, step[c]));
            if free.len() == before || free.is_empty() {
                break;
            }
        }
        let mut scale = 1.0;
        let mut improved = false;
        while scale > 1e-3 {
            let s: Vec<f64> = (0..k).map(|j| (support[j] - scale * step[j]).clamp(0.0, 1.0)).collect();
            let w: Vec<f64> = (0..k).map(|j| (weights[j] - scale * step[k + j]).max(0.0)).collect();
            let next = norm(&misfit(mu, &s, &w));
            if next < current {
                improved = current - next > 1e-6 * current;
                *support = s;
                *weights = w;
                current = next;
                accepted += 1;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    accepted
}

/// Recovers k spikes from the (k+1)×(k+1) Hankel matrix: support from the
/// pencil (H_shift, H_base), weights from the first k moments by NNLS,
/// then a least-squares polish over all 2k+1 moments.
pub fn learn_power_distribution(h: &HankelMatrix) -> Result<PowerSolution> {
    let k = h.k;
    if k == 0 {
        return Err(Error::DimensionMismatch("Hankel matrix must be at least 2x2".into()));
    }
    let mu = &h.moments;
    let base = hankel(mu, k, 0);
    let shift = hankel(mu, k, 1);
    let base_sigma_k = linalg::sigma_min(&base);
    if !(base_sigma_k >= DEGENERATE_HANKEL_FLOOR) {
        return Err(Error::DegenerateHankel { sigma: base_sigma_k });
    }
    let pencil = base.clone().lu().solve(&shift).ok_or(Error::DegenerateHankel { sigma: base_sigma_k })?;
    if pencil.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateHankel { sigma: base_sigma_k });
    }
    let eig = pencil.complex_eigenvalues();
    let max_imaginary = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if max_imaginary > MAX_IMAGINARY {
        return Err(Error::ComplexEigenvalue { imag: max_imaginary });
    }
    let mut support: Vec<f64> = eig.iter().map(|z| z.re.clamp(0.0, 1.0)).collect();
    support.sort_by(f64::total_cmp);

    let vand = linalg::vandermonde(&support);
    let mut weights = nnls(&vand, &mu[..k]);
    weights.iter_mut().for_each(|w| *w = w.max(0.0));
    let polish_steps = polish(mu, &mut support, &mut weights);
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateHankel { sigma: base_sigma_k });
    }
    weights.iter_mut().for_each(|w| *w /= total);

    let distribution = SpikeDistribution::new(support, weights)?;
    let fitted = spike_moments(&distribution, 2 * k);
    let residual = fitted.mu.iter().zip(mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(PowerSolution { distribution, residual, base_sigma_k, max_imaginary, polish_steps })
}

/// Largest entrywise difference after both are sorted by location.
pub fn spike_distance(a: &SpikeDistribution, b: &SpikeDistribution) -> Result<f64> {
    if a.k() != b.k() {
        return Err(Error::DimensionMismatch(format!("{} vs {} spikes", a.k(), b.k())));
    }
    let s = a.support.iter().zip(&b.support).map(|(x, y)| (x - y).abs());
    let w = a.weights.iter().zip(&b.weights).map(|(x, y)| (x - y).abs());
    Ok(s.chain(w).fold(0.0, f64::max))
}
