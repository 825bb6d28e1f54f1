//! Small dense linear-algebra helpers over `nalgebra::DMatrix<f64>`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// (smallest, largest) singular value. The smallest is σ_min(r, c).
pub fn extreme_singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    let s = singular_values(m);
    match (s.last(), s.first()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => (0.0, 0.0),
    }
}

pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    extreme_singular_values(m).0
}

pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    extreme_singular_values(m).1
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Solves `x · m = y` for the row vector `x` (i.e. `mᵀ xᵀ = yᵀ`).
pub fn solve_row(m: &DMatrix<f64>, y: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_column_slice(y);
    m.transpose()
        .lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .map(|x| x.iter().copied().collect())
}

/// Solves `m x = y` for the column vector `x`.
pub fn solve_col(m: &DMatrix<f64>, y: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_column_slice(y);
    m.clone()
        .lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .map(|x| x.iter().copied().collect())
}

/// Row vector times matrix.
pub fn row_times(x: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    debug_assert_eq!(x.len(), m.nrows());
    (0..m.ncols())
        .map(|c| x.iter().enumerate().map(|(r, xr)| xr * m[(r, c)]).sum())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Square Vandermonde matrix with rows `m^{⊙0}, …, m^{⊙(k−1)}`.
pub fn vandermonde(m: &[f64]) -> DMatrix<f64> {
    let k = m.len();
    DMatrix::from_fn(k, k, |i, j| m[j].powi(i as i32))
}

/// Minimum pairwise gap of a vector; `+∞` for fewer than two entries.
pub fn min_gap(v: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..v.len() {
        for j in (i + 1)..v.len() {
            best = best.min((v[i] - v[j]).abs());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_row_matches_definition() {
        let m = from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let y = [5.0, 10.0];
        let x = solve_row(&m, &y).unwrap();
        let back = row_times(&x, &m);
        assert!((back[0] - 5.0).abs() < 1e-12 && (back[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn singular_solve_is_none() {
        let m = from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(solve_col(&m, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn golden_ratio_singular_values() {
        let m = from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        let s = singular_values(&m);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((s[0] - phi).abs() < 1e-12);
        assert!((s[1] - 1.0 / phi).abs() < 1e-12);
    }
}
