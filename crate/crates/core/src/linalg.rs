//! Small dense helpers shared by the oracle and the learner.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Default symmetry tolerance on max-abs asymmetry.
pub const TOL_SYM: f64 = 1e-9;
/// Largest condition number accepted when inverting a symmetric block.
pub const COND_MAX: f64 = 1e12;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Maximum absolute column sum.
pub fn norm_1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn vec_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Eigenvalues of a symmetric matrix (ascending).
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sym_eigenvalues(m)[0]
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    let ev = sym_eigenvalues(m);
    ev[ev.len() - 1]
}

/// Spectral norm of a symmetric matrix, i.e. its largest absolute eigenvalue.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigenvalues(m).iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Inverse of a symmetric, possibly indefinite matrix through its eigendecomposition.
///
/// Returns the condition number on failure so callers can build a domain error.
pub fn sym_inverse(m: &DMatrix<f64>, cond_max: f64) -> std::result::Result<DMatrix<f64>, f64> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), x| (lo.min(x.abs()), hi.max(x.abs())));
    if !hi.is_finite() || lo == 0.0 || hi / lo > cond_max {
        let cond = if lo == 0.0 { f64::INFINITY } else { hi / lo };
        return Err(cond);
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x));
    let inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Ok(symmetrize(&inv))
}

/// Builds the block-row matrix `[a b c]`.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Builds the block-column matrix `[a; b; c]`.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
