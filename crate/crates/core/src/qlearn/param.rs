//! Half-vectorization of symmetric kernels and the matching quadratic basis.
//!
//! For symmetric `S` and any `z` of matching size, `vecv(z) . vecs(S) = z' S z`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, TOL_SYM};

pub const fn triangular(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Side length `n` with `n (n + 1) / 2 == len`, if one exists.
pub fn side_for_len(len: usize) -> Option<usize> {
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (triangular(n) == len).then_some(n)
}

/// Row-major upper triangle of an `n x n` symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymVec {
    n: usize,
    entries: DVector<f64>,
}

impl SymVec {
    pub fn new(entries: DVector<f64>, n: usize) -> Result<Self> {
        if entries.len() != triangular(n) {
            return Err(Error::dims("SymVec", triangular(n), entries.len()));
        }
        Ok(SymVec { n, entries })
    }

    pub fn zeros(n: usize) -> Self {
        SymVec {
            n,
            entries: DVector::zeros(triangular(n)),
        }
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.entries
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.entries
    }
}

pub fn vecs(m: &DMatrix<f64>) -> Result<SymVec> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::dims("vecs", "square", format!("{}x{}", m.nrows(), m.ncols())));
    }
    let asym = linalg::max_asymmetry(m);
    if asym > TOL_SYM * (1.0 + m.abs().max()) {
        return Err(Error::Asymmetric { what: "vecs input", asymmetry: asym, tol: TOL_SYM });
    }
    Ok(vecs_unchecked(m))
}

pub(crate) fn vecs_unchecked(m: &DMatrix<f64>) -> SymVec {
    let n = m.nrows();
    let mut out = DVector::zeros(triangular(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[k] = m[(i, j)];
            k += 1;
        }
    }
    SymVec { n, entries: out }
}

pub fn unvecs(v: &SymVec) -> DMatrix<f64> {
    let n = v.n;
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = v.entries[k];
            m[(j, i)] = v.entries[k];
            k += 1;
        }
    }
    m
}

/// `unvecs` from a raw vector and a declared side.
pub fn unvecs_raw(v: &DVector<f64>, n: usize) -> Result<DMatrix<f64>> {
    Ok(unvecs(&SymVec::new(v.clone(), n)?))
}

/// Quadratic monomials `[z1^2, 2 z1 z2, ..., 2 z1 zn, z2^2, ..., zn^2]`.
pub fn vecv(z: &DVector<f64>) -> DVector<f64> {
    let n = z.len();
    let mut out = DVector::zeros(triangular(n));
    vecv_into(z.as_slice(), out.as_mut_slice());
    out
}

pub(crate) fn vecv_into(z: &[f64], out: &mut [f64]) {
    let n = z.len();
    let mut k = 0;
    for i in 0..n {
        out[k] = z[i] * z[i];
        k += 1;
        let twice = 2.0 * z[i];
        for zj in &z[i + 1..n] {
            out[k] = twice * zj;
            k += 1;
        }
    }
}
