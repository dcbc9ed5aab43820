//! Fixed-magnetization sector basis, XXZ Hamiltonian construction and dense
//! full diagonalization.
//!
//! Spin operators use the spin-1/2 normalization (eigenvalues +-1/2), exactly
//! as the Hamiltonian is written:
//! `H = 1/2 sum_{i != j} J_ij (Sx Sx + Sy Sy + Delta Sz Sz)`.
//! An isolated pair with coupling J therefore has energies `J (+-2 - Delta)/4`
//! on the entangled states and `J Delta/4` on the polarized ones.

use ndarray::{Array2, ArrayView2, ShapeBuilder};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::CouplingMatrix;

/// Largest chain the dense sector machinery accepts.
pub const MAX_SPINS: usize = 20;

/// Enumeration of the fixed-magnetization computational basis.
///
/// Bit `k` of a pattern is set iff spin `k` points up. Patterns are stored in
/// increasing integer order.
#[derive(Debug, Clone)]
pub struct SectorBasis {
    pub n_spins: usize,
    pub n_up: usize,
    pub states: Vec<u32>,
    index: HashMap<u32, usize>,
}

impl SectorBasis {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn index_of(&self, pattern: u32) -> Option<usize> {
        self.index.get(&pattern).copied()
    }
}

/// Number of up spins in the sector of smallest positive magnetization,
/// `floor(N/2) + 1`.
pub fn default_n_up(n: usize) -> usize {
    n / 2 + 1
}

/// Enumerates all `binomial(N, n_up)` patterns with population `n_up`.
pub fn sector_basis(n: usize, n_up: usize) -> Result<SectorBasis> {
    if n > MAX_SPINS {
        return Err(Error::Capacity(format!("n = {n} exceeds maximum {MAX_SPINS}")));
    }
    if n_up > n {
        return Err(Error::InvalidDomain(format!("n_up = {n_up} > n = {n}")));
    }
    let mut states = Vec::new();
    for pattern in 0..(1u32 << n) {
        if pattern.count_ones() as usize == n_up {
            states.push(pattern);
        }
    }
    let index = states.iter().enumerate().map(|(k, &p)| (p, k)).collect();
    Ok(SectorBasis {
        n_spins: n,
        n_up,
        states,
        index,
    })
}

fn sz(pattern: u32, site: usize) -> f64 {
    if pattern >> site & 1 == 1 {
        0.5
    } else {
        -0.5
    }
}

/// Builds the XXZ Hamiltonian restricted to the sector.
///
/// Diagonal: `sum_{i<j} J_ij Delta s_i s_j`. Off-diagonal: `J_ij / 2` between
/// states connected by a single up/down exchange on sites `(i, j)`.
pub fn build_hamiltonian(
    coupling: &CouplingMatrix,
    delta: f64,
    basis: &SectorBasis,
) -> Result<Array2<f64>> {
    let n = basis.n_spins;
    if coupling.n_spins() != n {
        return Err(Error::InvalidDomain(format!(
            "coupling matrix is {}x{} but basis has {} spins",
            coupling.n_spins(),
            coupling.n_spins(),
            n
        )));
    }
    let dim = basis.dim();
    let j = &coupling.j;
    let mut h = Array2::zeros((dim, dim));
    for (row, &pattern) in basis.states.iter().enumerate() {
        let mut diag = 0.0;
        for i in 0..n {
            let si = sz(pattern, i);
            for k in (i + 1)..n {
                diag += j[[i, k]] * delta * si * sz(pattern, k);
                // Flip-flop connects opposite spins on sites (i, k).
                let bi = pattern >> i & 1;
                let bk = pattern >> k & 1;
                if bi != bk {
                    let flipped = pattern ^ (1 << i) ^ (1 << k);
                    let col = basis
                        .index_of(flipped)
                        .ok_or_else(|| Error::Internal("flipped state left the sector".into()))?;
                    h[[row, col]] = j[[i, k]] / 2.0;
                }
            }
        }
        h[[row, row]] = diag;
    }
    Ok(h)
}

/// Ascending eigenvalues and orthonormal eigenvectors (column `k` of
/// `eigenvectors` belongs to `eigenvalues[k]`).
#[derive(Debug, Clone)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Array2<f64>,
}

impl SpectrumResult {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Divide-and-conquer symmetric eigensolver (`dsyevd`), much faster than the
/// QR-based path for full spectra at the sector dimensions used here.
/// The matrix is symmetric, so passing row-major storage as column-major is
/// safe; the returned vectors land in Fortran layout with eigenvector `k` in
/// column `k`.
fn dsyevd(h: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let dim = h.nrows();
    let n = dim as i32;
    let mut a: Vec<f64> = h.iter().copied().collect();
    let mut w = vec![0.0f64; dim];
    let mut info = 0i32;
    // Workspace query.
    let mut work_size = [0.0f64];
    let mut iwork_size = [0i32];
    unsafe {
        lapack::dsyevd(
            b'V', b'L', n, &mut a, n, &mut w, &mut work_size, -1, &mut iwork_size, -1, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::NumericalFailure(format!(
            "dsyevd workspace query failed: info = {info}"
        )));
    }
    let lwork = work_size[0] as i32;
    let liwork = iwork_size[0];
    let mut work = vec![0.0f64; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        lapack::dsyevd(
            b'V', b'L', n, &mut a, n, &mut w, &mut work, lwork, &mut iwork, liwork, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::NumericalFailure(format!(
            "dsyevd failed on {dim}x{dim}: info = {info}"
        )));
    }
    let vectors = Array2::from_shape_vec((dim, dim).f(), a)
        .map_err(|e| Error::Internal(format!("eigenvector reshape: {e}")))?;
    Ok((w, vectors))
}

/// Full dense eigendecomposition of a symmetric matrix.
pub fn diagonalize(h: ArrayView2<f64>) -> Result<SpectrumResult> {
    let dim = h.nrows();
    if dim != h.ncols() {
        return Err(Error::InvalidDomain("matrix is not square".into()));
    }
    let scale = h.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    for a in 0..dim {
        for b in (a + 1)..dim {
            if (h[[a, b]] - h[[b, a]]).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::InvalidDomain(format!(
                    "matrix not symmetric at ({a}, {b})"
                )));
            }
        }
    }
    let (eigenvalues, eigenvectors) = dsyevd(h)?;
    let mut eigenvalues = eigenvalues.to_vec();
    // LAPACK returns ascending order already; enforce the contract anyway.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigenvalues[a].partial_cmp(&eigenvalues[b]).unwrap());
    let sorted = order.windows(2).all(|w| w[0] < w[1]);
    let eigenvectors = if sorted {
        eigenvectors
    } else {
        let mut v = Array2::zeros((dim, dim));
        for (new, &old) in order.iter().enumerate() {
            v.column_mut(new).assign(&eigenvectors.column(old));
        }
        eigenvalues = order.iter().map(|&k| eigenvalues[k]).collect();
        v
    };
    if !sorted {
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    Ok(SpectrumResult {
        eigenvalues,
        eigenvectors,
    })
}
