//! Localization diagnostics computed from a sector spectrum: level spacing
//! ratio, Thouless parameter, half-chain entanglement entropy and
//! participation ratios.

use ndarray::{Array2, ArrayView1};
use ndarray_linalg::{EigValsh, UPLO};

use crate::error::{Error, Result};
use crate::spectrum::{SectorBasis, SpectrumResult};

/// Matrix-element floor used when a Thouless matrix element vanishes exactly.
pub const THOULESS_FLOOR: f64 = 1e-30;

const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// Mean of `min(g_{n+1}/g_n, g_n/g_{n+1})` over adjacent gap pairs.
///
/// A zero gap in either position contributes 0; pairs where both gaps vanish
/// (0/0) are skipped. GOE reference: `4 - 2 sqrt(3) ~ 0.536`; Poisson:
/// `2 ln 2 - 1 ~ 0.386`.
pub fn mean_level_spacing_ratio(eigenvalues: &[f64]) -> Result<f64> {
    if eigenvalues.len() < 3 {
        return Err(Error::InvalidDomain(format!(
            "need >= 3 levels, got {}",
            eigenvalues.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in eigenvalues.windows(3) {
        let g1 = w[1] - w[0];
        let g2 = w[2] - w[1];
        if g1 == 0.0 && g2 == 0.0 {
            continue;
        }
        if g1 > 0.0 && g2 > 0.0 {
            sum += (g2 / g1).min(g1 / g2);
        }
        // One vanishing gap contributes 0.
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidDomain("all gaps vanish".into()));
    }
    Ok(sum / count as f64)
}

/// Kinds of local perturbation operators probed by the Thouless parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// `2 Sz` on the first spin (diagonal, entries +-1).
    V1,
    /// `4 Sz Sz` on the first two spins (diagonal, entries +-1).
    V2,
    /// `S+ S- + h.c.` between the first two spins (hopping, amplitude 1).
    V3,
}

/// Sparse symmetric operator over a sector basis, stored as upper-triangle
/// triplets `(row, col, value)` with `row <= col`.
#[derive(Debug, Clone)]
pub struct SparseSymOp {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseSymOp {
    /// Bilinear form `x^T V y`.
    pub fn element(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        let mut acc = 0.0;
        for &(a, b, v) in &self.entries {
            if a == b {
                acc += v * x[a] * y[a];
            } else {
                acc += v * (x[a] * y[b] + x[b] * y[a]);
            }
        }
        acc
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for &(a, b, v) in &self.entries {
            m[[a, b]] = v;
            m[[b, a]] = v;
        }
        m
    }
}

/// Builds the local operator of the given kind over the sector basis.
pub fn local_operator_matrix(kind: OperatorKind, basis: &SectorBasis) -> SparseSymOp {
    let dim = basis.dim();
    let mut entries = Vec::with_capacity(dim);
    match kind {
        OperatorKind::V1 => {
            for (k, &pattern) in basis.states.iter().enumerate() {
                let v = if pattern & 1 == 1 { 1.0 } else { -1.0 };
                entries.push((k, k, v));
            }
        }
        OperatorKind::V2 => {
            for (k, &pattern) in basis.states.iter().enumerate() {
                let v = if (pattern & 1) == (pattern >> 1 & 1) {
                    1.0
                } else {
                    -1.0
                };
                entries.push((k, k, v));
            }
        }
        OperatorKind::V3 => {
            for (k, &pattern) in basis.states.iter().enumerate() {
                // Record each connected pair once, from the bit-0-set side.
                if pattern & 1 == 1 && pattern >> 1 & 1 == 0 {
                    let flipped = pattern ^ 0b11;
                    if let Some(m) = basis.index_of(flipped) {
                        let (a, b) = if k < m { (k, m) } else { (m, k) };
                        entries.push((a, b, 1.0));
                    }
                }
            }
        }
    }
    SparseSymOp { dim, entries }
}

/// Mean Thouless parameter and the number of floored matrix elements.
#[derive(Debug, Clone, Copy)]
pub struct ThoulessResult {
    pub mean: f64,
    pub floored: usize,
}

/// Mean over adjacent eigenpairs of `ln(|<n|V|n+1>| / (E'_{n+1} - E'_n))`
/// with `E'_n = E_n + <n|V|n>`.
///
/// Adjacency follows the original eigenvalue order; a non-positive perturbed
/// gap enters by absolute value and exactly vanishing matrix elements are
/// floored at [`THOULESS_FLOOR`] (counted in the result).
pub fn mean_thouless_parameter(
    spectrum: &SpectrumResult,
    operator: &SparseSymOp,
) -> Result<ThoulessResult> {
    let dim = spectrum.dim();
    if dim < 2 {
        return Err(Error::InvalidDomain("need >= 2 levels".into()));
    }
    let perturbed: Vec<f64> = (0..dim)
        .map(|k| {
            let v = spectrum.eigenvectors.column(k);
            spectrum.eigenvalues[k] + operator.element(v, v)
        })
        .collect();
    let mut sum = 0.0;
    let mut floored = 0usize;
    for k in 0..dim - 1 {
        let mut me = operator
            .element(spectrum.eigenvectors.column(k), spectrum.eigenvectors.column(k + 1))
            .abs();
        if me == 0.0 {
            me = THOULESS_FLOOR;
            floored += 1;
        }
        let gap = (perturbed[k + 1] - perturbed[k]).abs().max(f64::MIN_POSITIVE);
        sum += (me / gap).ln();
    }
    Ok(ThoulessResult {
        mean: sum / (dim - 1) as f64,
        floored,
    })
}

/// Index maps from sector states into the (subsystem, complement) product
/// grid of one bipartition.
struct Bipartition {
    rows: Vec<usize>,
    cols: Vec<usize>,
    row_dim: usize,
    col_dim: usize,
}

impl Bipartition {
    fn new(basis: &SectorBasis, subsystem: &[usize]) -> Result<Self> {
        let n = basis.n_spins;
        let mut inside = vec![false; n];
        for &s in subsystem {
            if s >= n {
                return Err(Error::InvalidDomain(format!(
                    "subsystem site {s} out of range for {n} spins"
                )));
            }
            if inside[s] {
                return Err(Error::InvalidDomain(format!("duplicate subsystem site {s}")));
            }
            inside[s] = true;
        }
        let comp: Vec<usize> = (0..n).filter(|&s| !inside[s]).collect();
        let compress = |pattern: u32, sites: &[usize]| -> usize {
            sites
                .iter()
                .enumerate()
                .map(|(bit, &s)| (((pattern >> s) & 1) as usize) << bit)
                .sum()
        };
        let rows = basis.states.iter().map(|&p| compress(p, subsystem)).collect();
        let cols = basis.states.iter().map(|&p| compress(p, &comp)).collect();
        Ok(Self {
            rows,
            cols,
            row_dim: 1 << subsystem.len(),
            col_dim: 1 << comp.len(),
        })
    }

    fn amplitude_matrix(&self, state: ArrayView1<f64>) -> Array2<f64> {
        let mut a = Array2::zeros((self.row_dim, self.col_dim));
        for (k, &c) in state.iter().enumerate() {
            a[[self.rows[k], self.cols[k]]] = c;
        }
        a
    }
}

fn check_normalized(state: ArrayView1<f64>, tol: f64) -> Result<()> {
    let norm2: f64 = state.iter().map(|c| c * c).sum();
    if (norm2 - 1.0).abs() > tol {
        return Err(Error::InvalidDomain(format!(
            "state not normalized: |psi|^2 = {norm2}"
        )));
    }
    Ok(())
}

/// Partial trace of `|state><state|` over the complement of `subsystem`.
pub fn reduced_density_matrix(
    state: ArrayView1<f64>,
    basis: &SectorBasis,
    subsystem: &[usize],
) -> Result<Array2<f64>> {
    check_normalized(state, 1e-10)?;
    if state.len() != basis.dim() {
        return Err(Error::InvalidDomain("state length != sector dimension".into()));
    }
    let part = Bipartition::new(basis, subsystem)?;
    let a = part.amplitude_matrix(state);
    Ok(a.dot(&a.t()))
}

fn entropy_from_weights(weights: &[f64]) -> Result<f64> {
    let mut clamped = 0.0;
    let mut s = 0.0;
    for &lambda in weights {
        if lambda < -1e-10 {
            return Err(Error::InvalidDomain(format!(
                "density matrix eigenvalue {lambda} < -1e-10"
            )));
        }
        if lambda < 0.0 {
            clamped += -lambda;
            continue;
        }
        if lambda > 1e-12 {
            s -= lambda * lambda.ln() * LOG2_E;
        }
    }
    if clamped > 1e-8 {
        return Err(Error::NumericalFailure(format!(
            "clamped negative spectral weight {clamped} exceeds 1e-8"
        )));
    }
    Ok(s)
}

/// Von Neumann entropy `-Tr rho log2 rho` in bits.
pub fn entanglement_entropy(rho: &Array2<f64>) -> Result<f64> {
    let trace: f64 = rho.diag().sum();
    if (trace - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDomain(format!(
            "density matrix trace {trace} deviates from 1"
        )));
    }
    let eigenvalues = rho
        .to_owned()
        .eigvalsh(UPLO::Lower)
        .map_err(|e| Error::NumericalFailure(format!("density matrix eigensolve: {e}")))?;
    entropy_from_weights(eigenvalues.as_slice().unwrap())
}

/// Grand mean, over all eigenstates and all `N` cyclic windows of
/// `floor(N/2)` consecutive sites, of the window entanglement entropy (bits).
pub fn mean_half_chain_entropy(spectrum: &SpectrumResult, basis: &SectorBasis) -> Result<f64> {
    let n = basis.n_spins;
    if n < 4 {
        return Err(Error::InvalidDomain("need at least 4 spins".into()));
    }
    let half = n / 2;
    // For even N the window starting at c + N/2 is the complement of the
    // window starting at c, and both carry the same Schmidt spectrum, so it
    // suffices to visit the first N/2 start points.
    let starts: Vec<usize> = if n.is_multiple_of(2) {
        (0..n / 2).collect()
    } else {
        (0..n).collect()
    };
    let mut total = 0.0;
    let mut count = 0usize;
    let mut scratch = SchmidtScratch::default();
    let mut weights = Vec::with_capacity(basis.dim());
    for &start in &starts {
        let window: Vec<usize> = (0..half).map(|k| (start + k) % n).collect();
        let part = BlockBipartition::new(basis, &window)?;
        for state in spectrum.eigenvectors.columns() {
            part.schmidt_weights(state, &mut scratch, &mut weights)?;
            total += entropy_from_weights(&weights)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Reusable buffers for the per-state Schmidt decompositions; the block
/// eigensolves are tiny, so avoiding per-call allocation and workspace
/// queries dominates the cost.
#[derive(Default)]
struct SchmidtScratch {
    amplitude: Vec<f64>,
    gram: Vec<f64>,
    values: Vec<f64>,
    work: Vec<f64>,
}

/// Bipartition resolved into window-magnetization blocks: a sector state with
/// `a` up-spins inside the window only connects window patterns with `a` ups
/// to complement patterns with `n_up - a` ups, so the reduced density matrix
/// is block diagonal and each block stays small.
struct BlockBipartition {
    blocks: Vec<BipartitionBlock>,
}

struct BipartitionBlock {
    row_dim: usize,
    col_dim: usize,
    /// `(sector index, row, col)` placements of state amplitudes.
    entries: Vec<(usize, usize, usize)>,
}

impl BlockBipartition {
    fn new(basis: &SectorBasis, subsystem: &[usize]) -> Result<Self> {
        let part = Bipartition::new(basis, subsystem)?;
        // Group sector states by window occupation and rank the patterns
        // that actually occur on each side.
        // Sector indices plus their row/col placements, keyed by window ups.
        type MagGroup = (Vec<usize>, Vec<usize>, Vec<usize>);
        let mut by_mag: std::collections::BTreeMap<u32, MagGroup> =
            std::collections::BTreeMap::new();
        for (k, &pattern) in basis.states.iter().enumerate() {
            let a = subsystem
                .iter()
                .map(|&s| (pattern >> s) & 1)
                .sum::<u32>();
            let entry = by_mag.entry(a).or_default();
            entry.0.push(k);
            entry.1.push(part.rows[k]);
            entry.2.push(part.cols[k]);
        }
        let mut blocks = Vec::new();
        for (_, (ks, rows, cols)) in by_mag {
            let mut row_rank = std::collections::HashMap::new();
            let mut col_rank = std::collections::HashMap::new();
            let mut entries = Vec::with_capacity(ks.len());
            for ((&k, &r), &c) in ks.iter().zip(&rows).zip(&cols) {
                let nr = row_rank.len();
                let ri = *row_rank.entry(r).or_insert(nr);
                let nc = col_rank.len();
                let ci = *col_rank.entry(c).or_insert(nc);
                entries.push((k, ri, ci));
            }
            blocks.push(BipartitionBlock {
                row_dim: row_rank.len(),
                col_dim: col_rank.len(),
                entries,
            });
        }
        Ok(Self { blocks })
    }

    /// Schmidt weights (reduced density matrix eigenvalues) of one state,
    /// appended block by block into `weights`.
    fn schmidt_weights(
        &self,
        state: ArrayView1<f64>,
        scratch: &mut SchmidtScratch,
        weights: &mut Vec<f64>,
    ) -> Result<()> {
        weights.clear();
        for block in &self.blocks {
            let (r, c) = (block.row_dim, block.col_dim);
            if r.min(c) == 1 {
                // Rank-one block: single weight |A|^2.
                weights.push(block.entries.iter().map(|&(k, _, _)| state[k] * state[k]).sum());
                continue;
            }
            let a = &mut scratch.amplitude;
            a.clear();
            a.resize(r * c, 0.0);
            for &(k, ri, ci) in &block.entries {
                a[ri * c + ci] = state[k];
            }
            // Gram matrix on the smaller side; its eigenvalues are the
            // squared singular values of the amplitude block. Rows of the
            // row-major amplitude buffer are contiguous, so grab the side
            // whose vectors are rows.
            let m = r.min(c);
            let gram = &mut scratch.gram;
            gram.clear();
            gram.resize(m * m, 0.0);
            if r <= c {
                for x in 0..m {
                    for y in 0..=x {
                        let dot: f64 = a[x * c..(x + 1) * c]
                            .iter()
                            .zip(&a[y * c..(y + 1) * c])
                            .map(|(p, q)| p * q)
                            .sum();
                        gram[x * m + y] = dot;
                    }
                }
            } else {
                for row in a.chunks_exact(c) {
                    for x in 0..m {
                        let rx = row[x];
                        if rx == 0.0 {
                            continue;
                        }
                        for y in 0..=x {
                            gram[x * m + y] += rx * row[y];
                        }
                    }
                }
            }
            // Lower triangle in row-major storage is the upper triangle of
            // the column-major matrix LAPACK sees; the gram is symmetric
            // either way.
            let n = m as i32;
            scratch.values.resize(m, 0.0);
            let lwork = (3 * m).max(8);
            scratch.work.resize(lwork, 0.0);
            let mut info = 0i32;
            unsafe {
                lapack::dsyev(
                    b'N',
                    b'U',
                    n,
                    gram,
                    n,
                    &mut scratch.values,
                    &mut scratch.work,
                    lwork as i32,
                    &mut info,
                );
            }
            if info != 0 {
                return Err(Error::NumericalFailure(format!(
                    "window entropy eigensolve: dsyev info = {info}"
                )));
            }
            weights.extend_from_slice(&scratch.values[..m]);
        }
        Ok(())
    }
}

/// An orthonormal reference basis a state can be expanded over.
pub trait BasisTransform {
    fn dim(&self) -> usize;
    /// Overlaps `<b|state>` for every reference state `b`.
    fn overlaps(&self, state: ArrayView1<f64>) -> Vec<f64>;
}

/// The computational z-basis (identity transform) of the sector.
pub struct IdentityBasis(pub usize);

impl BasisTransform for IdentityBasis {
    fn dim(&self) -> usize {
        self.0
    }
    fn overlaps(&self, state: ArrayView1<f64>) -> Vec<f64> {
        state.to_vec()
    }
}

/// Inverse sum of fourth-power overlap magnitudes with the reference basis.
pub fn participation_ratio(
    state: ArrayView1<f64>,
    reference: &impl BasisTransform,
) -> Result<f64> {
    check_normalized(state, 1e-8)?;
    let sum: f64 = reference
        .overlaps(state)
        .iter()
        .map(|o| o.powi(4))
        .sum();
    Ok(1.0 / sum)
}
