//! Effective model of strongly interacting pairs: greedy strongest-coupling
//! pairing, the pair basis, the first-order effective Ising Hamiltonian and
//! the fixed-sector combinatorics behind the entropy and participation-ratio
//! predictions.

use ndarray::ArrayView1;
use num_integer::binomial;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CouplingMatrix;
use crate::observables::BasisTransform;
use crate::spectrum::SectorBasis;

/// Eigenstate of a single strongly coupled pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairState {
    /// `(|ud> + |du>)/sqrt(2)`, energy `(+2 - Delta)/4` per unit coupling.
    Plus,
    /// `(|ud> - |du>)/sqrt(2)`, energy `(-2 - Delta)/4` per unit coupling.
    Minus,
    UpUp,
    DownDown,
}

impl PairState {
    pub const ALL: [PairState; 4] = [
        PairState::Plus,
        PairState::Minus,
        PairState::UpUp,
        PairState::DownDown,
    ];

    /// Pair magnetization in units of one full pair flip: +1, -1 or 0.
    pub fn magnetization(self) -> i64 {
        match self {
            PairState::UpUp => 1,
            PairState::DownDown => -1,
            _ => 0,
        }
    }

    /// Pseudo-magnetization entering the Ising term, +-1/2 for polarized
    /// states and 0 for the entangled ones.
    pub fn pseudo_mz(self) -> f64 {
        match self {
            PairState::UpUp => 0.5,
            PairState::DownDown => -0.5,
            _ => 0.0,
        }
    }

    pub fn is_entangled(self) -> bool {
        matches!(self, PairState::Plus | PairState::Minus)
    }

    /// Intra-pair energy per unit coupling, spin-1/2 normalization.
    pub fn intra_energy(self, delta: f64) -> f64 {
        match self {
            PairState::Plus => (2.0 - delta) / 4.0,
            PairState::Minus => (-2.0 - delta) / 4.0,
            PairState::UpUp | PairState::DownDown => delta / 4.0,
        }
    }
}

/// One ordered pair from the greedy elimination, with its intra-pair
/// coupling and ring span (minimal cyclic index distance, in bonds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub coupling: f64,
    pub span: usize,
}

/// Partition of the spins into pairs, in elimination order (non-increasing
/// coupling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_spins(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn total_span(&self) -> usize {
        self.pairs.iter().map(|p| p.span).sum()
    }

    fn check_matches(&self, n: usize) -> Result<()> {
        if self.n_spins() != n {
            return Err(Error::InvalidDomain(format!(
                "pair set covers {} spins, coupling matrix has {n}",
                self.n_spins()
            )));
        }
        let mut seen = vec![false; n];
        for p in &self.pairs {
            for s in [p.i, p.j] {
                if s >= n || seen[s] {
                    return Err(Error::InvalidDomain(format!(
                        "pair set is not a partition: spin {s}"
                    )));
                }
                seen[s] = true;
            }
        }
        Ok(())
    }
}

fn ring_span(i: usize, j: usize, n: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(n - d)
}

/// Repeatedly selects the globally strongest coupling among unpaired spins
/// and eliminates both spins, until all spins are paired.
pub fn greedy_pairing(coupling: &CouplingMatrix) -> Result<PairSet> {
    let n = coupling.n_spins();
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::InvalidDomain(format!(
            "greedy pairing needs an even number of spins, got {n}"
        )));
    }
    let j = &coupling.j;
    let mut free = vec![true; n];
    let mut pairs = Vec::with_capacity(n / 2);
    for _ in 0..n / 2 {
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for a in 0..n {
            if !free[a] {
                continue;
            }
            for b in (a + 1)..n {
                if free[b] && j[[a, b]] > best.2 {
                    best = (a, b, j[[a, b]]);
                }
            }
        }
        let (a, b, coupling) = best;
        free[a] = false;
        free[b] = false;
        pairs.push(Pair {
            i: a,
            j: b,
            coupling,
            span: ring_span(a, b, n),
        });
    }
    Ok(PairSet { pairs })
}

/// Diagonal energy of one pair-basis product state under the effective
/// Hamiltonian: intra-pair energies plus the renormalized Ising couplings
/// `Delta (J_ii' + J_ji' + J_ij' + J_jj')` between pair pseudo-magnetizations.
pub fn pair_state_energy(
    pairset: &PairSet,
    coupling: &CouplingMatrix,
    delta: f64,
    assignment: &[PairState],
) -> f64 {
    let j = &coupling.j;
    let mut energy = 0.0;
    for (p, a) in pairset.pairs.iter().zip(assignment) {
        energy += a.intra_energy(delta) * p.coupling;
    }
    for (pi, (p, a)) in pairset.pairs.iter().zip(assignment).enumerate() {
        for (q, b) in pairset.pairs.iter().zip(assignment).skip(pi + 1) {
            let ising = delta * (j[[p.i, q.i]] + j[[p.j, q.i]] + j[[p.i, q.j]] + j[[p.j, q.j]]);
            energy += ising * a.pseudo_mz() * b.pseudo_mz();
        }
    }
    energy
}

/// Enumerates all `4^P` pair-basis assignments in a fixed base-4 order
/// (pair 0 is the least significant digit).
pub fn enumerate_pair_states(n_pairs: usize) -> Vec<Vec<PairState>> {
    let total = 1usize << (2 * n_pairs);
    (0..total)
        .map(|code| {
            (0..n_pairs)
                .map(|p| PairState::ALL[(code >> (2 * p)) & 3])
                .collect()
        })
        .collect()
}

/// All pair-basis product states with their effective diagonal energies.
pub fn effective_hamiltonian(
    pairset: &PairSet,
    coupling: &CouplingMatrix,
    delta: f64,
) -> Result<Vec<(Vec<PairState>, f64)>> {
    pairset.check_matches(coupling.n_spins())?;
    Ok(enumerate_pair_states(pairset.n_pairs())
        .into_iter()
        .map(|a| {
            let e = pair_state_energy(pairset, coupling, delta, &a);
            (a, e)
        })
        .collect())
}

/// Orthonormal transform between the sector z-basis and the sector pair
/// basis. Column `k` is the z-expansion of pair-basis state `k`, stored as
/// sparse `(sector index, amplitude)` entries.
#[derive(Debug, Clone)]
pub struct PairBasisTransform {
    pub assignments: Vec<Vec<PairState>>,
    pub columns: Vec<Vec<(usize, f64)>>,
    dim: usize,
}

impl PairBasisTransform {
    pub fn n_states(&self) -> usize {
        self.columns.len()
    }
}

impl BasisTransform for PairBasisTransform {
    fn dim(&self) -> usize {
        self.dim
    }

    fn overlaps(&self, state: ArrayView1<f64>) -> Vec<f64> {
        self.columns
            .iter()
            .map(|col| col.iter().map(|&(k, amp)| amp * state[k]).sum())
            .collect()
    }
}

/// Expands every pair-basis state with pair-magnetization imbalance
/// `r = n_up - N/2` over the sector z-basis.
pub fn pair_basis_transform(
    pairset: &PairSet,
    basis: &SectorBasis,
) -> Result<PairBasisTransform> {
    pairset.check_matches(basis.n_spins)?;
    // Pair-unit imbalance: an up pair carries magnetization +1.
    let r = basis.n_up as i64 - (basis.n_spins / 2) as i64;
    let mut assignments = Vec::new();
    let mut columns = Vec::new();
    for assignment in enumerate_pair_states(pairset.n_pairs()) {
        let mag: i64 = assignment.iter().map(|a| a.magnetization()).sum();
        if mag != r {
            continue;
        }
        // Expand the product state: each entangled pair doubles the support.
        let mut terms: Vec<(u32, f64)> = vec![(0, 1.0)];
        for (p, a) in pairset.pairs.iter().zip(&assignment) {
            let up_i = 1u32 << p.i;
            let up_j = 1u32 << p.j;
            terms = match a {
                PairState::UpUp => terms
                    .into_iter()
                    .map(|(pat, amp)| (pat | up_i | up_j, amp))
                    .collect(),
                PairState::DownDown => terms,
                PairState::Plus | PairState::Minus => {
                    let sign = if *a == PairState::Plus { 1.0 } else { -1.0 };
                    let mut next = Vec::with_capacity(terms.len() * 2);
                    for (pat, amp) in terms {
                        let w = amp * std::f64::consts::FRAC_1_SQRT_2;
                        next.push((pat | up_i, w));
                        next.push((pat | up_j, sign * w));
                    }
                    next
                }
            };
        }
        let column = terms
            .into_iter()
            .map(|(pat, amp)| {
                basis
                    .index_of(pat)
                    .map(|k| (k, amp))
                    .ok_or_else(|| Error::Internal(format!("pattern {pat:b} not in sector")))
            })
            .collect::<Result<Vec<_>>>()?;
        assignments.push(assignment);
        columns.push(column);
    }
    if columns.len() != basis.dim() {
        return Err(Error::Internal(format!(
            "pair basis has {} sector states, z-basis sector has {}",
            columns.len(),
            basis.dim()
        )));
    }
    Ok(PairBasisTransform {
        assignments,
        columns,
        dim: basis.dim(),
    })
}

fn checked_binomial(n: u64, k: i64) -> u128 {
    if k < 0 || k as u64 > n {
        0
    } else {
        binomial(n as u128, k as u128)
    }
}

/// Number of pair-state configurations with the given occupation numbers:
/// `binom(P, N0) binom(P - N0, N+) 2^N0`.
pub fn config_count(p: usize, n_plus: usize, n_minus: usize, n_zero: usize) -> Result<u128> {
    if n_plus + n_minus + n_zero != p {
        return Err(Error::InvalidDomain(format!(
            "occupations {n_plus}+{n_minus}+{n_zero} != {p} pairs"
        )));
    }
    Ok(checked_binomial(p as u64, n_zero as i64)
        * checked_binomial((p - n_zero) as u64, n_plus as i64)
        * (1u128 << n_zero))
}

/// Number of pair-basis states in the sector with magnetization imbalance
/// `r`: `binom(2P, r + P)`.
pub fn sector_count(p: usize, r: i64) -> Result<u128> {
    if r.unsigned_abs() as usize > p {
        return Err(Error::InvalidDomain(format!("|r| = {} > P = {p}", r.abs())));
    }
    Ok(checked_binomial(2 * p as u64, r + p as i64))
}

/// Number of sector configurations in which a designated pair is entangled:
/// `2 binom(2P - 2, r + P - 1)`.
pub fn entangled_count(p: usize, r: i64) -> Result<u128> {
    if p == 0 {
        return Err(Error::InvalidDomain("need at least one pair".into()));
    }
    if r.unsigned_abs() as usize > p {
        return Err(Error::InvalidDomain(format!("|r| = {} > P = {p}", r.abs())));
    }
    Ok(2 * checked_binomial(2 * p as u64 - 2, r + p as i64 - 1))
}

/// Average entropy (bits) contributed by one cut pair in the sector:
/// `2 (P^2 - r^2) / (4 P^2 - 2 P)`.
pub fn mean_cut_entropy(p: usize, r: i64) -> Result<f64> {
    if p == 0 {
        return Err(Error::InvalidDomain("need at least one pair".into()));
    }
    if r.unsigned_abs() as usize > p {
        return Err(Error::InvalidDomain(format!("|r| = {} > P = {p}", r.abs())));
    }
    let pf = p as f64;
    let rf = r as f64;
    Ok(2.0 * (pf * pf - rf * rf) / (4.0 * pf * pf - 2.0 * pf))
}

/// Pair-model half-chain entropy prediction (bits): mean cut entropy times
/// `2 sum(span) / N` cut pairs per bipartition.
pub fn predicted_entropy(pairset: &PairSet, r: i64) -> Result<f64> {
    let p = pairset.n_pairs();
    let n = pairset.n_spins();
    Ok(mean_cut_entropy(p, r)? * 2.0 * pairset.total_span() as f64 / n as f64)
}

/// Exact window-count variant of the entropy prediction: averages over all
/// `N` cyclic windows of `N/2` sites the number of pairs with exactly one
/// endpoint inside, times the mean cut entropy.
pub fn exact_separated_pair_entropy(pairset: &PairSet, r: i64) -> Result<f64> {
    let p = pairset.n_pairs();
    let n = pairset.n_spins();
    let half = n / 2;
    let mut total_cut = 0usize;
    for start in 0..n {
        let inside = |s: usize| (s + n - start) % n < half;
        total_cut += pairset
            .pairs
            .iter()
            .filter(|pr| inside(pr.i) != inside(pr.j))
            .count();
    }
    Ok(mean_cut_entropy(p, r)? * total_cut as f64 / n as f64)
}

/// Sector-average z-basis participation ratio of pair-basis states: a state
/// with `N0` entangled pairs has z-basis PR `2^N0`.
pub fn predicted_pr_zbasis(p: usize, r: i64) -> Result<f64> {
    let total = sector_count(p, r)?;
    let mut weighted = 0u128;
    for n_zero in 0..=p {
        let rest = p - n_zero;
        let num = rest as i64 + r;
        if num % 2 != 0 || num < 0 || num > 2 * rest as i64 {
            continue;
        }
        let n_plus = (num / 2) as usize;
        let n_minus = rest - n_plus;
        weighted += (1u128 << n_zero) * config_count(p, n_plus, n_minus, n_zero)?;
    }
    Ok(weighted as f64 / total as f64)
}
