use std::time::Instant;

use pairloc_core::geometry::{coupling_matrix, sample_positions};
use pairloc_core::observables::{
    local_operator_matrix, mean_half_chain_entropy, mean_thouless_parameter,
    participation_ratio, IdentityBasis, OperatorKind,
};
use pairloc_core::pairmodel::{greedy_pairing, pair_basis_transform};
use pairloc_core::spectrum::{build_hamiltonian, default_n_up, diagonalize, sector_basis};

fn main() {
    let n = 14;
    let sample = sample_positions(n, 2.0, 1).unwrap();
    let coupling = coupling_matrix(&sample, 6.0, 1.0).unwrap();
    let basis = sector_basis(n, default_n_up(n)).unwrap();

    let t = Instant::now();
    let h = build_hamiltonian(&coupling, -0.73, &basis).unwrap();
    println!("build: {:?}", t.elapsed());

    let t = Instant::now();
    let spectrum = diagonalize(h.view()).unwrap();
    println!("diag: {:?}", t.elapsed());

    let t = Instant::now();
    for kind in [OperatorKind::V1, OperatorKind::V2, OperatorKind::V3] {
        let op = local_operator_matrix(kind, &basis);
        mean_thouless_parameter(&spectrum, &op).unwrap();
    }
    println!("thouless x3: {:?}", t.elapsed());

    let t = Instant::now();
    let s = mean_half_chain_entropy(&spectrum, &basis).unwrap();
    println!("entropy: {:?} (S = {s:.4})", t.elapsed());

    let pairset = greedy_pairing(&coupling).unwrap();
    let t = Instant::now();
    let transform = pair_basis_transform(&pairset, &basis).unwrap();
    println!("transform: {:?}", t.elapsed());

    let zbasis = IdentityBasis(basis.dim());
    let t = Instant::now();
    let mut acc = 0.0;
    for k in 0..basis.dim() {
        acc += participation_ratio(spectrum.eigenvectors.column(k), &zbasis).unwrap();
    }
    println!("pr_z: {:?} ({:.3})", t.elapsed(), acc / basis.dim() as f64);

    let t = Instant::now();
    let mut acc = 0.0;
    for k in 0..basis.dim() {
        acc += participation_ratio(spectrum.eigenvectors.column(k), &transform).unwrap();
    }
    println!("pr_pair: {:?} ({:.3})", t.elapsed(), acc / basis.dim() as f64);
}
