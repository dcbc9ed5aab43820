//! Disorder-ensemble orchestration: deterministic per-realization seeding,
//! parallel sweeps over the disorder strength, aggregation of observables and
//! the variance-peak crossover fit.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Inverse, Solve};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::{coupling_matrix, sample_positions};
use crate::observables::{
    local_operator_matrix, mean_half_chain_entropy, mean_level_spacing_ratio,
    mean_thouless_parameter, participation_ratio, IdentityBasis, OperatorKind,
};
use crate::pairmodel::{
    greedy_pairing, pair_basis_transform, predicted_entropy, predicted_pr_zbasis,
};
use crate::spectrum::{build_hamiltonian, default_n_up, diagonalize, sector_basis};

/// Sweep configuration. `w_values` is the disorder grid; every observable is
/// averaged over `n_realizations` independent position samples per grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_spins: usize,
    pub w_values: Vec<f64>,
    pub alpha: f64,
    pub delta: f64,
    pub n_realizations: usize,
    pub master_seed: u64,
    pub dump_spectra: bool,
}

impl EnsembleConfig {
    pub fn new(n_spins: usize, w_values: Vec<f64>, master_seed: u64) -> Self {
        Self {
            n_spins,
            w_values,
            alpha: 6.0,
            delta: -0.73,
            n_realizations: 2000,
            master_seed,
            dump_spectra: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 {
            return Err(Error::InvalidDomain("need at least one realization".into()));
        }
        if self.w_values.is_empty() {
            return Err(Error::InvalidDomain("empty disorder grid".into()));
        }
        if self.w_values.iter().any(|&w| w < 0.5) {
            return Err(Error::InvalidDomain("disorder strengths must be >= 0.5".into()));
        }
        Ok(())
    }
}

/// Default disorder grid: 21 log-spaced points on [0.5, 3.0].
pub fn default_w_grid() -> Vec<f64> {
    log_spaced_grid(0.5, 3.0, 21)
}

pub fn log_spaced_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..steps)
        .map(|k| (llo + (lhi - llo) * k as f64 / (steps - 1) as f64).exp())
        .collect()
}

/// One realization's disorder-averaged observables and pair-model
/// predictions. Field order matches the CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub w: f64,
    pub n: usize,
    pub seed: u64,
    pub lsr: f64,
    pub thouless_v1: f64,
    pub thouless_v2: f64,
    pub thouless_v3: f64,
    pub entropy: f64,
    pub entropy_pred: f64,
    pub pr_z: f64,
    pub pr_pair: f64,
    pub pr_z_pred: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Independent stream seed for one `(disorder index, realization)` cell,
/// stable under any scheduling of the sweep.
pub fn derive_seed(master_seed: u64, w_index: u64, realization: u64) -> u64 {
    splitmix64(splitmix64(master_seed ^ splitmix64(w_index)) ^ realization)
}

/// Record plus the optional eigenvalue dump.
#[derive(Debug, Clone)]
pub struct RealizationOutput {
    pub record: ObservableRecord,
    pub eigenvalues: Option<Vec<f64>>,
}

/// Runs one disorder realization end to end: sample positions, build the
/// sector Hamiltonian, diagonalize, average every observable over the
/// spectrum and attach the pair-model predictions from the same couplings.
pub fn run_realization(
    config: &EnsembleConfig,
    w_index: usize,
    realization: usize,
) -> Result<RealizationOutput> {
    let w = *config
        .w_values
        .get(w_index)
        .ok_or_else(|| Error::InvalidDomain(format!("w index {w_index} out of range")))?;
    let n = config.n_spins;
    let seed = derive_seed(config.master_seed, w_index as u64, realization as u64);
    let sample = sample_positions(n, w, seed)?;
    let coupling = coupling_matrix(&sample, config.alpha, 1.0)?;
    let n_up = default_n_up(n);
    let basis = sector_basis(n, n_up)?;
    let h = build_hamiltonian(&coupling, config.delta, &basis)?;
    let spectrum = diagonalize(h.view())?;

    let lsr = mean_level_spacing_ratio(&spectrum.eigenvalues)?;
    let thouless = |kind| -> Result<f64> {
        let op = local_operator_matrix(kind, &basis);
        Ok(mean_thouless_parameter(&spectrum, &op)?.mean)
    };
    let entropy = mean_half_chain_entropy(&spectrum, &basis)?;

    let pairset = greedy_pairing(&coupling)?;
    let r = n_up as i64 - (n / 2) as i64;
    let transform = pair_basis_transform(&pairset, &basis)?;
    let zbasis = IdentityBasis(basis.dim());
    let mut pr_z = 0.0;
    let mut pr_pair = 0.0;
    for k in 0..spectrum.dim() {
        let state = spectrum.eigenvectors.column(k);
        pr_z += participation_ratio(state, &zbasis)?;
        pr_pair += participation_ratio(state, &transform)?;
    }
    pr_z /= spectrum.dim() as f64;
    pr_pair /= spectrum.dim() as f64;

    let record = ObservableRecord {
        w,
        n,
        seed,
        lsr,
        thouless_v1: thouless(OperatorKind::V1)?,
        thouless_v2: thouless(OperatorKind::V2)?,
        thouless_v3: thouless(OperatorKind::V3)?,
        entropy,
        entropy_pred: predicted_entropy(&pairset, r)?,
        pr_z,
        pr_pair,
        pr_z_pred: predicted_pr_zbasis(pairset.n_pairs(), r)?,
    };
    let eigenvalues = config.dump_spectra.then_some(spectrum.eigenvalues);
    Ok(RealizationOutput {
        record,
        eigenvalues,
    })
}

/// Mean and standard error of one observable column.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeanWithError {
    pub mean: f64,
    pub std_error: f64,
}

fn summarize(values: &[f64]) -> MeanWithError {
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let std_error = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        0.0
    };
    MeanWithError { mean, std_error }
}

/// Aggregated statistics for one disorder grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WStats {
    pub w: f64,
    pub count: usize,
    pub skipped: usize,
    pub lsr: MeanWithError,
    pub thouless_v1: MeanWithError,
    pub thouless_v2: MeanWithError,
    pub thouless_v3: MeanWithError,
    pub entropy: MeanWithError,
    pub entropy_pred: MeanWithError,
    pub pr_z: MeanWithError,
    pub pr_pair: MeanWithError,
    pub pr_z_pred: MeanWithError,
    /// Sample variance of the half-chain entropy across realizations.
    pub entropy_variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub per_w: Vec<WStats>,
}

/// Aggregates per-realization records (already grouped per w grid point)
/// into means, standard errors and the entropy variance.
pub fn aggregate(w: f64, records: &[&ObservableRecord], skipped: usize) -> WStats {
    let column = |f: fn(&ObservableRecord) -> f64| -> Vec<f64> {
        records.iter().map(|r| f(r)).collect()
    };
    let entropies = column(|r| r.entropy);
    let entropy = summarize(&entropies);
    let entropy_variance = if entropies.len() > 1 {
        let m = entropy.mean;
        entropies.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (entropies.len() - 1) as f64
    } else {
        0.0
    };
    WStats {
        w,
        count: records.len(),
        skipped,
        lsr: summarize(&column(|r| r.lsr)),
        thouless_v1: summarize(&column(|r| r.thouless_v1)),
        thouless_v2: summarize(&column(|r| r.thouless_v2)),
        thouless_v3: summarize(&column(|r| r.thouless_v3)),
        entropy,
        entropy_pred: summarize(&column(|r| r.entropy_pred)),
        pr_z: summarize(&column(|r| r.pr_z)),
        pr_pair: summarize(&column(|r| r.pr_pair)),
        pr_z_pred: summarize(&column(|r| r.pr_z_pred)),
        entropy_variance,
    }
}

/// Completed sweep: records in deterministic `(w index, realization)` order,
/// skipped-cell log and per-w statistics.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub records: Vec<ObservableRecord>,
    pub spectra: Vec<(usize, usize, Vec<f64>)>,
    pub skipped: Vec<(usize, usize, String)>,
    pub stats: EnsembleStats,
}

/// Runs the full sweep, parallelizing over independent realizations. Results
/// are reduced in `(w index, realization)` key order, so the output is
/// identical for any worker count. Aborts if more than 1% of the
/// realizations of any grid point fail.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleRun> {
    config.validate()?;
    let nw = config.w_values.len();
    let nr = config.n_realizations;
    let cells: Vec<(usize, usize)> = (0..nw)
        .flat_map(|wi| (0..nr).map(move |ri| (wi, ri)))
        .collect();
    let outcomes: Vec<(usize, usize, Result<RealizationOutput>)> = cells
        .into_par_iter()
        .map(|(wi, ri)| (wi, ri, run_realization(config, wi, ri)))
        .collect();

    let mut records = Vec::with_capacity(nw * nr);
    let mut spectra = Vec::new();
    let mut skipped = Vec::new();
    let mut skip_count = vec![0usize; nw];
    for (wi, ri, outcome) in outcomes {
        match outcome {
            Ok(out) => {
                if let Some(e) = out.eigenvalues {
                    spectra.push((wi, ri, e));
                }
                records.push(out.record);
            }
            Err(e) => {
                skip_count[wi] += 1;
                skipped.push((wi, ri, e.to_string()));
            }
        }
    }
    for (wi, &skips) in skip_count.iter().enumerate() {
        if skips * 100 > nr {
            return Err(Error::Ensemble(format!(
                "{skips} of {nr} realizations failed at w = {} (> 1%): {}",
                config.w_values[wi],
                skipped
                    .iter()
                    .find(|(i, _, _)| *i == wi)
                    .map(|(_, _, m)| m.as_str())
                    .unwrap_or("unknown")
            )));
        }
    }
    let per_w = config
        .w_values
        .iter()
        .enumerate()
        .map(|(wi, &w)| {
            let group: Vec<&ObservableRecord> =
                records.iter().filter(|r| r.w == w && r.n == config.n_spins).collect();
            aggregate(w, &group, skip_count[wi])
        })
        .collect();
    Ok(EnsembleRun {
        records,
        spectra,
        skipped,
        stats: EnsembleStats { per_w },
    })
}

/// Least-squares quadratic fit around the discrete maximum of the entropy
/// variance; returns the vertex location and its standard error.
pub fn variance_peak_fit(
    w_values: &[f64],
    variances: &[f64],
    window: usize,
) -> Result<(f64, f64)> {
    if w_values.len() != variances.len() {
        return Err(Error::InvalidDomain("grid/variance length mismatch".into()));
    }
    let len = w_values.len();
    let peak = variances
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, _)| k)
        .ok_or_else(|| Error::InvalidDomain("empty variance curve".into()))?;
    let start = peak.saturating_sub(window / 2).min(len.saturating_sub(window));
    let end = (start + window).min(len);
    let m = end - start;
    if m < 3 {
        return Err(Error::FitFailure(format!(
            "only {m} points around the discrete maximum, need >= 3"
        )));
    }
    let xs = &w_values[start..end];
    let ys = &variances[start..end];
    let x0 = xs.iter().sum::<f64>() / m as f64;

    // Normal equations for y = c0 + c1 (x - x0) + c2 (x - x0)^2.
    let mut xtx: Array2<f64> = Array2::zeros((3, 3));
    let mut xty: Array1<f64> = Array1::zeros(3);
    for (&x, &y) in xs.iter().zip(ys) {
        let t = x - x0;
        let row = [1.0, t, t * t];
        for a in 0..3 {
            for b in 0..3 {
                xtx[[a, b]] += row[a] * row[b];
            }
            xty[a] += row[a] * y;
        }
    }
    let coeff = xtx
        .solve(&xty)
        .map_err(|e| Error::FitFailure(format!("singular normal equations: {e}")))?;
    let (c1, c2) = (coeff[1], coeff[2]);
    if c2 >= 0.0 {
        return Err(Error::FitFailure(format!(
            "fitted parabola opens upward (curvature {c2})"
        )));
    }
    let vertex = x0 - c1 / (2.0 * c2);
    let (lo, hi) = (xs[0], xs[m - 1]);
    if vertex < lo || vertex > hi {
        return Err(Error::FitFailure(format!(
            "vertex {vertex} outside fit window [{lo}, {hi}]"
        )));
    }

    // Delta-method standard error from the fit covariance.
    let uncertainty = if m > 3 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let t = x - x0;
                let fit = coeff[0] + c1 * t + c2 * t * t;
                (y - fit).powi(2)
            })
            .sum();
        let sigma2 = rss / (m - 3) as f64;
        let cov = xtx
            .inv()
            .map_err(|e| Error::FitFailure(format!("covariance inversion: {e}")))?;
        let g1 = -1.0 / (2.0 * c2);
        let g2 = c1 / (2.0 * c2 * c2);
        let var = sigma2
            * (g1 * g1 * cov[[1, 1]] + 2.0 * g1 * g2 * cov[[1, 2]] + g2 * g2 * cov[[2, 2]]);
        var.max(0.0).sqrt()
    } else {
        0.0
    };
    Ok((vertex, uncertainty))
}

/// Writes records as CSV with the fixed schema header.
pub fn write_records_csv<W: Write>(records: &[ObservableRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for record in records {
        out.serialize(record)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(reader: R) -> Result<Vec<ObservableRecord>> {
    let mut input = csv::Reader::from_reader(reader);
    let mut records = Vec::new();
    for row in input.deserialize() {
        records.push(row?);
    }
    Ok(records)
}

#[derive(Serialize)]
struct JsonMeta<'a> {
    config: &'a EnsembleConfig,
    code_version: &'a str,
    skipped: &'a [(usize, usize, String)],
}

/// JSON mirror of the CSV output with a metadata header.
pub fn write_records_json<W: Write>(
    config: &EnsembleConfig,
    run: &EnsembleRun,
    writer: W,
) -> Result<()> {
    #[derive(Serialize)]
    struct Output<'a> {
        meta: JsonMeta<'a>,
        records: &'a [ObservableRecord],
        stats: &'a EnsembleStats,
    }
    serde_json::to_writer_pretty(
        writer,
        &Output {
            meta: JsonMeta {
                config,
                code_version: env!("CARGO_PKG_VERSION"),
                skipped: &run.skipped,
            },
            records: &run.records,
            stats: &run.stats,
        },
    )?;
    Ok(())
}

/// Per-realization eigenvalue dump: `realization_index,level_index,energy`.
pub fn write_spectra_csv<W: Write>(
    spectra: &[(usize, usize, Vec<f64>)],
    w_index: usize,
    writer: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["realization_index", "level_index", "energy"])?;
    for (wi, ri, eigenvalues) in spectra {
        if *wi != w_index {
            continue;
        }
        for (li, e) in eigenvalues.iter().enumerate() {
            out.write_record([ri.to_string(), li.to_string(), format!("{e}")])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn seed_derivation_is_stable_and_spread() {
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
        let mut seen = std::collections::HashSet::new();
        for wi in 0..20 {
            for ri in 0..50 {
                assert!(seen.insert(derive_seed(42, wi, ri)));
            }
        }
    }

    fn small_config() -> EnsembleConfig {
        let mut c = EnsembleConfig::new(6, vec![0.8, 1.6], 7);
        c.n_realizations = 3;
        c
    }

    #[test]
    fn realization_is_deterministic() {
        let config = small_config();
        let a = run_realization(&config, 0, 1).unwrap();
        let b = run_realization(&config, 0, 1).unwrap();
        assert_eq!(a.record, b.record);
    }

    #[test]
    fn ordered_lattice_produces_translation_invariant_couplings() {
        let config = EnsembleConfig::new(4, vec![0.5], 3);
        let sample = sample_positions(4, 0.5, derive_seed(3, 0, 0)).unwrap();
        let coupling = coupling_matrix(&sample, 6.0, 1.0).unwrap();
        // Regular ring: J depends only on the index distance.
        for a in 0..4 {
            for b in (a + 1)..4 {
                let d = (a as i64 - b as i64).unsigned_abs().min(4 - (b - a) as u64);
                let expect = 1.0 / (d as f64).powi(6);
                assert_relative_eq!(coupling.j[[a, b]], expect, epsilon = 1e-12);
            }
        }
        let _ = config;
    }

    #[test]
    fn ensemble_stats_for_single_realization() {
        let mut config = EnsembleConfig::new(4, vec![1.0], 11);
        config.n_realizations = 1;
        let run = run_ensemble(&config).unwrap();
        assert_eq!(run.records.len(), 1);
        let stats = &run.stats.per_w[0];
        assert_eq!(stats.count, 1);
        assert_eq!(stats.lsr.std_error, 0.0);
        assert_eq!(stats.entropy_variance, 0.0);
        assert_relative_eq!(stats.lsr.mean, run.records[0].lsr);
    }

    #[test]
    fn constant_observable_has_zero_variance() {
        let record = ObservableRecord {
            w: 1.0,
            n: 4,
            seed: 0,
            lsr: 0.4,
            thouless_v1: -1.0,
            thouless_v2: -1.0,
            thouless_v3: -1.0,
            entropy: 0.7,
            entropy_pred: 0.7,
            pr_z: 2.0,
            pr_pair: 1.0,
            pr_z_pred: 2.0,
        };
        let group = vec![&record, &record, &record];
        let stats = aggregate(1.0, &group, 0);
        assert!(stats.entropy_variance.abs() < 1e-30);
        assert!(stats.lsr.std_error.abs() < 1e-15);
        assert_eq!(stats.count, 3);
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let config = small_config();
        let run = run_ensemble(&config).unwrap();
        let mut buffer = Vec::new();
        write_records_csv(&run.records, &mut buffer).unwrap();
        let text = String::from_utf8(buffer.clone()).unwrap();
        assert!(text.starts_with(
            "w,n,seed,lsr,thouless_v1,thouless_v2,thouless_v3,entropy,entropy_pred,pr_z,pr_pair,pr_z_pred\n"
        ));
        let back = read_records_csv(buffer.as_slice()).unwrap();
        assert_eq!(back, run.records);
    }

    #[test]
    fn ensemble_output_is_deterministic() {
        let config = small_config();
        let a = run_ensemble(&config).unwrap();
        let b = run_ensemble(&config).unwrap();
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        write_records_csv(&a.records, &mut csv_a).unwrap();
        write_records_csv(&b.records, &mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn peak_fit_recovers_exact_parabola() {
        let xs: Vec<f64> = (0..5).map(|k| 0.5 + 0.1 * k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - (x - 0.7).powi(2)).collect();
        let (w_star, err) = variance_peak_fit(&xs, &ys, 5).unwrap();
        assert_relative_eq!(w_star, 0.7, epsilon = 1e-10);
        assert_relative_eq!(err, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn peak_fit_tolerates_small_noise() {
        let xs: Vec<f64> = (0..9).map(|k| 0.4 + 0.05 * k as f64).collect();
        let mut state = 0x12345u64;
        let mut noise = || {
            state = splitmix64(state);
            (state as f64 / u64::MAX as f64 - 0.5) * 2e-3
        };
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - (x - 0.61).powi(2) + noise()).collect();
        let (w_star, _) = variance_peak_fit(&xs, &ys, 5).unwrap();
        assert!((w_star - 0.61).abs() < 1e-2, "w_star = {w_star}");
    }

    #[test]
    fn peak_fit_rejects_upward_parabola() {
        let xs: Vec<f64> = (0..5).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x - 2.0).powi(2)).collect();
        match variance_peak_fit(&xs, &ys, 5) {
            Err(Error::FitFailure(_)) => {}
            other => panic!("expected fit failure, got {other:?}"),
        }
    }

    #[test]
    fn default_grid_shape() {
        let grid = default_w_grid();
        assert_eq!(grid.len(), 21);
        assert_relative_eq!(grid[0], 0.5);
        assert_relative_eq!(grid[20], 3.0);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }
}
