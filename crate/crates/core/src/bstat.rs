//! B-statistic: a Bayes factor for association of a SNP set, with
//! shifted chi-square or permutation calibration.
//!
//! For a set of `M` SNPs
//!
//! ```text
//! B = ln P(D_M) + ln[P(U_M) + Π_j P(U_j)] − ln[P(D_M,U_M) + Π_j P(D_j,U_j)]
//! ```
//!
//! where every factor is a multinomial–Dirichlet marginal. Under the null,
//! `2·(B − shift)` is approximately chi-square with `3^M − 1` degrees of
//! freedom, and the shift is proportional to
//! `−(3^M − 1)·ln(N_d·N_u / (N_d + N_u))`.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genotype::GenotypeDataset;
use crate::likelihood::DirichletConfig;
use crate::mcmc::PosteriorSummary;
use crate::model::ModelEvaluator;
use crate::sim::hwe_genotype_frequencies;
use crate::stats::{chi_square_quantile, chi_square_sf, log_add_exp, median};

pub const MIN_PERMUTATIONS: usize = 500;
/// Allele frequency of the simulated null used to fit the analytic shift constant.
pub const SHIFT_FIT_MAF: f64 = 0.3;
pub const SHIFT_FIT_REPLICATES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalibrationMode {
    Analytic,
    Permutation,
}

impl CalibrationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationMode::Analytic => "analytic",
            CalibrationMode::Permutation => "permutation",
        }
    }
}

/// How to turn a B value into a p-value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Calibration {
    /// Shifted chi-square; `constant = None` fits `c` on a simulated null.
    Analytic { constant: Option<f64>, seed: u64 },
    /// Case/control label permutation.
    Permutation { n_perm: usize, seed: u64 },
}

impl Calibration {
    pub fn mode(&self) -> CalibrationMode {
        match self {
            Calibration::Analytic { .. } => CalibrationMode::Analytic,
            Calibration::Permutation { .. } => CalibrationMode::Permutation,
        }
    }
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration::Permutation {
            n_perm: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BStatResult {
    pub snp_set: Vec<usize>,
    pub b_value: f64,
    pub df: f64,
    pub shift: f64,
    pub p_value: f64,
    pub calibration: CalibrationMode,
    /// `p_value < alpha / n_tests` when screened; `false` otherwise.
    pub significant: bool,
}

impl BStatResult {
    pub fn order(&self) -> usize {
        self.snp_set.len()
    }
}

/// `3^M − 1`.
pub fn degrees_of_freedom(m: usize) -> f64 {
    3f64.powi(m as i32) - 1.0
}

fn validate(n_snps: usize, snps: &[usize], max_order: usize) -> Result<Vec<usize>> {
    if snps.is_empty() {
        return Err(Error::invalid("B-statistic needs at least one SNP"));
    }
    if snps.len() > max_order {
        return Err(Error::Constraint(format!(
            "set of {} SNPs exceeds the maximum order {max_order}",
            snps.len()
        )));
    }
    let mut sorted = snps.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("duplicate SNP index in set"));
    }
    if let Some(&bad) = sorted.iter().find(|&&s| s >= n_snps) {
        return Err(Error::invalid(format!("SNP index {bad} out of range")));
    }
    Ok(sorted)
}

fn b_value(eval: &mut ModelEvaluator<'_>, sorted: &[usize]) -> f64 {
    let joint = eval.set_marginals(sorted);
    let (mut indep_u, mut indep_du) = (0.0, 0.0);
    for &j in sorted {
        let m = eval.set_marginals(&[j]);
        indep_u += m.controls;
        indep_du += m.both;
    }
    joint.cases + log_add_exp(joint.controls, indep_u) - log_add_exp(joint.both, indep_du)
}

/// B value of a SNP set (natural log scale).
pub fn bstat(
    dataset: &GenotypeDataset,
    snps: &[usize],
    dirichlet: &DirichletConfig,
    max_order: usize,
) -> Result<f64> {
    let sorted = validate(dataset.n_snps(), snps, max_order)?;
    let mut eval = ModelEvaluator::new(dataset, *dirichlet);
    Ok(b_value(&mut eval, &sorted))
}

/// `−c·(3^M − 1)·ln(N_d·N_u / (N_d + N_u))`.
pub fn analytic_shift(n_cases: usize, n_controls: usize, m: usize, constant: f64) -> Result<f64> {
    if n_cases == 0 || n_controls == 0 {
        return Err(Error::invalid(
            "analytic calibration needs cases and controls",
        ));
    }
    let (d, u) = (n_cases as f64, n_controls as f64);
    Ok(-constant * degrees_of_freedom(m) * (d * u / (d + u)).ln())
}

/// Shift that puts the median of `2·(B − shift)` on the chi-square median.
pub fn median_matched_shift(null: &[f64], df: f64) -> f64 {
    median(null) - chi_square_quantile(0.5, df) / 2.0
}

/// Columns of `snps` with individuals reordered by `order` (first `n_cases` become cases).
fn permuted_subset(dataset: &GenotypeDataset, snps: &[usize], order: &[usize]) -> GenotypeDataset {
    let n = dataset.n_individuals();
    let mut genotypes = Vec::with_capacity(n * snps.len());
    for &s in snps {
        let col = dataset.column(s);
        genotypes.extend(order.iter().map(|&i| col[i]));
    }
    GenotypeDataset::from_columns(
        snps.iter().map(|&s| dataset.snp_ids()[s].clone()).collect(),
        snps.iter().map(|&s| dataset.positions()[s]).collect(),
        dataset.n_cases(),
        dataset.n_controls(),
        genotypes,
    )
}

/// B values of `snps` under `n_perm` case/control label permutations.
///
/// Replicate `r` draws from stream `r` of a generator seeded with `seed`, so
/// the result does not depend on the number of worker threads.
pub fn permutation_null(
    dataset: &GenotypeDataset,
    snps: &[usize],
    dirichlet: &DirichletConfig,
    max_order: usize,
    n_perm: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_perm < MIN_PERMUTATIONS {
        return Err(Error::invalid(format!(
            "at least {MIN_PERMUTATIONS} permutations are required, got {n_perm}"
        )));
    }
    if dataset.n_cases() == 0 || dataset.n_controls() == 0 {
        return Err(Error::invalid("permutation needs both cases and controls"));
    }
    let sorted = validate(dataset.n_snps(), snps, max_order)?;
    let local: Vec<usize> = (0..sorted.len()).collect();
    Ok((0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut order: Vec<usize> = (0..dataset.n_individuals()).collect();
            order.shuffle(&mut rng);
            let sub = permuted_subset(dataset, &sorted, &order);
            let mut eval = ModelEvaluator::new(&sub, *dirichlet);
            b_value(&mut eval, &local)
        })
        .collect())
}

/// Add-one upper-tail p-value of `observed` against a null sample.
pub fn empirical_p_value(observed: f64, null: &[f64]) -> f64 {
    let exceed = null.iter().filter(|&&b| b >= observed).count();
    (1 + exceed) as f64 / (null.len() + 1) as f64
}

fn null_dataset(
    n_cases: usize,
    n_controls: usize,
    m: usize,
    maf: f64,
    rng: &mut ChaCha8Rng,
) -> GenotypeDataset {
    let g = hwe_genotype_frequencies(maf);
    let n = n_cases + n_controls;
    let mut genotypes = Vec::with_capacity(n * m);
    for _ in 0..n * m {
        let u: f64 = rng.random();
        genotypes.push(if u < g[0] {
            0
        } else if u < g[0] + g[1] {
            1
        } else {
            2
        });
    }
    GenotypeDataset::from_columns(
        (0..m).map(|j| format!("null{j}")).collect(),
        (1..=m as u64).collect(),
        n_cases,
        n_controls,
        genotypes,
    )
}

type ShiftKey = (usize, usize, usize, u64, u64);

fn shift_cache() -> &'static Mutex<HashMap<ShiftKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<ShiftKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Fits the analytic shift constant `c` for `(N_d, N_u, M, ρ)`.
///
/// B values of independent SNPs at allele frequency 0.3 are simulated and `c`
/// is chosen so that the median of `2·(B − shift)` equals the chi-square
/// median. Results are cached per process.
pub fn fit_shift_constant(
    n_cases: usize,
    n_controls: usize,
    m: usize,
    dirichlet: &DirichletConfig,
    seed: u64,
) -> Result<f64> {
    if n_cases == 0 || n_controls == 0 {
        return Err(Error::invalid("fitting the shift needs cases and controls"));
    }
    let key = (n_cases, n_controls, m, dirichlet.rho().to_bits(), seed);
    if let Some(&c) = shift_cache().lock().expect("cache lock").get(&key) {
        return Ok(c);
    }
    let snps: Vec<usize> = (0..m).collect();
    let null: Vec<f64> = (0..SHIFT_FIT_REPLICATES)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let d = null_dataset(n_cases, n_controls, m, SHIFT_FIT_MAF, &mut rng);
            let mut eval = ModelEvaluator::new(&d, *dirichlet);
            b_value(&mut eval, &snps)
        })
        .collect();
    let shift = median_matched_shift(&null, degrees_of_freedom(m));
    let unit = analytic_shift(n_cases, n_controls, m, 1.0)?;
    let c = shift / unit;
    shift_cache().lock().expect("cache lock").insert(key, c);
    Ok(c)
}

/// B value, shift and p-value for one set.
pub fn calibrated_bstat(
    dataset: &GenotypeDataset,
    snps: &[usize],
    dirichlet: &DirichletConfig,
    max_order: usize,
    calibration: &Calibration,
) -> Result<BStatResult> {
    let sorted = validate(dataset.n_snps(), snps, max_order)?;
    let mut eval = ModelEvaluator::new(dataset, *dirichlet);
    let b = b_value(&mut eval, &sorted);
    let m = sorted.len();
    let df = degrees_of_freedom(m);
    let (shift, p_value) = match *calibration {
        Calibration::Analytic { constant, seed } => {
            let c = match constant {
                Some(c) => c,
                None => {
                    fit_shift_constant(dataset.n_cases(), dataset.n_controls(), m, dirichlet, seed)?
                }
            };
            let shift = analytic_shift(dataset.n_cases(), dataset.n_controls(), m, c)?;
            (shift, chi_square_sf(2.0 * (b - shift), df))
        }
        Calibration::Permutation { n_perm, seed } => {
            let null = permutation_null(dataset, &sorted, dirichlet, max_order, n_perm, seed)?;
            (median_matched_shift(&null, df), empirical_p_value(b, &null))
        }
    };
    Ok(BStatResult {
        snp_set: sorted,
        b_value: b,
        df,
        shift,
        p_value,
        calibration: calibration.mode(),
        significant: false,
    })
}

/// Number of sets of size `m` among `l` SNPs, the default Bonferroni divisor.
pub fn default_n_tests(l: usize, m: usize) -> f64 {
    (0..m).fold(1.0, |acc, k| acc * (l - k) as f64 / (k + 1) as f64)
}

/// Follow-up tests chosen from a posterior summary.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenConfig {
    pub posterior_threshold: f64,
    pub alpha: f64,
    /// Bonferroni divisor per set size; `None` uses `C(L, M)`.
    pub n_tests: Option<f64>,
    pub calibration: Calibration,
}

/// Tests every SNP with `P(assoc) ≥ threshold` marginally and every sampled
/// interaction set with frequency `≥ threshold` jointly.
pub fn screen_candidates(
    dataset: &GenotypeDataset,
    summary: &PosteriorSummary,
    dirichlet: &DirichletConfig,
    max_order: usize,
    config: &ScreenConfig,
) -> Result<Vec<BStatResult>> {
    let t = config.posterior_threshold;
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!(
            "posterior threshold {t} not in (0, 1)"
        )));
    }
    if summary.n_snps() != dataset.n_snps() {
        return Err(Error::invalid(
            "summary and dataset cover different SNP counts",
        ));
    }
    let mut sets: Vec<Vec<usize>> = (0..summary.n_snps())
        .filter(|&i| summary.assoc_posterior[i] >= t)
        .map(|i| vec![i])
        .collect();
    for (set, &f) in &summary.interaction_sets {
        if f >= t && !sets.contains(set) {
            sets.push(set.clone());
        }
    }
    sets.iter()
        .map(|s| {
            let mut r = calibrated_bstat(dataset, s, dirichlet, max_order, &config.calibration)?;
            let n = config
                .n_tests
                .unwrap_or_else(|| default_n_tests(dataset.n_snps(), s.len()));
            r.significant = r.p_value < config.alpha / n;
            Ok(r)
        })
        .collect()
}
