//! Multinomial–Dirichlet marginal likelihood of diplotypes within a SNP block.
//!
//! For a block of `w` SNPs every one of the `3^w` possible diplotypes gets the
//! pseudo-count `alpha_h = rho / 3^w`, so the total prior mass is `rho` for
//! every width. Only observed diplotypes contribute to the marginal, which
//! keeps evaluation proportional to the number of individuals.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;

use std::hash::BuildHasherDefault;
use std::ops::Range;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::genotype::GenotypeDataset;

/// Hash map with a fixed hasher so iteration order (and therefore any
/// floating-point sum over entries) is reproducible run to run.
pub(crate) type DetHashMap<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;

pub const DEFAULT_RHO: f64 = 1.5;

/// Natural log of the gamma function.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Dirichlet prior mass shared by all block widths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirichletConfig {
    rho: f64,
    ln_rho: f64,
    ln_gamma_rho: f64,
}

impl DirichletConfig {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::invalid(format!("rho must be positive, got {rho}")));
        }
        Ok(DirichletConfig {
            rho,
            ln_rho: rho.ln(),
            ln_gamma_rho: ln_gamma(rho),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `ln(rho / 3^width)`, exact even where the pseudo-count itself underflows.
    pub fn ln_alpha(&self, width: usize) -> f64 {
        self.ln_rho - width as f64 * 3f64.ln()
    }

    /// Per-diplotype pseudo-count; zero once it underflows (width beyond ~650).
    pub fn alpha(&self, width: usize) -> f64 {
        self.ln_alpha(width).exp()
    }

    /// Log marginal probability from diplotype occupancy counts of a `width`-SNP block.
    ///
    /// Zero counts are skipped: they contribute `ln Γ(α)/Γ(α) = 0`.
    pub fn log_marginal_from_counts<I>(&self, width: usize, counts: I) -> f64
    where
        I: IntoIterator<Item = u64>,
    {
        if width == 0 {
            // A single (empty) diplotype that everyone shares.
            return 0.0;
        }
        let ln_alpha = self.ln_alpha(width);
        let alpha = ln_alpha.exp();
        let ln_gamma_1a = ln_gamma(1.0 + alpha);
        let mut total = 0u64;
        let mut acc = 0.0;
        for c in counts {
            if c == 0 {
                continue;
            }
            total += c;
            // ln Γ(c+α) − ln Γ(α) = ln α + ln Γ(c+α) − ln Γ(1+α)
            acc += ln_alpha + ln_gamma(c as f64 + alpha) - ln_gamma_1a;
        }
        if total == 0 {
            return 0.0;
        }
        acc + self.ln_gamma_rho - ln_gamma(total as f64 + self.rho)
    }
}

impl Default for DirichletConfig {
    fn default() -> Self {
        DirichletConfig::new(DEFAULT_RHO).expect("default rho is valid")
    }
}

/// Which individuals populate a diplotype table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cohort {
    Cases,
    Controls,
    Both,
}

/// A genotype sequence over a SNP set, packed two bits per SNP.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiplotypeKey {
    width: u32,
    words: SmallVec<[u64; 2]>,
}

impl DiplotypeKey {
    pub fn from_codes(codes: &[u8]) -> Self {
        let mut words: SmallVec<[u64; 2]> = SmallVec::from_elem(0, codes.len().div_ceil(32));
        for (k, &g) in codes.iter().enumerate() {
            debug_assert!(g <= 2);
            words[k / 32] |= (g as u64) << (2 * (k % 32));
        }
        DiplotypeKey {
            width: codes.len() as u32,
            words,
        }
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn code(&self, k: usize) -> u8 {
        ((self.words[k / 32] >> (2 * (k % 32))) & 3) as u8
    }

    pub fn codes(&self) -> Vec<u8> {
        (0..self.width()).map(|k| self.code(k)).collect()
    }
}

/// Sparse table of observed diplotypes with case and control counts.
#[derive(Clone, Debug, Default)]
pub struct DiplotypeCounts {
    width: usize,
    entries: DetHashMap<DiplotypeKey, (u64, u64)>,
    n_total: u64,
    m_total: u64,
}

impl DiplotypeCounts {
    pub fn new(width: usize) -> Self {
        DiplotypeCounts {
            width,
            ..Default::default()
        }
    }

    /// Counts diplotypes over an arbitrary SNP list (in the given order).
    pub fn from_snps(dataset: &GenotypeDataset, snps: &[usize], who: Cohort) -> Result<Self> {
        if let Some(&bad) = snps.iter().find(|&&j| j >= dataset.n_snps()) {
            return Err(Error::invalid(format!(
                "SNP index {bad} out of range for {} SNPs",
                dataset.n_snps()
            )));
        }
        let mut table = DiplotypeCounts::new(snps.len());
        let columns: Vec<&[u8]> = snps.iter().map(|&j| dataset.column(j)).collect();
        let nd = dataset.n_cases();
        let individuals = match who {
            Cohort::Cases => 0..nd,
            Cohort::Controls => nd..dataset.n_individuals(),
            Cohort::Both => 0..dataset.n_individuals(),
        };
        let mut codes = vec![0u8; snps.len()];
        for i in individuals {
            for (c, col) in codes.iter_mut().zip(&columns) {
                *c = col[i];
            }
            let key = DiplotypeKey::from_codes(&codes);
            if i < nd {
                table.add(key, 1, 0);
            } else {
                table.add(key, 0, 1);
            }
        }
        Ok(table)
    }

    /// Adds `n` case and `m` control observations of one diplotype.
    pub fn add(&mut self, key: DiplotypeKey, n: u64, m: u64) {
        assert_eq!(key.width(), self.width, "diplotype width mismatch");
        if n == 0 && m == 0 {
            return;
        }
        let e = self.entries.entry(key).or_insert((0, 0));
        e.0 += n;
        e.1 += m;
        self.n_total += n;
        self.m_total += m;
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn m_total(&self) -> u64 {
        self.m_total
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, key: &DiplotypeKey) -> Option<(u64, u64)> {
        self.entries.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DiplotypeKey, &(u64, u64))> {
        self.entries.iter()
    }
}

/// Diplotype table for the contiguous block `[a, b)`.
pub fn count_diplotypes(
    dataset: &GenotypeDataset,
    block: Range<usize>,
    who: Cohort,
) -> Result<DiplotypeCounts> {
    if block.start >= block.end || block.end > dataset.n_snps() {
        return Err(Error::invalid(format!(
            "block {}..{} is empty or exceeds {} SNPs",
            block.start,
            block.end,
            dataset.n_snps()
        )));
    }
    let snps: Vec<usize> = block.collect();
    DiplotypeCounts::from_snps(dataset, &snps, who)
}

/// `ln P` of the counts under the multinomial–Dirichlet model, pooling case
/// and control counts per diplotype.
pub fn log_marginal(counts: &DiplotypeCounts, config: &DirichletConfig) -> f64 {
    config.log_marginal_from_counts(counts.width, counts.entries.values().map(|&(n, m)| n + m))
}

/// `ln P(full) − ln P(sub)`: the probability of the SNPs outside the subset
/// given the subset, both tables counted over the same individuals.
pub fn log_conditional(
    full: &DiplotypeCounts,
    sub: &DiplotypeCounts,
    config: &DirichletConfig,
) -> Result<f64> {
    if full.n_total != sub.n_total || full.m_total != sub.m_total {
        return Err(Error::invalid(format!(
            "tables count different individuals ({}+{} vs {}+{})",
            full.n_total, full.m_total, sub.n_total, sub.m_total
        )));
    }
    if sub.width > full.width {
        return Err(Error::invalid("subset table is wider than the full table"));
    }
    // An empty subset is the single shared empty diplotype: probability one.
    Ok(log_marginal(full, config) - log_marginal(sub, config))
}

/// Marginals of one SNP set for cases, controls and both, plus the number of
/// distinct diplotypes in the combined cohort.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetMarginals {
    pub cases: f64,
    pub controls: f64,
    pub both: f64,
    pub distinct: usize,
}

/// Reusable buffers for diplotype class counting.
///
/// Individuals are partitioned into classes (one per distinct diplotype) by
/// refining a label vector one SNP at a time, which works for any block width
/// without materialising keys.
#[derive(Debug, Default)]
pub(crate) struct ClassCounter {
    labels: Vec<u32>,
    remap: Vec<u32>,
    case_counts: Vec<u64>,
    control_counts: Vec<u64>,
}

impl ClassCounter {
    /// Refines over `columns` (each covering all individuals, cases first).
    fn refine<'c, I>(&mut self, n: usize, columns: I) -> usize
    where
        I: IntoIterator<Item = &'c [u8]>,
    {
        self.labels.clear();
        self.labels.resize(n, 0);
        let mut classes = if n == 0 { 0 } else { 1 };
        for col in columns {
            self.remap.clear();
            self.remap.resize(classes * 3, u32::MAX);
            let mut next = 0u32;
            for (label, &g) in self.labels.iter_mut().zip(col) {
                let k = *label as usize * 3 + g as usize;
                let slot = &mut self.remap[k];
                if *slot == u32::MAX {
                    *slot = next;
                    next += 1;
                }
                *label = *slot;
            }
            classes = next as usize;
        }
        classes
    }

    pub(crate) fn marginals<'c, I>(
        &mut self,
        n_cases: usize,
        n: usize,
        width: usize,
        columns: I,
        config: &DirichletConfig,
    ) -> SetMarginals
    where
        I: IntoIterator<Item = &'c [u8]>,
    {
        let classes = self.refine(n, columns);
        self.case_counts.clear();
        self.case_counts.resize(classes, 0);
        self.control_counts.clear();
        self.control_counts.resize(classes, 0);
        for (i, &l) in self.labels.iter().enumerate() {
            if i < n_cases {
                self.case_counts[l as usize] += 1;
            } else {
                self.control_counts[l as usize] += 1;
            }
        }
        let cases = config.log_marginal_from_counts(width, self.case_counts.iter().copied());
        let controls = config.log_marginal_from_counts(width, self.control_counts.iter().copied());
        let both = config.log_marginal_from_counts(
            width,
            self.case_counts
                .iter()
                .zip(&self.control_counts)
                .map(|(a, b)| a + b),
        );
        SetMarginals {
            cases,
            controls,
            both,
            distinct: classes,
        }
    }

    pub(crate) fn dataset_marginals(
        &mut self,
        dataset: &GenotypeDataset,
        snps: impl IntoIterator<Item = usize> + Clone,
        config: &DirichletConfig,
    ) -> SetMarginals {
        let width = snps.clone().into_iter().count();
        self.marginals(
            dataset.n_cases(),
            dataset.n_individuals(),
            width,
            snps.into_iter().map(|j| dataset.column(j)),
            config,
        )
    }
}
