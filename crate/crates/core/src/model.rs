//! Joint probability of genotypes, block partition and SNP group memberships.
//!
//! Within a block `M` with associated SNPs `x` (groups 1 and 2) and epistatic
//! SNPs `x2` (group 2) the block contributes
//!
//! ```text
//! P(D_x) P(U_x) P(D_M, U_M) / [ P(D_x, U_x) P(D_x2) P(U_x2) ]
//! ```
//!
//! and the group-2 SNPs genome-wide contribute `P(D_2) P(U_2)` as one
//! concatenated diplotype, cases and controls separately. Every factor is a
//! multinomial–Dirichlet marginal from [`crate::likelihood`].

use std::fmt;
use std::ops::Range;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::genotype::GenotypeDataset;
use crate::likelihood::{ClassCounter, DetHashMap, DirichletConfig, SetMarginals, DEFAULT_RHO};

/// Human genome length used by the block-boundary prior.
pub const GENOME_LENGTH: f64 = 3.0e9;
/// Expected number of LD blocks genome-wide.
pub const DEFAULT_PRIOR_BLOCKS: f64 = 50_000.0;
/// Smallest cohort for which the diplotype and order caps are usable.
pub const MIN_INDIVIDUALS: usize = 30;

/// SNP group membership.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[repr(u8)]
pub enum Group {
    /// Not associated with disease status.
    #[default]
    Null = 0,
    /// Marginally associated (jointly with other group-1 SNPs of its block).
    Marginal = 1,
    /// Jointly associated with all other group-2 SNPs genome-wide.
    Epistatic = 2,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Null, Group::Marginal, Group::Epistatic];

    pub fn from_code(code: u8) -> Option<Group> {
        match code {
            0 => Some(Group::Null),
            1 => Some(Group::Marginal),
            2 => Some(Group::Epistatic),
            _ => None,
        }
    }

    pub fn is_associated(self) -> bool {
        self != Group::Null
    }
}

/// Partition of `L` SNPs into consecutive blocks, stored as sorted block starts.
///
/// SNP 0 always starts a block.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BlockPartition {
    n_snps: usize,
    starts: Vec<usize>,
}

impl BlockPartition {
    pub fn singletons(n_snps: usize) -> Self {
        assert!(n_snps >= 1, "a partition needs at least one SNP");
        BlockPartition {
            n_snps,
            starts: (0..n_snps).collect(),
        }
    }

    pub fn single_block(n_snps: usize) -> Self {
        assert!(n_snps >= 1, "a partition needs at least one SNP");
        BlockPartition {
            n_snps,
            starts: vec![0],
        }
    }

    /// From `L` boundary indicators; the first must be `true`.
    pub fn from_indicators(indicators: &[bool]) -> Result<Self> {
        match indicators.first() {
            Some(true) => Ok(BlockPartition {
                n_snps: indicators.len(),
                starts: (0..indicators.len()).filter(|&i| indicators[i]).collect(),
            }),
            Some(false) => Err(Error::invalid("SNP 0 must start a block")),
            None => Err(Error::invalid("empty boundary vector")),
        }
    }

    /// From strictly increasing block starts beginning at 0.
    pub fn from_starts(n_snps: usize, starts: Vec<usize>) -> Result<Self> {
        if starts.first() != Some(&0) {
            return Err(Error::invalid("block starts must begin at 0"));
        }
        if starts.windows(2).any(|w| w[1] <= w[0]) || *starts.last().unwrap() >= n_snps {
            return Err(Error::invalid(
                "block starts must be strictly increasing and below L",
            ));
        }
        Ok(BlockPartition { n_snps, starts })
    }

    pub fn n_snps(&self) -> usize {
        self.n_snps
    }

    pub fn n_blocks(&self) -> usize {
        self.starts.len()
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn block(&self, k: usize) -> Range<usize> {
        let end = self.starts.get(k + 1).copied().unwrap_or(self.n_snps);
        self.starts[k]..end
    }

    pub fn block_width(&self, k: usize) -> usize {
        let r = self.block(k);
        r.end - r.start
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.n_blocks()).map(move |k| self.block(k))
    }

    /// Index of the block containing `snp`.
    pub fn block_index_of(&self, snp: usize) -> usize {
        debug_assert!(snp < self.n_snps);
        match self.starts.binary_search(&snp) {
            Ok(k) => k,
            Err(k) => k - 1,
        }
    }

    pub fn is_boundary(&self, snp: usize) -> bool {
        self.starts.binary_search(&snp).is_ok()
    }

    pub fn indicators(&self) -> Vec<bool> {
        let mut v = vec![false; self.n_snps];
        for &s in &self.starts {
            v[s] = true;
        }
        v
    }

    /// Replaces `removed` blocks starting at block `first` with `inserted` ranges.
    pub(crate) fn splice(&mut self, first: usize, removed: usize, inserted: &[Range<usize>]) {
        self.starts
            .splice(first..first + removed, inserted.iter().map(|r| r.start));
    }
}

impl fmt::Display for BlockPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .blocks()
            .map(|r| format!("[{},{})", r.start, r.end))
            .collect();
        f.write_str(&parts.join(""))
    }
}

/// Per-SNP group labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MembershipVector {
    groups: Vec<Group>,
}

impl MembershipVector {
    pub fn all_null(n_snps: usize) -> Self {
        MembershipVector {
            groups: vec![Group::Null; n_snps],
        }
    }

    pub fn new(groups: Vec<Group>) -> Self {
        MembershipVector { groups }
    }

    pub fn from_codes(codes: &[u8]) -> Result<Self> {
        codes
            .iter()
            .map(|&c| {
                Group::from_code(c)
                    .ok_or_else(|| Error::invalid(format!("group label {c} not in 0..=2")))
            })
            .collect::<Result<Vec<_>>>()
            .map(MembershipVector::new)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn get(&self, snp: usize) -> Group {
        self.groups[snp]
    }

    pub fn set(&mut self, snp: usize, g: Group) {
        self.groups[snp] = g;
    }

    /// All group-2 SNPs, ascending.
    pub fn epistatic_set(&self) -> Vec<usize> {
        self.indices_of(Group::Epistatic)
    }

    pub fn indices_of(&self, g: Group) -> Vec<usize> {
        (0..self.groups.len())
            .filter(|&i| self.groups[i] == g)
            .collect()
    }

    /// Number of SNPs in groups 0, 1, 2.
    pub fn group_counts(&self) -> [usize; 3] {
        let mut c = [0usize; 3];
        for &g in &self.groups {
            c[g as usize] += 1;
        }
        c
    }
}

/// Prior probabilities of the block boundaries and group memberships.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorConfig {
    p_boundary: f64,
    p: [f64; 3],
    ln_p: [f64; 3],
    dirichlet: DirichletConfig,
}

impl PriorConfig {
    pub fn new(p_boundary: f64, p1: f64, p2: f64, rho: f64) -> Result<Self> {
        if !(p_boundary > 0.0 && p_boundary <= 0.5) {
            return Err(Error::invalid(format!(
                "boundary probability must be in (0, 0.5], got {p_boundary}"
            )));
        }
        let p0 = 1.0 - p1 - p2;
        for (name, v) in [("p0", p0), ("p1", p1), ("p2", p2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must be in (0,1), got {v}")));
            }
        }
        let p = [p0, p1, p2];
        Ok(PriorConfig {
            p_boundary,
            p,
            ln_p: p.map(f64::ln),
            dirichlet: DirichletConfig::new(rho)?,
        })
    }

    pub fn p_boundary(&self) -> f64 {
        self.p_boundary
    }

    pub fn p_group(&self, g: Group) -> f64 {
        self.p[g as usize]
    }

    pub fn ln_p_group(&self, g: Group) -> f64 {
        self.ln_p[g as usize]
    }

    pub fn rho(&self) -> f64 {
        self.dirichlet.rho()
    }

    pub fn dirichlet(&self) -> &DirichletConfig {
        &self.dirichlet
    }

    /// Copy with a different boundary probability.
    pub fn with_p_boundary(&self, p_boundary: f64) -> Result<Self> {
        PriorConfig::new(p_boundary, self.p[1], self.p[2], self.rho())
    }

    /// `ln P(B)`: SNP 0 is a fixed boundary, the other `L − 1` indicators are
    /// independent Bernoulli(p).
    pub fn log_prior_partition(&self, n_snps: usize, n_blocks: usize) -> f64 {
        let free_on = (n_blocks - 1) as f64;
        let free_off = (n_snps - n_blocks) as f64;
        let mut lp = 0.0;
        if free_on > 0.0 {
            lp += free_on * self.p_boundary.ln();
        }
        if free_off > 0.0 {
            lp += free_off * (-self.p_boundary).ln_1p();
        }
        lp
    }

    /// `ln P(I)` from group sizes.
    pub fn log_prior_membership(&self, counts: [usize; 3]) -> f64 {
        counts[0] as f64 * self.ln_p[0]
            + counts[1] as f64 * self.ln_p[1]
            + counts[2] as f64 * self.ln_p[2]
    }
}

/// Hard limits that keep blocks and interactions from overfitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConstraints {
    /// Most distinct diplotypes (combined cohort) allowed in a multi-SNP block.
    pub max_distinct_diplotypes: usize,
    /// Most group-2 SNPs allowed at once.
    pub max_order: usize,
}

impl ModelConstraints {
    pub fn new(max_distinct_diplotypes: usize, max_order: usize) -> Self {
        ModelConstraints {
            max_distinct_diplotypes,
            max_order,
        }
    }

    /// Caps derived from the number of individuals: fewer than `N/10`
    /// distinct diplotypes per block and at most `⌊log₃(N/10)⌋` group-2 SNPs.
    pub fn for_sample_size(n_individuals: usize) -> Result<Self> {
        if n_individuals < MIN_INDIVIDUALS {
            return Err(Error::Constraint(format!(
                "{n_individuals} individuals; at least {MIN_INDIVIDUALS} are needed"
            )));
        }
        let max_distinct = n_individuals.div_ceil(10) - 1;
        let mut order = 0;
        while 10 * 3usize.pow(order as u32 + 1) <= n_individuals {
            order += 1;
        }
        Ok(ModelConstraints::new(max_distinct, order))
    }

    /// No effective limits; used for tiny oracle problems.
    pub fn unbounded(n_snps: usize) -> Self {
        ModelConstraints::new(usize::MAX, n_snps)
    }
}

/// User-facing prior knobs, resolved against a dataset by [`PriorSettings::resolve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorSettings {
    pub rho: f64,
    pub prior_blocks: f64,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            rho: DEFAULT_RHO,
            prior_blocks: DEFAULT_PRIOR_BLOCKS,
            p1: None,
            p2: None,
        }
    }
}

impl PriorSettings {
    pub fn priors(&self, n_snps: usize, region_length: u64) -> Result<PriorConfig> {
        if n_snps == 0 || region_length == 0 {
            return Err(Error::invalid("L and R must be at least 1"));
        }
        if !(self.prior_blocks > 0.0) {
            return Err(Error::invalid("prior block count must be positive"));
        }
        let l = n_snps as f64;
        let p_boundary = (self.prior_blocks * region_length as f64 / (GENOME_LENGTH * l)).min(0.5);
        let default_p = (5.0 / l).min(0.1);
        PriorConfig::new(
            p_boundary,
            self.p1.unwrap_or(default_p),
            self.p2.unwrap_or(default_p),
            self.rho,
        )
    }

    pub fn resolve(
        &self,
        n_snps: usize,
        region_length: u64,
        n_cases: usize,
        n_controls: usize,
    ) -> Result<(PriorConfig, ModelConstraints)> {
        Ok((
            self.priors(n_snps, region_length)?,
            ModelConstraints::for_sample_size(n_cases + n_controls)?,
        ))
    }
}

/// Default priors and caps for a dataset shape.
pub fn default_priors(
    n_snps: usize,
    region_length: u64,
    n_cases: usize,
    n_controls: usize,
) -> Result<(PriorConfig, ModelConstraints)> {
    PriorSettings::default().resolve(n_snps, region_length, n_cases, n_controls)
}

/// Why a state has zero prior mass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Forbidden {
    TooManyDiplotypes {
        block: Range<usize>,
        distinct: usize,
        cap: usize,
    },
    OrderExceeded {
        order: usize,
        cap: usize,
    },
}

impl fmt::Display for Forbidden {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forbidden::TooManyDiplotypes {
                block,
                distinct,
                cap,
            } => write!(
                f,
                "block [{},{}) has {distinct} distinct diplotypes (cap {cap})",
                block.start, block.end
            ),
            Forbidden::OrderExceeded { order, cap } => {
                write!(f, "{order} group-2 SNPs exceed the order cap {cap}")
            }
        }
    }
}

type SnpSetKey = SmallVec<[u32; 8]>;

/// Memoising evaluator of block terms over one dataset.
///
/// Caches marginals by SNP set; a chain revisits the same sets constantly.
/// Not shared between threads: each chain or worker owns one.
pub struct ModelEvaluator<'a> {
    data: &'a GenotypeDataset,
    dirichlet: DirichletConfig,
    ranges: DetHashMap<(u32, u32), SetMarginals>,
    sets: DetHashMap<SnpSetKey, SetMarginals>,
    counter: ClassCounter,
    assoc: Vec<usize>,
    epi: Vec<usize>,
}

const CACHE_LIMIT: usize = 1 << 20;

impl<'a> ModelEvaluator<'a> {
    pub fn new(data: &'a GenotypeDataset, dirichlet: DirichletConfig) -> Self {
        ModelEvaluator {
            data,
            dirichlet,
            ranges: DetHashMap::default(),
            sets: DetHashMap::default(),
            counter: ClassCounter::default(),
            assoc: Vec::new(),
            epi: Vec::new(),
        }
    }

    pub fn dataset(&self) -> &'a GenotypeDataset {
        self.data
    }

    pub fn dirichlet(&self) -> &DirichletConfig {
        &self.dirichlet
    }

    /// Marginals of the contiguous block `[a, b)`.
    pub fn range_marginals(&mut self, block: Range<usize>) -> SetMarginals {
        let key = (block.start as u32, block.end as u32);
        if let Some(m) = self.ranges.get(&key) {
            return *m;
        }
        if self.ranges.len() >= CACHE_LIMIT {
            self.ranges.clear();
        }
        let m = self
            .counter
            .dataset_marginals(self.data, block, &self.dirichlet);
        self.ranges.insert(key, m);
        m
    }

    /// Marginals of an ascending SNP list.
    pub fn set_marginals(&mut self, snps: &[usize]) -> SetMarginals {
        if snps.is_empty() {
            return SetMarginals {
                cases: 0.0,
                controls: 0.0,
                both: 0.0,
                distinct: usize::from(self.data.n_individuals() > 0),
            };
        }
        let key: SnpSetKey = snps.iter().map(|&s| s as u32).collect();
        if let Some(m) = self.sets.get(&key) {
            return *m;
        }
        if self.sets.len() >= CACHE_LIMIT {
            self.sets.clear();
        }
        let m = self
            .counter
            .dataset_marginals(self.data, snps.iter().copied(), &self.dirichlet);
        self.sets.insert(key, m);
        m
    }

    /// Distinct diplotypes of the combined cohort over `[a, b)`.
    pub fn distinct_diplotypes(&mut self, block: Range<usize>) -> usize {
        self.range_marginals(block).distinct
    }

    /// Whether `[a, b)` respects the diplotype cap. Single-SNP blocks always do.
    pub fn block_allowed(&mut self, block: Range<usize>, constraints: &ModelConstraints) -> bool {
        block.len() < 2 || self.distinct_diplotypes(block) <= constraints.max_distinct_diplotypes
    }

    /// Log block term; `groups` is the genome-wide label slice.
    pub fn block_term(&mut self, block: Range<usize>, groups: &[Group]) -> f64 {
        let mut assoc = std::mem::take(&mut self.assoc);
        let mut epi = std::mem::take(&mut self.epi);
        assoc.clear();
        epi.clear();
        for i in block.clone() {
            match groups[i] {
                Group::Null => {}
                Group::Marginal => assoc.push(i),
                Group::Epistatic => {
                    assoc.push(i);
                    epi.push(i);
                }
            }
        }
        let width = block.len();
        let mut term = 0.0;
        // P(D_M,U_M) / P(D_x,U_x) cancels when x = M.
        if assoc.len() < width {
            term += self.range_marginals(block).both;
            if !assoc.is_empty() {
                term -= self.set_marginals(&assoc).both;
            }
        }
        // P(D_x) P(U_x) / [P(D_x2) P(U_x2)] cancels when x = x2.
        if assoc.len() > epi.len() {
            let mx = self.set_marginals(&assoc);
            term += mx.cases + mx.controls;
            if !epi.is_empty() {
                let m2 = self.set_marginals(&epi);
                term -= m2.cases + m2.controls;
            }
        }
        self.assoc = assoc;
        self.epi = epi;
        term
    }

    /// `ln P(D_2) + ln P(U_2)` for the ascending group-2 set.
    pub fn epistatic_term(&mut self, epistatic: &[usize]) -> f64 {
        if epistatic.is_empty() {
            return 0.0;
        }
        let m = self.set_marginals(epistatic);
        m.cases + m.controls
    }

    /// Full log joint `ln P(D, U, B, I)`.
    pub fn log_joint(
        &mut self,
        partition: &BlockPartition,
        membership: &MembershipVector,
        priors: &PriorConfig,
        constraints: &ModelConstraints,
    ) -> std::result::Result<f64, Forbidden> {
        assert_eq!(partition.n_snps(), self.data.n_snps(), "partition size");
        assert_eq!(membership.len(), self.data.n_snps(), "membership size");
        let counts = membership.group_counts();
        if counts[2] > constraints.max_order {
            return Err(Forbidden::OrderExceeded {
                order: counts[2],
                cap: constraints.max_order,
            });
        }
        for block in partition.blocks() {
            if !self.block_allowed(block.clone(), constraints) {
                return Err(Forbidden::TooManyDiplotypes {
                    distinct: self.distinct_diplotypes(block.clone()),
                    block,
                    cap: constraints.max_distinct_diplotypes,
                });
            }
        }
        let mut lj = self.epistatic_term(&membership.epistatic_set());
        for block in partition.blocks() {
            lj += self.block_term(block, membership.groups());
        }
        lj += priors.log_prior_partition(partition.n_snps(), partition.n_blocks());
        lj += priors.log_prior_membership(counts);
        Ok(lj)
    }
}

/// Uncached block term for one block; `groups` covers the whole genome.
pub fn log_block_term(
    dataset: &GenotypeDataset,
    block: Range<usize>,
    groups: &[Group],
    dirichlet: &DirichletConfig,
) -> Result<f64> {
    if block.is_empty() || block.end > dataset.n_snps() || groups.len() != dataset.n_snps() {
        return Err(Error::invalid(
            "block or membership does not match the dataset",
        ));
    }
    Ok(ModelEvaluator::new(dataset, *dirichlet).block_term(block, groups))
}

/// `ln P(D, U, B, I)`, or the reason the state is forbidden.
pub fn log_joint(
    dataset: &GenotypeDataset,
    partition: &BlockPartition,
    membership: &MembershipVector,
    priors: &PriorConfig,
    constraints: &ModelConstraints,
) -> std::result::Result<f64, Forbidden> {
    ModelEvaluator::new(dataset, *priors.dirichlet()).log_joint(
        partition,
        membership,
        priors,
        constraints,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{count_diplotypes, log_marginal, Cohort, DiplotypeCounts};

    fn ds(cases: &[Vec<u8>], controls: &[Vec<u8>], l: usize) -> GenotypeDataset {
        let ids = (0..l).map(|j| format!("s{j}")).collect();
        let pos = (0..l as u64).map(|j| 1000 * (j + 1)).collect();
        GenotypeDataset::from_rows(ids, pos, cases, controls).unwrap()
    }

    fn lm(d: &GenotypeDataset, snps: &[usize], who: Cohort) -> f64 {
        log_marginal(
            &DiplotypeCounts::from_snps(d, snps, who).unwrap(),
            &DirichletConfig::default(),
        )
    }

    #[test]
    fn default_prior_examples() {
        let (p, _) = default_priors(1000, 1_000_000, 500, 500).unwrap();
        assert!((p.p_boundary() - 5e10 / 3e12).abs() < 1e-15);
        assert!((p.p_boundary() - 0.016667).abs() < 1e-6);
        assert_eq!(p.p_group(Group::Marginal), 0.005);
        assert_eq!(p.p_group(Group::Epistatic), 0.005);
        assert!((p.p_group(Group::Null) - 0.99).abs() < 1e-15);
        assert_eq!(p.rho(), 1.5);

        let (p, _) = default_priors(10, 3_000_000_000, 500, 500).unwrap();
        assert_eq!(p.p_boundary(), 0.5);
        assert_eq!(p.p_group(Group::Marginal), 0.1);
    }

    #[test]
    fn constraint_caps() {
        let c = ModelConstraints::for_sample_size(1000).unwrap();
        assert_eq!(c.max_order, 4);
        assert_eq!(c.max_distinct_diplotypes, 99);
        let c = ModelConstraints::for_sample_size(30).unwrap();
        assert_eq!((c.max_order, c.max_distinct_diplotypes), (1, 2));
        let c = ModelConstraints::for_sample_size(90).unwrap();
        assert_eq!((c.max_order, c.max_distinct_diplotypes), (2, 8));
        let c = ModelConstraints::for_sample_size(101).unwrap();
        assert_eq!(c.max_distinct_diplotypes, 10);
        assert!(matches!(
            ModelConstraints::for_sample_size(29),
            Err(Error::Constraint(_))
        ));
    }

    #[test]
    fn partition_bookkeeping() {
        let b = BlockPartition::from_indicators(&[true, false, true, true, false]).unwrap();
        assert_eq!(b.n_blocks(), 3);
        assert_eq!(b.blocks().collect::<Vec<_>>(), vec![0..2, 2..3, 3..5]);
        assert_eq!(b.block_index_of(1), 0);
        assert_eq!(b.block_index_of(4), 2);
        assert_eq!(b.indicators(), vec![true, false, true, true, false]);
        assert!(BlockPartition::from_indicators(&[false, true]).is_err());
        assert!(BlockPartition::from_starts(4, vec![0, 2, 2]).is_err());
        assert_eq!(b.to_string(), "[0,2)[2,3)[3,5)");
    }

    #[test]
    fn partition_prior_excludes_first_snp() {
        let p = PriorConfig::new(0.2, 0.1, 0.1, 1.5).unwrap();
        let lp = p.log_prior_partition(5, 3);
        assert!((lp - (2.0 * 0.2f64.ln() + 2.0 * 0.8f64.ln())).abs() < 1e-15);
        assert_eq!(p.log_prior_partition(1, 1), 0.0);
    }

    #[test]
    fn block_term_collapses() {
        let cases = vec![vec![0, 1], vec![1, 1], vec![0, 0]];
        let controls = vec![vec![2, 1], vec![0, 1]];
        let d = ds(&cases, &controls, 2);
        let cfg = DirichletConfig::default();
        let null = [Group::Null; 2];
        let t = log_block_term(&d, 0..2, &null, &cfg).unwrap();
        assert!((t - lm(&d, &[0, 1], Cohort::Both)).abs() < 1e-12);

        let epi = [Group::Epistatic; 2];
        assert_eq!(log_block_term(&d, 0..2, &epi, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn block_term_toy_against_five_factors() {
        // SNP 0 group-1, SNP 1 group-0, four individuals.
        let cases = vec![vec![0, 1], vec![1, 1]];
        let controls = vec![vec![2, 0], vec![2, 1]];
        let d = ds(&cases, &controls, 2);
        let cfg = DirichletConfig::default();
        let t = log_block_term(&d, 0..2, &[Group::Marginal, Group::Null], &cfg).unwrap();
        // Hand evaluation with α = 0.5 (width 1) and 1/6 (width 2):
        //   P(D_x): cases {0,1}  → (0.5/1.5)(0.5/2.5)         = 1/15
        //   P(U_x): controls {2,2} → (0.5/1.5)(1.5/2.5)       = 1/5
        //   P(D_M,U_M): four distinct diplotypes → Π (1/6)/(k+1.5), k=0..3
        //   P(D_x,U_x): {0,1,2,2} → (0.5/1.5)(0.5/2.5)(0.5/3.5)(1.5/4.5)
        let a: f64 = 1.5 / 9.0;
        let p_dm = (a / 1.5) * (a / 2.5) * (a / 3.5) * (a / 4.5);
        let p_dx_ux = (0.5 / 1.5) * (0.5 / 2.5) * (0.5 / 3.5) * (1.5 / 4.5);
        let expected = ((1.0 / 15.0) * (1.0 / 5.0) * p_dm / p_dx_ux).ln();
        assert!((t - expected).abs() < 1e-12, "{t} vs {expected}");
    }

    #[test]
    fn log_joint_empty_data_is_prior_only() {
        let d = ds(&[], &[], 3);
        let p = PriorConfig::new(0.3, 0.1, 0.2, 1.5).unwrap();
        let b = BlockPartition::from_starts(3, vec![0, 2]).unwrap();
        let i = MembershipVector::from_codes(&[0, 2, 1]).unwrap();
        let lj = log_joint(&d, &b, &i, &p, &ModelConstraints::unbounded(3)).unwrap();
        let expected = 0.3f64.ln() + 0.7f64.ln() + 0.7f64.ln() + 0.2f64.ln() + 0.1f64.ln();
        assert!((lj - expected).abs() < 1e-14);
    }

    #[test]
    fn log_joint_single_null_block() {
        let cases = vec![vec![0, 1, 2], vec![1, 1, 2]];
        let controls = vec![vec![0, 1, 2]];
        let d = ds(&cases, &controls, 3);
        let p = PriorConfig::new(0.25, 0.1, 0.1, 1.5).unwrap();
        let lj = log_joint(
            &d,
            &BlockPartition::single_block(3),
            &MembershipVector::all_null(3),
            &p,
            &ModelConstraints::unbounded(3),
        )
        .unwrap();
        let expected = lm(&d, &[0, 1, 2], Cohort::Both) + 2.0 * 0.75f64.ln() + 3.0 * 0.8f64.ln();
        assert!((lj - expected).abs() < 1e-12);
    }

    #[test]
    fn forbidden_states() {
        let rows: Vec<Vec<u8>> = (0..40)
            .map(|k| vec![(k % 3) as u8, ((k / 3) % 3) as u8])
            .collect();
        let d = ds(&rows[..20], &rows[20..], 2);
        let p = PriorConfig::new(0.25, 0.1, 0.1, 1.5).unwrap();
        let c = ModelConstraints::for_sample_size(40).unwrap();
        assert_eq!(c.max_distinct_diplotypes, 3);
        let r = log_joint(
            &d,
            &BlockPartition::single_block(2),
            &MembershipVector::all_null(2),
            &p,
            &c,
        );
        assert!(matches!(
            r,
            Err(Forbidden::TooManyDiplotypes { distinct: 9, .. })
        ));
        let r = log_joint(
            &d,
            &BlockPartition::singletons(2),
            &MembershipVector::from_codes(&[2, 2]).unwrap(),
            &p,
            &c,
        );
        assert!(matches!(
            r,
            Err(Forbidden::OrderExceeded { order: 2, cap: 1 })
        ));
    }

    #[test]
    fn splitting_unassociated_block_only_touches_that_block() {
        let cases: Vec<Vec<u8>> = (0..12)
            .map(|k| vec![(k % 3) as u8, (k % 2) as u8, ((k / 2) % 3) as u8, 1])
            .collect();
        let controls: Vec<Vec<u8>> = (0..9)
            .map(|k| vec![(k % 2) as u8, (k % 3) as u8, 0, (k % 3) as u8])
            .collect();
        let d = ds(&cases, &controls, 4);
        let mut ev = ModelEvaluator::new(&d, DirichletConfig::default());
        let groups = [Group::Marginal, Group::Null, Group::Null, Group::Epistatic];
        let before = BlockPartition::from_starts(4, vec![0, 1, 3]).unwrap();
        let after = BlockPartition::from_starts(4, vec![0, 1, 2, 3]).unwrap();
        let tb: Vec<f64> = before.blocks().map(|r| ev.block_term(r, &groups)).collect();
        let ta: Vec<f64> = after.blocks().map(|r| ev.block_term(r, &groups)).collect();
        assert_eq!(tb[0].to_bits(), ta[0].to_bits());
        assert_eq!(tb[2].to_bits(), ta[3].to_bits());
        assert!((tb[1] - lm(&d, &[1, 2], Cohort::Both)).abs() < 1e-12);
        assert!(
            (ta[1] + ta[2] - lm(&d, &[1], Cohort::Both) - lm(&d, &[2], Cohort::Both)).abs() < 1e-12
        );
    }

    #[test]
    fn count_diplotypes_agrees_with_range_marginals() {
        let cases: Vec<Vec<u8>> = (0..7)
            .map(|k| vec![(k % 3) as u8, 1, (k % 2) as u8])
            .collect();
        let d = ds(&cases, &cases[..3], 3);
        let mut ev = ModelEvaluator::new(&d, DirichletConfig::default());
        let t = count_diplotypes(&d, 0..3, Cohort::Both).unwrap();
        let m = ev.range_marginals(0..3);
        assert_eq!(m.distinct, t.distinct());
        assert!((m.both - log_marginal(&t, &DirichletConfig::default())).abs() < 1e-12);
    }
}
