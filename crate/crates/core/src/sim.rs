//! Synthetic case-control data with known block structure and disease loci.
//!
//! A [`FounderPool`] cuts the region into blocks, each carrying a few founder
//! haplotypes with population frequencies. Every individual draws two
//! haplotypes, choosing a founder independently per block, so blocks are in
//! linkage equilibrium with each other and in strong LD internally.
//!
//! Cases and controls are drawn without replacement from a pool of unaffected
//! individuals: the genotype class at the disease loci is first sampled from
//! its case (or control) distribution, then an individual of that class is
//! taken from the pool.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::genotype::GenotypeDataset;

pub const DEFAULT_FOUNDERS: usize = 4;
pub const DEFAULT_BLOCK_WIDTH: usize = 5;
/// Base-pair spacing between consecutive simulated SNPs.
pub const SNP_SPACING: u64 = 5_000;
/// Truth windows extend this many SNPs either side of a disease locus.
pub const TRUTH_WINDOW: usize = 5;

const MIN_FOUNDER_FREQUENCY: f64 = 0.05;
/// Minimum mutual information (nats) between the two sides of every within-block cut.
const MIN_CUT_INFORMATION: f64 = 0.2;
const MAX_BLOCK_ATTEMPTS: usize = 10_000;
const MAX_THETA: f64 = 1000.0;

/// Founder haplotypes and frequencies for one block.
#[derive(Clone, Debug, PartialEq)]
pub struct FounderBlock {
    pub start: usize,
    /// `haplotypes[f][s]` is the allele (0/1) of founder `f` at SNP `start + s`.
    pub haplotypes: Vec<Vec<u8>>,
    pub frequencies: Vec<f64>,
}

impl FounderBlock {
    pub fn width(&self) -> usize {
        self.haplotypes[0].len()
    }

    pub fn n_founders(&self) -> usize {
        self.haplotypes.len()
    }

    /// Population frequency of allele 1 at within-block offset `s`.
    pub fn allele_frequency(&self, s: usize) -> f64 {
        self.haplotypes
            .iter()
            .zip(&self.frequencies)
            .filter(|(h, _)| h[s] == 1)
            .map(|(_, f)| f)
            .sum()
    }

    /// Mutual information between the alleles left and right of `cut`.
    fn cut_information(&self, cut: usize) -> f64 {
        let mut joint: Vec<(&[u8], &[u8], f64)> = Vec::new();
        for (h, &f) in self.haplotypes.iter().zip(&self.frequencies) {
            let (l, r) = h.split_at(cut);
            match joint.iter_mut().find(|e| e.0 == l && e.1 == r) {
                Some(e) => e.2 += f,
                None => joint.push((l, r, f)),
            }
        }
        let side = |left: bool, key: &[u8]| -> f64 {
            joint
                .iter()
                .filter(|e| if left { e.0 == key } else { e.1 == key })
                .map(|e| e.2)
                .sum()
        };
        joint
            .iter()
            .map(|&(l, r, p)| p * (p / (side(true, l) * side(false, r))).ln())
            .sum()
    }

    fn acceptable(&self) -> bool {
        let w = self.width();
        let polymorphic = (0..w).all(|s| {
            let first = self.haplotypes[0][s];
            self.haplotypes.iter().any(|h| h[s] != first)
        });
        let distinct = (0..self.n_founders())
            .all(|a| (a + 1..self.n_founders()).all(|b| self.haplotypes[a] != self.haplotypes[b]));
        polymorphic
            && distinct
            && (1..w).all(|cut| self.cut_information(cut) >= MIN_CUT_INFORMATION)
    }
}

/// Founder haplotypes for every block of the region.
#[derive(Clone, Debug, PartialEq)]
pub struct FounderPool {
    n_snps: usize,
    blocks: Vec<FounderBlock>,
}

/// Widths of `width`-SNP blocks covering `n_snps`, the last one possibly shorter.
pub fn uniform_widths(n_snps: usize, width: usize) -> Vec<usize> {
    assert!(width > 0);
    let mut v = vec![width; n_snps / width];
    if n_snps % width > 0 {
        v.push(n_snps % width);
    }
    v
}

fn founder_frequencies<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(2.0, 1.0).expect("valid gamma parameters");
    let raw: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    let free = 1.0 - n as f64 * MIN_FOUNDER_FREQUENCY;
    raw.iter()
        .map(|r| MIN_FOUNDER_FREQUENCY + free * r / total)
        .collect()
}

impl FounderPool {
    /// Draws founders for blocks of the given widths.
    ///
    /// Blocks are redrawn until every SNP is polymorphic among founders, the
    /// founders are distinct, and every within-block cut keeps at least
    /// 0.2 nats of mutual information.
    pub fn generate<R: Rng>(widths: &[usize], n_founders: usize, rng: &mut R) -> Result<Self> {
        if n_founders < 2 || n_founders as f64 * MIN_FOUNDER_FREQUENCY >= 1.0 {
            return Err(Error::invalid(format!(
                "founders per block must be between 2 and 19, got {n_founders}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("block widths must be positive"));
        }
        let mut blocks = Vec::with_capacity(widths.len());
        let mut start = 0;
        for &w in widths {
            if w > 1 && (1usize << w.min(20)) < n_founders {
                return Err(Error::invalid(format!(
                    "{n_founders} distinct founders do not fit in a {w}-SNP block"
                )));
            }
            let mut attempts = 0;
            let block = loop {
                attempts += 1;
                if attempts > MAX_BLOCK_ATTEMPTS {
                    return Err(Error::Simulation(format!(
                        "could not draw an acceptable founder block of width {w}"
                    )));
                }
                let haplotypes = (0..n_founders)
                    .map(|_| (0..w).map(|_| rng.random_range(0..2u8)).collect())
                    .collect();
                let b = FounderBlock {
                    start,
                    haplotypes,
                    frequencies: founder_frequencies(n_founders, rng),
                };
                if w == 1 || b.acceptable() {
                    break b;
                }
            };
            start += w;
            blocks.push(block);
        }
        Ok(FounderPool {
            n_snps: start,
            blocks,
        })
    }

    pub fn n_snps(&self) -> usize {
        self.n_snps
    }

    pub fn blocks(&self) -> &[FounderBlock] {
        &self.blocks
    }

    pub fn block_starts(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.start).collect()
    }

    /// `(block index, offset within block)` of a SNP.
    pub fn locate(&self, snp: usize) -> (usize, usize) {
        assert!(snp < self.n_snps, "SNP {snp} out of range");
        let k = self.blocks.partition_point(|b| b.start <= snp) - 1;
        (k, snp - self.blocks[k].start)
    }

    pub fn allele_frequency(&self, snp: usize) -> f64 {
        let (k, s) = self.locate(snp);
        self.blocks[k].allele_frequency(s)
    }

    /// Makes founder 0 the only carrier of allele 1 at `snp` and sets its
    /// frequency to `maf`, rescaling the other founders.
    pub fn plant_disease_allele(&mut self, snp: usize, maf: f64) -> Result<()> {
        if !(maf > 0.0 && maf <= 0.5) {
            return Err(Error::invalid(format!(
                "disease allele frequency {maf} not in (0, 0.5]"
            )));
        }
        let (k, s) = self.locate(snp);
        let block = &mut self.blocks[k];
        for (f, h) in block.haplotypes.iter_mut().enumerate() {
            h[s] = u8::from(f == 0);
        }
        let others: f64 = block.frequencies[1..].iter().sum();
        for f in &mut block.frequencies[1..] {
            *f *= (1.0 - maf) / others;
        }
        block.frequencies[0] = maf;
        Ok(())
    }

    fn genotype_row(&self, founders: &[[u8; 2]]) -> Vec<u8> {
        let mut row = Vec::with_capacity(self.n_snps);
        for (b, pair) in self.blocks.iter().zip(founders) {
            let (h0, h1) = (
                &b.haplotypes[pair[0] as usize],
                &b.haplotypes[pair[1] as usize],
            );
            row.extend(h0.iter().zip(h1).map(|(x, y)| x + y));
        }
        row
    }
}

fn pick<R: Rng>(weights: &[f64], rng: &mut R) -> u8 {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i as u8;
        }
    }
    (weights.len() - 1) as u8
}

/// Two-locus relative-risk tables; `Model1` also has a one-locus form `(1+θ)^i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenetranceModel {
    /// `(1+θ)^(i+j)`: multiplicative across loci.
    Model1,
    /// Risk 1 unless both loci carry the disease allele, then `(1+θ)^(i+j)`.
    Model2,
    /// `1+θ` when both loci carry at least one disease allele, else 1.
    Model3,
}

impl PenetranceModel {
    pub fn id(self) -> u8 {
        match self {
            PenetranceModel::Model1 => 1,
            PenetranceModel::Model2 => 2,
            PenetranceModel::Model3 => 3,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(PenetranceModel::Model1),
            2 => Ok(PenetranceModel::Model2),
            3 => Ok(PenetranceModel::Model3),
            _ => Err(Error::invalid(format!(
                "unknown disease model {id}; expected 1, 2 or 3"
            ))),
        }
    }

    fn supports(self, n_loci: usize) -> bool {
        match self {
            PenetranceModel::Model1 => n_loci == 1 || n_loci == 2,
            _ => n_loci == 2,
        }
    }

    /// Relative risk of a disease-locus genotype (allele counts per locus).
    pub fn risk(self, theta: f64, genotype: &[u8]) -> f64 {
        let r = 1.0 + theta;
        match (self, genotype) {
            (PenetranceModel::Model1, g) => r.powi(g.iter().map(|&x| x as i32).sum()),
            (PenetranceModel::Model2, &[i, j]) => {
                if i == 0 || j == 0 {
                    1.0
                } else {
                    r.powi(i as i32 + j as i32)
                }
            }
            (PenetranceModel::Model3, &[i, j]) => {
                if i >= 1 && j >= 1 {
                    r
                } else {
                    1.0
                }
            }
            _ => panic!("{self:?} needs two loci"),
        }
    }
}

/// Hardy–Weinberg genotype frequencies for allele frequency `f`.
pub fn hwe_genotype_frequencies(f: f64) -> [f64; 3] {
    [(1.0 - f) * (1.0 - f), 2.0 * f * (1.0 - f), f * f]
}

/// Enumerates disease-locus genotypes in lexicographic order.
fn genotype_classes(n_loci: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n_loci {
        out = out
            .into_iter()
            .flat_map(|g| {
                (0..3u8).map(move |x| {
                    let mut h = g.clone();
                    h.push(x);
                    h
                })
            })
            .collect();
    }
    out
}

/// Carrier-versus-noncarrier odds ratio at the first disease locus, with the
/// risk table collapsed over the other locus under Hardy–Weinberg
/// frequencies and a rare disease (odds ratio equals relative risk).
pub fn marginal_odds_ratio(model: PenetranceModel, n_loci: usize, theta: f64, f: f64) -> f64 {
    let g = hwe_genotype_frequencies(f);
    let collapsed = |i: u8| -> f64 {
        if n_loci == 1 {
            model.risk(theta, &[i])
        } else {
            (0..3u8)
                .map(|j| g[j as usize] * model.risk(theta, &[i, j]))
                .sum()
        }
    };
    let carrier = (g[1] * collapsed(1) + g[2] * collapsed(2)) / (g[1] + g[2]);
    carrier / collapsed(0)
}

/// `θ` such that the marginal log odds ratio equals `1 + marginal_effect`.
///
/// Found by bisection on `[0, 1000]`. `marginal_effect = 0` is the null
/// model and gives `θ = 0`.
pub fn solve_theta(
    model: PenetranceModel,
    n_loci: usize,
    marginal_effect: f64,
    f: f64,
) -> Result<f64> {
    if !model.supports(n_loci) {
        return Err(Error::invalid(format!(
            "{model:?} does not support {n_loci} loci"
        )));
    }
    if !(f > 0.0 && f <= 0.5) {
        return Err(Error::invalid(format!(
            "disease allele frequency {f} not in (0, 0.5]"
        )));
    }
    if !(marginal_effect >= 0.0) || !marginal_effect.is_finite() {
        return Err(Error::invalid(format!(
            "marginal effect {marginal_effect} must be non-negative"
        )));
    }
    if marginal_effect == 0.0 {
        return Ok(0.0);
    }
    let target = (1.0 + marginal_effect).exp();
    let h = |theta: f64| marginal_odds_ratio(model, n_loci, theta, f) - target;
    if h(MAX_THETA) < 0.0 {
        return Err(Error::Simulation(format!(
            "no θ in (0, {MAX_THETA}] reaches marginal effect {marginal_effect} at f = {f}"
        )));
    }
    let (mut lo, mut hi) = (0.0, MAX_THETA);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Penetrance model, its parameter and where the disease alleles sit.
#[derive(Clone, Debug, PartialEq)]
pub struct DiseaseModel {
    pub model: PenetranceModel,
    pub theta: f64,
    pub maf: f64,
    pub loci: Vec<usize>,
}

impl DiseaseModel {
    pub fn new(model: PenetranceModel, theta: f64, maf: f64, loci: Vec<usize>) -> Result<Self> {
        if !model.supports(loci.len()) {
            return Err(Error::invalid(format!(
                "{model:?} does not support {} disease loci",
                loci.len()
            )));
        }
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(Error::invalid(format!("θ = {theta} must be non-negative")));
        }
        if !(maf > 0.0 && maf <= 0.5) {
            return Err(Error::invalid(format!(
                "disease allele frequency {maf} not in (0, 0.5]"
            )));
        }
        Ok(DiseaseModel {
            model,
            theta,
            maf,
            loci,
        })
    }

    /// Model with `θ` solved from a marginal effect (log odds ratio minus one).
    pub fn from_effect(
        model: PenetranceModel,
        marginal_effect: f64,
        maf: f64,
        loci: Vec<usize>,
    ) -> Result<Self> {
        let theta = solve_theta(model, loci.len(), marginal_effect, maf)?;
        DiseaseModel::new(model, theta, maf, loci)
    }

    /// Relative risk for every disease genotype class, lexicographic order.
    pub fn risk_table(&self) -> Vec<f64> {
        genotype_classes(self.loci.len())
            .iter()
            .map(|g| self.model.risk(self.theta, g))
            .collect()
    }

    /// Population (control) frequency of every genotype class.
    pub fn control_class_frequencies(&self) -> Vec<f64> {
        let g = hwe_genotype_frequencies(self.maf);
        genotype_classes(self.loci.len())
            .iter()
            .map(|c| c.iter().map(|&x| g[x as usize]).product())
            .collect()
    }

    /// Case frequency of every genotype class, `∝ P(g)·R(g)`.
    pub fn case_class_frequencies(&self) -> Vec<f64> {
        let w: Vec<f64> = self
            .control_class_frequencies()
            .iter()
            .zip(self.risk_table())
            .map(|(p, r)| p * r)
            .collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    }
}

/// Ground truth attached to a simulated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    /// `None` for null data.
    pub model: Option<PenetranceModel>,
    pub theta: f64,
    pub maf: f64,
    pub marginal_effect: f64,
    /// Disease loci in the current SNP indexing; empty once dropped.
    pub loci: Vec<usize>,
    /// IDs of the disease SNPs (kept after dropping).
    pub locus_ids: Vec<String>,
    /// Inclusive index windows within 5 SNPs of each disease locus.
    pub windows: Vec<RangeInclusive<usize>>,
    /// Founder block starts in the current indexing.
    pub block_starts: Vec<usize>,
    pub loci_dropped: bool,
}

impl Truth {
    pub fn in_window(&self, snp: usize) -> bool {
        self.windows.iter().any(|w| w.contains(&snp))
    }

    /// True internal block boundaries (every start except 0).
    pub fn internal_boundaries(&self) -> &[usize] {
        &self.block_starts[1..]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedDataset {
    pub dataset: GenotypeDataset,
    pub truth: Truth,
}

/// Everything needed to simulate one replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSpec {
    pub n_snps: usize,
    pub block_width: usize,
    pub n_founders: usize,
    /// `None` simulates null data.
    pub model: Option<PenetranceModel>,
    pub maf: f64,
    pub marginal_effect: f64,
    /// One locus (Model 1 only) or two; `None` places them automatically.
    pub loci: Option<Vec<usize>>,
    /// Number of disease loci when placed automatically.
    pub n_loci: usize,
    pub n_cases: usize,
    pub n_controls: usize,
    pub pool_size: Option<usize>,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn new(n_snps: usize, n_cases: usize, n_controls: usize, seed: u64) -> Self {
        SimulationSpec {
            n_snps,
            block_width: DEFAULT_BLOCK_WIDTH,
            n_founders: DEFAULT_FOUNDERS,
            model: None,
            maf: 0.2,
            marginal_effect: 0.5,
            loci: None,
            n_loci: 2,
            n_cases,
            n_controls,
            pool_size: None,
            seed,
        }
    }

    pub fn with_model(mut self, model: PenetranceModel, maf: f64, marginal_effect: f64) -> Self {
        self.model = Some(model);
        self.maf = maf;
        self.marginal_effect = marginal_effect;
        self
    }
}

/// Default disease loci: the middle SNP of blocks at 1/3 and 2/3 of the
/// region (or the middle block for a single locus).
pub fn default_loci(pool: &FounderPool, n_loci: usize) -> Result<Vec<usize>> {
    let k = pool.blocks().len();
    let picks: Vec<usize> = match n_loci {
        1 => vec![k / 2],
        2 if k >= 2 => vec![k / 3, (2 * k / 3).max(k / 3 + 1)],
        _ => {
            return Err(Error::invalid(format!(
                "cannot place {n_loci} disease loci in {k} blocks"
            )))
        }
    };
    Ok(picks
        .into_iter()
        .map(|b| {
            let blk = &pool.blocks()[b];
            blk.start + blk.width() / 2
        })
        .collect())
}

/// Smallest pool that covers the expected demand of every genotype class.
pub fn minimum_pool_size(model: &DiseaseModel, n_cases: usize, n_controls: usize) -> usize {
    let risk = model.risk_table();
    let p = model.control_class_frequencies();
    let mean: f64 = risk.iter().zip(&p).map(|(r, q)| r * q).sum();
    let max = risk.iter().copied().fold(1.0, f64::max);
    (n_controls as f64 + n_cases as f64 * max / mean).ceil() as usize
}

/// Default cap on pool individuals drawn before giving up.
pub const DEFAULT_MAX_POOL: usize = 50_000_000;

/// Simulates a dataset from a pool and disease model.
///
/// The disease alleles must already be planted in `pool` at `model.loci`.
/// The per-class quotas of cases and controls are drawn first; unaffected
/// individuals are then generated one by one and each is kept, at most once,
/// if its disease genotype class still has an open quota. The pool is
/// exhausted when `pool_size` individuals (default 50 million) have been
/// generated without filling every quota.
pub fn simulate_with_pool(
    pool: &FounderPool,
    model: Option<&DiseaseModel>,
    n_cases: usize,
    n_controls: usize,
    pool_size: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<GenotypeDataset> {
    let loci: &[usize] = model.map_or(&[], |m| &m.loci);
    let located: Vec<(usize, usize)> = loci.iter().map(|&l| pool.locate(l)).collect();
    for w in located.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::invalid(
                "disease loci must lie in different founder blocks",
            ));
        }
    }
    let min = model.map_or(n_cases + n_controls, |m| {
        minimum_pool_size(m, n_cases, n_controls)
    });
    let limit = match pool_size {
        Some(s) if s < min => {
            return Err(Error::Simulation(format!(
                "pool of {s} individuals is below the minimum {min} for this model"
            )))
        }
        Some(s) => s,
        None => DEFAULT_MAX_POOL.max(min),
    };

    let (case_p, control_p) = match model {
        Some(m) => (m.case_class_frequencies(), m.control_class_frequencies()),
        None => (vec![1.0], vec![1.0]),
    };
    let n_classes = case_p.len();
    let mut case_quota = vec![0usize; n_classes];
    for _ in 0..n_cases {
        case_quota[pick(&case_p, rng) as usize] += 1;
    }
    let mut control_quota = vec![0usize; n_classes];
    for _ in 0..n_controls {
        control_quota[pick(&control_p, rng) as usize] += 1;
    }

    let mut cases = Vec::with_capacity(n_cases);
    let mut controls = Vec::with_capacity(n_controls);
    let mut drawn = 0;
    while cases.len() < n_cases || controls.len() < n_controls {
        if drawn == limit {
            let open: Vec<usize> = (0..n_classes)
                .filter(|&c| case_quota[c] + control_quota[c] > 0)
                .collect();
            return Err(Error::Simulation(format!(
                "pool of {limit} individuals exhausted with disease genotype classes {open:?} unfilled"
            )));
        }
        drawn += 1;
        // Disease blocks first; the rest only for individuals that are kept.
        let disease_pairs: SmallPairs = located
            .iter()
            .map(|&(k, _)| {
                let f = &pool.blocks[k].frequencies;
                [pick(f, rng), pick(f, rng)]
            })
            .collect();
        let class = located
            .iter()
            .zip(&disease_pairs)
            .fold(0, |acc, (&(k, s), pair)| {
                let b = &pool.blocks[k];
                acc * 3
                    + (b.haplotypes[pair[0] as usize][s] + b.haplotypes[pair[1] as usize][s])
                        as usize
            });
        let target = if case_quota[class] > 0 {
            case_quota[class] -= 1;
            &mut cases
        } else if control_quota[class] > 0 {
            control_quota[class] -= 1;
            &mut controls
        } else {
            continue;
        };
        let founders: Vec<[u8; 2]> = (0..pool.blocks.len())
            .map(|k| match located.iter().position(|&(dk, _)| dk == k) {
                Some(d) => disease_pairs[d],
                None => {
                    let f = &pool.blocks[k].frequencies;
                    [pick(f, rng), pick(f, rng)]
                }
            })
            .collect();
        target.push(pool.genotype_row(&founders));
    }

    let ids = (0..pool.n_snps())
        .map(|j| format!("snp{}", j + 1))
        .collect();
    let positions = (0..pool.n_snps() as u64)
        .map(|j| (j + 1) * SNP_SPACING)
        .collect();
    GenotypeDataset::from_rows(ids, positions, &cases, &controls)
}

type SmallPairs = smallvec::SmallVec<[[u8; 2]; 2]>;

/// Runs a full replicate: founders, disease alleles, pool and sampling.
pub fn simulate(spec: &SimulationSpec) -> Result<SimulatedDataset> {
    if spec.n_snps == 0 {
        return Err(Error::invalid("at least one SNP is required"));
    }
    if spec.block_width == 0 {
        return Err(Error::invalid("block width must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let widths = uniform_widths(spec.n_snps, spec.block_width);
    let mut pool = FounderPool::generate(&widths, spec.n_founders, &mut rng)?;

    let model = match spec.model {
        None => None,
        Some(m) => {
            let loci = match &spec.loci {
                Some(l) => l.clone(),
                None => default_loci(&pool, spec.n_loci)?,
            };
            if let Some(&bad) = loci.iter().find(|&&l| l >= spec.n_snps) {
                return Err(Error::invalid(format!("disease locus {bad} out of range")));
            }
            let dm = DiseaseModel::from_effect(m, spec.marginal_effect, spec.maf, loci)?;
            for &l in &dm.loci {
                pool.plant_disease_allele(l, spec.maf)?;
            }
            Some(dm)
        }
    };
    let dataset = simulate_with_pool(
        &pool,
        model.as_ref(),
        spec.n_cases,
        spec.n_controls,
        spec.pool_size,
        &mut rng,
    )?;
    let loci = model.as_ref().map_or_else(Vec::new, |m| m.loci.clone());
    let truth = Truth {
        model: spec.model,
        theta: model.as_ref().map_or(0.0, |m| m.theta),
        maf: spec.maf,
        marginal_effect: if spec.model.is_some() {
            spec.marginal_effect
        } else {
            0.0
        },
        locus_ids: loci.iter().map(|&l| dataset.snp_ids()[l].clone()).collect(),
        windows: loci
            .iter()
            .map(|&l| l.saturating_sub(TRUTH_WINDOW)..=(l + TRUTH_WINDOW).min(spec.n_snps - 1))
            .collect(),
        loci,
        block_starts: pool.block_starts(),
        loci_dropped: false,
    };
    Ok(SimulatedDataset { dataset, truth })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LociPolicy {
    #[default]
    Keep,
    Drop,
}

/// Removes the disease SNPs and re-expresses truth as windows of surviving
/// SNPs within 5 of each removed locus, in the new indexing.
pub fn drop_loci(sim: &SimulatedDataset, policy: LociPolicy) -> Result<SimulatedDataset> {
    if policy == LociPolicy::Keep {
        return Ok(sim.clone());
    }
    if sim.truth.loci_dropped {
        return Err(Error::invalid("disease loci were already dropped"));
    }
    if sim.truth.loci.is_empty() {
        return Err(Error::invalid("dataset has no disease loci to drop"));
    }
    let l = sim.dataset.n_snps();
    let dropped = &sim.truth.loci;
    let keep: Vec<usize> = (0..l).filter(|j| !dropped.contains(j)).collect();
    let new_index = |old: usize| keep.binary_search(&old).ok();
    let windows = dropped
        .iter()
        .map(|&locus| {
            let lo = locus.saturating_sub(TRUTH_WINDOW);
            let hi = (locus + TRUTH_WINDOW).min(l - 1);
            let mapped: Vec<usize> = (lo..=hi).filter_map(new_index).collect();
            *mapped.first().expect("window keeps at least one SNP")
                ..=*mapped.last().expect("window keeps at least one SNP")
        })
        .collect();
    let mut block_starts: Vec<usize> = sim
        .truth
        .block_starts
        .iter()
        .filter_map(|&s| keep.iter().position(|&k| k >= s))
        .collect();
    block_starts.dedup();
    let truth = Truth {
        loci: Vec::new(),
        windows,
        block_starts,
        loci_dropped: true,
        ..sim.truth.clone()
    };
    Ok(SimulatedDataset {
        dataset: sim.dataset.select_snps(&keep),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn zero_effect_gives_zero_theta() {
        for m in [
            PenetranceModel::Model1,
            PenetranceModel::Model2,
            PenetranceModel::Model3,
        ] {
            assert_eq!(solve_theta(m, 2, 0.0, 0.2).unwrap(), 0.0);
        }
    }

    #[test]
    fn model3_theta_by_brute_force() {
        // Brute-force odds ratio over the 9 genotype pairs at f = 0.5.
        let f = 0.5;
        let theta = solve_theta(PenetranceModel::Model3, 2, 0.5, f).unwrap();
        let g = hwe_genotype_frequencies(f);
        let (mut case_carrier, mut case_non, mut ctl_carrier, mut ctl_non) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let p = g[i] * g[j];
                let r = if i >= 1 && j >= 1 { 1.0 + theta } else { 1.0 };
                if i >= 1 {
                    case_carrier += p * r;
                    ctl_carrier += p;
                } else {
                    case_non += p * r;
                    ctl_non += p;
                }
            }
        }
        let or = (case_carrier / case_non) / (ctl_carrier / ctl_non);
        assert!((or.ln() - 1.5).abs() < 1e-8);
        // Carrier frequency 0.75 at the other locus: OR = 1 + 0.75 θ.
        assert!((theta - (1.5f64.exp() - 1.0) / 0.75).abs() < 1e-9);
    }

    #[test]
    fn theta_is_monotone_in_effect() {
        for m in [
            PenetranceModel::Model1,
            PenetranceModel::Model2,
            PenetranceModel::Model3,
        ] {
            let mut last = 0.0;
            for e in [0.1, 0.3, 0.5, 1.0, 2.0] {
                let t = solve_theta(m, 2, e, 0.2).unwrap();
                assert!(t > last, "{m:?} {e}");
                let or = marginal_odds_ratio(m, 2, t, 0.2);
                assert!((or.ln() - 1.0 - e).abs() < 1e-8);
                last = t;
            }
        }
        assert!(solve_theta(PenetranceModel::Model3, 2, 1e6, 0.05).is_err());
        assert!(solve_theta(PenetranceModel::Model2, 1, 0.5, 0.2).is_err());
    }

    #[test]
    fn model_tables() {
        let t = 0.5;
        assert_eq!(PenetranceModel::Model1.risk(t, &[2, 1]), 1.5f64.powi(3));
        assert_eq!(PenetranceModel::Model1.risk(t, &[2]), 2.25);
        assert_eq!(PenetranceModel::Model2.risk(t, &[0, 2]), 1.0);
        assert_eq!(PenetranceModel::Model2.risk(t, &[1, 1]), 2.25);
        assert_eq!(PenetranceModel::Model2.risk(t, &[2, 2]), 1.5f64.powi(4));
        assert_eq!(PenetranceModel::Model3.risk(t, &[1, 2]), 1.5);
        assert_eq!(PenetranceModel::Model3.risk(t, &[0, 2]), 1.0);
    }

    #[test]
    fn founder_blocks_satisfy_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool = FounderPool::generate(&uniform_widths(23, 5), 4, &mut rng).unwrap();
        assert_eq!(pool.n_snps(), 23);
        assert_eq!(pool.block_starts(), vec![0, 5, 10, 15, 20]);
        for b in pool.blocks() {
            assert!((b.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(b.acceptable() || b.width() == 1);
        }
        assert_eq!(pool.locate(12), (2, 2));
    }

    #[test]
    fn planting_sets_allele_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pool = FounderPool::generate(&uniform_widths(10, 5), 4, &mut rng).unwrap();
        pool.plant_disease_allele(7, 0.2).unwrap();
        assert!((pool.allele_frequency(7) - 0.2).abs() < 1e-12);
        assert!(pool.plant_disease_allele(7, 0.0).is_err());
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = SimulationSpec::new(20, 40, 40, 9).with_model(PenetranceModel::Model3, 0.2, 0.5);
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(
            a.dataset.to_canonical_string(),
            b.dataset.to_canonical_string()
        );
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.truth.loci, vec![7, 12]);
    }

    #[test]
    fn drop_loci_windows() {
        let spec =
            SimulationSpec::new(100, 30, 30, 1).with_model(PenetranceModel::Model1, 0.2, 0.5);
        let spec = SimulationSpec {
            loci: Some(vec![40, 70]),
            ..spec
        };
        let sim = simulate(&spec).unwrap();
        assert_eq!(drop_loci(&sim, LociPolicy::Keep).unwrap(), sim);
        let dropped = drop_loci(&sim, LociPolicy::Drop).unwrap();
        assert_eq!(dropped.dataset.n_snps(), 98);
        assert_eq!(dropped.truth.windows, vec![35..=44, 64..=73]);
        assert_eq!(dropped.truth.locus_ids, vec!["snp41", "snp71"]);
        assert!(dropped.dataset.snp_index("snp41").is_none());
        assert!(drop_loci(&dropped, LociPolicy::Drop).is_err());
    }

    #[test]
    fn undersized_pool_is_rejected() {
        let mut spec =
            SimulationSpec::new(20, 100, 100, 2).with_model(PenetranceModel::Model1, 0.2, 0.5);
        spec.pool_size = Some(150);
        assert!(matches!(simulate(&spec), Err(Error::Simulation(_))));
    }

    #[test]
    fn case_class_frequencies_match_sampling() {
        let m = DiseaseModel::from_effect(PenetranceModel::Model1, 0.5, 0.2, vec![2, 7]).unwrap();
        let p = m.case_class_frequencies();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let mut counts = [0usize; 9];
        for _ in 0..n {
            counts[pick(&p, &mut rng) as usize] += 1;
        }
        for (c, q) in counts.iter().zip(&p) {
            let se = (q * (1.0 - q) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - q).abs() < 3.0 * se + 1e-12);
        }
    }

    #[test]
    fn null_controls_follow_hwe() {
        let spec = SimulationSpec::new(10, 0, 2000, 5);
        let sim = simulate(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pool = FounderPool::generate(&uniform_widths(10, 5), 4, &mut rng).unwrap();
        for j in 0..10 {
            let q = pool.allele_frequency(j);
            let (_, ctl) = sim.dataset.column_counts(j).unwrap();
            let e = hwe_genotype_frequencies(q).map(|x| x * 2000.0);
            let chi: f64 = (0..3).map(|g| (ctl[g] as f64 - e[g]).powi(2) / e[g]).sum();
            assert!(
                stats::chi_square_sf(chi, 2.0) > 0.001,
                "SNP {j}: {ctl:?} vs {e:?}"
            );
        }
    }
}
