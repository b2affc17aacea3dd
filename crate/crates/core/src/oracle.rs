//! Exact posterior by exhaustive enumeration of every `(B, I)` state.
//!
//! Block terms depend only on a block's range and the labels inside it, so
//! for every range the oracle tabulates the term plus the label prior for all
//! `3^w` local label patterns. With the group-2 set `S` fixed, the remaining
//! labels inside each block are summed out independently, which reduces the
//! work per partition from `3^L` to `2^L` subsets.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genotype::GenotypeDataset;
use crate::model::{
    BlockPartition, Group, MembershipVector, ModelConstraints, ModelEvaluator, PriorConfig,
};
use crate::stats::{log_add_exp, log_sum_exp};

/// Largest SNP count the oracle accepts.
pub const MAX_ORACLE_SNPS: usize = 10;
/// Largest SNP count for the frozen-membership partition posterior.
pub const MAX_PARTITION_SNPS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub marginal_posterior: Vec<f64>,
    pub epistatic_posterior: Vec<f64>,
    pub boundary_posterior: Vec<f64>,
    /// `ln Σ P(D, U, B, I)` over all allowed states.
    pub log_normalizer: f64,
    pub states_enumerated: u128,
    /// Posterior expected number of blocks.
    pub mean_block_count: f64,
}

impl OracleResult {
    pub fn n_snps(&self) -> usize {
        self.marginal_posterior.len()
    }

    pub fn assoc_posterior(&self) -> Vec<f64> {
        self.marginal_posterior
            .iter()
            .zip(&self.epistatic_posterior)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Per-range tables; `None` when the range breaks the diplotype cap.
struct RangeTable {
    /// Term plus label prior for every local pattern (base-3 digits, SNP `start + t` at digit `t`).
    pattern: Vec<f64>,
    /// For each local group-2 mask: log-sum over the 0/1 labels of the other SNPs.
    z: Vec<f64>,
    /// `z1[mask][t]`: same sum restricted to label 1 at offset `t`.
    z1: Vec<Vec<f64>>,
}

/// Precomputed block tables for one dataset and prior.
pub struct Oracle<'a> {
    dataset: &'a GenotypeDataset,
    priors: PriorConfig,
    constraints: ModelConstraints,
    n_snps: usize,
    /// Indexed by `start * (L + 1) + end`.
    tables: Vec<Option<RangeTable>>,
    /// Group-2 term for every subset bitmask with at most `max_order` members.
    epistatic: Vec<f64>,
}

fn digit(pattern: usize, t: usize) -> usize {
    pattern / 3usize.pow(t as u32) % 3
}

impl<'a> Oracle<'a> {
    pub fn new(
        dataset: &'a GenotypeDataset,
        priors: &PriorConfig,
        constraints: &ModelConstraints,
    ) -> Result<Self> {
        let l = dataset.n_snps();
        if l > MAX_ORACLE_SNPS {
            return Err(Error::Guard(format!(
                "exact enumeration is limited to {MAX_ORACLE_SNPS} SNPs, got {l}"
            )));
        }
        if l == 0 {
            return Err(Error::invalid("dataset has no SNPs"));
        }
        let ranges: Vec<Range<usize>> = (0..l)
            .flat_map(|a| (a + 1..=l).map(move |b| a..b))
            .collect();
        let built: Vec<(Range<usize>, Option<RangeTable>)> = ranges
            .into_par_iter()
            .map(|r| {
                let t = build_table(dataset, priors, constraints, r.clone());
                (r, t)
            })
            .collect();
        let mut tables: Vec<Option<RangeTable>> = (0..(l + 1) * (l + 1)).map(|_| None).collect();
        for (r, t) in built {
            tables[r.start * (l + 1) + r.end] = t;
        }
        let mut eval = ModelEvaluator::new(dataset, *priors.dirichlet());
        let epistatic = (0..1usize << l)
            .map(|mask| {
                if mask.count_ones() as usize > constraints.max_order {
                    return f64::NEG_INFINITY;
                }
                let set: Vec<usize> = (0..l).filter(|&i| mask >> i & 1 == 1).collect();
                eval.epistatic_term(&set)
            })
            .collect();
        Ok(Oracle {
            dataset,
            priors: *priors,
            constraints: *constraints,
            n_snps: l,
            tables,
            epistatic,
        })
    }

    fn table(&self, r: &Range<usize>) -> Option<&RangeTable> {
        self.tables[r.start * (self.n_snps + 1) + r.end].as_ref()
    }

    /// `ln P(D, U, B, I)` assembled from the tables; `None` for forbidden states.
    pub fn log_mass(
        &self,
        partition: &BlockPartition,
        membership: &MembershipVector,
    ) -> Option<f64> {
        let mask: usize = membership
            .epistatic_set()
            .iter()
            .map(|&i| 1usize << i)
            .sum();
        let mut total = self.epistatic[mask];
        if total == f64::NEG_INFINITY {
            return None;
        }
        for r in partition.blocks() {
            let t = self.table(&r)?;
            let p: usize = r
                .clone()
                .rev()
                .fold(0, |acc, i| acc * 3 + membership.get(i) as usize);
            total += t.pattern[p];
        }
        Some(
            total
                + self
                    .priors
                    .log_prior_partition(self.n_snps, partition.n_blocks()),
        )
    }

    /// Exact posterior marginals.
    pub fn enumerate(&self) -> OracleResult {
        let l = self.n_snps;
        let n_partitions = 1usize << (l - 1);
        let per_partition: Vec<Option<PartitionSums>> = (0..n_partitions)
            .into_par_iter()
            .map(|bits| self.partition_sums(&partition_from_bits(l, bits)))
            .collect();

        let masses: Vec<f64> = per_partition.iter().flatten().map(|p| p.mass).collect();
        let log_z = log_sum_exp(&masses);
        let mut marginal = vec![0.0; l];
        let mut epistatic = vec![0.0; l];
        let mut boundary = vec![0.0; l];
        let mut blocks = 0.0;
        let mut states: u128 = 0;
        for (bits, sums) in per_partition.iter().enumerate() {
            let Some(s) = sums else { continue };
            let b = partition_from_bits(l, bits);
            let w = (s.mass - log_z).exp();
            for &start in b.starts() {
                boundary[start] += w;
            }
            blocks += w * b.n_blocks() as f64;
            for i in 0..l {
                marginal[i] += (s.marginal[i] - log_z).exp();
                epistatic[i] += (s.epistatic[i] - log_z).exp();
            }
            states += s.states;
        }
        OracleResult {
            marginal_posterior: marginal,
            epistatic_posterior: epistatic,
            boundary_posterior: boundary,
            log_normalizer: log_z,
            states_enumerated: states,
            mean_block_count: blocks,
        }
    }

    fn partition_sums(&self, b: &BlockPartition) -> Option<PartitionSums> {
        let l = self.n_snps;
        let blocks: Vec<(Range<usize>, &RangeTable)> = b
            .blocks()
            .map(|r| self.table(&r).map(|t| (r, t)))
            .collect::<Option<_>>()?;
        let prior_b = self.priors.log_prior_partition(l, b.n_blocks());
        let mut mass = f64::NEG_INFINITY;
        let mut marginal = vec![f64::NEG_INFINITY; l];
        let mut epistatic = vec![f64::NEG_INFINITY; l];
        let mut states: u128 = 0;
        for s in 0..1usize << l {
            let epi = self.epistatic[s];
            if epi == f64::NEG_INFINITY {
                continue;
            }
            states += 1u128 << (l - s.count_ones() as usize);
            let mut total = epi + prior_b;
            for (r, t) in &blocks {
                total += t.z[(s >> r.start) & ((1 << r.len()) - 1)];
            }
            mass = log_add_exp(mass, total);
            for (r, t) in &blocks {
                let local = (s >> r.start) & ((1 << r.len()) - 1);
                let rest = total - t.z[local];
                for (off, i) in r.clone().enumerate() {
                    if local >> off & 1 == 1 {
                        epistatic[i] = log_add_exp(epistatic[i], total);
                    } else {
                        marginal[i] = log_add_exp(marginal[i], rest + t.z1[local][off]);
                    }
                }
            }
        }
        Some(PartitionSums {
            mass,
            marginal,
            epistatic,
            states,
        })
    }
}

struct PartitionSums {
    mass: f64,
    marginal: Vec<f64>,
    epistatic: Vec<f64>,
    states: u128,
}

fn partition_from_bits(l: usize, bits: usize) -> BlockPartition {
    let mut starts = vec![0];
    starts.extend((1..l).filter(|&i| bits >> (i - 1) & 1 == 1));
    BlockPartition::from_starts(l, starts).expect("valid starts")
}

fn build_table(
    dataset: &GenotypeDataset,
    priors: &PriorConfig,
    constraints: &ModelConstraints,
    r: Range<usize>,
) -> Option<RangeTable> {
    let mut eval = ModelEvaluator::new(dataset, *priors.dirichlet());
    if !eval.block_allowed(r.clone(), constraints) {
        return None;
    }
    let w = r.len();
    let n_patterns = 3usize.pow(w as u32);
    let mut groups = vec![Group::Null; dataset.n_snps()];
    let mut pattern = Vec::with_capacity(n_patterns);
    let mut z = vec![f64::NEG_INFINITY; 1 << w];
    let mut z1 = vec![vec![f64::NEG_INFINITY; w]; 1 << w];
    for p in 0..n_patterns {
        let mut prior = 0.0;
        let mut mask = 0;
        for t in 0..w {
            let g = Group::from_code(digit(p, t) as u8).expect("digit below 3");
            groups[r.start + t] = g;
            prior += priors.ln_p_group(g);
            if g == Group::Epistatic {
                mask |= 1 << t;
            }
        }
        let v = eval.block_term(r.clone(), &groups) + prior;
        pattern.push(v);
        z[mask] = log_add_exp(z[mask], v);
        for (t, acc) in z1[mask].iter_mut().enumerate().take(w) {
            if digit(p, t) == 1 {
                *acc = log_add_exp(*acc, v);
            }
        }
    }
    Some(RangeTable { pattern, z, z1 })
}

/// Exact posterior marginals over every allowed `(B, I)`.
pub fn enumerate_posterior(
    dataset: &GenotypeDataset,
    priors: &PriorConfig,
    constraints: &ModelConstraints,
) -> Result<OracleResult> {
    Ok(Oracle::new(dataset, priors, constraints)?.enumerate())
}

/// Exact `P(B | D, U, I)` for a fixed membership, over every allowed partition.
pub fn partition_posterior(
    dataset: &GenotypeDataset,
    priors: &PriorConfig,
    constraints: &ModelConstraints,
    membership: &MembershipVector,
) -> Result<Vec<(BlockPartition, f64)>> {
    let l = dataset.n_snps();
    if l > MAX_PARTITION_SNPS {
        return Err(Error::Guard(format!(
            "partition enumeration is limited to {MAX_PARTITION_SNPS} SNPs, got {l}"
        )));
    }
    if l == 0 {
        return Err(Error::invalid("dataset has no SNPs"));
    }
    let mut eval = ModelEvaluator::new(dataset, *priors.dirichlet());
    let mut states = Vec::new();
    for bits in 0..1usize << (l - 1) {
        let b = partition_from_bits(l, bits);
        if let Ok(v) = eval.log_joint(&b, membership, priors, constraints) {
            states.push((b, v));
        }
    }
    if states.is_empty() {
        return Err(Error::Constraint(
            "no partition satisfies the constraints".into(),
        ));
    }
    let log_z = log_sum_exp(&states.iter().map(|s| s.1).collect::<Vec<_>>());
    Ok(states
        .into_iter()
        .map(|(b, v)| (b, (v - log_z).exp()))
        .collect())
}

impl Oracle<'_> {
    pub fn dataset(&self) -> &GenotypeDataset {
        self.dataset
    }

    pub fn constraints(&self) -> &ModelConstraints {
        &self.constraints
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(l: usize, n: usize, seed: u64) -> GenotypeDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|_| (0..l).map(|_| rng.random_range(0..3)).collect())
            .collect();
        let ids = (0..l).map(|j| format!("s{j}")).collect();
        let pos = (1..=l as u64).collect();
        GenotypeDataset::from_rows(ids, pos, &rows[..n / 2], &rows[n / 2..]).unwrap()
    }

    fn empty(l: usize) -> GenotypeDataset {
        let ids = (0..l).map(|j| format!("s{j}")).collect();
        GenotypeDataset::from_rows(ids, (1..=l as u64).collect(), &[], &[]).unwrap()
    }

    #[test]
    fn empty_data_echoes_prior() {
        let p = PriorConfig::new(0.3, 0.1, 0.05, 1.5).unwrap();
        let l = 4;
        let r = enumerate_posterior(&empty(l), &p, &ModelConstraints::unbounded(l)).unwrap();
        for i in 0..l {
            assert!((r.marginal_posterior[i] - 0.1).abs() < 1e-12);
            assert!((r.epistatic_posterior[i] - 0.05).abs() < 1e-12);
        }
        assert!((r.boundary_posterior[0] - 1.0).abs() < 1e-12);
        for i in 1..l {
            assert!((r.boundary_posterior[i] - 0.3).abs() < 1e-12);
        }
        assert_eq!(r.states_enumerated, 8 * 81);
        assert!((r.mean_block_count - (1.0 + 3.0 * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn order_truncation_renormalizes_epistatic_prior() {
        // L = 2, at most one group-2 SNP: the state (2,2) is removed.
        let p = PriorConfig::new(0.5, 0.2, 0.3, 1.5).unwrap();
        let r = enumerate_posterior(&empty(2), &p, &ModelConstraints::new(100, 1)).unwrap();
        let (p0, p1, p2) = (0.5, 0.2, 0.3);
        let z = 1.0 - p2 * p2;
        let expected_2 = p2 * (p0 + p1) / z;
        let expected_1 = p1 * (p0 + p1 + p2) / z;
        assert!((r.epistatic_posterior[0] - expected_2).abs() < 1e-12);
        assert!((r.marginal_posterior[1] - expected_1).abs() < 1e-12);
        assert_eq!(r.states_enumerated, 2 * 8);
    }

    #[test]
    fn single_snp() {
        let d = random_dataset(1, 40, 1);
        let p = PriorConfig::new(0.5, 0.1, 0.1, 1.5).unwrap();
        let r = enumerate_posterior(&d, &p, &ModelConstraints::unbounded(1)).unwrap();
        assert_eq!(r.boundary_posterior, vec![1.0]);
        assert_eq!(r.states_enumerated, 3);
        // Three-state enumeration by hand.
        let mut eval = ModelEvaluator::new(&d, *p.dirichlet());
        let b = BlockPartition::singletons(1);
        let c = ModelConstraints::unbounded(1);
        let lj: Vec<f64> = (0..3u8)
            .map(|g| {
                let m = MembershipVector::from_codes(&[g]).unwrap();
                eval.log_joint(&b, &m, &p, &c).unwrap()
            })
            .collect();
        let z = log_sum_exp(&lj);
        assert!((r.marginal_posterior[0] - (lj[1] - z).exp()).abs() < 1e-12);
        assert!((r.epistatic_posterior[0] - (lj[2] - z).exp()).abs() < 1e-12);
        assert!((r.log_normalizer - z).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_enumeration() {
        let l = 4;
        let d = random_dataset(l, 40, 7);
        let p = PriorConfig::new(0.4, 0.15, 0.1, 1.5).unwrap();
        let c = ModelConstraints::new(3, 2);
        let r = enumerate_posterior(&d, &p, &c).unwrap();
        let mut eval = ModelEvaluator::new(&d, *p.dirichlet());
        let mut masses = Vec::new();
        for bits in 0..1usize << (l - 1) {
            let b = partition_from_bits(l, bits);
            for code in 0..3usize.pow(l as u32) {
                let codes: Vec<u8> = (0..l).map(|t| digit(code, t) as u8).collect();
                let m = MembershipVector::from_codes(&codes).unwrap();
                if let Ok(v) = eval.log_joint(&b, &m, &p, &c) {
                    masses.push((b.clone(), m, v));
                }
            }
        }
        let z = log_sum_exp(&masses.iter().map(|s| s.2).collect::<Vec<_>>());
        assert!((r.log_normalizer - z).abs() < 1e-9);
        assert_eq!(r.states_enumerated, masses.len() as u128);
        let total: f64 = masses.iter().map(|s| (s.2 - z).exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        for i in 0..l {
            let m1: f64 = masses
                .iter()
                .filter(|s| s.1.get(i) == Group::Marginal)
                .map(|s| (s.2 - z).exp())
                .sum();
            let m2: f64 = masses
                .iter()
                .filter(|s| s.1.get(i) == Group::Epistatic)
                .map(|s| (s.2 - z).exp())
                .sum();
            let bd: f64 = masses
                .iter()
                .filter(|s| s.0.is_boundary(i))
                .map(|s| (s.2 - z).exp())
                .sum();
            assert!((r.marginal_posterior[i] - m1).abs() < 1e-9);
            assert!((r.epistatic_posterior[i] - m2).abs() < 1e-9);
            assert!((r.boundary_posterior[i] - bd).abs() < 1e-9);
        }
    }

    #[test]
    fn log_mass_agrees_with_model() {
        let l = 6;
        let d = random_dataset(l, 60, 3);
        let p = PriorConfig::new(0.3, 0.1, 0.1, 1.5).unwrap();
        let c = ModelConstraints::for_sample_size(60).unwrap();
        let oracle = Oracle::new(&d, &p, &c).unwrap();
        let mut eval = ModelEvaluator::new(&d, *p.dirichlet());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut checked = 0;
        while checked < 100 {
            let b = partition_from_bits(l, rng.random_range(0..1 << (l - 1)));
            let codes: Vec<u8> = (0..l).map(|_| rng.random_range(0..3)).collect();
            let m = MembershipVector::from_codes(&codes).unwrap();
            match (oracle.log_mass(&b, &m), eval.log_joint(&b, &m, &p, &c)) {
                (Some(a), Ok(e)) => {
                    assert!((a - e).abs() < 1e-9, "{a} vs {e}");
                    checked += 1;
                }
                (None, Err(_)) => {}
                other => panic!("disagreement on validity: {other:?}"),
            }
        }
    }

    #[test]
    fn guard_refuses_large_inputs() {
        let d = random_dataset(12, 40, 1);
        let p = PriorConfig::new(0.3, 0.1, 0.1, 1.5).unwrap();
        let r = enumerate_posterior(&d, &p, &ModelConstraints::unbounded(12));
        assert!(matches!(r, Err(Error::Guard(_))));
    }

    #[test]
    fn partition_posterior_sums_to_one() {
        let d = random_dataset(4, 40, 2);
        let p = PriorConfig::new(0.3, 0.1, 0.1, 1.5).unwrap();
        let m = MembershipVector::from_codes(&[0, 1, 0, 0]).unwrap();
        let post = partition_posterior(&d, &p, &ModelConstraints::unbounded(4), &m).unwrap();
        assert_eq!(post.len(), 8);
        assert!((post.iter().map(|s| s.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
