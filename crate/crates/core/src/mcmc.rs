//! Metropolis–Hastings / Gibbs sampler over block partitions and memberships.
//!
//! One iteration is: one block move (split, merge or shift with probabilities
//! 0.1, 0.1, 0.8), one Gibbs sweep over all SNP labels in index order, then a
//! swap pass that proposes exchanging the label of every associated SNP with a
//! uniformly chosen SNP from another group.
//!
//! Chains start from all-singleton blocks with every SNP in group 0, a state
//! that satisfies the diplotype and order caps for any dataset. Chain `c` of a
//! multi-chain run is seeded with `base_seed + c`.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use smallvec::{smallvec, SmallVec};

use crate::error::{Error, Result};
use crate::genotype::GenotypeDataset;
use crate::model::{
    BlockPartition, Forbidden, Group, MembershipVector, ModelConstraints, ModelEvaluator,
    PriorConfig,
};
use crate::stats;

pub const SPLIT_PROBABILITY: f64 = 0.1;
pub const MERGE_PROBABILITY: f64 = 0.1;
pub const SHIFT_PROBABILITY: f64 = 0.8;

/// Lags reported by the autocorrelation diagnostic.
pub const MAX_DIAGNOSTIC_LAG: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockMoveKind {
    Split,
    Merge,
    Shift,
}

impl BlockMoveKind {
    fn index(self) -> usize {
        match self {
            BlockMoveKind::Split => 0,
            BlockMoveKind::Merge => 1,
            BlockMoveKind::Shift => 2,
        }
    }

    /// Draws a kind with probabilities (0.1, 0.1, 0.8).
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let u: f64 = rng.random();
        if u < SPLIT_PROBABILITY {
            BlockMoveKind::Split
        } else if u < SPLIT_PROBABILITY + MERGE_PROBABILITY {
            BlockMoveKind::Merge
        } else {
            BlockMoveKind::Shift
        }
    }
}

/// A concrete change to a partition.
///
/// Block indices refer to the partition the move is applied to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockMove {
    /// Split block `block` so that a new block starts at SNP `at`.
    Split { block: usize, at: usize },
    /// Merge block `left` with block `left + 1`.
    Merge { left: usize },
    /// Move the start of block `block` (never block 0) to SNP `to`.
    Shift { block: usize, to: usize },
}

fn splittable(partition: &BlockPartition) -> impl Iterator<Item = usize> + '_ {
    (0..partition.n_blocks()).filter(move |&k| partition.block_width(k) >= 2)
}

fn movable(partition: &BlockPartition) -> impl Iterator<Item = usize> + '_ {
    (1..partition.n_blocks())
        .filter(move |&k| partition.block_width(k - 1) + partition.block_width(k) >= 3)
}

impl BlockMove {
    pub fn kind(&self) -> BlockMoveKind {
        match self {
            BlockMove::Split { .. } => BlockMoveKind::Split,
            BlockMove::Merge { .. } => BlockMoveKind::Merge,
            BlockMove::Shift { .. } => BlockMoveKind::Shift,
        }
    }

    /// Draws a move of the given kind, or `None` when the kind is inapplicable.
    ///
    /// Split: uniform over blocks with at least two SNPs, then a uniform
    /// interior cut. Merge: uniform adjacent pair. Shift: uniform boundary
    /// among those that can move, then a uniform new position strictly
    /// between the neighbouring boundaries.
    pub fn sample<R: Rng>(
        kind: BlockMoveKind,
        partition: &BlockPartition,
        rng: &mut R,
    ) -> Option<BlockMove> {
        match kind {
            BlockMoveKind::Split => {
                let candidates: SmallVec<[usize; 64]> = splittable(partition).collect();
                if candidates.is_empty() {
                    return None;
                }
                let k = candidates[rng.random_range(0..candidates.len())];
                let r = partition.block(k);
                let at = r.start + rng.random_range(1..r.len());
                Some(BlockMove::Split { block: k, at })
            }
            BlockMoveKind::Merge => {
                let k = partition.n_blocks();
                if k < 2 {
                    return None;
                }
                Some(BlockMove::Merge {
                    left: rng.random_range(0..k - 1),
                })
            }
            BlockMoveKind::Shift => {
                let candidates: SmallVec<[usize; 64]> = movable(partition).collect();
                if candidates.is_empty() {
                    return None;
                }
                let k = candidates[rng.random_range(0..candidates.len())];
                let lo = partition.block(k - 1).start + 1;
                let hi = partition.block(k).end - 1;
                let current = partition.block(k).start;
                // hi - lo + 1 positions, excluding the current one.
                let mut to = lo + rng.random_range(0..hi - lo);
                if to >= current {
                    to += 1;
                }
                Some(BlockMove::Shift { block: k, to })
            }
        }
    }

    /// `(first block, blocks removed, replacement ranges)` describing the edit.
    pub fn edit(&self, partition: &BlockPartition) -> (usize, usize, SmallVec<[Range<usize>; 2]>) {
        match *self {
            BlockMove::Split { block, at } => {
                let r = partition.block(block);
                (block, 1, smallvec![r.start..at, at..r.end])
            }
            BlockMove::Merge { left } => {
                let a = partition.block(left).start;
                let b = partition.block(left + 1).end;
                (left, 2, smallvec![a..b])
            }
            BlockMove::Shift { block, to } => {
                let a = partition.block(block - 1).start;
                let b = partition.block(block).end;
                (block - 1, 2, smallvec![a..to, to..b])
            }
        }
    }

    pub fn apply(&self, partition: &BlockPartition) -> BlockPartition {
        let (first, removed, inserted) = self.edit(partition);
        let mut p = partition.clone();
        p.splice(first, removed, &inserted);
        p
    }

    /// The move that undoes this one, expressed on the resulting partition.
    pub fn reverse(&self, partition: &BlockPartition) -> BlockMove {
        match *self {
            BlockMove::Split { block, .. } => BlockMove::Merge { left: block },
            BlockMove::Merge { left } => BlockMove::Split {
                block: left,
                at: partition.block(left + 1).start,
            },
            BlockMove::Shift { block, .. } => BlockMove::Shift {
                block,
                to: partition.block(block).start,
            },
        }
    }

    /// `ln q(B → B')` given that this move's kind was drawn.
    pub fn log_forward_density(&self, partition: &BlockPartition) -> f64 {
        match *self {
            BlockMove::Split { block, .. } => {
                let s = splittable(partition).count() as f64;
                let w = partition.block_width(block) as f64;
                -(s.ln() + (w - 1.0).ln())
            }
            BlockMove::Merge { .. } => -((partition.n_blocks() - 1) as f64).ln(),
            BlockMove::Shift { block, .. } => {
                let m = movable(partition).count() as f64;
                let options = partition.block_width(block - 1) + partition.block_width(block) - 2;
                -(m.ln() + (options as f64).ln())
            }
        }
    }

    /// `ln [q(B' → B) / q(B → B')]`. Split and merge are drawn with equal
    /// probability, so the kind probabilities cancel.
    pub fn log_hastings_ratio(&self, partition: &BlockPartition) -> f64 {
        let next = self.apply(partition);
        let back = self.reverse(partition);
        back.log_forward_density(&next) - self.log_forward_density(partition)
    }
}

/// Metropolis–Hastings acceptance with exactly one uniform draw.
///
/// `log_ratio` is `None` for a forbidden proposal, which is never accepted.
pub fn mh_accept<R: Rng>(rng: &mut R, log_ratio: Option<f64>) -> bool {
    let u: f64 = rng.random();
    match log_ratio {
        None => false,
        Some(r) if r >= 0.0 => true,
        Some(r) => u.ln() < r,
    }
}

/// An evaluated block move awaiting the accept/reject decision.
#[derive(Clone, Debug)]
pub struct BlockProposal {
    pub mv: BlockMove,
    pub partition: BlockPartition,
    first: usize,
    removed: usize,
    new_terms: SmallVec<[f64; 2]>,
    /// `ln P(D,U,I,B') − ln P(D,U,I,B)`, `None` when `B'` breaks the diplotype cap.
    pub delta_log_joint: Option<f64>,
    pub log_hastings: f64,
}

impl BlockProposal {
    pub fn log_acceptance_ratio(&self) -> Option<f64> {
        self.delta_log_joint.map(|d| d + self.log_hastings)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MoveStats {
    /// Indexed split, merge, shift.
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
    /// Drawn but inapplicable (counted as rejected proposals).
    pub inapplicable: [u64; 3],
    pub swaps_proposed: u64,
    pub swaps_accepted: u64,
}

impl MoveStats {
    pub fn block_acceptance_rate(&self) -> f64 {
        let p: u64 = self.proposed.iter().sum::<u64>() + self.inapplicable.iter().sum::<u64>();
        if p == 0 {
            return 0.0;
        }
        self.accepted.iter().sum::<u64>() as f64 / p as f64
    }

    pub fn swap_acceptance_rate(&self) -> f64 {
        if self.swaps_proposed == 0 {
            return 0.0;
        }
        self.swaps_accepted as f64 / self.swaps_proposed as f64
    }

    fn merge(&mut self, other: &MoveStats) {
        for k in 0..3 {
            self.proposed[k] += other.proposed[k];
            self.accepted[k] += other.accepted[k];
            self.inapplicable[k] += other.inapplicable[k];
        }
        self.swaps_proposed += other.swaps_proposed;
        self.swaps_accepted += other.swaps_accepted;
    }
}

/// Snapshot of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub partition: BlockPartition,
    pub membership: MembershipVector,
    pub log_joint: f64,
    pub iteration: u64,
}

/// Burn-in, retained iterations and thinning interval.
///
/// The first half of burn-in runs partition-only iterations with every SNP
/// unassociated, so labels are first sampled against settled blocks. Labels
/// picked up while blocks are still singletons tend to lock the chain into
/// poor local modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub burnin: usize,
    pub iterations: usize,
    pub thin: usize,
}

impl Schedule {
    pub fn new(burnin: usize, iterations: usize, thin: usize) -> Result<Self> {
        if thin == 0 {
            return Err(Error::invalid("thinning interval must be at least 1"));
        }
        Ok(Schedule {
            burnin,
            iterations,
            thin,
        })
    }

    /// `10·L` burn-in and `50·L` retained iterations, no thinning.
    pub fn default_for(n_snps: usize) -> Self {
        Schedule {
            burnin: 10 * n_snps,
            iterations: 50 * n_snps,
            thin: 1,
        }
    }

    /// Burn-in iterations run partition-only.
    pub fn partition_warmup(&self) -> usize {
        self.burnin / 2
    }
}

/// One Markov chain over `(B, I)` with cached block terms.
pub struct Chain<'a> {
    eval: ModelEvaluator<'a>,
    priors: PriorConfig,
    constraints: ModelConstraints,
    partition: BlockPartition,
    groups: Vec<Group>,
    epistatic: Vec<usize>,
    counts: [usize; 3],
    block_terms: Vec<f64>,
    epistatic_term: f64,
    log_joint: f64,
    rng: ChaCha8Rng,
    iteration: u64,
    stats: MoveStats,
}

impl<'a> Chain<'a> {
    /// Chain at the default initial state.
    pub fn new(
        dataset: &'a GenotypeDataset,
        priors: PriorConfig,
        constraints: ModelConstraints,
        seed: u64,
    ) -> Self {
        let l = dataset.n_snps();
        Chain::from_state(
            dataset,
            priors,
            constraints,
            BlockPartition::singletons(l),
            MembershipVector::all_null(l),
            seed,
        )
        .expect("singleton blocks with no associated SNPs are always allowed")
    }

    pub fn from_state(
        dataset: &'a GenotypeDataset,
        priors: PriorConfig,
        constraints: ModelConstraints,
        partition: BlockPartition,
        membership: MembershipVector,
        seed: u64,
    ) -> std::result::Result<Self, Forbidden> {
        let mut eval = ModelEvaluator::new(dataset, *priors.dirichlet());
        let log_joint = eval.log_joint(&partition, &membership, &priors, &constraints)?;
        let groups = membership.groups().to_vec();
        let block_terms = partition
            .blocks()
            .map(|r| eval.block_term(r, &groups))
            .collect();
        let epistatic = membership.epistatic_set();
        let epistatic_term = eval.epistatic_term(&epistatic);
        Ok(Chain {
            eval,
            priors,
            constraints,
            partition,
            counts: membership.group_counts(),
            groups,
            epistatic,
            block_terms,
            epistatic_term,
            log_joint,
            rng: ChaCha8Rng::seed_from_u64(seed),
            iteration: 0,
            stats: MoveStats::default(),
        })
    }

    pub fn n_snps(&self) -> usize {
        self.groups.len()
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn epistatic_set(&self) -> &[usize] {
        &self.epistatic
    }

    pub fn log_joint(&self) -> f64 {
        self.log_joint
    }

    pub fn stats(&self) -> &MoveStats {
        &self.stats
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn state(&self) -> ChainState {
        ChainState {
            partition: self.partition.clone(),
            membership: MembershipVector::new(self.groups.clone()),
            log_joint: self.log_joint,
            iteration: self.iteration,
        }
    }

    /// Full recomputation of the log joint at the current state, bypassing caches.
    pub fn fresh_log_joint(&self) -> f64 {
        let mut eval = ModelEvaluator::new(self.eval.dataset(), *self.priors.dirichlet());
        eval.log_joint(
            &self.partition,
            &MembershipVector::new(self.groups.clone()),
            &self.priors,
            &self.constraints,
        )
        .expect("the chain never enters a forbidden state")
    }

    /// Draws a block move of `kind` and evaluates it; `None` if inapplicable.
    pub fn propose_block_move(&mut self, kind: BlockMoveKind) -> Option<BlockProposal> {
        let mv = BlockMove::sample(kind, &self.partition, &mut self.rng)?;
        Some(self.evaluate_block_move(mv))
    }

    /// Evaluates a specific move against the current state.
    pub fn evaluate_block_move(&mut self, mv: BlockMove) -> BlockProposal {
        let (first, removed, inserted) = mv.edit(&self.partition);
        let log_hastings = mv.log_hastings_ratio(&self.partition);
        let partition = mv.apply(&self.partition);
        let mut new_terms = SmallVec::new();
        let mut allowed = true;
        for r in &inserted {
            if !self.eval.block_allowed(r.clone(), &self.constraints) {
                allowed = false;
                break;
            }
            new_terms.push(self.eval.block_term(r.clone(), &self.groups));
        }
        let delta_log_joint = allowed.then(|| {
            let old: f64 = self.block_terms[first..first + removed].iter().sum();
            let new: f64 = new_terms.iter().sum();
            let l = self.n_snps();
            new - old + self.priors.log_prior_partition(l, partition.n_blocks())
                - self
                    .priors
                    .log_prior_partition(l, self.partition.n_blocks())
        });
        BlockProposal {
            mv,
            partition,
            first,
            removed,
            new_terms,
            delta_log_joint,
            log_hastings,
        }
    }

    /// Accept or reject `proposal` with one uniform draw; updates the state on accept.
    pub fn accept(&mut self, proposal: BlockProposal) -> bool {
        let kind = proposal.mv.kind().index();
        self.stats.proposed[kind] += 1;
        if !mh_accept(&mut self.rng, proposal.log_acceptance_ratio()) {
            return false;
        }
        self.stats.accepted[kind] += 1;
        self.block_terms.splice(
            proposal.first..proposal.first + proposal.removed,
            proposal.new_terms.iter().copied(),
        );
        self.partition = proposal.partition;
        self.log_joint += proposal
            .delta_log_joint
            .expect("accepted moves are allowed");
        true
    }

    /// One block move of a randomly drawn kind.
    pub fn block_move_step(&mut self) -> bool {
        let kind = BlockMoveKind::sample(&mut self.rng);
        match self.propose_block_move(kind) {
            Some(p) => self.accept(p),
            None => {
                self.stats.inapplicable[kind.index()] += 1;
                false
            }
        }
    }

    fn epistatic_with(&self, snp: usize, member: bool) -> Vec<usize> {
        let mut set = self.epistatic.clone();
        match (set.binary_search(&snp), member) {
            (Err(pos), true) => set.insert(pos, snp),
            (Ok(pos), false) => {
                set.remove(pos);
            }
            _ => {}
        }
        set
    }

    fn set_group(&mut self, snp: usize, g: Group) {
        let old = self.groups[snp];
        self.counts[old as usize] -= 1;
        self.counts[g as usize] += 1;
        self.groups[snp] = g;
        if old == Group::Epistatic || g == Group::Epistatic {
            self.epistatic = self.epistatic_with(snp, g == Group::Epistatic);
        }
    }

    /// Resamples the label of `snp` from its exact full conditional.
    pub fn gibbs_update(&mut self, snp: usize) -> Group {
        let k = self.partition.block_index_of(snp);
        let block = self.partition.block(k);
        let current = self.groups[snp];
        let mut log_p = [f64::NEG_INFINITY; 3];
        let mut terms = [0.0; 3];
        let mut epi_terms = [0.0; 3];
        for g in Group::ALL {
            let gi = g as usize;
            if g == Group::Epistatic
                && current != Group::Epistatic
                && self.epistatic.len() >= self.constraints.max_order
            {
                continue;
            }
            if g == current {
                terms[gi] = self.block_terms[k];
                epi_terms[gi] = self.epistatic_term;
            } else {
                self.groups[snp] = g;
                terms[gi] = self.eval.block_term(block.clone(), &self.groups);
                self.groups[snp] = current;
                epi_terms[gi] = if g == Group::Epistatic || current == Group::Epistatic {
                    let set = self.epistatic_with(snp, g == Group::Epistatic);
                    self.eval.epistatic_term(&set)
                } else {
                    self.epistatic_term
                };
            }
            log_p[gi] = terms[gi] + epi_terms[gi] + self.priors.ln_p_group(g);
        }
        let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w = log_p.map(|v| (v - max).exp());
        let u: f64 = self.rng.random::<f64>() * (w[0] + w[1] + w[2]);
        let chosen = if u < w[0] {
            Group::Null
        } else if u < w[0] + w[1] || w[2] == 0.0 {
            Group::Marginal
        } else {
            Group::Epistatic
        };
        // Guard against landing on an excluded label through rounding.
        let chosen = if w[chosen as usize] == 0.0 {
            current
        } else {
            chosen
        };
        if chosen != current {
            let (ci, ni) = (current as usize, chosen as usize);
            self.log_joint += log_p[ni] - log_p[ci];
            self.block_terms[k] = terms[ni];
            self.epistatic_term = epi_terms[ni];
            self.set_group(snp, chosen);
        }
        chosen
    }

    /// One Gibbs update of every SNP label, in index order.
    pub fn gibbs_membership_sweep(&mut self) {
        for i in 0..self.n_snps() {
            self.gibbs_update(i);
        }
    }

    /// Proposes exchanging the labels of `a` and `b`; returns whether accepted.
    pub fn propose_swap(&mut self, a: usize, b: usize) -> bool {
        let (ga, gb) = (self.groups[a], self.groups[b]);
        self.stats.swaps_proposed += 1;
        if ga == gb {
            let _ = mh_accept(&mut self.rng, Some(0.0));
            self.stats.swaps_accepted += 1;
            return true;
        }
        let ka = self.partition.block_index_of(a);
        let kb = self.partition.block_index_of(b);
        self.groups[a] = gb;
        self.groups[b] = ga;
        let new_a = self.eval.block_term(self.partition.block(ka), &self.groups);
        let new_b = if kb != ka {
            self.eval.block_term(self.partition.block(kb), &self.groups)
        } else {
            new_a
        };
        self.groups[a] = ga;
        self.groups[b] = gb;
        let epi_changes = ga == Group::Epistatic || gb == Group::Epistatic;
        let new_epistatic = epi_changes.then(|| {
            let mut set: Vec<usize> = self
                .epistatic
                .iter()
                .copied()
                .filter(|&s| s != a && s != b)
                .collect();
            set.push(if ga == Group::Epistatic { b } else { a });
            set.sort_unstable();
            set
        });
        let new_epi_term = match &new_epistatic {
            Some(set) => self.eval.epistatic_term(set),
            None => self.epistatic_term,
        };
        let mut delta = new_epi_term - self.epistatic_term + new_a - self.block_terms[ka];
        if kb != ka {
            delta += new_b - self.block_terms[kb];
        }
        if !mh_accept(&mut self.rng, Some(delta)) {
            return false;
        }
        self.stats.swaps_accepted += 1;
        self.groups[a] = gb;
        self.groups[b] = ga;
        self.block_terms[ka] = new_a;
        self.block_terms[kb] = new_b;
        if let Some(set) = new_epistatic {
            self.epistatic = set;
            self.epistatic_term = new_epi_term;
        }
        self.log_joint += delta;
        true
    }

    /// Each SNP associated at the start of the pass proposes one swap with a
    /// uniformly chosen SNP from a different group.
    pub fn swap_membership_pass(&mut self) {
        let associated: Vec<usize> = (0..self.n_snps())
            .filter(|&i| self.groups[i].is_associated())
            .collect();
        for i in associated {
            let g = self.groups[i];
            if g == Group::Null {
                continue;
            }
            let others = self.n_snps() - self.counts[g as usize];
            if others == 0 {
                continue;
            }
            let r = self.rng.random_range(0..others);
            let j = (0..self.n_snps())
                .filter(|&j| self.groups[j] != g)
                .nth(r)
                .expect("r indexes an SNP outside group g");
            self.propose_swap(i, j);
        }
    }

    /// One full iteration.
    pub fn step(&mut self) {
        self.block_move_step();
        self.gibbs_membership_sweep();
        self.swap_membership_pass();
        self.iteration += 1;
    }

    /// One partition-only iteration: `L` block moves with memberships untouched.
    pub fn partition_step(&mut self) {
        for _ in 0..self.n_snps() {
            self.block_move_step();
        }
        self.iteration += 1;
    }
}

/// Posterior averages from one or more chains.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    /// `P(I_i ∈ {1,2})`.
    pub assoc_posterior: Vec<f64>,
    /// `P(I_i = 1)`.
    pub marginal_posterior: Vec<f64>,
    /// `P(I_i = 2)`.
    pub epistatic_posterior: Vec<f64>,
    /// `P(SNP i starts a block)`; always 1 at SNP 0.
    pub boundary_posterior: Vec<f64>,
    /// Visit frequency of each non-empty group-2 set.
    pub interaction_sets: BTreeMap<Vec<usize>, f64>,
    pub samples_used: usize,
    pub mean_block_count: f64,
    /// Log joint at each retained sample.
    pub log_joint_trace: Vec<f64>,
    pub move_stats: MoveStats,
    /// Set when no samples were retained; all posteriors are then zero.
    pub no_samples: bool,
}

impl PosteriorSummary {
    /// Summary with no samples over `n_snps` SNPs.
    pub fn empty(n_snps: usize) -> Self {
        PosteriorSummary {
            assoc_posterior: vec![0.0; n_snps],
            marginal_posterior: vec![0.0; n_snps],
            epistatic_posterior: vec![0.0; n_snps],
            boundary_posterior: vec![0.0; n_snps],
            interaction_sets: BTreeMap::new(),
            samples_used: 0,
            mean_block_count: 0.0,
            log_joint_trace: Vec::new(),
            move_stats: MoveStats::default(),
            no_samples: true,
        }
    }

    pub fn n_snps(&self) -> usize {
        self.assoc_posterior.len()
    }

    /// Interaction sets ordered by decreasing frequency (ties by set).
    pub fn interaction_sets_by_frequency(&self) -> Vec<(Vec<usize>, f64)> {
        let mut v: Vec<(Vec<usize>, f64)> = self
            .interaction_sets
            .iter()
            .map(|(k, &f)| (k.clone(), f))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    /// SNP indices ordered by decreasing association posterior (ties by index).
    pub fn ranked_snps(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_snps()).collect();
        idx.sort_by(|&a, &b| {
            self.assoc_posterior[b]
                .total_cmp(&self.assoc_posterior[a])
                .then(a.cmp(&b))
        });
        idx
    }

    /// Entrywise arithmetic mean of several summaries over the same SNPs.
    pub fn average(summaries: &[PosteriorSummary]) -> PosteriorSummary {
        assert!(!summaries.is_empty(), "nothing to average");
        let l = summaries[0].n_snps();
        let n = summaries.len() as f64;
        let mut out = PosteriorSummary::empty(l);
        for s in summaries {
            assert_eq!(s.n_snps(), l, "summaries cover different SNP counts");
            for i in 0..l {
                out.assoc_posterior[i] += s.assoc_posterior[i] / n;
                out.marginal_posterior[i] += s.marginal_posterior[i] / n;
                out.epistatic_posterior[i] += s.epistatic_posterior[i] / n;
                out.boundary_posterior[i] += s.boundary_posterior[i] / n;
            }
            for (set, f) in &s.interaction_sets {
                *out.interaction_sets.entry(set.clone()).or_insert(0.0) += f / n;
            }
            out.samples_used += s.samples_used;
            out.mean_block_count += s.mean_block_count / n;
            out.move_stats.merge(&s.move_stats);
        }
        out.no_samples = summaries.iter().all(|s| s.no_samples);
        if summaries.len() == 1 {
            out.log_joint_trace = summaries[0].log_joint_trace.clone();
        }
        out
    }
}

#[derive(Debug)]
struct Accumulator {
    marginal: Vec<u64>,
    epistatic: Vec<u64>,
    boundary: Vec<u64>,
    sets: BTreeMap<Vec<usize>, u64>,
    blocks: u64,
    samples: usize,
    trace: Vec<f64>,
}

impl Accumulator {
    fn new(n_snps: usize) -> Self {
        Accumulator {
            marginal: vec![0; n_snps],
            epistatic: vec![0; n_snps],
            boundary: vec![0; n_snps],
            sets: BTreeMap::new(),
            blocks: 0,
            samples: 0,
            trace: Vec::new(),
        }
    }

    fn record(&mut self, chain: &Chain<'_>) {
        for (i, g) in chain.groups().iter().enumerate() {
            match g {
                Group::Null => {}
                Group::Marginal => self.marginal[i] += 1,
                Group::Epistatic => self.epistatic[i] += 1,
            }
        }
        for &s in chain.partition().starts() {
            self.boundary[s] += 1;
        }
        if !chain.epistatic_set().is_empty() {
            *self.sets.entry(chain.epistatic_set().to_vec()).or_insert(0) += 1;
        }
        self.blocks += chain.partition().n_blocks() as u64;
        self.samples += 1;
        self.trace.push(chain.log_joint());
    }

    fn finish(self, stats: MoveStats) -> PosteriorSummary {
        let l = self.marginal.len();
        if self.samples == 0 {
            log::warn!("no post-burn-in samples retained; posteriors reported as zero");
            let mut s = PosteriorSummary::empty(l);
            s.move_stats = stats;
            return s;
        }
        let n = self.samples as f64;
        let freq = |v: &[u64]| v.iter().map(|&c| c as f64 / n).collect::<Vec<f64>>();
        let marginal = freq(&self.marginal);
        let epistatic = freq(&self.epistatic);
        PosteriorSummary {
            assoc_posterior: marginal
                .iter()
                .zip(&epistatic)
                .map(|(a, b)| a + b)
                .collect(),
            marginal_posterior: marginal,
            epistatic_posterior: epistatic,
            boundary_posterior: freq(&self.boundary),
            interaction_sets: self
                .sets
                .into_iter()
                .map(|(k, c)| (k, c as f64 / n))
                .collect(),
            samples_used: self.samples,
            mean_block_count: self.blocks as f64 / n,
            log_joint_trace: self.trace,
            move_stats: stats,
            no_samples: false,
        }
    }
}

/// Whether the chain samples memberships or only block partitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SamplerMode {
    #[default]
    Full,
    /// Memberships stay in group 0; each iteration is `L` block moves.
    PartitionOnly,
}

fn run(
    dataset: &GenotypeDataset,
    priors: &PriorConfig,
    constraints: &ModelConstraints,
    schedule: &Schedule,
    seed: u64,
    mode: SamplerMode,
) -> PosteriorSummary {
    let mut chain = Chain::new(dataset, *priors, *constraints, seed);
    let mut acc = Accumulator::new(dataset.n_snps());
    let total = schedule.burnin + schedule.iterations;
    let report_every = (total / 10).max(1);
    let warmup = schedule.partition_warmup();
    for it in 0..total {
        match mode {
            SamplerMode::Full if it >= warmup => chain.step(),
            _ => chain.partition_step(),
        }
        if it >= schedule.burnin && (it - schedule.burnin) % schedule.thin == 0 {
            acc.record(&chain);
        }
        if (it + 1) % report_every == 0 {
            let s = chain.stats();
            log::info!(
                "seed {seed}: iteration {}/{total}, log joint {:.3}, block acceptance {:.3}, swap acceptance {:.3}",
                it + 1,
                chain.log_joint(),
                s.block_acceptance_rate(),
                s.swap_acceptance_rate()
            );
        }
    }
    acc.finish(*chain.stats())
}

/// Runs one chain; the result is a deterministic function of the inputs and `seed`.
pub fn run_chain(
    dataset: &GenotypeDataset,
    priors: &PriorConfig,
    constraints: &ModelConstraints,
    schedule: &Schedule,
    seed: u64,
) -> PosteriorSummary {
    run(
        dataset,
        priors,
        constraints,
        schedule,
        seed,
        SamplerMode::Full,
    )
}

/// Cross-chain and within-chain convergence diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    /// Per chain, log-joint autocorrelation at lags `1..=100`.
    pub autocorrelation: Vec<Vec<f64>>,
    /// `(chain a, chain b, Pearson r of assoc_posterior)` for every pair.
    pub assoc_correlation: Vec<(usize, usize, f64)>,
}

impl Diagnostics {
    pub fn mean_assoc_correlation(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .assoc_correlation
            .iter()
            .map(|t| t.2)
            .filter(|r| r.is_finite())
            .collect();
        (!v.is_empty()).then(|| stats::mean(&v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiChainResult {
    pub averaged: PosteriorSummary,
    pub chains: Vec<PosteriorSummary>,
    pub diagnostics: Diagnostics,
}

/// Runs `n_chains` independent chains in parallel (chain `c` uses `base_seed + c`).
pub fn run_chains(
    dataset: &GenotypeDataset,
    priors: &PriorConfig,
    constraints: &ModelConstraints,
    schedule: &Schedule,
    n_chains: usize,
    base_seed: u64,
) -> Result<MultiChainResult> {
    run_chains_with_mode(
        dataset,
        priors,
        constraints,
        schedule,
        n_chains,
        base_seed,
        SamplerMode::Full,
    )
}

pub fn run_chains_with_mode(
    dataset: &GenotypeDataset,
    priors: &PriorConfig,
    constraints: &ModelConstraints,
    schedule: &Schedule,
    n_chains: usize,
    base_seed: u64,
    mode: SamplerMode,
) -> Result<MultiChainResult> {
    if n_chains == 0 {
        return Err(Error::invalid("at least one chain is required"));
    }
    let chains: Vec<PosteriorSummary> = (0..n_chains)
        .into_par_iter()
        .map(|c| {
            run(
                dataset,
                priors,
                constraints,
                schedule,
                base_seed.wrapping_add(c as u64),
                mode,
            )
        })
        .collect();
    let autocorrelation = chains
        .iter()
        .map(|s| stats::autocorrelation(&s.log_joint_trace, MAX_DIAGNOSTIC_LAG))
        .collect();
    let mut assoc_correlation = Vec::new();
    for a in 0..n_chains {
        for b in a + 1..n_chains {
            let r = stats::pearson(&chains[a].assoc_posterior, &chains[b].assoc_posterior);
            assoc_correlation.push((a, b, r));
        }
    }
    let averaged = PosteriorSummary::average(&chains);
    Ok(MultiChainResult {
        averaged,
        chains,
        diagnostics: Diagnostics {
            autocorrelation,
            assoc_correlation,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genotype::GenotypeDataset;

    fn toy(l: usize, n: usize, seed: u64) -> GenotypeDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|_| {
                let base: u8 = rng.random_range(0..3);
                (0..l)
                    .map(|_| {
                        if rng.random::<f64>() < 0.7 {
                            base
                        } else {
                            rng.random_range(0..3)
                        }
                    })
                    .collect()
            })
            .collect();
        let ids = (0..l).map(|j| format!("s{j}")).collect();
        let pos = (0..l as u64).map(|j| 1000 * (j + 1)).collect();
        GenotypeDataset::from_rows(ids, pos, &rows[..n / 2], &rows[n / 2..]).unwrap()
    }

    fn priors() -> PriorConfig {
        PriorConfig::new(0.3, 0.1, 0.1, 1.5).unwrap()
    }

    #[test]
    fn split_of_two_snp_block_is_unique() {
        let b = BlockPartition::single_block(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mv = BlockMove::sample(BlockMoveKind::Split, &b, &mut rng).unwrap();
        assert_eq!(mv, BlockMove::Split { block: 0, at: 1 });
        assert_eq!(mv.apply(&b), BlockPartition::singletons(2));
        assert_eq!(mv.log_forward_density(&b), 0.0);
        assert!(BlockMove::sample(BlockMoveKind::Merge, &b, &mut rng).is_none());
        assert!(BlockMove::sample(BlockMoveKind::Shift, &b, &mut rng).is_none());
    }

    #[test]
    fn merge_of_two_singletons() {
        let b = BlockPartition::singletons(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mv = BlockMove::sample(BlockMoveKind::Merge, &b, &mut rng).unwrap();
        assert_eq!(mv.apply(&b), BlockPartition::single_block(2));
        assert!(BlockMove::sample(BlockMoveKind::Split, &b, &mut rng).is_none());
        // Forward: one pair. Reverse: one splittable block with one cut.
        assert_eq!(mv.log_hastings_ratio(&b), 0.0);
    }

    #[test]
    fn shift_ratio_from_supports() {
        // Blocks [0,2) [2,5) [5,6): shift the middle boundary from 2 to 1.
        let b = BlockPartition::from_starts(6, vec![0, 2, 5]).unwrap();
        let mv = BlockMove::Shift { block: 1, to: 1 };
        let next = mv.apply(&b);
        assert_eq!(next.starts(), &[0, 1, 5]);
        // Before: both boundaries movable (2+3 ≥ 3, 3+1 ≥ 3); offsets 0..5 minus current → 3.
        assert!((mv.log_forward_density(&b) - -(2f64.ln() + 3f64.ln())).abs() < 1e-15);
        // After: widths 1,4,1 → both movable, same 3 offsets; ratio 1.
        let back = mv.reverse(&b);
        assert_eq!(back, BlockMove::Shift { block: 1, to: 2 });
        assert_eq!(back.apply(&next), b);
        assert!(mv.log_hastings_ratio(&b).abs() < 1e-15);

        // Movability changes: [0,1)[1,3)[3,4) with boundary 1 → 2 gives [0,2)[2,3)[3,4).
        let b = BlockPartition::from_starts(4, vec![0, 1, 3]).unwrap();
        let mv = BlockMove::Shift { block: 1, to: 2 };
        // Before: boundary 1 (1+2) and 3 (2+1) movable → 2; after: boundary 2 (2+1) and 3 (1+1=2, not) → 1.
        assert!((mv.log_hastings_ratio(&b) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn split_merge_ratios_are_reciprocal() {
        let b = BlockPartition::from_starts(7, vec![0, 3, 4]).unwrap();
        let split = BlockMove::Split { block: 2, at: 6 };
        let next = split.apply(&b);
        let merge = split.reverse(&b);
        assert!((split.log_hastings_ratio(&b) + merge.log_hastings_ratio(&next)).abs() < 1e-15);
        // S = 2 splittable, w − 1 = 2 cuts, K' − 1 = 3 pairs.
        assert!((split.log_hastings_ratio(&b) - (4f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn sampled_moves_respect_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut b = BlockPartition::singletons(9);
        for _ in 0..5000 {
            let kind = BlockMoveKind::sample(&mut rng);
            if let Some(mv) = BlockMove::sample(kind, &b, &mut rng) {
                let next = mv.apply(&b);
                assert!(mv.log_forward_density(&b).is_finite());
                assert_eq!(mv.reverse(&b).apply(&next), b);
                b = next;
                assert_eq!(b.starts()[0], 0);
            }
        }
    }

    #[test]
    fn mh_acceptance_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let acc = (0..n)
            .filter(|_| mh_accept(&mut rng, Some(-std::f64::consts::LN_2)))
            .count();
        assert!((acc as f64 / n as f64 - 0.5).abs() < 0.01);
        assert!((0..100).all(|_| mh_accept(&mut rng, Some(0.0))));
        assert!((0..100).all(|_| !mh_accept(&mut rng, None)));
    }

    #[test]
    fn forbidden_merge_is_never_accepted() {
        let d = toy(2, 40, 3);
        let c = ModelConstraints::new(1, 1);
        let mut chain = Chain::new(&d, priors(), c, 5);
        for _ in 0..50 {
            let p = chain.evaluate_block_move(BlockMove::Merge { left: 0 });
            assert!(p.delta_log_joint.is_none());
            assert!(!chain.accept(p));
        }
        assert_eq!(chain.partition().n_blocks(), 2);
    }

    #[test]
    fn cache_stays_coherent() {
        let d = toy(7, 200, 11);
        let c = ModelConstraints::for_sample_size(200).unwrap();
        let mut chain = Chain::new(&d, priors(), c, 17);
        for _ in 0..300 {
            chain.step();
            assert!((chain.log_joint() - chain.fresh_log_joint()).abs() < 1e-8);
        }
        assert!(chain.stats().accepted.iter().sum::<u64>() > 0);
    }

    #[test]
    fn max_order_excludes_epistatic_label() {
        let d = toy(3, 40, 4);
        let c = ModelConstraints::new(100, 1);
        let chain_state = MembershipVector::from_codes(&[2, 0, 0]).unwrap();
        let mut chain = Chain::from_state(
            &d,
            priors(),
            c,
            BlockPartition::singletons(3),
            chain_state,
            1,
        )
        .unwrap();
        for _ in 0..200 {
            let g = chain.gibbs_update(1);
            assert_ne!(g, Group::Epistatic);
            chain.groups[1] = Group::Null;
            chain.counts = [2, 0, 1];
            chain.block_terms[1] = chain.eval.block_term(1..2, &chain.groups);
            chain.log_joint = chain.fresh_log_joint();
        }
    }

    #[test]
    fn symmetric_conditional_is_uniform() {
        // No individuals: every label has the same likelihood; with equal
        // group priors the conditional is uniform.
        let d = GenotypeDataset::from_rows(vec!["a".into()], vec![1], &[], &[]).unwrap();
        let p = PriorConfig::new(0.5, 1.0 / 3.0, 1.0 / 3.0, 1.5).unwrap();
        let mut chain = Chain::new(&d, p, ModelConstraints::unbounded(1), 8);
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            chain.gibbs_membership_sweep();
            counts[chain.groups()[0] as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn swaps_between_identical_columns_always_accept() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<u8>> = (0..40)
            .map(|_| {
                let g = rng.random_range(0..3);
                vec![g, g, rng.random_range(0..3)]
            })
            .collect();
        let ids = vec!["a".into(), "b".into(), "c".into()];
        let d = GenotypeDataset::from_rows(ids, vec![1, 2, 3], &rows[..20], &rows[20..]).unwrap();
        let m = MembershipVector::from_codes(&[1, 0, 0]).unwrap();
        let mut chain = Chain::from_state(
            &d,
            priors(),
            ModelConstraints::new(100, 1),
            BlockPartition::singletons(3),
            m,
            3,
        )
        .unwrap();
        for _ in 0..100 {
            let before = chain.log_joint();
            let (a, b) = if chain.groups()[0] == Group::Marginal {
                (0, 1)
            } else {
                (1, 0)
            };
            assert!(chain.propose_swap(a, b));
            assert_eq!(chain.log_joint(), before);
        }
    }

    #[test]
    fn swap_pass_without_associated_snps_is_noop() {
        let d = toy(4, 40, 6);
        let mut chain = Chain::new(&d, priors(), ModelConstraints::new(100, 1), 2);
        chain.swap_membership_pass();
        assert_eq!(chain.stats().swaps_proposed, 0);
    }

    #[test]
    fn empty_run_reports_zero() {
        let d = toy(4, 40, 6);
        let s = run_chain(
            &d,
            &priors(),
            &ModelConstraints::new(100, 1),
            &Schedule::new(5, 0, 1).unwrap(),
            1,
        );
        assert_eq!(s.samples_used, 0);
        assert!(s.no_samples);
        assert!(s.assoc_posterior.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn same_seed_same_summary() {
        let d = toy(6, 50, 21);
        let c = ModelConstraints::for_sample_size(50).unwrap();
        let sched = Schedule::new(20, 100, 2).unwrap();
        let a = run_chain(&d, &priors(), &c, &sched, 99);
        let b = run_chain(&d, &priors(), &c, &sched, 99);
        assert_eq!(a, b);
        assert_eq!(a.boundary_posterior[0], 1.0);
        for i in 0..6 {
            let sum = a.marginal_posterior[i] + a.epistatic_posterior[i];
            assert_eq!(a.assoc_posterior[i], sum);
        }
    }

    #[test]
    fn single_chain_average_is_identity() {
        let d = toy(5, 40, 8);
        let c = ModelConstraints::for_sample_size(40).unwrap();
        let sched = Schedule::new(10, 50, 1).unwrap();
        let multi = run_chains(&d, &priors(), &c, &sched, 1, 7).unwrap();
        let single = run_chain(&d, &priors(), &c, &sched, 7);
        assert_eq!(multi.averaged, single);
        assert!(multi.diagnostics.assoc_correlation.is_empty());
        assert_eq!(multi.diagnostics.autocorrelation[0].len(), 49);
    }
}
