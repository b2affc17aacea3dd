use beamscan::bstat::{calibrated_bstat, screen_candidates, Calibration, ScreenConfig};
use beamscan::mcmc::{run_chain, run_chains, Chain, Schedule};
use beamscan::sim::{self, PenetranceModel, SimulatedDataset, SimulationSpec};
use beamscan::stats::{chi_square_2xk, ks_uniform};
use beamscan::{
    BlockPartition, DirichletConfig, GenotypeDataset, Group, MembershipVector, ModelConstraints,
    PriorConfig, PriorSettings,
};

fn setup(d: &GenotypeDataset) -> (PriorConfig, ModelConstraints) {
    PriorSettings::default()
        .resolve(d.n_snps(), d.region_length(), d.n_cases(), d.n_controls())
        .unwrap()
}

fn simulate(model: Option<PenetranceModel>, l: usize, n: usize, seed: u64) -> SimulatedDataset {
    let mut spec = SimulationSpec::new(l, n, n, seed);
    if let Some(m) = model {
        spec = spec.with_model(m, 0.2, 0.5);
    }
    sim::simulate(&spec).unwrap()
}

#[test]
fn null_data_has_no_association() {
    let dir = DirichletConfig::default();
    let calibration = Calibration::Permutation {
        n_perm: 1000,
        seed: 0,
    };
    for seed in 1..=4 {
        let s = simulate(None, 30, 500, seed);
        let d = &s.dataset;
        let (priors, c) = setup(d);
        let starts = &s.truth.block_starts;
        let block_of = |j: usize| starts.iter().rposition(|&b| b <= j).unwrap();
        let r = run_chains(d, &priors, &c, &Schedule::default_for(30), 2, 17).unwrap();
        for chain in &r.chains {
            let max = chain.marginal_posterior.iter().copied().fold(0.0, f64::max);
            assert!(max < 0.1, "seed {seed}: max P(marginal) {max}");
            // Complementary SNPs split across sub-blocks can be joined through
            // the interaction group; such sets stay inside one founder block
            // and carry no case/control signal.
            for (set, &freq) in &chain.interaction_sets {
                if freq < 0.1 {
                    continue;
                }
                assert!(
                    set.iter().all(|&j| block_of(j) == block_of(set[0])),
                    "seed {seed}: set {set:?} spans founder blocks"
                );
                let b = calibrated_bstat(d, set, &dir, c.max_order, &calibration).unwrap();
                assert!(
                    b.p_value > 0.01,
                    "seed {seed}: set {set:?} p-value {}",
                    b.p_value
                );
            }
        }
    }
}

#[test]
fn model2_signal_peaks_near_a_disease_locus() {
    let s = simulate(Some(PenetranceModel::Model2), 50, 500, 4);
    let (priors, c) = setup(&s.dataset);
    let post = run_chain(&s.dataset, &priors, &c, &Schedule::default_for(50), 5);
    let best = post.ranked_snps()[0];
    let near = s.truth.loci.iter().any(|&l| best.abs_diff(l) <= 5);
    assert!(near, "top SNP {best}, loci {:?}", s.truth.loci);
}

#[test]
fn swaps_move_labels_from_proxy_to_causal_snp() {
    let s = simulate(Some(PenetranceModel::Model1), 20, 500, 6);
    let d = &s.dataset;
    let (priors, c) = setup(d);
    let causal = s.truth.loci[0];
    let partition = BlockPartition::from_starts(20, s.truth.block_starts.clone()).unwrap();
    let block = partition.block(partition.block_index_of(causal));
    let proxy = block.clone().find(|&j| j != causal).unwrap();
    let mut groups = vec![Group::Null; 20];
    groups[proxy] = Group::Marginal;
    let mut accepted = 0;
    let trials = 2000;
    for t in 0..trials {
        let mut chain = Chain::from_state(
            d,
            priors,
            c,
            partition.clone(),
            MembershipVector::new(groups.clone()),
            t,
        )
        .unwrap();
        if chain.propose_swap(proxy, causal) {
            accepted += 1;
        }
    }
    let rate = accepted as f64 / trials as f64;
    assert!(rate > 0.5, "swap acceptance {rate}");
}

#[test]
fn interacting_pair_beats_its_marginals() {
    let s = simulate(Some(PenetranceModel::Model3), 30, 500, 7);
    let d = &s.dataset;
    let (priors, c) = setup(d);
    let post = run_chain(d, &priors, &c, &Schedule::default_for(30), 8);
    let dir = DirichletConfig::default();
    let calibration = Calibration::Analytic {
        constant: None,
        seed: 0,
    };
    let config = ScreenConfig {
        posterior_threshold: 0.05,
        alpha: 0.05,
        n_tests: None,
        calibration,
    };
    let pair = s.truth.loci.clone();
    // Single SNPs near a locus stand in for it when the pair itself is not sampled.
    let tested = screen_candidates(d, &post, &dir, c.max_order, &config).unwrap();
    assert!(
        tested.iter().any(|r| r.snp_set == pair),
        "pair {pair:?} not among {:?}",
        tested.iter().map(|r| &r.snp_set).collect::<Vec<_>>()
    );
    let joint = calibrated_bstat(d, &pair, &dir, c.max_order, &calibration).unwrap();
    for &l in &pair {
        let single = calibrated_bstat(d, &[l], &dir, c.max_order, &calibration).unwrap();
        assert!(
            joint.p_value < single.p_value,
            "{} vs {}",
            joint.p_value,
            single.p_value
        );
    }
}

#[test]
fn permutation_p_values_are_not_anticonservative_on_null_data() {
    let dir = DirichletConfig::default();
    let mut ps = Vec::new();
    for r in 0..100 {
        let s = simulate(None, 10, 200, 1000 + r);
        let calibration = Calibration::Permutation {
            n_perm: 500,
            seed: r,
        };
        ps.push(
            calibrated_bstat(&s.dataset, &[5], &dir, 1, &calibration)
                .unwrap()
                .p_value,
        );
    }
    let small = ps.iter().filter(|&&p| p < 0.05).count();
    assert!(small <= 12, "{small} of 100 null p-values below 0.05");
    assert!(ks_uniform(&ps) < 0.163, "KS distance {}", ks_uniform(&ps));
}

#[test]
fn model1_locus_is_detectable_by_genotype_test() {
    let mut detected = 0;
    let reps = 50;
    for r in 0..reps {
        let spec = SimulationSpec::new(10, 1000, 1000, 2000 + r).with_model(
            PenetranceModel::Model1,
            0.2,
            0.5,
        );
        let s = sim::simulate(&spec).unwrap();
        let (cases, controls) = s.dataset.column_counts(s.truth.loci[0]).unwrap();
        let (_, p) = chi_square_2xk([&cases, &controls]);
        if p < 0.01 {
            detected += 1;
        }
    }
    assert!(detected * 10 >= reps * 8, "{detected} of {reps}");
}
