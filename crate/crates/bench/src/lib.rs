//! Shared fixtures for the benchmarks.

use beamscan::sim::{self, PenetranceModel, SimulationSpec};
use beamscan::GenotypeDataset;

/// Model-1 dataset with `n_snps` SNPs and `n` cases and `n` controls.
pub fn dataset(n_snps: usize, n: usize, seed: u64) -> GenotypeDataset {
    let spec =
        SimulationSpec::new(n_snps, n, n, seed).with_model(PenetranceModel::Model1, 0.2, 0.5);
    sim::simulate(&spec).expect("benchmark simulation").dataset
}
