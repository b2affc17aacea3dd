//! Block-based Bayesian epistasis association mapping.
//!
//! The model partitions SNPs into LD blocks and labels each SNP as unassociated,
//! marginally associated, or part of a genome-wide epistatic set. The posterior
//! over partitions and labels is sampled by MCMC ([`mcmc`]), verified against
//! exhaustive enumeration on small problems ([`oracle`]), and follow-up
//! significance comes from a Bayes-factor statistic ([`bstat`]).

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bstat;
pub mod error;
pub mod genotype;
pub mod likelihood;
pub mod mcmc;
pub mod model;
pub mod oracle;
pub mod sim;
pub mod stats;

pub use bstat::{calibrated_bstat, screen_candidates, BStatResult, Calibration, ScreenConfig};
pub use error::{Error, Result};
pub use genotype::{load_dataset, read_dataset, GenotypeDataset, MissingPolicy};
pub use likelihood::{
    count_diplotypes, log_conditional, log_marginal, Cohort, DiplotypeCounts, DiplotypeKey,
    DirichletConfig,
};
pub use mcmc::{
    run_chain, run_chains, run_chains_with_mode, Chain, Diagnostics, MultiChainResult,
    PosteriorSummary, SamplerMode, Schedule,
};
pub use model::{
    default_priors, log_block_term, log_joint, BlockPartition, Forbidden, Group, MembershipVector,
    ModelConstraints, ModelEvaluator, PriorConfig, PriorSettings,
};
pub use oracle::{enumerate_posterior, OracleResult};
pub use sim::{simulate, PenetranceModel, SimulatedDataset, SimulationSpec, Truth};
