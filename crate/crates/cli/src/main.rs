//! `beamscan`: simulate, map, enumerate and test case-control association data.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod manifest;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use beamscan::bstat::{self, Calibration, ScreenConfig};
use beamscan::mcmc::{self, SamplerMode, Schedule};
use beamscan::oracle;
use beamscan::sim::{self, LociPolicy, PenetranceModel, SimulationSpec};
use beamscan::{
    load_dataset, GenotypeDataset, MissingPolicy, ModelConstraints, PriorConfig, PriorSettings,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::RunManifest;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Constraint(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Constraint(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Constraint(m) => f.write_str(m),
        }
    }
}

impl From<beamscan::Error> for CliError {
    fn from(e: beamscan::Error) -> Self {
        use beamscan::Error as E;
        let msg = e.to_string();
        match e {
            E::Parse { .. } | E::Io(_) => CliError::Data(msg),
            E::InvalidArgument(_) => CliError::Usage(msg),
            E::Constraint(_) | E::Guard(_) | E::Simulation(_) => CliError::Constraint(msg),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "beamscan",
    version,
    about = "Bayesian epistasis association mapping"
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "BEAMSCAN_THREADS")]
    threads: Option<usize>,

    /// Only report warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a case-control dataset with known blocks and disease loci.
    Simulate(SimulateArgs),
    /// Sample block partitions and association labels by MCMC.
    Map(MapArgs),
    /// Sample block partitions only, with every SNP unassociated.
    Partition(MapArgs),
    /// Exact posterior by enumeration (at most 10 SNPs).
    Oracle(OracleArgs),
    /// B-statistic tests of SNP sets.
    Bstat(BstatArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Missing {
    Reject,
    Impute,
}

impl Missing {
    fn policy(self) -> MissingPolicy {
        match self {
            Missing::Reject => MissingPolicy::Reject,
            Missing::Impute => MissingPolicy::ModeImpute,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Missing::Reject => "reject",
            Missing::Impute => "impute",
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Genotype file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Handling of missing genotypes.
    #[arg(long, value_enum, default_value_t = Missing::Reject)]
    missing: Missing,
    /// Drop SNPs whose Hardy-Weinberg p-value in controls is below this.
    #[arg(long)]
    hwe_filter: Option<f64>,
}

impl DataArgs {
    fn load(&self) -> Result<GenotypeDataset, CliError> {
        let d = load_dataset(&self.input, self.missing.policy()).map_err(|e| match e {
            beamscan::Error::InvalidArgument(m) => CliError::Data(m),
            other => other.into(),
        })?;
        match self.hwe_filter {
            None => Ok(d),
            Some(t) => {
                let (kept, dropped) = d.hwe_filter(t)?;
                if !dropped.is_empty() {
                    let ids: Vec<&str> = dropped.iter().map(|&j| d.snp_ids()[j].as_str()).collect();
                    log::warn!(
                        "Hardy-Weinberg filter dropped {} SNPs: {}",
                        ids.len(),
                        ids.join(",")
                    );
                }
                Ok(kept)
            }
        }
    }

    fn record(&self, m: &mut RunManifest) {
        m.arg("in", Some(self.input.display()));
        m.arg("missing", Some(self.missing.as_str()));
        m.arg("hwe-filter", self.hwe_filter);
    }
}

#[derive(Args, Debug)]
struct PriorArgs {
    /// Dirichlet prior mass.
    #[arg(long, default_value_t = beamscan::likelihood::DEFAULT_RHO)]
    rho: f64,
    /// Expected number of blocks genome-wide.
    #[arg(long, default_value_t = beamscan::model::DEFAULT_PRIOR_BLOCKS)]
    prior_blocks: f64,
    /// Prior probability of group 1 (default min(0.1, 5/L)).
    #[arg(long)]
    p1: Option<f64>,
    /// Prior probability of group 2 (default min(0.1, 5/L)).
    #[arg(long)]
    p2: Option<f64>,
    /// Cap on the number of group-2 SNPs (default from sample size).
    #[arg(long)]
    max_order: Option<usize>,
}

impl PriorArgs {
    fn priors(&self, d: &GenotypeDataset) -> Result<PriorConfig, CliError> {
        let settings = PriorSettings {
            rho: self.rho,
            prior_blocks: self.prior_blocks,
            p1: self.p1,
            p2: self.p2,
        };
        Ok(settings.priors(d.n_snps(), d.region_length())?)
    }

    /// Sample-size caps, or unlimited ones when `lenient` and the data are too small.
    fn constraints(
        &self,
        d: &GenotypeDataset,
        lenient: bool,
    ) -> Result<ModelConstraints, CliError> {
        let mut c = match ModelConstraints::for_sample_size(d.n_individuals()) {
            Ok(c) => c,
            Err(e) if lenient => {
                log::warn!("{e}; diplotype and order caps disabled");
                ModelConstraints::unbounded(d.n_snps())
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(k) = self.max_order {
            c.max_order = k;
        }
        Ok(c)
    }

    fn record(&self, m: &mut RunManifest) {
        m.arg("rho", Some(self.rho));
        m.arg("prior-blocks", Some(self.prior_blocks));
        m.arg("p1", self.p1);
        m.arg("p2", self.p2);
        m.arg("max-order", self.max_order);
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Penetrance model (1, 2 or 3).
    #[arg(long, default_value_t = 1)]
    model: u8,
    /// Disease allele frequency in (0, 0.5].
    #[arg(long, default_value_t = 0.2)]
    maf: f64,
    /// Marginal effect per disease locus (log odds ratio minus one); 0 gives null data.
    #[arg(long, default_value_t = 0.5)]
    effect: f64,
    #[arg(long)]
    cases: usize,
    #[arg(long)]
    controls: usize,
    /// Number of SNPs.
    #[arg(long)]
    snps: usize,
    #[arg(long, default_value_t = sim::DEFAULT_BLOCK_WIDTH)]
    block_width: usize,
    #[arg(long, default_value_t = sim::DEFAULT_FOUNDERS)]
    founders: usize,
    /// Comma-separated 0-based disease SNP indices (default: block interiors).
    #[arg(long, value_delimiter = ',')]
    loci: Option<Vec<usize>>,
    /// Use one disease locus with risk (1+θ)^i (model 1 only).
    #[arg(long)]
    single_locus: bool,
    /// Most pool individuals to generate before giving up.
    #[arg(long)]
    pool_size: Option<usize>,
    /// Remove the disease SNPs from the output.
    #[arg(long)]
    drop_loci: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix.
    #[arg(long)]
    out: String,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Burn-in iterations (default 10·L).
    #[arg(long)]
    burnin: Option<usize>,
    /// Retained iterations (default 50·L).
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    /// Base seed; chain c uses seed + c.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix.
    #[arg(long)]
    out: String,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    prior: PriorArgs,
    /// Output prefix.
    #[arg(long)]
    out: String,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum CalibrationArg {
    Permutation,
    Analytic,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["sets", "from_posterior"])))]
struct BstatArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = beamscan::likelihood::DEFAULT_RHO)]
    rho: f64,
    /// Cap on set size (default from sample size).
    #[arg(long)]
    max_order: Option<usize>,
    /// File with one SNP set per line (ids separated by commas or spaces).
    #[arg(long)]
    sets: Option<PathBuf>,
    /// Screen candidates from a `map` output prefix.
    #[arg(long)]
    from_posterior: Option<String>,
    /// Posterior threshold for screening.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bonferroni divisor (default C(L, M) per set size).
    #[arg(long)]
    n_tests: Option<f64>,
    #[arg(long, value_enum, default_value_t = CalibrationArg::Permutation)]
    calibration: CalibrationArg,
    #[arg(long, default_value_t = 1000)]
    n_perm: usize,
    /// Analytic shift constant c (default: fitted on a simulated null).
    #[arg(long)]
    shift_constant: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix.
    #[arg(long)]
    out: String,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Write to this prefix instead of the recorded one.
    #[arg(long)]
    out: Option<String>,
}

fn with_suffix(prefix: &str, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}.{suffix}"))
}

fn finish(mut m: RunManifest, prefix: &str, started: Instant) -> Result<(), CliError> {
    m.push("wall_clock_seconds", started.elapsed().as_secs_f64());
    output::write_file(&with_suffix(prefix, "manifest.tsv"), &m.to_tsv())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let started = Instant::now();
    if !(a.maf > 0.0 && a.maf <= 0.5) {
        return Err(CliError::Usage(format!(
            "--maf must be in (0, 0.5], got {}",
            a.maf
        )));
    }
    if !(a.effect >= 0.0) {
        return Err(CliError::Usage(format!(
            "--effect must be non-negative, got {}",
            a.effect
        )));
    }
    let model = PenetranceModel::from_id(a.model)?;
    if a.single_locus && model != PenetranceModel::Model1 {
        return Err(CliError::Usage("--single-locus requires --model 1".into()));
    }
    let spec = SimulationSpec {
        block_width: a.block_width,
        n_founders: a.founders,
        loci: a.loci.clone(),
        n_loci: if a.single_locus { 1 } else { 2 },
        pool_size: a.pool_size,
        ..SimulationSpec::new(a.snps, a.cases, a.controls, a.seed)
            .with_model(model, a.maf, a.effect)
    };
    let sim = sim::simulate(&spec)?;
    let policy = if a.drop_loci {
        LociPolicy::Drop
    } else {
        LociPolicy::Keep
    };
    let sim = sim::drop_loci(&sim, policy)?;
    log::info!("θ = {}", sim.truth.theta);

    sim.dataset.save(with_suffix(&a.out, "tsv"))?;
    output::write_file(
        &with_suffix(&a.out, "truth.tsv"),
        &output::truth_table(&sim.dataset, &sim.truth),
    )?;

    let mut m = RunManifest::new("simulate");
    m.arg("model", Some(a.model));
    m.arg("maf", Some(a.maf));
    m.arg("effect", Some(a.effect));
    m.arg("cases", Some(a.cases));
    m.arg("controls", Some(a.controls));
    m.arg("snps", Some(a.snps));
    m.arg("block-width", Some(a.block_width));
    m.arg("founders", Some(a.founders));
    m.arg(
        "loci",
        a.loci.as_ref().map(|l| {
            l.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        }),
    );
    m.arg("single-locus", Some(a.single_locus));
    m.arg("pool-size", a.pool_size);
    m.arg("drop-loci", Some(a.drop_loci));
    m.arg("seed", Some(a.seed));
    m.arg("out", Some(&a.out));
    m.push("theta", sim.truth.theta);
    m.push("output.dataset", with_suffix(&a.out, "tsv").display());
    m.push("output.truth", with_suffix(&a.out, "truth.tsv").display());
    finish(m, &a.out, started)
}

fn cmd_map(a: &MapArgs, mode: SamplerMode) -> Result<(), CliError> {
    let started = Instant::now();
    let d = a.data.load()?;
    let priors = a.prior.priors(&d)?;
    let constraints = a.prior.constraints(&d, false)?;
    let l = d.n_snps();
    let schedule = Schedule::new(
        a.burnin.unwrap_or(10 * l),
        a.iters.unwrap_or(50 * l),
        a.thin,
    )?;
    if a.chains == 0 {
        return Err(CliError::Usage("--chains must be at least 1".into()));
    }
    let result =
        mcmc::run_chains_with_mode(&d, &priors, &constraints, &schedule, a.chains, a.seed, mode)?;
    if result.averaged.no_samples {
        log::warn!("no samples retained; posteriors are reported as 0");
    }
    if let Some(r) = result.diagnostics.mean_assoc_correlation() {
        log::info!("mean cross-chain P(assoc) correlation {r:.4}");
    }

    output::write_file(
        &with_suffix(&a.out, "posterior.tsv"),
        &output::posterior_table(&d, &result.averaged),
    )?;
    output::write_file(
        &with_suffix(&a.out, "sets.tsv"),
        &output::sets_table(&d, &result.averaged),
    )?;
    output::write_file(
        &with_suffix(&a.out, "diagnostics.tsv"),
        &output::diagnostics_table(&result),
    )?;

    let name = match mode {
        SamplerMode::Full => "map",
        SamplerMode::PartitionOnly => "partition",
    };
    let mut m = RunManifest::new(name);
    a.data.record(&mut m);
    a.prior.record(&mut m);
    m.arg("chains", Some(a.chains));
    m.arg("burnin", Some(schedule.burnin));
    m.arg("iters", Some(schedule.iterations));
    m.arg("thin", Some(schedule.thin));
    m.arg("seed", Some(a.seed));
    m.arg("out", Some(&a.out));
    m.push("resolved.p_boundary", priors.p_boundary());
    m.push("resolved.p1", priors.p_group(beamscan::Group::Marginal));
    m.push("resolved.p2", priors.p_group(beamscan::Group::Epistatic));
    m.push(
        "resolved.max_distinct_diplotypes",
        constraints.max_distinct_diplotypes,
    );
    m.push("resolved.max_order", constraints.max_order);
    m.push("resolved.snps", l);
    for c in 0..a.chains {
        m.push(&format!("chain.{c}.seed"), a.seed.wrapping_add(c as u64));
    }
    m.push("samples_used", result.averaged.samples_used);
    finish(m, &a.out, started)
}

fn cmd_oracle(a: &OracleArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let d = a.data.load()?;
    if d.n_snps() > oracle::MAX_ORACLE_SNPS {
        return Err(CliError::Constraint(format!(
            "oracle refuses {} SNPs: exact enumeration is limited to {} SNPs",
            d.n_snps(),
            oracle::MAX_ORACLE_SNPS
        )));
    }
    let priors = a.prior.priors(&d)?;
    let constraints = a.prior.constraints(&d, true)?;
    let r = oracle::enumerate_posterior(&d, &priors, &constraints)?;
    output::write_file(
        &with_suffix(&a.out, "oracle.tsv"),
        &output::oracle_table(&d, &r),
    )?;

    let mut m = RunManifest::new("oracle");
    a.data.record(&mut m);
    a.prior.record(&mut m);
    m.arg("out", Some(&a.out));
    m.push("log_normalizer", r.log_normalizer);
    m.push("states_enumerated", r.states_enumerated);
    m.push("mean_block_count", r.mean_block_count);
    finish(m, &a.out, started)
}

fn cmd_bstat(a: &BstatArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let d = a.data.load()?;
    let dirichlet = beamscan::DirichletConfig::new(a.rho)?;
    let max_order = match a.max_order {
        Some(k) => k,
        None => ModelConstraints::for_sample_size(d.n_individuals())
            .map(|c| c.max_order.max(1))
            .unwrap_or(1),
    };
    let calibration = match a.calibration {
        CalibrationArg::Permutation => Calibration::Permutation {
            n_perm: a.n_perm,
            seed: a.seed,
        },
        CalibrationArg::Analytic => Calibration::Analytic {
            constant: a.shift_constant,
            seed: a.seed,
        },
    };
    let results = if let Some(path) = &a.sets {
        let sets = output::read_sets(path, &d)?;
        sets.iter()
            .map(|s| {
                let mut r = bstat::calibrated_bstat(&d, s, &dirichlet, max_order, &calibration)?;
                let n = a
                    .n_tests
                    .unwrap_or_else(|| bstat::default_n_tests(d.n_snps(), s.len()));
                r.significant = r.p_value < a.alpha / n;
                Ok(r)
            })
            .collect::<Result<Vec<_>, CliError>>()?
    } else {
        let prefix = a.from_posterior.as_deref().expect("clap enforces a source");
        let summary = output::read_posterior(prefix, &d)?;
        let config = ScreenConfig {
            posterior_threshold: a.threshold,
            alpha: a.alpha,
            n_tests: a.n_tests,
            calibration,
        };
        bstat::screen_candidates(&d, &summary, &dirichlet, max_order, &config)?
    };
    output::write_file(
        &with_suffix(&a.out, "bstat.tsv"),
        &output::bstat_table(&d, &results),
    )?;

    let mut m = RunManifest::new("bstat");
    a.data.record(&mut m);
    m.arg("rho", Some(a.rho));
    m.arg("max-order", a.max_order);
    m.arg("sets", a.sets.as_ref().map(|p| p.display()));
    m.arg("from-posterior", a.from_posterior.as_ref());
    m.arg("threshold", Some(a.threshold));
    m.arg("alpha", Some(a.alpha));
    m.arg("n-tests", a.n_tests);
    m.arg(
        "calibration",
        Some(match a.calibration {
            CalibrationArg::Permutation => "permutation",
            CalibrationArg::Analytic => "analytic",
        }),
    );
    m.arg("n-perm", Some(a.n_perm));
    m.arg("shift-constant", a.shift_constant);
    m.arg("seed", Some(a.seed));
    m.arg("out", Some(&a.out));
    m.push("resolved.max_order", max_order);
    m.push("tests", results.len());
    finish(m, &a.out, started)
}

fn cmd_replay(a: &ReplayArgs) -> Result<(), CliError> {
    let m = RunManifest::read(&a.manifest)?;
    let argv = m.replay_args(a.out.as_deref());
    log::info!("replaying: {}", argv[1..].join(" "));
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| CliError::Data(format!("{}: cannot replay: {e}", a.manifest.display())))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Data(
            "a manifest cannot replay another replay".into(),
        ));
    }
    run(&cli.command)
}

fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Map(a) => cmd_map(a, SamplerMode::Full),
        Command::Partition(a) => cmd_map(a, SamplerMode::PartitionOnly),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Bstat(a) => cmd_bstat(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn ensure_parent(prefix: &str) -> Result<(), CliError> {
    let parent = Path::new(prefix).parent();
    match parent {
        Some(p) if !p.as_os_str().is_empty() && !p.exists() => Err(CliError::Data(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn out_prefix(command: &Command) -> Option<&str> {
    match command {
        Command::Simulate(a) => Some(&a.out),
        Command::Map(a) | Command::Partition(a) => Some(&a.out),
        Command::Oracle(a) => Some(&a.out),
        Command::Bstat(a) => Some(&a.out),
        Command::Replay(a) => a.out.as_deref(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match out_prefix(&cli.command) {
        Some(p) => ensure_parent(p).and_then(|()| run(&cli.command)),
        None => run(&cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
