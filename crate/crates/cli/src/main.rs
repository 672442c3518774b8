//! `spinlab` — command-line driver for the finite-volume spin-system
//! laboratory.
//!
//! Every run reads one TOML model config, executes one subcommand, and
//! writes its artifacts atomically under `--out`. Exit codes: 0 success,
//! 1 validation error (bad config, bad flags, model outside a
//! precondition), 2 numerical-check failure (a check that ran and failed).
//! Errors also emit a machine-readable JSON record on standard error.

mod commands;
mod emit;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use spinlab::analysis::AnalysisError;
use spinlab::cluster::ClusterError;
use spinlab::config::{ConfigError, ModelConfig};
use spinlab::exact::ExactError;
use spinlab::leeyang::LeeYangError;
use spinlab::model::ModelError;
use spinlab::transfer::TransferError;
use spinlab::Spec64;

use emit::{Format, RunMeta};

#[derive(Parser)]
#[command(
    name = "spinlab",
    version,
    about = "Finite-volume laboratory for ferromagnetic lattice spin systems in a complex magnetic field"
)]
struct Cli {
    /// Model configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all hardware threads). Results are
    /// byte-identical across thread counts.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed recorded in artifacts and used by randomized suites.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Format of tabular artifacts (reports are always JSON).
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Exact partition function of the configured model.
    Enumerate,
    /// Connected n-point (Ursell) functions of site families.
    Ursell {
        /// Family "s1;s2;…" with comma-separated coordinates per site;
        /// repeatable. Default on chains: the pairs (0, x) for all x.
        #[arg(long = "family")]
        families: Vec<String>,
        /// Component index per slot, comma-separated (default: all 0).
        #[arg(long)]
        components: Option<String>,
    },
    /// Transfer-operator mass gap over a field grid.
    TransferScan {
        /// Re h grid as start:stop:count.
        #[arg(long, default_value = "0.05:3:60")]
        re_grid: String,
        /// Im h grid as start:stop:count.
        #[arg(long, default_value = "0:0:1")]
        im_grid: String,
    },
    /// Zeros of the fugacity polynomial, with circle and residual checks.
    Zeros {
        /// Allowed distance of |z| from the unit circle.
        #[arg(long, default_value_t = 1e-8)]
        circle_tol: f64,
        /// Allowed relative polynomial residual at each root.
        #[arg(long, default_value_t = 1e-10)]
        residual_tol: f64,
    },
    /// Wedge-condition certificate for the site measure.
    CheckC1 {
        /// Apex search floor (default: Re h from the config, else 1).
        #[arg(long)]
        u0: Option<f64>,
        /// Distortion cap κ.
        #[arg(long, default_value_t = 10.0)]
        kappa_cap: f64,
    },
    /// Truncated polymer expansion of the two-point function against exact
    /// enumeration, inside the certified large-field region.
    Cluster {
        /// Convergence parameter ε of the activity bounds.
        #[arg(long, default_value_t = 1.0 / 6.0)]
        epsilon: f64,
        /// Truncation order (maximal total polymer size).
        #[arg(long, default_value_t = 4)]
        order: usize,
        /// Largest separation along the first axis.
        #[arg(long, default_value_t = 4)]
        max_x: i64,
        /// Spin component at the origin.
        #[arg(long, default_value_t = 0)]
        comp_i: usize,
        /// Spin component at the separated site.
        #[arg(long, default_value_t = 0)]
        comp_j: usize,
    },
    /// Maximum-principle check of the weighted two-point function on the
    /// wedge domain selected for the configured field.
    MaxPrinciple {
        /// Target site (comma-separated coordinates; default on chains:
        /// the box midpoint).
        #[arg(long)]
        x: Option<String>,
        /// Mass-gap lower bound entering ε (default: spectral gap of the
        /// configured model).
        #[arg(long)]
        m0: Option<f64>,
        /// Apex search floor (default: max(Re h, 1)).
        #[arg(long)]
        u0: Option<f64>,
        /// Distortion cap κ for the wedge search.
        #[arg(long, default_value_t = 10.0)]
        kappa_cap: f64,
        /// Boundary sample count.
        #[arg(long, default_value_t = 512)]
        boundary_points: usize,
        /// Interior sample count.
        #[arg(long, default_value_t = 128)]
        interior_points: usize,
    },
    /// Tree-decay fit of n-point Ursell functions over point families.
    TreeDecay {
        /// Family "s1;s2;…"; repeatable. Default on chains: centered
        /// collinear families of growing spread.
        #[arg(long = "family")]
        families: Vec<String>,
        /// Arity of the default chain families.
        #[arg(long, default_value_t = 3)]
        points: usize,
        /// Component index per slot, comma-separated (default: all 0).
        #[arg(long)]
        components: Option<String>,
    },
    /// Mass gap over a field grid, tabulated as m(h)/Re h with the grid
    /// infimum.
    RatioScan {
        /// Re h grid as start:stop:count.
        #[arg(long, default_value = "0.05:3:60")]
        re_grid: String,
        /// Im h grid as start:stop:count.
        #[arg(long, default_value = "0:0:1")]
        im_grid: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Enumerate => "enumerate",
            Command::Ursell { .. } => "ursell",
            Command::TransferScan { .. } => "transfer-scan",
            Command::Zeros { .. } => "zeros",
            Command::CheckC1 { .. } => "check-c1",
            Command::Cluster { .. } => "cluster",
            Command::MaxPrinciple { .. } => "max-principle",
            Command::TreeDecay { .. } => "tree-decay",
            Command::RatioScan { .. } => "ratio-scan",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("command {command} produced no result rows")]
    EmptyResults { command: &'static str },
    #[error("I/O failure at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    LeeYang(#[from] LeeYangError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("numerical check {check} failed: {detail}")]
    CheckFailure { check: String, detail: String },
}

fn model_kind(err: &ModelError) -> &'static str {
    match err {
        ModelError::SymmetryViolation(_) => "SymmetryViolation",
        ModelError::FerromagnetismViolation { .. } => "FerromagnetismViolation",
        ModelError::RangeViolation { .. } => "RangeViolation",
        ModelError::InvalidMeasure(_) => "InvalidMeasure",
        ModelError::InvalidCouplings(_) => "InvalidCouplings",
        ModelError::ComponentMismatch(_) => "ComponentMismatch",
        ModelError::ConfigMismatch(_) => "ConfigMismatch",
        ModelError::ZeroNormalizer => "ZeroNormalizer",
        ModelError::UnsupportedDimension(_) => "UnsupportedDimension",
    }
}

fn exact_kind(err: &ExactError) -> &'static str {
    match err {
        ExactError::BudgetExceeded { .. } => "BudgetExceeded",
        ExactError::ZeroPartition { .. } => "ZeroPartition",
        ExactError::InvalidArity(_) => "InvalidArity",
        ExactError::SiteOutOfRange { .. } => "SiteOutOfRange",
        ExactError::ComponentOutOfRange { .. } => "ComponentOutOfRange",
        ExactError::MissingMoment(_) => "MissingMoment",
        ExactError::Model(e) => model_kind(e),
    }
}

fn transfer_kind(err: &TransferError) -> &'static str {
    match err {
        TransferError::NotAChain(_) => "NotAChain",
        TransferError::TooManyStates { .. } => "TooManyStates",
        TransferError::DegenerateTop => "DegenerateTop",
        TransferError::Model(e) => model_kind(e),
        TransferError::Linalg(_) => "LinalgFailure",
    }
}

fn leeyang_kind(err: &LeeYangError) -> &'static str {
    match err {
        LeeYangError::NotIsingType => "NotIsingType",
        LeeYangError::TooManySites { .. } => "TooManySites",
        LeeYangError::DenominatorZero { .. } => "DenominatorZero",
        LeeYangError::NoWedgeFound { .. } => "NoWedgeFound",
        LeeYangError::Model(e) => model_kind(e),
        LeeYangError::Linalg(_) => "LinalgFailure",
    }
}

fn cluster_kind(err: &ClusterError) -> &'static str {
    match err {
        ClusterError::PolymerBudget { .. } => "PolymerBudget",
        ClusterError::GraphBudget { .. } => "GraphBudget",
        ClusterError::ConfigBudget { .. } => "ConfigBudget",
        ClusterError::EtaNotFound { .. } => "EtaNotFound",
        ClusterError::ConcentrationNotFound { .. } => "ConcentrationNotFound",
        ClusterError::NotInConvergenceRegion { .. } => "NotInConvergenceRegion",
        ClusterError::FreeBoundaryRequired => "FreeBoundaryRequired",
        ClusterError::SiteOutsideBox { .. } => "SiteOutsideBox",
        ClusterError::Model(e) => model_kind(e),
    }
}

fn analysis_kind(err: &AnalysisError) -> &'static str {
    match err {
        AnalysisError::OutsideHalfPlane { .. } => "OutsideHalfPlane",
        AnalysisError::SampleTooCoarse { .. } => "SampleTooCoarse",
        AnalysisError::InsufficientData { .. } => "InsufficientData",
        AnalysisError::NonDecay { .. } => "NonDecay",
        AnalysisError::SiteOutsideBox { .. } => "SiteOutsideBox",
        AnalysisError::BadDomain { .. } => "BadDomain",
        AnalysisError::Exact(e) => exact_kind(e),
        AnalysisError::Transfer(e) => transfer_kind(e),
        AnalysisError::Model(e) => model_kind(e),
    }
}

impl CliError {
    /// Machine-readable error kind for the JSON record.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::EmptyResults { .. } => "EmptyResults",
            CliError::Io { .. } => "IoFailure",
            CliError::Config(ConfigError::Io { .. }) => "IoFailure",
            CliError::Config(ConfigError::Parse(_)) => "ConfigParse",
            CliError::Config(ConfigError::Invalid(_)) => "ConfigInvalid",
            CliError::Config(ConfigError::Model(e)) => model_kind(e),
            CliError::Model(e) => model_kind(e),
            CliError::Exact(e) => exact_kind(e),
            CliError::Transfer(e) => transfer_kind(e),
            CliError::LeeYang(e) => leeyang_kind(e),
            CliError::Cluster(e) => cluster_kind(e),
            CliError::Analysis(e) => analysis_kind(e),
            CliError::CheckFailure { .. } => "CheckFailure",
        }
    }

    /// 1 for validation problems (the run never produced a verdict), 2 for
    /// numerical checks that ran and failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailure { .. } => 2,
            CliError::Analysis(AnalysisError::SampleTooCoarse { .. }) => 2,
            CliError::Analysis(AnalysisError::NonDecay { .. }) => 2,
            CliError::Cluster(ClusterError::EtaNotFound { .. }) => 2,
            CliError::Cluster(ClusterError::ConcentrationNotFound { .. }) => 2,
            CliError::LeeYang(LeeYangError::NoWedgeFound { .. }) => 2,
            _ => 1,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let config = ModelConfig::load(config_path)?;
    let mut spec: Spec64 = config.to_spec()?;
    let mut notes = Vec::new();
    if spec.field.re < 0.0 {
        spec.field = -spec.field;
        notes.push(
            "input field had Re h < 0; mapped to -h by the global spin-flip symmetry \
             (even-order correlations are unchanged, odd-order ones flip sign)"
                .to_string(),
        );
    }
    let meta = RunMeta {
        command: cli.command.name(),
        seed: cli.seed,
        notes,
    };
    let ctx = commands::Ctx {
        spec: &spec,
        meta: &meta,
        format: cli.format,
    };
    let output = commands::dispatch(&cli.command, &ctx)?;
    for artifact in &output.artifacts {
        let path = emit::write_atomic(&cli.out, artifact)?;
        println!("wrote {}", path.display());
    }
    match output.failure {
        Some(err) => Err(err),
        None => Ok(()),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Keep flag problems in the validation exit class: clap's own
            // default (2) is reserved here for failed numerical checks.
            let is_display = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            if is_display {
                std::process::exit(0);
            }
            emit::print_error_record("Usage", 1, &err.to_string());
            std::process::exit(1);
        }
    };
    if let Some(threads) = cli.threads {
        if threads > 0 {
            // Ignore the error if a pool already exists (tests call run
            // repeatedly in one process).
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }
    if let Err(err) = run(&cli) {
        let code = err.exit_code();
        emit::print_error_record(err.kind(), code, &err.to_string());
        std::process::exit(code);
    }
}
