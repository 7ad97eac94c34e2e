mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dpmerge_core::baselines::compare_prop10;
use dpmerge_core::merge_lc::lc_feasible_set;
use dpmerge_core::merge_rs::{default_grid, rs_feasible_set, write_feasible_json, SweepOptions};
use dpmerge_core::pld::{mechanism_pld, pld_delta, PldConfig};
use dpmerge_core::rdp::mechanism_rdp_curve;
use dpmerge_core::{Accountant, AccountingError};
use dpmerge_experiments::dpsgd::run_dpsgd_sim;
use dpmerge_experiments::mean_est::mean_est_frontier;
use dpmerge_experiments::{write_frontier_csv, ExperimentError, FrontierPoint, MergeRule};
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::{ConfigError, RunConfig};

/// Privacy accounting for merged differentially private models.
#[derive(Debug, Parser)]
#[command(name = "dpmerge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    accountant: Option<AccountantArg>,
    #[arg(long, value_enum)]
    merge: Option<MergeArg>,
    /// Weight lattice spacing.
    #[arg(long)]
    resolution: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-mechanism RDP curves or PLD δ(ε) tables.
    Curve(Common),
    /// Lattice weights whose merge meets the target guarantee.
    Feasible(Common),
    /// Run a synthetic experiment and write its frontier.
    Experiment {
        #[arg(value_enum)]
        name: ExperimentName,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the RDP joint-release bound with advanced composition.
    Compare(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AccountantArg {
    Rdp,
    Pld,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MergeArg {
    Rs,
    Lc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExperimentName {
    MeanEst,
    DpsgdSim,
}

impl ExperimentName {
    fn file_stem(self) -> &'static str {
        match self {
            ExperimentName::MeanEst => "mean-est",
            ExperimentName::DpsgdSim => "dpsgd-sim",
        }
    }
}

/// The loaded configuration with command-line overrides applied.
struct Run {
    config: RunConfig,
    out: PathBuf,
}

impl Run {
    fn new(common: &Common) -> anyhow::Result<Self> {
        let mut config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            config.seed = Some(s);
        }
        if let Some(a) = common.accountant {
            config.accountant = Some(match a {
                AccountantArg::Rdp => Accountant::Rdp,
                AccountantArg::Pld => Accountant::Pld,
            });
        }
        if let Some(m) = common.merge {
            config.merge = Some(match m {
                MergeArg::Rs => MergeRule::Rs,
                MergeArg::Lc => MergeRule::Lc,
            });
        }
        if let Some(r) = common.resolution {
            config.resolution = Some(r);
        }
        let out = common
            .out
            .clone()
            .or_else(|| config.output.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { config, out })
    }

    fn accountant(&self) -> Accountant {
        self.config.accountant.unwrap_or(Accountant::Rdp)
    }

    fn pld_config(&self) -> PldConfig {
        self.config
            .pld_spacing
            .map_or_else(PldConfig::default, PldConfig::with_spacing)
    }

    /// Writes `name` in the output directory via a temporary file and rename.
    fn write(&self, name: &str, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> anyhow::Result<PathBuf> {
        let path = self.out.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.out)?;
        {
            let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
            fill(&mut buf)?;
            buf.flush()?;
        }
        tmp.persist(&path).map_err(|e| e.error)?;
        println!("wrote {}", path.display());
        Ok(path)
    }
}

fn write_json<T: Serialize>(value: &T) -> impl FnOnce(&mut dyn Write) -> std::io::Result<()> + '_ {
    move |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    }
}

/// ε grid for PLD δ(ε) tables.
const PLD_TABLE_EPS: (usize, f64) = (201, 0.05);

fn cmd_curve(run: &Run) -> anyhow::Result<()> {
    let specs = run.config.mechanism_specs()?;
    let grid = run.config.grid()?.unwrap_or_else(|| default_grid(&specs));
    for (i, spec) in specs.iter().enumerate() {
        let name = format!("curve_{i}.csv");
        match run.accountant() {
            Accountant::Rdp => {
                let curve = mechanism_rdp_curve(spec, &grid)?;
                run.write(&name, |w| {
                    writeln!(w, "alpha,eps")?;
                    for (a, e) in curve.orders().iter().zip(curve.values()) {
                        writeln!(w, "{a},{e:?}")?;
                    }
                    Ok(())
                })?;
            }
            Accountant::Pld => {
                let pld = mechanism_pld(spec, &run.pld_config())?;
                let (count, step) = PLD_TABLE_EPS;
                let rows: Vec<(f64, f64)> = (0..count)
                    .map(|k| {
                        let eps = k as f64 * step;
                        (eps, pld_delta(&pld, eps))
                    })
                    .collect();
                run.write(&name, |w| {
                    writeln!(w, "eps,delta")?;
                    for (e, d) in &rows {
                        writeln!(w, "{e:?},{d:?}")?;
                    }
                    Ok(())
                })?;
            }
        }
    }
    Ok(())
}

const DEFAULT_RESOLUTION: f64 = 0.1;

fn cmd_feasible(run: &Run) -> anyhow::Result<()> {
    let specs = run.config.mechanism_specs()?;
    let target = run.config.target()?;
    let options = SweepOptions {
        grid: run.config.grid()?,
        pld: run.pld_config(),
        enumeration_cap: run.config.enumeration_cap.map(u128::from),
    };
    let resolution = run.config.resolution.unwrap_or(DEFAULT_RESOLUTION);
    let entries = match run.config.merge.unwrap_or(MergeRule::Rs) {
        MergeRule::Rs => rs_feasible_set(&specs, &target, resolution, run.accountant(), &options)?,
        MergeRule::Lc => lc_feasible_set(&specs, &target, resolution, run.accountant(), &options)?,
    };
    println!("{} feasible weight vectors", entries.len());
    run.write("feasible.json", |w| {
        write_feasible_json(&entries, &mut *w)?;
        writeln!(w)
    })?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize, S: Serialize> {
    experiment: &'a str,
    seed: u64,
    config_sha256: String,
    versions: [(&'static str, &'static str); 3],
    config: &'a C,
    summary: S,
}

const VERSIONS: [(&str, &str); 3] = [
    ("dpmerge-cli", env!("CARGO_PKG_VERSION")),
    ("dpmerge-core", env!("CARGO_PKG_VERSION")),
    ("dpmerge-experiments", env!("CARGO_PKG_VERSION")),
];

fn write_experiment<C: Serialize, S: Serialize>(
    run: &Run,
    name: ExperimentName,
    seed: u64,
    config: &C,
    frontier: &[FrontierPoint],
    summary: S,
) -> anyhow::Result<()> {
    let stem = name.file_stem();
    run.write(&format!("{stem}_frontier.csv"), |w| write_frontier_csv(frontier, w))?;
    let canonical = serde_json::to_vec(config)?;
    let manifest = Manifest {
        experiment: stem,
        seed,
        config_sha256: hex::encode(Sha256::digest(&canonical)),
        versions: VERSIONS,
        config,
        summary,
    };
    run.write(&format!("{stem}_manifest.json"), write_json(&manifest))?;
    Ok(())
}

fn cmd_experiment(run: &Run, name: ExperimentName) -> anyhow::Result<()> {
    let seed = run.config.seed.unwrap_or(0);
    match name {
        ExperimentName::MeanEst => {
            let mut cfg = run.config.mean_est.clone().unwrap_or_default();
            cfg.seed = seed;
            if let Some(r) = run.config.resolution {
                cfg.resolution = r;
            }
            let result = mean_est_frontier(&cfg)?;
            let frontier: Vec<FrontierPoint> = result.frontiers.iter().flat_map(|(_, f)| f.clone()).collect();
            write_experiment(run, name, seed, &cfg, &frontier, ())
        }
        ExperimentName::DpsgdSim => {
            let mut cfg = run.config.dpsgd_sim.clone().unwrap_or_default();
            cfg.seed = seed;
            if let Some(r) = run.config.resolution {
                cfg.resolution = r;
            }
            if let Some(m) = run.config.merge {
                cfg.merges = vec![m];
            }
            if let Some(a) = run.config.accountant {
                cfg.accountants = vec![a];
            }
            let result = run_dpsgd_sim(&cfg)?;
            let frontier: Vec<FrontierPoint> = result.frontiers.iter().flat_map(|(_, f)| f.clone()).collect();
            #[derive(Serialize)]
            struct Summary<'a> {
                standalone: &'a [dpmerge_experiments::dpsgd::StandaloneModel],
                targets: &'a [(Accountant, f64)],
                feasible_counts: Vec<(String, usize)>,
            }
            let summary = Summary {
                standalone: &result.standalone,
                targets: &result.targets,
                feasible_counts: result
                    .frontiers
                    .iter()
                    .map(|(m, _)| (m.name().to_string(), result.feasible(*m).count()))
                    .collect(),
            };
            write_experiment(run, name, seed, &cfg, &frontier, summary)
        }
    }
}

fn cmd_compare(run: &Run) -> anyhow::Result<()> {
    let Some(c) = run.config.compare else {
        bail!(ConfigError("`compare` section is required".into()));
    };
    let report = compare_prop10(c.t, c.delta, c.n, c.delta0.unwrap_or(c.delta / 10.0))?;
    println!(
        "eps_rdp = {:?}, eps_com = {:?}: {}",
        report.eps_rdp,
        report.eps_com,
        if report.holds { "pass" } else { "fail" }
    );
    run.write("compare.json", write_json(&report))?;
    Ok(())
}

fn accounting_exit_code(e: &AccountingError) -> u8 {
    use AccountingError::*;
    match e {
        AllInfinite | Unreachable { .. } | CorrelatedInputs { .. } | DegenerateNoise { .. }
        | EnumerationCapExceeded { .. } => 3,
        NegativeWeight { .. } | ZeroMass | Empty(_) | InvalidParameter(_) | GridMismatch
        | NonIntegerOrder(_) | SpacingMismatch(..) | RoundingMismatch | DeltaTooLarge(_)
        | DimensionMismatch { .. } => 2,
    }
}

/// 2 for configuration errors, 3 for numeric or capacity failures, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if let Some(e) = err.downcast_ref::<AccountingError>() {
        return accounting_exit_code(e);
    }
    match err.downcast_ref::<ExperimentError>() {
        Some(ExperimentError::Accounting(e)) => accounting_exit_code(e),
        Some(ExperimentError::InvalidConfig(_)) => 2,
        None => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Curve(c) => cmd_curve(&Run::new(c)?),
        Command::Feasible(c) => cmd_feasible(&Run::new(c)?),
        Command::Experiment { name, common } => cmd_experiment(&Run::new(common)?, *name),
        Command::Compare(c) => cmd_compare(&Run::new(c)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
