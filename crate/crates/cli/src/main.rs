//! `tridiff` — estimate treatment and spillover effects on panel CSVs,
//! run the bundled simulation studies, and test pre-policy trends.
//!
//! Exit codes: 0 ok; 2 input/config error; 3 estimation failure;
//! 4 study quality failure (too many failed iterations).

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tridiff::drdtd::{dr_asu, dr_att, dr_td, BootstrapOptions, DrOptions};
use tridiff::mc::{raw_to_csv, report_to_csv, run_study, StudyConfig, StudyReport};
use tridiff::panel::{load_panel_csv, to_two_period, validate_partition, ColumnMapping, PanelDataset};
use tridiff::pretrend::{did_leads, leads_to_csv, tt_leads, LeadGroup, LeadsResult};
use tridiff::tdiff::{dtd_threeway_fe, dtd_two_period, td_threeway_fe, td_two_period, Estimate};
use tridiff::Error;

#[derive(Parser)]
#[command(name = "tridiff", version, about = "Triple-difference and double-triple-difference estimation under spillovers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate treatment and spillover effects on a panel CSV.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study from a JSON config.
    Simulate(SimulateArgs),
    /// Event-study pre-trend diagnostics on the pre-policy window.
    Pretrend(PretrendArgs),
}

#[derive(Args, Clone)]
struct MappingArgs {
    /// Input CSV (long format, header row).
    #[arg(long)]
    data: PathBuf,
    /// Unit id column.
    #[arg(long, default_value = "unit")]
    unit: String,
    /// Time column (integer periods).
    #[arg(long, default_value = "time")]
    time: String,
    /// Outcome column.
    #[arg(long, default_value = "outcome")]
    outcome: String,
    /// Treatment-stratum indicator column.
    #[arg(long, default_value = "s")]
    s: String,
    /// Target-group indicator column.
    #[arg(long, default_value = "g")]
    g: String,
    /// Interference indicator column; omit for pure TD data (i = 0).
    #[arg(long)]
    i: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Cluster column; defaults to the unit id.
    #[arg(long)]
    cluster: Option<String>,
}

impl MappingArgs {
    fn mapping(&self) -> ColumnMapping {
        let mut m = ColumnMapping::new(&self.unit, &self.time, &self.outcome, &self.s, &self.g);
        if let Some(i) = &self.i {
            m = m.with_interference(i);
        }
        if !self.covariates.is_empty() {
            m = m.with_covariates(&self.covariates);
        }
        if let Some(c) = &self.cluster {
            m = m.with_cluster(c);
        }
        m
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    /// Two-period triple difference (controls pooled).
    Td,
    /// Two-period double-triple difference.
    Dtd,
    /// Three-way fixed-effects triple difference.
    Td3fe,
    /// Three-way fixed-effects double-triple difference.
    Dtd3fe,
    /// Doubly-robust triple difference (covariate-adjusted, pooled controls).
    DrTd,
    /// Doubly-robust double-triple difference (covariate-adjusted).
    DrDtd,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    mapping: MappingArgs,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// First treated period (needed by 3FE models and multi-period data).
    #[arg(long)]
    post_from: Option<i64>,
    /// Last pre-policy period to keep when collapsing to two periods.
    #[arg(long)]
    pre_through: Option<i64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
    /// Bootstrap seed for the doubly-robust models.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bootstrap replicates for the doubly-robust models.
    #[arg(long, default_value_t = 400)]
    bootstrap_b: usize,
    /// Extreme-weight guard for the doubly-robust models.
    #[arg(long, default_value_t = 0.05)]
    weight_cap: f64,
    /// Worker threads (0 = all cores); TRIDIFF_THREADS is the fallback.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
    /// Per-iteration raw estimate dump (CSV), written next to the report.
    #[arg(long)]
    raw_out: Option<PathBuf>,
    /// Override the config's thread count (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    /// Parallel-trends leads (S x lead).
    Did,
    /// Trend-in-trends leads (S x group x lead).
    Tt,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    All,
    /// Drop interference units (tests the ATT-side assumption).
    I0,
    /// Keep untreated groups only (tests the spillover-side assumption).
    G0,
}

#[derive(Args)]
struct PretrendArgs {
    #[command(flatten)]
    mapping: MappingArgs,
    #[arg(long, value_enum)]
    design: DesignArg,
    #[arg(long, value_enum, default_value = "all")]
    subset: SubsetArg,
    /// Omitted base period.
    #[arg(long)]
    base: i64,
    /// Keep periods up to and including this one.
    #[arg(long)]
    pre_through: Option<i64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Pretrend(args) => cmd_pretrend(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::StudyCellFailures { .. } => 4,
        e if e.is_input_error() => 2,
        _ => 3,
    }
}

fn configured_threads(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("TRIDIFF_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}

fn install_thread_pool(threads: Option<usize>) {
    if let Some(n) = threads {
        if n > 0 {
            // Ignore failure: the global pool can only be set once.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, content).map_err(Error::from),
        None => {
            let mut stdout = std::io::stdout();
            stdout.write_all(content.as_bytes()).map_err(Error::from)
        }
    }
}

/// Collapse multi-period data for the two-period estimators, honoring the
/// pre/post window flags.
fn reduce_to_two_periods(
    data: &PanelDataset,
    post_from: Option<i64>,
    pre_through: Option<i64>,
) -> Result<PanelDataset, Error> {
    let times = data.time_values();
    if times.len() == 2 && post_from.is_none() && pre_through.is_none() {
        return Ok(data.clone());
    }
    let post_from = post_from.ok_or_else(|| {
        Error::InvalidConfig(
            "multi-period data needs --post-from to define the post window".to_string(),
        )
    })?;
    let pre: Vec<i64> = times
        .iter()
        .copied()
        .filter(|&t| t < post_from && pre_through.is_none_or(|p| t <= p))
        .collect();
    let post: Vec<i64> = times.iter().copied().filter(|&t| t >= post_from).collect();
    let reduction = to_two_period(data, &pre, &post)?;
    if reduction.dropped_units > 0 {
        eprintln!(
            "note: dropped {} unit(s) not observed in both windows",
            reduction.dropped_units
        );
    }
    Ok(reduction.data)
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), Error> {
    install_thread_pool(configured_threads(args.threads));
    let needs_interference = matches!(args.model, ModelArg::Dtd | ModelArg::Dtd3fe | ModelArg::DrDtd);
    if needs_interference && args.mapping.i.is_none() {
        return Err(Error::InvalidConfig(
            "interference column required: pass --i for double-triple models".to_string(),
        ));
    }
    if matches!(args.model, ModelArg::DrTd | ModelArg::DrDtd) && args.mapping.covariates.is_empty()
    {
        return Err(Error::InvalidConfig(
            "doubly-robust models need --covariates".to_string(),
        ));
    }
    let data = load_panel_csv(&args.mapping.data, &args.mapping.mapping())?;
    let partition = validate_partition(&data);
    eprintln!("{partition}");

    let bootstrap = if args.bootstrap_b == 0 {
        None
    } else {
        Some(BootstrapOptions {
            b: args.bootstrap_b,
            seed: args.seed,
        })
    };
    let dr_opts = DrOptions {
        bootstrap,
        weight_cap: args.weight_cap,
        ..DrOptions::default()
    };

    let estimates: Vec<Estimate> = match args.model {
        ModelArg::Td => {
            let two = reduce_to_two_periods(&data, args.post_from, args.pre_through)?;
            let fit = td_two_period(&two)?;
            vec![fit.delta, fit.psi]
        }
        ModelArg::Dtd => {
            let two = reduce_to_two_periods(&data, args.post_from, args.pre_through)?;
            let fit = dtd_two_period(&two)?;
            vec![fit.delta, fit.psi]
        }
        ModelArg::Td3fe => {
            let post_from = args.post_from.ok_or_else(|| {
                Error::InvalidConfig("--post-from is required for 3FE models".to_string())
            })?;
            vec![td_threeway_fe(&data, post_from)?]
        }
        ModelArg::Dtd3fe => {
            let post_from = args.post_from.ok_or_else(|| {
                Error::InvalidConfig("--post-from is required for 3FE models".to_string())
            })?;
            let fit = dtd_threeway_fe(&data, post_from)?;
            vec![fit.delta, fit.psi]
        }
        ModelArg::DrTd => {
            let two = reduce_to_two_periods(&data, args.post_from, args.pre_through)?;
            vec![dr_td(&two, &dr_opts)?]
        }
        ModelArg::DrDtd => {
            let two = reduce_to_two_periods(&data, args.post_from, args.pre_through)?;
            vec![dr_att(&two, &dr_opts)?, dr_asu(&two, &dr_opts)?]
        }
    };

    let content = match args.format {
        OutputFormat::Csv => {
            let mut out =
                String::from("estimand,point,se,ci_low,ci_high,n_obs,n_units\n");
            for e in &estimates {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    e.estimand, e.point, e.se, e.ci_low, e.ci_high, e.n_obs, e.n_units
                ));
            }
            out
        }
        OutputFormat::Json => {
            let doc = serde_json::json!({
                "estimates": estimates,
                "partition": partition,
            });
            format!("{}\n", serde_json::to_string_pretty(&doc)?)
        }
    };
    write_output(&args.out, &content)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&args.config)?;
    let mut config: StudyConfig = serde_json::from_str(&text)?;
    if let Some(threads) = configured_threads(args.threads) {
        config.threads = threads;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if args.raw_out.is_some() {
        config.dump_raw = true;
    }
    let report: StudyReport = run_study(&config)?;
    eprintln!(
        "study finished in {:.1}s ({} rows)",
        report.wall_time.as_secs_f64(),
        report.rows.len()
    );
    let content = match args.format {
        OutputFormat::Csv => report_to_csv(&report),
        OutputFormat::Json => format!("{}\n", serde_json::to_string_pretty(&report)?),
    };
    write_output(&args.out, &content)?;
    if let Some(raw_path) = &args.raw_out {
        fs::write(raw_path, raw_to_csv(&report))?;
    }
    Ok(())
}

fn cmd_pretrend(args: PretrendArgs) -> Result<(), Error> {
    let data = load_panel_csv(&args.mapping.data, &args.mapping.mapping())?;
    let data = match args.pre_through {
        Some(last) => data.filter_times(|t| t <= last)?,
        None => data,
    };
    let data = match args.subset {
        SubsetArg::All => data,
        SubsetArg::I0 => data.subset(|_, _, i| i == 0)?,
        SubsetArg::G0 => data.subset(|_, g, _| g == 0)?,
    };
    let result: LeadsResult = match args.design {
        DesignArg::Did => did_leads(&data, args.base)?,
        DesignArg::Tt => {
            let group = match args.subset {
                SubsetArg::G0 => LeadGroup::I,
                _ => LeadGroup::G,
            };
            tt_leads(&data, args.base, group)?
        }
    };
    let content = match args.format {
        OutputFormat::Csv => leads_to_csv(&result),
        OutputFormat::Json => format!("{}\n", serde_json::to_string_pretty(&result)?),
    };
    write_output(&args.out, &content)
}
