//! `sase` — Monte Carlo experiment runner for the two-stage subspace
//! channel estimator. See README for the config file format.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sase_core::harness::{
    emit, emit_rank_check, run_rank_check, run_sweep, EmitFormat, ExperimentConfig, SweepKind,
};
use sase_core::metrics::{budget_table, BudgetParams};
use sase_core::SaseError;

/// Output directory used when --out is not given.
const OUT_DIR_ENV: &str = "SASE_OUT_DIR";

#[derive(Parser)]
#[command(name = "sase", version, about = "Sequential two-stage subspace channel estimation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep and write a CSV/JSON result table.
    Run(RunArgs),
    /// Tabulate the numerical rank of the sampled column block versus m.
    RankCheck(RankCheckArgs),
    /// Print the documented training-budget formulas of all methods.
    BudgetTable(BudgetArgs),
    /// Print the fully resolved configuration.
    ShowConfig(ConfigArgs),
}

/// Config file plus per-key overrides; flags mirror the flat config keys.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_r: Option<String>,
    #[arg(long)]
    n_t: Option<String>,
    #[arg(long)]
    m_rf: Option<String>,
    #[arg(long)]
    n_rf: Option<String>,
    #[arg(long)]
    true_l: Option<String>,
    /// Estimator rank: an integer, `auto`, or `true`.
    #[arg(long)]
    assumed_l: Option<String>,
    /// Stage-1 column budget (mutually exclusive with --channel-uses).
    #[arg(long)]
    m: Option<String>,
    /// Total channel-use target; inverted to a stage-1 budget.
    #[arg(long)]
    channel_uses: Option<String>,
    /// Comma-separated SNR grid in dB.
    #[arg(long)]
    snr_db_grid: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// `hybrid` or `unconstrained`.
    #[arg(long)]
    mode: Option<String>,
    /// `ula` or `upa`.
    #[arg(long)]
    geometry: Option<String>,
    /// Dictionary atoms per side (`auto` = 8x antennas).
    #[arg(long)]
    dict_size: Option<String>,
    /// snr | channel_uses | paths | mismatch | rank_check.
    #[arg(long)]
    sweep: Option<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig, SaseError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_flat_file(path)?,
            None => ExperimentConfig::default(),
        };
        let overrides: [(&str, &Option<String>); 14] = [
            ("n_r", &self.n_r),
            ("n_t", &self.n_t),
            ("m_rf", &self.m_rf),
            ("n_rf", &self.n_rf),
            ("true_l", &self.true_l),
            ("assumed_l", &self.assumed_l),
            ("m", &self.m),
            ("channel_uses", &self.channel_uses),
            ("snr_db_grid", &self.snr_db_grid),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("geometry", &self.geometry),
            ("dict_size", &self.dict_size),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set_key(key, v)?;
            }
        }
        if let Some(v) = &self.sweep {
            cfg.set_key("sweep", v)?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Output file; defaults to $SASE_OUT_DIR (or `.`) with a standard name.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv | json.
    #[arg(long, default_value = "csv")]
    format: String,
}

impl OutputArgs {
    fn resolve(&self, default_name: &str) -> Result<(EmitFormat, PathBuf), SaseError> {
        let format: EmitFormat = self.format.parse()?;
        let path = match &self.out {
            Some(p) => p.clone(),
            None => {
                let dir = std::env::var(OUT_DIR_ENV).unwrap_or_else(|_| ".".into());
                let ext = match format {
                    EmitFormat::Csv => "csv",
                    EmitFormat::Json => "json",
                };
                Path::new(&dir).join(format!("{default_name}.{ext}"))
            }
        };
        Ok((format, path))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct RankCheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, default_value_t = 4)]
    l: usize,
    #[arg(long, default_value_t = 36)]
    n_r: usize,
    #[arg(long, default_value_t = 144)]
    n_t: usize,
    #[arg(long, default_value_t = 6)]
    m_rf: usize,
    #[arg(long, default_value_t = 8)]
    n_rf: usize,
    /// Stage-1 column budget of the two-stage method.
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Angular grid size of the sparse-recovery baselines.
    #[arg(long, default_value_t = 144)]
    grid_g: usize,
    /// Krylov depth of the iterative baseline.
    #[arg(long, default_value_t = 4)]
    arnoldi_q: usize,
    /// Beams per stage of the adaptive baseline.
    #[arg(long, default_value_t = 2)]
    ace_s: usize,
    /// Angle-resolution denominator of the adaptive baseline.
    #[arg(long, default_value_t = 256)]
    ace_n_m: usize,
    /// Optional CSV destination; prints a table to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: &RunArgs) -> Result<(), SaseError> {
    let cfg = args.config.build()?;
    if cfg.sweep == SweepKind::RankCheck {
        return rank_check_with(cfg, &args.output);
    }
    let (format, path) = args.output.resolve("results")?;
    let result = run_sweep(&cfg)?;
    emit(&result, format, &path)?;
    eprintln!(
        "wrote {} rows x {} trials to {} in {:.1} s",
        result.rows.len(),
        cfg.trials,
        path.display(),
        result.wall_time_s
    );
    Ok(())
}

fn rank_check_with(cfg: ExperimentConfig, output: &OutputArgs) -> Result<(), SaseError> {
    let (format, path) = output.resolve("rank_check")?;
    let result = run_rank_check(&cfg)?;
    emit_rank_check(&result, format, &path)?;
    eprintln!(
        "wrote {} rank rows to {} in {:.1} s",
        result.rows.len(),
        path.display(),
        result.wall_time_s
    );
    Ok(())
}

fn rank_check(args: &RankCheckArgs) -> Result<(), SaseError> {
    let cfg = args.config.build()?;
    rank_check_with(cfg, &args.output)
}

fn budget(args: &BudgetArgs) -> Result<(), SaseError> {
    let params = BudgetParams {
        l: args.l,
        n_r: args.n_r,
        n_t: args.n_t,
        m_rf: args.m_rf,
        n_rf: args.n_rf,
        m: args.m,
        grid_g: args.grid_g,
        arnoldi_q: args.arnoldi_q,
        ace_s: args.ace_s,
        ace_n_m: args.ace_n_m,
    };
    let rows = budget_table(&params)?;
    match &args.out {
        Some(path) => {
            let mut text = String::from("method,channel_uses,order_of_magnitude\n");
            for r in &rows {
                text.push_str(&format!("{},{},{}\n", r.method, r.channel_uses, r.order_of_magnitude));
            }
            std::fs::write(path, text)
                .map_err(|e| SaseError::Io { path: path.display().to_string(), source: e })?;
            eprintln!("wrote budget table to {}", path.display());
        }
        None => {
            println!("{:<10} {:>14}  note", "method", "channel uses");
            for r in &rows {
                let note = if r.order_of_magnitude { "order-of-magnitude" } else { "exact" };
                println!("{:<10} {:>14.1}  {note}", r.method, r.channel_uses);
            }
        }
    }
    Ok(())
}

fn show_config(args: &ConfigArgs) -> Result<(), SaseError> {
    let cfg = args.build()?;
    cfg.validate()?;
    print!("{}", cfg.to_flat_string());
    let m = cfg.resolved_m()?;
    let k = sase_core::metrics::sase_channel_uses(m, cfg.n_r, cfg.m_rf, cfg.n_t)?;
    println!("# resolved: m = {m}, total channel uses = {k}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::RankCheck(args) => rank_check(args),
        Command::BudgetTable(args) => budget(args),
        Command::ShowConfig(args) => show_config(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else if matches!(e, SaseError::Io { .. }) {
                ExitCode::from(1)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
