use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamloc::runner::{self, ScenarioConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "beamloc", version, about = "Beam hopping and power allocation for LEO TDOA positioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Average CRLB against orbit height.
    HeightSweep(Common),
    /// Average CRLB per snapshot for each positioning-satellite count.
    SnapshotSweep(Common),
    /// Mean SNR per positioning satellite and scheme.
    Table2(Common),
    /// Parse and check a config, printing warnings.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Record wall-clock runtimes in the CSV.
    #[arg(long)]
    timing: bool,
}

impl Common {
    fn load(&self) -> beamloc::Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let (cfg, warnings) = runner::load_config(path)?;
                for w in warnings {
                    eprintln!("warning: {w}");
                }
                cfg
            }
            None => ScenarioConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.record_runtime |= self.timing;
        Ok(cfg)
    }

    fn threads(&self) -> Option<usize> {
        (self.threads > 0).then_some(self.threads)
    }
}

fn sweep(common: &Common, name: &str, snapshot: bool) -> beamloc::Result<()> {
    let cfg = common.load()?;
    let result = if snapshot {
        runner::run_snapshot_sweep(&cfg, common.threads())?
    } else {
        runner::run_orbit_height_sweep(&cfg, common.threads())?
    };
    let csv = cfg.output_dir.join(format!("{name}.csv"));
    runner::emit_csv(&result, &csv)?;
    runner::write_plot_script(&result, &format!("{name}.csv"), &cfg.output_dir.join(format!("{name}.gp")))?;
    for r in &result.rows {
        println!(
            "{:>8} {:<10} N={} crlb={} m covered={} excluded={}",
            runner::format_sig(r.sweep_value),
            r.scheme.label(),
            r.n_pos,
            runner::format_sig(r.avg_crlb_m),
            r.covered_users,
            r.excluded_users
        );
    }
    println!("wrote {}", csv.display());
    Ok(())
}

fn table2(common: &Common) -> beamloc::Result<()> {
    let cfg = common.load()?;
    let table = runner::run_table2(&cfg, common.threads())?;
    let path = cfg.output_dir.join("table2.csv");
    runner::emit_snr_table(&table, &path)?;
    for (scheme, snr) in &table.rows {
        let cols: Vec<String> = snr.iter().map(|s| format!("{s:6.2}")).collect();
        println!("{:<10} {}", scheme.label(), cols.join(" "));
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn validate(path: &Path) -> beamloc::Result<()> {
    let (_, warnings) = runner::load_config(path)?;
    for w in &warnings {
        println!("warning: {w}");
    }
    println!("{}: ok", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::HeightSweep(c) => sweep(c, "height_sweep", false),
        Command::SnapshotSweep(c) => sweep(c, "snapshot_sweep", true),
        Command::Table2(c) => table2(c),
        Command::ValidateConfig { config } => validate(config),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
