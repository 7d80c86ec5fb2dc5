use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use pb2::human::{Hub, HumanTeacher};
use pb2::manifest::{self, Overrides};
use pb2::runner::{self, oracle_for, run_seed};
use pb2::server::Service;
use pb2::table;
use pb2_core::teacher::Teacher;

#[derive(Parser)]
#[command(
    name = "pb2",
    version,
    about = "Population-based preference RL experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed with the simulated teacher and write metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Number of seeds, taken from the manifest's seed list.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Build the feedback-efficiency table from every metrics.csv under a directory.
    Table {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Train the first seed while serving the teacher API and dashboard.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Ask a person through the web UI instead of the simulated teacher.
        #[arg(long)]
        human_teacher: bool,
        /// Seconds a query waits for an answer before it expires.
        #[arg(long, default_value_t = 300)]
        timeout: u64,
        /// Directory with the built UI.
        #[arg(long)]
        assets: Option<PathBuf>,
        #[arg(long, default_value = "serve-out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    no_inherit: bool,
    #[arg(long)]
    no_onpolicy: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    disc_include_ref: bool,
    #[arg(long)]
    strict_threshold: bool,
}

impl OverrideArgs {
    fn into_overrides(self, seeds: Option<usize>) -> Overrides {
        Overrides {
            no_inherit: self.no_inherit,
            no_onpolicy: self.no_onpolicy,
            lambda: self.lambda,
            epsilon: self.epsilon,
            population: self.population,
            disc_include_ref: self.disc_include_ref,
            strict_threshold: self.strict_threshold,
            seeds,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            config,
            seeds,
            out,
            overrides,
        } => {
            let mut cfg = manifest::load(&config)?;
            overrides.into_overrides(seeds).apply(&mut cfg);
            cfg.validate()?;
            for s in runner::run_all(&cfg, &out)? {
                let last = s.record.points.last().map_or(f64::NAN, |p| p.ret);
                println!(
                    "seed {}: {} labels, final return {last:.2}, {:.1}s",
                    s.record.seed, s.record.feedback_used, s.wall_clock_secs
                );
            }
        }
        Command::Table { input } => {
            let rows = runner::collect_metrics(&input)?;
            if rows.is_empty() {
                bail!("no metrics.csv found under {}", input.display());
            }
            let tables = table::make_table(&rows);
            fs::write(input.join("table.csv"), table::to_csv(&tables))?;
            fs::write(input.join("table.json"), table::to_json(&tables)?)?;
            for t in &tables {
                println!("{}", table::render(t));
            }
        }
        Command::Serve {
            config,
            port,
            human_teacher,
            timeout,
            assets,
            out,
            overrides,
        } => {
            let mut cfg = manifest::load(&config)?;
            overrides.into_overrides(None).apply(&mut cfg);
            cfg.validate()?;
            let hub = Hub::new(human_teacher);
            let service = Service::start(hub.clone(), port, assets)?;
            println!("serving on {}", service.url());
            let seed = cfg.seeds[0];
            let mut teacher: Box<dyn Teacher> = if human_teacher {
                Box::new(HumanTeacher::new(hub.clone(), Duration::from_secs(timeout)))
            } else {
                Box::new(oracle_for(&cfg, seed))
            };
            fs::create_dir_all(&out)?;
            manifest::save(&cfg, &out.join("manifest.toml"))?;
            let s = run_seed(
                &cfg,
                seed,
                teacher.as_mut(),
                Some(hub),
                &runner::seed_dir(&out, seed),
            )?;
            println!(
                "training finished with {} labels; still serving, interrupt to stop",
                s.record.feedback_used
            );
            service.join();
        }
    }
    Ok(())
}
