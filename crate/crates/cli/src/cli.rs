//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands;
use crate::config::{ExperimentConfig, Regime};
use crate::error::CliResult;
use crate::methods::{Method, Stage};

#[derive(Debug, Parser)]
#[command(
    name = "dsf",
    version,
    about = "Diverse trajectory forecasting with DPP sampling functions"
)]
pub struct Cli {
    /// JSON experiment config; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed for every derived stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub regime: Option<Regime>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train and test splits.
    GenData,
    /// Train one stage; samplers need the cVAE checkpoint.
    Train {
        #[arg(long, value_enum)]
        stage: Stage,
    },
    /// Score methods on the test split.
    Evaluate {
        /// Comma-separated: dsf, cvae, mcl, dsf-nll, dsf-cos, cvae-ldpp.
        #[arg(long, value_delimiter = ',', default_value = "dsf,cvae")]
        methods: Vec<String>,
        /// Quality base for greedy MAP at test time.
        #[arg(long)]
        omega_test: Option<f64>,
    },
    /// Write forecast trajectories and the error-versus-N table.
    ExportPlots {
        #[arg(long, value_delimiter = ',', default_value = "dsf,cvae")]
        methods: Vec<String>,
        #[arg(long)]
        omega_test: Option<f64>,
    },
    /// Print the effective configuration as JSON.
    ShowConfig,
}

impl Cli {
    pub fn resolve_config(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(r) = self.regime {
            cfg = cfg.with_regime(r);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Command::Evaluate {
            omega_test: Some(w), ..
        }
        | Command::ExportPlots {
            omega_test: Some(w), ..
        } = &self.command
        {
            cfg.inference.omega_test = *w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::GenData => {
            let m = commands::gen_data(&cfg)?;
            println!(
                "wrote {} train and {} test records to {}",
                m.train_records,
                m.test_records,
                cfg.out_dir.join("data").display()
            );
        }
        Command::Train { stage } => {
            let m = commands::train(&cfg, *stage)?;
            println!(
                "trained {} for {} epochs, {} instability events",
                m.stage, m.epochs, m.instability_events
            );
        }
        Command::Evaluate { methods, .. } => {
            let methods = Method::parse_list(methods)?;
            let reports = commands::evaluate(&cfg, &methods)?;
            println!("method\tade\tfde\tasd\tfsd\tcoverage\tsamples");
            for r in &reports {
                let m = &r.report.mean;
                println!(
                    "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.2}",
                    r.method, m.ade, m.fde, m.asd, m.fsd, m.coverage, m.samples
                );
            }
        }
        Command::ExportPlots { methods, .. } => {
            let methods = Method::parse_list(methods)?;
            let e = commands::export_plots(&cfg, &methods)?;
            println!(
                "wrote {} trajectories for {} contexts and {} sweep points",
                e.trajectories,
                e.contexts,
                e.sweep.len()
            );
        }
        Command::ShowConfig => println!("{}", cfg.to_json()?),
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
