use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use imbforge::experiment::{
    cmd_bench, cmd_finetune, cmd_lambda_sweep, cmd_oversample, cmd_pretrain, reproduce, ExperimentConfig, Method,
    Overrides, ReproduceOptions, Scale, TABLE_IDS,
};
use imbforge::mgvae::PriorMode;
use imbforge::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "imbforge", version, about = "Generative oversampling and re-balancing benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed.
    #[arg(long, global = true, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// paper | small
    #[arg(long, global = true, value_parser = parse_scale)]
    scale: Option<Scale>,
    #[arg(long, global = true, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    disable_pretrain: bool,
    #[arg(long, global = true)]
    disable_ewc: bool,
    /// mixture | normal
    #[arg(long, global = true, value_parser = parse_prior)]
    prior: Option<PriorMode>,
    /// Directory holding a pretrained model and Fisher file.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain on the head class and estimate the Fisher diagonal.
    Pretrain,
    /// Fine-tune one model per minority class with EWC.
    Finetune,
    /// Write the balanced training set and sample grids.
    Oversample,
    /// Train and evaluate a classifier for each seed.
    Bench,
    /// Bench once per regularization weight candidate.
    LambdaSweep,
    /// Run one of the bundled table recipes.
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(TABLE_IDS))]
        table_id: String,
    },
}

fn parse_scale(s: &str) -> std::result::Result<Scale, String> {
    Scale::from_tag(s).map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::from_tag(s).map_err(|e| e.to_string())
}

fn parse_prior(s: &str) -> std::result::Result<PriorMode, String> {
    PriorMode::from_tag(s).map_err(|e| e.to_string())
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seeds: self.seed.map(|s| vec![s]).or_else(|| self.seeds.clone()),
            output_dir: self.out.clone(),
            scale: self.scale,
            method: self.method,
            lambda: self.lambda,
            disable_pretrain: self.disable_pretrain,
            disable_ewc: self.disable_ewc,
            prior: self.prior,
            checkpoint: self.checkpoint.clone(),
        }
    }

    fn load_config(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        self.overrides().apply(&mut cfg);
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain => {
            let a = cmd_pretrain(&cli.load_config()?)?;
            println!("{}", a.model.display());
            println!("{}", a.fisher.display());
        }
        Command::Finetune => {
            for p in cmd_finetune(&cli.load_config()?)? {
                println!("{}", p.display());
            }
        }
        Command::Oversample => {
            let a = cmd_oversample(&cli.load_config()?)?;
            for p in &a.dataset {
                println!("{}", p.display());
            }
            println!("class counts {:?}", a.class_counts);
            for (p, _) in &a.grids {
                println!("{}", p.display());
            }
        }
        Command::Bench => {
            let out = cmd_bench(&cli.load_config()?)?;
            for (seed, why) in &out.failures {
                eprintln!("seed {seed} failed: {why}");
            }
            let [mb, ma, mg] = out.summary.mean.as_percent();
            let [sb, sa, sg] = out.summary.std.as_percent();
            println!("{}: B-ACC {mb:.1} ± {sb:.1}  ACSA {ma:.1} ± {sa:.1}  GM {mg:.1} ± {sg:.1}", out.label);
        }
        Command::LambdaSweep => {
            cmd_lambda_sweep(&cli.load_config()?)?;
        }
        Command::Reproduce { table_id } => {
            let opts = ReproduceOptions {
                output_dir: cli.out.clone().unwrap_or_else(|| PathBuf::from("runs")),
                scale: cli.scale,
                seeds: cli.overrides().seeds,
            };
            print!("{}", reproduce(table_id, &opts)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
