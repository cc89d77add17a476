use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use earlygest::config::{ModalitySelection, Overrides, RunConfig};
use earlygest::detector::parse_tau;
use earlygest::metrics::summary_text;
use earlygest::pipeline;
use earlygest::{Error, Result};

/// Early and online gesture detection on a synthetic corpus.
#[derive(Parser)]
#[command(name = "earlygest", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// depth, color, flow or all.
    #[arg(long, global = true, value_parser = parse_modality)]
    modality: Option<ModalitySelection>,
    /// Online trigger threshold on the progression value.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Consensus ratio in [0, 1], or `global` for whole-video voting.
    #[arg(long, global = true, value_parser = parse_tau_arg)]
    tau: Option<TauArg>,
    /// Root for the corpus, checkpoint and report directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy)]
struct TauArg(Option<f64>);

fn parse_modality(s: &str) -> std::result::Result<ModalitySelection, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_tau_arg(s: &str) -> std::result::Result<TauArg, String> {
    parse_tau(s).map(TauArg).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus (both splits and the manifest).
    Generate {
        /// Replace an existing corpus.
        #[arg(long)]
        force: bool,
    },
    /// Train one model per selected modality.
    Train,
    /// Evaluate the trained models on the test split and write reports.
    Eval,
    /// Run a video through a trained model frame by frame, printing events.
    Stream {
        /// Video file, or `-` for standard input.
        input: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: common.seed,
        modality: common.modality,
        epsilon: common.epsilon,
        tau: common.tau.map(|t| t.0),
        out: common.out.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    match cli.command {
        Command::Generate { force } => {
            let m = pipeline::generate(&cfg, force)?;
            let counts: Vec<String> = m.splits.iter().map(|(k, v)| format!("{} {k}", v.len())).collect();
            println!("corpus written to {} ({})", cfg.paths.corpus_dir().display(), counts.join(", "));
        }
        Command::Train => {
            let models = pipeline::train_models(&cfg, &mut |l| {
                eprintln!(
                    "{} epoch {:>3}  lr {:.0e}  gpm {:.4}  class {:.4}  loss {:.4}",
                    l.modality,
                    l.epoch + 1,
                    l.learning_rate,
                    l.gpm_loss,
                    l.class_loss,
                    l.loss
                );
            })?;
            for m in models {
                let from = m
                    .inflated_from
                    .map(|p| format!(", inflated from {}", p.display()))
                    .unwrap_or_default();
                println!("{} {} sha256 {}{from}", m.modality, m.path.display(), m.sha256);
            }
        }
        Command::Eval => {
            let (ev, files) = pipeline::evaluate_and_emit(&cfg)?;
            print!("{}", summary_text(&ev.report));
            eprintln!("{} report files in {}", files.len(), cfg.paths.report_dir().display());
        }
        Command::Stream { input } => {
            let [m] = cfg.model.modality.modalities()[..] else {
                return Err(Error::Config("stream needs a single modality, not `all`".into()));
            };
            let net = pipeline::load_model(&cfg, m)?;
            let stdout = std::io::stdout();
            let mut sink = stdout.lock();
            if input.as_os_str() == "-" {
                pipeline::stream(&cfg, &net, std::io::stdin().lock(), &mut sink)?;
            } else {
                pipeline::stream_file(&cfg, &net, &input, &mut sink)?;
            }
            sink.flush().map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
