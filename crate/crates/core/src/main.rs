use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lamsc::commands::{cmd_eval, cmd_report, cmd_segment, cmd_synth, cmd_train, cmd_transmit, CheckpointPaths};
use lamsc::config::{RunConfig, DATASET_ENV};
use lamsc::training::{Phase, Variant};

#[derive(Parser)]
#[command(name = "lamsc", version, about = "Segmentation-guided semantic image communication simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `dataset_dir`; takes precedence over the environment.
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> lamsc::Result<RunConfig> {
        let mut cfg = RunConfig::read(&self.config)?;
        if let Some(d) = &self.dataset_dir {
            cfg.dataset_dir = d.clone();
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct Checkpoints {
    #[arg(long)]
    asi_checkpoint: Option<PathBuf>,
    #[arg(long)]
    lamsc_checkpoint: Option<PathBuf>,
    #[arg(long)]
    baseline_checkpoint: Option<PathBuf>,
}

impl From<Checkpoints> for CheckpointPaths {
    fn from(c: Checkpoints) -> Self {
        Self { asi: c.asi_checkpoint, lamsc: c.lamsc_checkpoint, baseline: c.baseline_checkpoint }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic annotated dataset in the VOC layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 240)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Segment one image and preview its semantic-aware merge.
    Segment {
        #[command(flatten)]
        common: Common,
        image: PathBuf,
        /// Segment indices to keep (comma separated).
        #[arg(long, value_delimiter = ',')]
        select: Option<Vec<usize>>,
    },
    /// Run one training phase.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        phase: Phase,
        #[arg(long, default_value = "lamsc")]
        variant: Variant,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        snr_db: Option<f64>,
    },
    /// Sweep both variants over SNR and write metrics and plots.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        checkpoints: Checkpoints,
        /// Overrides the configured SNR list (dB, comma separated).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
    },
    /// Send one image end to end and verify its segments on arrival.
    Transmit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        checkpoints: Checkpoints,
        image: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        snr_db: Option<f64>,
        /// Bypass the learned mask and send every feature.
        #[arg(long)]
        all_ones: bool,
    },
    /// Summarize the evaluation directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> lamsc::Result<()> {
    match cli.command {
        Command::Synth { out, count, height, width, seed } => {
            let stems = cmd_synth(&out, count, (height, width), seed)?;
            println!("wrote {} images to {}", stems.len(), out.display());
        }
        Command::Segment { common, image, select } => {
            let cfg = common.load()?;
            let out = cmd_segment(&cfg, &image, select.as_deref())?;
            println!("{} segment masks, preview {}", out.masks.len(), out.preview.display());
        }
        Command::Train { common, phase, variant, epochs, lr, rounds, snr_db } => {
            let mut cfg = common.load()?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
                cfg.asi.epochs = e;
            }
            if let Some(l) = lr {
                cfg.train.lr = l;
                cfg.asi.lr = l;
            }
            if let Some(r) = rounds {
                cfg.train.crossed_rounds = r;
            }
            if let Some(s) = snr_db {
                cfg.train.snr_db_train = s;
            }
            cfg.validate_values()?;
            let out = cmd_train(&cfg, phase, variant)?;
            println!("phases {:?}", out.manifest.phases);
            println!("checkpoint {}", out.checkpoint.display());
            println!("trace {}", out.trace.display());
        }
        Command::Eval { common, checkpoints, snr } => {
            let cfg = common.load()?;
            let snr_list = snr.unwrap_or_else(|| cfg.eval.snr_list.clone());
            let out = cmd_eval(&cfg, &checkpoints.into(), &snr_list)?;
            for r in &out.rows {
                println!(
                    "{:<8} snr {:>6} seed {:>3} psnr {:7.3} ssim {:.4} ratio {:.4}",
                    r.variant.to_string(),
                    r.snr_db,
                    r.seed,
                    r.psnr_db,
                    r.ssim,
                    r.mask_ratio
                );
            }
            println!("metrics {}", out.artifacts.metrics_csv.display());
        }
        Command::Transmit { common, checkpoints, image, snr_db, all_ones } => {
            let mut cfg = common.load()?;
            if let Some(s) = snr_db {
                cfg.channel.snr_db = s;
            }
            let out = cmd_transmit(&cfg, &checkpoints.into(), &image, all_ones)?;
            let s = &out.summary;
            println!(
                "psnr {:.3} dB, ssim {:.4}, interest segments preserved {:.0}% of {}",
                s.psnr_vs_semantic_db,
                s.ssim_vs_semantic,
                100.0 * s.interest_preserved_fraction,
                s.interest_segments
            );
            println!(
                "elements {} / {} / {}",
                out.bit_report.original_elements, out.bit_report.feature_elements, out.bit_report.retained_elements
            );
            println!("recovered {}", out.recovered.display());
        }
        Command::Report { common } => {
            let cfg = common.load()?;
            print!("{}", cmd_report(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.to_string().contains("dataset_dir") {
                eprintln!("hint: the dataset root can also be set with {DATASET_ENV}");
            }
            ExitCode::FAILURE
        }
    }
}
