use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use speckle_core::interp::{upsample_to, InterpMethod};
use speckle_core::{io, metrics, sampling, PitchIndex};
use speckle_nn::{Checkpoint, LossName};
use speckle_pipeline::dataset::{generate_dataset, normalize, Dataset};
use speckle_pipeline::evaluate::{evaluate_workflow, Method};
use speckle_pipeline::report::{from_json, render_table, write_report};
use speckle_pipeline::training::{train_internet, train_specklenet, InterNetConfig};
use speckle_pipeline::workflow::{internet_stem, ExperimentConfig};
use speckle_pipeline::{PipelineError, Result};

#[derive(Parser)]
#[command(name = "sil", version, about = "Sub-Nyquist speckle interpolation experiments")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for generation and evaluation (training is single-threaded).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Dataset root.
    #[arg(long, global = true, env = "SIL_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a speckle dataset (objects, d0 and every binned rung).
    Simulate {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Print the sampling table and per-rung mutual correlation of a dataset.
    Analyze {
        /// Sampling factor to tabulate instead of the dataset's measured one.
        #[arg(long)]
        f: Option<f64>,
        #[arg(long, default_value_t = 2.5)]
        pitch_um: f64,
    },
    /// Bin one SPK1 file.
    Bin {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        factor: usize,
    },
    /// Up-sample one binned SPK1 file back to a finer rung.
    Interp {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value = "bicubic")]
        method: InterpMethod,
        /// Target rung index.
        #[arg(long, default_value_t = 0)]
        to: u8,
    },
    TrainSpecklenet {
        #[arg(long)]
        epochs: Option<usize>,
    },
    TrainInternet {
        #[arg(long)]
        pitch: Option<u8>,
        #[arg(long)]
        variant: Option<u8>,
        #[arg(long, value_parser = parse_loss)]
        loss: Option<LossName>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the interpolation / reconstruction workflow on the test split.
    Eval {
        #[arg(long)]
        specklenet: Option<PathBuf>,
        #[arg(long)]
        internet: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
    },
    /// Render a saved report.json as a table.
    Report { input: PathBuf },
}

fn parse_loss(s: &str) -> std::result::Result<LossName, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown loss {s:?}"))
}

fn data_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.data_dir
        .clone()
        .or_else(|| cfg.dataset.clone())
        .unwrap_or_else(|| cli.out_dir.join("dataset"))
}

fn load_ck(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    let dir = data_dir(&cli, &cfg);
    match cli.command {
        Command::Simulate { count, size } => {
            if let Some(c) = count {
                cfg.generation.count = c;
            }
            if let Some(s) = size {
                cfg.generation.size = s;
            }
            let m = generate_dataset(&cfg.generation, &dir)?;
            println!(
                "{} samples ({} train / {} test) in {}; pad factor {}, measured F {:.2}",
                m.count,
                m.train_ids.len(),
                m.test_ids.len(),
                dir.display(),
                m.pad_factor,
                m.measured_f
            );
        }
        Command::Analyze { f, pitch_um } => {
            let ds = Dataset::open(&dir)?;
            let m = ds.manifest();
            let factors: Vec<usize> = m.ladder.iter().filter_map(|p| p.bin_factor()).collect();
            print!("{}", sampling::sampling_table(f.unwrap_or(m.measured_f), pitch_um, &factors)?.to_table());
            for &pitch in &m.ladder {
                let pats: Vec<_> = ds.speckles(&m.test_ids, pitch)?.iter().map(normalize).collect();
                println!("C_m {pitch}: {:.4}", metrics::mutual_correlation(&pats, cfg.eval.cm_max_pairs)?);
            }
        }
        Command::Bin { input, output, factor } => {
            let p = io::read_speckle(&input)?;
            io::write_speckle(&output, &sampling::bin(&p, factor)?)?;
        }
        Command::Interp { input, output, method, to } => {
            let p = io::read_speckle(&input)?;
            io::write_speckle(&output, &upsample_to(&p, PitchIndex::Rung(to), method)?)?;
        }
        Command::TrainSpecklenet { epochs } => {
            if let Some(e) = epochs {
                cfg.specklenet.training.epochs = e;
            }
            let ds = Dataset::open(&dir)?;
            let t = train_specklenet(&ds, &cfg.specklenet)?;
            t.save(&cli.out_dir, "specklenet")?;
            println!("final loss {:?}; saved {}", t.checkpoint.meta.final_loss, cli.out_dir.join("specklenet.sil").display());
        }
        Command::TrainInternet { pitch, variant, loss, epochs } => {
            let selected = |c: &&InterNetConfig| {
                pitch.is_none_or(|p| c.pitch == p)
                    && variant.is_none_or(|v| c.variant == v)
                    && loss.is_none_or(|l| c.training.loss == l)
            };
            let mut ic = cfg
                .internets
                .iter()
                .find(selected)
                .or(cfg.internets.first())
                .cloned()
                .unwrap_or_default();
            if let Some(p) = pitch {
                ic.pitch = p;
            }
            if let Some(v) = variant {
                ic.variant = v;
            }
            if let Some(l) = loss {
                ic.training.loss = l;
            }
            if let Some(e) = epochs {
                ic.training.epochs = e;
            }
            if let Some(flag) = ic.flag() {
                log::warn!("{flag}");
            }
            let ds = Dataset::open(&dir)?;
            let t = train_internet(&ds, &ic)?;
            let stem = internet_stem(&ic);
            t.save(&cli.out_dir, &stem)?;
            println!("final loss {:?}; saved {}", t.checkpoint.meta.final_loss, cli.out_dir.join(format!("{stem}.sil")).display());
        }
        Command::Eval { specklenet, internet, methods } => {
            if !methods.is_empty() {
                cfg.eval.methods = methods;
            }
            let ds = Dataset::open(&dir)?;
            let sn = specklenet.or(cfg.specklenet_checkpoint.clone()).map(|p| load_ck(&p)).transpose()?;
            let paths = if internet.is_empty() { cfg.internet_checkpoints.clone() } else { internet };
            let nets = paths.iter().map(|p| load_ck(p)).collect::<Result<Vec<_>>>()?;
            let eval = evaluate_workflow(&ds, &nets, sn.as_ref(), &cfg.eval)?;
            let out = cli.out_dir.join("report");
            write_report(&out, &eval.reports, &eval.examples)?;
            print!("{}", render_table(&eval.reports)?);
        }
        Command::Report { input } => {
            let text = std::fs::read_to_string(&input).map_err(|e| PipelineError::Data(format!("{}: {e}", input.display())))?;
            print!("{}", render_table(&from_json(&text)?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
