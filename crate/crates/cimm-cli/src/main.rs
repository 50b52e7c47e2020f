//! Command-line driver: `train`, `denoise`, `eval` and `inspect`
//! subcommands over the cimm library.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 partial evaluation
//! failure (some files skipped), 3 I/O failure while writing results. The
//! `CIMM_THREADS` environment variable caps the worker threads used for
//! per-image evaluation parallelism.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cimm::checkpoint::{load_network, save_network};
use cimm::data::{from_unit, load_image, save_image, to_unit, Dataset, Split};
use cimm::eval::{denoise_image, evaluate_dataset, self_ensemble, EvalOptions, EvalReport};
use cimm::net::CimmNetwork;
use cimm::train::{train_loop, write_history_csv, NoiseSpec, StepRecord, TrainCallback};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "cimm",
    version,
    about = "Image denoiser built from chained identity-mapping modules of dilated pre-activation convolutions",
    after_help = "Set CIMM_THREADS to cap the worker threads used for per-image evaluation."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a directory of images
    Train(TrainArgs),
    /// Denoise one or more images with a trained model
    Denoise(DenoiseArgs),
    /// Corrupt a dataset with Gaussian noise, denoise it and report PSNR/SSIM
    Eval(EvalArgs),
    /// Print the structure of a configuration or checkpoint
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of training images (PGM for grayscale, PPM for color)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Configuration file with `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Random seed for initialization, cropping and noise [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Noise regime: `specific:<sigma>`, `agnostic` (range [1,50]) or
    /// `agnostic:<lo>,<hi>` [default: agnostic]
    #[arg(long)]
    noise: Option<String>,
    /// Output directory for checkpoints and the training history
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Trained model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Images to denoise
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output path (single input) or directory (multiple inputs);
    /// defaults to `<input>.denoised.pgm` next to each input
    #[arg(long)]
    out: Option<PathBuf>,
    /// Average the eight dihedral self-ensemble branches
    #[arg(long)]
    ensemble: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of clean evaluation images
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated noise levels on the 0-255 scale
    #[arg(long, default_value = "15,25,50")]
    sigma: String,
    /// Seed for the per-image noise streams
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Average the eight dihedral self-ensemble branches
    #[arg(long)]
    ensemble: bool,
    /// Report PSNR on floating-point outputs instead of 8-bit quantized ones
    #[arg(long)]
    no_quantize: bool,
    /// Write the CSV report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Configuration file to inspect
    #[arg(long, conflicts_with = "checkpoint")]
    config: Option<PathBuf>,
    /// Checkpoint to inspect
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn io_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 3,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_thread_pool();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Denoise(args) => cmd_denoise(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn init_thread_pool() {
    if let Some(n) = std::env::var("CIMM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Assembles the effective configuration: defaults, then the config file,
/// then `--set` overrides, then dedicated flags.
fn build_config(
    file: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    noise: Option<&str>,
) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        config
            .apply_file(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    for assignment in overrides {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{assignment}'")))?;
        config.set(key.trim(), value.trim()).map_err(usage)?;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(noise) = noise {
        config.noise = noise.parse::<NoiseSpec>().map_err(|e| usage(e.to_string()))?;
    }
    Ok(config)
}

/// Per-epoch progress printing and periodic checkpoints.
struct EpochCallback {
    out_dir: PathBuf,
    checkpoint_every: usize,
    epoch_losses: Vec<f64>,
}

impl TrainCallback for EpochCallback {
    fn on_step(&mut self, record: &StepRecord) -> cimm::Result<()> {
        self.epoch_losses.push(record.loss);
        Ok(())
    }

    fn on_epoch_end(&mut self, epoch: usize, net: &CimmNetwork<f32>) -> cimm::Result<()> {
        let mean = self.epoch_losses.iter().sum::<f64>() / self.epoch_losses.len().max(1) as f64;
        eprintln!("epoch {:>3}: mean loss {mean:.5}", epoch + 1);
        self.epoch_losses.clear();
        if self.checkpoint_every > 0 && (epoch + 1).is_multiple_of(self.checkpoint_every) {
            let path = self
                .out_dir
                .join(format!("checkpoint_epoch_{:04}.ckpt", epoch + 1));
            save_network(&path, net)?;
        }
        Ok(())
    }
}

fn cmd_train(args: TrainArgs) -> Result<u8, Failure> {
    let mut config = build_config(
        args.config.as_deref(),
        &args.set,
        args.seed,
        args.noise.as_deref(),
    )?;
    if let Some(data) = args.data {
        config.train_dir = Some(data);
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    let train_dir = config
        .train_dir
        .clone()
        .ok_or_else(|| usage("no training directory; pass --data <dir> or set train_dir"))?;
    if !train_dir.is_dir() {
        return Err(usage(format!(
            "training directory {} does not exist or is not a directory",
            train_dir.display()
        )));
    }
    let net_config = config.net_config();
    net_config.validate().map_err(|e| usage(e.to_string()))?;
    config
        .train_config()
        .validate()
        .map_err(|e| usage(e.to_string()))?;

    let dataset = Dataset::from_dir(&train_dir, Split::Train).map_err(|e| usage(e.to_string()))?;
    let images = dataset.load_all().map_err(|e| usage(e.to_string()))?;
    eprintln!(
        "training on {} images from {} ({} parameters)",
        images.len(),
        train_dir.display(),
        net_config.param_count()
    );

    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| io_failure(format!("cannot create {}: {e}", config.out_dir.display())))?;
    std::fs::write(config.out_dir.join("config.ini"), config.to_ini())
        .map_err(|e| io_failure(format!("cannot write effective config: {e}")))?;

    let mut net = CimmNetwork::init(&net_config, config.seed).map_err(|e| usage(e.to_string()))?;
    let mut callback = EpochCallback {
        out_dir: config.out_dir.clone(),
        checkpoint_every: config.checkpoint_every,
        epoch_losses: Vec::new(),
    };
    let history = train_loop(
        &mut net,
        &images,
        &config.train_config(),
        &config.noise,
        &mut callback,
    )
    .map_err(|e| match e {
        cimm::Error::Io(io) => io_failure(format!("checkpoint write failed: {io}")),
        other => usage(other.to_string()),
    })?;

    let model_path = config.out_dir.join("model.ckpt");
    save_network(&model_path, &net).map_err(|e| io_failure(e.to_string()))?;
    write_history_csv(&config.out_dir.join("history.csv"), &history)
        .map_err(|e| io_failure(e.to_string()))?;
    println!("wrote {}", model_path.display());
    Ok(0)
}

fn default_output_path(input: &Path, channels: usize) -> PathBuf {
    let ext = if channels == 1 {
        "denoised.pgm"
    } else {
        "denoised.ppm"
    };
    input.with_extension(ext)
}

fn cmd_denoise(args: DenoiseArgs) -> Result<u8, Failure> {
    let net = load_network(&args.checkpoint).map_err(|e| usage(e.to_string()))?;
    let channels = net.config().in_channels;
    if args.inputs.len() > 1 {
        if let Some(out) = &args.out {
            std::fs::create_dir_all(out)
                .map_err(|e| io_failure(format!("cannot create {}: {e}", out.display())))?;
        }
    }
    for input in &args.inputs {
        let image = load_image(input).map_err(|e| usage(e.to_string()))?;
        if image.channels() != channels {
            return Err(usage(format!(
                "channel mismatch: checkpoint expects {channels} channel(s), {} has {}",
                input.display(),
                image.channels()
            )));
        }
        let noisy = to_unit(&image);
        let denoised = if args.ensemble {
            self_ensemble(&net, &noisy)
        } else {
            denoise_image(&net, &noisy)
        }
        .map_err(|e| usage(e.to_string()))?;
        let output = from_unit(&denoised).map_err(|e| usage(e.to_string()))?;
        let out_path = match (&args.out, args.inputs.len()) {
            (Some(path), 1) => path.clone(),
            (Some(dir), _) => dir.join(
                default_output_path(input, channels)
                    .file_name()
                    .expect("input paths name files"),
            ),
            (None, _) => default_output_path(input, channels),
        };
        save_image(&out_path, &output).map_err(|e| io_failure(e.to_string()))?;
        println!("wrote {}", out_path.display());
    }
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> Result<u8, Failure> {
    let net = load_network(&args.checkpoint).map_err(|e| usage(e.to_string()))?;
    let dataset = Dataset::from_dir(&args.data, Split::Eval).map_err(|e| usage(e.to_string()))?;
    let sigmas: Vec<f64> = args
        .sigma
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("bad --sigma list '{}'", args.sigma)))?;
    if sigmas.is_empty() {
        return Err(usage("--sigma list is empty"));
    }
    let options = EvalOptions {
        ensemble: args.ensemble,
        quantize: !args.no_quantize,
    };

    let mut csv = String::new();
    let mut reports: Vec<(f64, EvalReport)> = Vec::new();
    for (i, &sigma) in sigmas.iter().enumerate() {
        let report = evaluate_dataset(
            &net,
            &dataset,
            &NoiseSpec::Specific(sigma),
            args.seed,
            &options,
        )
        .map_err(|e| usage(e.to_string()))?;
        let section = report.to_csv(true);
        if i == 0 {
            csv.push_str(&section);
        } else {
            // one header for the whole file; later sections contribute rows
            for line in section.lines().skip(1) {
                csv.push_str(line);
                csv.push('\n');
            }
        }
        reports.push((sigma, report));
    }

    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv)
                .map_err(|e| io_failure(format!("cannot write report: {e}")))?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }

    let mut partial = false;
    for (sigma, report) in &reports {
        if let Some(avg) = report.averages() {
            eprintln!(
                "sigma {sigma}: {} images, noisy {:.2} dB -> denoised {:.2} dB, ssim {:.4}",
                report.records.len(),
                avg.psnr_noisy,
                avg.psnr_denoised,
                avg.ssim
            );
        }
        for (path, reason) in &report.skipped {
            partial = true;
            eprintln!("skipped {}: {reason}", path.display());
        }
    }
    Ok(if partial { 2 } else { 0 })
}

fn cmd_inspect(args: InspectArgs) -> Result<u8, Failure> {
    let net_config = if let Some(ckpt) = &args.checkpoint {
        if !args.set.is_empty() {
            return Err(usage("--set cannot modify a checkpoint; use --config"));
        }
        load_network(ckpt)
            .map_err(|e| usage(e.to_string()))?
            .config()
            .clone()
    } else {
        build_config(args.config.as_deref(), &args.set, None, None)?.net_config()
    };
    net_config.validate().map_err(|e| usage(e.to_string()))?;
    let dilations: Vec<String> = net_config
        .dilation_schedule
        .iter()
        .map(|d| d.to_string())
        .collect();
    println!("input channels:          {}", net_config.in_channels);
    println!("modules (M):             {}", net_config.num_modules);
    println!("pairs per module (L):    {}", net_config.pairs_per_module);
    println!("channels (C):            {}", net_config.channels);
    println!("kernel:                  {}", net_config.kernel);
    println!("dilations:               {}", dilations.join(","));
    println!("conv layers:             {}", net_config.conv_layer_count());
    println!("parameters:              {}", net_config.param_count());
    println!("module receptive field:  {}", net_config.module_receptive_field());
    println!("network receptive field: {}", net_config.network_receptive_field());
    Ok(0)
}
