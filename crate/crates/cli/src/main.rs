//! `voxtrack`: simulate, train, infer, cluster, sync, eval and render.
//!
//! Every stage reads and writes files, so the pipeline can be run and
//! inspected one step at a time.

mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use voxtrack_core::clustering::{cluster_window, Kernel, MeanShiftConfig, WindowLabeling};
use voxtrack_core::encoder::{
    infer_field, read_params, train, write_params, Optimizer, TrainConfig,
};
use voxtrack_core::io;
use voxtrack_core::metrics::{op_score, seg_score, tra_score, AogmWeights};
use voxtrack_core::pipeline::clustering_ranges;
use voxtrack_core::streams::DEFAULT_WINDOW;
use voxtrack_core::sync::{stitch_windows, sync_labeling};
use voxtrack_core::synth::{generate, SceneConfig};

const MANIFEST: &str = "windows.json";

#[derive(Parser, Debug)]
#[command(
    name = "voxtrack",
    version,
    about = "Voxel embedding segmentation and tracking for 3D+time videos"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic video and its ground truth from a JSON scene config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Writes PREFIX.img.vxg and PREFIX.lbl.vxg.
        #[arg(long)]
        out_prefix: String,
    },
    /// Train the stream encoders on an annotated video.
    Train(TrainArgs),
    /// Embed every voxel of a video into a fused field.
    Infer {
        #[arg(long)]
        img: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
    },
    /// Mean-shift clustering of a field, one labeling per overlapping window.
    Cluster {
        #[arg(long)]
        field: PathBuf,
        /// Output directory; receives window_NNN.vxg files and windows.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        bandwidth: f64,
        #[arg(long, value_enum, default_value_t = KernelArg::Flat)]
        kernel: KernelArg,
    },
    /// Synchronize ids along z, then stitch the windows into tracks.
    Sync {
        /// Directory written by `cluster`.
        #[arg(long)]
        windows: PathBuf,
        /// Labeling and track table paths, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1..=2, required = true)]
        out: Vec<PathBuf>,
    },
    /// Score a prediction with SEG, TRA and OP.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a slice or a maximum intensity projection to PNG.
    Render(render::RenderArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Flat,
    Gaussian,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    img: PathBuf,
    #[arg(long)]
    lbl: PathBuf,
    /// Parameter file; the loss history goes next to it as *.loss.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2_000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    shared_weights: bool,
    /// Learning rate for the first half; drops tenfold for the second.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Train(_) => "train",
            Command::Infer { .. } => "infer",
            Command::Cluster { .. } => "cluster",
            Command::Sync { .. } => "sync",
            Command::Eval { .. } => "eval",
            Command::Render(_) => "render",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = cli.command.stage();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {stage}: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out_prefix } => simulate(&config, &out_prefix),
        Command::Train(args) => train_cmd(&args),
        Command::Infer {
            img,
            params,
            out,
            window,
        } => {
            let grid = io::read_volume(&img)?;
            let encoders = read_params(&params)?;
            let field = infer_field(&encoders, &grid, window)?;
            io::write_field(&field, window, &out)?;
            Ok(())
        }
        Command::Cluster {
            field,
            out,
            bandwidth,
            kernel,
        } => {
            let cfg = MeanShiftConfig {
                bandwidth,
                mode_merge_radius: bandwidth / 2.0,
                kernel: match kernel {
                    KernelArg::Flat => Kernel::Flat,
                    KernelArg::Gaussian => Kernel::Gaussian,
                },
                ..MeanShiftConfig::default()
            };
            cluster_cmd(&field, &out, &cfg)
        }
        Command::Sync { windows, out } => match out.as_slice() {
            [pred, tracks] => sync_cmd(&windows, pred, tracks),
            _ => bail!("--out takes a labeling path and a track table path"),
        },
        Command::Eval {
            gt,
            pred,
            tracks,
            out,
        } => eval_cmd(&gt, &pred, &tracks, &out),
        Command::Render(args) => render::run(&args),
    }
}

fn simulate(config: &Path, prefix: &str) -> Result<()> {
    let text =
        fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = SceneConfig::from_json(&text)?;
    let (grid, labeling) = generate(&cfg)?;
    io::write_volume(&grid, Path::new(&format!("{prefix}.img.vxg")))?;
    io::write_labeling(&labeling, Path::new(&format!("{prefix}.lbl.vxg")))?;
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let grid = io::read_volume(&args.img)?;
    let labeling = io::read_labeling(&args.lbl)?;
    let defaults = TrainConfig::default();
    let lr = args.lr.unwrap_or(defaults.lr_initial);
    let cfg = TrainConfig {
        iterations: args.iterations,
        lr_initial: lr,
        lr_after_half: lr / 10.0,
        rng_seed: args.seed,
        shared_weights: args.shared_weights,
        optimizer: match args.optimizer {
            OptimizerArg::Adam => Optimizer::adam(),
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
        ..defaults
    };
    let outcome = train(&grid, &labeling, &cfg)?;
    write_params(&outcome.encoders, &args.out)?;
    let csv = args.out.with_extension("loss.csv");
    fs::write(&csv, outcome.loss_csv()).with_context(|| format!("writing {}", csv.display()))?;
    Ok(())
}

fn cluster_cmd(field_path: &Path, out: &Path, cfg: &MeanShiftConfig) -> Result<()> {
    let (field, window) = io::read_field(field_path)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut entries = Vec::new();
    for (k, frames) in clustering_ranges(field.dims().t, window)?
        .into_iter()
        .enumerate()
    {
        let w = cluster_window(&field, frames, cfg)?;
        let file = format!("window_{k:03}.vxg");
        io::write_labeling(&w.labeling, &out.join(&file))?;
        entries.push(json!({ "file": file, "t_begin": w.t_begin, "t_end": w.t_end() }));
    }
    let manifest = json!({ "frames": field.dims().t, "window": window, "windows": entries });
    let path = out.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_windows(dir: &Path) -> Result<Vec<WindowLabeling>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Some(entries) = manifest["windows"].as_array() else {
        bail!("{} has no `windows` list", path.display());
    };
    entries
        .iter()
        .map(|e| {
            let (Some(file), Some(t_begin)) = (e["file"].as_str(), e["t_begin"].as_u64()) else {
                bail!("malformed window entry {e}");
            };
            Ok(WindowLabeling {
                t_begin: t_begin as usize,
                labeling: io::read_labeling(&dir.join(file))?,
            })
        })
        .collect()
}

fn sync_cmd(dir: &Path, pred_out: &Path, tracks_out: &Path) -> Result<()> {
    let windows: Vec<WindowLabeling> = read_windows(dir)?
        .into_iter()
        .map(|w| WindowLabeling {
            t_begin: w.t_begin,
            labeling: sync_labeling(&w.labeling),
        })
        .collect();
    let (labeling, table) = stitch_windows(&windows)?;
    io::write_labeling(&labeling, pred_out)?;
    io::write_track_table(&table, tracks_out)?;
    Ok(())
}

fn eval_cmd(gt_path: &Path, pred_path: &Path, tracks: &Path, out: &Path) -> Result<()> {
    let gt = io::read_labeling(gt_path)?;
    let pred = io::read_labeling(pred_path)?;
    let table = io::read_track_table(tracks)?;
    let seg = seg_score(&gt, &pred)?;
    let tra = tra_score(&gt, &pred, &table, &AogmWeights::default())?;
    let op = op_score(seg, tra)?;
    let report = json!({ "SEG": seg, "TRA": tra, "OP": op });
    fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    println!("SEG {seg:.4}\nTRA {tra:.4}\nOP  {op:.4}");
    Ok(())
}
