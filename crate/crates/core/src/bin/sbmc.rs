use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sbmc::config::PipelineConfig;
use sbmc::error::{Error, Result};
use sbmc::eval::{format_detections, map_at, parse_detections};
use sbmc::io::{load_scene, load_weights, read_to_string, save_scene, save_scene_binary, save_weights, write_string};
use sbmc::pipeline::{ablate, ablation_table, run_pipeline, WeightBundle};
use sbmc::rays::generate_rays_with;
use sbmc::synth::{gen_scene_with, SceneSpec};

#[derive(Parser)]
#[command(name = "sbmc", version, about = "Point-cloud 3D detection: scenes, inference, ablation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scene file (text point list or binary scene).
    scene: PathBuf,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for weight initialization (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Binary weight file; weights are initialized from the seed otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, overrides_with = "no_ppc")]
    ppc: bool,
    #[arg(long)]
    no_ppc: bool,
    #[arg(long, overrides_with = "no_ooc")]
    ooc: bool,
    #[arg(long)]
    no_ooc: bool,
    #[arg(long, overrides_with = "no_gsc")]
    gsc: bool,
    #[arg(long)]
    no_gsc: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        objects: usize,
        #[arg(long, default_value_t = 6.0)]
        extent: f64,
        #[arg(long, default_value_t = 2048)]
        points: usize,
        /// Write the binary format instead of text plus a `.boxes` sidecar.
        #[arg(long)]
        binary: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the detector and write one detection per line.
    Run {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the initialized or loaded weights.
        #[arg(long)]
        save_weights: Option<PathBuf>,
        /// Write an mAP table against the scene's boxes.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare the four context-module configurations on one scene.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Zero every attention weight first.
        #[arg(long)]
        zero_attention: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a detection file against ground-truth boxes.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        /// Scene file whose boxes are the ground truth.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = sbmc::eval::DEFAULT_IOU_THRESHOLD)]
        iou: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the ray fan for a polar ring count.
    Rays {
        #[arg(long, default_value_t = 5)]
        polar: usize,
        #[arg(long, default_value_t = sbmc::rays::DEFAULT_RING_MULTIPLIER)]
        multiplier: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in self-checks.
    Check,
}

fn load_config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    for (on, off, slot) in [
        (args.ppc, args.no_ppc, &mut cfg.ppc),
        (args.ooc, args.no_ooc, &mut cfg.ooc),
        (args.gsc, args.no_gsc, &mut cfg.gsc),
    ] {
        if on {
            *slot = true;
        }
        if off {
            *slot = false;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_bundle(args: &RunArgs, cfg: &PipelineConfig, channels: usize) -> Result<WeightBundle> {
    match &args.weights {
        Some(p) => WeightBundle::from_entries(&load_weights(p)?, cfg, channels),
        None => WeightBundle::init(cfg, channels, cfg.seed),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_string(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Gen {
            seed,
            objects,
            extent,
            points,
            binary,
            out,
        } => {
            let spec = SceneSpec {
                n_points: points,
                n_objects: objects,
                extent,
                ..SceneSpec::default()
            };
            let s = gen_scene_with(seed, &spec)?;
            if binary {
                save_scene_binary(&out, &s.cloud, &s.boxes)?;
            } else {
                save_scene(&out, &s.cloud, &s.boxes)?;
            }
            eprintln!("wrote {} points and {} boxes to {}", s.cloud.len(), s.boxes.len(), out.display());
        }
        Command::Run {
            run,
            out,
            save_weights: wout,
            report,
        } => {
            let cfg = load_config(&run)?;
            let (cloud, boxes) = load_scene(&run.scene)?;
            let w = load_bundle(&run, &cfg, cloud.channels())?;
            if let Some(p) = &wout {
                save_weights(p, &w.to_entries())?;
            }
            let (dets, diag) = run_pipeline(&cloud, &boxes, &cfg, &w)?;
            write_string(&out, &format_detections(&dets))?;
            eprint!("{}", diag.summary());
            if let Some(p) = &report {
                sbmc::eval::report(&map_at(&dets, &boxes, cfg.iou_threshold), p)?;
            }
        }
        Command::Ablate {
            run,
            zero_attention,
            out,
        } => {
            let cfg = load_config(&run)?;
            let (cloud, boxes) = load_scene(&run.scene)?;
            let mut w = load_bundle(&run, &cfg, cloud.channels())?;
            if zero_attention {
                w.zero_attention();
            }
            let rows = ablate(&cloud, &boxes, &cfg, &w)?;
            emit(out.as_deref(), &ablation_table(&rows))?;
        }
        Command::Eval {
            detections,
            scene,
            iou,
            out,
        } => {
            if !(iou > 0.0 && iou <= 1.0) {
                return Err(Error::InvalidArgument(format!("IoU threshold {iou} outside (0, 1]")));
            }
            let dets = parse_detections(&detections, &read_to_string(&detections)?)?;
            let (_, boxes) = load_scene(&scene)?;
            emit(out.as_deref(), &map_at(&dets, &boxes, iou).to_table())?;
        }
        Command::Rays { polar, multiplier, out } => {
            emit(out.as_deref(), &generate_rays_with(polar, multiplier)?.to_table())?;
        }
        Command::Check => {
            let results = sbmc::check::run_checks();
            for r in &results {
                println!("{} {:<24} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
