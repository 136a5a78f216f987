use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use nicenet::config::Config;
use nicenet::dataset::{load_subjects, split, write_synthetic};
use nicenet::eval::{
    ablate, evaluate, stepwise_report, write_ablation_csv, write_mid_slice_png, EvalOptions, EvalReport,
};
use nicenet::field_ops::{njd_percent, warp_nearest, warp_trilinear};
use nicenet::model::SIZE_MULTIPLE;
use nicenet::report;
use nicenet::training::{load_model, train_loop, validation_pairs, METRICS_FILE, VALIDATION_FILE};
use nicenet::volumes::{
    crop_field, load_labels, load_volume, pad_replicate, padded_shape, save_field, save_labels, save_volume, FileFormat,
};
use nicenet::{Error, Result};

#[derive(Parser)]
#[command(name = "nicenet", version, about = "Coarse-to-fine deformable 3D registration")]
struct Cli {
    /// JSON configuration file; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration value, e.g. `--set train.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the `data` section.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "nii")]
        format: FileFormat,
    },
    /// Train on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the latest checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Register one moving volume to one fixed volume.
    Register {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        /// Output displacement field.
        #[arg(long)]
        out: PathBuf,
        /// Also write the warped moving volume.
        #[arg(long)]
        warped: Option<PathBuf>,
        /// Label map of the moving volume, warped to `--warped-labels`.
        #[arg(long, requires = "warped_labels")]
        labels: Option<PathBuf>,
        #[arg(long, requires = "labels")]
        warped_labels: Option<PathBuf>,
        /// JSON file with folding, per-step NCC and timing.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Write every step's field and warped image, with mid-slice PNGs.
        #[arg(long)]
        emit_intermediate: Option<PathBuf>,
    },
    /// Evaluate a model on the test part of a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Per-pair CSV; a JSON summary is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate one model per (L, λ) cell.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG plots from training and evaluation outputs.
    Report {
        /// Training output directory.
        #[arg(long)]
        run: Option<PathBuf>,
        /// JSON summary written by `evaluate`.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// CSV written by `ablate`.
        #[arg(long)]
        ablation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    nicenet::volumes::write_atomic(path, text.as_bytes())
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    }
    .with_overrides(&cli.overrides)?;
    config.validate()?;
    match cli.command {
        Command::Synth { out, format } => {
            let m = write_synthetic(&out, &config.data, format)?;
            println!("wrote {} subjects to {}", m.subjects.len(), out.display());
        }
        Command::Train { data, out, resume } => {
            let (train, val, _) = split(load_subjects(&data)?, config.split.train, config.split.val)?;
            create_dir(&out)?;
            write_text(&out.join("config.json"), &config.to_json())?;
            let outcome = train_loop(&config.train, &config.model, &train, &val, Some(&out), resume)?;
            if let Some(p) = outcome.final_checkpoint {
                println!("final checkpoint {}", p.display());
            }
            if let Some(b) = outcome.state.best {
                println!("best validation Dice {:.4} at iteration {}", b.metrics.mean_dsc, b.iteration);
            }
        }
        Command::Register {
            model,
            fixed,
            moving,
            out,
            warped,
            labels,
            warped_labels,
            metrics,
            emit_intermediate,
        } => {
            let model = load_model(&model)?;
            let f = load_volume(&fixed, FileFormat::from_path(&fixed))?;
            let m = load_volume(&moving, FileFormat::from_path(&moving))?;
            if f.shape() != m.shape() {
                return Err(Error::Shape(format!(
                    "fixed {:?} and moving {:?} differ",
                    f.shape(),
                    m.shape()
                )));
            }
            let shape = f.shape();
            let padded = padded_shape(shape, SIZE_MULTIPLE);
            let (fp, mp) = (pad_replicate(&f, padded)?, pad_replicate(&m, padded)?);
            let t0 = Instant::now();
            model.register(&fp, &mp)?;
            let seconds = t0.elapsed().as_secs_f64();
            let report = stepwise_report(&model, &fp, &mp)?;
            let field = crop_field(report.output.final_field(), shape)?;
            save_field(&field, &out, FileFormat::from_path(&out))?;
            let njd = njd_percent(&field)?;
            println!("NJD {njd:.4}%  {seconds:.3} s");
            if let Some(w) = warped {
                save_volume(&warp_trilinear(&m, &field)?, &w, FileFormat::from_path(&w))?;
            }
            if let (Some(l), Some(wl)) = (labels, warped_labels) {
                let lm = load_labels(&l, FileFormat::from_path(&l))?;
                if lm.shape() != shape {
                    return Err(Error::Shape(format!("labels {:?} do not match volume {shape:?}", lm.shape())));
                }
                save_labels(&warp_nearest(&lm, &field)?, &wl, FileFormat::from_path(&wl))?;
            }
            if let Some(p) = metrics {
                let blob = serde_json::json!({
                    "shape": shape,
                    "padded_shape": padded,
                    "njd_percent": njd,
                    "seconds": seconds,
                    "step_ncc": report.ncc,
                    "step_ncc_full": report.ncc_full,
                });
                write_text(&p, &serde_json::to_string_pretty(&blob).expect("metrics serialise"))?;
            }
            if let Some(dir) = emit_intermediate {
                create_dir(&dir)?;
                for (i, (phi, w)) in report.output.phi.iter().zip(&report.warped).enumerate() {
                    let step = i + 1;
                    save_field(phi, dir.join(format!("phi_{step}.nii")), FileFormat::Nifti1)?;
                    save_volume(w, dir.join(format!("warped_{step}.nii")), FileFormat::Nifti1)?;
                    write_mid_slice_png(w, &dir.join(format!("warped_{step}.png")))?;
                    println!(
                        "step {step}: NCC {:.4} on its own grid, {:.4} at full resolution",
                        report.ncc[i], report.ncc_full[i]
                    );
                }
                write_mid_slice_png(&f, &dir.join("fixed.png"))?;
            }
        }
        Command::Evaluate { model, data, out } => {
            let model = load_model(&model)?;
            let (_, _, test) = split(load_subjects(&data)?, config.split.train, config.split.val)?;
            let pairs = validation_pairs(test.len(), config.eval.pairs, config.train.seed)?;
            let opts = EvalOptions {
                dice: config.eval.dice,
                network_only: config.eval.network_only,
            };
            let r = evaluate(&model, &test, &pairs, opts)?;
            r.write_csv(&out)?;
            let json = serde_json::to_string_pretty(&r).expect("report serialises");
            write_text(&out.with_extension("json"), &json)?;
            println!(
                "DSC {:.4} ± {:.4} (before {:.4})  NJD {:.4}%  {:.3} s",
                r.dsc.mean, r.dsc.std, r.baseline_dsc.mean, r.njd.mean, r.seconds.mean
            );
        }
        Command::Ablate { data, out } => {
            let (train, _, test) = split(load_subjects(&data)?, config.split.train, config.split.val)?;
            let pairs = validation_pairs(test.len(), config.eval.pairs, config.train.seed)?;
            let rows = ablate(
                &config.model,
                &config.train,
                &config.ablation.levels,
                &config.ablation.lambdas,
                &train,
                &test,
                &pairs,
            );
            write_ablation_csv(&rows, &out)?;
            for r in &rows {
                match &r.error {
                    Some(e) => println!("L={} lambda={}: failed: {e}", r.levels, r.lambda),
                    None => println!("L={} lambda={}: DSC {:.4} NJD {:.4}%", r.levels, r.lambda, r.dsc, r.njd),
                }
            }
        }
        Command::Report {
            run,
            eval,
            ablation,
            out,
        } => {
            create_dir(&out)?;
            if let Some(run) = run {
                report::plot_loss(&run.join(METRICS_FILE), &out.join("loss.svg"))?;
                let val = run.join(VALIDATION_FILE);
                if val.exists() {
                    report::plot_validation(&val, &out.join("validation.svg"))?;
                }
            }
            if let Some(p) = eval {
                let text = fs::read_to_string(&p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?;
                let r: EvalReport = serde_json::from_str(&text).map_err(|e| Error::Format {
                    path: p.clone(),
                    reason: e.to_string(),
                })?;
                report::plot_step_ncc(&r, &out.join("step_ncc.svg"))?;
            }
            if let Some(p) = ablation {
                report::plot_ablation(&report::read_ablation_csv(&p)?, &out.join("ablation.svg"))?;
            }
            println!("plots written to {}", out.display());
        }
    }
    Ok(())
}
