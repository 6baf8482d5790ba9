use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vton::numcore::Tensor;
use vton::pipeline::{
    self, cft, clothing_regions, flow_jitter, garment_targets, gradsuite, stack_flows,
    unstack_flows, Config, SequenceBundle,
};
use vton::{Error, Result};

/// Occlusion-aware video try-on on synthetic or prepared sequence bundles.
#[derive(Parser, Debug)]
#[command(name = "vton", version)]
struct Cli {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the configured synthetic scene as a bundle.
    Synth,
    /// Agnostic composition, TPS fit, occluded-clothes masking and flow fit.
    WarpFit {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Temporal smoothing of a flow sequence.
    Track {
        #[arg(long)]
        bundle: PathBuf,
        /// T×H×W×2 flows; defaults to the bundle's noisy_flow role.
        #[arg(long)]
        flows: Option<PathBuf>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
        /// Use the literal printed smoothing map.
        #[arg(long)]
        printed: bool,
    },
    /// The full pipeline; writes every intermediate.
    Tryon {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Overfit the generator on a tiny scene.
    TrainToy,
    /// Scores a result directory written by `tryon`.
    Metrics {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        result: PathBuf,
    },
    /// Finite-difference checks of every differentiable operation.
    Gradcheck,
}

const GRADCHECK_LIMIT: f64 = 1e-3;

enum Outcome {
    Ok,
    Numeric(String),
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.scene.seed = s;
        cfg.toy.scene.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_all(dir: &Path, items: &[(&str, Tensor)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    for (name, t) in items {
        cft::write(dir.join(format!("{name}.cft")), t)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<Outcome> {
    vton::par::init_threads_from_env();
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth => {
            let b = pipeline::synth_scene(&cfg.scene)?;
            b.save(&cli.out)?;
            println!("wrote {} frames to {}", b.len(), cli.out.display());
        }
        Command::WarpFit { bundle } => {
            let b = SequenceBundle::load(bundle)?;
            let w = pipeline::warp_fit(&b, &cfg)?;
            let stack = |v: Vec<Tensor>| Tensor::stack(&v);
            write_all(
                &cli.out,
                &[
                    (
                        "agnostic",
                        stack(w.agnostic.iter().map(|a| a.agnostic_img.clone()).collect())?,
                    ),
                    (
                        "occlusion",
                        stack(
                            w.agnostic
                                .iter()
                                .map(|a| a.occlusion_mask.clone())
                                .collect(),
                        )?,
                    ),
                    ("targets", stack(w.targets.clone())?),
                    (
                        "tps",
                        stack(w.tps.iter().map(|p| p.offsets.clone()).collect())?,
                    ),
                    ("masked_clothes", stack(w.masked_clothes.clone())?),
                    ("flows", stack_flows(&w.flows)?),
                ],
            )?;
            println!("wrote warp-fit outputs to {}", cli.out.display());
        }
        Command::Track {
            bundle,
            flows,
            mu,
            epsilon,
            window,
            printed,
        } => {
            let b = SequenceBundle::load(bundle)?;
            let mut tc = cfg.track;
            tc.mu = mu.unwrap_or(tc.mu);
            tc.epsilon = epsilon.unwrap_or(tc.epsilon);
            tc.window_n = window.unwrap_or(tc.window_n);
            tc.printed_formula |= printed;
            tc.validate()?;
            let input = match flows {
                Some(p) => unstack_flows(&cft::read(p)?)?,
                None => b
                    .noisy_flows()?
                    .ok_or_else(|| Error::MissingRole("noisy_flow".into()))?,
            };
            let clothes = vec![b.clothes.clone(); b.len()];
            let (tracked, jitter) =
                pipeline::track_flows(&b, &input, &clothes, &cfg.labels()?, &tc)?;
            write_all(&cli.out, &[("tracked", stack_flows(&tracked)?)])?;
            println!("jitter_before = {:.6}", jitter.before);
            println!("jitter_after = {:.6}", jitter.after);
        }
        Command::Tryon { bundle } => {
            let b = SequenceBundle::load(bundle)?;
            let out = pipeline::run_pipeline(&b, &cfg)?;
            out.save(&cli.out)?;
            print!("{}", out.metrics.to_text());
        }
        Command::TrainToy => {
            let r = pipeline::train_toy(&cfg)?;
            println!("initial_loss = {:.6}", r.initial());
            println!("best_loss = {:.6}", r.best());
            println!("final_loss = {:.6}", r.last());
            println!("reduction = {:.4}", r.reduction());
            if !r.last().is_finite() {
                return Ok(Outcome::Numeric("toy loss is not finite".into()));
            }
        }
        Command::Metrics { bundle, result } => {
            let b = SequenceBundle::load(bundle)?;
            let table = cfg.labels()?;
            let output = cft::read(result.join("output.cft"))?;
            let warped = cft::read(result.join("warped.cft"))?;
            let targets = Tensor::stack(&garment_targets(&b, &table)?)?;
            println!(
                "ssim_output = {:.6}",
                vton::objectives::ssim_sequence(&output, &b.frames)?
            );
            println!(
                "ssim_warped = {:.6}",
                vton::objectives::ssim_sequence(&warped, &targets)?
            );
            let optical = b.optical_flows()?;
            let regions = clothing_regions(&b, &table)?;
            for name in ["flows", "tracked"] {
                let p = result.join(format!("{name}.cft"));
                if p.exists() {
                    let f = unstack_flows(&cft::read(&p)?)?;
                    println!(
                        "jitter_{name} = {:.6}",
                        flow_jitter(&b.clothes, &f, &optical, &regions)?
                    );
                }
            }
        }
        Command::Gradcheck => {
            let entries = gradsuite::run_suite(cfg.seed)?;
            let mut worst: Option<(&str, f64)> = None;
            for e in &entries {
                println!(
                    "{:28} max_rel_err = {:.3e}  ({} coords)",
                    e.name, e.max_rel_err, e.checked
                );
                if e.max_rel_err > GRADCHECK_LIMIT && worst.is_none_or(|(_, w)| e.max_rel_err > w) {
                    worst = Some((e.name, e.max_rel_err));
                }
            }
            if let Some((name, err)) = worst {
                return Ok(Outcome::Numeric(format!(
                    "{name}: {err:.3e} exceeds {GRADCHECK_LIMIT:e}"
                )));
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
