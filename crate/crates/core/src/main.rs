//! `ushield` — train, unlearn, defend, attack, and evaluate in one place.
//!
//! Subcommands compose through conventional file names inside `--out`:
//! `train` writes `original.ckpt`, `unlearn` writes `unlearned.ckpt`,
//! `defend` writes `defended.ckpt`, `attack` writes `recon.pgm`/`recon.f64`,
//! `eval` writes `eval.csv`, and `pipeline` runs the whole sweep into
//! `results.csv` plus per-trial images.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ushield::attack;
use ushield::defense;
use ushield::error::Result;
use ushield::harness::checkpoint::{read_checkpoint, write_checkpoint};
use ushield::harness::config::parse_defense_method;
use ushield::harness::{self, image, ExperimentConfig};
use ushield::metrics;
use ushield::model::{self, ParamVector};
use ushield::unlearn;
use ushield::vecmath;

#[derive(Parser)]
#[command(
    name = "ushield",
    about = "Unlearning inversion lab: train, unlearn, defend, attack, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (flat dotted-key format); desk defaults if omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the base trial seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoints, images, and CSVs
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Trial index for the single-shot subcommands
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write class previews
    GenData(CommonArgs),
    /// Train the original model, write original.ckpt
    Train(CommonArgs),
    /// Unlearn the trial's forget sample, write unlearned.ckpt
    Unlearn(CommonArgs),
    /// Apply a defense to the unlearned model, write defended.ckpt
    Defend {
        #[command(flatten)]
        common: CommonArgs,
        /// Defense method: unlearnshield|noise|prune|none
        #[arg(long)]
        method: Option<String>,
    },
    /// Run the inversion attack on (original, defended), write recon images
    Attack(CommonArgs),
    /// Compute the metrics row for existing artifacts, write eval.csv
    Eval(CommonArgs),
    /// Full sweep: every configured method x trial, CSV + summary + images
    Pipeline(CommonArgs),
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.base_seed = seed;
    }
    Ok(cfg)
}

fn load_model(path: &Path, cfg: &ExperimentConfig) -> Result<ParamVector> {
    read_checkpoint(path)?.into_param_vector(&cfg.arch)
}

fn forget_sample(
    cfg: &ExperimentConfig,
    dataset: &harness::Dataset,
    trial: usize,
) -> (usize, ushield::model::Sample) {
    let idx = harness::forget_index(cfg, trial, dataset.train.len());
    (idx, dataset.train[idx].clone())
}

fn cmd_gen_data(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    std::fs::create_dir_all(&common.out)?;
    let dataset = harness::gen_dataset(&cfg.dataset)?;
    let (h, w, c) = cfg.arch.input_dims;
    if c == 1 || c == 3 {
        for class in 0..cfg.dataset.classes {
            let sample = &dataset.train[class]; // round-robin: sample k has label k
            let path = common.out.join(format!("class_{class}.pgm"));
            image::write_image_pnm(&path, &sample.pixels, h, w, c)?;
        }
    }
    println!(
        "dataset: {} train / {} test, {}x{}x{} pixels, {} classes, noise {}",
        dataset.train.len(),
        dataset.test.len(),
        h,
        w,
        c,
        cfg.dataset.classes,
        cfg.dataset.noise_std
    );
    Ok(())
}

fn cmd_train(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    std::fs::create_dir_all(&common.out)?;
    let dataset = harness::gen_dataset(&cfg.dataset)?;
    let theta_o = harness::train_original(&cfg, &dataset)?;
    let path = common.out.join("original.ckpt");
    write_checkpoint(&path, &theta_o)?;
    println!(
        "trained: train acc {:.4}, test acc {:.4} -> {}",
        model::accuracy(&theta_o, &dataset.train)?,
        model::accuracy(&theta_o, &dataset.test)?,
        path.display()
    );
    Ok(())
}

fn cmd_unlearn(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let dataset = harness::gen_dataset(&cfg.dataset)?;
    let theta_o = load_model(&common.out.join("original.ckpt"), &cfg)?;
    let (idx, forget) = forget_sample(&cfg, &dataset, common.trial);
    let theta_u = unlearn::unlearn(&theta_o, &forget, &cfg.unlearn)?;
    let path = common.out.join("unlearned.ckpt");
    write_checkpoint(&path, &theta_u)?;
    let delta = unlearn::diffparm(&theta_u, &theta_o)?;
    println!(
        "unlearned sample {idx} (trial {}): |diff| = {:.3e} -> {}",
        common.trial,
        vecmath::l2_norm(&delta),
        path.display()
    );
    Ok(())
}

fn cmd_defend(common: &CommonArgs, method: &Option<String>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(m) = method {
        cfg.defense.method = parse_defense_method(m)?;
    }
    let dataset = harness::gen_dataset(&cfg.dataset)?;
    let theta_o = load_model(&common.out.join("original.ckpt"), &cfg)?;
    let theta_u = load_model(&common.out.join("unlearned.ckpt"), &cfg)?;
    let (_, forget) = forget_sample(&cfg, &dataset, common.trial);

    let mut defense_cfg = cfg.defense.clone();
    defense_cfg.seed = cfg.defense.seed.wrapping_add(common.trial as u64);
    let start = std::time::Instant::now();
    let (theta_p, _) = defense::apply_defense(&theta_o, &theta_u, &forget, &defense_cfg)?;
    let elapsed = start.elapsed().as_secs_f64();

    let path = common.out.join("defended.ckpt");
    write_checkpoint(&path, &theta_p)?;
    let delta = unlearn::diffparm(&theta_u, &theta_o)?;
    let delta_star = unlearn::diffparm(&theta_p, &theta_o)?;
    let cos = if vecmath::l2_norm(&delta_star) == 0.0 {
        f64::NAN
    } else {
        metrics::cos_sim(&delta, &delta_star)?
    };
    println!(
        "defended with {}: cos(diff, diff*) = {:.4}, outdiff = {:.6}, {:.4}s -> {}",
        defense_cfg.method,
        cos,
        metrics::outdiff(&theta_u, &theta_p, &forget, defense_cfg.output_mode)?,
        elapsed,
        path.display()
    );
    Ok(())
}

fn cmd_attack(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let theta_o = load_model(&common.out.join("original.ckpt"), &cfg)?;
    let observed_path = if common.out.join("defended.ckpt").exists() {
        common.out.join("defended.ckpt")
    } else {
        common.out.join("unlearned.ckpt")
    };
    let theta_obs = load_model(&observed_path, &cfg)?;

    let mut attack_cfg = cfg.attack.clone();
    attack_cfg.seed = cfg.attack.seed.wrapping_add(common.trial as u64);
    let mut defense_cfg = cfg.defense.clone();
    defense_cfg.seed = cfg.defense.seed.wrapping_add(common.trial as u64);
    let recon = if attack_cfg.adaptive {
        attack::adaptive_uia(&theta_o, &theta_obs, &cfg.unlearn, &defense_cfg, &attack_cfg)?
    } else {
        attack::run_uia(&theta_o, &theta_obs, &cfg.unlearn, &attack_cfg)?
    };

    let (h, w, c) = cfg.arch.input_dims;
    if c == 1 || c == 3 {
        image::write_image_pnm(&common.out.join("recon.pgm"), &recon.pixels, h, w, c)?;
    }
    image::write_image_raw(&common.out.join("recon.f64"), &recon.pixels)?;
    println!(
        "attacked {}: final loss {:.6}, label guess {} -> {}",
        observed_path.display(),
        recon.final_loss,
        recon.label_guess,
        common.out.join("recon.pgm").display()
    );
    Ok(())
}

fn cmd_eval(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let dataset = harness::gen_dataset(&cfg.dataset)?;
    let theta_o = load_model(&common.out.join("original.ckpt"), &cfg)?;
    let theta_u = load_model(&common.out.join("unlearned.ckpt"), &cfg)?;
    let defended_path = common.out.join("defended.ckpt");
    let theta_p = if defended_path.exists() {
        load_model(&defended_path, &cfg)?
    } else {
        theta_u.clone()
    };
    let recon_pixels = image::read_image_raw(&common.out.join("recon.f64"))?;
    let (idx, forget) = forget_sample(&cfg, &dataset, common.trial);

    let (h, w, c) = cfg.arch.input_dims;
    let delta = unlearn::diffparm(&theta_u, &theta_o)?;
    let delta_star = unlearn::diffparm(&theta_p, &theta_o)?;

    // best attack loss over candidate labels for the stored reconstruction
    let mut attack_final_loss = f64::INFINITY;
    let recon_sample = |label: usize| ushield::model::Sample {
        pixels: recon_pixels.clone(),
        label,
    };
    for label in 0..cfg.dataset.classes {
        let sim = attack::simulate_unlearning(
            &theta_o,
            &recon_sample(label),
            cfg.unlearn.eta,
            cfg.unlearn.steps,
        )?;
        if let Ok(loss) = attack::attack_loss(&delta_star, &sim) {
            attack_final_loss = attack_final_loss.min(loss);
        }
    }

    let record = metrics::MetricsRecord {
        ssim: metrics::ssim(&recon_pixels, &forget.pixels, h, w, c)?,
        psnr: metrics::psnr(&recon_pixels, &forget.pixels)?,
        mse: metrics::mse(&recon_pixels, &forget.pixels)?,
        acc_test: model::accuracy(&theta_p, &dataset.test)?,
        outdiff: metrics::outdiff(&theta_u, &theta_p, &forget, cfg.defense.output_mode)?,
        cos_delta: metrics::cos_sim(&delta, &delta_star)?,
        mia_auc: metrics::mia_auc(&theta_p, &[forget.clone()], &dataset.test)?,
        attack_final_loss,
        wall_time_s: 0.0,
    };
    let row = harness::PipelineRow {
        run_id: cfg.run_id.clone(),
        trial: common.trial,
        seed: cfg.base_seed.wrapping_add(common.trial as u64),
        defense: cfg.defense.method,
        record,
    };
    harness::write_results_csv(&common.out.join("eval.csv"), &[row.clone()])?;
    println!("{}", harness::CSV_HEADER);
    println!("{}", row.to_csv_line());
    let _ = idx;
    Ok(())
}

fn cmd_pipeline(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let out = harness::run_pipeline(&cfg, &common.out)?;
    println!(
        "pipeline `{}`: {} rows, {} failures -> {}",
        cfg.run_id,
        out.rows.len(),
        out.failures.len(),
        out.csv_path.display()
    );
    for s in &out.summaries {
        println!(
            "  {:<14} ssim {:.4}  acc {:.4}  outdiff {:.6}  cos {:.4}  mia {:.4}  wall {:.4}s",
            s.method.to_string(),
            s.mean.ssim,
            s.mean.acc_test,
            s.mean.outdiff,
            s.mean.cos_delta,
            s.mean.mia_auc,
            s.mean.wall_time_s
        );
    }
    for f in &out.failures {
        eprintln!("  failed: {f}");
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(c) => cmd_gen_data(c),
        Command::Train(c) => cmd_train(c),
        Command::Unlearn(c) => cmd_unlearn(c),
        Command::Defend { common, method } => cmd_defend(common, method),
        Command::Attack(c) => cmd_attack(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Pipeline(c) => cmd_pipeline(c),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ushield: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

// Exit-code mapping sanity: validation errors exit 1, numerical errors 2.
#[cfg(test)]
mod tests {
    use ushield::error::Error;

    #[test]
    fn exit_codes_fit_in_u8() {
        assert_eq!(Error::InvalidConfig("x".into()).exit_code(), 1);
        assert_eq!(Error::Numerical("x".into()).exit_code(), 2);
    }
}
