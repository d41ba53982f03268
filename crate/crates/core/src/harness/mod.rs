//! Experiment orchestration: dataset generation, per-trial
//! train → unlearn → defend → attack → evaluate runs, CSV/summary
//! persistence, and per-trial derived seeding.
//!
//! Trial `i` derives every random choice from named seeds: the forget
//! sample from `base_seed + i`, the defense from `defense.seed + i`, the
//! attack from `attack.seed + i`. Reruns of the same config are
//! bit-identical except for the wall-time column.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod image;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{self, Reconstruction};
use crate::defense::{self, DefenseMethod, DefenseTrace};
use crate::error::Result;
use crate::metrics::{self, MetricsRecord};
use crate::model::{self, ParamVector, Sample};
use crate::unlearn;

pub use config::{ConfigDoc, ExperimentConfig};
pub use data::{gen_dataset, Dataset, DatasetConfig};

/// Exact results CSV header.
pub const CSV_HEADER: &str =
    "run_id,trial,seed,defense,ssim,psnr,mse,acc_test,outdiff,cos_delta,mia_auc,attack_final_loss,wall_time_s";

/// Everything one trial produces.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub record: MetricsRecord,
    pub reconstruction: Reconstruction,
    pub forget_index: usize,
    pub forget: Sample,
    pub defense_trace: Option<DefenseTrace>,
}

/// Trains the original model for a config (deterministic in the config).
pub fn train_original(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ParamVector> {
    model::train(&dataset.train, &cfg.arch, &cfg.train, cfg.train_seed)
}

/// Index of trial `i`'s forget sample, drawn from `base_seed + i`. The
/// forget sample is always a member of the training set.
pub fn forget_index(cfg: &ExperimentConfig, trial: usize, train_size: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed.wrapping_add(trial as u64));
    rng.gen_range(0..train_size)
}

/// One full trial against a pre-trained original model.
pub fn run_trial_with(
    theta_o: &ParamVector,
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    trial: usize,
) -> Result<TrialOutput> {
    let forget_idx = forget_index(cfg, trial, dataset.train.len());
    let forget = dataset.train[forget_idx].clone();

    let theta_u = unlearn::unlearn(theta_o, &forget, &cfg.unlearn)?;

    let mut defense_cfg = cfg.defense.clone();
    defense_cfg.seed = cfg.defense.seed.wrapping_add(trial as u64);
    let defense_start = Instant::now();
    let (theta_observed, defense_trace) =
        defense::apply_defense(theta_o, &theta_u, &forget, &defense_cfg)?;
    let wall_time_s = defense_start.elapsed().as_secs_f64();

    let mut attack_cfg = cfg.attack.clone();
    attack_cfg.seed = cfg.attack.seed.wrapping_add(trial as u64);
    let reconstruction = if attack_cfg.adaptive {
        attack::adaptive_uia(theta_o, &theta_observed, &cfg.unlearn, &defense_cfg, &attack_cfg)?
    } else {
        attack::run_uia(theta_o, &theta_observed, &cfg.unlearn, &attack_cfg)?
    };

    let (h, w, c) = cfg.arch.input_dims;
    let delta = unlearn::diffparm(&theta_u, theta_o)?;
    let delta_star = unlearn::diffparm(&theta_observed, theta_o)?;
    let record = MetricsRecord {
        ssim: metrics::ssim(&reconstruction.pixels, &forget.pixels, h, w, c)?,
        psnr: metrics::psnr(&reconstruction.pixels, &forget.pixels)?,
        mse: metrics::mse(&reconstruction.pixels, &forget.pixels)?,
        acc_test: model::accuracy(&theta_observed, &dataset.test)?,
        outdiff: metrics::outdiff(&theta_u, &theta_observed, &forget, cfg.defense.output_mode)?,
        cos_delta: metrics::cos_sim(&delta, &delta_star)?,
        mia_auc: metrics::mia_auc(&theta_observed, &[forget.clone()], &dataset.test)?,
        attack_final_loss: reconstruction.final_loss,
        wall_time_s,
    };
    Ok(TrialOutput {
        record,
        reconstruction,
        forget_index: forget_idx,
        forget,
        defense_trace,
    })
}

/// Standalone trial: regenerates the dataset and retrains the original
/// model from the config (both deterministic), then runs the trial.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialOutput> {
    let dataset = gen_dataset(&cfg.dataset)?;
    let theta_o = train_original(cfg, &dataset)?;
    run_trial_with(&theta_o, &dataset, cfg, trial)
}

/// One results row.
#[derive(Debug, Clone)]
pub struct PipelineRow {
    pub run_id: String,
    pub trial: usize,
    pub seed: u64,
    pub defense: DefenseMethod,
    pub record: MetricsRecord,
}

impl PipelineRow {
    pub fn to_csv_line(&self) -> String {
        let r = &self.record;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.trial,
            self.seed,
            self.defense,
            r.ssim,
            r.psnr,
            r.mse,
            r.acc_test,
            r.outdiff,
            r.cos_delta,
            r.mia_auc,
            r.attack_final_loss,
            r.wall_time_s
        )
    }
}

/// Per-method means over the successful rows, in method order.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: DefenseMethod,
    pub trials: usize,
    pub mean: MetricsRecord,
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub rows: Vec<PipelineRow>,
    pub failures: Vec<String>,
    pub summaries: Vec<MethodSummary>,
    pub csv_path: PathBuf,
}

fn mean_record(records: &[&MetricsRecord]) -> MetricsRecord {
    let n = records.len().max(1) as f64;
    let mut sum = MetricsRecord {
        ssim: 0.0,
        psnr: 0.0,
        mse: 0.0,
        acc_test: 0.0,
        outdiff: 0.0,
        cos_delta: 0.0,
        mia_auc: 0.0,
        attack_final_loss: 0.0,
        wall_time_s: 0.0,
    };
    for r in records {
        sum.ssim += r.ssim;
        sum.psnr += r.psnr;
        sum.mse += r.mse;
        sum.acc_test += r.acc_test;
        sum.outdiff += r.outdiff;
        sum.cos_delta += r.cos_delta;
        sum.mia_auc += r.mia_auc;
        sum.attack_final_loss += r.attack_final_loss;
        sum.wall_time_s += r.wall_time_s;
    }
    sum.ssim /= n;
    sum.psnr /= n;
    sum.mse /= n;
    sum.acc_test /= n;
    sum.outdiff /= n;
    sum.cos_delta /= n;
    sum.mia_auc /= n;
    sum.attack_final_loss /= n;
    sum.wall_time_s /= n;
    sum
}

/// Runs `trials` trials for every configured defense method. The original
/// model is trained once and shared. Per-trial failures are recorded and
/// the run continues; rows keep a fixed (method, trial) order so reruns
/// are bit-identical modulo the wall-time column.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PipelineOutput> {
    std::fs::create_dir_all(out_dir)?;
    let dataset = gen_dataset(&cfg.dataset)?;
    let theta_o = train_original(cfg, &dataset)?;
    checkpoint::write_checkpoint(&out_dir.join("original.ckpt"), &theta_o)?;

    let (h, w, c) = cfg.arch.input_dims;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut forget_written = vec![false; cfg.trials];

    for &method in &cfg.methods {
        for trial in 0..cfg.trials {
            let mut trial_cfg = cfg.clone();
            trial_cfg.defense.method = method;
            match run_trial_with(&theta_o, &dataset, &trial_cfg, trial) {
                Ok(out) => {
                    // pixmap previews exist for 1- and 3-channel images;
                    // the raw dump always lands
                    let previews = c == 1 || c == 3;
                    if !forget_written[trial] {
                        let stem = format!("forget_t{trial:03}");
                        if previews {
                            image::write_image_pnm(
                                &out_dir.join(format!("{stem}.pgm")),
                                &out.forget.pixels,
                                h,
                                w,
                                c,
                            )?;
                        }
                        image::write_image_raw(
                            &out_dir.join(format!("{stem}.f64")),
                            &out.forget.pixels,
                        )?;
                        forget_written[trial] = true;
                    }
                    let stem = format!("recon_{method}_t{trial:03}");
                    if previews {
                        image::write_image_pnm(
                            &out_dir.join(format!("{stem}.pgm")),
                            &out.reconstruction.pixels,
                            h,
                            w,
                            c,
                        )?;
                    }
                    image::write_image_raw(
                        &out_dir.join(format!("{stem}.f64")),
                        &out.reconstruction.pixels,
                    )?;
                    rows.push(PipelineRow {
                        run_id: cfg.run_id.clone(),
                        trial,
                        seed: cfg.base_seed.wrapping_add(trial as u64),
                        defense: method,
                        record: out.record,
                    });
                }
                Err(e) => {
                    failures.push(format!("method {method} trial {trial}: {e}"));
                }
            }
        }
    }

    let csv_path = out_dir.join("results.csv");
    write_results_csv(&csv_path, &rows)?;

    let summaries: Vec<MethodSummary> = cfg
        .methods
        .iter()
        .map(|&method| {
            let method_rows: Vec<&MetricsRecord> = rows
                .iter()
                .filter(|r| r.defense == method)
                .map(|r| &r.record)
                .collect();
            MethodSummary {
                method,
                trials: method_rows.len(),
                mean: mean_record(&method_rows),
            }
        })
        .collect();
    write_summary(&out_dir.join("summary.txt"), cfg, &summaries, &failures)?;
    if !failures.is_empty() {
        std::fs::write(out_dir.join("failures.log"), failures.join("\n") + "\n")?;
    }

    Ok(PipelineOutput {
        rows,
        failures,
        summaries,
        csv_path,
    })
}

pub fn write_results_csv(path: &Path, rows: &[PipelineRow]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(file, "{}", row.to_csv_line())?;
    }
    Ok(())
}

fn write_summary(
    path: &Path,
    cfg: &ExperimentConfig,
    summaries: &[MethodSummary],
    failures: &[String],
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "run_id: {}", cfg.run_id)?;
    writeln!(file, "trials per method: {}", cfg.trials)?;
    writeln!(
        file,
        "{:<14} {:>7} {:>9} {:>9} {:>9} {:>10} {:>10} {:>9} {:>12}",
        "defense", "rows", "ssim", "psnr", "acc_test", "outdiff", "cos_delta", "mia_auc", "wall_time_s"
    )?;
    for s in summaries {
        let m = &s.mean;
        writeln!(
            file,
            "{:<14} {:>7} {:>9.4} {:>9.4} {:>9.4} {:>10.6} {:>10.4} {:>9.4} {:>12.6}",
            s.method.to_string(),
            s.trials,
            m.ssim,
            m.psnr,
            m.acc_test,
            m.outdiff,
            m.cos_delta,
            m.mia_auc,
            m.wall_time_s
        )?;
    }
    if !failures.is_empty() {
        writeln!(file, "failures: {}", failures.len())?;
    }
    Ok(())
}
