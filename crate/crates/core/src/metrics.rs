//! Evaluation metrics: image similarity (SSIM, PSNR, MSE), output drift
//! (OutDiff), direction displacement (cosine similarity), and a
//! loss-threshold membership-inference AUC.

use crate::error::{Error, Result};
use crate::model::{self, OutputMode, ParamVector, Sample};
use crate::vecmath;

/// One evaluation row. `wall_time_s` is the defense call's duration and the
/// only field exempt from bit-reproducibility.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub ssim: f64,
    pub psnr: f64,
    pub mse: f64,
    pub acc_test: f64,
    pub outdiff: f64,
    pub cos_delta: f64,
    pub mia_auc: f64,
    pub attack_final_loss: f64,
    pub wall_time_s: f64,
}

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WINDOW: usize = 7;
const SSIM_SIGMA: f64 = 1.5;

fn check_image_pair(a: &[f64], b: &[f64], height: usize, width: usize, channels: usize) -> Result<()> {
    let n = height * width * channels;
    if a.len() != n {
        return Err(Error::DimensionMismatch {
            what: "image a",
            expected: n,
            got: a.len(),
        });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            what: "image b",
            expected: n,
            got: b.len(),
        });
    }
    Ok(())
}

/// Weighted first/second moments of one window; returns the local SSIM value.
fn ssim_window(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    let mut mu_a = 0.0;
    let mut mu_b = 0.0;
    for ((&wa, &x), &y) in weights.iter().zip(a).zip(b) {
        mu_a += wa * x;
        mu_b += wa * y;
    }
    let mut raw_aa = 0.0;
    let mut raw_bb = 0.0;
    let mut raw_ab = 0.0;
    for ((&wa, &x), &y) in weights.iter().zip(a).zip(b) {
        raw_aa += wa * x * x;
        raw_bb += wa * y * y;
        raw_ab += wa * x * y;
    }
    let var_a = raw_aa - mu_a * mu_a;
    let var_b = raw_bb - mu_b * mu_b;
    let cov = raw_ab - mu_a * mu_b;

    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

fn gaussian_window_weights() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for r in 0..SSIM_WINDOW {
        for c in 0..SSIM_WINDOW {
            let dr = r as f64 - half;
            let dc = c as f64 - half;
            w.push((-(dr * dr + dc * dc) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
    w
}

/// Structural similarity over a sliding Gaussian 7x7 window (sigma 1.5),
/// constants C1 = 0.01^2 and C2 = 0.03^2 for unit data range, averaged over
/// window positions and channels. Images smaller than 7 pixels per side are
/// scored with a single uniform window covering the whole image.
pub fn ssim(a: &[f64], b: &[f64], height: usize, width: usize, channels: usize) -> Result<f64> {
    check_image_pair(a, b, height, width, channels)?;

    let px = |img: &[f64], r: usize, c: usize, ch: usize| img[(r * width + c) * channels + ch];

    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        let uniform = vec![1.0 / (height * width) as f64; height * width];
        let mut total = 0.0;
        for ch in 0..channels {
            let wa: Vec<f64> = (0..height)
                .flat_map(|r| (0..width).map(move |c| (r, c)))
                .map(|(r, c)| px(a, r, c, ch))
                .collect();
            let wb: Vec<f64> = (0..height)
                .flat_map(|r| (0..width).map(move |c| (r, c)))
                .map(|(r, c)| px(b, r, c, ch))
                .collect();
            total += ssim_window(&wa, &wb, &uniform);
        }
        return Ok(total / channels as f64);
    }

    let weights = gaussian_window_weights();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut wa = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mut wb = vec![0.0; SSIM_WINDOW * SSIM_WINDOW];
    for ch in 0..channels {
        for top in 0..=height - SSIM_WINDOW {
            for left in 0..=width - SSIM_WINDOW {
                for r in 0..SSIM_WINDOW {
                    for c in 0..SSIM_WINDOW {
                        wa[r * SSIM_WINDOW + c] = px(a, top + r, left + c, ch);
                        wb[r * SSIM_WINDOW + c] = px(b, top + r, left + c, ch);
                    }
                }
                total += ssim_window(&wa, &wb, &weights);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "mse operands",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidConfig("mse over empty images".into()));
    }
    let total: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(total / a.len() as f64)
}

/// Sentinel PSNR reported for identical images (true value is infinite).
pub const PSNR_IDENTICAL: f64 = 99.0;

/// Peak signal-to-noise ratio in dB for unit data range; identical images
/// report the [`PSNR_IDENTICAL`] sentinel.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(-10.0 * m.log10())
}

/// L2 distance between two models' outputs on the forget sample; smaller
/// means the perturbed model preserves the forgetting behavior better.
pub fn outdiff(
    theta_u: &ParamVector,
    theta_u_prime: &ParamVector,
    x: &Sample,
    mode: OutputMode,
) -> Result<f64> {
    model::output_l2_distance(theta_u, theta_u_prime, x, mode)
}

/// Cosine similarity, clamped into [-1, 1]. Value-equal inputs return
/// exactly 1.0; zero-norm inputs are an error.
pub fn cos_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            what: "cosine operands",
            expected: u.len(),
            got: v.len(),
        });
    }
    if u == v {
        if vecmath::l2_norm(u) == 0.0 {
            return Err(Error::NoSignal("cosine of zero-norm vector".into()));
        }
        return Ok(1.0);
    }
    let nu = vecmath::l2_norm(u);
    let nv = vecmath::l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::NoSignal("cosine of zero-norm vector".into()));
    }
    Ok((vecmath::dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Rank-statistic AUC of "members score LOWER than non-members"; ties count
/// one half. Scores are per-sample losses in [`mia_auc`].
pub fn auc_member_lower(member_scores: &[f64], nonmember_scores: &[f64]) -> Result<f64> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return Err(Error::InvalidConfig(
            "mia auc needs non-empty member and non-member sets".into(),
        ));
    }
    let mut favorable = 0.0;
    for m in member_scores {
        for n in nonmember_scores {
            if m < n {
                favorable += 1.0;
            } else if m == n {
                favorable += 0.5;
            }
        }
    }
    Ok(favorable / (member_scores.len() * nonmember_scores.len()) as f64)
}

/// Membership-inference AUC with per-sample cross-entropy loss as the score:
/// the probability that a member's loss ranks below a non-member's.
pub fn mia_auc(
    theta: &ParamVector,
    member_samples: &[Sample],
    nonmember_samples: &[Sample],
) -> Result<f64> {
    let losses = |set: &[Sample]| -> Result<Vec<f64>> {
        set.iter().map(|s| model::loss(theta, s, s.label)).collect()
    };
    auc_member_lower(&losses(member_samples)?, &losses(nonmember_samples)?)
}
