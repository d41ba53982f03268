//! The unlearning inversion attack: reconstruct the forget sample from the
//! original model and an observed (possibly defended) unlearned model by
//! matching simulated parameter differences in cosine distance.
//!
//! The attacker simulates gradient-ascent unlearning on a virtual input,
//! compares the simulated difference against the observed one with the
//! scale-invariant cosine objective, and optimizes the virtual pixels with
//! Adam under a small total-variation prior, clamping to [0, 1] after every
//! step. Two gradient engines are available: `fd_pair` estimates the
//! mixed second derivative with one pair of input-gradient evaluations at
//! `theta_o +/- eps * u` (exact for single-step simulation up to FD error),
//! and `fd_full` differences the scalar objective pixel by pixel (the
//! oracle engine, O(pixels) simulations per gradient).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::defense::{self, DefenseConfig, DefenseMethod};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{self, ArchSpec, ParamVector, Sample};
use crate::unlearn::{self, UnlearnConfig, UnlearnMethod};
use crate::vecmath;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradEngine {
    FdPair,
    FdFull,
}

/// Whether the attacker knows the forget label or enumerates all classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    Enumerate,
    Known(usize),
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub lr: f64,
    pub iters: usize,
    pub tv_weight: f64,
    pub grad_engine: GradEngine,
    pub restarts: usize,
    pub label_mode: LabelMode,
    pub adaptive: bool,
    pub fd_epsilon_scale: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            iters: 400,
            tv_weight: 1e-3,
            grad_engine: GradEngine::FdPair,
            restarts: 3,
            label_mode: LabelMode::Enumerate,
            adaptive: false,
            fd_epsilon_scale: 1e-4,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "attack lr must be positive, got {}",
                self.lr
            )));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("attack restarts must be >= 1".into()));
        }
        if self.tv_weight < 0.0 {
            return Err(Error::InvalidConfig("tv_weight must be >= 0".into()));
        }
        if !(self.fd_epsilon_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "fd_epsilon_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The attacker's output: pixels clamped to [0, 1], the label candidate
/// that won, the final objective value, and the winning candidate's
/// per-iteration loss trace.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub pixels: Vec<f64>,
    pub label_guess: usize,
    pub final_loss: f64,
    pub trace: Vec<f64>,
}

/// Simulated parameter difference: runs the same gradient-ascent
/// unlearning the server would on the virtual sample, then differences.
pub fn simulate_unlearning(
    theta_o: &ParamVector,
    x_virtual: &Sample,
    eta: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let cfg = UnlearnConfig {
        method: UnlearnMethod::Ga,
        eta,
        steps,
        mask_keep_frac: 1.0,
    };
    let theta_u1 = unlearn::ga_unlearn(theta_o, x_virtual, &cfg)?;
    unlearn::diffparm(&theta_u1, theta_o)
}

/// Cosine distance between the simulated and observed differences,
/// `1 - cos(delta_sim, delta_obs)`, in [0, 2]. Zero-norm inputs are an
/// error: without a direction the attack cannot proceed.
pub fn attack_loss(delta_obs: &[f64], delta_sim: &[f64]) -> Result<f64> {
    Ok(1.0 - metrics::cos_sim(delta_sim, delta_obs)?)
}

/// Gradient of [`attack_loss`] with respect to the simulated difference.
/// Value-equal inputs sit at the exact optimum and return zero.
fn attack_loss_grad_sim(delta_obs: &[f64], delta_sim: &[f64]) -> Vec<f64> {
    if delta_obs == delta_sim {
        return vec![0.0; delta_sim.len()];
    }
    let ns = vecmath::l2_norm(delta_sim);
    let no = vecmath::l2_norm(delta_obs);
    let cos = vecmath::dot(delta_sim, delta_obs) / (ns * no);
    delta_sim
        .iter()
        .zip(delta_obs)
        .map(|(s, o)| -(o / (ns * no) - cos * s / (ns * ns)))
        .collect()
}

/// Anisotropic total variation of a flat image, summed over horizontal and
/// vertical neighbor pairs per channel.
pub fn tv_value(pixels: &[f64], height: usize, width: usize, channels: usize) -> f64 {
    let px = |r: usize, c: usize, ch: usize| pixels[(r * width + c) * channels + ch];
    let mut total = 0.0;
    for ch in 0..channels {
        for r in 0..height {
            for c in 0..width {
                if r + 1 < height {
                    total += (px(r + 1, c, ch) - px(r, c, ch)).abs();
                }
                if c + 1 < width {
                    total += (px(r, c + 1, ch) - px(r, c, ch)).abs();
                }
            }
        }
    }
    total
}

/// Subgradient of [`tv_value`]; the kink at equal neighbors contributes 0.
pub fn tv_grad(pixels: &[f64], height: usize, width: usize, channels: usize) -> Vec<f64> {
    let idx = |r: usize, c: usize, ch: usize| (r * width + c) * channels + ch;
    let mut grad = vec![0.0; pixels.len()];
    for ch in 0..channels {
        for r in 0..height {
            for c in 0..width {
                if r + 1 < height {
                    let d = pixels[idx(r + 1, c, ch)] - pixels[idx(r, c, ch)];
                    let s = sign(d);
                    grad[idx(r + 1, c, ch)] += s;
                    grad[idx(r, c, ch)] -= s;
                }
                if c + 1 < width {
                    let d = pixels[idx(r, c + 1, ch)] - pixels[idx(r, c, ch)];
                    let s = sign(d);
                    grad[idx(r, c + 1, ch)] += s;
                    grad[idx(r, c, ch)] -= s;
                }
            }
        }
    }
    grad
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Central-difference gradient of a scalar function of the pixels.
fn fd_full_grad(
    mut eval: impl FnMut(&[f64]) -> Result<f64>,
    pixels: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; pixels.len()];
    let mut probe = pixels.to_vec();
    for i in 0..pixels.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = eval(&probe)?;
        probe[i] = orig - h;
        let minus = eval(&probe)?;
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Gradient of the attack objective with respect to the virtual pixels.
///
/// `fd_pair`: with single-step simulation the difference is
/// `eta * grad_params(theta_o; x')`, so the chain rule needs the mixed
/// second derivative contracted against the analytic loss gradient `u`;
/// that contraction is the directional derivative of `grad_input` along
/// `u` in parameter space, estimated from the pair
/// `theta_o +/- eps * u` with `eps = scale * (1 + |theta_o|) / max(|u|, 1e-30)`.
///
/// `fd_full`: pixelwise central differences of the scalar objective.
///
/// Both engines add the total-variation prior scaled by `tv_weight`.
pub fn attack_grad(
    theta_o: &ParamVector,
    x_virtual: &Sample,
    delta_obs: &[f64],
    sim: &UnlearnConfig,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    let (h, w, c) = theta_o.arch().input_dims;
    let mut grad = match cfg.grad_engine {
        GradEngine::FdPair => {
            if sim.steps != 1 {
                return Err(Error::InvalidConfig(format!(
                    "fd_pair engine requires single-step simulation, got {} steps",
                    sim.steps
                )));
            }
            let g = model::grad_params(theta_o, x_virtual, x_virtual.label)?;
            let delta_sim: Vec<f64> = g.iter().map(|gi| sim.eta * gi).collect();
            let u = attack_loss_grad_sim(delta_obs, &delta_sim);
            if u.iter().all(|&x| x == 0.0) {
                vec![0.0; x_virtual.pixels.len()]
            } else {
                let eps = cfg.fd_epsilon_scale * (1.0 + vecmath::l2_norm(theta_o.values()))
                    / vecmath::l2_norm(&u).max(1e-30);
                let plus = theta_o.with_values(vecmath::add_scaled(theta_o.values(), &u, eps))?;
                let minus = theta_o.with_values(vecmath::add_scaled(theta_o.values(), &u, -eps))?;
                let gx_plus = model::grad_input(&plus, x_virtual, x_virtual.label)?;
                let gx_minus = model::grad_input(&minus, x_virtual, x_virtual.label)?;
                gx_plus
                    .iter()
                    .zip(&gx_minus)
                    .map(|(p, m)| sim.eta * (p - m) / (2.0 * eps))
                    .collect()
            }
        }
        GradEngine::FdFull => {
            let label = x_virtual.label;
            fd_full_grad(
                |pixels| {
                    let probe = Sample {
                        pixels: pixels.to_vec(),
                        label,
                    };
                    let delta_sim = simulate_unlearning(theta_o, &probe, sim.eta, sim.steps)?;
                    attack_loss(delta_obs, &delta_sim)
                },
                &x_virtual.pixels,
                cfg.fd_epsilon_scale,
            )?
        }
    };
    if cfg.tv_weight != 0.0 {
        let tv = tv_grad(&x_virtual.pixels, h, w, c);
        for (gi, ti) in grad.iter_mut().zip(&tv) {
            *gi += cfg.tv_weight * ti;
        }
    }
    if !vecmath::all_finite(&grad) {
        return Err(Error::Numerical("non-finite attack gradient".into()));
    }
    Ok(grad)
}

fn candidate_seed(base: u64, label: usize, restart: usize) -> u64 {
    base ^ ((label as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        ^ ((restart as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

fn random_pixels(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

struct Candidate {
    pixels: Vec<f64>,
    label: usize,
    restart: usize,
    final_loss: f64,
    trace: Vec<f64>,
}

/// Core optimization loop shared by the plain and adaptive attacks.
/// `loss_fn` evaluates the objective of a candidate sample; `grad_fn`
/// returns its pixel gradient (total-variation prior included).
fn optimize_candidates(
    input_len: usize,
    labels: &[usize],
    cfg: &AttackConfig,
    mut loss_fn: impl FnMut(&Sample) -> Result<f64>,
    mut grad_fn: impl FnMut(&Sample) -> Result<Vec<f64>>,
) -> Result<Reconstruction> {
    let mut best: Option<Candidate> = None;
    for &label in labels {
        for restart in 0..cfg.restarts {
            let seed = candidate_seed(cfg.seed, label, restart);
            let mut pixels = random_pixels(input_len, seed);
            let mut opt = model::OptimizerState::adam(cfg.lr, input_len);
            let mut trace = Vec::with_capacity(cfg.iters + 1);
            let mut aborted = false;

            for _ in 0..cfg.iters {
                let sample = Sample {
                    pixels: pixels.clone(),
                    label,
                };
                let loss = match loss_fn(&sample) {
                    Ok(l) => l,
                    // A simulated difference can collapse to zero norm on a
                    // saturated candidate; score it unusable and move on.
                    Err(Error::NoSignal(_)) => {
                        aborted = true;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                trace.push(loss);
                let grad = grad_fn(&sample)?;
                opt.step(&mut pixels, &grad)?;
                for p in pixels.iter_mut() {
                    *p = p.clamp(0.0, 1.0);
                }
            }

            let final_loss = if aborted {
                f64::INFINITY
            } else {
                let sample = Sample {
                    pixels: pixels.clone(),
                    label,
                };
                match loss_fn(&sample) {
                    Ok(l) => {
                        trace.push(l);
                        l
                    }
                    Err(Error::NoSignal(_)) => f64::INFINITY,
                    Err(e) => return Err(e),
                }
            };

            let cand = Candidate {
                pixels,
                label,
                restart,
                final_loss,
                trace,
            };
            // deterministic total order: loss, then label, then restart
            let replace = match &best {
                None => true,
                Some(b) => {
                    (cand.final_loss, cand.label, cand.restart)
                        < (b.final_loss, b.label, b.restart)
                }
            };
            if replace {
                best = Some(cand);
            }
        }
    }

    let best = best.expect("at least one candidate");
    if !best.final_loss.is_finite() {
        return Err(Error::Numerical(
            "attack produced no candidate with a finite loss".into(),
        ));
    }
    Ok(Reconstruction {
        pixels: best.pixels,
        label_guess: best.label,
        final_loss: best.final_loss,
        trace: best.trace,
    })
}

fn label_candidates(arch: &ArchSpec, mode: LabelMode) -> Result<Vec<usize>> {
    match mode {
        LabelMode::Enumerate => Ok((0..arch.num_classes).collect()),
        LabelMode::Known(y) => {
            if y >= arch.num_classes {
                return Err(Error::InvalidConfig(format!(
                    "known label {y} out of range for {} classes",
                    arch.num_classes
                )));
            }
            Ok(vec![y])
        }
    }
}

/// Runs the inversion attack against an observed model. The attacker knows
/// the unlearning procedure (`sim`) and sees only `theta_o` and
/// `theta_observed`; the observed difference is whatever the defense left
/// behind.
pub fn run_uia(
    theta_o: &ParamVector,
    theta_observed: &ParamVector,
    sim: &UnlearnConfig,
    cfg: &AttackConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let delta_obs = unlearn::diffparm(theta_observed, theta_o)?;
    if vecmath::l2_norm(&delta_obs) == 0.0 {
        return Err(Error::NoSignal(
            "observed model equals the original: nothing to invert".into(),
        ));
    }
    let labels = label_candidates(theta_o.arch(), cfg.label_mode)?;
    optimize_candidates(
        theta_o.arch().input_len(),
        &labels,
        cfg,
        |sample| {
            let delta_sim = simulate_unlearning(theta_o, sample, sim.eta, sim.steps)?;
            attack_loss(&delta_obs, &delta_sim)
        },
        |sample| attack_grad(theta_o, sample, &delta_obs, sim, cfg),
    )
}

/// Defense-aware attack: every simulated difference is passed through the
/// defender's procedure (known config, attacker-chosen seed) before the
/// cosine comparison. The composed map has no pair identity, so only the
/// `fd_full` engine is accepted.
pub fn adaptive_uia(
    theta_o: &ParamVector,
    theta_observed: &ParamVector,
    sim: &UnlearnConfig,
    defense_cfg: &DefenseConfig,
    cfg: &AttackConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    if cfg.grad_engine != GradEngine::FdFull {
        return Err(Error::InvalidConfig(
            "adaptive attack requires the fd_full gradient engine".into(),
        ));
    }
    if defense_cfg.method != DefenseMethod::UnlearnShield {
        return Err(Error::InvalidConfig(format!(
            "adaptive attack simulates the unlearnshield defense, got {}",
            defense_cfg.method
        )));
    }
    let delta_obs = unlearn::diffparm(theta_observed, theta_o)?;
    if vecmath::l2_norm(&delta_obs) == 0.0 {
        return Err(Error::NoSignal(
            "observed model equals the original: nothing to invert".into(),
        ));
    }

    // The attacker cannot know the defender's seed; it picks its own.
    let mut sim_defense = defense_cfg.clone();
    sim_defense.seed = cfg.seed ^ 0xa11a_c4e2_5eed_0001;

    let composed = |sample: &Sample| -> Result<Vec<f64>> {
        let theta_u1 = unlearn::ga_unlearn(
            theta_o,
            sample,
            &UnlearnConfig {
                method: UnlearnMethod::Ga,
                eta: sim.eta,
                steps: sim.steps,
                mask_keep_frac: 1.0,
            },
        )?;
        let (protected, _) = defense::unlearnshield(theta_o, &theta_u1, sample, &sim_defense)?;
        unlearn::diffparm(&protected, theta_o)
    };

    let (h, w, c) = theta_o.arch().input_dims;
    let labels = label_candidates(theta_o.arch(), cfg.label_mode)?;
    optimize_candidates(
        theta_o.arch().input_len(),
        &labels,
        cfg,
        |sample| {
            let delta_sim = composed(sample)?;
            attack_loss(&delta_obs, &delta_sim)
        },
        |sample| {
            let label = sample.label;
            let mut grad = fd_full_grad(
                |pixels| {
                    let probe = Sample {
                        pixels: pixels.to_vec(),
                        label,
                    };
                    let delta_sim = composed(&probe)?;
                    attack_loss(&delta_obs, &delta_sim)
                },
                &sample.pixels,
                cfg.fd_epsilon_scale,
            )?;
            if cfg.tv_weight != 0.0 {
                let tv = tv_grad(&sample.pixels, h, w, c);
                for (gi, ti) in grad.iter_mut().zip(&tv) {
                    *gi += cfg.tv_weight * ti;
                }
            }
            Ok(grad)
        },
    )
}

/// Test oracle for softmax-regression models: with single-step ascent the
/// weight-difference row for class `r` is proportional to the forget
/// pixels, so the largest-norm row recovers them up to scale. The row sign
/// is fixed so the reconstruction is nonnegative, negatives are clipped,
/// and the result is normalized by its maximum. The label guess is the row
/// with the most negative sum (the ascent direction of the true class).
pub fn closed_form_linear_recon(delta_obs: &[f64], arch: &ArchSpec) -> Result<Reconstruction> {
    if !arch.hidden_widths.is_empty() {
        return Err(Error::InvalidConfig(
            "closed-form reconstruction needs a softmax-regression architecture".into(),
        ));
    }
    if delta_obs.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            what: "observed difference",
            expected: arch.param_count(),
            got: delta_obs.len(),
        });
    }
    if vecmath::l2_norm(delta_obs) == 0.0 {
        return Err(Error::NoSignal(
            "zero difference carries no signal".into(),
        ));
    }
    let p = arch.input_len();
    let k = arch.num_classes;

    let mut best_row = 0;
    let mut best_norm = -1.0;
    let mut label_guess = 0;
    let mut most_negative_sum = f64::INFINITY;
    for r in 0..k {
        let row = &delta_obs[r * p..(r + 1) * p];
        let norm = vecmath::l2_norm(row);
        if norm > best_norm {
            best_norm = norm;
            best_row = r;
        }
        let sum: f64 = row.iter().sum();
        if sum < most_negative_sum {
            most_negative_sum = sum;
            label_guess = r;
        }
    }

    let row = &delta_obs[best_row * p..(best_row + 1) * p];
    let row_sign = if row.iter().sum::<f64>() >= 0.0 { 1.0 } else { -1.0 };
    let oriented: Vec<f64> = row.iter().map(|v| (row_sign * v).max(0.0)).collect();
    let max = oriented.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return Err(Error::NoSignal(
            "dominant row vanished after orientation".into(),
        ));
    }
    let pixels: Vec<f64> = oriented.iter().map(|v| v / max).collect();
    Ok(Reconstruction {
        pixels,
        label_guess,
        final_loss: 0.0,
        trace: Vec::new(),
    })
}
