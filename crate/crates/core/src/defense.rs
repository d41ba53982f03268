//! Post-processing defenses for unlearned models.
//!
//! The main defense optimizes an additive perturbation `delta` on the
//! parameter difference `Delta = theta_u - theta_o`: a privacy term pushes
//! the perturbed difference away from the original direction in cosine
//! space, while a magnitude penalty and an output-consistency penalty keep
//! the model useful. Baselines: per-coordinate Gaussian noise and
//! magnitude pruning of the difference. The unlearned model itself is
//! never modified — every method returns `theta_u` plus a perturbation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{self, OutputMode, ParamVector, Sample};
use crate::unlearn;
use crate::vecmath;

/// Additive perturbation over the flat parameter vector.
pub type Perturbation = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefenseMethod {
    UnlearnShield,
    Noise,
    Prune,
    None,
}

impl std::fmt::Display for DefenseMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DefenseMethod::UnlearnShield => write!(f, "unlearnshield"),
            DefenseMethod::Noise => write!(f, "noise"),
            DefenseMethod::Prune => write!(f, "prune"),
            DefenseMethod::None => write!(f, "none"),
        }
    }
}

/// How the perturbation is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbInit {
    /// Gaussian with standard deviation equal to the mean absolute entry
    /// of the parameter difference (amplitude-based initialization).
    Aim,
    /// Gaussian with a fixed standard deviation (ablation mode).
    FixedSigma,
}

/// How the configured learning rate is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrMode {
    /// Use `lr` as given (the reference setting pairs 1e-5 with
    /// ResNet-scale differences).
    Absolute,
    /// Use `lr * sigma` with sigma from the amplitude init, so step sizes
    /// track the difference scale at any model size.
    ScaledBySigma,
}

#[derive(Debug, Clone)]
pub struct DefenseConfig {
    pub method: DefenseMethod,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub lr_mode: LrMode,
    pub iters: usize,
    pub init: PerturbInit,
    /// Standard deviation for `PerturbInit::FixedSigma`; zero gives a zero
    /// initialization (used by identity tests).
    pub fixed_sigma: f64,
    pub noise_std: f64,
    pub keep_frac: f64,
    pub output_mode: OutputMode,
    pub seed: u64,
}

impl Default for DefenseConfig {
    /// Desk defaults: lambda1 = lambda2 = 0.5, 10 iterations, amplitude
    /// init, learning rate 0.1 scaled by the init sigma.
    fn default() -> Self {
        Self {
            method: DefenseMethod::UnlearnShield,
            lambda1: 0.5,
            lambda2: 0.5,
            lr: 0.1,
            lr_mode: LrMode::ScaledBySigma,
            iters: 10,
            init: PerturbInit::Aim,
            fixed_sigma: 0.01,
            noise_std: 0.1,
            keep_frac: 0.1,
            output_mode: OutputMode::Logits,
            seed: 0,
        }
    }
}

impl DefenseConfig {
    /// Reference hyperparameters: absolute learning rate 1e-5 (tuned for
    /// ResNet-scale differences), everything else as in `default`.
    pub fn reference() -> Self {
        Self {
            lr: 1e-5,
            lr_mode: LrMode::Absolute,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::InvalidConfig("lambda weights must be >= 0".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "defense lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.fixed_sigma >= 0.0) || !self.fixed_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "fixed_sigma must be >= 0, got {}",
                self.fixed_sigma
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if !(0.0..=1.0).contains(&self.keep_frac) {
            return Err(Error::InvalidConfig(format!(
                "keep_frac must lie in [0, 1], got {}",
                self.keep_frac
            )));
        }
        Ok(())
    }
}

fn gaussian_vec(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// Mean absolute entry of the parameter difference — the amplitude scale.
pub fn aim_sigma(delta: &[f64]) -> f64 {
    if delta.is_empty() {
        return 0.0;
    }
    delta.iter().map(|d| d.abs()).sum::<f64>() / delta.len() as f64
}

/// Amplitude-based initialization: Gaussian perturbation with standard
/// deviation equal to `aim_sigma(delta)`. A zero difference yields a zero
/// perturbation.
pub fn aim_init(delta: &[f64], seed: u64) -> Perturbation {
    gaussian_vec(delta.len(), aim_sigma(delta), seed)
}

/// Privacy loss `1 + cos(Delta, Delta + delta)`, in [0, 2]; lower means the
/// perturbed difference points further from the original direction. The
/// degenerate perturbed difference of norm zero scores 1 with zero gradient.
pub fn privacy_loss(delta: &[f64], pert: &[f64]) -> Result<f64> {
    if pert.len() != delta.len() {
        return Err(Error::DimensionMismatch {
            what: "perturbation",
            expected: delta.len(),
            got: pert.len(),
        });
    }
    if vecmath::l2_norm(delta) == 0.0 {
        return Err(Error::NoSignal("privacy loss needs a nonzero difference".into()));
    }
    let star = vecmath::add_scaled(delta, pert, 1.0);
    if vecmath::l2_norm(&star) == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 + metrics::cos_sim(delta, &star)?)
}

/// Analytic gradient of [`privacy_loss`] with respect to the perturbation:
/// `Delta / (|Delta| |Delta*|) - cos(Delta, Delta*) * Delta* / |Delta*|^2`.
pub fn privacy_grad(delta: &[f64], pert: &[f64]) -> Result<Vec<f64>> {
    if pert.len() != delta.len() {
        return Err(Error::DimensionMismatch {
            what: "perturbation",
            expected: delta.len(),
            got: pert.len(),
        });
    }
    let nd = vecmath::l2_norm(delta);
    if nd == 0.0 {
        return Err(Error::NoSignal("privacy gradient needs a nonzero difference".into()));
    }
    let star = vecmath::add_scaled(delta, pert, 1.0);
    let ns = vecmath::l2_norm(&star);
    if ns == 0.0 {
        return Ok(vec![0.0; delta.len()]);
    }
    let cos = vecmath::dot(delta, &star) / (nd * ns);
    Ok(delta
        .iter()
        .zip(&star)
        .map(|(d, s)| d / (nd * ns) - cos * s / (ns * ns))
        .collect())
}

/// Magnitude penalty `|delta|_2^2`.
pub fn acc_loss(pert: &[f64]) -> f64 {
    vecmath::dot(pert, pert)
}

/// Gradient of [`acc_loss`]: `2 * delta`.
pub fn acc_grad(pert: &[f64]) -> Vec<f64> {
    pert.iter().map(|d| 2.0 * d).collect()
}

/// Forgetting consistency loss: L2 distance between the outputs of the
/// unlearned model and the perturbed model on the forget sample.
pub fn forget_loss(
    theta_u: &ParamVector,
    pert: &[f64],
    x: &Sample,
    mode: OutputMode,
) -> Result<f64> {
    let shifted = theta_u.with_values(vecmath::add_scaled(theta_u.values(), pert, 1.0))?;
    model::output_l2_distance(theta_u, &shifted, x, mode)
}

/// Gradient of [`forget_loss`] with respect to the perturbation, computed
/// as a vector-Jacobian product at the perturbed model with seed
/// `(f' - f) / |f' - f|`; zero output difference gives a zero gradient.
pub fn forget_grad(
    theta_u: &ParamVector,
    pert: &[f64],
    x: &Sample,
    mode: OutputMode,
) -> Result<Vec<f64>> {
    let shifted = theta_u.with_values(vecmath::add_scaled(theta_u.values(), pert, 1.0))?;
    let f = model::output(theta_u, x, mode)?;
    let f_shift = model::output(&shifted, x, mode)?;
    let resid = vecmath::sub(&f_shift, &f);
    let norm = vecmath::l2_norm(&resid);
    if norm == 0.0 {
        return Ok(vec![0.0; pert.len()]);
    }
    let seed: Vec<f64> = resid.iter().map(|r| r / norm).collect();
    model::output_vjp(&shifted, x, &seed, mode)
}

/// One optimization step's loss values.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub privacy: f64,
    pub acc: f64,
    pub forget: f64,
    pub total: f64,
    /// `privacy - 1`: the cosine between the original and perturbed
    /// differences at this iterate.
    pub cos_delta: f64,
}

/// Per-iteration loss record of one defense run. Entry 0 holds the values
/// at the initialization, the last entry the values at the final iterate.
#[derive(Debug, Clone, Default)]
pub struct DefenseTrace {
    pub entries: Vec<TraceEntry>,
}

impl DefenseTrace {
    pub fn initial(&self) -> Option<&TraceEntry> {
        self.entries.first()
    }

    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }
}

/// The main defense: initializes a perturbation on the parameter
/// difference, runs `iters` Adam steps on the combined objective
/// `privacy + lambda1 * magnitude + lambda2 * forgetting`, and returns the
/// perturbed model `theta_u + delta` with the per-iteration loss trace.
pub fn unlearnshield(
    theta_o: &ParamVector,
    theta_u: &ParamVector,
    x: &Sample,
    cfg: &DefenseConfig,
) -> Result<(ParamVector, DefenseTrace)> {
    if cfg.method != DefenseMethod::UnlearnShield {
        return Err(Error::InvalidConfig(format!(
            "unlearnshield called with method {}",
            cfg.method
        )));
    }
    cfg.validate()?;
    let delta = unlearn::diffparm(theta_u, theta_o)?;
    let sigma = aim_sigma(&delta);
    if vecmath::l2_norm(&delta) == 0.0 {
        return Err(Error::NoSignal(
            "defense needs a nonzero parameter difference".into(),
        ));
    }

    let mut pert = match cfg.init {
        PerturbInit::Aim => aim_init(&delta, cfg.seed),
        PerturbInit::FixedSigma => gaussian_vec(delta.len(), cfg.fixed_sigma, cfg.seed),
    };

    let step_size = match cfg.lr_mode {
        LrMode::Absolute => cfg.lr,
        LrMode::ScaledBySigma => cfg.lr * sigma,
    };
    let mut opt = model::OptimizerState::adam(step_size, pert.len());
    let mut trace = DefenseTrace::default();

    let record = |iter: usize, pert: &[f64], trace: &mut DefenseTrace| -> Result<()> {
        let privacy = privacy_loss(&delta, pert)?;
        let acc = acc_loss(pert);
        let forget = forget_loss(theta_u, pert, x, cfg.output_mode)?;
        let total = privacy + cfg.lambda1 * acc + cfg.lambda2 * forget;
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite defense loss at iteration {iter}"
            )));
        }
        trace.entries.push(TraceEntry {
            iter,
            privacy,
            acc,
            forget,
            total,
            cos_delta: privacy - 1.0,
        });
        Ok(())
    };

    for iter in 0..cfg.iters {
        record(iter, &pert, &mut trace)?;
        let mut grad = privacy_grad(&delta, &pert)?;
        let ga = acc_grad(&pert);
        let gf = forget_grad(theta_u, &pert, x, cfg.output_mode)?;
        for i in 0..grad.len() {
            grad[i] += cfg.lambda1 * ga[i] + cfg.lambda2 * gf[i];
        }
        if !vecmath::all_finite(&grad) {
            return Err(Error::Numerical(format!(
                "non-finite defense gradient at iteration {iter}"
            )));
        }
        opt.step(&mut pert, &grad)?;
        if !vecmath::all_finite(&pert) {
            return Err(Error::Numerical(format!(
                "perturbation became non-finite at iteration {iter}"
            )));
        }
    }
    record(cfg.iters, &pert, &mut trace)?;

    let protected = theta_u.with_values(vecmath::add_scaled(theta_u.values(), &pert, 1.0))?;
    Ok((protected, trace))
}

/// Baseline: adds seeded Gaussian noise of standard deviation `noise_std`
/// to every parameter.
pub fn noise_defense(theta_u: &ParamVector, cfg: &DefenseConfig) -> Result<ParamVector> {
    cfg.validate()?;
    if cfg.noise_std == 0.0 {
        return Ok(theta_u.clone());
    }
    let noise = gaussian_vec(theta_u.values().len(), cfg.noise_std, cfg.seed);
    theta_u.with_values(vecmath::add_scaled(theta_u.values(), &noise, 1.0))
}

/// Baseline: keeps the `ceil(keep_frac * n)` largest-magnitude coordinates
/// of the parameter difference and reverts the rest to their original
/// values, so the pruned difference is the top slice of the observed one.
pub fn prune_defense(
    theta_u: &ParamVector,
    theta_o: &ParamVector,
    cfg: &DefenseConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    let delta = unlearn::diffparm(theta_u, theta_o)?;
    let keep = (cfg.keep_frac * delta.len() as f64).ceil() as usize;
    let mut kept = vec![false; delta.len()];
    for i in vecmath::top_k_by_magnitude(&delta, keep) {
        kept[i] = true;
    }
    let values: Vec<f64> = theta_u
        .values()
        .iter()
        .zip(theta_o.values())
        .zip(&kept)
        .map(|((u, o), &k)| if k { *u } else { *o })
        .collect();
    theta_u.with_values(values)
}

/// Dispatches on the configured method. Returns the protected model and,
/// for the optimizing defense, its loss trace.
pub fn apply_defense(
    theta_o: &ParamVector,
    theta_u: &ParamVector,
    x: &Sample,
    cfg: &DefenseConfig,
) -> Result<(ParamVector, Option<DefenseTrace>)> {
    match cfg.method {
        DefenseMethod::UnlearnShield => {
            let (theta, trace) = unlearnshield(theta_o, theta_u, x, cfg)?;
            Ok((theta, Some(trace)))
        }
        DefenseMethod::Noise => Ok((noise_defense(theta_u, cfg)?, None)),
        DefenseMethod::Prune => Ok((prune_defense(theta_u, theta_o, cfg)?, None)),
        DefenseMethod::None => Ok((theta_u.clone(), None)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Activation, ArchSpec};
    use crate::unlearn::{ga_unlearn, UnlearnConfig};
    use rand::Rng;

    fn rand_vec(n: usize, scale: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    fn setup_models() -> (ParamVector, ParamVector, Sample) {
        let arch = ArchSpec::new((4, 1, 1), vec![3], 2, Activation::Tanh).unwrap();
        let theta_o = init_params(&arch, 5);
        let x = Sample::new(vec![0.9, 0.2, 0.7, 0.4], 1).unwrap();
        let theta_u = ga_unlearn(&theta_o, &x, &UnlearnConfig::default()).unwrap();
        (theta_o, theta_u, x)
    }

    #[test]
    fn aim_sigma_is_exact_mean_absolute() {
        assert_eq!(aim_sigma(&[1.0, -3.0, 2.0]), 2.0);
        assert_eq!(aim_sigma(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn aim_init_zero_difference_gives_zero_perturbation() {
        assert_eq!(aim_init(&[0.0; 8], 3), vec![0.0; 8]);
    }

    #[test]
    fn aim_init_sample_std_tracks_sigma() {
        let n = 100_000;
        let delta = vec![2.0; n]; // sigma = 2 exactly
        let pert = aim_init(&delta, 123);
        let mean: f64 = pert.iter().sum::<f64>() / n as f64;
        let var: f64 = pert.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        assert!((std - 2.0).abs() / 2.0 < 0.02, "sample std {std}");
    }

    #[test]
    fn aim_init_is_deterministic() {
        let delta = rand_vec(64, 1.0, 9);
        assert_eq!(aim_init(&delta, 7), aim_init(&delta, 7));
        assert_ne!(aim_init(&delta, 7), aim_init(&delta, 8));
    }

    #[test]
    fn privacy_loss_zero_perturbation_is_two() {
        let delta = rand_vec(16, 1.0, 1);
        assert_eq!(privacy_loss(&delta, &vec![0.0; 16]).unwrap(), 2.0);
    }

    #[test]
    fn privacy_loss_antiparallel_is_zero() {
        let delta = rand_vec(16, 1.0, 2);
        let pert: Vec<f64> = delta.iter().map(|d| -2.0 * d).collect();
        let l = privacy_loss(&delta, &pert).unwrap();
        assert!(l.abs() <= 1e-12, "loss = {l}");
    }

    #[test]
    fn privacy_loss_hand_case_and_gradient() {
        let delta = [1.0, 0.0];
        let pert = [0.0, 1.0];
        let l = privacy_loss(&delta, &pert).unwrap();
        let expected = 1.0 + 1.0 / 2.0_f64.sqrt();
        assert!((l - expected).abs() <= 1e-15);
        assert!((l - 1.70711).abs() < 1e-5);

        let g = privacy_grad(&delta, &pert).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut plus = pert.to_vec();
            plus[i] += h;
            let mut minus = pert.to_vec();
            minus[i] -= h;
            let fd = (privacy_loss(&delta, &plus).unwrap()
                - privacy_loss(&delta, &minus).unwrap())
                / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-8, "coord {i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn privacy_degenerate_star_is_one_with_zero_gradient() {
        let delta = [1.0, 0.0];
        let pert = [-1.0, 0.0];
        assert_eq!(privacy_loss(&delta, &pert).unwrap(), 1.0);
        assert_eq!(privacy_grad(&delta, &pert).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn privacy_loss_zero_difference_is_error() {
        assert!(privacy_loss(&[0.0, 0.0], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn privacy_loss_stays_in_range() {
        for seed in 0..50u64 {
            let delta = rand_vec(12, 2.0, seed);
            let pert = rand_vec(12, 5.0, 1000 + seed);
            if vecmath::l2_norm(&delta) == 0.0 {
                continue;
            }
            let l = privacy_loss(&delta, &pert).unwrap();
            assert!((0.0..=2.0).contains(&l), "loss {l} out of range");
        }
    }

    #[test]
    fn privacy_loss_scale_invariant() {
        let delta = rand_vec(20, 1.0, 3);
        let pert = rand_vec(20, 0.5, 4);
        let base = privacy_loss(&delta, &pert).unwrap();
        let c = 37.5;
        let ds: Vec<f64> = delta.iter().map(|d| c * d).collect();
        let ps: Vec<f64> = pert.iter().map(|p| c * p).collect();
        let scaled = privacy_loss(&ds, &ps).unwrap();
        assert!((base - scaled).abs() <= 1e-12);
    }

    #[test]
    fn acc_loss_cases_and_gradient() {
        assert_eq!(acc_loss(&[0.0; 4]), 0.0);
        assert_eq!(acc_loss(&[3.0, 4.0]), 25.0);

        let pert = rand_vec(10, 1.0, 6);
        let g = acc_grad(&pert);
        let h = 1e-6;
        for i in 0..pert.len() {
            let mut plus = pert.clone();
            plus[i] += h;
            let mut minus = pert.clone();
            minus[i] -= h;
            let fd = (acc_loss(&plus) - acc_loss(&minus)) / (2.0 * h);
            assert!((g[i] - fd).abs() <= 1e-8 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn forget_loss_zero_perturbation_is_zero() {
        let (_, theta_u, x) = setup_models();
        let n = theta_u.values().len();
        assert_eq!(
            forget_loss(&theta_u, &vec![0.0; n], &x, OutputMode::Logits).unwrap(),
            0.0
        );
    }

    #[test]
    fn forget_loss_equals_outdiff_bitwise() {
        let (_, theta_u, x) = setup_models();
        let pert = rand_vec(theta_u.values().len(), 0.05, 8);
        let shifted = theta_u
            .with_values(vecmath::add_scaled(theta_u.values(), &pert, 1.0))
            .unwrap();
        let fl = forget_loss(&theta_u, &pert, &x, OutputMode::Logits).unwrap();
        let od = metrics::outdiff(&theta_u, &shifted, &x, OutputMode::Logits).unwrap();
        assert_eq!(fl.to_bits(), od.to_bits());
    }

    #[test]
    fn forget_grad_matches_finite_differences() {
        let (_, theta_u, x) = setup_models();
        let n = theta_u.values().len();
        for seed in 0..5u64 {
            let pert = rand_vec(n, 0.1, 40 + seed);
            let g = forget_grad(&theta_u, &pert, &x, OutputMode::Logits).unwrap();
            let h = 1e-6;
            let mut worst: f64 = 0.0;
            for i in (0..n).step_by(3) {
                let mut plus = pert.clone();
                plus[i] += h;
                let mut minus = pert.clone();
                minus[i] -= h;
                let fd = (forget_loss(&theta_u, &plus, &x, OutputMode::Logits).unwrap()
                    - forget_loss(&theta_u, &minus, &x, OutputMode::Logits).unwrap())
                    / (2.0 * h);
                worst = worst.max((g[i] - fd).abs() / (1.0 + fd.abs()));
            }
            assert!(worst <= 1e-5, "seed {seed}: worst rel err {worst}");
        }
    }

    #[test]
    fn unlearnshield_zero_iters_is_init_shift() {
        let (theta_o, theta_u, x) = setup_models();
        let cfg = DefenseConfig {
            iters: 0,
            seed: 77,
            ..DefenseConfig::default()
        };
        let (protected, trace) = unlearnshield(&theta_o, &theta_u, &x, &cfg).unwrap();
        let delta = unlearn::diffparm(&theta_u, &theta_o).unwrap();
        let pert0 = aim_init(&delta, 77);
        for i in 0..protected.values().len() {
            let expect = theta_u.values()[i] + pert0[i];
            assert_eq!(protected.values()[i].to_bits(), expect.to_bits());
        }
        assert_eq!(trace.entries.len(), 1);
    }

    #[test]
    fn unlearnshield_reduces_privacy_loss_and_cosine() {
        let (theta_o, theta_u, x) = setup_models();
        for seed in 0..5u64 {
            let cfg = DefenseConfig {
                seed,
                ..DefenseConfig::default()
            };
            let (_, trace) = unlearnshield(&theta_o, &theta_u, &x, &cfg).unwrap();
            let first = trace.initial().unwrap();
            let last = trace.last().unwrap();
            assert!(
                last.privacy < first.privacy,
                "seed {seed}: privacy {} -> {}",
                first.privacy,
                last.privacy
            );
            assert!(last.cos_delta < first.cos_delta, "seed {seed}");
        }
    }

    #[test]
    fn unlearnshield_is_deterministic() {
        let (theta_o, theta_u, x) = setup_models();
        let cfg = DefenseConfig {
            seed: 5,
            ..DefenseConfig::default()
        };
        let (a, _) = unlearnshield(&theta_o, &theta_u, &x, &cfg).unwrap();
        let (b, _) = unlearnshield(&theta_o, &theta_u, &x, &cfg).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn unlearnshield_rejects_zero_difference() {
        let (theta_o, _, x) = setup_models();
        let err = unlearnshield(&theta_o, &theta_o, &x, &DefenseConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoSignal(_)));
    }

    #[test]
    fn noise_defense_cases() {
        let (_, theta_u, _) = setup_models();
        let silent = DefenseConfig {
            method: DefenseMethod::Noise,
            noise_std: 0.0,
            ..DefenseConfig::default()
        };
        let out = noise_defense(&theta_u, &silent).unwrap();
        assert_eq!(out.values(), theta_u.values());

        let noisy = DefenseConfig {
            method: DefenseMethod::Noise,
            noise_std: 0.1,
            seed: 3,
            ..DefenseConfig::default()
        };
        let a = noise_defense(&theta_u, &noisy).unwrap();
        let b = noise_defense(&theta_u, &noisy).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), theta_u.values());
    }

    #[test]
    fn prune_defense_keep_all_and_none() {
        let (theta_o, theta_u, _) = setup_models();
        let keep_all = DefenseConfig {
            method: DefenseMethod::Prune,
            keep_frac: 1.0,
            ..DefenseConfig::default()
        };
        let out = prune_defense(&theta_u, &theta_o, &keep_all).unwrap();
        assert_eq!(out.values(), theta_u.values());

        let keep_none = DefenseConfig {
            method: DefenseMethod::Prune,
            keep_frac: 0.0,
            ..DefenseConfig::default()
        };
        let out = prune_defense(&theta_u, &theta_o, &keep_none).unwrap();
        assert_eq!(out.values(), theta_o.values());
    }

    #[test]
    fn prune_defense_hand_ranking() {
        // selection rule on [5, -1, 3] with keep_frac 1/3: ceil(1) = 1
        // coordinate survives, the largest magnitude -> pruned [5, 0, 0]
        let k = (3.0_f64 / 3.0).ceil() as usize;
        assert_eq!(vecmath::top_k_by_magnitude(&[5.0, -1.0, 3.0], k), vec![0]);

        // end to end on a model: difference [5, -1, 3, 0, 0, 0], keep 1/3
        // of 6 -> 2 coords (5 and 3), the rest revert to the original
        let arch = ArchSpec::new((2, 1, 1), vec![], 2, Activation::Tanh).unwrap();
        let theta_o = ParamVector::new(arch.clone(), vec![0.0; 6]).unwrap();
        let theta_u = ParamVector::new(arch, vec![5.0, -1.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let cfg = DefenseConfig {
            method: DefenseMethod::Prune,
            keep_frac: 1.0 / 3.0,
            ..DefenseConfig::default()
        };
        let out = prune_defense(&theta_u, &theta_o, &cfg).unwrap();
        assert_eq!(out.values(), &[5.0, 0.0, 3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn apply_defense_none_is_identity() {
        let (theta_o, theta_u, x) = setup_models();
        let cfg = DefenseConfig {
            method: DefenseMethod::None,
            ..DefenseConfig::default()
        };
        let (out, trace) = apply_defense(&theta_o, &theta_u, &x, &cfg).unwrap();
        assert_eq!(out.values(), theta_u.values());
        assert!(trace.is_none());
    }
}
