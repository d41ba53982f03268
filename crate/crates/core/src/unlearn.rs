//! Gradient-ascent unlearning and the parameter difference it leaves behind.
//!
//! `ga_unlearn` walks the parameters *up* the loss gradient of the forget
//! sample for a fixed number of steps; `masked_ga_unlearn` does the same but
//! only touches the coordinates with the largest initial gradient magnitude.
//! `diffparm` is the elementwise difference between the unlearned and
//! original models — the signal the inversion attack consumes.

use crate::error::{Error, Result};
use crate::model::{self, ParamVector, Sample};
use crate::vecmath;

/// Unlearning method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnlearnMethod {
    Ga,
    MaskedGa,
}

impl std::fmt::Display for UnlearnMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UnlearnMethod::Ga => write!(f, "ga"),
            UnlearnMethod::MaskedGa => write!(f, "masked_ga"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnConfig {
    pub method: UnlearnMethod,
    /// Ascent step size; must be positive.
    pub eta: f64,
    /// Number of ascent steps; zero returns the original model.
    pub steps: usize,
    /// Fraction of coordinates the masked variant may update, in (0, 1].
    pub mask_keep_frac: f64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        Self {
            method: UnlearnMethod::Ga,
            eta: 0.05,
            steps: 1,
            mask_keep_frac: 0.5,
        }
    }
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "unlearn eta must be positive and finite, got {}",
                self.eta
            )));
        }
        if self.method == UnlearnMethod::MaskedGa
            && !(self.mask_keep_frac > 0.0 && self.mask_keep_frac <= 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "mask_keep_frac must lie in (0, 1], got {}",
                self.mask_keep_frac
            )));
        }
        Ok(())
    }
}

/// Shared ascent loop. `mask = None` updates every coordinate; otherwise
/// only coordinates listed in the mask move, and the float operations on
/// them are identical to the unmasked path.
fn ascend(
    theta_o: &ParamVector,
    x: &Sample,
    eta: f64,
    steps: usize,
    mask: Option<&[bool]>,
) -> Result<ParamVector> {
    let mut values = theta_o.values().to_vec();
    let mut theta = theta_o.clone();
    for step in 0..steps {
        let grad = model::grad_params(&theta, x, x.label)?;
        if !vecmath::all_finite(&grad) {
            return Err(Error::Numerical(format!(
                "non-finite unlearning gradient at step {step}"
            )));
        }
        for (i, g) in grad.iter().enumerate() {
            if mask.map_or(true, |m| m[i]) {
                values[i] += eta * g;
            }
        }
        if !vecmath::all_finite(&values) {
            return Err(Error::Numerical(format!(
                "parameters became non-finite after unlearning step {step}"
            )));
        }
        theta = theta_o.with_values(values.clone())?;
    }
    Ok(theta)
}

/// Gradient-ascent unlearning: `theta <- theta + eta * grad L(theta; x, y)`
/// applied `steps` times. Deterministic.
pub fn ga_unlearn(theta_o: &ParamVector, x: &Sample, cfg: &UnlearnConfig) -> Result<ParamVector> {
    if cfg.method != UnlearnMethod::Ga {
        return Err(Error::InvalidConfig(format!(
            "ga_unlearn called with method {}",
            cfg.method
        )));
    }
    cfg.validate()?;
    ascend(theta_o, x, cfg.eta, cfg.steps, None)
}

/// Saliency-masked gradient ascent: only the top `mask_keep_frac` fraction
/// of coordinates by initial gradient magnitude (`ceil(frac * n)` of them,
/// ties to the lower flat index) are updated; the rest stay frozen across
/// every step.
pub fn masked_ga_unlearn(
    theta_o: &ParamVector,
    x: &Sample,
    cfg: &UnlearnConfig,
) -> Result<ParamVector> {
    if cfg.method != UnlearnMethod::MaskedGa {
        return Err(Error::InvalidConfig(format!(
            "masked_ga_unlearn called with method {}",
            cfg.method
        )));
    }
    cfg.validate()?;

    let grad0 = model::grad_params(theta_o, x, x.label)?;
    if !vecmath::all_finite(&grad0) {
        return Err(Error::Numerical(
            "non-finite gradient while building the saliency mask".into(),
        ));
    }
    let n = grad0.len();
    let keep = (cfg.mask_keep_frac * n as f64).ceil() as usize;
    let mut mask = vec![false; n];
    for i in vecmath::top_k_by_magnitude(&grad0, keep) {
        mask[i] = true;
    }
    ascend(theta_o, x, cfg.eta, cfg.steps, Some(&mask))
}

/// Runs whichever unlearning method the config selects.
pub fn unlearn(theta_o: &ParamVector, x: &Sample, cfg: &UnlearnConfig) -> Result<ParamVector> {
    match cfg.method {
        UnlearnMethod::Ga => ga_unlearn(theta_o, x, cfg),
        UnlearnMethod::MaskedGa => masked_ga_unlearn(theta_o, x, cfg),
    }
}

/// Parameter difference `theta_u - theta_o`, elementwise.
pub fn diffparm(theta_u: &ParamVector, theta_o: &ParamVector) -> Result<Vec<f64>> {
    if theta_u.values().len() != theta_o.values().len() {
        return Err(Error::DimensionMismatch {
            what: "diffparm operands",
            expected: theta_o.values().len(),
            got: theta_u.values().len(),
        });
    }
    Ok(vecmath::sub(theta_u.values(), theta_o.values()))
}
