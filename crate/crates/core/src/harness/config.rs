//! Experiment configuration: a flat text document of dotted keys.
//!
//! ```text
//! # comment
//! run_id = desk
//! trials = 20
//! defense.lambda1 = 0.5
//! arch.hidden_widths = 64,32
//! pipeline.methods = none,unlearnshield,noise
//! ```
//!
//! Whitespace and `#` comments are ignored; unknown or duplicate keys are
//! errors so typos cannot silently fall back to defaults. Every key is
//! optional — missing keys take the desk defaults.

use std::collections::BTreeMap;
use std::path::Path;

use crate::attack::{AttackConfig, GradEngine, LabelMode};
use crate::defense::{DefenseConfig, DefenseMethod, LrMode, PerturbInit};
use crate::error::{Error, Result};
use crate::harness::data::DatasetConfig;
use crate::model::{Activation, ArchSpec, OptimizerKind, OutputMode, TrainConfig};
use crate::unlearn::{UnlearnConfig, UnlearnMethod};

/// Parsed key/value document with consumption tracking.
#[derive(Debug, Default)]
pub struct ConfigDoc {
    entries: BTreeMap<String, String>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value.parse().map_err(|_| {
            Error::InvalidConfig(format!(
                "key `{key}`: cannot parse `{value}` as {}",
                std::any::type_name::<T>()
            ))
        })
    }

    fn get_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            Some(v) => Self::parse_value(key, &v),
            None => Ok(default),
        }
    }

    fn get_string_or(&mut self, key: &str, default: &str) -> String {
        self.take(key).unwrap_or_else(|| default.to_string())
    }

    /// Errors if any key was never consumed (a typo or unsupported option).
    fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            Err(Error::InvalidConfig(format!(
                "unknown config keys: {}",
                keys.join(", ")
            )))
        }
    }
}

fn bad_enum(key: &str, value: &str, options: &str) -> Error {
    Error::InvalidConfig(format!("key `{key}`: `{value}` is not one of {options}"))
}

fn parse_activation(key: &str, v: &str) -> Result<Activation> {
    match v {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        _ => Err(bad_enum(key, v, "tanh|relu")),
    }
}

fn parse_optimizer(key: &str, v: &str) -> Result<OptimizerKind> {
    match v {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        _ => Err(bad_enum(key, v, "sgd|adam")),
    }
}

fn parse_unlearn_method(key: &str, v: &str) -> Result<UnlearnMethod> {
    match v {
        "ga" => Ok(UnlearnMethod::Ga),
        "masked_ga" => Ok(UnlearnMethod::MaskedGa),
        _ => Err(bad_enum(key, v, "ga|masked_ga")),
    }
}

pub fn parse_defense_method(v: &str) -> Result<DefenseMethod> {
    match v {
        "unlearnshield" => Ok(DefenseMethod::UnlearnShield),
        "noise" => Ok(DefenseMethod::Noise),
        "prune" => Ok(DefenseMethod::Prune),
        "none" => Ok(DefenseMethod::None),
        _ => Err(bad_enum(
            "defense.method",
            v,
            "unlearnshield|noise|prune|none",
        )),
    }
}

fn parse_lr_mode(key: &str, v: &str) -> Result<LrMode> {
    match v {
        "absolute" => Ok(LrMode::Absolute),
        "scaled" => Ok(LrMode::ScaledBySigma),
        _ => Err(bad_enum(key, v, "absolute|scaled")),
    }
}

fn parse_init(key: &str, v: &str) -> Result<PerturbInit> {
    match v {
        "aim" => Ok(PerturbInit::Aim),
        "fixed_sigma" => Ok(PerturbInit::FixedSigma),
        _ => Err(bad_enum(key, v, "aim|fixed_sigma")),
    }
}

fn parse_output_mode(key: &str, v: &str) -> Result<OutputMode> {
    match v {
        "logits" => Ok(OutputMode::Logits),
        "softmax" => Ok(OutputMode::Softmax),
        _ => Err(bad_enum(key, v, "logits|softmax")),
    }
}

fn parse_grad_engine(key: &str, v: &str) -> Result<GradEngine> {
    match v {
        "fd_pair" => Ok(GradEngine::FdPair),
        "fd_full" => Ok(GradEngine::FdFull),
        _ => Err(bad_enum(key, v, "fd_pair|fd_full")),
    }
}

fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|part| {
            part.trim().parse().map_err(|_| {
                Error::InvalidConfig(format!("key `{key}`: bad list entry `{part}`"))
            })
        })
        .collect()
}

/// Everything one experiment needs, resolved against desk defaults.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub run_id: String,
    /// Trial `i` derives its seeds from `base_seed + i`.
    pub base_seed: u64,
    pub trials: usize,
    pub dataset: DatasetConfig,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub train_seed: u64,
    pub unlearn: UnlearnConfig,
    pub defense: DefenseConfig,
    pub attack: AttackConfig,
    /// Defense methods the pipeline sweeps over, in execution order.
    pub methods: Vec<DefenseMethod>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dataset = DatasetConfig::default();
        let arch = ArchSpec::new(
            (dataset.height, dataset.width, dataset.channels),
            vec![64, 32],
            dataset.classes,
            Activation::Tanh,
        )
        .expect("desk arch is valid");
        Self {
            run_id: "desk".into(),
            base_seed: 42,
            trials: 20,
            dataset,
            arch,
            train: TrainConfig {
                optimizer: OptimizerKind::Adam,
                lr: 0.01,
                epochs: 20,
                batch_size: 32,
                acc_floor: 0.9,
            },
            train_seed: 1,
            unlearn: UnlearnConfig::default(),
            defense: DefenseConfig {
                seed: 1000,
                ..DefenseConfig::default()
            },
            attack: AttackConfig {
                seed: 2000,
                ..AttackConfig::default()
            },
            methods: vec![
                DefenseMethod::None,
                DefenseMethod::UnlearnShield,
                DefenseMethod::Noise,
                DefenseMethod::Prune,
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn from_doc(mut doc: ConfigDoc) -> Result<Self> {
        let defaults = Self::default();

        let run_id = doc.get_string_or("run_id", &defaults.run_id);
        let base_seed = doc.get_or("seed", defaults.base_seed)?;
        let trials = doc.get_or("trials", defaults.trials)?;
        if trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }

        let dataset = DatasetConfig {
            height: doc.get_or("dataset.height", defaults.dataset.height)?,
            width: doc.get_or("dataset.width", defaults.dataset.width)?,
            channels: doc.get_or("dataset.channels", defaults.dataset.channels)?,
            classes: doc.get_or("dataset.classes", defaults.dataset.classes)?,
            train_size: doc.get_or("dataset.train_size", defaults.dataset.train_size)?,
            test_size: doc.get_or("dataset.test_size", defaults.dataset.test_size)?,
            noise_std: doc.get_or("dataset.noise_std", defaults.dataset.noise_std)?,
            seed: doc.get_or("dataset.seed", defaults.dataset.seed)?,
        };
        dataset.validate()?;

        let hidden = match doc.take("arch.hidden_widths") {
            Some(v) => parse_usize_list("arch.hidden_widths", &v)?,
            None => defaults.arch.hidden_widths.clone(),
        };
        let activation = match doc.take("arch.activation") {
            Some(v) => parse_activation("arch.activation", &v)?,
            None => defaults.arch.activation,
        };
        let arch = ArchSpec::new(
            (dataset.height, dataset.width, dataset.channels),
            hidden,
            dataset.classes,
            activation,
        )?;

        let train = TrainConfig {
            optimizer: match doc.take("train.optimizer") {
                Some(v) => parse_optimizer("train.optimizer", &v)?,
                None => defaults.train.optimizer,
            },
            lr: doc.get_or("train.lr", defaults.train.lr)?,
            epochs: doc.get_or("train.epochs", defaults.train.epochs)?,
            batch_size: doc.get_or("train.batch", defaults.train.batch_size)?,
            acc_floor: doc.get_or("train.acc_floor", defaults.train.acc_floor)?,
        };
        let train_seed = doc.get_or("train.seed", defaults.train_seed)?;

        let unlearn = UnlearnConfig {
            method: match doc.take("unlearn.method") {
                Some(v) => parse_unlearn_method("unlearn.method", &v)?,
                None => defaults.unlearn.method,
            },
            eta: doc.get_or("unlearn.eta", defaults.unlearn.eta)?,
            steps: doc.get_or("unlearn.steps", defaults.unlearn.steps)?,
            mask_keep_frac: doc.get_or("unlearn.mask_keep_frac", defaults.unlearn.mask_keep_frac)?,
        };
        unlearn.validate()?;

        let defense = DefenseConfig {
            method: match doc.take("defense.method") {
                Some(v) => parse_defense_method(&v)?,
                None => defaults.defense.method,
            },
            lambda1: doc.get_or("defense.lambda1", defaults.defense.lambda1)?,
            lambda2: doc.get_or("defense.lambda2", defaults.defense.lambda2)?,
            lr: doc.get_or("defense.lr", defaults.defense.lr)?,
            lr_mode: match doc.take("defense.lr_mode") {
                Some(v) => parse_lr_mode("defense.lr_mode", &v)?,
                None => defaults.defense.lr_mode,
            },
            iters: doc.get_or("defense.iters", defaults.defense.iters)?,
            init: match doc.take("defense.init") {
                Some(v) => parse_init("defense.init", &v)?,
                None => defaults.defense.init,
            },
            fixed_sigma: doc.get_or("defense.fixed_sigma", defaults.defense.fixed_sigma)?,
            noise_std: doc.get_or("defense.noise_std", defaults.defense.noise_std)?,
            keep_frac: doc.get_or("defense.keep_frac", defaults.defense.keep_frac)?,
            output_mode: match doc.take("defense.output_mode") {
                Some(v) => parse_output_mode("defense.output_mode", &v)?,
                None => defaults.defense.output_mode,
            },
            seed: doc.get_or("defense.seed", defaults.defense.seed)?,
        };
        defense.validate()?;

        let label_mode = match doc.take("attack.label_mode") {
            Some(v) => match v.as_str() {
                "enumerate" => LabelMode::Enumerate,
                "known" => {
                    let label = doc.get_or("attack.known_label", 0usize)?;
                    LabelMode::Known(label)
                }
                other => return Err(bad_enum("attack.label_mode", other, "enumerate|known")),
            },
            None => defaults.attack.label_mode,
        };
        let attack = AttackConfig {
            lr: doc.get_or("attack.lr", defaults.attack.lr)?,
            iters: doc.get_or("attack.iters", defaults.attack.iters)?,
            tv_weight: doc.get_or("attack.tv_weight", defaults.attack.tv_weight)?,
            grad_engine: match doc.take("attack.grad_engine") {
                Some(v) => parse_grad_engine("attack.grad_engine", &v)?,
                None => defaults.attack.grad_engine,
            },
            restarts: doc.get_or("attack.restarts", defaults.attack.restarts)?,
            label_mode,
            adaptive: doc.get_or("attack.adaptive", defaults.attack.adaptive)?,
            fd_epsilon_scale: doc.get_or(
                "attack.fd_epsilon_scale",
                defaults.attack.fd_epsilon_scale,
            )?,
            seed: doc.get_or("attack.seed", defaults.attack.seed)?,
        };
        attack.validate()?;

        let methods = match doc.take("pipeline.methods") {
            Some(v) => {
                let methods: Result<Vec<DefenseMethod>> = v
                    .split(',')
                    .map(|part| parse_defense_method(part.trim()))
                    .collect();
                let methods = methods?;
                if methods.is_empty() {
                    return Err(Error::InvalidConfig("pipeline.methods is empty".into()));
                }
                methods
            }
            None => defaults.methods.clone(),
        };

        doc.finish()?;
        Ok(Self {
            run_id,
            base_seed,
            trials,
            dataset,
            arch,
            train,
            train_seed,
            unlearn,
            defense,
            attack,
            methods,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_doc(ConfigDoc::from_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_desk_defaults() {
        let cfg = ExperimentConfig::from_doc(ConfigDoc::parse("").unwrap()).unwrap();
        assert_eq!(cfg.run_id, "desk");
        assert_eq!(cfg.trials, 20);
        assert_eq!(cfg.dataset.height, 16);
        assert_eq!(cfg.arch.hidden_widths, vec![64, 32]);
        assert_eq!(cfg.arch.param_count(), 16448 + 2080 + 132);
    }

    #[test]
    fn comments_and_whitespace_are_permissive() {
        let text = "
            # an experiment
            run_id = tiny   # trailing comment

            trials=2
            defense.lambda1 =  0.25
        ";
        let cfg = ExperimentConfig::from_doc(ConfigDoc::parse(text).unwrap()).unwrap();
        assert_eq!(cfg.run_id, "tiny");
        assert_eq!(cfg.trials, 2);
        assert_eq!(cfg.defense.lambda1, 0.25);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let doc = ConfigDoc::parse("defense.lambda3 = 0.5").unwrap();
        let err = ExperimentConfig::from_doc(doc).unwrap_err();
        match err {
            Error::InvalidConfig(msg) => assert!(msg.contains("defense.lambda3"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_an_error() {
        assert!(ConfigDoc::parse("trials = 2\ntrials = 3").is_err());
    }

    #[test]
    fn malformed_line_is_an_error() {
        assert!(ConfigDoc::parse("just some words").is_err());
    }

    #[test]
    fn enums_and_lists_parse() {
        let text = "
            arch.hidden_widths = 8,4
            arch.activation = relu
            unlearn.method = masked_ga
            defense.method = prune
            defense.lr_mode = absolute
            defense.init = fixed_sigma
            attack.grad_engine = fd_full
            attack.label_mode = known
            attack.known_label = 2
            pipeline.methods = none, unlearnshield
        ";
        let cfg = ExperimentConfig::from_doc(ConfigDoc::parse(text).unwrap()).unwrap();
        assert_eq!(cfg.arch.hidden_widths, vec![8, 4]);
        assert_eq!(cfg.arch.activation, Activation::Relu);
        assert_eq!(cfg.unlearn.method, UnlearnMethod::MaskedGa);
        assert_eq!(cfg.defense.method, DefenseMethod::Prune);
        assert_eq!(cfg.defense.lr_mode, LrMode::Absolute);
        assert_eq!(cfg.defense.init, PerturbInit::FixedSigma);
        assert_eq!(cfg.attack.grad_engine, GradEngine::FdFull);
        assert_eq!(cfg.attack.label_mode, LabelMode::Known(2));
        assert_eq!(
            cfg.methods,
            vec![DefenseMethod::None, DefenseMethod::UnlearnShield]
        );
    }

    #[test]
    fn bad_enum_value_names_options() {
        let doc = ConfigDoc::parse("defense.method = soteria").unwrap();
        let err = ExperimentConfig::from_doc(doc).unwrap_err();
        match err {
            Error::InvalidConfig(msg) => assert!(msg.contains("unlearnshield"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_hidden_widths_gives_softmax_regression() {
        let doc = ConfigDoc::parse("arch.hidden_widths =").unwrap();
        let cfg = ExperimentConfig::from_doc(doc).unwrap();
        assert!(cfg.arch.hidden_widths.is_empty());
        assert_eq!(cfg.arch.layer_dims().len(), 1);
    }
}
