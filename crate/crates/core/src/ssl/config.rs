use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::QuadratureConfig;
use crate::losses::UnsupervisedLoss;

pub const CONFIG_SCHEMA: &str = "so3fm.train/v1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Teacher-student training on labeled and unlabeled data.
    #[default]
    SemiSupervised,
    /// Labeled data only, same step budget and logging.
    Supervised,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// 9 outputs reshaped row-major into `A`.
    #[default]
    Fisher,
    /// 7 outputs through the Birdal construction.
    Bingham,
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::Fisher => 9,
            HeadKind::Bingham => 7,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalModel {
    #[default]
    Teacher,
    Student,
}

/// Everything needed to reproduce a run. Loaded from JSON; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schema: String,
    pub seed: u64,
    pub mode: TrainMode,

    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_test: usize,
    pub keypoints: usize,
    /// Feature noise of the dataset itself.
    pub data_noise: f64,

    pub hidden: usize,
    pub head: HeadKind,

    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,

    pub pretrain_steps: usize,
    pub pretrain_window: usize,
    pub pretrain_tol: f64,
    pub ssl_steps: usize,

    pub lambda_u: f64,
    /// Entropy threshold in nats.
    pub tau: f64,
    /// If set, `tau` is replaced by this quantile of the pretrained
    /// teacher's entropies on the unlabeled set.
    pub tau_quantile: Option<f64>,
    pub unsup_loss: UnsupervisedLoss,
    pub ema_decay: f64,

    pub weak_noise: f64,
    pub strong_noise: f64,
    pub strong_dropout: f64,
    pub augment_labeled: bool,

    pub snapshot_every: usize,
    pub eval_model: EvalModel,
    pub quadrature_trapezoids: usize,
    /// Keep per-step, per-sample gate records in memory.
    pub record_gate_log: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schema: CONFIG_SCHEMA.into(),
            seed: 0,
            mode: TrainMode::SemiSupervised,
            n_labeled: 200,
            n_unlabeled: 4000,
            n_test: 1000,
            keypoints: 8,
            data_noise: 0.02,
            hidden: 64,
            head: HeadKind::Fisher,
            batch_labeled: 32,
            batch_unlabeled: 128,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-3,
            pretrain_steps: 5000,
            pretrain_window: 500,
            pretrain_tol: 1e-4,
            ssl_steps: 3000,
            lambda_u: 1.0,
            tau: -5.3,
            tau_quantile: None,
            unsup_loss: UnsupervisedLoss::Ce,
            ema_decay: 0.999,
            weak_noise: 0.01,
            strong_noise: 0.05,
            strong_dropout: 0.1,
            augment_labeled: true,
            snapshot_every: 200,
            eval_model: EvalModel::Teacher,
            quadrature_trapezoids: 127,
            record_gate_log: false,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn quadrature(&self) -> Result<QuadratureConfig> {
        QuadratureConfig::new(self.quadrature_trapezoids)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema != CONFIG_SCHEMA {
            return bad(format!("schema {:?}, expected {CONFIG_SCHEMA:?}", self.schema));
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.n_labeled == 0 || self.n_test == 0 {
            return bad("labeled and test sets must be nonempty".into());
        }
        if self.mode == TrainMode::SemiSupervised && self.ssl_steps > 0 && self.n_unlabeled == 0 {
            return bad("semi_supervised mode needs unlabeled samples".into());
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad(format!("ema_decay {} outside (0, 1)", self.ema_decay));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return bad(format!("lambda_u {}", self.lambda_u));
        }
        if self.tau.is_nan() {
            return bad("tau is NaN".into());
        }
        if let Some(q) = self.tau_quantile {
            if !(0.0..=1.0).contains(&q) {
                return bad(format!("tau_quantile {q} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("data_noise", self.data_noise),
            ("weak_noise", self.weak_noise),
            ("strong_noise", self.strong_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.strong_dropout) {
            return bad(format!("strong_dropout {} outside [0, 1)", self.strong_dropout));
        }
        if !(4..=8).contains(&self.keypoints) {
            return bad(format!("keypoints {} outside 4..=8", self.keypoints));
        }
        if self.hidden == 0 || self.snapshot_every == 0 || self.pretrain_window == 0 {
            return bad("hidden, snapshot_every and pretrain_window must be positive".into());
        }
        self.quadrature()?;
        Ok(())
    }
}
