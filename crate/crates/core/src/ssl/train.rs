//! Pre-training on labeled data, then teacher-student training with an EMA
//! teacher, asymmetric augmentation and an entropy gate on pseudo labels.

use nalgebra::{DMatrix, Matrix3, SMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{FisherParams, QuadratureConfig};
use crate::losses::total_loss;
use crate::so3::{geodesic_angle, Rotation};
use crate::ssl::config::{EvalModel, OptimizerKind, TrainConfig, TrainMode};
use crate::ssl::data::{batch_matrix, gen_synthetic_dataset, hide_labels, Augmentation, SyntheticSample};
use crate::ssl::eval::{evaluate, predict, EvalReport};
use crate::ssl::net::{head_backward, head_to_a, Regressor, Shape};

/// Independent random streams, so that changing what one part of the loop
/// draws never shifts another part.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
enum Stream {
    Data = 0,
    Test = 1,
    Init = 2,
    Pretrain = 3,
    LabeledBatch = 4,
    UnlabeledBatch = 5,
    TeacherAug = 6,
    StudentAug = 7,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Scale of the initial output layer; keeps the first predictions close to
/// uniform.
const INIT_OUT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherStudent {
    pub student: Regressor,
    pub teacher: Regressor,
    pub ema_decay: f64,
}

impl TeacherStudent {
    /// Both models start as copies of the pretrained regressor.
    pub fn from_pretrained(model: Regressor, ema_decay: f64) -> Self {
        TeacherStudent {
            teacher: model.clone(),
            student: model,
            ema_decay,
        }
    }

    pub fn ema_update(&mut self) -> Result<()> {
        ema_update(&mut self.teacher, &self.student, self.ema_decay)
    }
}

/// `teacher ← decay·teacher + (1 − decay)·student`, elementwise.
pub fn ema_update(teacher: &mut Regressor, student: &Regressor, decay: f64) -> Result<()> {
    if teacher.shape() != student.shape() || teacher.head() != student.head() {
        return Err(Error::Shape {
            expected: teacher.shape().n_params(),
            got: student.shape().n_params(),
        });
    }
    for (t, s) in teacher.params_mut().iter_mut().zip(student.params()) {
        *t = decay * *t + (1.0 - decay) * s;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        let state = if kind == OptimizerKind::Adam { n } else { 0 };
        Optimizer {
            kind,
            lr,
            m: vec![0.0; state],
            v: vec![0.0; state],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.t);
                let c2 = 1.0 - Self::BETA2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
                    params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// Student outputs for one batch, ready for a loss and the backward pass.
struct BatchPrediction {
    cache: crate::ssl::net::ForwardCache,
    dists: Vec<FisherParams>,
    jacobians: Vec<Option<SMatrix<f64, 9, 7>>>,
}

fn predict_batch(model: &Regressor, x: DMatrix<f64>, quad: QuadratureConfig, step: usize) -> Result<BatchPrediction> {
    let cache = model.forward(x).map_err(|e| diverged(step, e))?;
    let per_sample: Vec<(FisherParams, Option<SMatrix<f64, 9, 7>>)> = (0..cache.batch_size())
        .into_par_iter()
        .map(|i| {
            let (a, jac) = head_to_a(model.head(), &cache.row(i))?;
            Ok((FisherParams::with_config(a, quad)?, jac))
        })
        .collect::<Result<_>>()
        .map_err(|e| diverged(step, e))?;
    let (dists, jacobians) = per_sample.into_iter().unzip();
    Ok(BatchPrediction { cache, dists, jacobians })
}

fn diverged(step: usize, e: Error) -> Error {
    Error::Diverged {
        step,
        detail: e.to_string(),
    }
}

/// Parameter gradient from per-sample `∂L/∂A`.
fn backprop(model: &Regressor, pred: &BatchPrediction, grads: &[Matrix3<f64>]) -> Result<Vec<f64>> {
    let out = model.shape().output;
    let mut upstream = DMatrix::zeros(grads.len(), out);
    for (i, (g, jac)) in grads.iter().zip(&pred.jacobians).enumerate() {
        for (c, v) in head_backward(g, jac.as_ref()).into_iter().enumerate() {
            upstream[(i, c)] = v;
        }
    }
    model.backward(&pred.cache, &upstream)
}

fn labeled_batch<R: Rng>(
    labeled: &[SyntheticSample],
    batch: usize,
    aug: Augmentation,
    rng: &mut R,
) -> (DMatrix<f64>, Vec<Rotation>) {
    let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..labeled.len())).collect();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| aug.apply(&labeled[i].features, rng)).collect();
    let dim = labeled[0].features.len();
    let labels = idx
        .iter()
        .map(|&i| labeled[i].label.expect("labeled sample"))
        .collect();
    (batch_matrix(rows.iter().map(Vec::as_slice), dim), labels)
}

/// One labeled-only gradient: mean NLL and its parameter gradient.
fn supervised_gradient(
    model: &Regressor,
    x: DMatrix<f64>,
    labels: &[Rotation],
    quad: QuadratureConfig,
    step: usize,
) -> Result<(f64, Vec<f64>)> {
    let pred = predict_batch(model, x, quad, step)?;
    let pairs: Vec<(FisherParams, Rotation)> = pred.dists.iter().cloned().zip(labels.iter().cloned()).collect();
    let loss = total_loss(&pairs, &[], 0.0, 0.0, Default::default());
    check_finite(loss.value, step)?;
    Ok((loss.value, backprop(model, &pred, &loss.labeled_grads)?))
}

fn check_finite(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            detail: format!("loss {loss}"),
        })
    }
}

fn trailing_mean(values: &[f64], window: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[derive(Clone, Debug)]
pub struct PretrainResult {
    pub model: Regressor,
    pub losses: Vec<f64>,
    pub stopped_early: bool,
}

/// Mean NLL smoothing window used by the convergence test.
const PRETRAIN_SMOOTHING: usize = 100;

/// Minibatch NLL training from `init`. Stops after `pretrain_steps`, or once
/// the smoothed loss improves by less than `pretrain_tol` over
/// `pretrain_window` steps.
pub fn pretrain(cfg: &TrainConfig, labeled: &[SyntheticSample], init: Regressor) -> Result<PretrainResult> {
    if labeled.is_empty() {
        return Err(Error::Config("empty labeled set".into()));
    }
    let quad = cfg.quadrature()?;
    let mut rng = rng_for(cfg.seed, Stream::Pretrain);
    let aug = labeled_augmentation(cfg);
    let mut model = init;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, model.params().len());
    let mut losses = Vec::with_capacity(cfg.pretrain_steps);
    let mut smoothed = Vec::with_capacity(cfg.pretrain_steps);
    for step in 0..cfg.pretrain_steps {
        let (x, y) = labeled_batch(labeled, cfg.batch_labeled, aug, &mut rng);
        let (loss, grad) = supervised_gradient(&model, x, &y, quad, step)?;
        opt.step(model.params_mut(), &grad);
        losses.push(loss);
        smoothed.push(trailing_mean(&losses, PRETRAIN_SMOOTHING));
        let w = cfg.pretrain_window;
        if smoothed.len() > w + PRETRAIN_SMOOTHING && smoothed[smoothed.len() - 1 - w] - smoothed[smoothed.len() - 1] < cfg.pretrain_tol {
            return Ok(PretrainResult { model, losses, stopped_early: true });
        }
    }
    Ok(PretrainResult { model, losses, stopped_early: false })
}

fn labeled_augmentation(cfg: &TrainConfig) -> Augmentation {
    if cfg.augment_labeled {
        Augmentation {
            noise: cfg.weak_noise,
            dropout: 0.0,
        }
    } else {
        Augmentation::NONE
    }
}

/// Per-sample record of the entropy gate at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub step: usize,
    /// Index into the unlabeled set.
    pub sample: usize,
    pub entropy: f64,
    pub tau: f64,
    pub passed: bool,
    /// Frobenius norm of the sample's unsupervised `∂L/∂A_student`.
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    /// Fraction of this step's unlabeled batch passing the gate; `None` in
    /// supervised mode.
    pub coverage: Option<f64>,
}

/// One row of the metrics CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub mean_err: f64,
    pub median_err: f64,
    pub acc30: f64,
    /// Teacher coverage on the whole (clean) unlabeled set.
    pub coverage: f64,
    /// Mean error of passing pseudo labels against the hidden truth.
    pub pl_err: f64,
    /// Mean error of the student's prediction against passing pseudo labels.
    pub student_pl_err: f64,
    /// Mean teacher entropy over the unlabeled set.
    pub mean_entropy: f64,
    pub spearman: f64,
}

pub const CSV_HEADER: &str = "step,mean_err,median_err,acc30,coverage,pl_err,student_pl_err,mean_entropy";

impl Snapshot {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.mean_err,
            self.median_err,
            self.acc30,
            self.coverage,
            self.pl_err,
            self.student_pl_err,
            self.mean_entropy
        )
    }
}

pub fn metrics_csv(snapshots: &[Snapshot]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in snapshots {
        out.push_str(&s.csv_row());
        out.push('\n');
    }
    out
}

/// Data splits of one run. `unlabeled_truth` is only read by logging.
#[derive(Clone, Debug)]
pub struct Splits {
    pub labeled: Vec<SyntheticSample>,
    pub unlabeled: Vec<SyntheticSample>,
    pub unlabeled_truth: Vec<Rotation>,
    pub test: Vec<SyntheticSample>,
}

pub fn make_splits(cfg: &TrainConfig) -> Result<Splits> {
    let mut rng = rng_for(cfg.seed, Stream::Data);
    let mut all = gen_synthetic_dataset(cfg.n_labeled + cfg.n_unlabeled, cfg.keypoints, cfg.data_noise, &mut rng)?;
    let rest = all.split_off(cfg.n_labeled);
    let (unlabeled, truth) = hide_labels(rest);
    let test = gen_synthetic_dataset(cfg.n_test, cfg.keypoints, cfg.data_noise, &mut rng_for(cfg.seed, Stream::Test))?;
    Ok(Splits {
        labeled: all,
        unlabeled,
        unlabeled_truth: truth.into_iter().map(|t| t.expect("generated with labels")).collect(),
        test,
    })
}

pub fn initial_model(cfg: &TrainConfig) -> Result<Regressor> {
    let shape = Shape {
        input: 2 * cfg.keypoints,
        hidden: cfg.hidden,
        output: cfg.head.outputs(),
    };
    Regressor::init(shape, cfg.head, INIT_OUT_SCALE, &mut rng_for(cfg.seed, Stream::Init))
}

/// Smallest entropy value with at least a `q` fraction of entropies at or below it.
pub fn entropy_quantile(entropies: &[f64], q: f64) -> f64 {
    let mut v = entropies.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Teacher-student stage, advanced one step at a time.
pub struct SslTrainer<'a> {
    cfg: &'a TrainConfig,
    splits: &'a Splits,
    quad: QuadratureConfig,
    pub tau: f64,
    pub models: TeacherStudent,
    opt: Optimizer,
    step: usize,
    rng_labeled: ChaCha8Rng,
    rng_unlabeled: ChaCha8Rng,
    rng_teacher: ChaCha8Rng,
    rng_student: ChaCha8Rng,
    pub gate_log: Vec<GateRecord>,
}

impl<'a> SslTrainer<'a> {
    pub fn new(cfg: &'a TrainConfig, splits: &'a Splits, pretrained: Regressor, tau: f64) -> Result<Self> {
        let n = pretrained.params().len();
        Ok(SslTrainer {
            cfg,
            splits,
            quad: cfg.quadrature()?,
            tau,
            models: TeacherStudent::from_pretrained(pretrained, cfg.ema_decay),
            opt: Optimizer::new(cfg.optimizer, cfg.learning_rate, n),
            step: 0,
            rng_labeled: rng_for(cfg.seed, Stream::LabeledBatch),
            rng_unlabeled: rng_for(cfg.seed, Stream::UnlabeledBatch),
            rng_teacher: rng_for(cfg.seed, Stream::TeacherAug),
            rng_student: rng_for(cfg.seed, Stream::StudentAug),
            gate_log: Vec::new(),
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Unlabeled indices with their teacher (weak) and student (strong) views.
    pub fn draw_unlabeled_views(&mut self) -> (Vec<usize>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let cfg = self.cfg;
        let weak = Augmentation {
            noise: cfg.weak_noise,
            dropout: 0.0,
        };
        let strong = Augmentation {
            noise: cfg.strong_noise,
            dropout: cfg.strong_dropout,
        };
        let n = self.splits.unlabeled.len();
        let idx: Vec<usize> = (0..cfg.batch_unlabeled).map(|_| self.rng_unlabeled.random_range(0..n)).collect();
        let xt = idx
            .iter()
            .map(|&i| weak.apply(&self.splits.unlabeled[i].features, &mut self.rng_teacher))
            .collect();
        let xs = idx
            .iter()
            .map(|&i| strong.apply(&self.splits.unlabeled[i].features, &mut self.rng_student))
            .collect();
        (idx, xt, xs)
    }

    pub fn step(&mut self) -> Result<StepLog> {
        let cfg = self.cfg;
        let step = self.step + 1;
        let dim = self.models.student.shape().input;
        let (xl, yl) = labeled_batch(&self.splits.labeled, cfg.batch_labeled, labeled_augmentation(cfg), &mut self.rng_labeled);

        let log = match cfg.mode {
            TrainMode::Supervised => {
                let (loss, grad) = supervised_gradient(&self.models.student, xl, &yl, self.quad, step)?;
                self.opt.step(self.models.student.params_mut(), &grad);
                StepLog {
                    step,
                    loss,
                    supervised: loss,
                    unsupervised: 0.0,
                    coverage: None,
                }
            }
            TrainMode::SemiSupervised => {
                let (idx, xt, xs) = self.draw_unlabeled_views();
                let teacher = predict_batch(&self.models.teacher, batch_matrix(xt.iter().map(Vec::as_slice), dim), self.quad, step)?;
                let student_l = predict_batch(&self.models.student, xl, self.quad, step)?;
                let student_u = predict_batch(&self.models.student, batch_matrix(xs.iter().map(Vec::as_slice), dim), self.quad, step)?;

                let labeled: Vec<(FisherParams, Rotation)> = student_l.dists.iter().cloned().zip(yl).collect();
                let unlabeled: Vec<(FisherParams, FisherParams)> =
                    teacher.dists.into_iter().zip(student_u.dists.iter().cloned()).collect();
                let loss = total_loss(&labeled, &unlabeled, self.tau, cfg.lambda_u, cfg.unsup_loss);
                check_finite(loss.value, step)?;

                let mut grad = backprop(&self.models.student, &student_l, &loss.labeled_grads)?;
                // With λ_u = 0 every unlabeled gradient is zero; skipping the
                // pass keeps the update bitwise equal to the supervised one.
                if cfg.lambda_u != 0.0 {
                    let gu = backprop(&self.models.student, &student_u, &loss.unlabeled_grads)?;
                    for (g, u) in grad.iter_mut().zip(gu) {
                        *g += u;
                    }
                }
                self.opt.step(self.models.student.params_mut(), &grad);

                if cfg.record_gate_log {
                    for ((&sample, d), g) in idx.iter().zip(&loss.decisions).zip(&loss.unlabeled_grads) {
                        self.gate_log.push(GateRecord {
                            step,
                            sample,
                            entropy: d.entropy,
                            tau: d.threshold,
                            passed: d.passed,
                            grad_norm: g.norm(),
                        });
                    }
                }
                let passed = loss.decisions.iter().filter(|d| d.passed).count();
                StepLog {
                    step,
                    loss: loss.value,
                    supervised: loss.supervised,
                    unsupervised: loss.unsupervised,
                    coverage: Some(passed as f64 / loss.decisions.len() as f64),
                }
            }
        };
        self.models.ema_update()?;
        self.step = step;
        Ok(log)
    }

    /// Test metrics of the evaluated model plus pseudo-label statistics of
    /// the teacher on the clean unlabeled set.
    pub fn snapshot(&self) -> Result<(Snapshot, EvalReport)> {
        let eval_model = match self.cfg.eval_model {
            EvalModel::Teacher => &self.models.teacher,
            EvalModel::Student => &self.models.student,
        };
        let report = evaluate(eval_model, &self.splits.test, self.quad)?;
        let teacher = predict(&self.models.teacher, &self.splits.unlabeled, self.quad)?;
        let student = predict(&self.models.student, &self.splits.unlabeled, self.quad)?;
        let stats: Vec<(f64, bool, f64, f64)> = teacher
            .par_iter()
            .zip(&student)
            .zip(&self.splits.unlabeled_truth)
            .map(|((t, s), truth)| {
                let h = t.entropy();
                let mode = t.mode();
                (h, h <= self.tau, geodesic_angle(&mode, truth), geodesic_angle(&s.mode(), &mode))
            })
            .collect();
        let n = stats.len().max(1) as f64;
        let passed: Vec<_> = stats.iter().filter(|s| s.1).collect();
        let mean_over = |f: &dyn Fn(&(f64, bool, f64, f64)) -> f64| {
            if passed.is_empty() {
                f64::NAN
            } else {
                passed.iter().map(|s| f(s)).sum::<f64>() / passed.len() as f64
            }
        };
        Ok((
            Snapshot {
                step: self.step,
                mean_err: report.mean_error_deg,
                median_err: report.median_error_deg,
                acc30: report.acc_30deg,
                coverage: passed.len() as f64 / n,
                pl_err: mean_over(&|s| s.2),
                student_pl_err: mean_over(&|s| s.3),
                mean_entropy: stats.iter().map(|s| s.0).sum::<f64>() / n,
                spearman: report.entropy_error_spearman,
            },
            report,
        ))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub tau: f64,
    pub pretrain: PretrainResult,
    pub models: TeacherStudent,
    pub snapshots: Vec<Snapshot>,
    pub step_logs: Vec<StepLog>,
    pub gate_log: Vec<GateRecord>,
    pub report: EvalReport,
}

/// Pretrain on an existing split, then the teacher-student stage.
pub fn ssl_train(cfg: &TrainConfig, splits: &Splits, pretrained: PretrainResult) -> Result<TrainOutput> {
    let quad = cfg.quadrature()?;
    let tau = match cfg.tau_quantile {
        Some(q) if !splits.unlabeled.is_empty() => {
            let entropies: Vec<f64> = predict(&pretrained.model, &splits.unlabeled, quad)?
                .par_iter()
                .map(FisherParams::entropy)
                .collect();
            entropy_quantile(&entropies, q)
        }
        _ => cfg.tau,
    };
    let mut trainer = SslTrainer::new(cfg, splits, pretrained.model.clone(), tau)?;
    let mut snapshots = vec![trainer.snapshot()?.0];
    let mut step_logs = Vec::with_capacity(cfg.ssl_steps);
    while trainer.steps_done() < cfg.ssl_steps {
        step_logs.push(trainer.step()?);
        let done = trainer.steps_done();
        if done % cfg.snapshot_every == 0 || done == cfg.ssl_steps {
            snapshots.push(trainer.snapshot()?.0);
        }
    }
    let final_model = match cfg.eval_model {
        EvalModel::Teacher => &trainer.models.teacher,
        EvalModel::Student => &trainer.models.student,
    };
    let mut report = evaluate(final_model, &splits.test, quad)?;
    report.pseudo_label_coverage_history = snapshots.iter().map(|s| s.coverage).collect();
    report.pseudo_label_error_history = snapshots.iter().map(|s| s.pl_err).collect();
    Ok(TrainOutput {
        tau,
        pretrain: pretrained,
        models: trainer.models,
        snapshots,
        step_logs,
        gate_log: trainer.gate_log,
        report,
    })
}

/// Data generation, initialization, pretraining and the second stage.
pub fn run(cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let splits = make_splits(cfg)?;
    let pre = pretrain(cfg, &splits.labeled, initial_model(cfg)?)?;
    ssl_train(cfg, &splits, pre)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::config::HeadKind;

    fn small_config() -> TrainConfig {
        TrainConfig {
            n_labeled: 40,
            n_unlabeled: 80,
            n_test: 30,
            hidden: 8,
            batch_labeled: 4,
            batch_unlabeled: 8,
            pretrain_steps: 30,
            ssl_steps: 12,
            snapshot_every: 5,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-2,
            tau_quantile: Some(0.5),
            record_gate_log: true,
            ..Default::default()
        }
    }

    #[test]
    fn ema_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = Shape { input: 4, hidden: 3, output: 9 };
        let s = Regressor::init(shape, HeadKind::Fisher, 1.0, &mut rng).unwrap();
        let t0 = Regressor::init(shape, HeadKind::Fisher, 1.0, &mut rng).unwrap();

        let mut t = t0.clone();
        ema_update(&mut t, &s, 0.0).unwrap();
        assert_eq!(t, s);
        let mut t = t0.clone();
        ema_update(&mut t, &s, 1.0).unwrap();
        assert_eq!(t, t0);

        let mut t = t0.clone();
        for _ in 0..4605 {
            ema_update(&mut t, &s, 0.999).unwrap();
        }
        let gap0: f64 = t0.params().iter().zip(s.params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let gap: f64 = t.params().iter().zip(s.params()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ratio = gap / gap0;
        assert!((ratio - 0.999f64.powi(4605)).abs() < 1e-9 && (ratio - 0.01).abs() < 1e-3);

        let other = Regressor::init(Shape { input: 5, hidden: 3, output: 9 }, HeadKind::Fisher, 1.0, &mut rng).unwrap();
        assert!(ema_update(&mut t, &other, 0.5).is_err());
    }

    #[test]
    fn quantile() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(entropy_quantile(&v, 0.4), 2.0);
        assert_eq!(entropy_quantile(&v, 0.0), 1.0);
        assert_eq!(entropy_quantile(&v, 1.0), 5.0);
    }

    #[test]
    fn deterministic_runs() {
        let cfg = small_config();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.models, b.models);
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.report, b.report);
        assert_eq!(a.snapshots.len(), 4);
        assert_eq!(metrics_csv(&a.snapshots).lines().next(), Some(CSV_HEADER));
    }

    #[test]
    fn teacher_changes_only_by_ema() {
        let cfg = small_config();
        let splits = make_splits(&cfg).unwrap();
        let pre = pretrain(&cfg, &splits.labeled, initial_model(&cfg).unwrap()).unwrap();
        let mut trainer = SslTrainer::new(&cfg, &splits, pre.model, 0.0).unwrap();
        for _ in 0..5 {
            let before = trainer.models.teacher.clone();
            trainer.step().unwrap();
            let mut expected = before;
            ema_update(&mut expected, &trainer.models.student, cfg.ema_decay).unwrap();
            assert_eq!(expected, trainer.models.teacher);
        }
    }

    #[test]
    fn views_are_asymmetric() {
        let cfg = small_config();
        let splits = make_splits(&cfg).unwrap();
        let mut trainer = SslTrainer::new(&cfg, &splits, initial_model(&cfg).unwrap(), 0.0).unwrap();
        let (idx, xt, xs) = trainer.draw_unlabeled_views();
        for ((i, t), s) in idx.iter().zip(&xt).zip(&xs) {
            assert_ne!(t, s);
            assert_ne!(t, &splits.unlabeled[*i].features);
        }
    }

    #[test]
    fn reject_all_has_no_unsupervised_term() {
        let cfg = TrainConfig {
            tau_quantile: None,
            tau: f64::NEG_INFINITY,
            ..small_config()
        };
        let out = run(&cfg).unwrap();
        assert!(out.step_logs.iter().all(|l| l.unsupervised == 0.0 && l.coverage == Some(0.0)));
        assert!(out.gate_log.iter().all(|g| !g.passed && g.grad_norm == 0.0));
    }

    #[test]
    fn gate_soundness_in_log() {
        let out = run(&small_config()).unwrap();
        assert!(!out.gate_log.is_empty());
        assert!(out.gate_log.iter().any(|g| g.passed));
        for g in &out.gate_log {
            if g.grad_norm > 0.0 {
                assert!(g.entropy <= g.tau);
            }
        }
    }

    #[test]
    fn zero_weight_matches_supervised() {
        let fm = TrainConfig {
            lambda_u: 0.0,
            ..small_config()
        };
        let sup = TrainConfig {
            mode: TrainMode::Supervised,
            ..fm.clone()
        };
        let a = run(&fm).unwrap();
        let b = run(&sup).unwrap();
        assert_eq!(a.models.student, b.models.student);
        assert_eq!(metrics_csv(&a.snapshots), metrics_csv(&b.snapshots));
    }

    #[test]
    fn bingham_head_smoke() {
        let cfg = TrainConfig {
            head: HeadKind::Bingham,
            ..small_config()
        };
        let out = run(&cfg).unwrap();
        assert!(out.report.mean_error_deg.is_finite());
    }

    #[test]
    fn pretrain_needs_labels() {
        let cfg = small_config();
        assert!(pretrain(&cfg, &[], initial_model(&cfg).unwrap()).is_err());
    }
}
