//! Losses between a predicted matrix Fisher distribution and a label or a
//! teacher distribution, the entropy gate for pseudo labels, and the mixed
//! labeled/unlabeled objective. Every loss returns its gradient with respect
//! to the student's parameter `A`; teacher parameters are constants.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bingham::{bingham_cross_entropy, fisher_to_bingham, LOG_SPHERE_AREA};
use crate::fisher::FisherParams;
use crate::so3::Rotation;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad_a: Matrix3<f64>,
}

impl LossValue {
    pub fn zero() -> Self {
        LossValue {
            value: 0.0,
            grad_a: Matrix3::zeros(),
        }
    }
}

/// Outcome of the entropy gate. `passed` iff `entropy <= threshold` (nats).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub entropy: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnsupervisedLoss {
    /// Cross-entropy between teacher and student distributions.
    #[default]
    Ce,
    /// Negative log-likelihood of the teacher's mode under the student.
    Nll,
}

/// `-log p(y; A) = log F(A) - tr(Aᵀ y)`.
pub fn nll_supervised(pred: &FisherParams, y: &Rotation) -> LossValue {
    LossValue {
        value: pred.log_norm_const() - pred.a().dot(y.matrix()),
        grad_a: pred.expected_rotation() - y.matrix(),
    }
}

/// Cross-entropy `H(p_t, p_s)` evaluated through the equivalent Bingham
/// distributions (closed form in the quaternion parameters).
pub fn cross_entropy_qform(teacher: &FisherParams, student: &FisherParams) -> LossValue {
    let bt = fisher_to_bingham(teacher);
    let bs = fisher_to_bingham(student);
    LossValue {
        value: bingham_cross_entropy(&bt, &bs) - LOG_SPHERE_AREA,
        grad_a: student.expected_rotation() - teacher.expected_rotation(),
    }
}

/// Cross-entropy in exponential-family form,
/// `H(p_t, p_s) = log F_s - tr(A_sᵀ E_t[R])`.
pub fn cross_entropy_erform(teacher: &FisherParams, student: &FisherParams) -> LossValue {
    let et = teacher.expected_rotation();
    LossValue {
        value: student.log_norm_const() - student.a().dot(&et),
        grad_a: student.expected_rotation() - et,
    }
}

/// NLL of the teacher's mode under the student.
pub fn nll_unsupervised(teacher: &FisherParams, student: &FisherParams) -> LossValue {
    nll_supervised(student, &teacher.mode())
}

pub fn unsupervised_loss(kind: UnsupervisedLoss, teacher: &FisherParams, student: &FisherParams) -> LossValue {
    match kind {
        UnsupervisedLoss::Ce => cross_entropy_erform(teacher, student),
        UnsupervisedLoss::Nll => nll_unsupervised(teacher, student),
    }
}

pub fn entropy_filter(teacher: &FisherParams, tau: f64) -> FilterDecision {
    let entropy = teacher.entropy();
    FilterDecision {
        entropy,
        threshold: tau,
        passed: entropy <= tau,
    }
}

/// Mixed objective over one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    /// `∂value/∂A` per labeled sample.
    pub labeled_grads: Vec<Matrix3<f64>>,
    /// `∂value/∂A_student` per unlabeled sample; zero for gated samples.
    pub unlabeled_grads: Vec<Matrix3<f64>>,
    pub decisions: Vec<FilterDecision>,
}

/// `mean_l NLL + λ_u · mean_u 1(H(p_t) <= τ) L(p_t, p_s)`.
///
/// The unlabeled mean is over the whole unlabeled batch; rejected samples
/// count as zero. An empty batch drops its term.
pub fn total_loss(
    labeled: &[(FisherParams, Rotation)],
    unlabeled: &[(FisherParams, FisherParams)],
    tau: f64,
    lambda_u: f64,
    kind: UnsupervisedLoss,
) -> BatchLoss {
    let sup: Vec<LossValue> = labeled.par_iter().map(|(p, y)| nll_supervised(p, y)).collect();
    let unsup: Vec<(FilterDecision, LossValue)> = unlabeled
        .par_iter()
        .map(|(t, s)| {
            let decision = entropy_filter(t, tau);
            let loss = if decision.passed {
                unsupervised_loss(kind, t, s)
            } else {
                LossValue::zero()
            };
            (decision, loss)
        })
        .collect();

    let (mut supervised, mut unsupervised) = (0.0, 0.0);
    let mut labeled_grads = Vec::with_capacity(sup.len());
    if !sup.is_empty() {
        let w = 1.0 / sup.len() as f64;
        for l in &sup {
            supervised += l.value;
            labeled_grads.push(l.grad_a * w);
        }
        supervised *= w;
    }
    let mut unlabeled_grads = Vec::with_capacity(unsup.len());
    let mut decisions = Vec::with_capacity(unsup.len());
    if !unsup.is_empty() {
        let w = 1.0 / unsup.len() as f64;
        for (d, l) in &unsup {
            decisions.push(*d);
            if d.passed {
                unsupervised += l.value;
                unlabeled_grads.push(l.grad_a * (lambda_u * w));
            } else {
                unlabeled_grads.push(Matrix3::zeros());
            }
        }
        unsupervised *= w;
    }
    BatchLoss {
        value: supervised + lambda_u * unsupervised,
        supervised,
        unsupervised,
        labeled_grads,
        unlabeled_grads,
        decisions,
    }
}
