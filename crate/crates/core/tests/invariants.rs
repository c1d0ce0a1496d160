use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use so3fm::bingham::{
    bingham_log_pdf, bingham_to_fisher, birdal_construct, fisher_to_bingham, BinghamParams, LOG_SPHERE_AREA,
};
use so3fm::losses::{cross_entropy_erform, cross_entropy_qform, entropy_filter, nll_supervised, total_loss, UnsupervisedLoss};
use so3fm::so3::{gamma, sample_uniform_rotation};
use so3fm::ssl::{ema_update, HeadKind, Regressor, Shape};
use so3fm::{BirdalOutput, FisherParams, Rotation};

fn rotation() -> impl Strategy<Value = Rotation> {
    any::<u64>().prop_map(|seed| sample_uniform_rotation(&mut ChaCha8Rng::seed_from_u64(seed)))
}

fn unit_quaternion() -> impl Strategy<Value = Vector4<f64>> {
    proptest::array::uniform4(-1.0f64..1.0)
        .prop_filter("nonzero", |q| Vector4::from(*q).norm() > 1e-3)
        .prop_map(|q| Vector4::from(q).normalize())
}

/// `U diag(s) Vᵀ` with `|s_i| <= max`.
fn fisher(max: f64) -> impl Strategy<Value = FisherParams> {
    (rotation(), proptest::array::uniform3(-max..max), rotation()).prop_map(|(u, s, v)| {
        FisherParams::new(u.matrix() * Matrix3::from_diagonal(&Vector3::from(s)) * v.matrix().transpose()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_norm_const_is_bi_invariant(f in fisher(30.0), g in rotation(), h in rotation()) {
        let moved = FisherParams::new(g.matrix() * f.a() * h.matrix()).unwrap();
        prop_assert!((moved.log_norm_const() - f.log_norm_const()).abs() <= 1e-9 * f.log_norm_const().abs().max(1.0));
    }

    #[test]
    fn derivative_ratios_bounded(f in fisher(200.0)) {
        prop_assert!(f.log_norm_const().is_finite());
        prop_assert!(f.dlogf_ds().iter().all(|d| (-1.0..=1.0).contains(d)));
    }

    #[test]
    fn gradient_is_equivariant(f in fisher(10.0), g in rotation(), h in rotation()) {
        let moved = FisherParams::new(g.matrix() * f.a() * h.matrix()).unwrap();
        let expected = g.matrix() * f.grad_log_norm_const() * h.matrix();
        prop_assert!((moved.grad_log_norm_const() - expected).norm() < 1e-9);
    }

    #[test]
    fn mode_dominates(f in fisher(10.0), r in rotation()) {
        prop_assert!(f.log_pdf(&r) <= f.log_pdf(&f.mode()) + 1e-12);
    }

    #[test]
    fn sharpening_never_raises_entropy(f in fisher(10.0)) {
        let mut prev = f.entropy();
        for k in [2.0, 5.0, 10.0] {
            let h = f.scaled(k).unwrap().entropy();
            prop_assert!(h <= prev + 1e-12);
            prev = h;
        }
    }

    #[test]
    fn gibbs_and_self_cross_entropy(t in fisher(20.0), s in fisher(20.0)) {
        prop_assert!((cross_entropy_erform(&t, &t).value - t.entropy()).abs() < 1e-9);
        prop_assert!(cross_entropy_erform(&t, &s).value >= t.entropy());
    }

    #[test]
    fn cross_entropy_paths_agree(t in fisher(20.0), s in fisher(20.0)) {
        let (q, e) = (cross_entropy_qform(&t, &s).value, cross_entropy_erform(&t, &s).value);
        prop_assert!((q - e).abs() <= 1e-6 * e.abs().max(1.0));
    }

    #[test]
    fn bingham_exponent_and_density(f in fisher(10.0), q in unit_quaternion()) {
        let b = fisher_to_bingham(&f);
        prop_assert!((f.a().dot(&gamma(&q)) - b.exponent(&q)).abs() < 1e-9);
        let r = Rotation::from_matrix_unchecked(gamma(&q));
        prop_assert!((f.log_pdf(&r) - bingham_log_pdf(&b, &q) - LOG_SPHERE_AREA).abs() < 1e-9);
        prop_assert!((bingham_log_pdf(&b, &q) - bingham_log_pdf(&b, &-q)).abs() < 1e-12);
        prop_assert!((b.m().transpose() * b.m() - Matrix4::identity()).norm() < 1e-9);
        prop_assert!(b.z().sum().abs() < 1e-9);
    }

    #[test]
    fn bingham_round_trip_and_bridge(f in fisher(20.0), r in rotation()) {
        let b = fisher_to_bingham(&f);
        let back = bingham_to_fisher(&b).unwrap();
        prop_assert!((back.log_pdf(&r) - f.log_pdf(&r)).abs() < 1e-9);
        prop_assert!((f.entropy() - (b.entropy() - LOG_SPHERE_AREA)).abs() < 1e-9);
    }

    #[test]
    fn bingham_shift_invariance(f in fisher(10.0), c in -50.0f64..50.0, q in unit_quaternion()) {
        let b = fisher_to_bingham(&f);
        let shifted = BinghamParams::new(*b.m(), b.z().add_scalar(c)).unwrap();
        prop_assert!((bingham_log_pdf(&shifted, &q) - bingham_log_pdf(&b, &q)).abs() < 1e-9);
    }

    #[test]
    fn birdal_head_structure(raw in proptest::array::uniform7(-5.0f64..5.0)) {
        prop_assume!(Vector4::new(raw[0], raw[1], raw[2], raw[3]).norm() > 1e-3);
        let b = birdal_construct(&BirdalOutput::from_slice(&raw).unwrap()).unwrap();
        prop_assert!((b.m().transpose() * b.m() - Matrix4::identity()).norm() < 1e-9);
        let (_, z) = b.main_convention();
        prop_assert!(0.0 >= z[0] && z[0] >= z[1] && z[1] >= z[2]);
    }

    #[test]
    fn filter_matches_threshold(f in fisher(20.0), tau in -15.0f64..1.0) {
        let d = entropy_filter(&f, tau);
        prop_assert_eq!(d.passed, d.entropy <= tau);
    }

    #[test]
    fn nll_gradient_is_expected_minus_label(f in fisher(20.0), y in rotation()) {
        let l = nll_supervised(&f, &y);
        prop_assert!((l.grad_a - (f.expected_rotation() - y.matrix())).norm() < 1e-15);
    }

    #[test]
    fn gated_samples_carry_no_gradient(
        pairs in proptest::collection::vec((fisher(20.0), fisher(20.0)), 1..6),
        tau in -10.0f64..0.0,
        lambda in 0.0f64..3.0,
    ) {
        let y = Rotation::identity();
        let labeled = vec![(pairs[0].1.clone(), y)];
        let batch = total_loss(&labeled, &pairs, tau, lambda, UnsupervisedLoss::Ce);
        let mut unsup = 0.0;
        for ((t, s), (d, g)) in pairs.iter().zip(batch.decisions.iter().zip(&batch.unlabeled_grads)) {
            prop_assert_eq!(d.passed, t.entropy() <= tau);
            if d.passed {
                unsup += cross_entropy_erform(t, s).value;
            } else {
                prop_assert_eq!(*g, Matrix3::zeros());
            }
        }
        let expected = nll_supervised(&labeled[0].0, &y).value + lambda * unsup / pairs.len() as f64;
        prop_assert!((batch.value - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }

    #[test]
    fn ema_stays_in_convex_hull(seed in any::<u64>(), decay in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape { input: 6, hidden: 4, output: 9 };
        let student = Regressor::init(shape, HeadKind::Fisher, 1.0, &mut rng).unwrap();
        let mut teacher = Regressor::init(shape, HeadKind::Fisher, 1.0, &mut rng).unwrap();
        let before = teacher.clone();
        ema_update(&mut teacher, &student, decay).unwrap();
        for ((t, b), s) in teacher.params().iter().zip(before.params()).zip(student.params()) {
            prop_assert!(*t >= b.min(*s) - 1e-15 && *t <= b.max(*s) + 1e-15);
        }
    }
}
