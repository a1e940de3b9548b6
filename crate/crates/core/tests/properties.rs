use dspt_core::losses::{dspt_loss_bounds, fd_gradient, gradient_rel_error, LossKind};
use dspt_core::model::{PrototypeModel, ShiftMode};
use dspt_core::numerics::{double_softmax, double_softmax_range, l1_norm, l2_norm, softmax, LogitVector};
use dspt_core::rng;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_z(r: &mut rng::Rng, c: usize, scale: f64) -> Vec<f64> {
    (0..c).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

#[test]
fn double_softmax_range_monte_carlo() {
    let mut r = rng::rng(11);
    for _ in 0..100_000 {
        let c = r.gen_range(2..=64);
        let scale = 10f64.powf(r.gen_range(-2.0..2.5));
        let z = LogitVector::new(random_z(&mut r, c, scale)).unwrap();
        let (lo, hi) = double_softmax_range(c);
        let q = double_softmax(&z);
        let s: f64 = q.as_slice().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        for v in q.as_slice() {
            assert!(
                *v >= lo * (1.0 - 1e-12) && *v <= hi * (1.0 + 1e-12),
                "{v} outside [{lo}, {hi}] for C={c}"
            );
        }
    }
}

fn all_kinds() -> Vec<LossKind> {
    vec![
        LossKind::Ce,
        LossKind::Dspt,
        LossKind::smoothing(),
        LossKind::logit_norm(),
        LossKind::LogitClip { tau: 1.0 },
        LossKind::bootstrap(),
        LossKind::Nce,
        LossKind::gce(),
        LossKind::SquareNorm,
        LossKind::SelectCe,
    ]
}

#[test]
fn finite_difference_sweep_all_losses() {
    let mut r = rng::rng(12);
    for kind in all_kinds() {
        let mut checked = 0;
        while checked < 1000 {
            let c = r.gen_range(2..=20);
            let scale = 10f64.powf(r.gen_range(-1.0..0.8));
            let z = random_z(&mut r, c, scale);
            if let LossKind::LogitClip { tau } = kind {
                // the clip is not differentiable on the sphere of radius tau
                if (l2_norm(&z) - tau).abs() < 1e-3 {
                    continue;
                }
            }
            let y = r.gen_range(0..c);
            let z = LogitVector::new(z).unwrap();
            let analytic = kind.eval(&z, y).unwrap().grad;
            let fd = fd_gradient(kind, &z, y, 1e-5).unwrap();
            let err = gradient_rel_error(&analytic, &fd);
            assert!(
                err < 1e-4,
                "{kind}: relative error {err} at z={:?}, y={y}",
                z.as_slice()
            );
            checked += 1;
        }
    }
}

fn logits_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (2usize..40).prop_flat_map(|c| (prop::collection::vec(-80.0f64..80.0, c), 0..c))
}

proptest! {
    #[test]
    fn dspt_value_within_bounds((z, y) in logits_strategy()) {
        let c = z.len();
        let (lo, hi) = dspt_loss_bounds(c);
        let v = LossKind::Dspt.eval(&LogitVector::new(z).unwrap(), y).unwrap().value;
        prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
    }

    #[test]
    fn gradient_l1_at_most_two((z, y) in logits_strategy()) {
        let z = LogitVector::new(z).unwrap();
        for kind in [LossKind::Ce, LossKind::Dspt] {
            let g = kind.eval(&z, y).unwrap();
            prop_assert!(g.grad_l1() <= 2.0 + 1e-12);
            // both gradients sum to zero
            prop_assert!(g.grad.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn dspt_gradient_never_exceeds_ce((z, y) in logits_strategy()) {
        let z = LogitVector::new(z).unwrap();
        let ce = LossKind::Ce.eval(&z, y).unwrap().grad_l1();
        let ds = LossKind::Dspt.eval(&z, y).unwrap().grad_l1();
        prop_assert!(ds <= ce + 1e-12, "dspt {ds} > ce {ce}");
    }

    #[test]
    fn losses_are_shift_invariant((z, y) in logits_strategy(), shift in -50.0f64..50.0) {
        let a = LogitVector::new(z.clone()).unwrap();
        let b = LogitVector::new(z.iter().map(|v| v + shift).collect()).unwrap();
        for kind in [LossKind::Ce, LossKind::Dspt, LossKind::Nce, LossKind::gce()] {
            let (ea, eb) = (kind.eval(&a, y).unwrap(), kind.eval(&b, y).unwrap());
            prop_assert!((ea.value - eb.value).abs() < 1e-9 * (1.0 + ea.value.abs()));
        }
    }

    #[test]
    fn max_probability_grows_with_scale(seed in 0u64..1000, s1 in 0.1f64..50.0, ds in 0.0f64..50.0) {
        let mut r = rng::rng(seed);
        let (c, d) = (5, 8);
        let mut anchors = random_z(&mut r, c * d, 1.0);
        for row in anchors.chunks_mut(d) {
            let n = l2_norm(row);
            row.iter_mut().for_each(|v| *v /= n);
        }
        let mut x = random_z(&mut r, d, 1.0);
        let n = l2_norm(&x);
        x.iter_mut().for_each(|v| *v /= n);
        let top = |scale: f64| {
            let m = PrototypeModel::new(anchors.clone(), c, d, scale, ShiftMode::Shared).unwrap();
            let p = softmax(&m.forward(&x).unwrap());
            p.as_slice().iter().cloned().fold(0.0, f64::max)
        };
        prop_assert!(top(s1 + ds) >= top(s1) - 1e-12);
    }

    #[test]
    fn forward_logits_bounded_by_scale(seed in 0u64..1000, scale in 0.5f64..60.0) {
        let mut r = rng::rng(seed);
        let (c, d) = (4, 6);
        let mut anchors = random_z(&mut r, c * d, 1.0);
        for row in anchors.chunks_mut(d) {
            let n = l2_norm(row);
            row.iter_mut().for_each(|v| *v /= n);
        }
        let mut m = PrototypeModel::new(anchors, c, d, scale, ShiftMode::PerClass).unwrap();
        m.set_shift(random_z(&mut r, c * d, 0.3)).unwrap();
        let mut x = random_z(&mut r, d, 1.0);
        let n = l2_norm(&x);
        x.iter_mut().for_each(|v| *v /= n);
        let z = m.forward(&x).unwrap();
        prop_assert!(z.as_slice().iter().all(|v| v.abs() <= scale * (1.0 + 1e-12)));
    }
}

#[test]
fn confident_wrong_gradients() {
    // CE saturates at 2, the double-softmax gradient vanishes
    for gap in [10.0, 20.0, 40.0] {
        let z = LogitVector::new(vec![gap, 0.0, 0.0, 0.0]).unwrap();
        let ce = LossKind::Ce.eval(&z, 2).unwrap().grad_l1();
        let ds = LossKind::Dspt.eval(&z, 2).unwrap().grad_l1();
        let delta: f64 = softmax(&z).as_slice()[1..].iter().sum();
        assert!((ce - 2.0).abs() < 3.0 * delta + 1e-15);
        assert!(ds <= 5.0 * delta);
        assert!(l1_norm(&LossKind::Ce.eval(&z, 0).unwrap().grad) < 2.0 * delta + 1e-15);
    }
}
