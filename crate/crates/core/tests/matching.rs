mod common;

use common::{gradient_check_cases, hungarian_vs_exhaustive, unit};
use pcl_core::dataset::BoundingBox;
use pcl_core::embedding::EmbeddingVector;
use pcl_core::matching::{
    classification_loss, giou, giou_with_grad, hungarian_match, matching_cost, score, CostWeights,
    ScoreParams,
};
use pcl_core::rng::seeded;
use pcl_core::Error;
use proptest::prelude::*;
use rand::Rng as _;

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

#[test]
fn score_examples() {
    let p = ScoreParams::default();
    let e = unit(&[1.0, 0.0]);
    let o = unit(&[0.0, 1.0]);
    assert!((score(&e, &e, &p).unwrap() - logistic(24.7)).abs() < 1e-12);
    assert!((score(&e, &o, &p).unwrap() - 1.0 / (1.0 + 0.3f64.exp())).abs() < 1e-12);
    assert!((score(&e, &o, &p).unwrap() - 0.425557).abs() < 1e-6);
    let unit_params = ScoreParams {
        logit_scale: 1.0,
        logit_shift: 0.0,
    };
    assert!((score(&e, &e, &unit_params).unwrap() - 0.731059).abs() < 1e-6);
}

#[test]
fn loss_examples() {
    let e = unit(&[1.0, 0.0]);
    let o = unit(&[0.0, 1.0]);
    let half = ScoreParams {
        logit_scale: 25.0,
        logit_shift: 0.0,
    };
    let (l, _) = classification_loss(&[vec![1.0, 0.0]], std::slice::from_ref(&o), &[vec![true]], &half).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-12);

    let p = ScoreParams::default();
    let neg = -(1.0 - 1.0 / (1.0 + 0.3f64.exp())).ln();
    let (l, _) = classification_loss(&[vec![0.0, 1.0]], std::slice::from_ref(&e), &[vec![false]], &p).unwrap();
    assert!((l - neg).abs() < 1e-12);
    assert!((l - 0.554355).abs() < 1e-6);

    let targets: Vec<EmbeddingVector> = (1..4)
        .map(|k| {
            let mut v = vec![0.0; 4];
            v[k] = 1.0;
            unit(&v)
        })
        .collect();
    let (l, _) = classification_loss(&[vec![1.0, 0.0, 0.0, 0.0]], &targets, &[vec![false; 3]], &p).unwrap();
    assert!((l - 3.0 * neg).abs() < 1e-12);
}

#[test]
fn loss_shape_errors() {
    let p = ScoreParams::default();
    let e = unit(&[1.0, 0.0]);
    assert!(matches!(
        classification_loss(&[vec![1.0, 0.0, 0.0]], std::slice::from_ref(&e), &[vec![true]], &p),
        Err(Error::Shape(_))
    ));
    assert!(matches!(
        classification_loss(&[vec![1.0, 0.0]], &[e], &[vec![true, false]], &p),
        Err(Error::Shape(_))
    ));
}

#[test]
fn gradient_matches_central_differences() {
    let worst = gradient_check_cases(20, 11);
    assert!(worst <= 1e-6, "relative error {worst}");
}

#[test]
fn loss_is_finite_at_extreme_logits() {
    let p = ScoreParams {
        logit_scale: 30.0,
        logit_shift: 0.0,
    };
    let e = unit(&[1.0, 0.0]);
    for (z, y) in [([1.0, 0.0], false), ([-1.0, 0.0], true)] {
        let (l, g) = classification_loss(&[z.to_vec()], std::slice::from_ref(&e), &[vec![y]], &p).unwrap();
        assert!(l.is_finite() && (l - 30.0).abs() < 1e-9);
        assert!(g[0].iter().all(|v| v.is_finite()));
    }
}

#[test]
fn giou_examples() {
    let a = bx(0.0, 0.0, 1.0, 1.0);
    assert_eq!(giou(&a, &a).unwrap(), 1.0);
    assert!((giou(&a, &bx(2.0, 2.0, 3.0, 3.0)).unwrap() - (0.0 - 7.0 / 9.0)).abs() < 1e-12);
    let g = giou(&bx(0.0, 0.0, 2.0, 2.0), &bx(1.0, 1.0, 3.0, 3.0)).unwrap();
    assert!((g - (1.0 / 7.0 - 2.0 / 9.0)).abs() < 1e-12);
    let degenerate = BoundingBox {
        x0: 1.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };
    assert!(matches!(giou(&degenerate, &a), Err(Error::InvalidBox(_))));
}

#[test]
fn giou_gradient_matches_differences() {
    let mut rng = seeded(3);
    let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
    for _ in 0..200 {
        let p = [r(0.0, 0.5), r(0.0, 0.5), r(0.55, 1.0), r(0.55, 1.0)];
        let g = [r(0.0, 0.5), r(0.0, 0.5), r(0.55, 1.0), r(0.55, 1.0)];
        let (_, grad) = giou_with_grad(&p, &g);
        for k in 0..4 {
            let h = 1e-7;
            let mut a = p;
            a[k] += h;
            let mut b = p;
            b[k] -= h;
            let num = (giou_with_grad(&a, &g).0 - giou_with_grad(&b, &g).0) / (2.0 * h);
            assert!((num - grad[k]).abs() < 1e-5, "{num} vs {}", grad[k]);
        }
    }
}

#[test]
fn matching_cost_examples() {
    let e = unit(&[1.0, 0.0]);
    let o = unit(&[0.0, 1.0]);
    let b = bx(0.1, 0.1, 0.5, 0.5);
    let p = ScoreParams::default();
    let c = matching_cost((&e, &b), (&e, &b), &CostWeights::default(), &p).unwrap();
    assert!((c - (-2.0 * logistic(24.7) - 2.0)).abs() < 1e-12);
    assert!((c + 4.0).abs() < 1e-9);
    let class_only = CostWeights {
        class: 1.0,
        l1: 0.0,
        giou: 0.0,
    };
    let c = matching_cost((&e, &b), (&o, &bx(0.6, 0.6, 0.9, 0.9)), &class_only, &p).unwrap();
    assert!((c + 0.425557).abs() < 1e-6);
    let zero = CostWeights {
        class: 0.0,
        l1: 0.0,
        giou: 0.0,
    };
    assert_eq!(matching_cost((&e, &b), (&o, &bx(0.6, 0.6, 0.9, 0.9)), &zero, &p).unwrap(), 0.0);
}

#[test]
fn hungarian_examples() {
    let r = hungarian_match(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
    assert_eq!(r.assignment, vec![(0, 0), (1, 1)]);
    assert_eq!(r.total_cost, 2.0);
    let r = hungarian_match(&[vec![7.0]]).unwrap();
    assert_eq!(r.assignment, vec![(0, 0)]);
    assert_eq!(r.total_cost, 7.0);
    let same = vec![vec![1.0, 2.0, 3.0]; 4];
    let r = hungarian_match(&same).unwrap();
    assert_eq!(r.assignment, vec![(0, 0), (1, 1), (2, 2)]);
    assert!(matches!(
        hungarian_match(&[vec![1.0, 2.0]]),
        Err(Error::InfeasibleMatch { queries: 1, gts: 2 })
    ));
}

#[test]
fn hungarian_matches_exhaustive_search() {
    hungarian_vs_exhaustive(200, 21).unwrap();
}

proptest! {
    #[test]
    fn score_increases_with_cosine(c1 in -1.0f64..1.0, c2 in -1.0f64..1.0) {
        let p = ScoreParams::default();
        prop_assume!(c1 < c2);
        prop_assert!(p.probability(c1) <= p.probability(c2));
    }

    #[test]
    fn score_is_scale_invariant(
        a in prop::collection::vec(-1.0f64..1.0, 4),
        b in prop::collection::vec(-1.0f64..1.0, 4),
        s in 0.1f64..10.0,
    ) {
        let p = ScoreParams::default();
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let base = pcl_core::matching::raw_cosine(&a, &b).unwrap();
        let sa: Vec<f64> = a.iter().map(|v| v * s).collect();
        let sb: Vec<f64> = b.iter().map(|v| v * s).collect();
        let scaled = pcl_core::matching::raw_cosine(&sa, &sb).unwrap();
        prop_assert!((p.probability(base) - p.probability(scaled)).abs() < 1e-12);
    }

    #[test]
    fn giou_never_exceeds_iou(
        a in (0.0f64..0.5, 0.0f64..0.5, 0.51f64..1.0, 0.51f64..1.0),
        b in (0.0f64..0.5, 0.0f64..0.5, 0.51f64..1.0, 0.51f64..1.0),
    ) {
        let a = bx(a.0, a.1, a.2, a.3);
        let b = bx(b.0, b.1, b.2, b.3);
        let g = giou(&a, &b).unwrap();
        prop_assert!(g <= a.iou(&b) + 1e-12);
        prop_assert!(g > -1.0 && g <= 1.0);
        if a.contains(&b) {
            prop_assert!((g - a.iou(&b)).abs() < 1e-12);
        }
    }
}
