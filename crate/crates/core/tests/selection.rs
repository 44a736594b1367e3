mod support;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfqd_core::env::{RobotState, SafetyRegion};
use rfqd_core::qd::{Archive, Descriptor, Genotype, GridSpec, Solution};
use rfqd_core::selection::{
    apply_safety_constraint, prioritize_candidates, recovery_policy, Priorities, SafetyConstraintKind,
};
use support::{candidate_to, candidate_with_ego};

fn circle() -> SafetyRegion {
    SafetyRegion::circle(2.0, 0.0).unwrap()
}

fn keeps(kind: SafetyConstraintKind, s: &RobotState, to: (f64, f64)) -> bool {
    !apply_safety_constraint(&[candidate_to(s, to, 0.0)], s, &circle(), kind).is_empty()
}

#[test]
fn contextual_equals_minimal_at_safest_point() {
    let s = RobotState::new(0.0, 0.0, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cands: Vec<_> = (0..500)
        .map(|_| candidate_with_ego([rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.0], 0.0))
        .collect();
    let region = circle();
    assert_eq!(region.epsilon(s.x, s.y), 1.0);
    assert_eq!(support::oracle_contextual_threshold(1.0), 0.0);
    let minimal = apply_safety_constraint(&cands, &s, &region, SafetyConstraintKind::Minimal);
    let contextual = apply_safety_constraint(&cands, &s, &region, SafetyConstraintKind::Contextual);
    assert_eq!(minimal, contextual);
    assert!(!minimal.is_empty() && minimal.len() < cands.len());
}

#[test]
fn contextual_boundary_at_half_safety() {
    // ε(s) = 0.5 at radius 1 so the threshold is 0.25, reached at radius 1.5
    let s = RobotState::new(1.0, 0.0, 0.0);
    assert!((circle().epsilon(1.0, 0.0) - 0.5).abs() < 1e-15);
    assert!(keeps(SafetyConstraintKind::Contextual, &s, (1.49, 0.0)));
    assert!(!keeps(SafetyConstraintKind::Contextual, &s, (1.51, 0.0)));
    assert!(keeps(SafetyConstraintKind::Minimal, &s, (1.99, 0.0)));
    assert!(!keeps(SafetyConstraintKind::Minimal, &s, (2.01, 0.0)));
}

#[test]
fn gradient_bounds_at_half_safety() {
    let s = RobotState::new(1.0, 0.0, 0.0);
    use SafetyConstraintKind::*;
    // along the gradient: dot = 1
    assert!(keeps(GradientContextual, &s, (0.8, 0.0)));
    // perpendicular: dot = 0, passes the closed minimal bound only
    assert!(keeps(GradientMinimal, &s, (1.0, 0.2)));
    assert!(!keeps(GradientContextual, &s, (1.0, 0.2)));
    // dot = -0.01
    let u = (0.01, (1.0f64 - 1e-4).sqrt());
    assert!(!keeps(GradientMinimal, &s, (1.0 + 0.2 * u.0, 0.2 * u.1)));
    // dot just above and below ε(1-ε) = 0.25
    for (dot, pass) in [(0.26, true), (0.24, false)] {
        let u = (-dot, (1.0f64 - dot * dot).sqrt());
        assert_eq!(keeps(GradientContextual, &s, (1.0 + 0.2 * u.0, 0.2 * u.1)), pass);
    }
    // no movement passes vacuously
    assert!(keeps(GradientContextual, &s, (1.0, 0.0)));
}

#[test]
fn gradient_kinds_degrade_to_minimal_at_centre() {
    let s = RobotState::new(0.0, 0.0, 0.0);
    for kind in [SafetyConstraintKind::GradientMinimal, SafetyConstraintKind::GradientContextual] {
        assert!(keeps(kind, &s, (1.5, 0.0)));
        assert!(!keeps(kind, &s, (2.5, 0.0)));
    }
}

#[test]
fn hard_constraints_on_room_edges() {
    let room = rfqd_core::env::make_room(0, 0, 0.0).unwrap();
    let s = RobotState::new(1.5, 0.0, 0.0);
    let eps = room.epsilon(1.5, 0.0);
    assert!((eps - 0.25).abs() < 1e-12);
    let toward_wall = [candidate_to(&s, (1.9, 0.0), 0.0)];
    let away = [candidate_to(&s, (1.2, 0.0), 0.0)];
    for kind in [SafetyConstraintKind::GradientMinimal, SafetyConstraintKind::GradientContextual] {
        assert!(apply_safety_constraint(&toward_wall, &s, &room, kind).is_empty());
        assert_eq!(apply_safety_constraint(&away, &s, &room, kind), vec![0]);
    }
}

#[test]
fn prioritisation_examples() {
    let region = circle();
    let archive = Archive::new(GridSpec::default(), 8);
    let s = RobotState::new(0.0, 0.0, 0.0);

    let one = [candidate_with_ego([0.3, 0.1, 0.0], 0.5)];
    let scored = prioritize_candidates(&one, &[0], &s, &Priorities::NOVELTY, &archive, &region, 15).unwrap();
    assert_eq!(scored[0].index, 0);
    assert_eq!(scored[0].score, 0.5);

    // ε' = 0.8 and 0.6
    let two = [candidate_with_ego([0.4, 0.0, 0.0], 0.9), candidate_with_ego([0.8, 0.0, 0.0], 0.1)];
    let scored = prioritize_candidates(&two, &[0, 1], &s, &Priorities::SAFETY, &archive, &region, 15).unwrap();
    assert_eq!(scored[0].index, 0);

    let scored =
        prioritize_candidates(&two, &[0, 1], &s, &Priorities::SAFE_AND_CERTAIN, &archive, &region, 15).unwrap();
    assert!((scored[0].eps_next - 0.8).abs() < 1e-12 && (scored[1].eps_next - 0.6).abs() < 1e-12);
    assert_eq!((scored[0].score, scored[1].score), (0.5, 0.5));
    assert_eq!(scored[0].index, 0);

    let scored =
        prioritize_candidates(&two, &[1, 0], &s, &Priorities::SAFE_AND_CERTAIN, &archive, &region, 15).unwrap();
    assert_eq!(scored[0].index, 1);

    assert!(prioritize_candidates(&two, &[], &s, &Priorities::SAFETY, &archive, &region, 15).is_err());
}

#[test]
fn prioritisation_matches_reference_weighting() {
    let region = circle();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut archive = Archive::new(GridSpec::default(), 8);
    for _ in 0..100 {
        let (x, y) = support::random_point_in_circle(&mut rng, 1.0);
        archive.try_add(Solution::real(Genotype::filled(8, 0.5), Descriptor::new(x, y), -0.4));
    }
    let s = RobotState::new(0.5, -0.4, 0.9);
    let cands: Vec<_> = (0..40)
        .map(|_| {
            let (x, y) = support::random_point_in_circle(&mut rng, 0.9);
            candidate_with_ego([x, y, 0.0], rng.random_range(0.0..0.2))
        })
        .collect();
    let safe: Vec<usize> = (0..40).collect();
    let w = Priorities {
        safety: 0.3,
        disagreement: -0.5,
        novelty: 0.2,
    };
    let scored = prioritize_candidates(&cands, &safe, &s, &w, &archive, &region, 15).unwrap();

    let eps: Vec<f64> = cands
        .iter()
        .map(|c| {
            let e = c.imagined.end_state(&s);
            support::oracle_epsilon(&region, e.x, e.y)
        })
        .collect();
    let dis: Vec<f64> = cands.iter().map(|c| c.solution.disagreement).collect();
    let nov: Vec<f64> = cands
        .iter()
        .map(|c| {
            let mut d: Vec<f64> = archive.iter().map(|(_, e)| e.solution.bd.distance(&c.solution.bd)).collect();
            d.sort_by(f64::total_cmp);
            d[..15].iter().sum::<f64>() / 15.0
        })
        .collect();
    let norm = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        v.iter().map(|x| (x - lo) / (hi - lo)).collect::<Vec<_>>()
    };
    let (ne, nd, nn) = (norm(&eps), norm(&dis), norm(&nov));
    let want: Vec<f64> = (0..40).map(|i| 0.3 * ne[i] + 0.5 * (1.0 - nd[i]) + 0.2 * nn[i]).collect();
    for sc in &scored {
        assert!((sc.score - want[sc.index]).abs() < 1e-12);
    }
    let best = (0..40).max_by(|&a, &b| want[a].total_cmp(&want[b]).then(b.cmp(&a))).unwrap();
    assert_eq!(scored[0].index, best);
    assert!(scored.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn recovery_examples() {
    let region = circle();
    let mut archive = Archive::new(GridSpec::default(), 8);
    assert!(recovery_policy(&archive, &RobotState::new(2.3, 0.0, PI), &region).is_err());

    archive.try_add(Solution::real(Genotype::filled(8, 0.1), Descriptor::new(0.0, 0.5), -0.2));
    let r = recovery_policy(&archive, &RobotState::new(2.3, 0.0, PI), &region).unwrap();
    assert_eq!(r.genotype, Genotype::filled(8, 0.1));

    archive.try_add(Solution::real(Genotype::filled(8, 0.2), Descriptor::new(0.5, 0.0), -0.2));
    archive.try_add(Solution::real(Genotype::filled(8, 0.3), Descriptor::new(-0.5, 0.0), -0.2));
    let r = recovery_policy(&archive, &RobotState::new(2.3, 0.0, PI), &region).unwrap();
    assert_eq!(r.genotype, Genotype::filled(8, 0.2));
    assert!((r.projected.x - 1.8).abs() < 1e-12 && r.projected.y.abs() < 1e-12);
}
