//! Independent reference computations and property checks shared by the
//! integration tests and the acceptance binary.
#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::TAU;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rfqd_core::env::{make_room, RegionKind, RobotState, SafetyRegion};
use rfqd_core::imagination::Candidate;
use rfqd_core::model::ImaginedEpisode;
use rfqd_core::qd::{iso_dd, Archive, Descriptor, Genotype, GridSpec, Origin, Solution};
use rfqd_core::runner::{run, RunConfig, Variant};
use rfqd_core::selection::{apply_safety_constraint, recovery_policy, SafetyConstraintKind};

// ---------------------------------------------------------------- oracles

pub fn oracle_cell(bd: (f64, f64), resolution: usize, bd_max: f64) -> (usize, usize) {
    let one = |v: f64| {
        let k = ((v + bd_max) / (2.0 * bd_max) * resolution as f64).floor();
        (k.max(0.0) as usize).min(resolution - 1)
    };
    (one(bd.0), one(bd.1))
}

/// Signed distances to every constraint feature, walls first.
pub fn feature_distances(region: &SafetyRegion, x: f64, y: f64) -> Vec<f64> {
    match &region.kind {
        RegionKind::Circle { radius } => vec![radius - (x * x + y * y).sqrt()],
        RegionKind::Room {
            half_width,
            obstacles,
        } => {
            let mut d = vec![half_width - x, half_width + x, half_width - y, half_width + y];
            for o in obstacles {
                d.push(((x - o.cx).powi(2) + (y - o.cy).powi(2)).sqrt() - o.radius);
            }
            d
        }
    }
}

pub fn oracle_distance(region: &SafetyRegion, x: f64, y: f64) -> f64 {
    feature_distances(region, x, y)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

pub fn oracle_epsilon(region: &SafetyRegion, x: f64, y: f64) -> f64 {
    ((oracle_distance(region, x, y) - region.beta) / (region.d_max - region.beta)).min(1.0)
}

/// Gap between the nearest and second-nearest feature; small gaps mark the
/// non-smooth ridge of the distance field.
pub fn feature_gap(region: &SafetyRegion, x: f64, y: f64) -> f64 {
    let mut d = feature_distances(region, x, y);
    if d.len() < 2 {
        return f64::INFINITY;
    }
    d.sort_by(f64::total_cmp);
    d[1] - d[0]
}

pub fn central_difference(region: &SafetyRegion, x: f64, y: f64, h: f64) -> [f64; 2] {
    [
        (region.epsilon(x + h, y) - region.epsilon(x - h, y)) / (2.0 * h),
        (region.epsilon(x, y + h) - region.epsilon(x, y - h)) / (2.0 * h),
    ]
}

pub fn oracle_contextual_threshold(eps: f64) -> f64 {
    let e = eps.clamp(0.0, 1.0);
    e - e * e
}

/// Hand-written constraint test from the raw formulas.
pub fn oracle_passes(kind: SafetyConstraintKind, region: &SafetyRegion, s: (f64, f64), s_next: (f64, f64)) -> bool {
    let eps = oracle_epsilon(region, s.0, s.1);
    let eps_next = oracle_epsilon(region, s_next.0, s_next.1);
    match kind {
        SafetyConstraintKind::SoftOnly => true,
        SafetyConstraintKind::Minimal => eps_next > 0.0,
        SafetyConstraintKind::Contextual => eps_next > oracle_contextual_threshold(eps),
        SafetyConstraintKind::GradientMinimal | SafetyConstraintKind::GradientContextual => {
            let g = region.epsilon_gradient(s.0, s.1);
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if gn == 0.0 {
                return eps_next > 0.0;
            }
            let u = (s_next.0 - s.0, s_next.1 - s.1);
            let un = (u.0 * u.0 + u.1 * u.1).sqrt();
            if un < 1e-6 {
                return true;
            }
            let dot = (u.0 * g[0] + u.1 * g[1]) / (un * gn);
            if kind == SafetyConstraintKind::GradientMinimal {
                dot >= 0.0
            } else {
                dot >= oracle_contextual_threshold(eps)
            }
        }
    }
}

/// Decoded actions of an eight-gene genotype, evaluated by hand.
pub fn oracle_actions(g: &[f64], a_max: f64, steps: usize) -> Vec<[f64; 3]> {
    let amp = [a_max * g[0], a_max * g[1], a_max * g[2]];
    let freq = [0.5 + 1.5 * g[3], 0.5 + 1.5 * g[4], 0.5 + 1.5 * g[5]];
    let phase = [(TAU * g[6]) % TAU, 0.0, (TAU * g[7]) % TAU];
    (0..steps)
        .map(|t| {
            let mut a = [0.0; 3];
            for i in 0..3 {
                a[i] = amp[i] * (TAU * freq[i] * t as f64 / steps as f64 + phase[i]).sin();
            }
            a
        })
        .collect()
}

pub fn oracle_effort(actions: &[[f64; 3]], a_max: f64) -> f64 {
    let mut total = 0.0;
    for a in actions {
        total += a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
    }
    -(total / actions.len() as f64) / (3.0 * a_max * a_max)
}

/// Mean L2 distance over every ordered pair `i != j`.
pub fn oracle_disagreement(means: &[[f64; 3]]) -> f64 {
    let mut sum = 0.0;
    let mut pairs = 0;
    for (i, a) in means.iter().enumerate() {
        for (j, b) in means.iter().enumerate() {
            if i != j {
                sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                pairs += 1;
            }
        }
    }
    sum / pairs as f64
}

/// Iso+LineDD from explicit draws: `D` isotropic normals then one line normal.
pub fn oracle_iso_dd(x1: &[f64], x2: &[f64], s1: f64, s2: f64, iso: &[f64], line: f64) -> Vec<f64> {
    x1.iter()
        .zip(x2)
        .zip(iso)
        .map(|((a, b), n)| (a + s1 * n + s2 * (b - a) * line).clamp(0.0, 1.0))
        .collect()
}

pub fn draw_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Candidate whose imagined displacement is `ego` (start-pose frame).
pub fn candidate_with_ego(ego: [f64; 3], mu_d: f64) -> Candidate {
    Candidate {
        solution: Solution {
            genotype: Genotype::filled(8, 0.5),
            bd: Descriptor::new(ego[0].clamp(-1.0, 1.0), ego[1].clamp(-1.0, 1.0)),
            fitness: -0.1,
            origin: Origin::Imagined,
            disagreement: mu_d,
        },
        imagined: ImaginedEpisode {
            predicted_bd: Descriptor::new(ego[0].clamp(-1.0, 1.0), ego[1].clamp(-1.0, 1.0)),
            predicted_fitness: -0.1,
            disagreement: mu_d,
            ego_displacement: ego,
        },
        novelty_at_generation: 0.0,
    }
}

/// Candidate that lands on world point `to` when started from `s`.
pub fn candidate_to(s: &RobotState, to: (f64, f64), mu_d: f64) -> Candidate {
    let ego = s.ego_delta(&RobotState::new(to.0, to.1, s.theta));
    candidate_with_ego(ego, mu_d)
}

// ------------------------------------------------------- property checks

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn finish(r: Result<(), proptest::test_runner::TestError<impl std::fmt::Debug>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

/// Every occupied cell holds the best fitness ever offered to it, fill count
/// matches the number of distinct offered cells, and each elite sits in its
/// own cell. `cases * offers` offers in total.
pub fn check_archive_max_offer(cases: u32, offers: usize) -> Result<(), String> {
    let strategy = (
        1usize..=40,
        0.1f64..2.0,
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..=0.0), offers),
    );
    finish(runner(cases).run(&strategy, |(resolution, bd_max, log)| {
        let grid = GridSpec { resolution, bd_max };
        let mut archive = Archive::new(grid, 8);
        let mut best: HashMap<(usize, usize), f64> = HashMap::new();
        let mut prev_fill = 0;
        for (bx, by, f) in log {
            let bd = Descriptor::clamped(bx * bd_max, by * bd_max, bd_max);
            archive.try_add(Solution::real(Genotype::filled(8, 0.5), bd, f));
            let cell = oracle_cell((bd.x, bd.y), resolution, bd_max);
            let e = best.entry(cell).or_insert(f64::NEG_INFINITY);
            *e = e.max(f);
            prop_assert!(archive.fill_count() >= prev_fill);
            prev_fill = archive.fill_count();
        }
        prop_assert_eq!(archive.fill_count(), best.len());
        for ((r, c), elite) in archive.iter() {
            prop_assert_eq!(Some(&elite.solution.fitness), best.get(&(r, c)));
            prop_assert_eq!(grid.cell_index(&elite.solution.bd), (r, c));
        }
        Ok(())
    }))
}

/// Degenerate identities, output range and reproduction from the raw draws.
pub fn check_iso_dd(cases: u32) -> Result<(), String> {
    let strategy = (
        proptest::collection::vec(0.0f64..=1.0, 8),
        proptest::collection::vec(0.0f64..=1.0, 8),
        0.0f64..0.5,
        0.0f64..2.0,
        any::<u64>(),
    );
    finish(runner(cases).run(&strategy, |(a, b, s1, s2, seed)| {
        let x1 = Genotype::new(a.clone()).unwrap();
        let x2 = Genotype::new(b.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(iso_dd(&x1, &x2, 0.0, 0.0, &mut rng), x1.clone());
        prop_assert_eq!(iso_dd(&x1, &x1, 0.0, s2, &mut rng), x1.clone());

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reference = rng.clone();
        let child = iso_dd(&x1, &x2, s1, s2, &mut rng);
        prop_assert!(child.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        let iso = draw_normals(&mut reference, 8);
        let line: f64 = reference.sample(StandardNormal);
        let expected = oracle_iso_dd(&a, &b, s1, s2, &iso, line);
        for (got, want) in child.as_slice().iter().zip(&expected) {
            prop_assert!((got - want).abs() <= 1e-12, "{} vs {}", got, want);
        }
        Ok(())
    }))
}

/// ε against the brute-force distance field and ∇ε against central
/// differences, on circles and seeded rooms away from ridges.
pub fn check_epsilon_gradient(cases: u32) -> Result<(), String> {
    let strategy = (0usize..=15, 0u64..50, 0.0f64..0.3, -2.4f64..2.4, -2.4f64..2.4, any::<bool>());
    finish(runner(cases).run(&strategy, |(n, seed, beta, x, y, circle)| {
        let region = if circle {
            SafetyRegion::circle(2.0, beta).unwrap()
        } else {
            make_room(n, seed, beta).unwrap()
        };
        let (x, y) = if circle { (x, y) } else { (x.clamp(-1.99, 1.99), y.clamp(-1.99, 1.99)) };
        let eps = region.epsilon(x, y);
        prop_assert!(eps <= 1.0);
        prop_assert!((eps - oracle_epsilon(&region, x, y)).abs() <= 1e-12);
        prop_assert_eq!(eps > 0.0, oracle_distance(&region, x, y) > beta);
        let degenerate = if circle { x.hypot(y) < 1e-3 } else { feature_gap(&region, x, y) < 1e-3 };
        if degenerate || eps >= 1.0 {
            return Ok(());
        }
        let g = region.epsilon_gradient(x, y);
        let fd = central_difference(&region, x, y, 1e-6);
        prop_assert!((g[0] - fd[0]).abs() <= 1e-4 && (g[1] - fd[1]).abs() <= 1e-4, "{:?} vs {:?}", g, fd);
        let norm = g[0].hypot(g[1]);
        prop_assert!((norm - 1.0 / (region.d_max - beta)).abs() <= 1e-9);
        Ok(())
    }))
}

/// Nesting of the hard constraints and agreement with the raw formulas,
/// one random `(s, s')` pair per case.
pub fn check_constraint_subsets(cases: u32) -> Result<(), String> {
    let strategy = (0.0f64..2.0, 0.0f64..TAU, -TAU..TAU, 0.0f64..1.0, 0.0f64..TAU, any::<bool>(), 0u64..20);
    finish(runner(cases).run(&strategy, |(r, phi, theta, step, dir, circle, seed)| {
        let region = if circle {
            SafetyRegion::circle(2.0, 0.0).unwrap()
        } else {
            make_room(10, seed, 0.0).unwrap()
        };
        let (x, y) = if circle {
            (r * phi.cos(), r * phi.sin())
        } else {
            ((r - 1.0) * 1.9, (phi / TAU * 2.0 - 1.0) * 1.9)
        };
        let eps = region.epsilon(x, y);
        if !(eps > 0.0 && eps <= 1.0) {
            return Ok(());
        }
        let s = RobotState::new(x, y, theta);
        let to = (x + step * dir.cos(), y + step * dir.sin());
        let cands = [candidate_to(&s, to, 0.0)];
        let kept = |kind| !apply_safety_constraint(&cands, &s, &region, kind).is_empty();
        let pass: HashMap<SafetyConstraintKind, bool> =
            SafetyConstraintKind::ALL.iter().map(|&k| (k, kept(k))).collect();
        let end = cands[0].imagined.end_state(&s);
        for kind in SafetyConstraintKind::ALL {
            prop_assert_eq!(pass[&kind], oracle_passes(kind, &region, (x, y), (end.x, end.y)), "{:?}", kind);
        }
        use SafetyConstraintKind::*;
        prop_assert!(pass[&SoftOnly]);
        prop_assert!(!pass[&Contextual] || pass[&Minimal]);
        prop_assert!(!pass[&GradientContextual] || pass[&GradientMinimal]);
        Ok(())
    }))
}

/// The recovery pick has the largest projected ε of the whole archive, and
/// ties go to higher fitness.
pub fn check_recovery_argmax(cases: u32) -> Result<(), String> {
    let strategy = (
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..=0.0), 1..60),
        2.0f64..3.5,
        0.0f64..TAU,
        -TAU..TAU,
    );
    finish(runner(cases).run(&strategy, |(members, r, phi, theta)| {
        let region = SafetyRegion::circle(2.0, 0.0).unwrap();
        let mut archive = Archive::new(GridSpec::default(), 8);
        for (bx, by, f) in members {
            archive.try_add(Solution::real(Genotype::filled(8, 0.5), Descriptor::new(bx, by), f));
        }
        let s = RobotState::new(r * phi.cos(), r * phi.sin(), theta);
        let rec = recovery_policy(&archive, &s, &region).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let chosen = archive.get(rec.cell.0, rec.cell.1).unwrap();
        for (_, e) in archive.iter() {
            let bd = e.solution.bd;
            let (sn, cs) = s.theta.sin_cos();
            let px = s.x + cs * bd.x - sn * bd.y;
            let py = s.y + sn * bd.x + cs * bd.y;
            let eps = oracle_epsilon(&region, px, py);
            prop_assert!(rec.eps_next >= eps - 1e-12);
            if (eps - rec.eps_next).abs() == 0.0 {
                prop_assert!(chosen.solution.fitness >= e.solution.fitness);
            }
        }
        Ok(())
    }))
}

/// Two identical seeded runs of every variant give identical archives,
/// counters and logs.
pub fn check_run_determinism(evaluations: usize) -> Result<(), String> {
    for variant in [Variant::Rfqd, Variant::Daqd, Variant::VanillaQd] {
        let cfg = RunConfig {
            variant,
            seed: 11,
            max_evaluations: evaluations,
            ..RunConfig::default()
        };
        let a = run(&cfg).map_err(|e| e.to_string())?;
        let b = run(&cfg).map_err(|e| e.to_string())?;
        if a.archive.checksum() != b.archive.checksum()
            || a.counters != b.counters
            || a.metrics_csv() != b.metrics_csv()
            || a.selection_log() != b.selection_log()
            || a.trajectory_csv() != b.trajectory_csv()
        {
            return Err(format!("{} runs diverged", variant.name()));
        }
    }
    Ok(())
}

pub fn random_point_in_circle(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let a = TAU * rng.random::<f64>();
    (r * a.cos(), r * a.sin())
}

/// Median imagined μ_d over `probes` random genotypes for an untrained
/// ensemble and for the same ensemble trained on `episodes` real episodes.
pub fn mu_d_untrained_vs_trained(episodes: usize, probes: usize, seed: u64) -> (f64, f64) {
    use rfqd_core::env::{RobotParams, Simulator};
    use rfqd_core::model::{imagine_batch, EnsembleModel, ModelConfig, ReplayBuffer, RolloutSpec, TrainConfig};

    let params = RobotParams::default();
    let sim = Simulator::new(params, SafetyRegion::circle(2.0, 0.0).unwrap(), 20, true, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new();
    for _ in 0..episodes {
        let g = Genotype::random(8, &mut rng);
        let ep = sim.execute_behaviour(RobotState::default(), &g, &mut rng).unwrap();
        buffer.push_episode(&ep);
    }
    let untrained = EnsembleModel::new(ModelConfig::default(), &mut rng);
    let mut trained = untrained.clone();
    let cfg = TrainConfig {
        epochs: 10,
        max_samples: None,
        ..TrainConfig::default()
    };
    trained.train(&buffer, &cfg, &mut rng).unwrap();

    let spec = RolloutSpec {
        params,
        steps: 20,
        bd_max: 0.5,
    };
    let probe: Vec<Genotype> = (0..probes).map(|_| Genotype::random(8, &mut rng)).collect();
    let median = |m: &EnsembleModel| {
        let mut d: Vec<f64> = imagine_batch(m, &probe, &spec).unwrap().iter().map(|e| e.disagreement).collect();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) }
    };
    (median(&untrained), median(&trained))
}

/// Worst relative error between the analytic NLL gradient of a tiny
/// network and central differences.
pub fn mlp_gradient_error(hidden: usize, seed: u64) -> f64 {
    use ndarray::Array2;
    use rfqd_core::model::Mlp;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Mlp::new(6, hidden, 3, &mut rng);
    let x = Array2::from_shape_fn((9, 6), |_| rng.random_range(-1.0..1.0));
    let y = Array2::from_shape_fn((9, 3), |_| rng.random_range(-1.0..1.0));
    let (_, grad) = net.nll_grad(&x.view(), &y.view());
    let analytic: Vec<f64> = grad
        .layers
        .iter()
        .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
        .collect();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let mut plus = net.clone();
        *plus.params_mut().nth(k).unwrap() += h;
        let mut minus = net.clone();
        *minus.params_mut().nth(k).unwrap() -= h;
        let fd = (plus.nll(&x.view(), &y.view()) - minus.nll(&x.view(), &y.view())) / (2.0 * h);
        // absolute floor for parameters whose gradient is numerically zero
        let err = (fd - a).abs() / a.abs().max(1e-3);
        worst = worst.max(err);
    }
    worst
}
