use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfqd_core::env::RobotState;
use rfqd_core::qd::GridSpec;
use rfqd_core::runner::{random_archive_initialization, run, EnvConfig, Mode, RunConfig, RunReport, Variant};

fn config(variant: Variant, max_evaluations: usize, seed: u64) -> RunConfig {
    RunConfig {
        variant,
        seed,
        max_evaluations,
        ..RunConfig::default()
    }
}

fn check_accounting(r: &RunReport) {
    let n = r.config.max_evaluations;
    assert_eq!(r.counters.real_evaluations, n as u64);
    assert_eq!(r.metrics.len(), n);
    for (i, m) in r.metrics.iter().enumerate() {
        assert_eq!(m.eval, i as u64 + 1);
    }
    assert!(r.metrics.windows(2).all(|w| w[1].coverage >= w[0].coverage));
    assert!(r.metrics.windows(2).all(|w| w[1].qd_score >= w[0].qd_score));
    let last = r.metrics.last().unwrap();
    assert_eq!(last.archive_size, r.archive.fill_count());
    assert_eq!(last.resets, r.counters.resets);
    let recoveries = r.metrics.iter().filter(|m| m.mode == Mode::Recovery).count() as u64;
    assert_eq!(recoveries, r.counters.recovery_steps);
    assert_eq!(r.buffer.len(), n * r.config.env.steps);
    let added = r.counters.added + r.counters.replaced + r.counters.rejected;
    assert!(added <= n as u64);
}

#[test]
fn initialisation_only_run() {
    let r = run(&config(Variant::Rfqd, 50, 1)).unwrap();
    check_accounting(&r);
    // recoveries may interleave with the random behaviours, nothing else
    assert!(r.metrics.iter().all(|m| m.mode != Mode::Normal));
    assert!(r.metrics.iter().any(|m| m.mode == Mode::Init));
    assert!(r.archive.fill_count() <= 50);
    assert_eq!(r.counters.imagined_evaluations, 0);
}

#[test]
fn every_variant_honours_the_budget() {
    for variant in [Variant::Rfqd, Variant::Daqd, Variant::VanillaQd] {
        let r = run(&config(variant, 150, 2)).unwrap();
        check_accounting(&r);
        assert_eq!(r.model.is_some(), variant.uses_model());
    }
}

#[test]
fn daqd_executes_without_constraints() {
    let r = run(&config(Variant::Daqd, 200, 3)).unwrap();
    assert!(!r.selections.is_empty());
    assert!(r.selections.iter().all(|s| s.constraint.is_none()));
    for line in r.selection_log().lines().skip(1) {
        assert_eq!(line.split(',').nth(1), Some("none"));
    }
    assert!(r.counters.imagined_evaluations >= 5 * r.counters.real_evaluations);
}

#[test]
fn vanilla_never_imagines() {
    let r = run(&config(Variant::VanillaQd, 200, 4)).unwrap();
    assert_eq!(r.counters.imagined_evaluations, 0);
    assert_eq!(r.counters.refills, 0);
    assert!(r.final_candidates.is_empty());
}

#[test]
fn rfqd_never_teleports() {
    for seed in 0..3 {
        let r = run(&config(Variant::Rfqd, 200, seed)).unwrap();
        assert_eq!(r.counters.reset_free_violations, 0);
        assert_eq!(r.counters.resets, 0);
        assert!(r.selections.iter().all(|s| s.mode != Mode::Normal || s.constraint.is_some()));
    }
}

#[test]
fn random_initialisation_stays_near_the_start() {
    let env = EnvConfig::default();
    let sim = env.simulator().unwrap();
    let grid = GridSpec {
        resolution: 40,
        bd_max: env.bd_max,
    };
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (archive, buffer, end) =
            random_archive_initialization(&sim, RobotState::default(), 50, grid, 8, &mut rng).unwrap();
        assert!(archive.fill_count() <= 50);
        assert_eq!(buffer.len(), 50 * env.steps);
        // reset threshold is 0.5 m beyond the 2 m boundary
        assert!(end.x.hypot(end.y) < 2.5, "seed {seed}: {end:?}");
    }
}

#[test]
fn trajectory_and_outside_counter_agree() {
    let r = run(&config(Variant::VanillaQd, 300, 5)).unwrap();
    let outside = r.metrics.iter().filter(|m| m.eps_end <= 0.0).count() as u64;
    assert_eq!(outside, r.counters.steps_outside_safety);
    assert!(r.trajectory_csv().starts_with(rfqd_core::runner::TRAJECTORY_HEADER));
    assert!(r.metrics_csv().starts_with(rfqd_core::runner::METRICS_HEADER));
    assert_eq!(r.metrics_csv().lines().count(), 301);
}

#[test]
fn config_toml_round_trip_and_validation() {
    let cfg = config(Variant::Daqd, 400, 9);
    let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert!(RunConfig::from_toml("max_evaluations = 10\ninit_evaluations = 50\n").is_err());
    assert!(RunConfig::from_toml("variant = \"nope\"\n").is_err());
    let partial = RunConfig::from_toml("variant = \"vanilla-qd\"\nmax_evaluations = 70\n").unwrap();
    assert_eq!(partial.variant, Variant::VanillaQd);
    assert_eq!(partial.init_evaluations, RunConfig::default().init_evaluations);
}

#[test]
fn scaling_divides_the_real_budget_only() {
    let cfg = RunConfig::default().scaled(10);
    assert_eq!(cfg.max_evaluations, 1000);
    assert_eq!(cfg.imagination.budget, RunConfig::default().imagination.budget);
}
