mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfqd_core::env::FITNESS_FLOOR;
use rfqd_core::qd::{iso_dd, novelty, AddOutcome, Archive, Descriptor, Genotype, GridSpec, Solution};

fn sol(x: f64, y: f64, f: f64) -> Solution {
    Solution::real(Genotype::filled(8, 0.5), Descriptor::new(x, y), f)
}

#[test]
fn cell_index_corners_and_centre() {
    let grid = GridSpec::default();
    for (bd, want) in [((-1.0, -1.0), (0, 0)), ((1.0, 1.0), (39, 39)), ((0.0, 0.0), (20, 20))] {
        assert_eq!(grid.cell_index(&Descriptor::new(bd.0, bd.1)), want);
        assert_eq!(support::oracle_cell(bd, 40, 1.0), want);
    }
}

#[test]
fn cell_index_agrees_with_reference_on_a_lattice() {
    for &(r, b) in &[(40, 1.0), (7, 0.5), (1, 2.0)] {
        let grid = GridSpec { resolution: r, bd_max: b };
        for i in 0..=200 {
            for j in 0..=20 {
                let x = -b + 2.0 * b * i as f64 / 200.0;
                let y = -b + 2.0 * b * j as f64 / 20.0;
                assert_eq!(grid.cell_index(&Descriptor::new(x, y)), support::oracle_cell((x, y), r, b));
            }
        }
    }
}

#[test]
fn try_add_outcomes() {
    let mut a = Archive::new(GridSpec::default(), 8);
    assert_eq!(a.try_add(sol(0.3, 0.3, -0.7)), AddOutcome::AddedNew);

    let mut a = Archive::new(GridSpec::default(), 8);
    a.try_add(sol(0.1, 0.1, -0.2));
    assert_eq!(a.try_add(sol(0.1, 0.1, -0.5)), AddOutcome::Rejected);
    assert_eq!(a.elite_for(&Descriptor::new(0.1, 0.1)).unwrap().solution.fitness, -0.2);

    let mut a = Archive::new(GridSpec::default(), 8);
    a.try_add(sol(0.1, 0.1, -0.5));
    assert_eq!(a.try_add(sol(0.1, 0.1, -0.2)), AddOutcome::Replaced);
    assert_eq!(a.elite_for(&Descriptor::new(0.1, 0.1)).unwrap().solution.fitness, -0.2);
    assert_eq!(a.try_add(sol(0.1, 0.1, -0.2)), AddOutcome::Rejected);
}

#[test]
fn novelty_examples() {
    let mut a = Archive::new(GridSpec::default(), 8);
    assert!((novelty(&a, &Descriptor::new(0.3, -0.1), 15) - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    a.try_add(sol(0.0, 0.0, -0.1));
    assert_eq!(novelty(&a, &Descriptor::new(0.0, 0.0), 2), 0.0);

    let mut a = Archive::new(GridSpec::default(), 8);
    a.try_add(sol(1.0, 0.0, -0.1));
    a.try_add(sol(0.0, 1.0, -0.1));
    assert!((novelty(&a, &Descriptor::new(0.0, 0.0), 2) - 1.0).abs() < 1e-12);
}

#[test]
fn novelty_is_mean_of_k_nearest() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut a = Archive::new(GridSpec::default(), 8);
    for _ in 0..300 {
        let (x, y) = support::random_point_in_circle(&mut rng, 1.0);
        a.try_add(sol(x, y, -0.5));
    }
    let stored: Vec<Descriptor> = a.iter().map(|(_, e)| e.solution.bd).collect();
    for _ in 0..50 {
        let (x, y) = support::random_point_in_circle(&mut rng, 1.0);
        let q = Descriptor::new(x, y);
        let mut d: Vec<f64> = stored.iter().map(|b| ((b.x - x).powi(2) + (b.y - y).powi(2)).sqrt()).collect();
        d.sort_by(f64::total_cmp);
        let want = d[..15].iter().sum::<f64>() / 15.0;
        assert!((novelty(&a, &q, 15) - want).abs() < 1e-12);
    }
}

#[test]
fn qd_score_and_coverage() {
    let mut a = Archive::new(GridSpec::default(), 8);
    assert_eq!((a.qd_score(FITNESS_FLOOR), a.coverage()), (0.0, 0.0));
    a.try_add(sol(0.5, 0.5, FITNESS_FLOOR));
    assert_eq!(a.qd_score(FITNESS_FLOOR), 0.0);
    assert_eq!(a.coverage(), 1.0 / 1600.0);

    let mut a = Archive::new(GridSpec::default(), 8);
    for (i, k) in [1.0, 2.0, 3.0].iter().enumerate() {
        a.try_add(sol(-0.9 + 0.5 * i as f64, 0.0, FITNESS_FLOOR + k));
    }
    assert!((a.qd_score(FITNESS_FLOOR) - 6.0).abs() < 1e-12);
}

#[test]
fn iso_dd_reproduces_scalar_reference() {
    let x1 = Genotype::filled(8, 0.5);
    let x2 = Genotype::filled(8, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut draws = rng.clone();
    let child = iso_dd(&x1, &x2, 0.01, 0.2, &mut rng);
    let iso = support::draw_normals(&mut draws, 8);
    let line = support::draw_normals(&mut draws, 1)[0];
    let want = support::oracle_iso_dd(x1.as_slice(), x2.as_slice(), 0.01, 0.2, &iso, line);
    for (g, w) in child.as_slice().iter().zip(&want) {
        assert!((g - w).abs() < 1e-15);
    }
}

#[test]
fn archive_text_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut a = Archive::new(GridSpec::default(), 8);
    for _ in 0..200 {
        let (x, y) = support::random_point_in_circle(&mut rng, 1.0);
        a.try_add(Solution::real(Genotype::random(8, &mut rng), Descriptor::new(x, y), -0.3));
    }
    let back = Archive::from_text(&a.to_text()).unwrap();
    assert_eq!(back.checksum(), a.checksum());
    assert_eq!(back.to_text(), a.to_text());
}

#[test]
fn genotype_rejects_out_of_range() {
    assert!(Genotype::new(vec![0.5, 1.2]).is_err());
    assert!(Genotype::new(vec![f64::NAN]).is_err());
    assert_eq!(Genotype::clamped(vec![-1.0, 2.0]).as_slice(), &[0.0, 1.0]);
}

#[test]
fn archive_csv_has_named_columns() {
    let mut a = Archive::new(GridSpec::default(), 8);
    a.try_add(sol(0.1, -0.2, -0.3));
    let csv = a.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("cell_x,cell_y,fitness,bd_x,bd_y,g0,g1,g2,g3,g4,g5,g6,g7"));
    assert_eq!(lines.next(), Some("22,16,-0.3,0.1,-0.2,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5"));
    assert_eq!(lines.next(), None);
}
