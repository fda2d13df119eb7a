use mfg_core::*;
use rand::{Rng, SeedableRng};

#[test]
fn residuals_are_second_order_on_a_slab() {
    for theta in [0.5f64, 1.0, 2.0, 3.0] {
        let s = SelfSimilarModel::new(theta).unwrap();
        let w = s.support_radius(2.0) * 1.2;
        let res: Vec<_> = [50usize, 100, 200]
            .iter()
            .map(|&n| {
                let g = SpaceTimeGrid::with_start(-w, w, 1.0, 1.0, n + 1, n + 1, Topology::NeumannInterval).unwrap();
                s.residuals(&g).unwrap()
            })
            .collect();
        for r in res.windows(2) {
            assert!(r[1].continuity < r[0].continuity / 3.0, "theta {theta}: {res:?}");
            assert!(r[1].hj < r[0].hj / 3.0, "theta {theta}: {res:?}");
        }
        assert!(res[2].hj < 1e-3 && res[2].continuity < 1e-3, "theta {theta}: {res:?}");
    }
}

#[test]
fn interface_time_solves_its_equation_on_random_points() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    for theta in [0.5f64, 1.0, 2.0, 3.0] {
        let s = SelfSimilarModel::new(theta).unwrap();
        for _ in 0..2500 {
            let t: f64 = rng.gen_range(0.05..5.0);
            let x = s.support_radius(t) * rng.gen_range(1.0..6.0);
            let root = s.interface_time(x, t).unwrap();
            assert!(root > 0.0 && root <= t);
            assert!(s.interface_function(x, t, root).abs() <= 1e-12 * s.c_r * t.max(1.0));
        }
    }
}

#[test]
fn mass_is_one_at_every_time() {
    for theta in [0.5f64, 1.0, 2.0, 3.0] {
        let s = SelfSimilarModel::new(theta).unwrap();
        for t in [0.1, 1.0, 7.0] {
            assert!((s.mass(t).unwrap() - 1.0).abs() < 1e-10);
        }
    }
}
