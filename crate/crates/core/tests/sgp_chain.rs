use dsdp::sgp_prior::{
    latent_birth_death_step, solve_intensity_values, thinning_value, intensity_residual, KernelParams, MoveKind,
    SgpState, TopicDomain,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn base_state(alpha: f64) -> SgpState {
    let mut s = SgpState::new(alpha, TopicDomain::new(vec![-3.0], vec![3.0]).unwrap());
    s.push_accepted(vec![-1.0], 0.5);
    s.push_accepted(vec![1.2], 0.3);
    s
}

/// Mean truncated acceptance of insert and delete proposals after burn-in.
fn acceptance_balance(alpha: f64, burn: usize, steps: usize, seed: u64) -> (f64, f64, usize) {
    let kp = KernelParams::isotropic(1, 1.0, 1.0, 1e-6).unwrap();
    let mut s = base_state(alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ins, mut n_ins, mut del, mut n_del) = (0.0, 0usize, 0.0, 0usize);
    let mut max_points = 0;
    for t in 0..burn + steps {
        let (next, rec) = latent_birth_death_step(&s, &kp, &mut rng).unwrap();
        s = next;
        s.check_thinning_range().unwrap();
        max_points = max_points.max(s.len());
        if t < burn {
            continue;
        }
        match rec.kind {
            MoveKind::Insert => {
                ins += rec.ratio.min(1.0);
                n_ins += 1;
            }
            MoveKind::Delete => {
                del += rec.ratio.min(1.0);
                n_del += 1;
            }
        }
    }
    (ins / n_ins as f64, del / n_del as f64, max_points)
}

#[test]
fn insert_and_delete_acceptance_balance() {
    let (ins, del, _) = acceptance_balance(8.0, 10_000, 100_000, 3);
    assert!((ins - del).abs() <= 0.1 * ins.max(del), "insert {ins} vs delete {del}");
}

#[test]
fn knot_count_stays_bounded_by_intensity() {
    for alpha in [0.5, 4.0, 20.0] {
        let (_, _, max_points) = acceptance_balance(alpha, 0, 20_000, 11);
        assert!((max_points as f64) <= 10.0 * alpha, "{max_points} knots at α* = {alpha}");
    }
}

#[test]
fn solved_values_satisfy_the_stationarity_system() {
    let kp = KernelParams::isotropic(1, 1.0, 0.7, 1e-6).unwrap();
    let mut s = base_state(5.0);
    for j in 0..12 {
        s.push_thinned(vec![-2.5 + 0.4 * j as f64], 0.0);
    }
    let y = solve_intensity_values(&s, &kp, 1e-8, 10_000).unwrap();
    assert!(intensity_residual(&s, &kp, &y) < 1e-8);
    s.values = y;
    s.check_thinning_range().unwrap();
}

#[test]
fn thinning_value_interpolates_knots_as_jitter_vanishes() {
    let kp = KernelParams::isotropic(1, 1.0, 1.0, 1e-12).unwrap();
    let s = base_state(1.0);
    for (loc, y) in s.locations.iter().zip(&s.values) {
        let got = thinning_value(loc, &s, &kp).unwrap();
        assert!((got - 1.0 / (1.0 + (-y).exp())).abs() < 1e-6);
    }
}
