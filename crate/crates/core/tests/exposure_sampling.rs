use resilience_core::claims::{exposure_input, exposure_size, schedule_exposure, SPREADER_ID};
use resilience_core::seed::rng_from;

#[test]
fn every_round_exposes_exactly_ceil_rho_n() {
    let schedule = schedule_exposure(200, 0.1, 10_000, &mut rng_from(11)).unwrap();
    let mut counts = vec![0usize; 200];
    for set in &schedule.sets {
        assert_eq!(set.len(), 20);
        assert!(set.windows(2).all(|w| w[0] < w[1]), "sorted and distinct");
        for &i in set {
            counts[i] += 1;
        }
    }
    // 3 sigma of Binomial(10_000, 0.1) in frequency units.
    for &c in &counts {
        let freq = c as f64 / 10_000.0;
        assert!((freq - 0.1).abs() <= 0.009, "inclusion frequency {freq}");
    }
}

#[test]
fn exposure_size_rounds_up() {
    assert_eq!(exposure_size(200, 0.1), 20);
    assert_eq!(exposure_size(30, 0.1), 3);
    assert_eq!(exposure_size(25, 0.1), 3);
    assert_eq!(exposure_size(7, 1.0), 7);
}

#[test]
fn schedules_are_reproducible_and_seed_dependent() {
    let a = schedule_exposure(50, 0.2, 10, &mut rng_from(1)).unwrap();
    let b = schedule_exposure(50, 0.2, 10, &mut rng_from(1)).unwrap();
    let c = schedule_exposure(50, 0.2, 10, &mut rng_from(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn direct_input_comes_from_the_spreader() {
    let claim = resilience_core::claims::desk_pool().remove(0);
    let schedule = schedule_exposure(20, 0.1, 3, &mut rng_from(5)).unwrap();
    for t in 1..=3 {
        for i in 0..20 {
            let input = exposure_input(&claim, i, t, &schedule);
            assert_eq!(input.is_some(), schedule.is_exposed(i, t));
            if let Some(p) = input {
                assert_eq!(p.source_id, SPREADER_ID);
                assert_eq!(p.content, claim.content);
            }
        }
    }
}
