use estent_core::lyapunov::*;
use estent_core::{Matrix, SystemDefinition, Units};
use proptest::prelude::*;

#[test]
fn exponent_sums_vanish_for_area_preserving_maps() {
    for sys in [SystemDefinition::cat_map(), SystemDefinition::standard_map(1.0), SystemDefinition::standard_map(5.0)] {
        let x0 = vec![0.3, 0.4];
        let s = lyapunov_qr(&sys, &x0, 10_000, 1).unwrap();
        assert!(s.sum().abs() < 1e-3, "{:?}", s.exponents);
        assert!(preserves_volume(&sys, 7).unwrap());
    }
}

#[test]
fn qr_agrees_with_the_singular_value_oracle() {
    let cat = SystemDefinition::cat_map();
    let q = lyapunov_qr(&cat, &[0.1, 0.2], 50, 1).unwrap();
    let o = oseledets_oracle(&cat, &[0.1, 0.2], 50).unwrap();
    for (a, b) in q.exponents.iter().zip(&o.exponents) {
        assert!((a - b).abs() <= 1e-4);
    }

    let std_map = SystemDefinition::standard_map(5.0);
    let x0 = vec![0.3, 0.4];
    let burned = std_map.orbit(&x0, BURN_IN).unwrap().pop().unwrap();
    let q = lyapunov_qr(&std_map, &x0, 1000, 1).unwrap();
    let o = oseledets_oracle(&std_map, &burned, 1000).unwrap();
    for (a, b) in q.exponents.iter().zip(&o.exponents) {
        assert!((a - b).abs() <= 0.05, "{:?} vs {:?}", q.exponents, o.exponents);
    }
}

#[test]
fn exponents_of_a_power_scale_by_k() {
    let x0 = vec![0.3, 0.4];
    for (sys, tol) in [(SystemDefinition::cat_map(), 1e-6), (SystemDefinition::standard_map(5.0), 0.02)] {
        for k in [2u32, 3] {
            let n = 5000;
            let base = lyapunov_qr_with(
                &sys,
                &x0,
                n * k as usize,
                QrOptions {
                    reorth_every: 1,
                    burn_in: BURN_IN * k as usize,
                },
            )
            .unwrap();
            let power = lyapunov_qr(&sys.power(k).unwrap(), &x0, n, 1).unwrap();
            for (p, b) in power.exponents.iter().zip(&base.exponents) {
                assert!((p - f64::from(k) * b).abs() <= tol, "k={k}: {p} vs {}", f64::from(k) * b);
            }
        }
    }
}

#[test]
fn lower_bound_equals_closed_form_for_torus_automorphisms() {
    let mats = [
        Matrix::from_row_major(2, 2, vec![2.0, 1.0, 1.0, 1.0]).unwrap(),
        Matrix::from_row_major(2, 2, vec![3.0, 2.0, 1.0, 1.0]).unwrap(),
        Matrix::from_row_major(2, 2, vec![5.0, 2.0, 2.0, 1.0]).unwrap(),
    ];
    for m in mats {
        let sys = SystemDefinition::torus_automorphism(m.clone()).unwrap();
        let sampled = sample_spectra(&sys, &Sampling::Random { count: 4, seed: 1 }, 2000).unwrap();
        for i in 0..=12 {
            let alpha = 0.25 * f64::from(i);
            let lb = bound_from_spectra(&sampled, alpha).unwrap();
            let cf = linear_closed_form(&m, alpha, Units::BitsPerStep).unwrap();
            assert!((lb.mean - cf).abs() < 1e-6, "alpha {alpha}: {} vs {cf}", lb.mean);
        }
    }
}

fn spectrum(l1: f64) -> LyapunovSpectrum {
    LyapunovSpectrum::new(vec![l1, -l1], Units::BitsPerStep, 1)
}

proptest! {
    #[test]
    fn thieullen_rate_is_continuous_and_monotone(l1 in 0.01f64..5.0) {
        let s = spectrum(l1);
        prop_assert!((deep_branch(&s, l1) - shallow_branch(&s, l1)).abs() <= 1e-12);
        let at_zero = thieullen_rate(&s, 0.0, Units::BitsPerStep).unwrap().value;
        prop_assert_eq!(at_zero, l1);
        let mut last = f64::NEG_INFINITY;
        for i in 0..=40 {
            let v = thieullen_rate(&s, 0.1 * f64::from(i), Units::BitsPerStep).unwrap().value;
            prop_assert!(v >= last - 1e-12);
            last = v;
        }
    }

    #[test]
    fn pesin_value_at_alpha_zero(a in 0.001f64..3.0, b in -1.0f64..1.0) {
        let s = LyapunovSpectrum::new(vec![a, b * a, -a - b * a], Units::NatsPerTime, 1);
        let v = thieullen_rate(&s, 0.0, Units::NatsPerTime).unwrap().value;
        let positive: f64 = s.exponents.iter().map(|l| l.max(0.0)).sum();
        prop_assert_eq!(v, positive);
    }
}
