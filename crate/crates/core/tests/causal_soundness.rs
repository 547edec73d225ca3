use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scot_core::adversary::{self, run_attack};
use scot_core::bits::BitString;
use scot_core::protocol::{run_honest, run_noisy_honest, validate_transcript, Violation};
use scot_core::spacetime::{validate_geometry, Layout, ProtocolGeometry, Side};

fn geometry() -> impl Strategy<Value = ProtocolGeometry> {
    (0.2f64..5.0, 1usize..=5, any::<bool>(), 0.0f64..0.99).prop_map(|(h, n, per_bit, frac)| {
        if per_bit {
            let max_delta = if n > 1 { 2.0 * h / (n - 1) as f64 } else { 1.0 };
            ProtocolGeometry::per_bit(h, frac * max_delta, n)
        } else {
            ProtocolGeometry::main_slab(h, frac * 2.0 * h / 3.0, n)
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn honest_runs_are_causal_and_correct(g in geometry(), seed in any::<u64>(), b in any::<bool>()) {
        prop_assert!(validate_geometry(&g).unwrap().passed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = BitString::random(g.n, &mut rng);
        let x1 = BitString::random(g.n, &mut rng);
        let side = Side::from_bit(b);
        let t = run_honest(&g, &x0, &x1, side, seed).unwrap();
        let report = validate_transcript(&t);
        prop_assert!(report.passed(), "{:?}", report.violations);
        let expected = if b { &x1 } else { &x0 };
        prop_assert_eq!(t.output_string(side), Some(expected.clone()));
        prop_assert_eq!(t.alice_inbound_from_bob(), 0);
        for m in &t.messages {
            prop_assert!(m.receive_event.t + 1e-9 >= m.send_event.t + m.send_event.spatial_distance(&m.receive_event));
        }
    }

    #[test]
    fn noisy_runs_stay_causal(g in geometry(), seed in any::<u64>(), gamma in 0.0f64..0.2) {
        let x = BitString::zeros(g.n);
        let t = run_noisy_honest(&g, &x, &x, Side::One, gamma, seed).unwrap();
        prop_assert!(validate_transcript(&t).passed());
    }

    #[test]
    fn attacks_on_main_slab_stay_causal(n in 1usize..=4, v in 0.0f64..0.6, seed in any::<u64>(), k in 0usize..4) {
        let strategy = adversary::builtin(adversary::BUILTIN_NAMES[k]).unwrap().unwrap();
        let g = ProtocolGeometry::main_slab(1.0, v, n);
        let slab = matches!(g.layout, Layout::MainSlab { .. });
        prop_assert!(slab);
        let t = run_attack(&strategy, &g, seed).unwrap();
        prop_assert!(validate_transcript(&t).passed());
    }
}

#[test]
fn tampered_arrival_is_flagged() {
    let g = ProtocolGeometry::main_slab(1.0, 0.1, 3);
    let x = BitString::from_u64(5, 3);
    let mut t = run_honest(&g, &x, &x, Side::Zero, 1).unwrap();
    let m = &mut t.messages[0];
    m.receive_event = m.send_event;
    m.receive_event.x += 0.5;
    let report = validate_transcript(&t);
    assert!(report.violations.iter().any(|v| matches!(v, Violation::Superluminal { .. })), "{:?}", report.violations);
}
