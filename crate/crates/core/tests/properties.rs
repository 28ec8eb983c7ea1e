use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tdcsim_core::analysis::{dnl, qber, BasisMap, Gate, TaggedEvent};
use tdcsim_core::calib::{build_table, calibrate_tag, Fenwick, SteadyState};
use tdcsim_core::decoder::decode;
use tdcsim_core::delayline::{inject_bubbles, RawTag, ThermometerCode, COARSE_MASK};
use tdcsim_core::sources::Symbol;
use tdcsim_core::stream::{decode_record, encode_record, CoarseUnwrapper};

fn tag() -> impl Strategy<Value = (RawTag, u8)> {
    (0..=COARSE_MASK, 0u16..256, 0u8..16, 0u8..2)
        .prop_map(|(coarse, fine, channel, flags)| (RawTag { coarse, fine, channel }, flags))
}

proptest! {
    #[test]
    fn record_round_trip((t, flags) in tag()) {
        let word = encode_record(&t, flags).unwrap();
        prop_assert_eq!(decode_record(word).unwrap(), (t, flags));
    }

    #[test]
    fn distinct_tags_give_distinct_words(a in tag(), b in tag()) {
        prop_assume!(a != b);
        prop_assert_ne!(encode_record(&a.0, a.1).unwrap(), encode_record(&b.0, b.1).unwrap());
    }

    #[test]
    fn fenwick_matches_recomputed_prefix(ops in prop::collection::vec((1usize..=40, 0u64..5, any::<bool>()), 1..200)) {
        let mut f = Fenwick::new(40);
        let mut counts = vec![0u64; 40];
        for (bin, v, add) in ops {
            if add {
                f.add(bin, v);
                counts[bin - 1] += v;
            } else {
                let v = v.min(counts[bin - 1]);
                f.sub(bin, v);
                counts[bin - 1] -= v;
            }
            let mut acc = 0;
            for (k, &c) in counts.iter().enumerate() {
                acc += c;
                prop_assert_eq!(f.prefix(k + 1), acc);
            }
        }
        prop_assert_eq!(Fenwick::from_counts(&counts).prefix(40), counts.iter().sum::<u64>());
    }

    #[test]
    fn steady_window_matches_static_table(bins in prop::collection::vec(1usize..=30, 1..300), capacity in 1usize..64) {
        let mut s = SteadyState::new(capacity, 1000.0).unwrap();
        for &b in &bins {
            s.push(b).unwrap();
        }
        let tail = &bins[bins.len().saturating_sub(capacity)..];
        let mut counts = vec![0u64; 30];
        for &b in tail {
            counts[b - 1] += 1;
        }
        let table = build_table(&counts, 1000.0).unwrap();
        prop_assert_eq!(s.table().unwrap(), table.clone());
        for fine in 0..=table.n_c() {
            let (a, b) = (s.center(fine).unwrap(), table.center(fine).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn bubbles_never_change_the_decoded_value(len in 1usize..300, frac in 0.0f64..=1.0, seed: u64) {
        let ones = (frac * len as f64) as usize;
        let code = ThermometerCode::with_ones(len, ones);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bubbled = inject_bubbles(&code, 1.0, &mut rng);
        prop_assert_eq!(decode(&bubbled, len).unwrap().index, ones);
    }

    #[test]
    fn dnl_sums_to_zero(counts in prop::collection::vec(0u64..10_000, 1..200)) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let d = dnl(&counts).unwrap();
        prop_assert!(d.iter().sum::<f64>().abs() < 1e-9 * d.len() as f64);
    }

    #[test]
    fn centers_increase_and_span_the_period(counts in prop::collection::vec(1u64..1000, 2..200)) {
        let t = build_table(&counts, 2424.24).unwrap();
        let c = t.centers();
        prop_assert!(c.windows(2).all(|w| w[1] > w[0]));
        prop_assert!((c[t.n_c()] - 2424.24).abs() < 1e-9);
        prop_assert!(t.bin_widths().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn calibrated_time_stays_within_its_clock_period(counts in prop::collection::vec(1u64..1000, 2..100), coarse in 1u64..1_000_000, pick in any::<prop::sample::Index>()) {
        let t = build_table(&counts, 2424.24).unwrap();
        let fine = 1 + pick.index(t.n_c()) as u16;
        let time = calibrate_tag(&t, &RawTag { coarse, fine, channel: 0 }).unwrap();
        let edge = coarse as f64 * 2424.24;
        prop_assert!(time <= edge && time >= edge - 2424.24);
    }

    #[test]
    fn qber_is_invariant_to_whole_period_shifts(
        events in prop::collection::vec((0.0f64..20_000.0, 0u8..4, 0u8..4), 1..300),
        shift in -1000i64..1000,
    ) {
        let period = 20_000.0;
        let mk = |offset: f64| -> Vec<TaggedEvent> {
            events
                .iter()
                .map(|&(t, d, l)| TaggedEvent {
                    time_ps: t + offset,
                    detected: d,
                    label: Symbol::from_index(l).unwrap(),
                })
                .collect()
        };
        let gate = Gate { center: 5000.0, width: 4000.0 };
        let map = BasisMap::default();
        // An empty gate is an error on both sides.
        let summary = |offset: f64| qber(&mk(offset), gate, period, &map).ok().map(|r| (r.errors, r.gated, r.outside_gate));
        prop_assert_eq!(summary(0.0), summary(shift as f64 * period));
    }

    #[test]
    fn unwrapped_coarse_is_monotone(steps in prop::collection::vec(1u64..(1 << 40), 1..100), start in 0..=COARSE_MASK) {
        let mut u = CoarseUnwrapper::new();
        let mut raw = start;
        let mut last = None;
        for s in steps {
            let (ext, _) = u.unwrap(raw);
            if let Some(prev) = last {
                prop_assert!(ext > prev);
            }
            last = Some(ext);
            raw = (raw + s) & COARSE_MASK;
        }
    }
}
