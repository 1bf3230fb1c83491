use proptest::prelude::*;
use scaleflow::blur::{blur_split, gaussian_blur_masked, BlurSpec};
use scaleflow::calib::{crps, rank_histogram, Verification};
use scaleflow::cdft::cdft_samples;
use scaleflow::kv::KvBlock;
use scaleflow::metrics::{average_ranks, ks_two_sample, quantile_type7};
use scaleflow::rng::derive_seed;
use scaleflow::spectral::{lowpass, lowpass_component, SpectralCutoff};
use scaleflow::{wfld, FieldStack, GridSpec};

fn stack(rows: usize, cols: usize, values: Vec<f64>, mask: Vec<bool>) -> FieldStack {
    let grid = GridSpec::regular_km(rows, cols, 25.0, 25.0, 46.0, 2.0).unwrap();
    let n_times = values.len() / (rows * cols);
    FieldStack::new(
        grid,
        vec!["sfcWind".into()],
        vec!["m s-1".into()],
        (0..n_times as i64).collect(),
        values,
        mask,
    )
    .unwrap()
}

fn field() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (4usize..12, 4usize..12).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), prop::collection::vec(-50.0f64..50.0, r * c * 2))
    })
}

fn masked_field() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<bool>)> {
    (3usize..10, 3usize..10).prop_flat_map(|(r, c)| {
        (
            Just(r),
            Just(c),
            prop::collection::vec(-50.0f64..50.0, r * c),
            prop::collection::vec(any::<bool>(), r * c).prop_filter("needs a valid cell", |m| m.iter().any(|&b| b)),
        )
    })
}

fn max_diff(a: &FieldStack, b: &FieldStack) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .filter(|(x, _)| !x.is_nan())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lowpass_reconstructs_and_is_idempotent((r, c, values) in field(), cutoff in 60.0f64..400.0) {
        let x = stack(r, c, values, vec![true; r * c]);
        let cut = SpectralCutoff::new(cutoff).unwrap();
        let d = lowpass(&x, &cut).unwrap();
        let sum = d.low.zip_with(&d.high, |a, b| a + b).unwrap();
        prop_assert!(max_diff(&sum, &x) < 1e-9);
        let again = lowpass_component(&d.low, &cut).unwrap();
        prop_assert!(max_diff(&again, &d.low) < 1e-9);
    }

    #[test]
    fn masked_blur_keeps_constants_and_masks((r, c, values, mask) in masked_field(), sigma in 25.0f64..100.0, k in -20.0f64..20.0) {
        let spec = BlurSpec::new(sigma).unwrap();
        let constant = stack(r, c, vec![k; r * c], mask.clone());
        let blurred = gaussian_blur_masked(&constant, &spec).unwrap();
        prop_assert_eq!(blurred.mask(), constant.mask());
        prop_assert!(max_diff(&blurred, &constant) < 1e-10);
        let x = stack(r, c, values, mask);
        let d = blur_split(&x, &spec).unwrap();
        prop_assert!(max_diff(&d.low.zip_with(&d.high, |a, b| a + b).unwrap(), &x) < 1e-12);
    }

    #[test]
    fn crps_is_non_negative(members in prop::collection::vec(-10.0f64..10.0, 1..30), y in -15.0f64..15.0) {
        prop_assert!(crps(&members, y) >= -1e-12);
    }

    #[test]
    fn crps_of_one_member_is_absolute_error(x in -10.0f64..10.0, y in -10.0f64..10.0) {
        prop_assert!((crps(&[x], y) - (x - y).abs()).abs() < 1e-12);
    }

    #[test]
    fn crps_vanishes_on_a_perfect_point_ensemble(y in -10.0f64..10.0, n in 1usize..20) {
        prop_assert!(crps(&vec![y; n], y).abs() < 1e-12);
    }

    #[test]
    fn rank_histogram_counts_every_point(values in prop::collection::vec(-5.0f64..5.0, 6..120), seed in any::<u64>()) {
        let m = 5;
        let n = values.len() / (m + 1);
        let mut members = Vec::new();
        let mut obs = Vec::new();
        for p in 0..n {
            members.extend_from_slice(&values[p * (m + 1)..p * (m + 1) + m]);
            obs.push(values[p * (m + 1) + m]);
        }
        let ver = Verification::new(m, members, obs).unwrap();
        let counts = rank_histogram(&ver, seed).unwrap();
        prop_assert_eq!(counts.len(), m + 1);
        prop_assert_eq!(counts.iter().sum::<u64>(), n as u64);
    }

    #[test]
    fn ks_is_symmetric_and_bounded(
        a in prop::collection::vec(-5.0f64..5.0, 1..60),
        b in prop::collection::vec(-5.0f64..5.0, 1..60),
    ) {
        let d = ks_two_sample(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((d - ks_two_sample(&b, &a)).abs() < 1e-15);
        prop_assert_eq!(ks_two_sample(&a, &a), 0.0);
    }

    #[test]
    fn cdft_is_monotone(
        obs in prop::collection::vec(0.0f64..10.0, 40..80),
        hist in prop::collection::vec(0.0f64..20.0, 40..80),
        fut in prop::collection::vec(0.0f64..20.0, 40..80),
    ) {
        let out = cdft_samples(&obs, &hist, &fut).unwrap().values;
        for i in 0..fut.len() {
            for j in 0..fut.len() {
                if fut[i] < fut[j] {
                    prop_assert!(out[i] <= out[j] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn ranks_sum_to_triangular_number(xs in prop::collection::vec(-3i32..3, 1..50)) {
        let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
        let n = xs.len() as f64;
        prop_assert!((average_ranks(&xs).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn quantile_stays_within_range(xs in prop::collection::vec(-100.0f64..100.0, 1..50), q in 0.0f64..=1.0) {
        let v = quantile_type7(&xs, q);
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo && v <= hi);
    }

    #[test]
    fn derived_seeds_are_deterministic(base in any::<u64>(), path in prop::collection::vec(any::<u64>(), 0..4)) {
        prop_assert_eq!(derive_seed(base, &path), derive_seed(base, &path));
    }

    #[test]
    fn kv_blocks_round_trip(entries in prop::collection::btree_map("[a-z][a-z0-9_.]{0,12}", "[A-Za-z0-9:,._-]{0,16}", 0..10)) {
        let mut kv = KvBlock::new();
        for (k, v) in &entries {
            kv.set(k, v);
        }
        prop_assert_eq!(KvBlock::parse(&kv.to_string()).unwrap(), kv);
    }

    #[test]
    fn wfld_round_trips((r, c, values, mask) in masked_field()) {
        let values = values.into_iter().map(|v| v as f32 as f64).collect();
        let x = stack(r, c, values, mask);
        let back = wfld::decode(&wfld::encode(&x)).unwrap();
        prop_assert_eq!(back.mask(), x.mask());
        prop_assert_eq!(back.times(), x.times());
        prop_assert_eq!(max_diff(&back, &x), 0.0);
    }
}
