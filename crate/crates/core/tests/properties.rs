mod oracles;

use codecwatt::sources::counter::counter_delta;
use codecwatt::sources::Segment;
use codecwatt::{
    average_ranks, counters_to_power, extract_window, fit_linear, integrate_energy, kendall,
    pearson, plan_duplication, spearman, synth_trace, t_critical, CounterReading, PowerSample,
    PowerTrace, SyntheticProfile,
};
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Strictly increasing timestamps with non-negative powers.
fn trace_strategy() -> impl Strategy<Value = PowerTrace> {
    (
        -1e3..1e3f64,
        prop::collection::vec((0.01..5.0f64, 0.0..500.0f64), 2..60),
    )
        .prop_map(|(t0, steps)| {
            let mut t = t0;
            let samples = steps
                .into_iter()
                .map(|(dt, p)| {
                    t += dt;
                    PowerSample::new(t, p)
                })
                .collect();
            PowerTrace::with_samples("m", 1.0, samples)
        })
}

fn span(trace: &PowerTrace) -> (f64, f64) {
    (trace.first_timestamp().unwrap(), trace.last_timestamp().unwrap())
}

fn paired(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..12, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(0u8..12, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
        )
    })
}

fn fit_data() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((1.0..1e3f64, 0.5..2.0f64, -20.0..20.0f64), 3..40).prop_map(|rows| {
        rows.into_iter()
            .map(|(x, a, e)| (x, (a * x + 100.0 + e).max(1.0)))
            .unzip()
    })
}

proptest! {
    #[test]
    fn trapezoid_matches_riemann(trace in trace_strategy()) {
        let got = integrate_energy(&trace).unwrap().energy;
        let points: Vec<_> = trace.samples.iter().map(|s| (s.timestamp, s.power)).collect();
        prop_assert!(close(got, oracles::riemann_energy(&points, 64), 1e-9));
    }

    #[test]
    fn energy_scales_linearly(trace in trace_strategy(), c in 0.0..100.0f64) {
        let mut scaled = trace.clone();
        scaled.samples.iter_mut().for_each(|s| s.power *= c);
        let e = integrate_energy(&trace).unwrap().energy;
        let es = integrate_energy(&scaled).unwrap().energy;
        prop_assert!(close(es, c * e, 1e-12));
    }

    #[test]
    fn full_window_is_whole_trace(trace in trace_strategy()) {
        let (a, b) = span(&trace);
        let w = extract_window(&trace, a, b, 1e-9).unwrap();
        prop_assert_eq!(&w.samples, &trace.samples);
    }

    #[test]
    fn windows_are_additive(trace in trace_strategy(), f1 in 0.0..1.0f64, f2 in 0.0..1.0f64, f3 in 0.0..1.0f64) {
        let (a, b) = span(&trace);
        let mut cut = [f1, f2, f3].map(|f| a + f * (b - a));
        cut.sort_by(f64::total_cmp);
        prop_assume!(cut[0] < cut[1] && cut[1] < cut[2]);
        let e = |s: f64, t: f64| integrate_energy(&extract_window(&trace, s, t, 1e-9).unwrap()).unwrap().energy;
        let whole = e(cut[0], cut[2]);
        prop_assert!(close(whole, e(cut[0], cut[1]) + e(cut[1], cut[2]), 1e-9));
    }

    #[test]
    fn wider_window_holds_more_energy(trace in trace_strategy(), f in prop::array::uniform4(0.0..1.0f64)) {
        let (a, b) = span(&trace);
        let mut cut = f.map(|x| a + x * (b - a));
        cut.sort_by(f64::total_cmp);
        prop_assume!(cut[0] < cut[1] && cut[1] < cut[2] && cut[2] < cut[3]);
        let e = |s: f64, t: f64| integrate_energy(&extract_window(&trace, s, t, 1e-9).unwrap()).unwrap().energy;
        prop_assert!(e(cut[0], cut[3]) >= e(cut[1], cut[2]) * (1.0 - 1e-12));
    }

    #[test]
    fn trace_csv_round_trip(trace in trace_strategy()) {
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = PowerTrace::read_csv(buf.as_slice(), "m", 1.0).unwrap();
        prop_assert_eq!(back, trace);
    }

    #[test]
    fn kendall_matches_pair_enumeration((x, y) in paired(2..40)) {
        match (kendall(&x, &y), oracles::kendall_pairs(&x, &y)) {
            (Ok(a), Some(b)) => prop_assert_eq!(a, b),
            (Err(_), None) => {}
            (a, b) => prop_assert!(false, "kendall {:?} vs oracle {:?}", a, b),
        }
    }

    #[test]
    fn ranks_match_counting(v in prop::collection::vec(0u8..10, 1..50)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        prop_assert_eq!(average_ranks(&v), oracles::counted_ranks(&v));
    }

    #[test]
    fn spearman_is_pearson_of_ranks((x, y) in paired(2..40)) {
        let oracle = oracles::pearson_def(&oracles::counted_ranks(&x), &oracles::counted_ranks(&y));
        match (spearman(&x, &y), oracle) {
            (Ok(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
            (Err(_), None) => {}
            (a, b) => prop_assert!(false, "spearman {:?} vs oracle {:?}", a, b),
        }
    }

    #[test]
    fn rank_statistics_ignore_monotone_maps((x, y) in paired(3..30), scale in 0.1..10.0f64, shift in -50.0..50.0f64) {
        let g: Vec<f64> = x.iter().map(|v| (v * scale + shift).exp().min(f64::MAX)).collect();
        if let (Ok(a), Ok(b)) = (kendall(&x, &y), kendall(&g, &y)) {
            prop_assert_eq!(a, b);
        }
        if let (Ok(a), Ok(b)) = (spearman(&x, &y), spearman(&g, &y)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn pearson_ignores_positive_affine_maps((x, y) in fit_data(), scale in 0.01..100.0f64, shift in -1e3..1e3f64) {
        let g: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
        let (a, b) = (pearson(&x, &y).unwrap(), pearson(&g, &y).unwrap());
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn r2_is_squared_pearson((x, y) in fit_data()) {
        let fit = fit_linear(&x, &y).unwrap();
        let r = pearson(&x, &y).unwrap();
        prop_assert!((fit.r2 - r * r).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&fit.r2));
        prop_assert!(fit.epsilon >= 0.0);
    }

    #[test]
    fn residuals_are_orthogonal((x, y) in fit_data()) {
        let fit = fit_linear(&x, &y).unwrap();
        let res: Vec<f64> = x.iter().zip(&y).map(|(&a, &b)| b - fit.predict(a)).collect();
        let scale: f64 = y.iter().map(|v| v.abs()).sum::<f64>();
        let sum: f64 = res.iter().sum();
        let dot: f64 = res.iter().zip(&x).map(|(r, a)| r * a).sum();
        let xscale: f64 = x.iter().zip(&y).map(|(a, b)| (a * b).abs()).sum::<f64>();
        prop_assert!(sum.abs() <= 1e-9 * scale);
        prop_assert!(dot.abs() <= 1e-9 * xscale);
    }

    #[test]
    fn exact_line_is_recovered(x in prop::collection::vec(1.0..1e3f64, 3..30), a in 0.1..5.0f64, b in 1.0..500.0f64) {
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-3));
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let fit = fit_linear(&x, &y).unwrap();
        prop_assert!(close(fit.slope, a, 1e-9));
        prop_assert!(close(fit.intercept, b, 1e-7));
        prop_assert!(fit.epsilon <= 1e-9);
    }

    #[test]
    fn counter_delta_wraps(wrap in 2u64..u64::MAX / 2, prev_f in 0.0..1.0f64, delta_f in 0.0..1.0f64) {
        let prev = ((wrap - 1) as f64 * prev_f) as u64;
        let delta = ((wrap - 1) as f64 * delta_f) as u64;
        let next = ((prev as u128 + delta as u128) % wrap as u128) as u64;
        prop_assert_eq!(counter_delta(prev, next, wrap), delta);
    }

    #[test]
    fn counter_power_is_non_negative(
        wrap in 1_000u64..1_000_000_000_000,
        start_f in 0.0..1.0f64,
        steps in prop::collection::vec((0.0..1.0f64, 1u32..1000), 1..40),
    ) {
        let mut c = ((wrap - 1) as f64 * start_f) as u64;
        let mut t = 0.0;
        let mut readings = vec![CounterReading::new(t, c, wrap)];
        let mut total: u128 = 0;
        for (f, ms) in &steps {
            let d = ((wrap - 1) as f64 * f) as u64;
            total += d as u128;
            c = ((c as u128 + d as u128) % wrap as u128) as u64;
            t += f64::from(*ms) / 1024.0;
            readings.push(CounterReading::new(t, c, wrap));
        }
        let trace = counters_to_power(&readings, "c", 0.1).unwrap();
        prop_assert!(trace.samples.iter().all(|s| s.power >= 0.0 && s.power.is_finite()));
        let recovered: u128 = trace
            .samples
            .iter()
            .zip(readings.windows(2))
            .map(|(s, r)| (s.power * (r[1].timestamp - r[0].timestamp) * 1e6).round() as u128)
            .sum();
        prop_assert_eq!(recovered, total);
    }

    #[test]
    fn noise_free_synthesis_follows_profile(
        segs in prop::collection::vec((0.5..10.0f64, 0.0..300.0f64, 0.0..300.0f64), 1..6),
        interval in 0.05..1.0f64,
    ) {
        let profile = SyntheticProfile {
            segments: segs.iter().map(|&(d, a, b)| Segment::new(d, a, b)).collect(),
            noise_std: 0.0,
            seed: 0,
        };
        let trace = synth_trace(&profile, interval, "s").unwrap();
        prop_assert!(trace.validate().is_empty());
        for s in &trace.samples {
            prop_assert!((s.power - profile.base_power(s.timestamp)).abs() <= 1e-9);
        }
        let last = trace.last_timestamp().unwrap();
        prop_assert!(last <= profile.total_duration() + 1e-9);
        prop_assert!(profile.total_duration() - last < interval + 1e-9);
    }

    #[test]
    fn t_critical_is_monotone(df in 1u32..500, tail in 0.001..0.2f64) {
        let df = f64::from(df);
        let q = t_critical(tail, df).unwrap();
        prop_assert!(q > 0.0);
        prop_assert!(t_critical(tail, df + 1.0).unwrap() <= q);
        prop_assert!(t_critical(tail * 1.5, df).unwrap() < q);
        prop_assert!(t_critical(tail, f64::INFINITY).unwrap() <= q);
    }

    #[test]
    fn duplication_reaches_sample_target(est in 0.01..1e3f64, interval in 0.001..2.0f64, n_min in 2usize..200) {
        let k = plan_duplication(est, interval, n_min).unwrap();
        let need = n_min as f64 * interval;
        prop_assert!(k >= 1);
        prop_assert!(f64::from(k) * est >= need * (1.0 - 1e-9));
        if k > 1 {
            prop_assert!(f64::from(k - 1) * est < need);
        }
    }
}
