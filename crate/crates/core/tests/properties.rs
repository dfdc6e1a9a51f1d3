use std::sync::Arc;

use proptest::prelude::*;

use wavemix::config::Manifest;
use wavemix::coupling::{detect_stopping, tv_surrogate, StoppingConfig};
use wavemix::functionals::{accumulate, Accumulators, EnergySnapshot};
use wavemix::grid::GridSpec;
use wavemix::mixing::{dual_lipschitz_from_features, fit_polynomial_rate, wilson_interval, DualLipschitzDictionary};
use wavemix::dynamics::{Dynamics, PhysParams};
use wavemix::noise::{CoeffSpec, NoiseModel};
use wavemix::output::{read_csv_provenance, CsvWriter, Provenance};
use wavemix::spectral::SineBasis;

fn basis(n: usize) -> Arc<SineBasis> {
    Arc::new(SineBasis::new(&GridSpec::new(20.0, n).unwrap()))
}

fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n)
}

fn snap(t: f64, e: f64, ep: f64) -> EnergySnapshot {
    EnergySnapshot {
        t,
        xi_h_sq: e,
        xi_psi_sq: ep - e,
        e,
        e_psi: ep,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sine_transform_round_trips(g in field(63)) {
        let b = basis(63);
        let back = b.synthesize(&b.analyze(&g).unwrap()).unwrap();
        for (x, y) in g.iter().zip(back.values()) {
            prop_assert!((x - y).abs() <= 1e-11 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn projections_are_orthogonal(g in field(63), n in 0usize..=63) {
        let b = basis(63);
        let spec = CoeffSpec::PowerLaw { b0: 0.5, q: 3.5, modes: 63, n_forced: 4 };
        let model = NoiseModel::with_basis(b.clone(), &spec, 0).unwrap();
        let p = model.project_p(&g, n).unwrap();
        let q = model.project_q(&g, n).unwrap();
        let dx = b.grid().dx();
        let dot: f64 = p.values().iter().zip(q.values()).map(|(a, c)| a * c).sum::<f64>() * dx;
        let total: f64 = g.iter().map(|x| x * x).sum::<f64>() * dx;
        prop_assert!(dot.abs() <= 1e-10 * (1.0 + total));
        for ((x, a), c) in g.iter().zip(p.values()).zip(q.values()) {
            prop_assert!((x - a - c).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn surrogate_is_monotone_and_bounded(d1 in 0.0..1e-2f64, d2 in 0.0..1e-2f64, b in 1e-3..1.0f64) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let a = tv_surrogate(lo, b).unwrap();
        let c = tv_surrogate(hi, b).unwrap();
        prop_assert!(a <= c);
        prop_assert!((0.0..=1.0).contains(&a) && c <= 1.0);
    }

    #[test]
    fn wilson_interval_brackets_frequency(n in 1usize..2000, frac in 0.0..=1.0f64) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_interval(k, n);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12);
        prop_assert!(p - 1e-12 <= hi && hi <= 1.0);
    }

    #[test]
    fn accumulation_is_additive(es in prop::collection::vec((0.1..5.0f64, 0.0..3.0f64), 3..30), split in 1usize..29) {
        let snaps: Vec<EnergySnapshot> = es.iter().enumerate().map(|(i, &(e, x))| snap(0.1 * i as f64, e, e + x)).collect();
        let split = split.min(snaps.len() - 2);
        let run = |from: usize, to: usize| {
            let mut acc = Accumulators::start(&snaps[from], 0.125, 1.5).unwrap();
            for w in snaps[from..=to].windows(2) {
                acc = accumulate(&acc, &w[0], &w[1]);
            }
            acc
        };
        let whole = run(0, snaps.len() - 1);
        let left = run(0, split);
        let right = run(split, snaps.len() - 1);
        let sum = left.int_e + right.int_e;
        prop_assert!((whole.int_e - sum).abs() <= 1e-12 * (1.0 + whole.int_e));
    }

    #[test]
    fn larger_rho_never_stops_earlier(fs in prop::collection::vec(0.0..50.0f64, 2..100), rho in 0.0..20.0f64, extra in 0.0..20.0f64) {
        let series: Vec<(f64, f64)> = fs.iter().enumerate().map(|(i, &f)| (0.05 * i as f64, f)).collect();
        let cfg = StoppingConfig { rho, ..Default::default() };
        let a = detect_stopping(&series, 1.0, &cfg).unwrap_or(f64::INFINITY);
        let b = detect_stopping(&series, 1.0, &cfg.with_rho(rho + extra)).unwrap_or(f64::INFINITY);
        prop_assert!(b >= a);
    }

    #[test]
    fn rate_fit_recovers_exact_power_law(c in 0.1..10.0f64, q in 0.2..3.0f64) {
        let series: Vec<(f64, f64)> = (0..40).map(|i| {
            let t = 0.5 * i as f64;
            (t, c * (t + 1.0).powf(-q))
        }).collect();
        let fit = fit_polynomial_rate(&series, 1.0, 0.0).unwrap();
        prop_assert!((fit.slope + q).abs() < 1e-9);
        prop_assert!((fit.constant() / c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn csv_rows_round_trip(row in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 1..6), seed in any::<u64>()) {
        let prov = Provenance { manifest_hash: "abc".into(), version: "0".into(), seed };
        let cols: Vec<String> = (0..row.len()).map(|i| format!("c{i}")).collect();
        let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
        let mut w = CsvWriter::new(Vec::new(), &prov, &cols).unwrap();
        w.row(&row).unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        prop_assert_eq!(read_csv_provenance(&text).unwrap().seed, seed);
        let last = text.lines().last().unwrap();
        let parsed: Vec<f64> = last.split(',').map(|s| s.parse().unwrap()).collect();
        prop_assert_eq!(parsed, row);
    }

    #[test]
    fn manifest_round_trips_and_hash_ignores_output(gamma in 0.5..3.0f64, seed in any::<u64>(), every in 1u64..1000) {
        let mut m = Manifest::default();
        m.physics.gamma = gamma;
        m.noise.seed = seed;
        let back = Manifest::parse(&m.to_toml()).unwrap();
        prop_assert_eq!(back.hash(), m.hash());
        let mut o = m.clone();
        o.output.every = every;
        o.output.dir = "elsewhere".into();
        prop_assert_eq!(o.hash(), m.hash());
        let mut g = m.clone();
        g.physics.gamma = gamma * 1.5;
        prop_assert_ne!(g.hash(), m.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dictionary_distance_grows_with_prefix(a in field(16), b in field(16)) {
        let bs = basis(63);
        let dy = Dynamics::new(bs.clone(), PhysParams::defaults(&bs).unwrap(), 1e-2).unwrap();
        let dict = DualLipschitzDictionary::new(&dy, 8, 32, 7).unwrap();
        // features are arbitrary reals here; only the prefix maximum matters
        let fa: Vec<f64> = a.iter().cycle().take(dict.len()).copied().collect();
        let fb: Vec<f64> = b.iter().cycle().take(dict.len()).copied().collect();
        let mut last = 0.0;
        for k in 1..=dict.len() {
            let d = dual_lipschitz_from_features(&[fa.as_slice()], &[fb.as_slice()], &dict, k).unwrap();
            prop_assert!(d >= last && d <= 1.0);
            last = d;
        }
    }
}
