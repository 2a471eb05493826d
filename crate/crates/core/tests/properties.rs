use proptest::prelude::*;
use w2s_core::bounds::{bounded_student_lower_bound, is_shrink_optimal, quad_lower_bound};
use w2s_core::config::parse_config;
use w2s_core::detequiv::{det_risk, solve_nu, DetEquivProblem};
use w2s_core::experiments::{bootstrap_median_ci, fit_power_law, median};
use w2s_core::spectrum::{gegenbauer, linear_spectrum, relu_spectrum, LinearKind, ModelTag};
use w2s_core::student::{log_grid, loss_at, student_stats};
use w2s_core::verify::random_instance;
use w2s_core::Seed;

fn model() -> impl Strategy<Value = ModelTag> {
    prop_oneof![Just(ModelTag::LinearDiagonal), Just(ModelTag::ReluSphere)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn quad_floor_dominates_weak_floor(l in 0.0f64..=1.0) {
        let q = quad_lower_bound(l).unwrap();
        prop_assert!(q.exact >= q.weak - 1e-15);
        prop_assert!(q.exact <= l + 1e-15);
        prop_assert!(bounded_student_lower_bound(l).unwrap() <= q.exact + 1e-15);
    }

    #[test]
    fn quad_floor_rejects_out_of_range(l in prop_oneof![-10.0f64..-1e-9, 1.0 + 1e-9..10.0]) {
        prop_assert!(quad_lower_bound(l).is_err());
    }

    #[test]
    fn gegenbauer_is_bounded(k in 0usize..40, d in 3usize..60, t in -1.0f64..=1.0) {
        let p = gegenbauer(k, d, t).unwrap();
        prop_assert!(p.abs() <= 1.0 + 1e-12, "P={p}");
        prop_assert!((gegenbauer(k, d, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_law_fit_is_exact_on_power_laws(p in -3.0f64..3.0, c in 0.01f64..100.0, n in 2usize..20) {
        let pairs: Vec<(f64, f64)> = (0..n).map(|i| {
            let x = 0.01 * 1.7f64.powi(i as i32);
            (x, c * x.powf(p))
        }).collect();
        let fit = fit_power_law(&pairs).unwrap();
        prop_assert!((fit.exponent - p).abs() < 1e-9);
        prop_assert!((fit.log_prefactor - c.ln()).abs() < 1e-8);
        prop_assert!(fit.r2 > 1.0 - 1e-9);
    }

    #[test]
    fn median_ci_brackets_median(values in prop::collection::vec(-5.0f64..5.0, 1..30), seed in any::<u64>()) {
        let med = median(&values);
        let (lo, hi) = bootstrap_median_ci(&values, 200, 0.9, Seed(seed), 0);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= med && med <= max);
        prop_assert!(min <= lo && lo <= hi && hi <= max);
    }

    #[test]
    fn log_grid_is_increasing_with_exact_ends(a in -4.0f64..2.0, span in 0.1f64..10.0, n in 2usize..300) {
        let (t0, t1) = (10f64.powf(a), 10f64.powf(a + span));
        let g = log_grid(t0, t1, n).unwrap();
        prop_assert_eq!(g.len(), n);
        prop_assert_eq!(g[0], t0);
        prop_assert_eq!(g[n - 1], t1);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn spiked_spectrum_shape(k in 1usize..10, extra in 1usize..200) {
        let d = k + extra;
        let s = linear_spectrum(&LinearKind::Spiked { k, d }).unwrap();
        prop_assert_eq!(s.psi.len(), d);
        prop_assert!(s.psi.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.psi[..k].iter().all(|&p| p == 1.0));
        prop_assert!((s.psi[k] - (extra as f64).powf(-2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn heavy_tail_spectrum_shape(alpha in 0.01f64..10.0, d in 2usize..300) {
        if alpha > (d - 1) as f64 {
            let rejected = linear_spectrum(&LinearKind::HeavyTail { alpha, d }).is_err();
            prop_assert!(rejected);
            return Ok(());
        }
        let s = linear_spectrum(&LinearKind::HeavyTail { alpha, d }).unwrap();
        prop_assert_eq!(s.psi[0], 1.0);
        let tail = (alpha / (d - 1) as f64).sqrt();
        prop_assert!(s.psi[1..].iter().all(|&p| (p - tail).abs() <= 1e-15 * tail.max(1.0)));
    }

    #[test]
    fn det_risk_falls_with_width(
        s in prop::collection::vec(1e-4f64..1.0, 2..8),
        mult in prop::collection::vec(1u32..20, 8),
        w in prop::collection::vec(0.0f64..1.0, 8),
        m1 in 0.2f64..0.95,
    ) {
        let mut s = s;
        s.sort_by(|a, b| b.total_cmp(a));
        let g = s.len();
        let mult: Vec<f64> = mult[..g].iter().map(|&x| x as f64).collect();
        let total: f64 = w[..g].iter().sum::<f64>() + 1.0;
        let mut beta2: Vec<f64> = w[..g].iter().map(|x| x / total).collect();
        beta2[0] += 1.0 / total;
        let norm: f64 = beta2.iter().sum();
        let beta2: Vec<f64> = beta2.iter().map(|b| b / norm).collect();
        let count: f64 = mult.iter().sum();
        let (ma, mb) = (m1 * count * 0.5, m1 * count);
        let pa = DetEquivProblem::new(s.clone(), mult.clone(), beta2.clone(), ma).unwrap();
        let pb = DetEquivProblem::new(s, mult, beta2, mb).unwrap();
        let (na, nb) = (solve_nu(&pa).unwrap(), solve_nu(&pb).unwrap());
        prop_assert!(nb <= na);
        let (ra, rb) = (det_risk(&pa, na), det_risk(&pb, nb));
        prop_assert!(rb <= ra + 1e-12, "{ra} -> {rb}");
        prop_assert!((0.0..=1.0).contains(&ra));
    }

    #[test]
    fn config_canonical_round_trip(
        linear in any::<bool>(),
        ms in prop::collection::btree_set(1usize..5000, 1..6),
        seeds in 1usize..10,
        seed_base in any::<u32>(),
        t_min in 1e-3f64..1.0,
        span in 1.0f64..1e6,
        points in 10usize..400,
    ) {
        let head = if linear {
            "model = \"linear\"\nspectrum = \"spiked\"\nk = 2\nd_exponent = 1.5\n".to_string()
        } else {
            "model = \"relu\"\nd = 12\n".to_string()
        };
        let ms: Vec<String> = ms.iter().map(|m| m.to_string()).collect();
        let text = format!(
            "{head}m_list = [{}]\nseeds = {seeds}\nseed_base = {seed_base}\nt_min = {t_min:?}\nt_max = {:?}\nt_points = {points}\n",
            ms.join(", "), t_min * span
        );
        let cfg = parse_config(&text, false).unwrap();
        let again = parse_config(&cfg.canonical(), false).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.hash(), again.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn relu_spectrum_is_sorted_and_truncated(d in 3usize..40) {
        let tol = 1e-8;
        let s = relu_spectrum(d, tol).unwrap();
        prop_assert!(s.groups.windows(2).all(|w| w[0].eigenvalue >= w[1].eigenvalue));
        prop_assert!(s.groups.iter().all(|g| g.mass > 0.0 && g.multiplicity >= 1.0));
        prop_assert!(s.relative_tail() <= tol);
    }

    #[test]
    fn student_flow_properties(m in model(), seed in any::<u64>()) {
        let inst = random_instance(m, Seed(seed), None).unwrap();
        let tm = &inst.teacher;
        prop_assert!((tm.loss_from_groups() - tm.loss_te).abs() <= 1e-9);
        let (l0, gap0) = loss_at(tm, 0.0).unwrap();
        prop_assert!((l0 - 1.0).abs() < 1e-15);
        prop_assert!((gap0 - tm.norm2).abs() <= 1e-12 * tm.norm2.max(1.0));

        let mut times = vec![0.0];
        times.extend(log_grid(1e-3, 1e7, 60).unwrap());
        let mut prev = 0.0;
        for &t in &times {
            let st = student_stats(tm, t).unwrap();
            prop_assert!(is_shrink_optimal(&st), "T={t}: {st:?}");
            prop_assert!(st.norm2 >= prev - 1e-14, "norm fell at T={t}");
            prop_assert!(st.norm2 <= tm.norm2 * (1.0 + 1e-12) + 1e-15);
            prev = st.norm2;
            let (l, _) = loss_at(tm, t).unwrap();
            let floor = quad_lower_bound(tm.loss_te.clamp(0.0, 1.0)).unwrap().exact;
            prop_assert!(l >= floor - 1e-9, "T={t}: {l} < {floor}");
        }
    }
}
