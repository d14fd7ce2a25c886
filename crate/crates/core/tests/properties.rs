use lorprod_core::causal_core::{build_causal_dag, classify, tau_table, CausalKind};
use lorprod_core::manifold_compat::q_reduce;
use lorprod_core::metric_family::{ConformalFamily, FamilySpec, Field, FieldSpec};
use lorprod_core::ode_engine::{compare, solve_ivp, straighten, CaratheodoryField, CompareVerdict, IvpOptions, Method, StraightenOptions};
use lorprod_core::product_geometry::{product_length, weighted_length, CurveSample, Event, ProductCurve, ProductSpacetime};
use lorprod_core::transport_curvature::{
    concavity_rigidity, entropy_decomposition, kn_convexity, sigma, wasserstein_h, wtcd_probe, DensityField, DiscreteMeasure,
    RigidityOptions, Sigma, TimeLapse, TimeMeasure, WtcdCase,
};
use lorprod_core::BaseSpace;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> BaseSpace {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.gen_range(0..v), v, rng.gen_range(0.1..2.0)));
    }
    for _ in 0..extra {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && !edges.iter().any(|e| (e.0, e.1) == (u, v) || (e.0, e.1) == (v, u)) {
            edges.push((u, v, rng.gen_range(0.1..2.0)));
        }
    }
    BaseSpace::unlabeled(n, edges).unwrap()
}

fn weighted_family(nodes: usize, len: f64, t1: f64, seed: u64) -> ConformalFamily {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..nodes).map(|_| rng.gen_range(0.7..1.3)).collect();
    let spec = FamilySpec {
        interval: (0.0, t1),
        rho: FieldSpec::ExpLinear { a: 1.0, weights: Some(weights) },
        lapse: FieldSpec::Constant { value: 1.0 },
        declared: Default::default(),
    };
    ConformalFamily::from_spec(BaseSpace::path_graph(nodes, len).unwrap(), &spec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conformal_distance_is_a_metric(seed in any::<u64>(), n in 2usize..9, extra in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(n, extra, &mut rng);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
        let d: Vec<Vec<f64>> = (0..n).map(|x| g.conformal_distances_from(&w, x).unwrap()).collect();
        for x in 0..n {
            prop_assert_eq!(d[x][x], 0.0);
            for y in 0..n {
                prop_assert!((d[x][y] - d[y][x]).abs() <= 1e-12 * d[x][y].max(1.0));
                if x != y {
                    prop_assert!(d[x][y] > 0.0);
                }
                for z in 0..n {
                    prop_assert!(d[x][z] <= d[x][y] + d[y][z] + 1e-12);
                }
            }
        }
        let bigger: Vec<f64> = w.iter().map(|v| v * rng.gen_range(1.0..2.0)).collect();
        for x in 0..n {
            let db = g.conformal_distances_from(&bigger, x).unwrap();
            for y in 0..n {
                prop_assert!(db[y] >= d[x][y]);
            }
        }
    }

    #[test]
    fn reverse_triangle_on_weighted_family(seed in any::<u64>()) {
        let st = ProductSpacetime::uniform(weighted_family(9, 0.04, 0.6, seed), 12, 1).unwrap();
        let dag = build_causal_dag(&st).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let p = Event::new(rng.gen_range(0..6), rng.gen_range(0..9));
        let from_p = tau_table(&dag, p).unwrap();
        for _ in 0..10 {
            let q = Event::new(rng.gen_range(p.layer..=12), rng.gen_range(0..9));
            if !from_p.reachable(q) {
                continue;
            }
            let from_q = tau_table(&dag, q).unwrap();
            for r in (q.layer..=12).flat_map(|l| (0..9).map(move |x| Event::new(l, x))) {
                if from_q.reachable(r) {
                    let pr = from_p.units(r).unwrap();
                    let sum = from_p.units(q).unwrap() + from_q.units(r).unwrap();
                    prop_assert!(pr >= sum);
                }
            }
        }
    }

    #[test]
    fn causal_walks_obey_length_bound(seed in any::<u64>()) {
        let st = ProductSpacetime::uniform(weighted_family(12, 0.05, 1.0, seed), 20, 2).unwrap();
        let dag = build_causal_dag(&st).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = Event::new(0, rng.gen_range(0..12));
        let mut events = vec![e];
        while e.layer < 20 {
            let steps = dag.steps_from(e.layer, e.node);
            let next = steps[rng.gen_range(0..steps.len())].to;
            e = Event::new(e.layer + 1, next);
            events.push(e);
        }
        let gamma = ProductCurve::from_events(&st, &events).unwrap();
        prop_assert_ne!(classify(&st, &gamma).unwrap().kind, CausalKind::NonCausal);
        let wl = weighted_length(&st, &gamma).unwrap();
        prop_assert!(wl <= 2f64.sqrt() * gamma.time_extent() + 1e-12);
    }

    #[test]
    fn ode_solutions_stay_ordered(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c): (f64, f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(0.5..3.0), rng.gen_range(-1.0..1.0));
        let cut: f64 = rng.gen_range(0.1..0.9);
        // measurable in t, Lipschitz in y with constant |a| b
        let f = CaratheodoryField::new(a.abs() * b, false, move |y, t| if t < cut { a * (b * y).sin() + c } else { -a * (b * y).cos() });
        let y0: f64 = rng.gen_range(-1.0..1.0);
        let y1 = y0 + rng.gen_range(1e-3..1.0);
        let opts = IvpOptions { step: 1e-3, method: Some(Method::Euler), error_estimate: false };
        let lo = solve_ivp(&f, 0.0, y0, 1.0, opts).unwrap();
        let hi = solve_ivp(&f, 0.0, y1, 1.0, opts).unwrap();
        prop_assert_eq!(&lo, &solve_ivp(&f, 0.0, y0, 1.0, opts).unwrap());
        prop_assert!(lo.values.iter().zip(&hi.values).all(|(a, b)| a < b));
        let verdict = compare(&f, &lo.trajectory(), &hi.trajectory(), 1e-9).unwrap();
        prop_assert!(matches!(verdict, CompareVerdict::StrictAfter { .. }), "{:?}", verdict);
    }

    #[test]
    fn wasserstein_metric_and_h_isometry(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let measure = |rng: &mut ChaCha8Rng| {
            let pts: Vec<f64> = (0..n).map(|i| i as f64 * 0.37 + rng.gen_range(0.0..0.3)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = w.iter().sum();
            DiscreteMeasure::new(pts.into_iter().zip(w.into_iter().map(|v| v / total)).collect()).unwrap()
        };
        let (a, b, c) = (measure(&mut rng), measure(&mut rng), measure(&mut rng));
        let lapse = TimeLapse::new(|s| 1.0 + 0.5 * s * s);
        let w = |x: &DiscreteMeasure<f64>, y: &DiscreteMeasure<f64>| wasserstein_h(x, y, &lapse).value;
        prop_assert_eq!(w(&a, &a), 0.0);
        prop_assert_eq!(w(&a, &b), w(&b, &a));
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
        let push = |x: &DiscreteMeasure<f64>| DiscreteMeasure::new(x.atoms.iter().map(|&(t, m)| (lapse.big_h(t), m)).collect()).unwrap();
        prop_assert_eq!(w(&a, &b), wasserstein_h(&push(&a), &push(&b), &TimeLapse::constant(1.0)).value);
    }

    #[test]
    fn entropy_decomposition_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..7);
        let amp: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..3.0)).collect();
        let slope: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = Field::new("g", true, move |s, x| amp[x] * (slope[x] * s).exp());
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let field = DensityField::new(g, raw.iter().map(|m| m / total).collect(), TimeLapse::constant(rng.gen_range(0.5..2.0))).unwrap();
        let a = rng.gen_range(-1.0..1.0);
        let nu = TimeMeasure::uniform_window(&field.lapse, a, a + rng.gen_range(0.1..1.0)).unwrap();
        let region: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.6)).collect();
        prop_assume!(!region.is_empty());
        prop_assert!(entropy_decomposition(&field, &nu, &region, 0.0).unwrap().residual < 1e-12);
    }

    #[test]
    fn sigma_zero_curvature_is_linear(t in 0.0f64..=1.0, theta in 0.0f64..100.0) {
        prop_assert_eq!(sigma(0.0, t, theta), Sigma::Finite(t));
    }

    #[test]
    fn kn_zero_curvature_matches_midpoint_concavity(u0 in -3.0f64..3.0, um in -3.0f64..3.0, u1 in -3.0f64..3.0, n in 1.0f64..5.0) {
        let r = kn_convexity(&[(0.0, u0), (0.5, um), (1.0, u1)], 0.0, n, 1.0, 1e-9).unwrap();
        let e = |v: f64| (-v / n).exp();
        prop_assert_eq!(r.pass, e(um) - 0.5 * (e(u0) + e(u1)) >= -1e-9);
    }

    #[test]
    fn straighten_is_exact_at_ends(seed in any::<u64>()) {
        let st = ProductSpacetime::uniform(weighted_family(10, 0.02, 0.5, seed), 10, 1).unwrap();
        let dag = build_causal_dag(&st).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Event::new(rng.gen_range(0..4), rng.gen_range(0..10));
        let table = tau_table(&dag, p).unwrap();
        let candidates: Vec<Event> = table.rows().into_iter().filter(|r| r.0 > p.layer + 1 && r.2 > 0.0).map(|r| Event::new(r.0, r.1)).collect();
        prop_assume!(!candidates.is_empty());
        let q = candidates[rng.gen_range(0..candidates.len())];
        let gamma = lorprod_core::maximizer(&dag, &st, p, q).unwrap();
        let r = straighten(&st, &gamma, StraightenOptions::default()).unwrap();
        prop_assert_eq!(r.curve.first(), gamma.first());
        prop_assert_eq!(r.curve.last(), gamma.last());
        prop_assert!(r.constancy <= 1e-6);
        prop_assert!(r.monotone);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn q_reduce_flat_constant_speed(steps in 2usize..20, speed in 0usize..2, start in 0usize..5) {
        let fam = ConformalFamily::flat(BaseSpace::path_graph(30, 0.05).unwrap(), (0.0, 2.0)).unwrap();
        let st = ProductSpacetime::uniform(fam, 20, 1).unwrap();
        let samples: Vec<CurveSample> = (0..=steps)
            .map(|k| CurveSample { t: k as f64 * 0.1, s: k as f64 * 0.1, x: start + speed * k })
            .collect();
        let r = q_reduce(&st, &ProductCurve::new(samples).unwrap()).unwrap();
        prop_assert!(r.residual < 1e-10);
    }

    #[test]
    fn rigidity_follows_passing_probes(kind in 0usize..3, c in -0.8f64..0.8) {
        let base = BaseSpace::path_graph(2, 1.0).unwrap();
        let spec = match kind {
            0 => FieldSpec::ExpLinear { a: c, weights: None },
            1 => FieldSpec::AffineWeighted { a: 1.0, b: c, weights: None },
            _ => FieldSpec::ExpQuadratic { a: c },
        };
        let field = DensityField::from_spec(&base, &spec, None, &FieldSpec::Constant { value: 1.0 }).unwrap();
        let windows = [(-0.2, 0.0), (0.0, 0.4), (-0.2, 0.8), (0.1, 0.3)];
        let cases: Vec<WtcdCase> = windows
            .iter()
            .enumerate()
            .flat_map(|(i, &(a, b))| {
                windows.iter().enumerate().filter(move |(_, w)| w.0 >= b).map(move |(j, &(c2, d))| WtcdCase {
                    name: format!("{i}-{j}"),
                    nu0: TimeMeasure::uniform_window(&TimeLapse::constant(1.0), a, b).unwrap(),
                    nu1: TimeMeasure::uniform_window(&TimeLapse::constant(1.0), c2, d).unwrap(),
                    region: vec![0, 1],
                })
            })
            .collect();
        let probe = wtcd_probe(&field, 0.5, 0.0, 1.0, &cases, 9).unwrap();
        if probe.pass {
            let r = concavity_rigidity(&field, 0.0, 1.0, &[(-0.2, 0.8)], RigidityOptions::default()).unwrap();
            prop_assert!(r.all_concave);
        }
    }
}

#[test]
fn product_length_refinement_is_second_order() {
    // vertical segment under a time-dependent lapse e^s: exact length e - 1
    let spec = FamilySpec {
        interval: (0.0, 1.0),
        rho: FieldSpec::Constant { value: 1.0 },
        lapse: FieldSpec::ExpLinear { a: 1.0, weights: None },
        declared: Default::default(),
    };
    let fam = ConformalFamily::from_spec(BaseSpace::path_graph(3, 0.5).unwrap(), &spec).unwrap();
    let st = ProductSpacetime::uniform(fam, 4, 1).unwrap();
    let exact = std::f64::consts::E - 1.0;
    let errs: Vec<f64> = [2usize, 4, 8, 16]
        .iter()
        .map(|&n| {
            let fine: Vec<CurveSample> = (0..=n).map(|k| CurveSample { t: k as f64 / n as f64, s: k as f64 / n as f64, x: 1 }).collect();
            (product_length(&st, &ProductCurve::new(fine).unwrap()).unwrap() - exact).abs()
        })
        .collect();
    for w in errs.windows(2) {
        assert!(w[1] < w[0] / 3.5, "{errs:?}");
    }
}

#[test]
fn push_up_exhaustive_small_grid() {
    use lorprod_core::ode_engine::{push_up, PushUpOptions};
    use lorprod_core::Verdict;
    let st = ProductSpacetime::uniform(weighted_family(4, 0.04, 0.4, 9), 6, 1).unwrap();
    let dag = build_causal_dag(&st).unwrap();
    let events: Vec<Event> = (0..=6).flat_map(|l| (0..4).map(move |x| Event::new(l, x))).collect();
    let mut checked = 0;
    for &q in &events {
        let from_q = tau_table(&dag, q).unwrap();
        for &p in events.iter().filter(|&&p| from_q.reachable(p)) {
            let from_p = tau_table(&dag, p).unwrap();
            for &r in events.iter().filter(|&&r| r != p && from_p.strict(r)) {
                let left = lorprod_core::maximizer(&dag, &st, q, p).unwrap();
                let right = lorprod_core::maximizer(&dag, &st, p, r).unwrap();
                let out = push_up(&st, &left, &right, Verdict::Pass, PushUpOptions::default()).unwrap();
                assert_eq!(classify(&st, &out.curve).unwrap().kind, CausalKind::Timelike, "{q:?} {p:?} {r:?}");
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}
