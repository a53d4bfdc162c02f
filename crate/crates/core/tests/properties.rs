use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smc::funcs::{project_simplex, ConvexAtom, SimplexVector};
use smc::local::{
    candidate_mm, candidate_sm_with, exploration_epsilon, gain, q_update, ram_run, surrogate,
    RunTrace, Schedule, Weights,
};
use smc::micp::{auto_sbounds, value_function, SBounds};
use smc::problems;
use smc::smc::{SmcProblem, DEFAULT_ENUM_CAP};
use smc::subsolve::{FeasibleSet, SolverConfig};

fn simplex(n: usize) -> impl Strategy<Value = SimplexVector> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|v| project_simplex(&v))
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n)
}

fn on_simplex(q: &SimplexVector) -> bool {
    let s: f64 = q.as_slice().iter().sum();
    q.as_slice().iter().all(|v| *v >= 0.0) && (s - 1.0).abs() < 1e-9
}

fn dot(q: &SimplexVector, h: &[f64]) -> f64 {
    q.as_slice().iter().zip(h).map(|(a, b)| a * b).sum()
}

fn toys() -> Vec<SmcProblem> {
    problems::toy_library().into_values().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn candidates_lie_on_the_simplex(h in values(5), kappa in 0.0f64..20.0, u in prop::collection::vec(-5e-7f64..5e-7, 5)) {
        prop_assert!(on_simplex(&candidate_mm(&h, kappa)));
        prop_assert!(on_simplex(&candidate_sm_with(&h, kappa, &u)));
    }

    #[test]
    fn mm_and_sm_preserve_order(h in values(6), kappa in 0.1f64..20.0) {
        let mm = candidate_mm(&h, kappa);
        let sm = candidate_sm_with(&h, kappa, &[0.0; 6]);
        for i in 0..6 {
            for j in 0..6 {
                if h[i] < h[j] {
                    prop_assert!(mm.as_slice()[i] >= mm.as_slice()[j] - 1e-12);
                    prop_assert!(sm.as_slice()[i] >= sm.as_slice()[j] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn weight_update_keeps_its_share(h in values(4), q in simplex(4), cand in simplex(4), c in 0.0f64..0.99) {
        let imin = (0..4).min_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap();
        let star = SimplexVector::vertex(4, imin);
        let eps = exploration_epsilon(&q, &star, &cand, &h, c);
        prop_assert!((0.0..=1.0).contains(&eps));
        let next = q_update(&star, &cand, eps);
        prop_assert!(on_simplex(&next));
        let g = dot(&q, &h) - h[imin];
        prop_assert!(dot(&q, &h) - dot(&next, &h) >= (1.0 - c) * g - 1e-9);
    }

    #[test]
    fn surrogate_bounds_the_objective(which in 0usize..4, t in prop::collection::vec(0.0f64..1.0, 2), seed in any::<u64>()) {
        let p = &toys()[which];
        let x: Vec<f64> = (0..p.dim()).map(|j| {
            let (lo, hi) = (p.set().lower[j].max(-5.0), p.set().upper[j].min(5.0));
            lo + (hi - lo) * t[j % 2]
        }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Weights::sample_uniform(&p.sizes(), &mut rng);
        let f = p.objective(&x);
        let fbar = surrogate(p, &x, &q);
        let g = gain(p, &x, &q);
        prop_assert!(g >= 0.0);
        prop_assert!((fbar - g - f).abs() <= 1e-9 * (1.0 + f.abs()));
        let greedy = Weights::greedy(p, &x);
        prop_assert!((surrogate(p, &x, &greedy) - f).abs() <= 1e-12 * (1.0 + f.abs()));
    }

    #[test]
    fn value_function_is_monotone_in_c(x in -2.0f64..2.0, c0 in 0.0f64..1.0, c1 in 0.0f64..1.0) {
        let p = problems::toy_library().remove("abs_three").unwrap();
        let b = auto_sbounds(&p, &SolverConfig::default()).unwrap();
        let (lo, hi) = if c0 <= c1 { (c0, c1) } else { (c1, c0) };
        let vlo = value_function(&p, &b, lo, &[x]);
        let vhi = value_function(&p, &b, hi, &[x]);
        prop_assert!(vhi <= vlo + 1e-12);
        prop_assert!(vhi >= p.objective(&[x]) - 1e-12);
    }
}

#[test]
fn runs_stay_above_the_global_value() {
    let cfg = SolverConfig::default();
    for p in toys() {
        let f = p.enumerate_global(&cfg, DEFAULT_ENUM_CAP).unwrap().value;
        for name in ["am", "bb", "sm", "mm", "alter"] {
            for seed in 0..5 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let q = Weights::sample_uniform(&p.sizes(), &mut rng);
                let tr = ram_run(
                    &p,
                    &q,
                    &Schedule::named(name).unwrap(),
                    1e-8,
                    400,
                    &cfg,
                    &mut rng,
                )
                .unwrap();
                assert!(
                    tr.best_value >= f - 1e-9,
                    "{} {name}: {} < {f}",
                    p.name(),
                    tr.best_value
                );
                let best = tr.records.iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
                assert_eq!(best, tr.best_value);
            }
        }
    }
}

#[test]
fn convex_instance_stops_after_two_iterations() {
    let p = SmcProblem::new(
        "convex",
        ConvexAtom::constant(0.0),
        vec![vec![ConvexAtom::poly2(1.0, -2.0, 0.0).unwrap()]],
        FeasibleSet::cube(1, 3.0).unwrap(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let q = Weights::sample_uniform(&p.sizes(), &mut rng);
    let tr = ram_run(
        &p,
        &q,
        &Schedule::am(),
        1e-8,
        400,
        &SolverConfig::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(tr.records.len(), 2);
    assert!((tr.best_x[0] - 1.0).abs() < 1e-9);
}

#[test]
fn trace_and_bounds_round_trip() {
    let p = problems::toy_library().remove("parabolas").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = Weights::sample_uniform(&p.sizes(), &mut rng);
    let tr: RunTrace = ram_run(
        &p,
        &q,
        &Schedule::mm(),
        1e-8,
        400,
        &SolverConfig::default(),
        &mut rng,
    )
    .unwrap();
    let rows = RunTrace::parse_csv(&tr.to_csv()).unwrap();
    assert_eq!(rows.len(), tr.records.len());
    for (r, rec) in rows.iter().zip(&tr.records) {
        assert_eq!((r.0, r.1, r.2), (rec.k, rec.fbar, rec.f));
    }
    let b = auto_sbounds(&p, &SolverConfig::default()).unwrap();
    let back: SBounds = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
    assert_eq!(back, b);
    let again = SmcProblem::from_json(&p.to_json()).unwrap();
    assert_eq!(again, p);
}
