//! Randomized properties checked against the reference computations.

mod common;

use proptest::prelude::*;

use common::{binom_pmfs, stage_decision, sum_recursion};
use seqlimit::limits::{exact_lower, exact_upper};
use seqlimit::twoprop::truncation_bounds;
use seqlimit::{oc_point, LimitFamily, Model, PlanDocument, PlanSpec, Schedule, TwoPropSpec};

fn spec_strategy() -> impl Strategy<Value = PlanSpec> {
    (0.05f64..0.6, 0.15f64..0.35, 0.02f64..0.2, 0.02f64..0.2, 0.3f64..1.5, 1usize..6, prop::bool::ANY).prop_map(
        |(t0, gap, a, b, zeta, stages, chernoff)| {
            let family = if chernoff { LimitFamily::Chernoff } else { LimitFamily::Exact };
            PlanSpec::one_sided(Model::Bernoulli, t0, (t0 + gap).min(0.97), a, b)
                .with_family(family)
                .with_zeta(zeta)
                .with_schedule(Schedule::Geometric { stages })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_limits_are_tight(n in 1u64..80, frac in 0.0f64..=1.0, delta in 0.001f64..0.5) {
        let k = (frac * n as f64).round() as u64;
        let l = exact_lower(Model::Bernoulli, n, k, delta).unwrap();
        let u = exact_upper(Model::Bernoulli, n, k, delta).unwrap();
        let z = k as f64 / n as f64;
        prop_assert!(l.value <= z && z <= u.value);
        let upper_tail = |t: f64| binom_pmfs(n, t)[k as usize..].iter().sum::<f64>();
        let lower_tail = |t: f64| binom_pmfs(n, t)[..=k as usize].iter().sum::<f64>();
        if !l.boundary {
            prop_assert!(upper_tail(l.value) <= delta * (1.0 + 1e-9));
            prop_assert!(upper_tail((l.value + 1e-7).min(1.0)) > delta * (1.0 - 1e-6));
        }
        if !u.boundary {
            prop_assert!(lower_tail(u.value) <= delta * (1.0 + 1e-9));
            prop_assert!(lower_tail((u.value - 1e-7).max(0.0)) > delta * (1.0 - 1e-6));
        }
    }

    #[test]
    fn oc_matches_reference(spec in spec_strategy(), theta in 0.01f64..0.99) {
        let plan = spec.build().unwrap();
        let lib = oc_point(&plan, theta).unwrap();
        let acc = sum_recursion(&plan, theta, false).accept(2);
        prop_assert!((lib.accept[0] - acc[0]).abs() < 1e-10);
        prop_assert!((lib.accept.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let sizes = plan.sizes();
        prop_assert!(lib.asn >= sizes[0] as f64 - 1e-9 && lib.asn <= *sizes.last().unwrap() as f64 + 1e-9);
    }

    #[test]
    fn run_follows_the_thresholds(spec in spec_strategy(), bits in prop::collection::vec(0u64..2, 400)) {
        let plan = spec.build().unwrap();
        prop_assume!(plan.max_sample_size() <= 400);
        let out = plan.run(bits.iter().copied()).unwrap();
        // the first stage whose decision is nonzero ends the test
        let mut expected = None;
        for (l, st) in plan.stages.iter().enumerate() {
            let k: u64 = bits[..st.n as usize].iter().sum();
            let d = stage_decision(&plan, l, k);
            if d != 0 {
                expected = Some((l + 1, st.n, d - 1));
                break;
            }
        }
        prop_assert_eq!(Some((out.stage_index, out.sample_count, out.accepted_index)), expected);
    }

    #[test]
    fn documents_round_trip(spec in spec_strategy()) {
        let doc = PlanDocument::from_plan(spec.build().unwrap(), "property");
        let text = doc.to_json().unwrap();
        let back = PlanDocument::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json().unwrap(), text);
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn truncation_window_holds_its_mass(theta in 0.0f64..=1.0, n in 1u64..300, eta in 1e-6f64..0.5) {
        let (lb, ub) = truncation_bounds(theta, n, eta);
        prop_assert!(lb <= theta + 1e-12 && theta <= ub + 1e-12);
        let outside: f64 = binom_pmfs(n, theta)
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let p = *k as f64 / n as f64;
                p < lb || p > ub
            })
            .map(|(_, w)| w)
            .sum();
        prop_assert!(outside <= eta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn two_prop_run_matches_regions(
        t in 0.2f64..0.5,
        a in 0.05f64..0.25,
        xs in prop::collection::vec(0u64..2, 200),
        ys in prop::collection::vec(0u64..2, 200),
    ) {
        let plan = TwoPropSpec::two(-t, t, a, a).build().unwrap();
        let (nx, ny) = *plan.sizes().last().unwrap();
        prop_assume!(nx <= 200 && ny <= 200);
        let out = plan.run(xs.iter().copied(), ys.iter().copied()).unwrap();
        let st = &plan.stages[out.stage_index - 1];
        let kx: u64 = xs[..st.nx as usize].iter().sum();
        let ky: u64 = ys[..st.ny as usize].iter().sum();
        prop_assert_eq!(st.decision(kx, ky), Some(out.accepted_index));
        for earlier in &plan.stages[..out.stage_index - 1] {
            let kx: u64 = xs[..earlier.nx as usize].iter().sum();
            let ky: u64 = ys[..earlier.ny as usize].iter().sum();
            prop_assert_eq!(earlier.decision(kx, ky), None);
        }
    }
}
