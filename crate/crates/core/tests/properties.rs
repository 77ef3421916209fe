use proptest::prelude::*;
use riskprof::choice::{choice_probabilities, ChoiceModelSpec};
use riskprof::lottery::{generate_dataset, GeneratorConfig, QuestionMode};
use riskprof::questionnaire::{extract_choice_letter, extract_likert, RiskCategory};
use riskprof::utility::{eval_utility, UtilityModel};

fn mode() -> impl Strategy<Value = QuestionMode> {
    prop_oneof![Just(QuestionMode::SameEv), Just(QuestionMode::DiffEv), Just(QuestionMode::FourOption)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_questions_are_well_formed(seed in any::<u64>(), mode in mode()) {
        let cfg = GeneratorConfig::with_seed(seed);
        let qs = generate_dataset(&cfg, mode, 20).unwrap();
        for q in &qs {
            prop_assert_eq!(q.options.len(), mode.option_count());
            let mut labels = q.labels.clone();
            labels.sort();
            labels.dedup();
            prop_assert_eq!(labels.len(), q.options.len());
            for l in &q.options {
                let total: f64 = l.outcomes().iter().map(|o| o.prob).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(l.outcomes().iter().all(|o| o.reward > 0.0 && o.prob > 0.0));
            }
            if mode == QuestionMode::SameEv {
                prop_assert!((q.moments[0].ev - q.moments[1].ev).abs() < 1e-6);
            }
        }
        prop_assert_eq!(qs, generate_dataset(&cfg, mode, 20).unwrap());
    }

    #[test]
    fn crra_is_increasing(gamma in -5.0f64..5.0, x in 1.0f64..900.0, step in 1e-3f64..0.5) {
        let m = UtilityModel::crra(gamma);
        prop_assert!(eval_utility(&m, x).unwrap() < eval_utility(&m, x * (1.0 + step)).unwrap());
    }

    #[test]
    fn cara_is_increasing_and_concave(alpha in 1e-3f64..3.0, x in 1.0f64..900.0, h in 0.5f64..50.0) {
        let m = UtilityModel::cara(alpha);
        let (a, b, c) = (eval_utility(&m, x).unwrap(), eval_utility(&m, x + h).unwrap(), eval_utility(&m, x + 2.0 * h).unwrap());
        prop_assert!(a < b && b < c);
        prop_assert!(b - a >= c - b);
    }

    #[test]
    fn prospect_losses_loom_larger(a in 0.1f64..=1.0, lambda in 1.0f64..4.0, x in 0.5f64..1000.0) {
        let m = UtilityModel::prospect(a, a, lambda, 0.0);
        let gain = eval_utility(&m, x).unwrap();
        let loss = eval_utility(&m, -x).unwrap();
        prop_assert_eq!(loss, -lambda * gain);
        prop_assert!(-loss >= gain);
    }

    #[test]
    fn choice_probabilities_form_a_distribution(seed in any::<u64>(), beta in 1e-4f64..10.0, mode in mode()) {
        let q = &generate_dataset(&GeneratorConfig::with_seed(seed), mode, 1).unwrap()[0];
        let spec = ChoiceModelSpec::new(UtilityModel::crra(0.71), beta);
        let p = choice_probabilities(&spec, q).unwrap();
        prop_assert_eq!(p.len(), q.options.len());
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn likert_extraction_stays_on_scale(text in ".{0,80}") {
        if let Some(v) = extract_likert(&text) {
            prop_assert!((1..=7).contains(&v));
        }
    }

    #[test]
    fn letter_extraction_respects_allowed_set(text in "[ -~]{0,60}") {
        if let Some(c) = extract_choice_letter(&text, &['A', 'B', 'C']) {
            prop_assert!(['A', 'B', 'C'].contains(&c));
        }
    }

    #[test]
    fn categories_are_monotone(total in 0u32..60) {
        prop_assert!(RiskCategory::from_total(total) <= RiskCategory::from_total(total + 1));
    }
}
