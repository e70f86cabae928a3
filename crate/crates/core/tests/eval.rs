use proptest::prelude::*;
use sgvqa::eval::{accuracy, average_reports, compare_regimes};
use sgvqa::models::Prediction;
use sgvqa::question::{Question, SemanticType};

const ANSWERS: [&str; 4] = ["red", "dog", "yes", "no"];

fn arb_case() -> impl Strategy<Value = (Vec<Question>, Vec<Prediction>)> {
    proptest::collection::vec((0..SemanticType::ALL.len(), 0..ANSWERS.len(), 0..ANSWERS.len()), 1..60).prop_map(|rows| {
        let gold = rows
            .iter()
            .enumerate()
            .map(|(i, &(t, a, _))| Question {
                question_id: format!("q{i}"),
                text: "what?".into(),
                answer: ANSWERS[a].into(),
                image_id: "img".into(),
                semantic_type: SemanticType::ALL[t],
                program: None,
            })
            .collect();
        let predictions = rows
            .iter()
            .enumerate()
            .map(|(i, &(_, _, p))| Prediction {
                question_id: format!("q{i}"),
                answer: format!(" {} ", ANSWERS[p].to_uppercase()),
                probability: 0.5,
            })
            .collect();
        (gold, predictions)
    })
}

proptest! {
    #[test]
    fn per_type_counts_and_weighted_mean((gold, predictions) in arb_case()) {
        let refs: Vec<&Question> = gold.iter().collect();
        let r = accuracy(&predictions, &refs, "GT", 0).unwrap();
        prop_assert_eq!(r.per_semantic_type.values().map(|m| m.count).sum::<usize>(), gold.len());
        let weighted: f64 = r.per_semantic_type.values().map(|m| m.accuracy * m.count as f64).sum::<f64>() / gold.len() as f64;
        prop_assert!((weighted - r.overall_accuracy).abs() < 1e-12);
        let hits = gold
            .iter()
            .zip(&predictions)
            .filter(|(q, p)| p.answer.trim().to_lowercase() == q.answer)
            .count();
        prop_assert!((r.overall_accuracy - hits as f64 / gold.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn order_does_not_matter((gold, predictions) in arb_case(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let refs: Vec<&Question> = gold.iter().collect();
        let mut shuffled_refs = refs.clone();
        let mut shuffled_predictions = predictions.clone();
        shuffled_refs.shuffle(&mut rng);
        shuffled_predictions.shuffle(&mut rng);
        prop_assert_eq!(
            accuracy(&predictions, &refs, "GT", 0).unwrap(),
            accuracy(&shuffled_predictions, &shuffled_refs, "GT", 0).unwrap()
        );
    }
}

#[test]
fn missing_predictions_are_an_error() {
    let q = Question {
        question_id: "q0".into(),
        text: "what?".into(),
        answer: "red".into(),
        image_id: "img".into(),
        semantic_type: SemanticType::Attribute,
        program: None,
    };
    assert!(matches!(accuracy(&[], &[&q], "GT", 0), Err(sgvqa::Error::MissingPredictions(ids)) if ids == ["q0"]));
}

#[test]
fn comparison_lists_differences_from_the_first_regime() {
    let q: Vec<Question> = (0..4)
        .map(|i| Question {
            question_id: format!("q{i}"),
            text: "what?".into(),
            answer: "red".into(),
            image_id: "img".into(),
            semantic_type: SemanticType::Relation,
            program: None,
        })
        .collect();
    let refs: Vec<&Question> = q.iter().collect();
    let report = |hits: usize, regime: &str| {
        let p: Vec<Prediction> = (0..4)
            .map(|i| Prediction {
                question_id: format!("q{i}"),
                answer: if i < hits { "red" } else { "blue" }.into(),
                probability: 1.0,
            })
            .collect();
        accuracy(&p, &refs, regime, 0).unwrap()
    };
    let gt = average_reports(&[report(1, "GT"), report(2, "GT")]).unwrap();
    assert!((gt.overall_accuracy - 0.375).abs() < 1e-12);
    let c = compare_regimes(&[gt, report(3, "Probabilistic (Complete)")]).unwrap();
    assert_eq!(c.baseline, "GT");
    assert!((c.rows[1].difference - 0.375).abs() < 1e-12);
    assert!(c.to_csv().lines().count() >= 3);
}
