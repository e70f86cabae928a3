use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgvqa::encoder::SgeMatrix;
use sgvqa::models::{
    attn_forward, concat_forward, late_fusion, mac_forward, AnswerDistribution, AttnHead, ConcatHead, LateFusionHead, MacConfig, MacHead,
    QuestionEmbedding,
};
use sgvqa::nn::{Linear, Mlp};
use sgvqa::tensor::{Matrix, ParamStore};

fn linear_ref(store: &ParamStore<f64>, l: &Linear, x: &[f64]) -> Vec<f64> {
    let (w, b) = (store.get(l.weight), store.get(l.bias));
    (0..l.out_dim)
        .map(|j| b.get(0, j) + x.iter().enumerate().map(|(i, xi)| xi * w.get(i, j)).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn mlp_ref(store: &ParamStore<f64>, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let h = relu(linear_ref(store, &m.hidden, x));
    linear_ref(store, &m.output, &h)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix<f64> {
    Matrix::from_vec(r, c, random_vec(rng, r * c))
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn concat_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let head = ConcatHead::new(&mut store, 3, 2, 4, 5, 3, &mut rng);
    for _ in 0..20 {
        let (q, s) = (random_vec(&mut rng, 3), random_vec(&mut rng, 2));
        let got = concat_forward(&head, &store, &q, &s).unwrap();
        let hq = relu(mlp_ref(&store, &head.question.mlp, &q));
        let hs = relu(mlp_ref(&store, &head.image.mlp, &s));
        let logits = mlp_ref(&store, &head.classifier.mlp, &[hq, hs].concat());
        assert_close(&got.logits, &logits, 1e-12);
        assert_close(&got.probabilities, &softmax(&logits), 1e-12);
    }
}

#[test]
fn fusion_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let head = LateFusionHead::new(&mut store, (3, 2), 4, 5, &mut rng);
    for _ in 0..20 {
        let (a, b) = (random_vec(&mut rng, 3), random_vec(&mut rng, 2));
        let got = late_fusion(&head, &store, &a, &b).unwrap();
        let ha = relu(linear_ref(&store, &head.branch_a, &a));
        let hb = relu(linear_ref(&store, &head.branch_b, &b));
        let logits = linear_ref(&store, &head.classifier, &[ha, hb].concat());
        assert_close(&got.logits, &logits, 1e-12);
    }
    assert!(matches!(late_fusion(&head, &store, &[0.0; 2], &[0.0; 2]), Err(sgvqa::Error::Shape(_))));
}

#[test]
fn fusion_with_a_silenced_branch_depends_on_the_other_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let head = LateFusionHead::new(&mut store, (3, 2), 4, 5, &mut rng);
    store.get_mut(head.branch_b.weight).data_mut().fill(0.0);
    store.get_mut(head.branch_b.bias).data_mut().fill(0.0);
    let a = random_vec(&mut rng, 3);
    let first = late_fusion(&head, &store, &a, &random_vec(&mut rng, 2)).unwrap();
    for _ in 0..5 {
        assert_eq!(late_fusion(&head, &store, &a, &random_vec(&mut rng, 2)).unwrap(), first);
    }
}

#[test]
fn ties_go_to_the_lowest_index() {
    assert_eq!(AnswerDistribution::from_logits(&[0.0f64, 0.0, 0.0]).argmax(), 0);
    assert_eq!(AnswerDistribution::from_logits(&[1.0f64, 3.0, 3.0]).argmax(), 1);
}

struct Fixture {
    store: ParamStore<f64>,
    attn: AttnHead,
    mac: MacHead,
    question: QuestionEmbedding<f64>,
}

const QDIM: usize = 4;
const KB: usize = 5;
const STEPS: usize = 3;

fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let attn = AttnHead::new(&mut store, "attn", (QDIM, KB, 6), 5, 4, &mut rng);
    let config = MacConfig {
        steps: STEPS,
        memory_dim: 5,
        control_dim: 4,
    };
    let mac = MacHead::new(&mut store, "mac", config, QDIM, KB, 6, 4, &mut rng).unwrap();
    let question = QuestionEmbedding::from_token_states(random_matrix(&mut rng, 3, QDIM)).unwrap();
    Fixture { store, attn, mac, question }
}

fn arb_kb() -> impl Strategy<Value = (SgeMatrix<f64>, u64)> {
    (2usize..8, any::<u64>()).prop_flat_map(|(n, seed)| {
        (proptest::collection::vec(any::<bool>(), n), Just(seed)).prop_map(move |(mut mask, seed)| {
            mask[0] = true;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (SgeMatrix::with_mask(random_matrix(&mut rng, n, KB), mask).unwrap(), seed)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn distributions_are_normalized((kb, seed) in arb_kb()) {
        let f = fixture(seed);
        let (d, weights) = attn_forward(&f.attn, &f.store, &f.question, &kb).unwrap();
        let trace = mac_forward(&f.mac, &f.store, &kb, &f.question).unwrap();
        for p in [&d.probabilities, &trace.distribution.probabilities] {
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(trace.read_maps.len(), STEPS);
        prop_assert_eq!(trace.control_maps.len(), STEPS);
        for map in &trace.read_maps {
            prop_assert_eq!(map.len(), kb.rows.rows());
            for (w, &live) in map.iter().zip(&kb.mask) {
                prop_assert!(live || *w == 0.0);
            }
        }
    }

    #[test]
    fn masked_rows_have_no_influence((kb, seed) in arb_kb(), fill in -100.0..100.0f64) {
        let f = fixture(seed);
        let mut altered = kb.clone();
        for (i, &live) in kb.mask.iter().enumerate() {
            if !live {
                altered.rows.row_mut(i).fill(fill);
            }
        }
        prop_assert_eq!(
            attn_forward(&f.attn, &f.store, &f.question, &kb).unwrap(),
            attn_forward(&f.attn, &f.store, &f.question, &altered).unwrap()
        );
        prop_assert_eq!(
            mac_forward(&f.mac, &f.store, &kb, &f.question).unwrap(),
            mac_forward(&f.mac, &f.store, &altered, &f.question).unwrap()
        );
    }

    #[test]
    fn row_order_does_not_matter((kb, seed) in arb_kb(), shuffle in any::<u64>()) {
        let f = fixture(seed);
        let n = kb.rows.rows();
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(shuffle));
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| kb.rows.row(i).to_vec()).collect();
        let mask = order.iter().map(|&i| kb.mask[i]).collect();
        let permuted = SgeMatrix::with_mask(Matrix::from_rows(&rows), mask).unwrap();
        let (a, _) = attn_forward(&f.attn, &f.store, &f.question, &kb).unwrap();
        let (b, _) = attn_forward(&f.attn, &f.store, &f.question, &permuted).unwrap();
        for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
            prop_assert!((x - y).abs() <= 1e-5);
        }
        let a = mac_forward(&f.mac, &f.store, &kb, &f.question).unwrap();
        let b = mac_forward(&f.mac, &f.store, &permuted, &f.question).unwrap();
        for (x, y) in a.distribution.probabilities.iter().zip(&b.distribution.probabilities) {
            prop_assert!((x - y).abs() <= 1e-5);
        }
    }
}
