#![allow(dead_code)]

use promptrec::corpus::{Corpus, FeatureSet, InteractionRecord, SynthConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// A toy corpus for BLEU/ROUGE with hand-counted expected scores (percent).
pub struct Toy {
    pub name: &'static str,
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
    pub bleu1: f64,
    pub bleu4: f64,
    pub r1: [f64; 3],
    pub r2: [f64; 3],
}

fn toy(name: &'static str, pairs: &[(&str, &str)], bleu1: f64, bleu4: f64, r1: [f64; 3], r2: [f64; 3]) -> Toy {
    Toy {
        name,
        pairs: pairs.iter().map(|(g, r)| (words(g), words(r))).collect(),
        bleu1,
        bleu4,
        r1,
        r2,
    }
}

pub fn toy_corpora() -> Vec<Toy> {
    let e = f64::exp;
    vec![
        toy(
            "identical",
            &[("the room was very clean", "the room was very clean")],
            100.0,
            100.0,
            [100.0; 3],
            [100.0; 3],
        ),
        // 4 x "the" against one "the": clipped unigram 1/4, no bigram hits.
        toy(
            "clipping",
            &[("the the the the", "the cat is here")],
            25.0,
            0.0,
            [25.0; 3],
            [0.0; 3],
        ),
        // c=6, r=8; unigrams 5/6, bigrams 2/4, trigrams 1/2, 4-grams 0/1.
        // ROUGE-1 per pair: (3/4, 3/5, 2/3), (1, 2/3, 4/5).
        // ROUGE-2 per pair: (2/3, 1/2, 4/7), (0, 0, 0).
        toy(
            "brevity",
            &[
                ("great gym and pool", "great gym and friendly staff"),
                ("nice room", "nice clean room"),
            ],
            100.0 * e(-1.0 / 3.0) * 5.0 / 6.0,
            0.0,
            [100.0 * 7.0 / 8.0, 100.0 * 19.0 / 30.0, 100.0 * 11.0 / 15.0],
            [100.0 / 3.0, 25.0, 100.0 * 2.0 / 7.0],
        ),
        // c=9, r=4; precisions 4/9, 3/8, 2/7, 1/6.
        toy(
            "repetition",
            &[("the staff were friendly and the staff were kind", "the staff were friendly")],
            100.0 * 4.0 / 9.0,
            100.0 * (1.0f64 / 126.0).powf(0.25),
            [100.0 * 4.0 / 9.0, 100.0, 100.0 * 8.0 / 13.0],
            [100.0 * 3.0 / 8.0, 100.0, 100.0 * 6.0 / 11.0],
        ),
        // c=6, r=9; every n-gram precision is 1. The empty and one-word
        // generations contribute zero ROUGE-2 and zero precision when empty.
        toy(
            "short",
            &[("", "clean room"), ("clean", "clean room"), ("quiet room near the park", "quiet room near the park")],
            100.0 * e(-0.5),
            100.0 * e(-0.5),
            [100.0 * 2.0 / 3.0, 50.0, 100.0 * 5.0 / 9.0],
            [100.0 / 3.0; 3],
        ),
    ]
}

/// Random generated-sentence corpus over a small feature set.
pub struct RandomCase {
    pub features: FeatureSet,
    pub generated: Vec<Vec<String>>,
}

const FILLER: [&str; 6] = ["the", "was", "great", "and", "very", "nice"];

pub fn random_case(rng: &mut ChaCha8Rng) -> RandomCase {
    let n_feat = rng.random_range(1..=20);
    let feats: Vec<String> = (0..n_feat).map(|k| format!("f{k}")).collect();
    let n = rng.random_range(2..=50);
    let mut generated: Vec<Vec<String>> = Vec::with_capacity(n);
    for _ in 0..n {
        if !generated.is_empty() && rng.random_bool(0.2) {
            let dup = generated.choose(rng).unwrap().clone();
            generated.push(dup);
            continue;
        }
        let len = rng.random_range(0..=8);
        let s = (0..len)
            .map(|_| {
                if rng.random_bool(0.4) {
                    feats.choose(rng).unwrap().clone()
                } else {
                    FILLER.choose(rng).unwrap().to_string()
                }
            })
            .collect();
        generated.push(s);
    }
    RandomCase {
        features: feats.into_iter().collect(),
        generated,
    }
}

pub fn oracle_usr(generated: &[Vec<String>]) -> f64 {
    let mut unique = 0;
    for (a, s) in generated.iter().enumerate() {
        if !generated[..a].iter().any(|t| t == s) {
            unique += 1;
        }
    }
    unique as f64 / generated.len() as f64
}

pub fn oracle_fcr(generated: &[Vec<String>], features: &FeatureSet) -> f64 {
    let covered = features
        .iter()
        .filter(|f| generated.iter().any(|s| s.iter().any(|w| w == *f)))
        .count();
    covered as f64 / features.len() as f64
}

pub fn oracle_div(generated: &[Vec<String>], features: &FeatureSet) -> f64 {
    let n = generated.len();
    let mut total = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            total += features
                .iter()
                .filter(|f| generated[a].contains(f) && generated[b].contains(f))
                .count();
        }
    }
    2.0 * total as f64 / (n * (n - 1)) as f64
}

/// Deterministic synthetic corpus.
pub fn synth_corpus(users: usize, items: usize, records: usize, seed: u64) -> Corpus {
    let cfg = SynthConfig {
        n_users: users,
        n_items: items,
        n_records: records,
        seed,
        ..SynthConfig::default()
    };
    Corpus::from_records(promptrec::corpus::synthesize(&cfg).unwrap())
}

/// Four records over a seven-word vocabulary (eleven tokens with specials).
pub fn tiny_corpus() -> Corpus {
    let rec = |u: &str, i: &str, r: f64, text: &str, f: &[&str]| InteractionRecord::new(u, i, r, text, f).unwrap();
    Corpus::from_records(vec![
        rec("u0", "i0", 4.0, "great gym", &["gym"]),
        rec("u1", "i0", 2.0, "small gym and pool", &["gym", "pool"]),
        rec("u0", "i1", 5.0, "great view", &["view"]),
        rec("u1", "i1", 3.0, "view and quiet pool", &["view", "pool"]),
    ])
}

pub fn small_config() -> promptrec::trainer::TrainConfig {
    promptrec::trainer::TrainConfig {
        d_model: 16,
        d_ff: 32,
        batch_size: 8,
        learning_rate: 0.01,
        max_epochs: 3,
        ..Default::default()
    }
}

/// A briefly trained checkpoint on a 20-user, 20-item, 80-record corpus.
pub fn quick_checkpoint(epochs: usize) -> (promptrec::checkpoint::Checkpoint, Corpus) {
    let corpus = synth_corpus(20, 20, 80, 4);
    let split = promptrec::corpus::split_dataset(&corpus.records, 0);
    let cfg = promptrec::trainer::TrainConfig {
        max_epochs: epochs,
        ..small_config()
    };
    let out = promptrec::trainer::train(&cfg, &corpus, &split, None).unwrap();
    (out.checkpoint, corpus)
}

pub fn tensor_bits(m: &promptrec::model::Model<f32>) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    let mut out = Vec::new();
    m.visit(&mut |name, t| out.push((name, t.shape.clone(), t.data.iter().map(|v| v.to_bits()).collect())));
    out.push((
        "task_weights".into(),
        vec![2],
        vec![m.weights.sequence.to_bits(), m.weights.rating.to_bits()],
    ));
    out
}

/// The 2-layer, d=8 double-precision model over [`tiny_corpus`] (|V| = 11),
/// with parameters redrawn from U(-0.5, 0.5) so every gradient is well above
/// finite-difference noise, and task weights away from 1.
pub fn tiny_gradcheck_setup(seed: u64) -> (promptrec::model::Model<f64>, Vec<promptrec::model::EncodedRecord>) {
    let corpus = tiny_corpus();
    let vocab = promptrec::corpus::build_vocabulary(&corpus.records, 1);
    assert_eq!(vocab.len(), 11);
    let cfg = promptrec::lm::LmConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        max_len: 10,
        vocab_size: vocab.len(),
        dropout: 0.0,
    };
    let mut model = promptrec::model::Model::<f64>::init(cfg, corpus.users.len(), corpus.items.len(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.visit_mut(&mut |_, t| {
        for v in &mut t.data {
            *v = rng.random_range(-0.5..0.5);
        }
    });
    model.weights.sequence = 0.8;
    model.weights.rating = 1.7;
    (model, promptrec::model::encode_corpus(&corpus, &vocab))
}
