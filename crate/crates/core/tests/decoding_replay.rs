mod common;

use common::*;
use promptrec::corpus::{BOS, EOS, PAD, UNK};
use promptrec::decoding::{generate_tokens, DecodeStrategy};
use promptrec::embeddings::assemble_prompt;
use promptrec::lm::Lm;
use promptrec::model::Model;

/// Greedy decoding re-derived step by step: rebuild the prompt from the
/// tables, run the network, take the first maximal logit that is not a
/// masked special.
fn replay(model: &Model<f32>, user: usize, item: usize, max_len: usize) -> Vec<usize> {
    let lm = Lm::new(&model.config, &model.lm);
    let d = model.config.d_model;
    let mut out: Vec<usize> = Vec::new();
    while out.len() < max_len && out.len() + 3 < model.config.max_len {
        let seq = assemble_prompt(user, item, &out, &model.tables, &model.lm.word, &model.lm.position).unwrap();
        let hidden = lm.forward(&seq).unwrap();
        let last = seq.len() - 1;
        let logits = lm.logits(&hidden.data[last * d..(last + 1) * d]);
        let mut best: Option<(usize, f32)> = None;
        for (t, &z) in logits.iter().enumerate() {
            if [BOS, PAD, UNK].contains(&t) {
                continue;
            }
            if best.is_none_or(|(_, b)| z > b) {
                best = Some((t, z));
            }
        }
        let (t, _) = best.unwrap();
        if t == EOS {
            break;
        }
        out.push(t);
    }
    out
}

#[test]
fn greedy_matches_step_replay() {
    for epochs in [1, 4] {
        let (ckpt, _) = quick_checkpoint(epochs);
        for u in 0..ckpt.users.len().min(8) {
            for i in 0..ckpt.items.len().min(8) {
                for max_len in [1, 5, 20] {
                    let got = generate_tokens(&ckpt.model, u, i, max_len, DecodeStrategy::Greedy).unwrap();
                    assert_eq!(got, replay(&ckpt.model, u, i, max_len), "u{u} i{i} max {max_len}");
                    assert!(got.len() <= max_len);
                    assert!(got.iter().all(|&t| ![BOS, EOS, PAD, UNK].contains(&t)));
                }
            }
        }
    }
}
