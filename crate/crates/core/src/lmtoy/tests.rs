use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::adapter::{ModalitySequence, IGNORE_INDEX};
use crate::numcore::{ParamSet, Tape, Tensor};

fn vocab() -> ToyVocab {
    ToyVocab::from_texts(
        DEFAULT_TEMPLATES
            .iter()
            .copied()
            .chain(["Describe this molecule.", "A small ring with one oxygen."]),
    )
}

fn decoder(seed: u64, v: usize) -> (ToyDecoder, ParamSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let cfg = DecoderConfig {
        width: 16,
        heads: 2,
        blocks: 2,
        ffn_multiplier: 2,
    };
    let d = ToyDecoder::init(cfg, v, &mut params, &mut rng).unwrap();
    (d, params)
}

#[test]
fn tokenization_never_yields_reserved_ids() {
    let v = vocab();
    assert_eq!(split_words("Describe this molecule."), ["describe", "this", "molecule", "."]);
    let ids = v.encode("<geo> <think> describe zebra");
    assert!(ids.iter().all(|&i| !ToyVocab::is_reserved(i) || i == UNKNOWN));
    assert_eq!(ids[3], UNKNOWN);
    assert_eq!(v.decode(&v.encode("a small ring")), "a small ring");
    let json = serde_json::to_string(&v).unwrap();
    let back: ToyVocab = serde_json::from_str::<ToyVocab>(&json).unwrap().reindexed();
    assert_eq!(back, v);
}

#[test]
fn template_pool_spans_zero_to_twelve_words() {
    let pool = template_pool(&vocab(), &DEFAULT_TEMPLATES);
    assert_eq!(pool.len(), 16);
    let lengths: Vec<usize> = pool.iter().map(Vec::len).collect();
    assert_eq!(lengths.iter().min(), Some(&0));
    assert_eq!(lengths.iter().max(), Some(&12));
    assert!(pool.iter().flatten().all(|&i| i != UNKNOWN));
}

#[test]
fn augmentation_examples() {
    let s = assemble(&[9], &[20, 21], &[30, 31], false);
    assert_eq!(s.target, vec![THINK_OPEN, 20, 21, THINK_CLOSE, 30, 31]);
    assert_eq!(s.loss_mask, vec![false, false, false, false, true, true]);
    assert_eq!(s.reasoning_positions, vec![1, 2]);
    assert_eq!(s.answer_positions, vec![4, 5]);
    let empty = assemble(&[9], &[], &[30, 31], false);
    assert_eq!(empty.target, vec![THINK_OPEN, THINK_CLOSE, 30, 31]);
    assert_eq!(empty.loss_mask, vec![false, false, true, true]);
    let delimited = assemble(&[9], &[20], &[30], true);
    assert_eq!(delimited.loss_mask, vec![true, false, true, true]);

    let pool = template_pool(&vocab(), &DEFAULT_TEMPLATES);
    let a = build_augmented_target(&[7, 8], &[9, 10], &pool, 5, false).unwrap();
    assert_eq!(a, build_augmented_target(&[7, 8], &[9, 10], &pool, 5, false).unwrap());
    for seed in 0..20 {
        let s = build_augmented_target(&[7, 8], &[9, 10], &pool, seed, false).unwrap();
        assert!(s.reasoning_positions.iter().all(|&t| !s.loss_mask[t]));
        assert!(s.answer_positions.iter().all(|&t| s.loss_mask[t]));
    }
    assert!(matches!(
        build_augmented_target(&[1], &[2], &[], 0, false),
        Err(Error::EmptyTemplatePool)
    ));
}

#[test]
fn masked_nll_examples() {
    let tape = Tape::new();
    let logits = tape.leaf(Tensor::zeros(3, 16));
    let none = masked_nll(logits, &[1, 2, 3], &[false; 3]).unwrap();
    assert_eq!(none.loss.item(), 0.0);
    assert!(none.unsupervised);
    let one = masked_nll(logits, &[1, 2, 3], &[false, true, false]).unwrap();
    assert!((one.loss.item() - 16f64.ln()).abs() < 1e-15);
    let g = tape.backward(one.loss).unwrap().wrt(logits);
    assert!(g.row(0).iter().chain(g.row(2)).all(|&v| v.to_bits() == 0));
}

fn raw_sequence(tape: &Tape, emb: Tensor, mask: Vec<bool>) -> ModalitySequence<'_> {
    let l = emb.rows();
    ModalitySequence {
        embeddings: tape.constant(emb),
        attention_mask: mask,
        labels: vec![IGNORE_INDEX; l],
        placeholders: vec![],
    }
}

#[test]
fn decoder_is_causal_and_respects_padding() {
    let v = vocab();
    let (dec, params) = decoder(1, v.len());
    let ids = v.encode("describe this small ring with one oxygen");
    let run = |emb: Tensor, mask: Vec<bool>| {
        let tape = Tape::new();
        let p = params.bind(&tape, |_| false);
        let seq = raw_sequence(&tape, emb, mask);
        let (logits, w) = dec.forward_with_attention(&p, &tape, &seq).unwrap();
        ((*logits.value()).clone(), w.iter().map(|w| (*w.value()).clone()).collect::<Vec<_>>())
    };
    let base = {
        let tape = Tape::new();
        let p = params.bind(&tape, |_| false);
        (*dec.embed(&p, &ids).unwrap().value()).clone()
    };
    let l = ids.len();
    let (logits, _) = run(base.clone(), vec![true; l]);
    assert_eq!(logits.shape(), [l, v.len()]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in 0..l {
        let mut bumped = base.clone();
        for c in 0..bumped.cols() {
            let x = bumped.get(t, c);
            bumped.set(t, c, x + rng.random_range(-1.0..1.0));
        }
        let (other, _) = run(bumped, vec![true; l]);
        for s in 0..t {
            assert_eq!(logits.row(s), other.row(s));
        }
        if t + 1 < l {
            assert_ne!(logits.row(t), other.row(t));
        }
    }
    let mut mask = vec![true; l];
    mask[2] = false;
    mask[0] = false;
    let (_, weights) = run(base, mask);
    for w in &weights {
        for q in 0..l {
            assert_eq!(w.get(q, 2), 0.0);
            assert_eq!(w.get(q, 0), 0.0);
            let total: f64 = w.row(q).iter().sum();
            assert!(q == 0 || (total - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn instruction_summary_is_the_mean() {
    let v = vocab();
    let (dec, params) = decoder(2, v.len());
    let tape = Tape::new();
    let p = params.bind(&tape, |_| false);
    let ids = v.encode("describe this molecule");
    let e = dec.embed(&p, &ids).unwrap().value();
    let z = instruction_summary(&p, &dec, &ids[..1]).unwrap().value();
    assert_eq!(z.row(0), e.row(0));
    let z2 = instruction_summary(&p, &dec, &ids[..2]).unwrap().value();
    for c in 0..e.cols() {
        assert!((z2.get(0, c) - (e.get(0, c) + e.get(1, c)) / 2.0).abs() < 1e-15);
    }
    let fwd = instruction_summary(&p, &dec, &ids).unwrap().value();
    let rev: Vec<usize> = ids.iter().rev().copied().collect();
    let back = instruction_summary(&p, &dec, &rev).unwrap().value();
    assert!(fwd.max_abs_diff(&back) <= 1e-15);
    assert!(matches!(instruction_summary(&p, &dec, &[]), Err(Error::EmptyInstruction)));
}
