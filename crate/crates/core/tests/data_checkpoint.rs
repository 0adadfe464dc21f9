mod common;

use std::fs;

use common::tiny_config;
use ftt::data::{
    load_checkpoint, read_features, read_text, save_checkpoint, swap_vocab_predictor, write_features, write_text,
    DataConfig, ExperimentData, SyntheticTaskSpec, Vocab,
};
use ftt::decode::{beam_decode, BeamConfig};
use ftt::error::Error;
use ftt::model::{AnyModel, FactorizedTransducer, LanguageModel, StandardTransducer, StepModel};
use ftt::trainer::{eval_ppl, train_lm, TrainConfig};

fn small_data() -> ExperimentData {
    ExperimentData::generate(&DataConfig {
        task: SyntheticTaskSpec {
            vocab_size: 8,
            feature_dim: 4,
            min_len: 2,
            max_len: 5,
            ..Default::default()
        },
        n_train: 10,
        n_dev: 5,
        n_test: 5,
        n_adapt_text: 30,
        ..Default::default()
    })
    .unwrap()
}

fn decodes<M: StepModel>(m: &M, data: &ExperimentData) -> Vec<Vec<usize>> {
    data.source_test
        .iter()
        .map(|u| beam_decode(m, &u.features, &BeamConfig::default()).unwrap()[0].tokens.clone())
        .collect()
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data();
    let f = FactorizedTransducer::new(tiny_config(4, 8, 1), data.vocab.clone()).unwrap();
    let p = dir.path().join("f.ckpt");
    save_checkpoint(&AnyModel::Factorized(f.clone()), &p).unwrap();
    let g = load_checkpoint(&p).unwrap().into_factorized().unwrap();
    for ((_, a), (_, b)) in f.params().iter().zip(g.params().iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value.shape(), b.value.shape());
        let bits = |t: &ftt::numerics::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    assert_eq!(g.vocab(), f.vocab());
    assert_eq!(eval_ppl(&f, &data.adapt_text).unwrap().to_bits(), eval_ppl(&g, &data.adapt_text).unwrap().to_bits());
    assert_eq!(decodes(&f, &data), decodes(&g, &data));

    let q = dir.path().join("g.ckpt");
    save_checkpoint(&AnyModel::Factorized(g), &q).unwrap();
    assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
}

#[test]
fn truncated_checkpoint_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.ckpt");
    let s = StandardTransducer::new(tiny_config(4, 8, 1), Vocab::synthetic(8)).unwrap();
    save_checkpoint(&AnyModel::Standard(s), &p).unwrap();
    let bytes = fs::read(&p).unwrap();
    for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
        fs::write(&p, &bytes[..cut]).unwrap();
        let err = load_checkpoint(&p).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "cut {cut}: {err}");
    }
}

#[test]
fn checkpoint_kind_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.ckpt");
    let s = StandardTransducer::new(tiny_config(4, 8, 1), Vocab::synthetic(8)).unwrap();
    save_checkpoint(&AnyModel::Standard(s.clone()), &p).unwrap();
    let err = load_checkpoint(&p).unwrap().into_factorized().unwrap_err();
    assert!(matches!(err, Error::KindMismatch { .. }));

    let f = FactorizedTransducer::new(tiny_config(4, 8, 1), Vocab::synthetic(8)).unwrap();
    let err = swap_vocab_predictor(f, &p).unwrap_err();
    assert!(matches!(err, Error::KindMismatch { .. }));
}

#[test]
fn swapping_in_the_same_predictor_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data();
    let f = FactorizedTransducer::new(tiny_config(4, 8, 2), data.vocab.clone()).unwrap();
    let p = dir.path().join("lm.ckpt");
    save_checkpoint(&AnyModel::Lm(f.vocab_predictor().unwrap()), &p).unwrap();
    let g = swap_vocab_predictor(f.clone(), &p).unwrap();
    assert_eq!(decodes(&f, &data), decodes(&g, &data));
    let x = &data.source_test[0];
    assert_eq!(
        f.vocab_log_probs(&x.tokens).unwrap().data(),
        g.vocab_log_probs(&x.tokens).unwrap().data()
    );
}

#[test]
fn swapping_an_adapted_predictor_keeps_blank_logits() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data();
    let f = FactorizedTransducer::new(tiny_config(4, 8, 2), data.vocab.clone()).unwrap();
    let mut lm = f.vocab_predictor().unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        lr: 1e-2,
        ..Default::default()
    };
    train_lm(&mut lm, &data.adapt_text, &cfg, None).unwrap();
    let p = dir.path().join("lm.ckpt");
    save_checkpoint(&AnyModel::Lm(lm.clone()), &p).unwrap();
    let g = swap_vocab_predictor(f.clone(), &p).unwrap();
    for u in &data.source_test {
        assert_eq!(
            f.blank_logits(&u.features, &u.tokens).unwrap().data(),
            g.blank_logits(&u.features, &u.tokens).unwrap().data()
        );
        assert_ne!(
            f.vocab_log_probs(&u.tokens).unwrap().data(),
            g.vocab_log_probs(&u.tokens).unwrap().data()
        );
    }
    assert!((eval_ppl(&g, &data.adapt_text).unwrap() - eval_ppl(&lm, &data.adapt_text).unwrap()).abs() < 1e-12);

    let other = LanguageModel::new(ftt::cli::desk_lm_config(1), Vocab::synthetic(9)).unwrap();
    let q = dir.path().join("other.ckpt");
    save_checkpoint(&AnyModel::Lm(other), &q).unwrap();
    assert!(swap_vocab_predictor(f, &q).is_err());
}

#[test]
fn corpus_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data();
    let fp = dir.path().join("x.feats");
    write_features(&fp, &data.source_train).unwrap();
    assert_eq!(read_features(&fp).unwrap(), data.source_train);
    let tp = dir.path().join("x.txt");
    write_text(&tp, &data.vocab, &data.adapt_text).unwrap();
    assert_eq!(read_text(&tp, &data.vocab).unwrap(), data.adapt_text);

    let mut bytes = fs::read(&fp).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&fp, bytes).unwrap();
    assert!(matches!(read_features(&fp), Err(Error::Corrupt { .. })));
}

#[test]
fn tokenize_examples() {
    let v = Vocab::new(&["the", "cat", "sat"]).unwrap();
    assert_eq!(v.tokenize("the cat sat"), vec![4, 5, 6]);
    assert_eq!(v.tokenize("  the   dog  "), vec![4, v.unk()]);
    assert_eq!(v.tokenize("<blank> cat"), vec![v.unk(), 5]);
    assert_eq!(v.tokenize(""), Vec::<usize>::new());
    assert_eq!(v.detokenize(&[4, 5, 6]), "the cat sat");
    assert!(Vocab::new(&["a", "a"]).is_err());
    assert!(Vocab::new(&["<s>"]).is_err());
    assert!(v.check_labels(&[0]).is_err());
    assert!(v.check_labels(&[7]).is_err());
    assert!(v.check_labels(&[1, 2, 3, 6]).is_ok());
}

#[test]
fn experiment_data_is_deterministic_and_disjoint_by_split() {
    let a = small_data();
    let b = small_data();
    assert_eq!(a.source_train, b.source_train);
    assert_eq!(a.adapt_text, b.adapt_text);
    assert_ne!(
        a.source_test.iter().map(|u| &u.tokens).collect::<Vec<_>>(),
        a.target_test.iter().map(|u| &u.tokens).collect::<Vec<_>>()
    );
}
