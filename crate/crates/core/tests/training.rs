use std::ops::ControlFlow;

use sinc_asr::checkpoint::{load_checkpoint, save_checkpoint};
use sinc_asr::data::{synth_corpus, SynthConfig};
use sinc_asr::model::{Model, ModelConfig};
use sinc_asr::nn::AdamState;
use sinc_asr::trainer::{train, Dataset, EpochRecord, TrainConfig};
use sinc_asr::Scalar;

fn small_config(vocab_size: usize) -> ModelConfig {
    let mut cfg = ModelConfig::preset("paper-sinc-cnn-129", vocab_size, 8000.0).unwrap();
    cfg.channels = 2;
    cfg.lstm_layers = 2;
    cfg.lstm_hidden = 4;
    cfg
}

fn run<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut AdamState<T>,
    data: &Dataset,
    vocab: &sinc_asr::vocab::TokenVocabulary,
    config: &TrainConfig,
    start: usize,
) -> Vec<EpochRecord> {
    train(model, opt, data, None, vocab, config, start, |_, _| Ok(ControlFlow::Continue(()))).unwrap()
}

fn param_bits<T: Scalar>(model: &Model<T>) -> Vec<u64> {
    model
        .params()
        .iter()
        .flat_map(|(_, p)| p.value.data().iter().map(|v| v.as_f64().to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        seed: 9,
        n_utterances: 6,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&synth, dir.path()).unwrap();
    let data = Dataset::load(corpus.manifest.clone()).unwrap();
    let config = TrainConfig {
        lr: 1e-3,
        batch_size: 4,
        max_epochs: 3,
        seed: 2,
        eval_interval: 0,
        ..TrainConfig::default()
    };

    let mut full = Model::<f64>::build(small_config(corpus.vocab.len()), 2).unwrap();
    let mut opt = AdamState::new(config.adam());
    let full_records = run(&mut full, &mut opt, &data, &corpus.vocab, &config, 0);
    assert_eq!(full_records.iter().map(|r| r.epoch).collect::<Vec<_>>(), [1, 2, 3]);

    let mut part = Model::<f64>::build(small_config(corpus.vocab.len()), 2).unwrap();
    let mut opt = AdamState::new(config.adam());
    let first = TrainConfig { max_epochs: 2, ..config.clone() };
    run(&mut part, &mut opt, &data, &corpus.vocab, &first, 0);
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(&path, &part, Some(&opt), &corpus.vocab, 2).unwrap();

    let ck = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(ck.meta.epoch, 2);
    let (mut resumed, mut opt) = (ck.model, ck.optimizer.unwrap());
    let rest = run(&mut resumed, &mut opt, &data, &corpus.vocab, &config, ck.meta.epoch);
    assert_eq!(rest.len(), 1);
    assert_eq!(rest[0].epoch, 3);
    assert_eq!(rest[0].mean_loss.to_bits(), full_records[2].mean_loss.to_bits());
    assert_eq!(param_bits(&resumed), param_bits(&full));

    // nothing left to do once the schedule is complete
    assert!(run(&mut resumed, &mut opt, &data, &corpus.vocab, &config, 3).is_empty());
}

#[test]
fn training_reduces_the_loss_in_both_precisions() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        seed: 1,
        n_utterances: 6,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&synth, dir.path()).unwrap();
    let data = Dataset::load(corpus.manifest.clone()).unwrap();
    let config = TrainConfig {
        lr: 3e-3,
        batch_size: 6,
        max_epochs: 15,
        seed: 4,
        eval_interval: 0,
        ..TrainConfig::default()
    };
    let single = {
        let mut m = Model::<f32>::build(small_config(corpus.vocab.len()), 4).unwrap();
        let mut opt = AdamState::new(config.adam());
        run(&mut m, &mut opt, &data, &corpus.vocab, &config, 0)
    };
    let double = {
        let mut m = Model::<f64>::build(small_config(corpus.vocab.len()), 4).unwrap();
        let mut opt = AdamState::new(config.adam());
        run(&mut m, &mut opt, &data, &corpus.vocab, &config, 0)
    };
    for records in [&single, &double] {
        let (first, last) = (records[0].mean_loss, records.last().unwrap().mean_loss);
        assert!(last < first, "loss went from {first} to {last}");
    }
    // same seed and data: the two precisions start from the same loss
    let rel = (single[0].mean_loss - double[0].mean_loss).abs() / double[0].mean_loss;
    assert!(rel < 1e-3, "first-epoch losses differ by {rel}");
}
