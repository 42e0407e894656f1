use std::fs;

use stutter_core::model::{ModelConfig, StutterTts};
use stutter_core::synth::{CorpusConfig, SyntheticCorpus};
use stutter_core::tensor::DType;
use stutter_core::train::{BucketSpec, Precision, TrainConfig, Trainer, TrainingSet};
use stutter_tts::checkpoint::{self, AnyCheckpoint, Checkpoint};
use stutter_tts::run::{self, epoch_checkpoint, FINAL_CHECKPOINT, METRICS};

fn corpus() -> SyntheticCorpus {
    SyntheticCorpus::new(CorpusConfig {
        utts_per_speaker: 6,
        min_words: 2,
        max_words: 3,
        ..CorpusConfig::default()
    })
    .unwrap()
}

fn model_cfg(c: &SyntheticCorpus) -> ModelConfig {
    ModelConfig {
        n_symbols: c.inventory().len(),
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        ff_width: 12,
        prenet_hidden: 8,
        prenet_bottleneck: 4,
        postnet_layers: 2,
        postnet_width: 8,
        reference_width: 4,
        reference_frames: 4,
        frames_per_step: 2,
        max_positions: 256,
        ..ModelConfig::default()
    }
}

fn train_cfg(precision: Precision) -> TrainConfig {
    TrainConfig {
        buckets: vec![BucketSpec { max_frames: 512, batch_size: 2 }],
        epochs: 2,
        steps_per_epoch: 3,
        learning_rate: 3e-3,
        seed: 5,
        precision,
        ..TrainConfig::default()
    }
}

fn trained(data: &TrainingSet, c: &SyntheticCorpus, steps: usize) -> Checkpoint<f32> {
    let model = StutterTts::<f32>::new(model_cfg(c), 1).unwrap();
    let mut t = Trainer::new(train_cfg(Precision::F32), model, data).unwrap();
    for _ in 0..steps {
        t.step().unwrap();
    }
    Checkpoint {
        model: t.model().clone(),
        train: Some(t.config().clone()),
        state: Some(t.state()),
        optimizer: Some(t.optimizer().clone()),
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let c = corpus();
    let data = TrainingSet::from_corpus(&c);
    let ck = trained(&data, &c, 2);
    let bytes = checkpoint::encode(&ck);
    let back: Checkpoint<f32> = checkpoint::decode(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(checkpoint::encode(&back), bytes);
    // every tensor keeps its name and shape
    for ((_, n0, t0), (_, n1, t1)) in ck.model.params().iter().zip(back.model.params().iter()) {
        assert_eq!(n0, n1);
        assert_eq!(t0.shape(), t1.shape());
    }
    assert_eq!(back.optimizer.unwrap().adam_state().unwrap().t, 2);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.stts");
    checkpoint::save(&p, &ck).unwrap();
    assert_eq!(fs::read(&p).unwrap(), bytes);
    assert!(matches!(checkpoint::load_any(&p).unwrap(), AnyCheckpoint::F32(_)));
}

#[test]
fn double_precision_checkpoints_keep_their_dtype() {
    let c = corpus();
    let ck = Checkpoint::weights_only(StutterTts::<f64>::new(model_cfg(&c), 2).unwrap());
    let bytes = checkpoint::encode(&ck);
    assert_eq!(checkpoint::dtype_of(&bytes).unwrap(), DType::F64);
    assert!(checkpoint::decode::<f32>(&bytes).is_err());
    assert_eq!(checkpoint::decode::<f64>(&bytes).unwrap(), ck);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let c = corpus();
    let bytes = checkpoint::encode(&Checkpoint::weights_only(StutterTts::<f32>::new(model_cfg(&c), 3).unwrap()));
    let mut bad = bytes.clone();
    bad[1] = b'x';
    assert!(checkpoint::decode::<f32>(&bad).unwrap_err().contains("magic"));
    let mut bad = bytes.clone();
    bad[4] = 7;
    assert!(checkpoint::decode::<f32>(&bad).is_err());
    for cut in [0, 4, 11, bytes.len() / 2, bytes.len() - 1] {
        assert!(checkpoint::decode::<f32>(&bytes[..cut]).is_err(), "prefix {cut}");
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(checkpoint::decode::<f32>(&long).is_err());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.stts");
    fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    let err = checkpoint::load_any(&p).unwrap_err().to_string();
    assert!(err.contains("bad.stts"), "{err}");
}

#[test]
fn resuming_from_an_epoch_checkpoint_matches_an_uninterrupted_run() {
    let c = corpus();
    let data = TrainingSet::from_corpus(&c);
    let dir = tempfile::tempdir().unwrap();
    let (full, resumed) = (dir.path().join("full"), dir.path().join("resumed"));
    let cfg = train_cfg(Precision::F32);
    run::train(&data, &model_cfg(&c), &cfg, &full, None).unwrap();
    assert!(epoch_checkpoint(&full, 1).exists() && epoch_checkpoint(&full, 2).exists());

    // the resumed log starts from the first epoch's rows
    fs::create_dir_all(&resumed).unwrap();
    let log = fs::read_to_string(full.join(METRICS)).unwrap();
    assert_eq!(log.lines().count(), 1 + 6);
    let head: String = log.lines().take(1 + 3).map(|l| format!("{l}\n")).collect();
    fs::write(resumed.join(METRICS), head).unwrap();
    run::train(&data, &model_cfg(&c), &cfg, &resumed, Some(&epoch_checkpoint(&full, 1))).unwrap();

    assert_eq!(fs::read_to_string(resumed.join(METRICS)).unwrap(), log);
    assert_eq!(fs::read(resumed.join(FINAL_CHECKPOINT)).unwrap(), fs::read(full.join(FINAL_CHECKPOINT)).unwrap());
}

#[test]
fn weights_only_checkpoints_cannot_resume() {
    let c = corpus();
    let data = TrainingSet::from_corpus(&c);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.stts");
    checkpoint::save(&p, &Checkpoint::weights_only(StutterTts::<f32>::new(model_cfg(&c), 0).unwrap())).unwrap();
    let err = run::train(&data, &model_cfg(&c), &train_cfg(Precision::F32), dir.path(), Some(&p)).unwrap_err();
    assert!(err.to_string().contains("resume"), "{err}");
}
