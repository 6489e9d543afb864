use icon_core::dataset::{generate_family, Dataset, ParamBounds, ProblemFamily};
use icon_core::model::{encode_checkpoint, load_checkpoint, ModelConfig};
use icon_core::trainer::{train, TrainConfig};

fn dataset(families: &[u8], m: usize, n: usize, seed: u64) -> Dataset {
    let mut ds = Dataset::default();
    for &f in families {
        ds.insert(generate_family(ProblemFamily::new(f).unwrap(), m, n, seed, &ParamBounds::new()).unwrap());
    }
    ds
}

fn small_model() -> ModelConfig {
    ModelConfig { d_model: 32, n_heads: 2, n_enc_layers: 2, n_dec_layers: 2, d_ff: 64, ..ModelConfig::default() }
}

fn short_run(steps: usize) -> TrainConfig {
    TrainConfig {
        families: vec![1, 2],
        batch_size: 4,
        steps,
        warmup_steps: 2,
        checkpoint_every: 3,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn smoke_run_reduces_the_loss() {
    let ds = dataset(&[1], 20, 20, 3);
    let config = TrainConfig {
        families: vec![1],
        batch_size: 8,
        steps: 200,
        warmup_steps: 20,
        checkpoint_every: 100,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let (_, summary) = train::<f32>(&ds, &config, small_model(), Some(dir.path()), None).unwrap();
    assert_eq!(summary.final_step, 200);
    let (first, last) = summary.smoothed_ends(20);
    assert!(last < first, "loss went from {first} to {last}");
    assert!(dir.path().join("checkpoint_000100.ck").exists());
    assert!(dir.path().join("checkpoint.ck").exists());
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "step,loss,lr,grad_norm,wall_time_s");
}

#[test]
fn double_precision_runs_are_byte_reproducible() {
    let ds = dataset(&[1, 2], 4, 4, 8);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        train::<f64>(&ds, &short_run(6), small_model(), Some(dir.path()), None).unwrap();
        std::fs::read(dir.path().join("checkpoint.ck")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn resumed_run_matches_uninterrupted_run_bitwise() {
    let ds = dataset(&[1, 2], 4, 4, 8);
    let (full, _) = train::<f64>(&ds, &short_run(6), small_model(), None, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    train::<f64>(&ds, &short_run(3), small_model(), Some(dir.path()), None).unwrap();
    let ck = load_checkpoint::<f64>(&dir.path().join("checkpoint_000003.ck")).unwrap();
    assert_eq!(ck.step, 3);
    let (resumed, summary) = train::<f64>(&ds, &short_run(6), small_model(), None, Some(ck)).unwrap();
    assert_eq!(summary.losses.first().unwrap().0, 3);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&full.params), bits(&resumed.params));
}

#[test]
fn checkpoint_encoding_is_stable() {
    let ds = dataset(&[2], 3, 3, 1);
    let config = TrainConfig { families: vec![2], ..short_run(3) };
    let dir = tempfile::tempdir().unwrap();
    train::<f32>(&ds, &config, small_model(), Some(dir.path()), None).unwrap();
    let path = dir.path().join("checkpoint.ck");
    let ck = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(encode_checkpoint(&ck).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn training_rejects_families_missing_from_the_dataset() {
    let ds = dataset(&[1], 2, 2, 1);
    assert!(train::<f32>(&ds, &short_run(2), small_model(), None, None).is_err());
}
