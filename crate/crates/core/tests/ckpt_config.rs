use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use usarray::autodiff::Tensor;
use usarray::ckpt::{self, Checkpoint, Manifest};
use usarray::config::{Profile, RunConfig, RESOLVED_CONFIG};
use usarray::model::{InitValues, Model, ModelShape};
use usarray::Error;

fn random_checkpoint(seed: u64) -> Checkpoint {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let shapes: [&[usize]; 4] = [&[7, 3], &[1], &[2, 3, 4], &[0]];
    let tensors = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n: usize = s.iter().product();
            // raw bit patterns cover subnormals, signed zeros and extremes
            let data = (0..n)
                .map(|_| loop {
                    let v = f32::from_bits(r.random());
                    if v.is_finite() {
                        break v;
                    }
                })
                .collect();
            (format!("t{i}"), Tensor::new(s.to_vec(), data).unwrap())
        })
        .collect();
    Checkpoint {
        config_hash: format!("{seed:064x}"),
        tensors,
    }
}

fn desk_model(cfg: &RunConfig) -> Model<f32> {
    let init = InitValues {
        mask_std: 0.5,
        alpha: 0.3,
        lambda: 1e-3,
        eta: 0.1,
    };
    Model::init(ModelShape::from_config(cfg), init, 11).unwrap()
}

#[test]
fn round_trip_is_bitwise() {
    for seed in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        let c = random_checkpoint(seed);
        ckpt::save(dir.path(), &c).unwrap();
        let back = ckpt::load(dir.path()).unwrap();
        assert_eq!(back.config_hash, c.config_hash);
        assert_eq!(back.tensors.len(), c.tensors.len());
        for ((na, a), (nb, b)) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let payload = fs::read(dir.path().join(ckpt::PAYLOAD)).unwrap();
        assert_eq!(payload.len(), 4 * (21 + 1 + 24));
        assert_eq!(&payload[..4], &c.tensors[0].1.data()[0].to_le_bytes());
    }
}

#[test]
fn truncated_payload_names_first_bad_tensor() {
    let dir = tempfile::tempdir().unwrap();
    ckpt::save(dir.path(), &random_checkpoint(9)).unwrap();
    let path = dir.path().join(ckpt::PAYLOAD);
    let bytes = fs::read(&path).unwrap();
    // t0 and t1 occupy 88 bytes; cutting inside t2 must blame t2
    fs::write(&path, &bytes[..100]).unwrap();
    match ckpt::load(dir.path()) {
        Err(Error::Integrity { tensor, .. }) => assert_eq!(tensor, "t2"),
        other => panic!("{other:?}"),
    }
    fs::write(&path, &bytes[..50]).unwrap();
    match ckpt::load(dir.path()) {
        Err(Error::Integrity { tensor, .. }) => assert_eq!(tensor, "t0"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn trailing_bytes_and_gaps_are_rejected() {
    let c = random_checkpoint(3);
    let dir = tempfile::tempdir().unwrap();
    ckpt::save(dir.path(), &c).unwrap();
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join(ckpt::MANIFEST)).unwrap()).unwrap();
    let mut payload = fs::read(dir.path().join(ckpt::PAYLOAD)).unwrap();
    payload.extend([0u8; 4]);
    assert!(matches!(
        ckpt::decode(&manifest, &payload),
        Err(Error::Integrity { .. })
    ));
    payload.truncate(payload.len() - 4);

    let mut gap = manifest.clone();
    gap.tensors[1].offset += 4;
    match ckpt::decode(&gap, &payload) {
        Err(Error::Integrity { tensor, .. }) => assert_eq!(tensor, "t1"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_format_version_needs_migration() {
    let dir = tempfile::tempdir().unwrap();
    ckpt::save(dir.path(), &random_checkpoint(4)).unwrap();
    let path = dir.path().join(ckpt::MANIFEST);
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    doc["format_version"] = json!(ckpt::FORMAT_VERSION + 1);
    fs::write(&path, doc.to_string()).unwrap();
    assert!(matches!(
        ckpt::load(dir.path()),
        Err(Error::Migration { found: 2, supported: 1 })
    ));
}

#[test]
fn model_checkpoint_round_trip_and_hash_check() {
    let cfg = RunConfig::desk();
    let model = desk_model(&cfg);
    let dir = tempfile::tempdir().unwrap();
    ckpt::save_model(dir.path(), &cfg, &model).unwrap();
    let (cfg2, model2) = ckpt::load_model(dir.path()).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(model2, model);

    let mut other = cfg.clone();
    other.seed = 99;
    fs::write(dir.path().join(ckpt::RUN_CONFIG), other.to_json_pretty()).unwrap();
    match ckpt::load_model(dir.path()) {
        Err(Error::Integrity { tensor, .. }) => assert_eq!(tensor, ckpt::RUN_CONFIG),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    for doc in [
        json!({ "sed": 1 }),
        json!({ "train": { "epochs": 3, "learning_rate": 0.1 } }),
        json!({ "mask": { "temperature": { "tau_star": 1.0 } } }),
    ] {
        assert!(
            matches!(RunConfig::from_json(doc.clone(), None), Err(Error::Config(_))),
            "{doc}"
        );
    }
    assert!(matches!(RunConfig::from_json(json!([1]), None), Err(Error::Config(_))));
    assert!(matches!(
        RunConfig::from_json(json!({ "mask": { "k": 0 } }), None),
        Err(Error::Config(_))
    ));
}

#[test]
fn overrides_merge_onto_profile_defaults() {
    let cfg = RunConfig::from_json(json!({ "seed": 5, "train": { "epochs": 3 } }), None).unwrap();
    let mut expect = RunConfig::desk();
    expect.seed = 5;
    expect.train.epochs = 3;
    assert_eq!(cfg, expect);

    let paper = RunConfig::from_json(json!({ "profile": "paper" }), None).unwrap();
    assert_eq!(paper, RunConfig::paper());
    let forced = RunConfig::from_json(json!({ "profile": "paper" }), Some(Profile::Desk)).unwrap();
    assert_eq!(forced, RunConfig::desk());
}

#[test]
fn resolved_config_reloads_to_the_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json(json!({ "seed": 17 }), None).unwrap();
    let path = cfg.write_resolved(dir.path()).unwrap();
    assert_eq!(path.file_name().unwrap(), RESOLVED_CONFIG);
    let back = RunConfig::load(Some(&path), None).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    assert_ne!(RunConfig::desk().hash(), cfg.hash());
}
