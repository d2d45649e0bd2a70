use pfb_core::harness::CHECKPOINT_SCHEMA;
use pfb_core::{load_checkpoint, save_checkpoint, Checkpoint, PfbError, RunConfig, Trainer};

fn trained(iterations: u64) -> (RunConfig, Trainer) {
    let config = RunConfig { train_samples: 512, epochs: 3, stop_prune_epoch: 3, ..RunConfig::default() };
    let mut t = Trainer::new(config.clone()).unwrap();
    t.run_until(iterations, |_| Ok(())).unwrap();
    (config, t)
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (config, t) = trained(13);
    let first = dir.path().join("a.json");
    let second = dir.path().join("b.json");
    save_checkpoint(t.net(), t.ade(), &config, t.iteration(), &first).unwrap();
    let ck = load_checkpoint(&first).unwrap();
    assert_eq!(ck.iteration, 13);
    assert_eq!(&ck.net, t.net());
    save_checkpoint(&ck.net, &ck.ade, &ck.config, ck.iteration, &second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
}

#[test]
fn resumed_trainer_reproduces_state() {
    let (config, mut straight) = trained(9);
    let ck = Checkpoint::from_text(
        &Checkpoint::new(config, straight.iteration(), straight.net().clone(), straight.ade().clone())
            .to_text()
            .unwrap(),
    )
    .unwrap();
    let mut resumed = Trainer::from_state(ck.config, ck.net, ck.ade, ck.iteration).unwrap();
    straight.run_until(u64::MAX, |_| Ok(())).unwrap();
    resumed.run_until(u64::MAX, |_| Ok(())).unwrap();
    assert_eq!(straight.net().flat_params(), resumed.net().flat_params());
    assert_eq!(straight.ade().centroids(), resumed.ade().centroids());
}

#[test]
fn truncated_file_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let (config, t) = trained(5);
    let path = dir.path().join("ck.json");
    save_checkpoint(t.net(), t.ade(), &config, t.iteration(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(PfbError::CorruptCheckpoint(_))));
}

#[test]
fn wrong_schema_version_is_rejected() {
    let (config, t) = trained(2);
    let text = Checkpoint::new(config, 2, t.net().clone(), t.ade().clone()).to_text().unwrap();
    let bumped = text.replace(CHECKPOINT_SCHEMA, "pfb-checkpoint/v99");
    assert!(matches!(Checkpoint::from_text(&bumped), Err(PfbError::VersionMismatch { .. })));
}

#[test]
fn tampered_weights_violate_schema() {
    let (config, t) = trained(4);
    let mut value: serde_json::Value =
        serde_json::from_str(&Checkpoint::new(config, 4, t.net().clone(), t.ade().clone()).to_text().unwrap())
            .unwrap();
    value["ade"]["centroids"][0]["weight"] = serde_json::json!(5.0);
    let err = Checkpoint::from_text(&value.to_string()).unwrap_err();
    assert!(matches!(err, PfbError::SchemaViolation(_)), "{err}");
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_checkpoint(dir.path().join("nope.json")), Err(PfbError::Io(_))));
}
