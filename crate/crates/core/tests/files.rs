use scaleflow::flow::{load_model, save_model, Architecture, ConvNet};
use scaleflow::kv::KvBlock;
use scaleflow::synth::{make_scenario, Scenario, ScenarioConfig};
use scaleflow::wfld::{read_fieldstack, write_fieldstack};
use scaleflow::Error;

fn small(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_rows: 8,
        n_cols: 8,
        dx_km: 50.0,
        n_times: Some(12),
        seed,
        ..ScenarioConfig::default()
    }
}

#[test]
fn scenario_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_scenario(Scenario::SharedLargescale, &small(3)).unwrap();
    data.write(dir.path()).unwrap();
    for (name, x) in [("source.wfld", &data.source), ("target.wfld", &data.target)] {
        let back = read_fieldstack(&dir.path().join(name)).unwrap();
        assert_eq!(back.grid(), x.grid());
        assert_eq!(back.times(), x.times());
        assert_eq!(back.mask(), x.mask());
        for (a, b) in back.values().iter().zip(x.values()) {
            assert!(a.is_nan() && b.is_nan() || *a == *b as f32 as f64);
        }
    }
    let truth = KvBlock::parse(&std::fs::read_to_string(dir.path().join("truth.txt")).unwrap()).unwrap();
    assert_eq!(truth, data.truth);
}

#[test]
fn truncated_file_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wfld");
    let data = make_scenario(Scenario::BiasedSource, &small(1)).unwrap();
    write_fieldstack(&data.target, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(read_fieldstack(&path), Err(Error::Format { .. })));
    assert!(matches!(read_fieldstack(&dir.path().join("missing.wfld")), Err(Error::Io { .. })));
}

#[test]
fn models_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.wfmd");
    let model = ConvNet::new(Architecture::new(2, vec![4, 4]), 9).unwrap();
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.architecture(), model.architecture());
    assert_eq!(scaleflow::flow::encode_model(&back), scaleflow::flow::encode_model(&model));
}

#[test]
fn scenarios_are_seeded() {
    for s in Scenario::ALL {
        let a = make_scenario(s, &small(5)).unwrap();
        let b = make_scenario(s, &small(5)).unwrap();
        let c = make_scenario(s, &small(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.target, c.target);
    }
}
