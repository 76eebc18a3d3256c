use stagebank::data::{
    decode_embeddings, encode_embeddings, generate_stream, read_embeddings, write_embeddings, write_stream,
    FeatureRecord, Manifest, StreamMode, StreamSpec,
};
use stagebank::harness::ExperimentConfig;
use proptest::prelude::*;

#[test]
fn synthetic_stream_survives_a_trip_through_files() {
    for mode in [StreamMode::Cil, StreamMode::Dil, StreamMode::Xdcil] {
        let spec = StreamSpec {
            mode,
            num_stages: 3,
            classes_per_stage: 2,
            feature_dim: 5,
            train_per_class: 4,
            test_per_class: 3,
            domain_shift: 2.0,
            ..StreamSpec::default()
        };
        let stages = generate_stream(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_stream(dir.path(), mode, &stages).unwrap();

        let m = Manifest::load(&manifest).unwrap();
        assert_eq!(m.mode, mode);
        let reread = m.load_stages().unwrap();
        assert_eq!(reread.len(), 3);
        for (a, b) in stages.iter().zip(&reread) {
            assert_eq!(a.train(), b.train());
            assert_eq!(a.test(), b.test());
            assert_eq!(a.label_set(), b.label_set());
        }

        let cfg = ExperimentConfig { manifest: Some(manifest), ..ExperimentConfig::default() };
        let (loaded_mode, _) = cfg.load_stages().unwrap();
        assert_eq!(loaded_mode, mode);
    }
}

#[test]
fn manifest_errors_name_the_line() {
    let err = Manifest::parse("mode cil\nstage one a b\n", std::path::Path::new(".")).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
    assert!(Manifest::parse("stage 1 a b\n", std::path::Path::new(".")).is_err());
}

#[test]
fn file_round_trip_on_disk() {
    let records = vec![
        FeatureRecord { stage_id: 2, label: 7, features: vec![1.5, -2.25, 0.0] },
        FeatureRecord { stage_id: 2, label: 9, features: vec![3.0, 4.0, -0.5] },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.esnf");
    write_embeddings(&path, &records).unwrap();
    assert_eq!(read_embeddings(&path).unwrap(), records);
}

fn record() -> impl Strategy<Value = (u16, u32, Vec<f32>)> {
    (1u16..100, 0u32..1000, prop::collection::vec(-1e6f32..1e6, 4))
}

proptest! {
    #[test]
    fn encoded_bytes_decode_to_the_same_records(rs in prop::collection::vec(record(), 1..20)) {
        let records: Vec<FeatureRecord> = rs
            .into_iter()
            .map(|(s, l, f)| FeatureRecord { stage_id: s, label: l, features: f.into_iter().map(f64::from).collect() })
            .collect();
        let bytes = encode_embeddings(&records).unwrap();
        prop_assert_eq!(bytes.len(), 20 + records.len() * (6 + 16));
        prop_assert_eq!(decode_embeddings(&bytes, Some(4)).unwrap(), records);
    }

    #[test]
    fn every_strict_prefix_is_rejected(n in 1usize..5, cut in 0usize..200) {
        let records: Vec<FeatureRecord> =
            (0..n).map(|i| FeatureRecord { stage_id: 1, label: i as u32, features: vec![i as f64; 4] }).collect();
        let bytes = encode_embeddings(&records).unwrap();
        let cut = cut % bytes.len();
        prop_assert!(decode_embeddings(&bytes[..cut], None).is_err());
    }
}
