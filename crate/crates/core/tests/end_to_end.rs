use vocmap_core::descriptor::TableEmbedder;
use vocmap_core::eval::{evaluate_map, load_class_table, rank_segments, DEFAULT_TRANSFER_K};
use vocmap_core::io::{
    load_map, load_ply, load_sequence, load_timing, save_map, save_timing, write_synthetic_sequence, PipelineConfig, CLASSES_FILE,
    GT_FILE, MANIFEST_FILE,
};
use vocmap_core::pipeline::Pipeline;
use vocmap_core::synth::{generate_sequence, SynthConfig};
use vocmap_core::Exec;

fn sequence_dir(count: usize) -> tempfile::TempDir {
    let mut c = SynthConfig::standard(1234);
    c.scene.orbit.count = count;
    let seq = generate_sequence(&c, Exec::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_sequence(&seq, dir.path()).unwrap();
    dir
}

#[test]
fn disk_round_trip_and_semantic_eval() {
    let seq = sequence_dir(60);
    let config = PipelineConfig::load(&seq.path().join("config.toml")).unwrap();
    let config = PipelineConfig { deterministic: true, ..config };
    let frames = load_sequence(&seq.path().join(MANIFEST_FILE), None).unwrap();
    let out = Pipeline::from_config(config, Exec::Parallel).unwrap().run(frames, Box::new(TableEmbedder)).unwrap();
    assert_eq!(out.stats.keyframes, 60);

    let map_dir = tempfile::tempdir().unwrap();
    save_map(map_dir.path(), &out.map).unwrap();
    save_timing(map_dir.path(), &out.timing).unwrap();
    assert_eq!(load_map(map_dir.path()).unwrap(), out.map);
    assert_eq!(load_timing(map_dir.path()).unwrap(), out.timing);

    let classes = load_class_table(&seq.path().join(CLASSES_FILE)).unwrap();
    let gt = load_ply(&seq.path().join(GT_FILE)).unwrap();
    let verts: Vec<[f64; 3]> = gt.iter().map(|p| p.position.map(f64::from)).collect();
    let labels: Vec<i32> = gt.iter().map(|p| p.label).collect();
    let report = evaluate_map(&out.map, &classes, &verts, &labels, DEFAULT_TRANSFER_K).unwrap();
    assert!(report.miou > 0.7, "mIoU {}", report.miou);
}

#[test]
fn querying_a_segment_descriptor_ranks_it_first() {
    let seq = sequence_dir(20);
    let config = PipelineConfig { deterministic: true, ..PipelineConfig::synthetic() };
    let frames = load_sequence(&seq.path().join(MANIFEST_FILE), None).unwrap();
    let out = Pipeline::from_config(config, Exec::Parallel).unwrap().run(frames, Box::new(TableEmbedder)).unwrap();
    for s in out.map.segments() {
        let d = s.descriptor().unwrap();
        assert_eq!(rank_segments(&out.map, d, 1).unwrap()[0].0, s.label);
    }
}

#[test]
fn stride_override_limits_keyframes() {
    let seq = sequence_dir(30);
    let frames = load_sequence(&seq.path().join(MANIFEST_FILE), Some(10)).unwrap();
    assert_eq!(frames.len(), 3);
    let config = PipelineConfig { deterministic: false, ..PipelineConfig::synthetic() };
    let out = Pipeline::from_config(config, Exec::Sequential).unwrap().run(frames, Box::new(TableEmbedder)).unwrap();
    assert_eq!(out.map.poses().keys().copied().collect::<Vec<_>>(), vec![0, 10, 20]);
}
