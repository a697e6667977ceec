use cellbloom_core::harness::{generate_synthetic_domains, SyntheticDomainSpec};
use cellbloom_core::manifest::DatasetManifest;

#[test]
fn manifests_move_with_their_images() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticDomainSpec {
        per_class: 2,
        ..SyntheticDomainSpec::default()
    };
    let first = dir.path().join("first");
    let (cells, _) = generate_synthetic_domains(&spec, &first).unwrap();
    cells.write_jsonl(&first.join("cells.jsonl")).unwrap();
    let text = std::fs::read_to_string(first.join("cells.jsonl")).unwrap();
    assert!(!text.contains(first.to_str().unwrap()));

    let moved = dir.path().join("moved");
    std::fs::rename(&first, &moved).unwrap();
    let back = DatasetManifest::read_jsonl(&moved.join("cells.jsonl")).unwrap();
    assert_eq!(back.len(), cells.len());
    for (a, b) in back.records().iter().zip(cells.records()) {
        assert_eq!(a.id, b.id);
        assert!(a.path.starts_with(&moved) && a.path.exists());
    }
}

#[test]
fn paths_outside_the_manifest_directory_stay_absolute() {
    let dir = tempfile::tempdir().unwrap();
    let (cells, _) = generate_synthetic_domains(
        &SyntheticDomainSpec {
            per_class: 1,
            ..SyntheticDomainSpec::default()
        },
        &dir.path().join("data"),
    )
    .unwrap();
    let out = dir.path().join("elsewhere/cells.jsonl");
    cells.write_jsonl(&out).unwrap();
    let back = DatasetManifest::read_jsonl(&out).unwrap();
    assert_eq!(back.records()[0].path, cells.records()[0].path);
}
