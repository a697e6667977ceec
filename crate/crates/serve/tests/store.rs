mod common;

use std::fs::OpenOptions;
use std::io::Write;

use cellbloom_core::manifest::{CellClass, ClassPairMap, FlowerClass};
use cellbloom_core::CoreError;
use cellbloom_serve::{create_tasks, ServeError, TaskStatus, TaskStore};

use common::{identity_set, store_with, ten_cells};

#[test]
fn ten_cells_make_ten_open_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let (cells, store) = store_with(dir.path(), 3);
    assert_eq!(store.tasks().count(), 10);
    assert!(store.tasks().all(|t| t.status == TaskStatus::Open && t.required_annotations == 3));
    for (t, r) in store.tasks().zip(cells.records()) {
        assert_eq!(t.provenance.source_id, r.id);
        assert!(store.image_path(t.task_id).unwrap().exists());
    }
    let p = store.progress();
    assert_eq!((p.open, p.complete, p.total_votes), (10, 0, 0));
}

#[test]
fn lymphocyte_task_is_in_the_daffodil_domain() {
    let dir = tempfile::tempdir().unwrap();
    let (_, store) = store_with(dir.path(), 3);
    let t = store
        .tasks()
        .find(|t| t.provenance.cell_class == CellClass::Lymphocyte)
        .unwrap();
    assert_eq!(t.provenance.flower_class, FlowerClass::Daffodil);
}

#[test]
fn missing_translator_names_the_class() {
    let dir = tempfile::tempdir().unwrap();
    let cells = ten_cells(&dir.path().join("data"));
    let mut set = identity_set();
    set.remove(&CellClass::Macrophage);
    let err = create_tasks(&cells, &set, &ClassPairMap::default(), 3, 32, &dir.path().join("s")).unwrap_err();
    assert!(matches!(&err, ServeError::Core(CoreError::MissingCheckpoint(c)) if c == "macrophage"), "{err}");
}

#[test]
fn next_task_prefers_fewest_votes_then_lowest_id() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut store) = store_with(dir.path(), 3);
    assert_eq!(store.next_task("ann").unwrap().task_id, 1);
    store.submit(1, "other", FlowerClass::Daisy, None).unwrap();
    assert_eq!(store.next_task("ann").unwrap().task_id, 2);
    for id in 1..=10 {
        store.submit(id, "ann", FlowerClass::Daisy, None).unwrap();
    }
    assert!(store.next_task("ann").is_none());
}

#[test]
fn third_vote_completes_and_duplicates_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut store) = store_with(dir.path(), 3);
    assert_eq!(store.submit(4, "a", FlowerClass::Crocus, None).unwrap().status, TaskStatus::Open);
    assert!(matches!(
        store.submit(4, "a", FlowerClass::Daisy, None),
        Err(ServeError::DuplicateVote { task_id: 4, .. })
    ));
    assert_eq!(store.votes(4).len(), 1);
    store.submit(4, "b", FlowerClass::Crocus, None).unwrap();
    let done = store.submit(4, "c", FlowerClass::Daisy, None).unwrap();
    assert_eq!((done.votes, done.status), (3, TaskStatus::Complete));
    assert!(matches!(store.submit(4, "d", FlowerClass::Crocus, None), Err(ServeError::TaskClosed(4))));
    assert!(matches!(store.submit(99, "a", FlowerClass::Crocus, None), Err(ServeError::UnknownTask(99))));
    assert!(matches!(store.submit(5, " ", FlowerClass::Crocus, None), Err(ServeError::Invalid(_))));
    let agg = store.aggregate(4).unwrap();
    assert_eq!(agg.flower_class, FlowerClass::Crocus);
    assert_eq!(agg.cell_class, CellClass::Erythrocyte);
}

#[test]
fn reopen_replays_every_vote() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut store) = store_with(dir.path(), 2);
    store.submit(1, "a", FlowerClass::Coltsfoot, Some("t0".into())).unwrap();
    store.submit(1, "b", FlowerClass::Coltsfoot, None).unwrap();
    store.submit(2, "a", FlowerClass::Sunflower, None).unwrap();
    let before: Vec<_> = (1..=10).map(|id| store.votes(id).to_vec()).collect();
    drop(store);
    let store = TaskStore::open(&dir.path().join("store")).unwrap();
    let after: Vec<_> = (1..=10).map(|id| store.votes(id).to_vec()).collect();
    assert_eq!(before, after);
    assert_eq!(store.task(1).unwrap().status, TaskStatus::Complete);
    assert_eq!(store.progress().total_votes, 3);
}

#[test]
fn torn_final_line_is_ignored_but_corruption_is_not() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mut store) = store_with(dir.path(), 3);
    store.submit(1, "a", FlowerClass::Daisy, None).unwrap();
    drop(store);
    let root = dir.path().join("store");
    let log = root.join(TaskStore::LOG_FILE);
    OpenOptions::new().append(true).open(&log).unwrap().write_all(b"{\"task_id\":2,\"annot").unwrap();
    let mut store = TaskStore::open(&root).unwrap();
    assert_eq!(store.progress().total_votes, 1);
    drop(store.submit(2, "b", FlowerClass::Daisy, None));
    drop(store);

    let text = std::fs::read_to_string(&log).unwrap();
    std::fs::write(&log, format!("garbage\n{text}")).unwrap();
    assert!(matches!(TaskStore::open(&root), Err(ServeError::Corrupt { .. })));
}

#[test]
fn create_refuses_an_existing_store() {
    let dir = tempfile::tempdir().unwrap();
    let (cells, _) = store_with(dir.path(), 3);
    let again = create_tasks(&cells, &identity_set(), &ClassPairMap::default(), 3, 32, &dir.path().join("store"));
    assert!(matches!(again, Err(ServeError::Invalid(_))));
}

#[test]
fn export_covers_complete_tasks_only() {
    let dir = tempfile::tempdir().unwrap();
    let (cells, mut store) = store_with(dir.path(), 1);
    assert!(store.export().unwrap().is_empty());
    store.submit(3, "a", FlowerClass::Daisy, None).unwrap();
    let m = store.export().unwrap();
    assert_eq!(m.len(), 1);
    let r = &m.records()[0];
    assert_eq!(r.id, cells.records()[2].id);
    assert_eq!(r.cell_class(), Some(CellClass::MastCell));
    assert_eq!(r.agreement, Some(1.0));
}
