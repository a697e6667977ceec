#![allow(dead_code)]

use std::path::Path;

use cellbloom_core::harness::{generate_synthetic_domains, SyntheticDomainSpec, TranslatorSet};
use cellbloom_core::manifest::{CellClass, ClassPairMap, DatasetManifest};
use cellbloom_core::transfer::{IdentityTranslator, Translator};
use cellbloom_serve::{create_tasks, TaskStore};

pub fn identity_set() -> TranslatorSet {
    CellClass::ALL
        .into_iter()
        .map(|c| (c, Box::new(IdentityTranslator) as Box<dyn Translator>))
        .collect()
}

/// Ten labeled cells cycling through all classes.
pub fn ten_cells(root: &Path) -> DatasetManifest {
    let spec = SyntheticDomainSpec {
        per_class: 2,
        seed: 1,
        ..SyntheticDomainSpec::default()
    };
    let (cells, _) = generate_synthetic_domains(&spec, root).unwrap();
    let mut records = cells.records().to_vec();
    records.sort_by_key(|r| (r.id.ends_with("00001"), r.cell_class().unwrap()));
    records.truncate(10);
    DatasetManifest::new(cells.domain(), 0, records).unwrap()
}

pub fn store_with(dir: &Path, required: usize) -> (DatasetManifest, TaskStore) {
    let cells = ten_cells(&dir.join("data"));
    let store = create_tasks(&cells, &identity_set(), &ClassPairMap::default(), required, 32, &dir.join("store")).unwrap();
    (cells, store)
}

pub async fn spawn(state: cellbloom_serve::AppState) -> (String, tokio::task::JoinHandle<()>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = tokio::spawn(async move {
        axum::serve(listener, cellbloom_serve::router(state)).await.unwrap();
    });
    (format!("http://{addr}"), handle)
}
