mod common;

use std::collections::HashSet;

use cellbloom_core::manifest::{CellClass, ClassPairMap, DatasetManifest};
use cellbloom_serve::{AppState, TaskStore};
use reqwest::StatusCode;
use serde_json::{json, Value};

use common::{spawn, store_with};

const TOKEN: &str = "s3cret";

async fn vote(client: &reqwest::Client, base: &str, task_id: u64, annotator: &str, class: &str) -> StatusCode {
    client
        .post(format!("{base}/api/annotations"))
        .json(&json!({ "task_id": task_id, "annotator": annotator, "flower_class": class }))
        .send()
        .await
        .unwrap()
        .status()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn status_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (_, store) = store_with(dir.path(), 3);
    let (base, _h) = spawn(AppState::new(store, Some(TOKEN.into()))).await;
    let c = reqwest::Client::new();

    let next = c.get(format!("{base}/api/tasks/next?annotator=ann")).send().await.unwrap();
    assert_eq!(next.status(), StatusCode::OK);
    let task: Value = next.json().await.unwrap();
    assert_eq!(task["task_id"], 1);
    assert_eq!(task["classes"].as_array().unwrap().len(), 7);
    assert_eq!(task["classes"][2], "daisy");

    let img = c.get(format!("{base}{}", task["image_url"].as_str().unwrap())).send().await.unwrap();
    assert_eq!(img.status(), StatusCode::OK);
    assert_eq!(img.headers()["content-type"], "image/png");
    assert_eq!(&img.bytes().await.unwrap()[1..4], b"PNG");
    assert_eq!(c.get(format!("{base}/api/images/77")).send().await.unwrap().status(), StatusCode::NOT_FOUND);

    assert_eq!(vote(&c, &base, 1, "ann", "daisy").await, StatusCode::CREATED);
    assert_eq!(vote(&c, &base, 1, "ann", "crocus").await, StatusCode::CONFLICT);
    assert_eq!(vote(&c, &base, 404, "ann", "daisy").await, StatusCode::NOT_FOUND);
    assert_eq!(vote(&c, &base, 2, "ann", "tulip").await, StatusCode::UNPROCESSABLE_ENTITY);
    let bad = c.post(format!("{base}/api/annotations")).json(&json!({ "task_id": 2 })).send().await.unwrap();
    assert_eq!(bad.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let no_name = c.get(format!("{base}/api/tasks/next")).send().await.unwrap();
    assert_eq!(no_name.status(), StatusCode::UNPROCESSABLE_ENTITY);

    let progress: Value = c.get(format!("{base}/api/progress")).send().await.unwrap().json().await.unwrap();
    assert_eq!(progress, json!({ "open": 10, "complete": 0, "total_votes": 1 }));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn exhausted_annotator_gets_no_content() {
    let dir = tempfile::tempdir().unwrap();
    let (_, store) = store_with(dir.path(), 3);
    let (base, _h) = spawn(AppState::new(store, None)).await;
    let c = reqwest::Client::new();
    for id in 1..=10 {
        assert_eq!(vote(&c, &base, id, "solo", "crocus").await, StatusCode::CREATED);
    }
    let next = c.get(format!("{base}/api/tasks/next?annotator=solo")).send().await.unwrap();
    assert_eq!(next.status(), StatusCode::NO_CONTENT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn export_needs_the_operator_token() {
    let dir = tempfile::tempdir().unwrap();
    let (_, store) = store_with(dir.path(), 1);
    let (base, _h) = spawn(AppState::new(store, Some(TOKEN.into()))).await;
    let c = reqwest::Client::new();
    let url = format!("{base}/api/export");
    assert_eq!(c.get(&url).send().await.unwrap().status(), StatusCode::UNAUTHORIZED);
    assert_eq!(c.get(&url).bearer_auth("nope").send().await.unwrap().status(), StatusCode::UNAUTHORIZED);
    let ok = c.get(&url).bearer_auth(TOKEN).send().await.unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    let m = DatasetManifest::parse_jsonl(&ok.text().await.unwrap(), "export").unwrap();
    assert!(m.is_empty());

    let dir2 = tempfile::tempdir().unwrap();
    let (_, store) = store_with(dir2.path(), 1);
    let (base2, _h2) = spawn(AppState::new(store, None)).await;
    let off = c.get(format!("{base2}/api/export")).bearer_auth(TOKEN).send().await.unwrap();
    assert_eq!(off.status(), StatusCode::FORBIDDEN);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn annotator_payloads_never_reveal_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let (cells, store) = store_with(dir.path(), 2);
    let (base, _h) = spawn(AppState::new(store, None)).await;
    let c = reqwest::Client::new();
    let mut bodies = Vec::new();
    for annotator in ["a", "b", "c"] {
        loop {
            let r = c.get(format!("{base}/api/tasks/next?annotator={annotator}")).send().await.unwrap();
            if r.status() == StatusCode::NO_CONTENT {
                break;
            }
            let body = r.text().await.unwrap();
            let id = serde_json::from_str::<Value>(&body).unwrap()["task_id"].as_u64().unwrap();
            bodies.push(body);
            let r = c
                .post(format!("{base}/api/annotations"))
                .json(&json!({ "task_id": id, "annotator": annotator, "flower_class": "daisy" }))
                .send()
                .await
                .unwrap();
            bodies.push(r.text().await.unwrap());
        }
        bodies.push(c.get(format!("{base}/api/progress")).send().await.unwrap().text().await.unwrap());
    }
    bodies.push(vote_body(&c, &base, 1, "a").await);
    bodies.push(vote_body(&c, &base, 1, "z").await);
    let mut forbidden: Vec<String> = CellClass::ALL.iter().map(|c| c.name().to_string()).collect();
    forbidden.extend(["cell", "provenance", "source", "pair", "path"].map(String::from));
    for r in cells.records() {
        forbidden.push(r.id.clone());
        forbidden.push(r.path.display().to_string());
    }
    for body in &bodies {
        let lower = body.to_lowercase();
        for f in &forbidden {
            assert!(!lower.contains(f.as_str()), "`{f}` leaked in {body}");
        }
    }
}

async fn vote_body(c: &reqwest::Client, base: &str, task_id: u64, annotator: &str) -> String {
    c.post(format!("{base}/api/annotations"))
        .json(&json!({ "task_id": task_id, "annotator": annotator, "flower_class": "daisy" }))
        .send()
        .await
        .unwrap()
        .text()
        .await
        .unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_duplicates_record_one_vote() {
    let dir = tempfile::tempdir().unwrap();
    let (_, store) = store_with(dir.path(), 3);
    let (base, _h) = spawn(AppState::new(store, None)).await;
    let c = reqwest::Client::new();
    let attempts: Vec<_> = (0..40)
        .map(|i| {
            let (c, base) = (c.clone(), base.clone());
            // Half the racers reuse one annotator, the rest are distinct.
            let who = if i % 2 == 0 { "same".to_string() } else { format!("ann{i}") };
            tokio::spawn(async move { (who.clone(), vote(&c, &base, 5, &who, "crocus").await) })
        })
        .collect();
    let mut created = Vec::new();
    for a in attempts {
        let (who, status) = a.await.unwrap();
        if status == StatusCode::CREATED {
            created.push(who);
        } else {
            assert_eq!(status, StatusCode::CONFLICT);
        }
    }
    assert_eq!(created.len(), 3, "a required=3 task takes exactly three votes");
    let unique: HashSet<_> = created.iter().collect();
    assert_eq!(unique.len(), 3);
    let progress: Value = c.get(format!("{base}/api/progress")).send().await.unwrap().json().await.unwrap();
    assert_eq!(progress["total_votes"], 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn restart_replays_votes_and_round_trips_labels() {
    let dir = tempfile::tempdir().unwrap();
    let (cells, store) = store_with(dir.path(), 3);
    let root = dir.path().join("store");
    let pm = ClassPairMap::default();
    let truth: Vec<_> = cells.records().iter().map(|r| r.cell_class().unwrap()).collect();
    let c = reqwest::Client::new();

    let (base, handle) = spawn(AppState::new(store, Some(TOKEN.into()))).await;
    for (i, class) in truth.iter().enumerate().take(5) {
        let flower = pm.map_class(*class).name();
        for who in ["a", "b"] {
            assert_eq!(vote(&c, &base, i as u64 + 1, who, flower).await, StatusCode::CREATED);
        }
    }
    handle.abort();
    let _ = handle.await;

    let (base, _h) = spawn(AppState::new(TaskStore::open(&root).unwrap(), Some(TOKEN.into()))).await;
    let progress: Value = c.get(format!("{base}/api/progress")).send().await.unwrap().json().await.unwrap();
    assert_eq!(progress["total_votes"], 10);
    assert_eq!(vote(&c, &base, 1, "a", "daisy").await, StatusCode::CONFLICT);
    for who in ["a", "b", "c"] {
        loop {
            let r = c.get(format!("{base}/api/tasks/next?annotator={who}")).send().await.unwrap();
            if r.status() == StatusCode::NO_CONTENT {
                break;
            }
            let id = r.json::<Value>().await.unwrap()["task_id"].as_u64().unwrap();
            let flower = pm.map_class(truth[id as usize - 1]).name();
            assert_eq!(vote(&c, &base, id, who, flower).await, StatusCode::CREATED);
        }
    }
    let progress: Value = c.get(format!("{base}/api/progress")).send().await.unwrap().json().await.unwrap();
    assert_eq!(progress, json!({ "open": 0, "complete": 10, "total_votes": 30 }));
    let text = c.get(format!("{base}/api/export")).bearer_auth(TOKEN).send().await.unwrap().text().await.unwrap();
    let exported = DatasetManifest::parse_jsonl(&text, "export").unwrap();
    assert_eq!(exported.len(), 10);
    for (r, orig) in exported.records().iter().zip(cells.records()) {
        assert_eq!(r.id, orig.id);
        assert_eq!(r.cell_class(), orig.cell_class());
        assert_eq!(r.agreement, Some(1.0));
    }
}
