use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cellbloom_core::manifest::{ClassLabel, ClassPairMap, DatasetManifest, Domain, FlowerClass, ImageRecord};

use crate::aggregate::{aggregate_votes, AggregatedLabel};
use crate::error::{io_at, ServeError, ServeResult};
use crate::tasks::{AnnotationTask, TaskStatus, TaskView};

/// One vote, as stored in the append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub task_id: u64,
    pub annotator_id: String,
    pub flower_class: FlowerClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_timestamp: Option<String>,
    pub server_timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub task_id: u64,
    pub votes: usize,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub open: usize,
    pub complete: usize,
    pub total_votes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskFile {
    pair_map: ClassPairMap,
    tasks: Vec<AnnotationTask>,
}

#[derive(Debug)]
struct Entry {
    task: AnnotationTask,
    votes: Vec<AnnotationRecord>,
}

/// Tasks plus their votes, backed by `tasks.json` and an append-only
/// `annotations.jsonl` that is replayed on open.
#[derive(Debug)]
pub struct TaskStore {
    dir: PathBuf,
    pair_map: ClassPairMap,
    entries: BTreeMap<u64, Entry>,
    voters: HashSet<(u64, String)>,
    total_votes: usize,
    log: File,
}

impl TaskStore {
    pub const TASK_FILE: &'static str = "tasks.json";
    pub const LOG_FILE: &'static str = "annotations.jsonl";
    pub const IMAGE_DIR: &'static str = "images";

    /// Initialize a new store; fails if `dir` already holds one.
    pub fn create(dir: &Path, pair_map: ClassPairMap, tasks: Vec<AnnotationTask>) -> ServeResult<Self> {
        let task_path = dir.join(Self::TASK_FILE);
        if task_path.exists() {
            return Err(ServeError::Invalid(format!("{} already exists", task_path.display())));
        }
        let mut seen = HashSet::new();
        for t in &tasks {
            if !seen.insert(t.task_id) {
                return Err(ServeError::Invalid(format!("duplicate task id {}", t.task_id)));
            }
            if t.required_annotations == 0 {
                return Err(ServeError::Invalid(format!("task {} needs zero annotations", t.task_id)));
            }
        }
        fs::create_dir_all(dir).map_err(io_at(dir))?;
        let body = serde_json::to_vec_pretty(&TaskFile { pair_map, tasks }).expect("tasks serialize");
        fs::write(&task_path, body).map_err(io_at(&task_path))?;
        Self::open(dir)
    }

    /// Load tasks and replay every logged vote.
    pub fn open(dir: &Path) -> ServeResult<Self> {
        let task_path = dir.join(Self::TASK_FILE);
        let text = fs::read_to_string(&task_path).map_err(io_at(&task_path))?;
        let file: TaskFile = serde_json::from_str(&text).map_err(|e| ServeError::Corrupt {
            path: task_path.clone(),
            message: e.to_string(),
        })?;
        let entries = file
            .tasks
            .into_iter()
            .map(|mut task| {
                task.status = TaskStatus::Open;
                (task.task_id, Entry { task, votes: Vec::new() })
            })
            .collect();
        let log_path = dir.join(Self::LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_at(&log_path))?;
        let mut store = Self {
            dir: dir.to_path_buf(),
            pair_map: file.pair_map,
            entries,
            voters: HashSet::new(),
            total_votes: 0,
            log,
        };
        store.replay(&log_path)?;
        Ok(store)
    }

    fn replay(&mut self, log_path: &Path) -> ServeResult<()> {
        let text = fs::read_to_string(log_path).map_err(io_at(log_path))?;
        let lines: Vec<&str> = text.lines().collect();
        for (n, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| ServeError::Corrupt {
                path: log_path.to_path_buf(),
                message: format!("line {}: {message}", n + 1),
            };
            let rec: AnnotationRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                // A torn final line was never acknowledged.
                Err(_) if n + 1 == lines.len() && !text.ends_with('\n') => {
                    tracing::warn!(line = n + 1, "ignoring incomplete final log line");
                    break;
                }
                Err(e) => return Err(corrupt(e.to_string())),
            };
            self.check(rec.task_id, &rec.annotator_id).map_err(|e| corrupt(e.to_string()))?;
            self.apply(rec);
        }
        Ok(())
    }

    fn check(&self, task_id: u64, annotator: &str) -> ServeResult<()> {
        let entry = self.entries.get(&task_id).ok_or(ServeError::UnknownTask(task_id))?;
        if annotator.trim().is_empty() {
            return Err(ServeError::Invalid("annotator must be non-empty".into()));
        }
        if self.voters.contains(&(task_id, annotator.to_string())) {
            return Err(ServeError::DuplicateVote {
                task_id,
                annotator: annotator.to_string(),
            });
        }
        if entry.task.status == TaskStatus::Complete {
            return Err(ServeError::TaskClosed(task_id));
        }
        Ok(())
    }

    fn apply(&mut self, rec: AnnotationRecord) -> SubmitOutcome {
        self.voters.insert((rec.task_id, rec.annotator_id.clone()));
        self.total_votes += 1;
        let entry = self.entries.get_mut(&rec.task_id).expect("checked task");
        entry.votes.push(rec);
        if entry.votes.len() >= entry.task.required_annotations {
            entry.task.status = TaskStatus::Complete;
        }
        SubmitOutcome {
            task_id: entry.task.task_id,
            votes: entry.votes.len(),
            status: entry.task.status,
        }
    }

    /// Record a vote. The log line is synced to disk before this returns.
    pub fn submit(
        &mut self,
        task_id: u64,
        annotator: &str,
        flower_class: FlowerClass,
        client_timestamp: Option<String>,
    ) -> ServeResult<SubmitOutcome> {
        self.check(task_id, annotator)?;
        let rec = AnnotationRecord {
            task_id,
            annotator_id: annotator.to_string(),
            flower_class,
            client_timestamp,
            server_timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        };
        let mut line = serde_json::to_vec(&rec).expect("record serializes");
        line.push(b'\n');
        let log_path = self.dir.join(Self::LOG_FILE);
        self.log.write_all(&line).map_err(io_at(&log_path))?;
        self.log.sync_data().map_err(io_at(&log_path))?;
        Ok(self.apply(rec))
    }

    /// Open task the annotator has not answered, fewest votes first, then lowest id.
    pub fn next_task(&self, annotator: &str) -> Option<TaskView> {
        self.entries
            .values()
            .filter(|e| e.task.status == TaskStatus::Open)
            .filter(|e| !self.voters.contains(&(e.task.task_id, annotator.to_string())))
            .min_by_key(|e| (e.votes.len(), e.task.task_id))
            .map(|e| e.task.view())
    }

    pub fn task(&self, task_id: u64) -> Option<&AnnotationTask> {
        self.entries.get(&task_id).map(|e| &e.task)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &AnnotationTask> {
        self.entries.values().map(|e| &e.task)
    }

    pub fn votes(&self, task_id: u64) -> &[AnnotationRecord] {
        self.entries.get(&task_id).map(|e| e.votes.as_slice()).unwrap_or_default()
    }

    pub fn image_path(&self, task_id: u64) -> Option<PathBuf> {
        self.task(task_id).map(|t| self.dir.join(Self::IMAGE_DIR).join(&t.image))
    }

    pub fn progress(&self) -> Progress {
        let complete = self.tasks().filter(|t| t.status == TaskStatus::Complete).count();
        Progress {
            open: self.entries.len() - complete,
            complete,
            total_votes: self.total_votes,
        }
    }

    pub fn aggregate(&self, task_id: u64) -> ServeResult<AggregatedLabel> {
        let entry = self.entries.get(&task_id).ok_or(ServeError::UnknownTask(task_id))?;
        aggregate_votes(
            task_id,
            &entry.task.provenance.source_id,
            entry.votes.iter().map(|v| v.flower_class),
            &self.pair_map,
        )
    }

    /// Crowd-labeled cell records for every complete task, in task order.
    pub fn export(&self) -> ServeResult<DatasetManifest> {
        let mut records = Vec::new();
        for e in self.entries.values().filter(|e| e.task.status == TaskStatus::Complete) {
            let label = self.aggregate(e.task.task_id)?;
            let mut r = ImageRecord::new(
                label.source_id.clone(),
                e.task.provenance.source_path.clone(),
                ClassLabel::Cell(label.cell_class),
            );
            r.agreement = Some(label.agreement);
            records.push(r);
        }
        if records.is_empty() {
            tracing::warn!("export has no complete tasks");
        }
        Ok(DatasetManifest::new(Domain::Cell, 0, records)?)
    }
}
