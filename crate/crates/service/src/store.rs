//! Directory-tree persistence.
//!
//! ```text
//! <root>/cases/<case_id>/original        uploaded bytes
//! <root>/cases/<case_id>/processed.png   normalized square image
//! <root>/cases/<case_id>/case.json       written last; its presence marks the case
//! <root>/cases/<case_id>/feedback.jsonl  append-only
//! <root>/eval/latest.json                published evaluation report
//! ```

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use pod_sentry::backend::BackendDescriptor;
use pod_sentry::Diagnosis;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const CASE_SCHEMA: &str = "pod-sentry/case@1";
pub const FEEDBACK_SCHEMA: &str = "pod-sentry/feedback@1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredCase {
    pub schema: String,
    pub case_id: String,
    pub image_id: String,
    /// Paths relative to the case directory.
    pub original: PathBuf,
    pub processed: PathBuf,
    pub backend_name: String,
    pub backend: BackendDescriptor,
    pub created_at: String,
    pub diagnosis: Diagnosis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NotTheResult,
    NotTheDisease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub schema: String,
    pub id: String,
    pub case_id: String,
    pub image_id: String,
    pub submitted_at: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pod_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

/// Outcome of a feedback append.
#[derive(Debug, Clone, PartialEq)]
pub enum Appended {
    Created(FeedbackRecord),
    /// A record with the same idempotency key already existed.
    Existing(FeedbackRecord),
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Io { path: path.display().to_string(), source }
}

/// Writes through a sibling temp file and a rename so readers never see a
/// partial document.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
    let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
    f.write_all(bytes).map_err(io(&tmp))?;
    f.sync_all().map_err(io(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io(path))
}

/// Case ids are lowercase hex; anything else never touches the filesystem.
pub fn valid_case_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        for sub in ["cases", "eval"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(io(&p))?;
        }
        Ok(Self { root, locks: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn case_dir(&self, id: &str) -> PathBuf {
        self.root.join("cases").join(id)
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().expect("lock table poisoned").entry(id.to_string()).or_default().clone()
    }

    /// Persists a new case, or returns the stored one when the id exists.
    pub fn create_case(
        &self,
        case: StoredCase,
        original: &[u8],
        processed_png: &[u8],
    ) -> Result<StoredCase, ServiceError> {
        let lock = self.lock(&case.case_id);
        let _guard = lock.lock().expect("case lock poisoned");
        if let Some(existing) = self.load_case(&case.case_id)? {
            return Ok(existing);
        }
        let dir = self.case_dir(&case.case_id);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        write_atomic(&dir.join(&case.original), original)?;
        write_atomic(&dir.join(&case.processed), processed_png)?;
        write_atomic(&dir.join("case.json"), &case_bytes(&case))?;
        Ok(case)
    }

    /// The case document exactly as persisted.
    pub fn case_bytes(&self, id: &str) -> Result<Option<Vec<u8>>, ServiceError> {
        if !valid_case_id(id) {
            return Ok(None);
        }
        let path = self.case_dir(id).join("case.json");
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path)(e)),
        }
    }

    pub fn load_case(&self, id: &str) -> Result<Option<StoredCase>, ServiceError> {
        self.case_bytes(id)?
            .map(|b| serde_json::from_slice(&b).map_err(|e| ServiceError::Corrupt(format!("case {id}: {e}"))))
            .transpose()
    }

    pub fn processed_image(&self, id: &str) -> Result<Option<Vec<u8>>, ServiceError> {
        let Some(case) = self.load_case(id)? else {
            return Ok(None);
        };
        let path = self.case_dir(id).join(&case.processed);
        fs::read(&path).map(Some).map_err(io(&path))
    }

    pub fn feedback(&self, id: &str) -> Result<Vec<FeedbackRecord>, ServiceError> {
        let path = self.case_dir(id).join("feedback.jsonl");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io(&path)(e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| ServiceError::Corrupt(format!("{} line {}: {e}", path.display(), i + 1)))
            })
            .collect()
    }

    /// Appends under the case lock; a repeated idempotency key returns the
    /// first record instead of writing a new one.
    pub fn append_feedback(&self, record: FeedbackRecord) -> Result<Appended, ServiceError> {
        let lock = self.lock(&record.case_id);
        let _guard = lock.lock().expect("case lock poisoned");
        if let Some(key) = &record.idempotency_key {
            if let Some(prev) =
                self.feedback(&record.case_id)?.into_iter().find(|r| r.idempotency_key.as_deref() == Some(key))
            {
                return Ok(Appended::Existing(prev));
            }
        }
        let path = self.case_dir(&record.case_id).join("feedback.jsonl");
        let mut line = serde_json::to_string(&record).expect("feedback serializes");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io(&path))?;
        f.write_all(line.as_bytes()).map_err(io(&path))?;
        f.sync_data().map_err(io(&path))?;
        Ok(Appended::Created(record))
    }

    pub fn eval_path(&self) -> PathBuf {
        self.root.join("eval").join("latest.json")
    }

    pub fn publish_eval(&self, report_json: &[u8]) -> Result<(), ServiceError> {
        write_atomic(&self.eval_path(), report_json)
    }

    pub fn latest_eval(&self) -> Result<Option<Vec<u8>>, ServiceError> {
        let path = self.eval_path();
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path)(e)),
        }
    }
}

fn case_bytes(case: &StoredCase) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(case).expect("case serializes");
    s.push('\n');
    s.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: &str) -> StoredCase {
        StoredCase {
            schema: CASE_SCHEMA.into(),
            case_id: id.into(),
            image_id: "img".into(),
            original: "original".into(),
            processed: "processed.png".into(),
            backend_name: "default".into(),
            backend: BackendDescriptor::mock(0),
            created_at: "2024-01-01T00:00:00Z".into(),
            diagnosis: Diagnosis {
                schema: pod_sentry::diagnosis::DIAGNOSIS_SCHEMA.into(),
                image_id: "img".into(),
                pods: vec![],
                kb_refs: vec![],
                knowledge: vec![],
            },
        }
    }

    fn fb(id: &str, key: Option<&str>) -> FeedbackRecord {
        FeedbackRecord {
            schema: FEEDBACK_SCHEMA.into(),
            id: uuid::Uuid::new_v4().to_string(),
            case_id: id.into(),
            image_id: "img".into(),
            submitted_at: "2024-01-01T00:00:00Z".into(),
            verdict: Verdict::NotTheResult,
            pod_index: None,
            free_text: None,
            idempotency_key: key.map(str::to_string),
        }
    }

    #[test]
    fn case_and_feedback_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let s = Store::open(tmp.path()).unwrap();
        let c = s.create_case(case("abc123"), b"raw", b"png").unwrap();
        assert_eq!(s.load_case("abc123").unwrap().unwrap(), c);
        let mut again = case("abc123");
        again.created_at = "later".into();
        assert_eq!(s.create_case(again, b"raw", b"png").unwrap().created_at, c.created_at);
        assert_eq!(s.processed_image("abc123").unwrap().unwrap(), b"png");

        assert!(matches!(s.append_feedback(fb("abc123", Some("k"))).unwrap(), Appended::Created(_)));
        assert!(matches!(s.append_feedback(fb("abc123", Some("k"))).unwrap(), Appended::Existing(_)));
        s.append_feedback(fb("abc123", None)).unwrap();
        assert_eq!(s.feedback("abc123").unwrap().len(), 2);
        assert!(s.load_case("../etc").unwrap().is_none());
        assert!(s.load_case("beef").unwrap().is_none());
    }

    #[test]
    fn eval_publish() {
        let tmp = tempfile::tempdir().unwrap();
        let s = Store::open(tmp.path()).unwrap();
        assert!(s.latest_eval().unwrap().is_none());
        s.publish_eval(b"{}\n").unwrap();
        assert_eq!(s.latest_eval().unwrap().unwrap(), b"{}\n");
    }
}
