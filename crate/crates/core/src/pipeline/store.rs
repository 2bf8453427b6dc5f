//! One directory per run: `runs/<request_id>/record.json` plus one payload
//! file per image. The JSON names the payload files instead of inlining bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde_json::Value;

use crate::backend::GeneratedImage;
use crate::hashing::{hex8, stable_hash};

use super::record::RunRecord;
use super::PipelineError;

const RECORD_FILE: &str = "record.json";

#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
    next_sequence: AtomicU64,
    write_lock: Mutex<()>,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io(format!("{}: {e}", path.display()))
}

fn image_file(index: usize, image: &GeneratedImage) -> String {
    format!("image-{index}.{}", image.extension())
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io(&root))?;
        let store = Self {
            root,
            next_sequence: AtomicU64::new(1),
            write_lock: Mutex::new(()),
        };
        let max = store.list()?.iter().map(|r| r.sequence).max().unwrap_or(0);
        store.next_sequence.store(max + 1, Ordering::SeqCst);
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Reserve a sequence number and derive the request id from it.
    pub fn allocate(&self, seed_parts: &[&str]) -> (u64, String) {
        let sequence = self.next_sequence.fetch_add(1, Ordering::SeqCst);
        let seq_text = sequence.to_string();
        let hash = stable_hash(seed_parts.iter().map(|p| p.as_bytes()).chain([seq_text.as_bytes()]));
        (sequence, format!("run-{sequence:06}-{}", hex8(hash)))
    }

    fn run_dir(&self, id: &str) -> Result<PathBuf, PipelineError> {
        let valid = !id.is_empty()
            && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !valid {
            return Err(PipelineError::UnknownRun(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    pub fn save(&self, record: &RunRecord) -> Result<(), PipelineError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let dir = self.run_dir(&record.request_id)?;
        let staging = self.root.join(format!(".{}.tmp", record.request_id));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io(&staging))?;
        let mut value = serde_json::to_value(record).expect("run record serializes");
        if let Some(images) = value.get_mut("images").and_then(Value::as_array_mut) {
            for (i, (entry, image)) in images.iter_mut().zip(&record.images).enumerate() {
                let name = image_file(i, image);
                let path = staging.join(&name);
                fs::write(&path, &image.bytes).map_err(io(&path))?;
                let obj = entry.as_object_mut().expect("image is an object");
                obj.remove("bytes");
                obj.insert("file".into(), Value::String(name));
            }
        }
        let path = staging.join(RECORD_FILE);
        let text = serde_json::to_string_pretty(&value).expect("json value serializes");
        fs::write(&path, text).map_err(io(&path))?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io(&dir))?;
        }
        fs::rename(&staging, &dir).map_err(io(&dir))
    }

    pub fn record_path(&self, id: &str) -> Result<PathBuf, PipelineError> {
        Ok(self.run_dir(id)?.join(RECORD_FILE))
    }

    pub fn load(&self, id: &str) -> Result<RunRecord, PipelineError> {
        let dir = self.run_dir(id)?;
        let path = dir.join(RECORD_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(PipelineError::UnknownRun(id.to_string()))
            }
            Err(e) => return Err(io(&path)(e)),
        };
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        if let Some(images) = value.get_mut("images").and_then(Value::as_array_mut) {
            for entry in images.iter_mut() {
                let obj = entry
                    .as_object_mut()
                    .ok_or_else(|| PipelineError::Io(format!("{}: malformed image entry", path.display())))?;
                let name = obj
                    .remove("file")
                    .and_then(|f| f.as_str().map(str::to_string))
                    .ok_or_else(|| PipelineError::Io(format!("{}: image without file", path.display())))?;
                if name.contains('/') || name.contains("..") {
                    return Err(PipelineError::Io(format!("{}: bad image file name", path.display())));
                }
                let payload_path = dir.join(&name);
                let bytes = fs::read(&payload_path).map_err(io(&payload_path))?;
                let encoded = serde_json::to_value(GeneratedImage {
                    bytes,
                    seed_used: 0,
                    feature_vector: None,
                })
                .expect("image serializes");
                obj.insert("bytes".into(), encoded["bytes"].clone());
            }
        }
        serde_json::from_value(value).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }

    /// All stored runs, oldest first.
    pub fn list(&self) -> Result<Vec<RunRecord>, PipelineError> {
        let mut records = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io(&self.root))? {
            let entry = entry.map_err(io(&self.root))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if name.starts_with('.') || !entry.path().join(RECORD_FILE).exists() {
                continue;
            }
            records.push(self.load(&name)?);
        }
        records.sort_by(|a, b| a.sequence.cmp(&b.sequence).then_with(|| a.request_id.cmp(&b.request_id)));
        Ok(records)
    }

    pub fn image(&self, id: &str, index: usize) -> Result<GeneratedImage, PipelineError> {
        let record = self.load(id)?;
        record
            .images
            .get(index)
            .cloned()
            .ok_or(PipelineError::UnknownImage {
                run: id.to_string(),
                index,
            })
    }
}
