//! Persisted dataset format: `manifest.json`, `objects/<id>.json` (plus mesh
//! and SDF caches), and `sequences/<idx>.json` with per-file CRC32 checks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{ObjectTemplate, TemplateError};
use crate::sequence::{HoiSequence, HumanPose, ObjectPose};
use crate::skeleton::SkeletonSpec;

pub const DATASET_FORMAT: &str = "hoisynth-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checksum failure in {file}")]
    Checksum { file: String },
    #[error("missing file {file}")]
    MissingFile { file: String },
    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("holdout object '{0}' appears in the train split")]
    HoldoutLeak(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    /// Sequences whose objects never appear in the train split.
    UnseenHoldout,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub file: String,
    pub split: Split,
    pub object_id: String,
    pub crc32: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub id: String,
    pub unseen: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub tool_version: String,
    pub skeleton: SkeletonSpec,
    pub vocabulary: Vec<String>,
    pub objects: Vec<ObjectEntry>,
    pub sequences: Vec<SequenceEntry>,
    /// Resolved generation config, echoed for reproducibility.
    pub config_echo: serde_json::Value,
}

impl DatasetManifest {
    /// Unseen-holdout objects must never appear in train-split sequences.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let unseen: Vec<&str> =
            self.objects.iter().filter(|o| o.unseen).map(|o| o.id.as_str()).collect();
        for s in &self.sequences {
            if s.split == Split::Train && unseen.contains(&s.object_id.as_str()) {
                return Err(DatasetError::HoldoutLeak(s.object_id.clone()));
            }
        }
        Ok(())
    }

    pub fn unseen_object_ids(&self) -> Vec<String> {
        self.objects.iter().filter(|o| o.unseen).map(|o| o.id.clone()).collect()
    }
}

/// A dataset held in memory: manifest, object templates, and sequences in
/// manifest order.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub templates: BTreeMap<String, ObjectTemplate>,
    pub sequences: Vec<HoiSequence>,
}

impl Dataset {
    pub fn template(&self, id: &str) -> &ObjectTemplate {
        &self.templates[id]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .sequences
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

/// On-disk sequence payload: flat row-major f32 arrays.
#[derive(Serialize, Deserialize)]
struct SequenceFile {
    n: usize,
    fps: f64,
    prompt: String,
    object_id: String,
    j: Vec<f32>,
    q: Vec<f32>,
    o: Vec<f32>,
    r: Vec<f32>,
    h: Vec<f32>,
}

impl SequenceFile {
    fn from_sequence(seq: &HoiSequence) -> Self {
        let n = seq.frame_count();
        let mut j = Vec::with_capacity(n * seq.joint_count() * 3);
        let mut q = Vec::with_capacity(n * seq.joint_count() * 6);
        let mut o = Vec::with_capacity(n * 3);
        let mut r = Vec::with_capacity(n * 6);
        let mut h = Vec::with_capacity(n * 2);
        for pose in &seq.human {
            for p in &pose.joints {
                j.extend(p.iter().map(|&v| v as f32));
            }
            for rr in &pose.rotations {
                q.extend(rr.iter().map(|&v| v as f32));
            }
        }
        for op in &seq.object {
            o.extend(op.position.iter().map(|&v| v as f32));
            r.extend(op.rotation.iter().map(|&v| v as f32));
        }
        for c in &seq.contact {
            h.extend(c.iter().map(|&v| v as f32));
        }
        Self {
            n,
            fps: seq.fps,
            prompt: seq.text_prompt.clone(),
            object_id: seq.object_id.clone(),
            j,
            q,
            o,
            r,
            h,
        }
    }

    fn into_sequence(self, joint_count: usize, path: &str) -> Result<HoiSequence, DatasetError> {
        let n = self.n;
        let expect = |name: &str, len: usize, want: usize| {
            if len != want {
                Err(DatasetError::Parse {
                    path: path.to_string(),
                    reason: format!("array '{name}' has {len} entries, expected {want}"),
                })
            } else {
                Ok(())
            }
        };
        expect("j", self.j.len(), n * joint_count * 3)?;
        expect("q", self.q.len(), n * joint_count * 6)?;
        expect("o", self.o.len(), n * 3)?;
        expect("r", self.r.len(), n * 6)?;
        expect("h", self.h.len(), n * 2)?;
        let mut human = Vec::with_capacity(n);
        for f in 0..n {
            let joints = (0..joint_count)
                .map(|k| {
                    let s = (f * joint_count + k) * 3;
                    [self.j[s] as f64, self.j[s + 1] as f64, self.j[s + 2] as f64]
                })
                .collect();
            let rotations = (0..joint_count)
                .map(|k| {
                    let s = (f * joint_count + k) * 6;
                    std::array::from_fn(|i| self.q[s + i] as f64)
                })
                .collect();
            human.push(HumanPose { joints, rotations });
        }
        let object = (0..n)
            .map(|f| ObjectPose {
                position: [self.o[f * 3] as f64, self.o[f * 3 + 1] as f64, self.o[f * 3 + 2] as f64],
                rotation: std::array::from_fn(|i| self.r[f * 6 + i] as f64),
            })
            .collect();
        let contact = (0..n).map(|f| [self.h[f * 2] as f64, self.h[f * 2 + 1] as f64]).collect();
        Ok(HoiSequence {
            fps: self.fps,
            human,
            object,
            contact,
            text_prompt: self.prompt,
            object_id: self.object_id,
        })
    }
}

/// Writes one sequence as a standalone JSON file (the same payload format
/// the dataset uses).
pub fn write_sequence_file(path: &Path, seq: &HoiSequence) -> Result<(), DatasetError> {
    let payload = serde_json::to_vec(&SequenceFile::from_sequence(seq)).expect("serializes");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, payload).map_err(|e| io_err(path, e))
}

/// Reads a standalone sequence file written by [`write_sequence_file`].
pub fn read_sequence_file(path: &Path, joint_count: usize) -> Result<HoiSequence, DatasetError> {
    let payload = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let sf: SequenceFile = serde_json::from_slice(&payload).map_err(|e| DatasetError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    sf.into_sequence(joint_count, &path.display().to_string())
}

/// Writes a dataset directory. Sequence payload checksums land in the
/// manifest, so any later corruption is caught by [`read_dataset`].
pub fn write_dataset(
    dir: &Path,
    manifest: &mut DatasetManifest,
    templates: &BTreeMap<String, ObjectTemplate>,
    sequences: &[HoiSequence],
) -> Result<(), DatasetError> {
    assert_eq!(manifest.sequences.len(), sequences.len(), "one entry per sequence");
    manifest.validate()?;
    std::fs::create_dir_all(dir.join("sequences")).map_err(|e| io_err(dir, e))?;
    let obj_dir = dir.join("objects");
    for t in templates.values() {
        t.save_to_dir(&obj_dir)?;
    }
    for (entry, seq) in manifest.sequences.iter_mut().zip(sequences) {
        let payload = serde_json::to_vec(&SequenceFile::from_sequence(seq)).expect("serializes");
        entry.crc32 = crc32fast::hash(&payload);
        let path = dir.join(&entry.file);
        std::fs::write(&path, payload).map_err(|e| io_err(&path, e))?;
    }
    let mp = dir.join("manifest.json");
    std::fs::write(&mp, serde_json::to_vec_pretty(manifest).expect("serializes"))
        .map_err(|e| io_err(&mp, e))
}

/// Reads a dataset directory back, verifying version, checksums, and the
/// holdout discipline.
pub fn read_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let mp = dir.join("manifest.json");
    if !mp.exists() {
        return Err(DatasetError::MissingFile { file: "manifest.json".into() });
    }
    let manifest: DatasetManifest = serde_json::from_slice(
        &std::fs::read(&mp).map_err(|e| io_err(&mp, e))?,
    )
    .map_err(|e| DatasetError::Parse { path: mp.display().to_string(), reason: e.to_string() })?;
    if manifest.format != DATASET_FORMAT {
        return Err(DatasetError::Parse {
            path: mp.display().to_string(),
            reason: format!("unknown format '{}'", manifest.format),
        });
    }
    if manifest.version != DATASET_VERSION {
        return Err(DatasetError::VersionMismatch {
            found: manifest.version,
            expected: DATASET_VERSION,
        });
    }
    manifest.validate()?;
    let joint_count = manifest.skeleton.joint_count;
    let mut templates = BTreeMap::new();
    for obj in &manifest.objects {
        let t = ObjectTemplate::load_from_dir(&dir.join("objects"), &obj.id)?;
        templates.insert(obj.id.clone(), t);
    }
    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for entry in &manifest.sequences {
        let path = dir.join(&entry.file);
        if !path.exists() {
            return Err(DatasetError::MissingFile { file: entry.file.clone() });
        }
        let payload = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        if crc32fast::hash(&payload) != entry.crc32 {
            return Err(DatasetError::Checksum { file: entry.file.clone() });
        }
        let sf: SequenceFile = serde_json::from_slice(&payload).map_err(|e| DatasetError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        sequences.push(sf.into_sequence(joint_count, &entry.file)?);
    }
    Ok(Dataset { manifest, templates, sequences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::objects::{make_template, object_recipes};
    use crate::datagen::script::build_script;
    use crate::datagen::{generate_sequence, skeleton22, vocabulary_for};

    fn tiny_dataset() -> (DatasetManifest, BTreeMap<String, ObjectTemplate>, Vec<HoiSequence>) {
        let spec = skeleton22();
        let recipes = object_recipes();
        let ball = make_template(&recipes[0], 256, 3).unwrap();
        let gem = make_template(recipes.iter().find(|r| r.id == "gem").unwrap(), 256, 4).unwrap();
        let mut sequences = Vec::new();
        let mut entries = Vec::new();
        for (i, (t, split)) in
            [(&ball, Split::Train), (&ball, Split::Test), (&gem, Split::UnseenHoldout)]
                .iter()
                .enumerate()
        {
            let script = build_script(t, 60, 30.0, i as u64);
            sequences.push(generate_sequence(&script, &spec, t, i as u64).unwrap());
            entries.push(SequenceEntry {
                file: format!("sequences/{i:06}.json"),
                split: *split,
                object_id: t.object_id.clone(),
                crc32: 0,
            });
        }
        let manifest = DatasetManifest {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            seed: 1,
            tool_version: crate::VERSION.into(),
            skeleton: spec,
            vocabulary: vocabulary_for(&["ball".into(), "gem".into()]),
            objects: vec![
                ObjectEntry { id: "ball".into(), unseen: false },
                ObjectEntry { id: "gem".into(), unseen: true },
            ],
            sequences: entries,
            config_echo: serde_json::json!({}),
        };
        let mut templates = BTreeMap::new();
        templates.insert("ball".to_string(), ball);
        templates.insert("gem".to_string(), gem);
        (manifest, templates, sequences)
    }

    #[test]
    fn roundtrip_is_lossless() {
        let (mut manifest, templates, sequences) = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &mut manifest, &templates, &sequences).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.sequences.len(), sequences.len());
        for (a, b) in sequences.iter().zip(&back.sequences) {
            assert_eq!(a, b, "sequence changed across round-trip");
        }
        assert_eq!(back.manifest.vocabulary, manifest.vocabulary);
    }

    #[test]
    fn corrupt_byte_fails_checksum_with_file_name() {
        let (mut manifest, templates, sequences) = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &mut manifest, &templates, &sequences).unwrap();
        let victim = dir.path().join("sequences/000001.json");
        let mut bytes = std::fs::read(&victim).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] = bytes[mid].wrapping_add(1);
        std::fs::write(&victim, bytes).unwrap();
        match read_dataset(dir.path()) {
            Err(DatasetError::Checksum { file }) => assert!(file.contains("000001")),
            Err(other) => panic!("expected checksum error, got {other:?}"),
            Ok(_) => panic!("expected checksum error, read succeeded"),
        }
    }

    #[test]
    fn version_mismatch_detected() {
        let (mut manifest, templates, sequences) = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &mut manifest, &templates, &sequences).unwrap();
        let mp = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&mp).unwrap().replace("\"version\": 1", "\"version\": 9");
        std::fs::write(&mp, text).unwrap();
        assert!(matches!(
            read_dataset(dir.path()),
            Err(DatasetError::VersionMismatch { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn missing_sequence_file_detected() {
        let (mut manifest, templates, sequences) = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &mut manifest, &templates, &sequences).unwrap();
        std::fs::remove_file(dir.path().join("sequences/000002.json")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(DatasetError::MissingFile { .. })));
    }

    #[test]
    fn empty_dataset_is_valid() {
        let (mut manifest, templates, _) = tiny_dataset();
        manifest.sequences.clear();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &mut manifest, &templates, &[]).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert!(back.sequences.is_empty());
    }

    #[test]
    fn holdout_leak_rejected() {
        let (mut manifest, templates, sequences) = tiny_dataset();
        manifest.sequences[2].split = Split::Train;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_dataset(dir.path(), &mut manifest, &templates, &sequences),
            Err(DatasetError::HoldoutLeak(_))
        ));
    }
}
