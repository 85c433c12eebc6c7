use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::recording::{attach_context, load_recording, normalize_repetition, write_recording, PareticSide, PatientMeta, Recording, RecordingId};
use super::schema::ChannelSchema;
use super::window::{extract_all, ExtractSummary, Window, WindowConfig};
use crate::error::{Error, Result};
use crate::par;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub patient_id: String,
    pub activity_id: String,
    pub repetition_index: u32,
    /// Relative to the manifest's directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub schema: ChannelSchema,
    /// Patient metadata CSV, relative to the manifest's directory.
    pub patients: String,
    pub recordings: Vec<RecordingEntry>,
}

/// How recordings are turned into model inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Per-repetition standardization of every channel except the paretic flag.
    pub normalize: bool,
    pub window: WindowConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            normalize: true,
            window: WindowConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Arc<ChannelSchema>,
    pub patients: Vec<PatientMeta>,
    pub recordings: Vec<Arc<Recording>>,
}

pub fn read_patients(path: &Path) -> Result<Vec<PatientMeta>> {
    let shown = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{shown}: {other:?}")),
        })?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: shown.clone(),
            row: 1,
            column: name.into(),
            message: format!("missing column {name:?}"),
        })
    };
    let (ci, cs, cf) = (col("patient_id")?, col("paretic_side")?, col("fma_score")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let err = |column: &str, message: String| Error::Parse {
            path: shown.clone(),
            row,
            column: column.into(),
            message,
        };
        let side = match rec[cs].to_ascii_lowercase().as_str() {
            "left" => PareticSide::Left,
            "right" => PareticSide::Right,
            other => return Err(err("paretic_side", format!("expected left or right, got {other:?}"))),
        };
        let fma: u8 = rec[cf]
            .parse()
            .map_err(|_| err("fma_score", format!("not an integer: {:?}", &rec[cf])))?;
        out.push(PatientMeta::new(&rec[ci], side, fma).map_err(|e| err("fma_score", e.to_string()))?);
    }
    Ok(out)
}

pub fn write_patients(path: &Path, patients: &[PatientMeta]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["patient_id", "paretic_side", "fma_score"])?;
    for p in patients {
        let side = match p.paretic_side {
            PareticSide::Left => "left",
            PareticSide::Right => "right",
        };
        w.write_record([p.patient_id.as_str(), side, &p.fma_score.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl Dataset {
    /// Load raw recordings and patient metadata listed in a manifest.
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: manifest.version,
                expected: MANIFEST_VERSION,
            });
        }
        manifest.schema.validate(None)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let patients = read_patients(&base.join(&manifest.patients))?;
        let schema = Arc::new(manifest.schema);
        let recordings = par::map(manifest.recordings.len(), |i| {
            let e = &manifest.recordings[i];
            load_recording(
                &base.join(&e.path),
                &schema,
                RecordingId {
                    patient_id: e.patient_id.clone(),
                    activity_id: e.activity_id.clone(),
                    repetition_index: e.repetition_index,
                },
            )
            .map(Arc::new)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let ds = Dataset {
            schema,
            patients,
            recordings,
        };
        ds.check_patients()?;
        Ok(ds)
    }

    fn check_patients(&self) -> Result<()> {
        for r in &self.recordings {
            if !self.patients.iter().any(|p| p.patient_id == r.id.patient_id) {
                return Err(Error::Contract(format!(
                    "recording references unknown patient {:?}",
                    r.id.patient_id
                )));
            }
        }
        Ok(())
    }

    /// Write recordings and metadata under `dir`, with the manifest at `dir/manifest_name`.
    pub fn save(&self, dir: &Path, manifest_name: &str) -> Result<PathBuf> {
        let rec_dir = dir.join("recordings");
        fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
        let stem = manifest_name.trim_end_matches(".json");
        let patients_name = format!("{stem}_patients.csv");
        write_patients(&dir.join(&patients_name), &self.patients)?;
        let mut entries = Vec::with_capacity(self.recordings.len());
        for r in &self.recordings {
            let rel = format!(
                "recordings/{}_{}_{:03}.csv",
                r.id.patient_id, r.id.activity_id, r.id.repetition_index
            );
            write_recording(&dir.join(&rel), r)?;
            entries.push(RecordingEntry {
                patient_id: r.id.patient_id.clone(),
                activity_id: r.id.activity_id.clone(),
                repetition_index: r.id.repetition_index,
                path: rel,
            });
        }
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            schema: (*self.schema).clone(),
            patients: patients_name,
            recordings: entries,
        };
        let path = dir.join(manifest_name);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Attach context channels and optionally normalize each repetition.
    pub fn prepare(&self, cfg: &PipelineConfig) -> Result<Dataset> {
        let metas: HashMap<&str, &PatientMeta> = self.patients.iter().map(|p| (p.patient_id.as_str(), p)).collect();
        let recordings = par::map(self.recordings.len(), |i| {
            let r = &self.recordings[i];
            let meta = metas
                .get(r.id.patient_id.as_str())
                .ok_or_else(|| Error::Contract(format!("no metadata for patient {:?}", r.id.patient_id)))?;
            let mut out = attach_context(r, meta)?;
            if cfg.normalize {
                out = normalize_repetition(&out)?;
            }
            Ok(Arc::new(out))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            schema: self.schema.clone(),
            patients: self.patients.clone(),
            recordings,
        })
    }

    /// Restrict to the given patients.
    pub fn subset(&self, ids: &[String]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            patients: self
                .patients
                .iter()
                .filter(|p| ids.contains(&p.patient_id))
                .cloned()
                .collect(),
            recordings: self
                .recordings
                .iter()
                .filter(|r| ids.contains(&r.id.patient_id))
                .cloned()
                .collect(),
        }
    }

    pub fn windows(&self, cfg: &WindowConfig) -> (Vec<Window>, ExtractSummary) {
        extract_all(&self.recordings, cfg)
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.patient_id.clone()).collect()
    }
}
