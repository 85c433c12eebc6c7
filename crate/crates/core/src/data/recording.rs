use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::schema::{ChannelKind, ChannelSchema};
use crate::error::{Error, Result};
use crate::primitive::{parse_step_label, step_label_name, StepLabel};

pub const SAMPLE_RATE_HZ: f64 = 100.0;

/// Variance floor for per-repetition normalization; flatter channels are only centered.
pub const NORMALIZE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PareticSide {
    Left,
    Right,
}

impl PareticSide {
    pub fn flag(self) -> f32 {
        match self {
            PareticSide::Left => 0.0,
            PareticSide::Right => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Impairment {
    Mild,
    Moderate,
    Severe,
}

impl Impairment {
    /// Fugl-Meyer bands: severe 0–25, moderate 26–52, mild 53 and above.
    pub fn from_fma(score: u8) -> Impairment {
        match score {
            0..=25 => Impairment::Severe,
            26..=52 => Impairment::Moderate,
            _ => Impairment::Mild,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientMeta {
    pub patient_id: String,
    pub paretic_side: PareticSide,
    pub fma_score: u8,
}

impl PatientMeta {
    pub fn new(patient_id: impl Into<String>, paretic_side: PareticSide, fma_score: u8) -> Result<Self> {
        if fma_score > 66 {
            return Err(Error::Config(format!("FMA score {fma_score} outside 0..=66")));
        }
        Ok(PatientMeta {
            patient_id: patient_id.into(),
            paretic_side,
            fma_score,
        })
    }

    pub fn impairment(&self) -> Impairment {
        Impairment::from_fma(self.fma_score)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecordingId {
    pub patient_id: String,
    pub activity_id: String,
    pub repetition_index: u32,
}

/// One activity repetition of one patient: a multichannel series at 100 Hz
/// with a dense per-timestep label track.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: RecordingId,
    pub schema: Arc<ChannelSchema>,
    /// Channel-major: `values[c * len + t]`.
    values: Vec<f32>,
    channels: usize,
    len: usize,
    pub labels: Vec<StepLabel>,
    context_attached: bool,
}

impl Recording {
    /// Build from a time-major `T×C` matrix of sensor channels.
    pub fn from_rows(id: RecordingId, schema: Arc<ChannelSchema>, rows: &[Vec<f32>], labels: Vec<StepLabel>) -> Result<Self> {
        let c = schema.sensor_count();
        if rows.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} value rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let t = rows.len();
        let mut values = vec![0.0; c * t];
        for (ti, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::dims("recording row", &[row.len()], &[c]));
            }
            for (ci, &v) in row.iter().enumerate() {
                values[ci * t + ti] = v;
            }
        }
        Ok(Recording {
            id,
            schema,
            values,
            channels: c,
            len: t,
            labels,
            context_attached: false,
        })
    }

    /// Build from channel-major sensor values.
    pub fn from_channels(id: RecordingId, schema: Arc<ChannelSchema>, values: Vec<f32>, labels: Vec<StepLabel>) -> Result<Self> {
        let c = schema.sensor_count();
        let t = labels.len();
        if values.len() != c * t {
            return Err(Error::dims("recording", &[values.len()], &[c, t]));
        }
        Ok(Recording {
            id,
            schema,
            values,
            channels: c,
            len: t,
            labels,
            context_attached: false,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sample_rate_hz(&self) -> f64 {
        SAMPLE_RATE_HZ
    }

    pub fn context_attached(&self) -> bool {
        self.context_attached
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    pub fn value(&self, t: usize, c: usize) -> f32 {
        self.values[c * self.len + t]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Kinds of the channels currently present.
    pub fn channel_kinds(&self) -> Vec<ChannelKind> {
        self.schema.channels[..self.channels].iter().map(|c| c.kind).collect()
    }
}

/// Read a recording CSV: header of sensor channel names plus `label`, one row
/// per 10 ms sample. Extra columns are ignored.
pub fn load_recording(path: &Path, schema: &Arc<ChannelSchema>, id: RecordingId) -> Result<Recording> {
    let shown = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: shown.clone(),
                row: 1,
                column: String::new(),
                message: format!("{other:?}"),
            },
        })?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: shown.clone(),
            row: 1,
            column: name.to_string(),
            message: format!("missing column {name:?}"),
        })
    };
    let cols: Vec<usize> = schema
        .sensor_channels()
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<_>>()?;
    // streams without a label column load as unlabeled
    let label_col = headers.iter().position(|h| h == "label");

    let c = cols.len();
    let mut columns: Vec<Vec<f32>> = vec![Vec::new(); c];
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        for (ci, &col) in cols.iter().enumerate() {
            let cell = rec.get(col).unwrap_or("");
            let v: f32 = cell.parse().map_err(|_| Error::Parse {
                path: shown.clone(),
                row: line,
                column: headers[col].to_string(),
                message: format!("non-numeric value {cell:?}"),
            })?;
            columns[ci].push(v);
        }
        let Some(lc) = label_col else {
            labels.push(None);
            continue;
        };
        let cell = rec.get(lc).unwrap_or("");
        labels.push(parse_step_label(cell).map_err(|message| Error::Parse {
            path: shown.clone(),
            row: line,
            column: "label".into(),
            message,
        })?);
    }
    Recording::from_channels(id, schema.clone(), columns.concat(), labels)
}

/// Write a recording's sensor channels in the CSV layout read by [`load_recording`].
pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    })?;
    let sensors = rec.schema.sensor_count();
    let mut header: Vec<&str> = rec.schema.names().take(sensors).collect();
    header.push("label");
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(sensors + 1);
    for t in 0..rec.len() {
        row.clear();
        for c in 0..sensors {
            // shortest representation that round-trips exactly
            row.push(format!("{}", rec.value(t, c)));
        }
        row.push(step_label_name(rec.labels[t]).to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Append the elapsed-time channel (seconds) and the paretic-side flag
/// (0 = left, 1 = right).
pub fn attach_context(rec: &Recording, meta: &PatientMeta) -> Result<Recording> {
    if rec.context_attached {
        return Err(Error::Contract(format!(
            "context already attached to {}/{}",
            rec.id.patient_id, rec.id.activity_id
        )));
    }
    if rec.schema.context_count() != 2 {
        return Err(Error::Config("schema has no context channel placeholders".into()));
    }
    let t = rec.len;
    let mut values = rec.values.clone();
    values.extend((0..t).map(|i| (i as f64 / SAMPLE_RATE_HZ) as f32));
    values.extend(std::iter::repeat(meta.paretic_side.flag()).take(t));
    Ok(Recording {
        values,
        channels: rec.channels + 2,
        context_attached: true,
        ..rec.clone()
    })
}

/// Center every channel and divide by its population standard deviation over
/// this repetition. The paretic flag is left as is; channels flatter than
/// [`NORMALIZE_EPS`] are only centered.
pub fn normalize_repetition(rec: &Recording) -> Result<Recording> {
    let t = rec.len;
    if t < 2 {
        return Err(Error::Degenerate(format!(
            "recording {}/{} has {t} sample(s)",
            rec.id.patient_id, rec.id.activity_id
        )));
    }
    let kinds = rec.channel_kinds();
    let mut values = rec.values.clone();
    for (c, chunk) in values.chunks_mut(t).enumerate() {
        if kinds[c] == ChannelKind::PareticFlag {
            continue;
        }
        let n = t as f64;
        let mean = chunk.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = chunk
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        let scale = if std < NORMALIZE_EPS { 1.0 } else { std };
        for v in chunk.iter_mut() {
            *v = ((f64::from(*v) - mean) / scale) as f32;
        }
    }
    Ok(Recording {
        values,
        ..rec.clone()
    })
}
