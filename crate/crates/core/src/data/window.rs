use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::recording::{Recording, SAMPLE_RATE_HZ};
use crate::error::Result;
use crate::primitive::{Primitive, StepLabel, N_PRIMITIVES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_s: f64,
    pub stride_samples: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_s: 2.0,
            stride_samples: 1,
        }
    }
}

impl WindowConfig {
    pub fn samples(&self) -> usize {
        (self.window_s * SAMPLE_RATE_HZ).round() as usize
    }

    /// Centers `c` with `[c − W/2, c + W/2)` inside a recording of length `t`,
    /// before unlabeled centers are dropped.
    pub fn centers(&self, t: usize) -> impl Iterator<Item = usize> {
        let w = self.samples();
        let half = w / 2;
        let last = if t >= w && w > 0 { Some(t - (w - half)) } else { None };
        let stride = self.stride_samples.max(1);
        last.into_iter()
            .flat_map(move |last| (half..=last).step_by(stride))
    }

    /// Closed-form count of candidate centers.
    pub fn count(&self, t: usize) -> usize {
        let w = self.samples();
        if w == 0 || t < w {
            0
        } else {
            (t - w) / self.stride_samples.max(1) + 1
        }
    }
}

/// A fixed-length slice of a recording labeled by its center sample.
#[derive(Debug, Clone)]
pub struct Window {
    pub recording: Arc<Recording>,
    pub center: usize,
    pub len: usize,
    pub label: Primitive,
}

impl Window {
    pub fn start(&self) -> usize {
        self.center - self.len / 2
    }

    pub fn channels(&self) -> usize {
        self.recording.channels()
    }

    /// Copy the `C×W` feature block into `out`.
    pub fn write_block(&self, out: &mut [f32]) {
        let s = self.start();
        for c in 0..self.channels() {
            out[c * self.len..(c + 1) * self.len].copy_from_slice(&self.recording.channel(c)[s..s + self.len]);
        }
    }

    pub fn block(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.channels() * self.len];
        self.write_block(&mut out);
        out
    }

    pub fn step_labels(&self) -> &[StepLabel] {
        &self.recording.labels[self.start()..self.start() + self.len]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub windows: usize,
    pub unlabeled_centers: usize,
    /// Recordings shorter than one window.
    pub too_short: usize,
}

/// All center-labeled windows of a recording at the given stride.
pub fn extract_windows(rec: &Arc<Recording>, cfg: &WindowConfig) -> (Vec<Window>, ExtractSummary) {
    let w = cfg.samples();
    let mut summary = ExtractSummary::default();
    if rec.len() < w || w == 0 {
        summary.too_short = 1;
        return (Vec::new(), summary);
    }
    let mut out = Vec::with_capacity(cfg.count(rec.len()));
    for c in cfg.centers(rec.len()) {
        match rec.labels[c] {
            Some(label) => out.push(Window {
                recording: rec.clone(),
                center: c,
                len: w,
                label,
            }),
            None => summary.unlabeled_centers += 1,
        }
    }
    summary.windows = out.len();
    (out, summary)
}

pub fn extract_all(recs: &[Arc<Recording>], cfg: &WindowConfig) -> (Vec<Window>, ExtractSummary) {
    let mut all = Vec::new();
    let mut summary = ExtractSummary::default();
    for r in recs {
        let (w, s) = extract_windows(r, cfg);
        all.extend(w);
        summary.windows += s.windows;
        summary.unlabeled_centers += s.unlabeled_centers;
        summary.too_short += s.too_short;
    }
    (all, summary)
}

pub fn class_distribution(windows: &[Window]) -> [usize; N_PRIMITIVES] {
    let mut counts = [0; N_PRIMITIVES];
    for w in windows {
        counts[w.label.index()] += 1;
    }
    counts
}

/// Stack window blocks into a `B×C×W` buffer.
pub fn stack_blocks(windows: &[&Window]) -> Result<(Vec<usize>, Vec<f32>)> {
    let (c, w) = windows.first().map_or((0, 0), |w| (w.channels(), w.len));
    let mut data = vec![0.0; windows.len() * c * w];
    for (i, win) in windows.iter().enumerate() {
        if win.channels() != c || win.len != w {
            return Err(crate::Error::dims("stack windows", &[c, w], &[win.channels(), win.len]));
        }
        win.write_block(&mut data[i * c * w..(i + 1) * c * w]);
    }
    Ok((vec![windows.len(), c, w], data))
}
