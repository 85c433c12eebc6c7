//! Per-channel window statistics for the feature-based baselines.

use std::io::Write;
use std::path::Path;

use crate::data::Window;
use crate::error::{Error, Result};
use crate::par;

/// Statistic order within each channel block. Part of the model contract.
pub const STATISTICS: [&str; 5] = ["mean", "max", "min", "std", "rms"];
pub const N_STATS: usize = STATISTICS.len();

/// `(mean, max, min, population std, rms)` of one channel.
pub fn channel_stats(x: &[f32]) -> Result<[f32; N_STATS]> {
    if x.is_empty() {
        return Err(Error::Degenerate("statistics of an empty window".into()));
    }
    let n = x.len() as f64;
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut max = f32::NEG_INFINITY;
    let mut min = f32::INFINITY;
    for &v in x {
        let d = f64::from(v);
        sum += d;
        sq += d * d;
        max = max.max(v);
        min = min.min(v);
    }
    let mean = sum / n;
    let var = x.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let rms = (sq / n).sqrt();
    // rounding can push the mean a hair outside [min, max] for near-constant input
    let mean32 = (mean as f32).clamp(min, max);
    Ok([mean32, max, min, var.sqrt() as f32, (rms as f32).max(mean32.abs())])
}

/// Feature vector of length `5·C`, channel-major then statistic.
pub fn compute_window_features(window: &Window) -> Result<Vec<f32>> {
    block_features(&window.block(), window.len)
}

/// Features of a channel-major `C×W` block.
pub fn block_features(block: &[f32], w: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(block.len() / w.max(1) * N_STATS);
    for ch in block.chunks(w.max(1)) {
        out.extend_from_slice(&channel_stats(ch)?);
    }
    Ok(out)
}

/// Row-major `N×F` feature matrix for a set of windows.
pub fn feature_matrix(windows: &[Window]) -> Result<(Vec<f32>, usize)> {
    let f = windows.first().map_or(0, |w| w.channels() * N_STATS);
    let rows = par::map(windows.len(), |i| compute_window_features(&windows[i]));
    let mut data = Vec::with_capacity(windows.len() * f);
    for r in rows {
        data.extend(r?);
    }
    Ok((data, f))
}

/// Export: header `ch{i}_{stat}` then `label`, one row per window.
pub fn write_feature_csv(path: &Path, windows: &[Window]) -> Result<()> {
    let (data, f) = feature_matrix(windows)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let channels = f / N_STATS;
    let mut header: Vec<String> = (0..channels)
        .flat_map(|c| STATISTICS.iter().map(move |s| format!("ch{c}_{s}")))
        .collect();
    header.push("label".into());
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (row, w) in data.chunks(f.max(1)).zip(windows) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{},{}", cells.join(","), w.label).map_err(io)?;
    }
    out.flush().map_err(io)
}
