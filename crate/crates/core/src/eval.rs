//! Metrics, probability-averaging ensembles and the analysis tables:
//! confusion matrices, probability letter values and window composition.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::window::Window;
use crate::error::{Error, Result};
use crate::primitive::{Primitive, StepLabel, N_PRIMITIVES};

pub type Proba = [f64; N_PRIMITIVES];

fn check_pairs(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::dims("metric inputs", &[preds.len()], &[labels.len()]));
    }
    for (index, &label) in preds.iter().chain(labels).enumerate() {
        if label >= N_PRIMITIVES {
            return Err(Error::Label {
                index: index % preds.len().max(1),
                label,
            });
        }
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_pairs(preds, labels)?;
    if labels.is_empty() {
        return Err(Error::Degenerate("accuracy of zero predictions".into()));
    }
    let c = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(c as f64 / labels.len() as f64)
}

/// `c_i / n_i` for each primitive, `None` where `n_i = 0`.
pub fn per_primitive_accuracy(preds: &[usize], labels: &[usize]) -> Result<[Option<f64>; N_PRIMITIVES]> {
    let cm = ConfusionMatrix::from_predictions(preds, labels)?;
    Ok(cm.per_primitive_accuracy())
}

/// Mean of per-primitive accuracies over primitives present in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    ConfusionMatrix::from_predictions(preds, labels)?.balanced_accuracy()
}

/// Rows are true primitives, columns predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_PRIMITIVES]; N_PRIMITIVES],
}

impl ConfusionMatrix {
    pub fn from_predictions(preds: &[usize], labels: &[usize]) -> Result<Self> {
        check_pairs(preds, labels)?;
        let mut counts = [[0; N_PRIMITIVES]; N_PRIMITIVES];
        for (&p, &l) in preds.iter().zip(labels) {
            counts[l][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn support(&self) -> [u64; N_PRIMITIVES] {
        self.counts.map(|r| r.iter().sum())
    }

    pub fn total(&self) -> u64 {
        self.support().iter().sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::Degenerate("accuracy of zero predictions".into()));
        }
        let diag: u64 = (0..N_PRIMITIVES).map(|i| self.counts[i][i]).sum();
        Ok(diag as f64 / n as f64)
    }

    pub fn per_primitive_accuracy(&self) -> [Option<f64>; N_PRIMITIVES] {
        let support = self.support();
        std::array::from_fn(|i| (support[i] > 0).then(|| self.counts[i][i] as f64 / support[i] as f64))
    }

    pub fn balanced_accuracy(&self) -> Result<f64> {
        let present: Vec<f64> = self.per_primitive_accuracy().into_iter().flatten().collect();
        if present.is_empty() {
            return Err(Error::Degenerate("balanced accuracy of zero predictions".into()));
        }
        Ok(present.iter().sum::<f64>() / present.len() as f64)
    }

    /// Row-normalized fractions; empty rows stay all-zero.
    pub fn normalized(&self) -> [[f64; N_PRIMITIVES]; N_PRIMITIVES] {
        let support = self.support();
        std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                if support[i] == 0 {
                    0.0
                } else {
                    self.counts[i][j] as f64 / support[i] as f64
                }
            })
        })
    }
}

/// Entry-wise arithmetic mean of member probabilities.
pub fn ensemble_proba(members: &[Vec<Proba>]) -> Result<Vec<Proba>> {
    let first = members
        .first()
        .ok_or_else(|| Error::Contract("ensemble needs at least one member".into()))?;
    if let Some((k, m)) = members.iter().enumerate().find(|(_, m)| m.len() != first.len()) {
        return Err(Error::Contract(format!(
            "ensemble member {k} has {} rows, member 0 has {}",
            m.len(),
            first.len()
        )));
    }
    let k = members.len() as f64;
    Ok((0..first.len())
        .map(|r| {
            let mut acc = [0.0; N_PRIMITIVES];
            for m in members {
                acc.iter_mut().zip(&m[r]).for_each(|(a, v)| *a += v);
            }
            acc.map(|v| v / k)
        })
        .collect())
}

pub fn argmax(p: &Proba) -> usize {
    let mut best = 0;
    for i in 1..N_PRIMITIVES {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

pub fn predictions(probas: &[Proba]) -> Vec<usize> {
    probas.iter().map(argmax).collect()
}

/// Quantile of sorted data by linear interpolation between order
/// statistics at position `(n-1)·q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64))
}

pub const LETTER_LEVELS: [f64; 7] = [0.0625, 0.125, 0.25, 0.5, 0.75, 0.875, 0.9375];
/// Median ground-truth probability at or above this marks a confident primitive.
pub const CONFIDENT_MEDIAN: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterCell {
    pub true_label: Primitive,
    pub scored: Primitive,
    pub n: usize,
    /// Quantiles at [`LETTER_LEVELS`]; empty when `n = 0`.
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterValues {
    /// 25 cells, row-major over (true primitive, scored primitive).
    pub cells: Vec<LetterCell>,
    /// Per true primitive: whether the median ground-truth probability is ≥ 0.6.
    pub confident: [Option<bool>; N_PRIMITIVES],
}

impl LetterValues {
    pub fn cell(&self, truth: usize, scored: usize) -> &LetterCell {
        &self.cells[truth * N_PRIMITIVES + scored]
    }
}

pub fn probability_letter_values(probas: &[Proba], labels: &[usize]) -> Result<LetterValues> {
    if probas.len() != labels.len() {
        return Err(Error::dims("letter values", &[probas.len()], &[labels.len()]));
    }
    let mut cells = Vec::with_capacity(N_PRIMITIVES * N_PRIMITIVES);
    let mut confident = [None; N_PRIMITIVES];
    for t in Primitive::ALL {
        for s in Primitive::ALL {
            let mut v: Vec<f64> = probas
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == t.index())
                .map(|(p, _)| p[s.index()])
                .collect();
            v.sort_by(f64::total_cmp);
            let quantiles: Vec<f64> = LETTER_LEVELS.iter().filter_map(|&q| quantile_sorted(&v, q)).collect();
            if s == t && !v.is_empty() {
                confident[t.index()] = Some(quantiles[3] >= CONFIDENT_MEDIAN);
            }
            cells.push(LetterCell {
                true_label: t,
                scored: s,
                n: v.len(),
                quantiles,
            });
        }
    }
    Ok(LetterValues { cells, confident })
}

pub const COMPOSITION_BINS: usize = 10;

fn bin_of(count: usize, len: usize) -> usize {
    (count * COMPOSITION_BINS / len).min(COMPOSITION_BINS - 1)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    /// Ground-truth share of correctly classified windows, 10% bins.
    pub correct_truth: [u64; COMPOSITION_BINS],
    /// Ground-truth share of misclassified windows.
    pub incorrect_truth: [u64; COMPOSITION_BINS],
    /// Predicted-primitive share of misclassified windows.
    pub incorrect_predicted: [u64; COMPOSITION_BINS],
    pub n_correct: u64,
    pub n_incorrect: u64,
    /// Correct windows that contain any timestep not of the ground truth.
    pub correct_with_other: f64,
    /// Misclassified windows in which the predicted primitive never occurs.
    pub incorrect_without_predicted: f64,
}

/// Composition histograms from per-window timestep labels, center labels and
/// predictions.
pub fn window_composition(steps: &[&[StepLabel]], labels: &[usize], preds: &[usize]) -> Result<Composition> {
    check_pairs(preds, labels)?;
    if steps.len() != labels.len() {
        return Err(Error::dims("window composition", &[steps.len()], &[labels.len()]));
    }
    let mut c = Composition::default();
    let (mut with_other, mut without_pred) = (0u64, 0u64);
    for (i, ((s, &l), &p)) in steps.iter().zip(labels).zip(preds).enumerate() {
        if s.is_empty() {
            return Err(Error::Contract(format!("window {i} has no timestep labels")));
        }
        let share = |k: usize| s.iter().filter(|x| x.map(|q| q.index()) == Some(k)).count();
        let truth = share(l);
        if p == l {
            c.n_correct += 1;
            c.correct_truth[bin_of(truth, s.len())] += 1;
            with_other += u64::from(truth < s.len());
        } else {
            c.n_incorrect += 1;
            c.incorrect_truth[bin_of(truth, s.len())] += 1;
            let pred = share(p);
            c.incorrect_predicted[bin_of(pred, s.len())] += 1;
            without_pred += u64::from(pred == 0);
        }
    }
    c.correct_with_other = ratio(with_other, c.n_correct);
    c.incorrect_without_predicted = ratio(without_pred, c.n_incorrect);
    Ok(c)
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn window_composition_for(windows: &[Window], preds: &[usize]) -> Result<Composition> {
    let steps: Vec<&[StepLabel]> = windows.iter().map(|w| w.step_labels()).collect();
    let labels: Vec<usize> = windows.iter().map(|w| w.label.index()).collect();
    window_composition(&steps, &labels, preds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub per_primitive: [Option<f64>; N_PRIMITIVES],
    pub support: [u64; N_PRIMITIVES],
    pub confusion: ConfusionMatrix,
    pub confusion_normalized: [[f64; N_PRIMITIVES]; N_PRIMITIVES],
}

impl MetricsReport {
    pub fn new(preds: &[usize], labels: &[usize]) -> Result<Self> {
        let cm = ConfusionMatrix::from_predictions(preds, labels)?;
        Ok(MetricsReport {
            n: cm.total(),
            accuracy: cm.accuracy()?,
            balanced_accuracy: cm.balanced_accuracy()?,
            per_primitive: cm.per_primitive_accuracy(),
            support: cm.support(),
            confusion_normalized: cm.normalized(),
            confusion: cm,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "windows            {}", self.n);
        let _ = writeln!(s, "accuracy           {:.4}", self.accuracy);
        let _ = writeln!(s, "balanced accuracy  {:.4}", self.balanced_accuracy);
        let _ = writeln!(s);
        let _ = write!(s, "{:<12}{:>8}{:>10}", "true\\pred", "n", "acc");
        for p in Primitive::ALL {
            let _ = write!(s, "{:>12}", p.name());
        }
        let _ = writeln!(s);
        for t in Primitive::ALL {
            let i = t.index();
            let acc = self.per_primitive[i].map_or("-".to_string(), |a| format!("{a:.4}"));
            let _ = write!(s, "{:<12}{:>8}{:>10}", t.name(), self.support[i], acc);
            for j in 0..N_PRIMITIVES {
                let _ = write!(s, "{:>12.4}", self.confusion_normalized[i][j]);
            }
            let _ = writeln!(s);
        }
        s
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_confusion_csv(path: &Path, cm: &ConfusionMatrix) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["true", "predicted", "count", "fraction"])?;
    let norm = cm.normalized();
    for t in Primitive::ALL {
        for p in Primitive::ALL {
            w.write_record([
                t.name().to_string(),
                p.name().to_string(),
                cm.counts[t.index()][p.index()].to_string(),
                norm[t.index()][p.index()].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_letter_values_csv(path: &Path, lv: &LetterValues) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["true".to_string(), "scored".to_string(), "n".to_string()];
    header.extend(LETTER_LEVELS.iter().map(|q| format!("q{q}")));
    w.write_record(&header)?;
    for c in &lv.cells {
        let mut row = vec![c.true_label.name().to_string(), c.scored.name().to_string(), c.n.to_string()];
        row.extend((0..LETTER_LEVELS.len()).map(|k| c.quantiles.get(k).map_or(String::new(), |q| q.to_string())));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_composition_csv(path: &Path, c: &Composition) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["bin_low_pct", "bin_high_pct", "correct_truth", "incorrect_truth", "incorrect_predicted"])?;
    for b in 0..COMPOSITION_BINS {
        w.write_record([
            (b * 10).to_string(),
            (b * 10 + 10).to_string(),
            c.correct_truth[b].to_string(),
            c.incorrect_truth[b].to_string(),
            c.incorrect_predicted[b].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Accuracy of one test patient, the data behind accuracy-vs-impairment plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScore {
    pub patient_id: String,
    pub fma_score: u32,
    pub impairment: String,
    pub paretic_side: String,
    pub n_windows: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

pub fn write_per_patient_csv(path: &Path, rows: &[PatientScore]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "patient_id",
            "fma_score",
            "impairment",
            "paretic_side",
            "n_windows",
            "accuracy",
            "balanced_accuracy",
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
