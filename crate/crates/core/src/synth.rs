//! Oracle-labeled synthetic cohorts. Each patient performs random scripts of
//! primitives; every primitive is rendered per channel from a template
//! (sinusoid + ramp around an offset), passed through a per-patient affine
//! map and Gaussian noise, and optionally through a cohort-wide per-channel
//! affine shift for held-out patients.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::recording::{PareticSide, PatientMeta, Recording, RecordingId, SAMPLE_RATE_HZ};
use crate::data::schema::ChannelSchema;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::primitive::{Primitive, N_PRIMITIVES};
use crate::rng::{self, Rng};

/// Rendering parameters of one primitive on one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelTemplate {
    pub offset: f64,
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
    /// Relative amplitude of the second harmonic.
    pub harmonic: f64,
    /// Units per second, centered on the segment midpoint.
    pub ramp: f64,
}

impl ChannelTemplate {
    /// Value at local time `tau` seconds into a segment of `duration` seconds.
    pub fn value(&self, tau: f64, duration: f64, phase: f64) -> f64 {
        let w = 2.0 * PI * self.frequency * tau + phase;
        self.offset + self.amplitude * (w.sin() + self.harmonic * (2.0 * w).sin()) + self.ramp * (tau - duration / 2.0)
    }
}

/// `templates[primitive][channel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates(pub Vec<Vec<ChannelTemplate>>);

impl Templates {
    /// RMS difference between two primitives over a canonical 2 s segment.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let n = 200;
        let (ta, tb) = (&self.0[a], &self.0[b]);
        let mut acc = 0.0;
        for (x, y) in ta.iter().zip(tb) {
            for i in 0..n {
                let tau = i as f64 / SAMPLE_RATE_HZ;
                acc += (x.value(tau, 2.0, 0.0) - y.value(tau, 2.0, 0.0)).powi(2);
            }
        }
        (acc / (n * ta.len()) as f64).sqrt()
    }

    pub fn min_distance(&self) -> f64 {
        let mut m = f64::INFINITY;
        for a in 0..N_PRIMITIVES {
            for b in a + 1..N_PRIMITIVES {
                m = m.min(self.distance(a, b));
            }
        }
        m
    }

    /// Draw templates: reach/transport share structure at different tempo,
    /// idle is flat and stabilize a slow low-amplitude sway near idle's level.
    pub fn random(channels: usize, rng: &mut Rng) -> Templates {
        let mut reach = Vec::with_capacity(channels);
        let mut transport = Vec::with_capacity(channels);
        let mut reposition = Vec::with_capacity(channels);
        let mut stabilize = Vec::with_capacity(channels);
        let mut idle = Vec::with_capacity(channels);
        for _ in 0..channels {
            let r = ChannelTemplate {
                offset: rng.gen_range(-1.0..1.0),
                amplitude: rng.gen_range(0.6..1.2),
                frequency: rng.gen_range(0.6..1.1),
                harmonic: rng.gen_range(0.0..0.3),
                ramp: rng.gen_range(-0.6..0.6),
            };
            reach.push(r);
            transport.push(ChannelTemplate {
                offset: r.offset + rng.gen_range(-0.3..0.3),
                amplitude: r.amplitude * rng.gen_range(0.8..1.2),
                frequency: r.frequency * rng.gen_range(1.6..1.9),
                harmonic: r.harmonic,
                ramp: -r.ramp,
            });
            reposition.push(ChannelTemplate {
                offset: rng.gen_range(-1.0..1.0),
                amplitude: rng.gen_range(0.6..1.2),
                frequency: rng.gen_range(2.4..3.2),
                harmonic: rng.gen_range(0.2..0.4),
                ramp: 0.0,
            });
            let level: f64 = rng.gen_range(-1.0..1.0);
            stabilize.push(ChannelTemplate {
                offset: level + rng.gen_range(-0.3..0.3),
                amplitude: rng.gen_range(0.3..0.45),
                frequency: rng.gen_range(0.3..0.5),
                harmonic: 0.0,
                ramp: 0.0,
            });
            idle.push(ChannelTemplate {
                offset: level,
                amplitude: 0.0,
                frequency: 0.0,
                harmonic: 0.0,
                ramp: 0.0,
            });
        }
        Templates(vec![reach, transport, reposition, stabilize, idle])
    }
}

/// Per-channel affine ranges; `scale` is drawn log-uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRange {
    pub scale: (f64, f64),
    pub offset: (f64, f64),
}

impl AffineRange {
    fn draw(&self, channels: usize, rng: &mut Rng) -> Vec<(f64, f64)> {
        (0..channels)
            .map(|_| {
                let (lo, hi) = (self.scale.0.ln(), self.scale.1.ln());
                let s = if hi > lo { rng.gen_range(lo..hi).exp() } else { self.scale.0 };
                let o = if self.offset.1 > self.offset.0 {
                    rng.gen_range(self.offset.0..self.offset.1)
                } else {
                    self.offset.0
                };
                (s, o)
            })
            .collect()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.scale.0 > 0.0 && self.scale.0 <= self.scale.1 && self.offset.0 <= self.offset.1) {
            return Err(Error::Config(format!("invalid {what} range {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub n_test_patients: usize,
    pub recordings_per_patient: usize,
    /// Seconds per recording.
    pub recording_s: f64,
    /// Primitive segment durations in seconds.
    pub duration_s: (f64, f64),
    pub schema: ChannelSchema,
    /// Explicit templates; drawn from the seed when absent.
    pub templates: Option<Templates>,
    pub template_distance_floor: f64,
    pub idiosyncrasy: Option<AffineRange>,
    pub noise_std: f64,
    /// Cohort-wide per-channel affine applied to held-out patients.
    pub test_shift: Option<AffineRange>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 20,
            n_test_patients: 5,
            recordings_per_patient: 3,
            recording_s: 20.0,
            duration_s: (0.8, 3.0),
            schema: ChannelSchema::compact(),
            templates: None,
            template_distance_floor: 0.3,
            idiosyncrasy: Some(AffineRange {
                scale: (0.8, 1.25),
                offset: (-0.5, 0.5),
            }),
            noise_std: 0.05,
            test_shift: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Default held-out shift: scale in [0.5, 2], offset in [-1, 1].
    pub fn with_default_shift(mut self) -> Self {
        self.test_shift = Some(AffineRange {
            scale: (0.5, 2.0),
            offset: (-1.0, 1.0),
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let min_d = 2.0 / SAMPLE_RATE_HZ;
        if self.duration_s.0 < min_d || self.duration_s.1 < self.duration_s.0 {
            return Err(Error::Config(format!(
                "duration range {:?} must satisfy {min_d} <= lo <= hi",
                self.duration_s
            )));
        }
        if self.n_patients + self.n_test_patients == 0 || self.recordings_per_patient == 0 {
            return Err(Error::Config("need at least one patient and recording".into()));
        }
        if self.recording_s * SAMPLE_RATE_HZ < 2.0 {
            return Err(Error::Config("recordings must span at least two samples".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std {} invalid", self.noise_std)));
        }
        if let Some(a) = &self.idiosyncrasy {
            a.validate("idiosyncrasy")?;
        }
        if let Some(a) = &self.test_shift {
            a.validate("test shift")?;
        }
        self.schema.validate(None)?;
        if let Some(t) = &self.templates {
            let c = self.schema.sensor_count();
            if t.0.len() != N_PRIMITIVES || t.0.iter().any(|row| row.len() != c) {
                return Err(Error::Config(format!(
                    "templates must be {N_PRIMITIVES}×{c} (primitives × sensor channels)"
                )));
            }
        }
        Ok(())
    }

    /// Explicit templates, or templates drawn from the seed subject to the
    /// distance floor.
    pub fn resolve_templates(&self) -> Result<Templates> {
        self.validate()?;
        let t = match &self.templates {
            Some(t) => t.clone(),
            None => {
                let c = self.schema.sensor_count();
                let mut rng = rng::stream(self.seed, "templates", 0);
                let mut tries = 0;
                loop {
                    let t = Templates::random(c, &mut rng);
                    if t.min_distance() >= self.template_distance_floor {
                        break t;
                    }
                    tries += 1;
                    if tries == 1000 {
                        return Err(Error::Config(format!(
                            "no templates above distance floor {} after 1000 draws",
                            self.template_distance_floor
                        )));
                    }
                }
            }
        };
        let d = t.min_distance();
        if d < self.template_distance_floor {
            return Err(Error::Config(format!(
                "template distance {d:.4} below floor {}",
                self.template_distance_floor
            )));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub primitive: Primitive,
    pub samples: usize,
    pub phase: f64,
}

#[derive(Debug, Clone)]
pub struct SynthPatient {
    pub meta: PatientMeta,
    pub held_out: bool,
    pub recordings: Vec<Recording>,
    pub scripts: Vec<Vec<Segment>>,
}

pub fn patient_id(index: usize) -> String {
    format!("p{index:03}")
}

fn draw_script(cfg: &SynthConfig, total: usize, rng: &mut Rng) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut used = 0;
    let mut prev: Option<Primitive> = None;
    while used < total {
        let p = loop {
            let p = Primitive::from_index(rng.gen_range(0..N_PRIMITIVES)).expect("index in range");
            if Some(p) != prev {
                break p;
            }
        };
        let d = if cfg.duration_s.1 > cfg.duration_s.0 {
            rng.gen_range(cfg.duration_s.0..cfg.duration_s.1)
        } else {
            cfg.duration_s.0
        };
        let mut samples = ((d * SAMPLE_RATE_HZ).round() as usize).max(2).min(total - used);
        // never leave a single trailing sample as its own segment
        if total - used - samples == 1 {
            samples += 1;
        }
        out.push(Segment {
            primitive: p,
            samples,
            phase: rng.gen_range(0.0..2.0 * PI),
        });
        used += samples;
        prev = Some(p);
    }
    out
}

/// Render a script without idiosyncrasy or noise, channel-major.
pub fn render_script(templates: &Templates, script: &[Segment], channels: usize) -> Vec<f64> {
    let total: usize = script.iter().map(|s| s.samples).sum();
    let mut out = vec![0.0; channels * total];
    let mut start = 0;
    for seg in script {
        let dur = seg.samples as f64 / SAMPLE_RATE_HZ;
        for c in 0..channels {
            let tpl = &templates.0[seg.primitive.index()][c];
            for i in 0..seg.samples {
                out[c * total + start + i] = tpl.value(i as f64 / SAMPLE_RATE_HZ, dur, seg.phase);
            }
        }
        start += seg.samples;
    }
    out
}

/// Cohort shift for held-out patients, drawn from its own stream.
pub fn cohort_shift(cfg: &SynthConfig) -> Option<Vec<(f64, f64)>> {
    cfg.test_shift
        .map(|r| r.draw(cfg.schema.sensor_count(), &mut rng::stream(cfg.seed, "shift", 0)))
}

/// Patients `0..n_patients` form the training cohort, the rest are held out.
pub fn generate_patient(cfg: &SynthConfig, templates: &Templates, index: usize) -> Result<SynthPatient> {
    let c = cfg.schema.sensor_count();
    if templates.0.len() != N_PRIMITIVES || templates.0.iter().any(|r| r.len() != c) {
        return Err(Error::Config(format!("templates do not match {c} sensor channels")));
    }
    let held_out = index >= cfg.n_patients;
    let mut rng = rng::stream(cfg.seed, "patient", index as u64);
    let side = if rng.gen_bool(0.5) { PareticSide::Right } else { PareticSide::Left };
    let fma = rng.gen_range(10..=65u8);
    let meta = PatientMeta::new(patient_id(index), side, fma)?;
    let affine = cfg.idiosyncrasy.map(|a| a.draw(c, &mut rng));
    let shift = if held_out { cohort_shift(cfg) } else { None };
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let total = (cfg.recording_s * SAMPLE_RATE_HZ).round() as usize;
    let schema = Arc::new(cfg.schema.clone());
    let mut recordings = Vec::new();
    let mut scripts = Vec::new();
    for r in 0..cfg.recordings_per_patient {
        let script = draw_script(cfg, total, &mut rng);
        let clean = render_script(templates, &script, c);
        let values: Vec<f32> = clean
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let ch = k / total;
                let mut x = v;
                if let Some(a) = &affine {
                    x = a[ch].0 * x + a[ch].1;
                }
                if cfg.noise_std > 0.0 {
                    x += noise.sample(&mut rng);
                }
                if let Some(s) = &shift {
                    x = s[ch].0 * x + s[ch].1;
                }
                x as f32
            })
            .collect();
        let labels = script
            .iter()
            .flat_map(|s| std::iter::repeat(Some(s.primitive)).take(s.samples))
            .collect();
        let id = RecordingId {
            patient_id: meta.patient_id.clone(),
            activity_id: format!("act{r}"),
            repetition_index: r as u32,
        };
        recordings.push(Recording::from_channels(id, schema.clone(), values, labels)?);
        scripts.push(script);
    }
    Ok(SynthPatient {
        meta,
        held_out,
        recordings,
        scripts,
    })
}

/// Time share of each primitive, from the scripts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub patients: usize,
    pub recordings: usize,
    pub samples: [u64; N_PRIMITIVES],
    pub shares: [f64; N_PRIMITIVES],
}

impl CohortSummary {
    fn from_patients<'a>(ps: impl Iterator<Item = &'a SynthPatient>) -> Self {
        let mut s = CohortSummary::default();
        for p in ps {
            s.patients += 1;
            s.recordings += p.recordings.len();
            for seg in p.scripts.iter().flatten() {
                s.samples[seg.primitive.index()] += seg.samples as u64;
            }
        }
        let total: u64 = s.samples.iter().sum();
        if total > 0 {
            s.shares = s.samples.map(|n| n as f64 / total as f64);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub seed: u64,
    pub templates: Templates,
    pub min_template_distance: f64,
    pub test_shift: Option<Vec<(f64, f64)>>,
    pub train: CohortSummary,
    pub test: CohortSummary,
}

pub struct SynthData {
    pub train: Dataset,
    pub test: Dataset,
    pub summary: SynthSummary,
}

fn to_dataset(schema: &Arc<ChannelSchema>, ps: &[&SynthPatient]) -> Dataset {
    Dataset {
        schema: schema.clone(),
        patients: ps.iter().map(|p| p.meta.clone()).collect(),
        recordings: ps
            .iter()
            .flat_map(|p| p.recordings.iter().cloned().map(Arc::new))
            .collect(),
    }
}

/// Generate both cohorts in memory. Patients are generated in parallel.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    let templates = cfg.resolve_templates()?;
    let n = cfg.n_patients + cfg.n_test_patients;
    let patients = par::map(n, |i| generate_patient(cfg, &templates, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let schema = Arc::new(cfg.schema.clone());
    let (test, train): (Vec<&SynthPatient>, Vec<&SynthPatient>) = patients.iter().partition(|p| p.held_out);
    let summary = SynthSummary {
        seed: cfg.seed,
        min_template_distance: templates.min_distance(),
        templates,
        test_shift: cohort_shift(cfg),
        train: CohortSummary::from_patients(train.iter().copied()),
        test: CohortSummary::from_patients(test.iter().copied()),
    };
    Ok(SynthData {
        train: to_dataset(&schema, &train),
        test: to_dataset(&schema, &test),
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPaths {
    pub train_manifest: PathBuf,
    pub test_manifest: PathBuf,
    pub summary: PathBuf,
}

/// Write `train_manifest.json`, `test_manifest.json`, their recordings and
/// patient tables, and `summary.json` under `dir`.
pub fn generate_dataset(cfg: &SynthConfig, dir: &Path) -> Result<SynthPaths> {
    let data = generate(cfg)?;
    let train_manifest = data.train.save(dir, "train_manifest.json")?;
    let test_manifest = data.test.save(dir, "test_manifest.json")?;
    let summary = dir.join("summary.json");
    std::fs::write(&summary, serde_json::to_string_pretty(&data.summary)?).map_err(|e| Error::io(&summary, e))?;
    Ok(SynthPaths {
        train_manifest,
        test_manifest,
        summary,
    })
}
