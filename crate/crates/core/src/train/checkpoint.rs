use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{Family, Model, ModelSpec};
use crate::data::schema::ChannelSchema;
use crate::data::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::STATISTICS;
use crate::forest::{DecisionTree, ForestConfig, Node, RandomForest};
use crate::nn::{Mode, Tensor};
use crate::primitive::N_PRIMITIVES;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const PARAMS: &str = "params.bin";
const FOREST_TAG: &str = "forest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into `params.bin`, in 32-bit elements.
    pub offset: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    /// Preprocessing the model was trained with.
    pub pipeline: Option<PipelineConfig>,
    pub fold: Option<usize>,
    pub best_epoch: Option<usize>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestHeader {
    pub config: ForestConfig,
    pub n_features: usize,
    pub n_trees: usize,
    pub oob_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub family: String,
    pub spec: Option<ModelSpec>,
    pub forest: Option<ForestHeader>,
    pub feature_hash: String,
    pub schema: ChannelSchema,
    pub arrays: Vec<ArrayEntry>,
    pub meta: TrainMeta,
}

pub enum Trained {
    Neural(Model<f32>),
    Forest(RandomForest),
}

impl Trained {
    pub fn family_tag(&self) -> String {
        match self {
            Trained::Neural(m) => family_name(m.spec.family).to_string(),
            Trained::Forest(_) => FOREST_TAG.to_string(),
        }
    }

    pub fn uses_features(&self) -> bool {
        match self {
            Trained::Neural(m) => m.spec.uses_features(),
            Trained::Forest(_) => true,
        }
    }
}

pub struct Checkpoint {
    pub model: Trained,
    pub feature_hash: String,
    pub schema: ChannelSchema,
    pub meta: TrainMeta,
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Fcnn => "fcnn",
        Family::Lstm => "lstm",
        Family::Cnn => "cnn",
    }
}

/// Layout hash a model trained on `schema` records: channel order, plus the
/// statistic order for models fed with window statistics.
pub fn layout_hash(schema: &ChannelSchema, uses_features: bool) -> String {
    if uses_features {
        schema.feature_order_hash(&STATISTICS)
    } else {
        schema.feature_order_hash(&[])
    }
}

impl Checkpoint {
    pub fn new(model: Trained, schema: &ChannelSchema, meta: TrainMeta) -> Self {
        let feature_hash = layout_hash(schema, model.uses_features());
        Checkpoint {
            model,
            feature_hash,
            schema: schema.clone(),
            meta,
        }
    }

    /// Reject data whose channel layout differs from the training layout.
    pub fn check_compatible(&self, schema: &ChannelSchema) -> Result<()> {
        let data = layout_hash(schema, self.model.uses_features());
        if data != self.feature_hash {
            return Err(Error::Incompatible {
                checkpoint: self.feature_hash.clone(),
                data,
            });
        }
        Ok(())
    }

    pub fn into_neural(self) -> Result<Model<f32>> {
        match self.model {
            Trained::Neural(m) => Ok(m),
            Trained::Forest(_) => Err(Error::FamilyMismatch {
                expected: "neural network".into(),
                found: FOREST_TAG.into(),
            }),
        }
    }

    pub fn into_forest(self) -> Result<RandomForest> {
        match self.model {
            Trained::Forest(f) => Ok(f),
            Trained::Neural(m) => Err(Error::FamilyMismatch {
                expected: FOREST_TAG.into(),
                found: family_name(m.spec.family).into(),
            }),
        }
    }
}

fn forest_arrays(f: &RandomForest) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut out = Vec::new();
    for (i, t) in f.trees.iter().enumerate() {
        let n = t.nodes.len();
        if n >= 1 << 24 {
            return Err(Error::Format(format!("tree {i} has too many nodes to store exactly")));
        }
        let feature = t.nodes.iter().map(|nd| nd.feature as f32).collect();
        let threshold = t.nodes.iter().map(|nd| nd.threshold).collect();
        let children = t.nodes.iter().flat_map(|nd| [nd.left as f32, nd.right as f32]).collect();
        let counts = t.nodes.iter().flat_map(|nd| nd.counts).collect();
        out.push((format!("tree{i}.feature"), Tensor::from_vec(&[n], feature)?));
        out.push((format!("tree{i}.threshold"), Tensor::from_vec(&[n], threshold)?));
        out.push((format!("tree{i}.children"), Tensor::from_vec(&[n, 2], children)?));
        out.push((format!("tree{i}.counts"), Tensor::from_vec(&[n, N_PRIMITIVES], counts)?));
    }
    Ok(out)
}

fn forest_from_arrays(h: &ForestHeader, arrays: &[(String, Tensor<f32>)]) -> Result<RandomForest> {
    if arrays.len() != 4 * h.n_trees {
        return Err(Error::Format(format!(
            "forest with {} trees needs {} arrays, found {}",
            h.n_trees,
            4 * h.n_trees,
            arrays.len()
        )));
    }
    let mut trees = Vec::with_capacity(h.n_trees);
    for (i, a) in arrays.chunks(4).enumerate() {
        let expect = ["feature", "threshold", "children", "counts"].map(|s| format!("tree{i}.{s}"));
        if a.iter().zip(&expect).any(|((name, _), e)| name != e) {
            return Err(Error::Format(format!("unexpected array order in tree {i}")));
        }
        let n = a[0].1.len();
        if a[1].1.len() != n || a[2].1.len() != 2 * n || a[3].1.len() != N_PRIMITIVES * n {
            return Err(Error::Format(format!("inconsistent array lengths in tree {i}")));
        }
        let nodes = (0..n)
            .map(|k| {
                let mut counts = [0.0; N_PRIMITIVES];
                counts.copy_from_slice(&a[3].1.data()[k * N_PRIMITIVES..(k + 1) * N_PRIMITIVES]);
                Node {
                    feature: a[0].1.data()[k] as i32,
                    threshold: a[1].1.data()[k],
                    left: a[2].1.data()[2 * k] as u32,
                    right: a[2].1.data()[2 * k + 1] as u32,
                    counts,
                }
            })
            .collect();
        trees.push(DecisionTree {
            nodes,
            n_features: h.n_features,
        });
    }
    Ok(RandomForest {
        config: h.config.clone(),
        trees,
        n_features: h.n_features,
        oob_accuracy: h.oob_accuracy,
    })
}

pub fn save_checkpoint(dir: &Path, ckpt: &mut Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (spec, forest, arrays) = match &mut ckpt.model {
        Trained::Neural(m) => (Some(m.spec.clone()), None, m.graph.export()),
        Trained::Forest(f) => (
            None,
            Some(ForestHeader {
                config: f.config.clone(),
                n_features: f.n_features,
                n_trees: f.trees.len(),
                oob_accuracy: f.oob_accuracy,
            }),
            forest_arrays(f)?,
        ),
    };
    let mut bytes = Vec::new();
    let mut index = Vec::with_capacity(arrays.len());
    let mut offset = 0;
    for (name, t) in &arrays {
        index.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        family: ckpt.model.family_tag(),
        spec,
        forest,
        feature_hash: ckpt.feature_hash.clone(),
        schema: ckpt.schema.clone(),
        arrays: index,
        meta: ckpt.meta.clone(),
    };
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    let ppath = dir.join(PARAMS);
    fs::write(&ppath, bytes).map_err(|e| Error::io(&ppath, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(serde_json::from_value(raw)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let ppath = dir.join(PARAMS);
    let bytes = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{} is not a whole number of floats", ppath.display())));
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let mut arrays = Vec::with_capacity(manifest.arrays.len());
    for a in &manifest.arrays {
        let n: usize = a.shape.iter().product();
        let end = a.offset.checked_add(n).filter(|&e| e <= values.len()).ok_or_else(|| {
            Error::Format(format!(
                "params.bin truncated: array {} needs elements {}..{}, file has {}",
                a.name,
                a.offset,
                a.offset + n,
                values.len()
            ))
        })?;
        arrays.push((a.name.clone(), Tensor::from_vec(&a.shape, values[a.offset..end].to_vec())?));
    }
    let expected: usize = manifest.arrays.iter().map(|a| a.shape.iter().product::<usize>()).sum();
    if values.len() != expected {
        return Err(Error::Format(format!(
            "params.bin holds {} floats, manifest describes {expected}",
            values.len()
        )));
    }
    let model = match (&manifest.spec, &manifest.forest) {
        (Some(spec), None) => {
            if family_name(spec.family) != manifest.family {
                return Err(Error::FamilyMismatch {
                    expected: manifest.family.clone(),
                    found: family_name(spec.family).into(),
                });
            }
            let mut m = Model::<f32>::build(spec, 0)?;
            m.graph.import(&arrays)?;
            m.set_mode(Mode::Eval);
            Trained::Neural(m)
        }
        (None, Some(h)) if manifest.family == FOREST_TAG => Trained::Forest(forest_from_arrays(h, &arrays)?),
        _ => {
            return Err(Error::Format(format!(
                "manifest for family {} must carry exactly one of spec/forest",
                manifest.family
            )))
        }
    };
    Ok(Checkpoint {
        model,
        feature_hash: manifest.feature_hash,
        schema: manifest.schema,
        meta: manifest.meta,
    })
}

/// Load a checkpoint that must hold a neural network.
pub fn load_neural(dir: &Path) -> Result<Model<f32>> {
    load_checkpoint(dir)?.into_neural()
}
