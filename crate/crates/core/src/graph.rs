//! Feed-forward network definitions and shape checking.
//!
//! A graph manifest (`graph.json`) lists layers in execution order. Each
//! layer consumes the previous layer's output; `add` layers additionally
//! read the output of an earlier layer by name.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::{load_archive, TensorSet};
use crate::error::{Error, Result};
use crate::ops::{Activation, ConvGeometry, PoolParams};
use crate::tensor::Tensor;

pub const GRAPH_VERSION: &str = "approxnet-graph/1";
pub const GRAPH_FILE: &str = "graph.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        geometry: ConvGeometry,
        weight: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<String>,
    },
    Dense {
        weight: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<String>,
    },
    BatchNorm {
        gamma: String,
        beta: String,
        mean: String,
        var: String,
        eps: f32,
    },
    Pool {
        params: PoolParams,
    },
    Activation {
        activation: Activation,
    },
    /// Adds the output of the named earlier layer to this layer's input.
    Add {
        with: String,
    },
    Softmax,
    Flatten,
}

impl LayerKind {
    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. })
    }

    fn weight_refs(&self) -> Vec<&str> {
        match self {
            LayerKind::Conv2d { weight, bias, .. } | LayerKind::Dense { weight, bias } => {
                std::iter::once(weight.as_str()).chain(bias.as_deref()).collect()
            }
            LayerKind::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                ..
            } => vec![gamma, beta, mean, var],
            _ => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphManifest {
    pub format_version: String,
    /// Per-sample input dims, leading extent 1.
    pub input_dims: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl GraphManifest {
    pub fn new(input_dims: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        GraphManifest {
            format_version: GRAPH_VERSION.to_string(),
            input_dims,
            layers,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: GraphManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        if m.format_version != GRAPH_VERSION {
            return Err(Error::Version {
                found: m.format_version,
                expected: GRAPH_VERSION.to_string(),
            });
        }
        Ok(m)
    }
}

/// A shape-checked network with its weights.
#[derive(Clone, Debug)]
pub struct NetworkGraph {
    manifest: GraphManifest,
    weights: TensorSet,
    shapes: Vec<Vec<usize>>,
    /// Layers whose outputs a later `add` reads.
    retained: BTreeSet<usize>,
    index: HashMap<String, usize>,
}

impl NetworkGraph {
    pub fn layers(&self) -> &[LayerSpec] {
        &self.manifest.layers
    }

    pub fn manifest(&self) -> &GraphManifest {
        &self.manifest
    }

    pub fn weights(&self) -> &TensorSet {
        &self.weights
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.manifest.input_dims
    }

    /// Output dims of layer `i` for a single sample.
    pub fn output_dims(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn classes(&self) -> usize {
        *self.shapes.last().and_then(|s| s.last()).unwrap_or(&1)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn weight(&self, name: &str) -> &Tensor {
        &self.weights[name]
    }

    pub(crate) fn is_retained(&self, i: usize) -> bool {
        self.retained.contains(&i)
    }

    /// Loads `graph.json` and the weight archive from one model directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = GraphManifest::load(dir.join(GRAPH_FILE))?;
        let weights = load_archive(dir)?;
        build_graph(manifest, weights)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        crate::archive::save_archive(&self.weights, dir)?;
        self.manifest.save(dir.join(GRAPH_FILE))
    }
}

pub fn build_graph(manifest: GraphManifest, weights: TensorSet) -> Result<NetworkGraph> {
    if manifest.layers.is_empty() {
        return Err(Error::Graph("graph has no layers".into()));
    }
    let mut index = HashMap::new();
    for (i, l) in manifest.layers.iter().enumerate() {
        if index.insert(l.name.clone(), i).is_some() {
            return Err(Error::Graph(format!("duplicate layer name `{}`", l.name)));
        }
        for w in l.kind.weight_refs() {
            if !weights.contains_key(w) {
                return Err(Error::Graph(format!(
                    "layer `{}` references missing weight `{w}`",
                    l.name
                )));
            }
        }
    }
    if manifest.input_dims.is_empty() || manifest.input_dims[0] != 1 {
        return Err(Error::Graph(format!(
            "input dims {:?} must start with a batch extent of 1",
            manifest.input_dims
        )));
    }

    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(manifest.layers.len());
    let mut retained = BTreeSet::new();
    let n_layers = manifest.layers.len();
    for (i, layer) in manifest.layers.iter().enumerate() {
        let (prev_name, input) = if i == 0 {
            ("input", manifest.input_dims.as_slice())
        } else {
            (manifest.layers[i - 1].name.as_str(), shapes[i - 1].as_slice())
        };
        let mismatch = |why: String| {
            Error::Graph(format!(
                "output {input:?} of `{prev_name}` does not fit layer `{}`: {why}",
                layer.name
            ))
        };
        let out = match &layer.kind {
            LayerKind::Conv2d {
                geometry,
                weight,
                bias,
            } => {
                let w = weights[weight].dims();
                if let Some(b) = bias {
                    if weights[b].len() != w[0] {
                        return Err(Error::Graph(format!(
                            "layer `{}` bias `{b}` has {} entries for {} filters",
                            layer.name,
                            weights[b].len(),
                            w[0]
                        )));
                    }
                }
                geometry
                    .output_dims(input, w)
                    .map_err(|e| mismatch(e.to_string()))?
                    .to_vec()
            }
            LayerKind::Dense { weight, bias } => {
                let w = weights[weight].dims();
                let &[g, f] = w else {
                    return Err(Error::Graph(format!(
                        "layer `{}` weight `{weight}` must be [G, F], got {w:?}",
                        layer.name
                    )));
                };
                let features: usize = input[1..].iter().product();
                if features != f {
                    return Err(mismatch(format!("expects {f} features, gets {features}")));
                }
                if let Some(b) = bias {
                    if weights[b].len() != g {
                        return Err(Error::Graph(format!(
                            "layer `{}` bias `{b}` has {} entries for {g} outputs",
                            layer.name,
                            weights[b].len()
                        )));
                    }
                }
                vec![input[0], g]
            }
            LayerKind::BatchNorm {
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let c = input.get(1).copied().unwrap_or(input[0]);
                for p in [gamma, beta, mean, var] {
                    if weights[p].len() != c {
                        return Err(mismatch(format!(
                            "`{p}` has {} entries for {c} channels",
                            weights[p].len()
                        )));
                    }
                }
                if !(*eps > 0.0) {
                    return Err(Error::Graph(format!(
                        "layer `{}` eps must be > 0",
                        layer.name
                    )));
                }
                input.to_vec()
            }
            LayerKind::Pool { params } => params
                .output_dims(input)
                .map_err(|e| mismatch(e.to_string()))?
                .to_vec(),
            LayerKind::Activation { .. } => input.to_vec(),
            LayerKind::Add { with } => {
                let j = *index.get(with).ok_or_else(|| {
                    Error::Graph(format!(
                        "layer `{}` adds unknown layer `{with}`",
                        layer.name
                    ))
                })?;
                if j + 1 >= i {
                    return Err(Error::Graph(format!(
                        "layer `{}` must add a layer before its direct input, not `{with}`",
                        layer.name
                    )));
                }
                if shapes[j] != input {
                    return Err(Error::Graph(format!(
                        "layer `{}` adds `{with}` {:?} to `{prev_name}` {input:?}",
                        layer.name, shapes[j]
                    )));
                }
                retained.insert(j);
                input.to_vec()
            }
            LayerKind::Softmax => {
                if i + 1 != n_layers {
                    return Err(Error::Graph(format!(
                        "softmax layer `{}` must be last",
                        layer.name
                    )));
                }
                if input.len() != 2 {
                    return Err(mismatch("softmax needs [N, classes]".into()));
                }
                input.to_vec()
            }
            LayerKind::Flatten => vec![input[0], input[1..].iter().product()],
        };
        shapes.push(out);
    }
    Ok(NetworkGraph {
        manifest,
        weights,
        shapes,
        retained,
        index,
    })
}
