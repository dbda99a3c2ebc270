use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Config;
use crate::deform::{
    deformable_roi_pool_3d, modulated_deformable_roi_pool_3d, pool_standard, predict_offsets, FeatureVolume, OffsetVars, PoolConfig,
    PoolingMode,
};
use crate::error::{Error, Result};
use crate::gcn::{classify_snippet, gcn_forward, graph_readout, LayerVars};
use crate::graph::{canonical_order, project_node_features, SceneGraph};
use crate::tensor::{ParamStore, Tape, Tensor, Var};
use crate::tube::ActionTube;

/// Everything the classifier needs about one snippet.
#[derive(Debug, Clone)]
pub struct SnippetInput {
    pub snippet_index: usize,
    pub features: FeatureVolume,
    /// Canonically ordered; the whole-frame placeholder when nothing was
    /// detected.
    pub tubes: Vec<ActionTube>,
    /// Standard-pooled tube features `[K, C·L·k·k]`.
    pub pooled: Tensor,
}

impl SnippetInput {
    pub fn new(snippet_index: usize, features: FeatureVolume, tubes: Vec<ActionTube>, cfg: &PoolConfig) -> Result<Self> {
        let tubes = if tubes.is_empty() {
            let (w, h) = features.dims().image_size();
            let start = snippet_index * crate::tube::TUBE_LEN + 1;
            vec![ActionTube::placeholder(snippet_index, start, w, h)]
        } else {
            let order = canonical_order(&tubes);
            order.into_iter().map(|i| tubes[i].clone()).collect()
        };
        let pooled = pool_standard(&features, &tubes, cfg)?;
        Ok(SnippetInput {
            snippet_index,
            features,
            tubes,
            pooled,
        })
    }

    pub fn node_count(&self) -> usize {
        self.tubes.len()
    }
}

/// Forward result for one snippet.
#[derive(Debug, Clone)]
pub struct SnippetOutput {
    pub logits: Var,
    pub probabilities: Vec<f64>,
    pub label: usize,
    pub graph: SceneGraph,
}

/// Learnable parameters plus the configuration that shapes them.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: Config,
    pub n_classes: usize,
    pub params: ParamStore,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

impl Model {
    /// Parameter names and shapes for `config` and `n_classes`, in
    /// initialisation order.
    fn layout(config: &Config, n_classes: usize) -> Vec<(String, Vec<usize>)> {
        let pool = config.pool_config();
        let f = pool.pooled_len(config.channels);
        let mut v: Vec<(String, Vec<usize>)> = vec![("proj.w".into(), vec![f, config.d_node]), ("proj.b".into(), vec![1, config.d_node])];
        let dims = [config.d_node, config.d_h, config.d_h, config.d_out];
        for l in 0..3 {
            v.push((format!("gcn.{l}.w"), vec![dims[l], dims[l + 1]]));
            v.push((format!("gcn.{l}.b"), vec![1, dims[l + 1]]));
        }
        v.push(("cls.w".into(), vec![config.readout_dim(), n_classes]));
        v.push(("cls.b".into(), vec![1, n_classes]));
        if config.pooling != PoolingMode::Standard {
            let ob = pool.offset_bins();
            v.push(("off.w1".into(), vec![f, config.offset_hidden]));
            v.push(("off.b1".into(), vec![1, config.offset_hidden]));
            v.push(("off.w2".into(), vec![config.offset_hidden, 2 * ob]));
            v.push(("off.b2".into(), vec![1, 2 * ob]));
            if config.pooling == PoolingMode::Modulated {
                v.push(("mod.w".into(), vec![config.offset_hidden, ob]));
                v.push(("mod.b".into(), vec![1, ob]));
            }
        }
        v
    }

    /// Seeded Xavier-uniform weights and zero biases. The offset and
    /// modulation heads start at zero so deformable pooling begins as
    /// standard pooling.
    pub fn new(config: &Config, n_classes: usize) -> Result<Model> {
        config.validate()?;
        if n_classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {n_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for (name, shape) in Self::layout(config, n_classes) {
            let zero = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") || name == "off.w2" || name == "mod.w";
            let t = if zero {
                Tensor::zeros(shape)
            } else {
                xavier(&mut rng, shape[0], shape[1])
            };
            params.insert(name, t);
        }
        Ok(Model {
            config: config.clone(),
            n_classes,
            params,
        })
    }

    /// Wraps loaded parameters, checking they match `config`.
    pub fn from_params(config: &Config, params: ParamStore) -> Result<Model> {
        config.validate()?;
        let n_classes = params.require("cls.b")?.shape().last().copied().unwrap_or(0);
        let layout = Self::layout(config, n_classes);
        if layout.len() != params.len() {
            return Err(Error::Validation(format!(
                "checkpoint holds {} tensors, config expects {}",
                params.len(),
                layout.len()
            )));
        }
        for (name, shape) in &layout {
            let t = params.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Validation(format!(
                    "parameter {name} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut params = params;
        for (_, t) in params.iter_mut() {
            *t = t.clone().with_requires_grad(true);
        }
        Ok(Model {
            config: config.clone(),
            n_classes,
            params,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Runs a batch of snippets on `tape`, with parameters already bound
    /// as `vars`.
    pub fn forward(&self, tape: &mut Tape, vars: &BTreeMap<String, Var>, batch: &[&SnippetInput]) -> Result<Vec<SnippetOutput>> {
        let v = |name: &str| vars.get(name).copied().ok_or_else(|| Error::UnknownParam(name.into()));
        let cfg = &self.config;
        let pool = cfg.pool_config();
        let f = pool.pooled_len(cfg.channels);
        let mut rows = Vec::new();
        for s in batch {
            if s.pooled.shape() != [s.tubes.len(), f] {
                return Err(Error::shape("snippet features", s.pooled.shape(), &[s.tubes.len(), f]));
            }
            rows.extend_from_slice(s.pooled.data());
        }
        let total: usize = batch.iter().map(|s| s.tubes.len()).sum();
        if total == 0 {
            return Ok(Vec::new());
        }
        let standard = tape.constant(Tensor::new(vec![total, f], rows)?);

        let pooled = if cfg.pooling == PoolingMode::Standard {
            standard
        } else {
            let pre = tape.linear(standard, v("off.w1")?, v("off.b1")?)?;
            let hidden = tape.relu(pre);
            let heads = OffsetVars {
                weight: v("off.w2")?,
                bias: v("off.b2")?,
                modulation: if cfg.pooling == PoolingMode::Modulated {
                    Some((v("mod.w")?, v("mod.b")?))
                } else {
                    None
                },
            };
            let (offsets, modulation) = predict_offsets(tape, hidden, &heads)?;
            let mut parts = Vec::with_capacity(batch.len());
            let mut r = 0;
            for s in batch {
                let k = s.tubes.len();
                let fv = tape.constant(s.features.values.clone());
                let o = tape.slice_rows(offsets, r, k)?;
                let p = match modulation {
                    Some(m) => {
                        let m = tape.slice_rows(m, r, k)?;
                        modulated_deformable_roi_pool_3d(tape, fv, s.features.spatial_scale, &s.tubes, o, m, &pool)?
                    }
                    None => deformable_roi_pool_3d(tape, fv, s.features.spatial_scale, &s.tubes, o, &pool)?,
                };
                parts.push(p);
                r += k;
            }
            tape.concat_rows(&parts)?
        };

        let nodes = project_node_features(tape, pooled, v("proj.w")?, v("proj.b")?)?;
        let layers: Vec<LayerVars> = (0..3)
            .map(|l| {
                Ok(LayerVars {
                    weight: v(&format!("gcn.{l}.w"))?,
                    bias: v(&format!("gcn.{l}.b"))?,
                })
            })
            .collect::<Result<_>>()?;
        let classifier = LayerVars {
            weight: v("cls.w")?,
            bias: v("cls.b")?,
        };

        let mut out = Vec::with_capacity(batch.len());
        let mut r = 0;
        for s in batch {
            let k = s.tubes.len();
            let h0 = tape.slice_rows(nodes, r, k)?;
            r += k;
            let node_features: Vec<Vec<f64>> = tape.value(h0).data().chunks(cfg.d_node).map(<[f64]>::to_vec).collect();
            let graph = SceneGraph::build(&s.tubes, &node_features, cfg.kappa)?;
            let hs = gcn_forward(tape, h0, &graph.adjacency_matrix(), &layers)?;
            let x_g = graph_readout(tape, &hs, cfg.readout)?;
            let c = classify_snippet(tape, x_g, &classifier)?;
            out.push(SnippetOutput {
                logits: c.logits,
                probabilities: c.probabilities,
                label: c.label,
                graph,
            });
        }
        Ok(out)
    }
}
