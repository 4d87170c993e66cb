//! Network forward pass, built on a [`Tape`] so the same graph serves
//! inference and training.
//!
//! Row convention: a patch embedding is a `1×E` row, a bag is `J×E`, and a
//! slice feature `z` is `1×E`. The gated attention score of patch `j` is
//! `tanh(h_j V) ⊙ sigm(h_j U) · W`, normalized by softmax over the bag.

use super::config::{ModelConfig, Pooling};
use super::params::ModelParams;
use crate::data::FeatureBag;
use crate::diffmath::{Gradients, Matrix, NodeId, Tape};
use crate::error::{Error, Result};

/// Intra-slice attention result for one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceOutput {
    /// Slice feature `z`, length `embed_dim`.
    pub feature: Vec<f64>,
    /// Attention score per patch; positive, sums to 1.
    pub attention: Vec<f64>,
    pub patch_coords: Vec<(u32, u32)>,
}

/// Prediction for one slice of interest.
#[derive(Clone, Debug, PartialEq)]
pub struct SoiPrediction {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    /// Inter-slice weights, weighted-average pooling only.
    pub slice_weights: Option<Vec<f64>>,
    /// Context-aware SOI feature fed to the classifier.
    pub context_feature: Vec<f64>,
    /// One entry per input slice in depth order. Naive pooling attends over
    /// the union of patches, so it reports a single entry covering all of them.
    pub slices: Vec<SliceOutput>,
    /// Index of the SOI within the input slices.
    pub soi_pos: usize,
    /// Naive pooling only: the SOI's patch rows within the union.
    pub naive_soi_patches: Option<(usize, usize)>,
}

impl SoiPrediction {
    /// Probability of class 1 (the high-risk class in the binary setup).
    pub fn risk(&self) -> f64 {
        self.probs.get(1).copied().unwrap_or(0.0)
    }

    /// Attention over the SOI's own patches. Under naive pooling the SOI's
    /// block of the union attention is renormalized to sum to 1.
    pub fn soi_attention(&self) -> SliceOutput {
        match self.naive_soi_patches {
            Some((start, end)) if (start, end) != (0, self.slices[0].attention.len()) => {
                let union = &self.slices[0];
                let block = &union.attention[start..end];
                let total: f64 = block.iter().sum();
                SliceOutput {
                    feature: union.feature.clone(),
                    attention: block.iter().map(|a| a / total).collect(),
                    patch_coords: union.patch_coords[start..end].to_vec(),
                }
            }
            // The SOI is the whole union; it already sums to 1.
            Some(_) => self.slices[0].clone(),
            None => self.slices[self.soi_pos].clone(),
        }
    }
}

/// Parameter leaves registered on a tape.
pub(crate) struct ParamNodes {
    embed_w: NodeId,
    embed_b: NodeId,
    attn_v: NodeId,
    attn_u: NodeId,
    attn_w: NodeId,
    pool_l: Option<NodeId>,
    rnn_wn: Option<NodeId>,
    rnn_wh: Option<NodeId>,
    clf_c: NodeId,
    clf_b: NodeId,
}

impl ParamNodes {
    pub(crate) fn register(tape: &mut Tape, p: &ModelParams, trainable: bool) -> Self {
        let mut leaf = |m: &Matrix| {
            if trainable {
                tape.var(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        Self {
            embed_w: leaf(&p.embed_w),
            embed_b: leaf(&p.embed_b),
            attn_v: leaf(&p.attn_v),
            attn_u: leaf(&p.attn_u),
            attn_w: leaf(&p.attn_w),
            pool_l: p.pool_l.as_ref().map(&mut leaf),
            rnn_wn: p.rnn_wn.as_ref().map(&mut leaf),
            rnn_wh: p.rnn_wh.as_ref().map(&mut leaf),
            clf_c: leaf(&p.clf_c),
            clf_b: leaf(&p.clf_b),
        }
    }

    pub(crate) fn gradients(&self, tape: &Tape, grads: &Gradients) -> ModelParams {
        let g = |id: NodeId| grads.get_or_zeros(tape, id);
        ModelParams {
            embed_w: g(self.embed_w),
            embed_b: g(self.embed_b),
            attn_v: g(self.attn_v),
            attn_u: g(self.attn_u),
            attn_w: g(self.attn_w),
            pool_l: self.pool_l.map(g),
            rnn_wn: self.rnn_wn.map(g),
            rnn_wh: self.rnn_wh.map(g),
            clf_c: g(self.clf_c),
            clf_b: g(self.clf_b),
        }
    }
}

// Graph fragments. Each takes parameter node ids so the op-level API and
// the full forward share one implementation.

fn embed_graph(t: &mut Tape, feats: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let lin = t.matmul(feats, w)?;
    let biased = t.add_row(lin, b)?;
    t.relu(biased)
}

/// Returns `(z, a)`: the `1×E` slice feature and `J×1` attention column.
fn attention_graph(t: &mut Tape, h: NodeId, v: NodeId, u: NodeId, w: NodeId) -> Result<(NodeId, NodeId)> {
    let hv = t.matmul(h, v)?;
    let branch_tanh = t.tanh(hv)?;
    let hu = t.matmul(h, u)?;
    let branch_gate = t.sigmoid(hu)?;
    let gated = t.mul(branch_tanh, branch_gate)?;
    let scores = t.matmul(gated, w)?;
    let a = t.softmax(scores)?;
    let a_row = t.transpose(a)?;
    let z = t.matmul(a_row, h)?;
    Ok((z, a))
}

/// Returns `(z̃, r)` with `r` the `n×1` slice-weight column.
fn weighted_graph(t: &mut Tape, zs: &[NodeId], l: NodeId) -> Result<(NodeId, NodeId)> {
    let stacked = t.concat_rows(zs)?;
    let logits = t.matmul(stacked, l)?;
    let r = t.softmax(logits)?;
    let r_row = t.transpose(r)?;
    let pooled = t.matmul(r_row, stacked)?;
    Ok((pooled, r))
}

fn average_graph(t: &mut Tape, zs: &[NodeId]) -> Result<NodeId> {
    let stacked = t.concat_rows(zs)?;
    let n = zs.len();
    let weights = t.constant(Matrix::row_vector(vec![1.0 / n as f64; n]));
    t.matmul(weights, stacked)
}

/// Bidirectional recurrence with zero initial state. The `+1` direction
/// runs from the deepest slice down to the SOI, the `-1` direction from the
/// shallowest slice up to it. Output: `hid(+1) ⊕ hid(-1)` at the SOI.
fn rnn_graph(t: &mut Tape, zs: &[NodeId], soi_pos: usize, wn: NodeId, wh: NodeId) -> Result<NodeId> {
    let wn_t = t.transpose(wn)?;
    let wh_t = t.transpose(wh)?;
    let step = |t: &mut Tape, z: NodeId, prev: Option<NodeId>| -> Result<NodeId> {
        let input = t.matmul(z, wn_t)?;
        let pre = match prev {
            Some(h) => {
                let rec = t.matmul(h, wh_t)?;
                t.add(input, rec)?
            }
            None => input,
        };
        t.tanh(pre)
    };
    let mut down = None;
    for &z in zs[soi_pos..].iter().rev() {
        down = Some(step(t, z, down)?);
    }
    let mut up = None;
    for &z in &zs[..=soi_pos] {
        up = Some(step(t, z, up)?);
    }
    let (down, up) = (down.expect("nonempty"), up.expect("nonempty"));
    t.concat_cols(&[down, up])
}

fn classify_graph(t: &mut Tape, context: NodeId, c: NodeId, b: NodeId) -> Result<NodeId> {
    let lin = t.matmul(context, c)?;
    t.add_row(lin, b)
}

/// Per-slice feature node, attention node and patch coordinates.
type SliceNodes = (NodeId, NodeId, Vec<(u32, u32)>);

struct Graph {
    logits: NodeId,
    context: NodeId,
    weights: Option<NodeId>,
    slices: Vec<SliceNodes>,
    naive_soi_patches: Option<(usize, usize)>,
}

fn check_bags(bags: &[&FeatureBag], soi_pos: usize, config: &ModelConfig) -> Result<()> {
    if bags.is_empty() {
        return Err(Error::EmptyBag("no slices given".into()));
    }
    if soi_pos >= bags.len() {
        return Err(Error::Contract(format!(
            "SOI position {soi_pos} outside {} slices",
            bags.len()
        )));
    }
    if bags.len() > config.neighborhood.max_slices() {
        return Err(Error::Contract(format!(
            "{} slices exceed the neighbourhood size {} for m = {}",
            bags.len(),
            config.neighborhood.max_slices(),
            config.neighborhood.m
        )));
    }
    for bag in bags {
        if bag.num_patches() == 0 {
            return Err(Error::EmptyBag(format!("slice {} has no patches", bag.slice_index)));
        }
        if bag.feature_dim() != config.feature_dim {
            return Err(Error::dim(
                "forward",
                format!(
                    "slice {} has feature width {}, model expects {}",
                    bag.slice_index,
                    bag.feature_dim(),
                    config.feature_dim
                ),
            ));
        }
    }
    Ok(())
}

fn build_graph(
    t: &mut Tape,
    pn: &ParamNodes,
    config: &ModelConfig,
    bags: &[&FeatureBag],
    soi_pos: usize,
) -> Result<Graph> {
    check_bags(bags, soi_pos, config)?;
    let mut embedded = Vec::with_capacity(bags.len());
    for bag in bags {
        let f = t.constant(bag.features.clone());
        embedded.push(embed_graph(t, f, pn.embed_w, pn.embed_b)?);
    }

    if config.pooling == Pooling::Naive {
        let union = t.concat_rows(&embedded)?;
        let (z, a) = attention_graph(t, union, pn.attn_v, pn.attn_u, pn.attn_w)?;
        let coords = bags.iter().flat_map(|b| b.coords.iter().copied()).collect();
        let start: usize = bags[..soi_pos].iter().map(|b| b.num_patches()).sum();
        let logits = classify_graph(t, z, pn.clf_c, pn.clf_b)?;
        return Ok(Graph {
            logits,
            context: z,
            weights: None,
            slices: vec![(z, a, coords)],
            naive_soi_patches: Some((start, start + bags[soi_pos].num_patches())),
        });
    }

    let mut slices = Vec::with_capacity(bags.len());
    for (h, bag) in embedded.iter().zip(bags) {
        let (z, a) = attention_graph(t, *h, pn.attn_v, pn.attn_u, pn.attn_w)?;
        slices.push((z, a, bag.coords.clone()));
    }
    let zs: Vec<NodeId> = slices.iter().map(|s| s.0).collect();
    let (context, weights) = match config.pooling {
        Pooling::None => {
            if bags.len() != 1 {
                return Err(Error::Contract(format!(
                    "pooling none takes the SOI only, got {} slices",
                    bags.len()
                )));
            }
            (zs[0], None)
        }
        Pooling::Average => (average_graph(t, &zs)?, None),
        Pooling::WeightedAverage => {
            let l = pn
                .pool_l
                .ok_or_else(|| Error::Config("weighted pooling needs pool_L".into()))?;
            let (c, r) = weighted_graph(t, &zs, l)?;
            (c, Some(r))
        }
        Pooling::Rnn => {
            let (wn, wh) = pn
                .rnn_wn
                .zip(pn.rnn_wh)
                .ok_or_else(|| Error::Config("rnn pooling needs rnn_Wn and rnn_Wh".into()))?;
            (rnn_graph(t, &zs, soi_pos, wn, wh)?, None)
        }
        Pooling::Naive => unreachable!("handled above"),
    };
    let logits = classify_graph(t, context, pn.clf_c, pn.clf_b)?;
    Ok(Graph {
        logits,
        context,
        weights,
        slices,
        naive_soi_patches: None,
    })
}

fn read_prediction(t: &Tape, g: &Graph, soi_pos: usize) -> Result<SoiPrediction> {
    let logits = t.value(g.logits).data().to_vec();
    let probs = crate::diffmath::softmax(t.value(g.logits))?.into_data();
    let slices = g
        .slices
        .iter()
        .map(|(z, a, coords)| SliceOutput {
            feature: t.value(*z).data().to_vec(),
            attention: t.value(*a).data().to_vec(),
            patch_coords: coords.clone(),
        })
        .collect::<Vec<_>>();
    Ok(SoiPrediction {
        probs,
        logits,
        slice_weights: g.weights.map(|r| t.value(r).data().to_vec()),
        context_feature: t.value(g.context).data().to_vec(),
        slices,
        soi_pos,
        naive_soi_patches: g.naive_soi_patches,
    })
}

/// Full forward pass for one SOI. `bags` are the SOI and its available
/// neighbours in depth order; `soi_pos` indexes the SOI within them.
pub fn forward(
    bags: &[&FeatureBag],
    soi_pos: usize,
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<SoiPrediction> {
    let mut t = Tape::new();
    let pn = ParamNodes::register(&mut t, params, false);
    let g = build_graph(&mut t, &pn, config, bags, soi_pos)?;
    read_prediction(&t, &g, soi_pos)
}

/// Cross-entropy loss for one labeled SOI together with the gradient of
/// that loss for every parameter.
pub fn loss_and_gradients(
    bags: &[&FeatureBag],
    soi_pos: usize,
    label: usize,
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<(f64, SoiPrediction, ModelParams)> {
    let mut t = Tape::new();
    let pn = ParamNodes::register(&mut t, params, true);
    let g = build_graph(&mut t, &pn, config, bags, soi_pos)?;
    let loss = t.softmax_cross_entropy(g.logits, label)?;
    let grads = t.backward(loss)?;
    let pred = read_prediction(&t, &g, soi_pos)?;
    Ok((t.value(loss).data()[0], pred, pn.gradients(&t, &grads)))
}

// Op-level API over plain matrices.

/// `ReLU(features · W + b)` row by row.
pub fn embed_patches(features: &Matrix, params: &ModelParams) -> Result<Matrix> {
    if features.rows() == 0 {
        return Err(Error::EmptyBag("no patches to embed".into()));
    }
    let mut t = Tape::new();
    let f = t.constant(features.clone());
    let w = t.constant(params.embed_w.clone());
    let b = t.constant(params.embed_b.clone());
    let out = embed_graph(&mut t, f, w, b)?;
    Ok(t.value(out).clone())
}

/// Gated attention pooling of a `J×E` embedded bag.
pub fn attention_pool(embedded: &Matrix, coords: &[(u32, u32)], params: &ModelParams) -> Result<SliceOutput> {
    if embedded.rows() == 0 {
        return Err(Error::EmptyBag("no patches to pool".into()));
    }
    if !coords.is_empty() && coords.len() != embedded.rows() {
        return Err(Error::dim("attention_pool", "one coordinate per patch"));
    }
    let mut t = Tape::new();
    let h = t.constant(embedded.clone());
    let v = t.constant(params.attn_v.clone());
    let u = t.constant(params.attn_u.clone());
    let w = t.constant(params.attn_w.clone());
    let (z, a) = attention_graph(&mut t, h, v, u, w)?;
    Ok(SliceOutput {
        feature: t.value(z).data().to_vec(),
        attention: t.value(a).data().to_vec(),
        patch_coords: coords.to_vec(),
    })
}

pub fn pool_none(soi: &SliceOutput) -> Vec<f64> {
    soi.feature.clone()
}

/// One attention pool over the concatenation of every slice's embedded patches.
pub fn pool_naive(embedded: &[Matrix], params: &ModelParams) -> Result<SliceOutput> {
    let total: usize = embedded.iter().map(Matrix::rows).sum();
    if total == 0 {
        return Err(Error::EmptyBag("no patches across the neighbourhood".into()));
    }
    let mut t = Tape::new();
    let parts: Vec<NodeId> = embedded
        .iter()
        .filter(|m| m.rows() > 0)
        .map(|m| t.constant(m.clone()))
        .collect();
    let union = t.concat_rows(&parts)?;
    let v = t.constant(params.attn_v.clone());
    let u = t.constant(params.attn_u.clone());
    let w = t.constant(params.attn_w.clone());
    let (z, a) = attention_graph(&mut t, union, v, u, w)?;
    Ok(SliceOutput {
        feature: t.value(z).data().to_vec(),
        attention: t.value(a).data().to_vec(),
        patch_coords: Vec::new(),
    })
}

fn slice_rows(t: &mut Tape, features: &[Vec<f64>]) -> Result<Vec<NodeId>> {
    if features.is_empty() {
        return Err(Error::EmptyBag("no slice features to pool".into()));
    }
    Ok(features
        .iter()
        .map(|z| t.constant(Matrix::row_vector(z.clone())))
        .collect())
}

pub fn pool_average(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let zs = slice_rows(&mut t, features)?;
    let out = average_graph(&mut t, &zs)?;
    Ok(t.value(out).data().to_vec())
}

/// Returns `(z̃, r)`.
pub fn pool_weighted_average(features: &[Vec<f64>], params: &ModelParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = params
        .pool_l
        .as_ref()
        .ok_or_else(|| Error::Config("parameters have no pool_L".into()))?;
    let mut t = Tape::new();
    let zs = slice_rows(&mut t, features)?;
    let l = t.constant(l.clone());
    let (out, r) = weighted_graph(&mut t, &zs, l)?;
    Ok((t.value(out).data().to_vec(), t.value(r).data().to_vec()))
}

pub fn pool_rnn(features: &[Vec<f64>], soi_pos: usize, params: &ModelParams) -> Result<Vec<f64>> {
    let (wn, wh) = params
        .rnn_wn
        .as_ref()
        .zip(params.rnn_wh.as_ref())
        .ok_or_else(|| Error::Config("parameters have no recurrent weights".into()))?;
    if soi_pos >= features.len() {
        return Err(Error::Contract(format!(
            "SOI position {soi_pos} outside {} slices",
            features.len()
        )));
    }
    let mut t = Tape::new();
    let zs = slice_rows(&mut t, features)?;
    let wn = t.constant(wn.clone());
    let wh = t.constant(wh.clone());
    let out = rnn_graph(&mut t, &zs, soi_pos, wn, wh)?;
    Ok(t.value(out).data().to_vec())
}

/// `softmax(z̃ C + b)`.
pub fn classify(context: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    if context.len() != params.clf_c.rows() {
        return Err(Error::dim(
            "classify",
            format!(
                "context width {} vs classifier input {}",
                context.len(),
                params.clf_c.rows()
            ),
        ));
    }
    let mut t = Tape::new();
    let z = t.constant(Matrix::row_vector(context.to_vec()));
    let c = t.constant(params.clf_c.clone());
    let b = t.constant(params.clf_b.clone());
    let logits = classify_graph(&mut t, z, c, b)?;
    Ok(crate::diffmath::softmax(t.value(logits))?.into_data())
}
