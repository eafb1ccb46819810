//! Relational message passing.
//!
//! Every layer computes, for node `i`,
//!
//! ```text
//! pre_i = W_self h_i + b + sum_r w_r(i) * agg_r(i)
//! h'_i  = leaky_relu(pre_i)
//! ```
//!
//! where `agg_r(i)` pools the messages `W_r h_j` sent along relation `r`
//! (zero when `i` has no such neighbours). The variants differ in how:
//!
//! * `MeanRelational`: `agg_r` is the neighbour mean, `w_r = 1`.
//! * `AttnEdgeType`: `agg_r` is a softmax-attention average whose scores
//!   `leaky_0.2(a_dst_r . z_i + a_src_r . m_j)` depend on the edge type;
//!   `w_r = 1`.
//! * `AttnRelation`: `agg_r` is the neighbour mean and the relations are
//!   mixed by `w_r = R * softmax_r(q_r . agg_r(i))`.
//!
//! With zero attention parameters both attention variants reduce exactly
//! to `MeanRelational`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HeteroGraph, RELATIONS};
use crate::error::{Error, Result};
use crate::nn::{glorot, leaky, leaky_grad, Dense};
use crate::types::LogitPair;

/// Negative slope inside attention scores.
pub const ATTN_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnVariant {
    MeanRelational,
    AttnEdgeType,
    AttnRelation,
}

impl GnnVariant {
    pub fn name(self) -> &'static str {
        match self {
            GnnVariant::MeanRelational => "mean_relational",
            GnnVariant::AttnEdgeType => "attn_edge_type",
            GnnVariant::AttnRelation => "attn_relation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub variant: GnnVariant,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnLayer {
    pub w_self: Array2<f64>,
    pub bias: Array1<f64>,
    pub w_rel: Vec<Array2<f64>>,
    /// Edge-type attention vectors (attn_edge_type only).
    pub attn_dst: Vec<Array1<f64>>,
    pub attn_src: Vec<Array1<f64>>,
    /// Relation query vectors (attn_relation only).
    pub rel_query: Vec<Array1<f64>>,
}

impl GnnLayer {
    fn new(variant: GnnVariant, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let small = |rng: &mut dyn rand::RngCore| {
            let limit = (1.0 / output as f64).sqrt();
            Array1::from_shape_fn(output, |_| rng.random_range(-limit..limit))
        };
        let (attn_dst, attn_src, rel_query) = match variant {
            GnnVariant::MeanRelational => (Vec::new(), Vec::new(), Vec::new()),
            GnnVariant::AttnEdgeType => (
                (0..RELATIONS).map(|_| small(rng)).collect(),
                (0..RELATIONS).map(|_| small(rng)).collect(),
                Vec::new(),
            ),
            GnnVariant::AttnRelation => (Vec::new(), Vec::new(), (0..RELATIONS).map(|_| small(rng)).collect()),
        };
        GnnLayer {
            w_self: glorot(input, output, rng),
            bias: Array1::zeros(output),
            w_rel: (0..RELATIONS).map(|_| glorot(input, output, rng)).collect(),
            attn_dst,
            attn_src,
            rel_query,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_self.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w_self.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub variant: GnnVariant,
    pub layers: Vec<GnnLayer>,
    pub head: Dense,
    pub dropout: f64,
}

/// Per-layer intermediate values kept for the backward pass.
pub(super) struct LayerCache {
    z: Array2<f64>,
    m: Vec<Array2<f64>>,
    agg: Vec<Array2<f64>>,
    /// Attention weight and raw score per incoming edge (attn_edge_type).
    alpha: Vec<Vec<f64>>,
    score: Vec<Vec<f64>>,
    /// Relation mixing softmax, `n x R` (attn_relation).
    sigma: Option<Array2<f64>>,
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
}

pub(super) struct ForwardCache {
    pub inputs: Vec<Array2<f64>>,
    pub layers: Vec<LayerCache>,
    pub last: Array2<f64>,
    pub logits: Array2<f64>,
}

fn lrelu(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

impl GnnModel {
    pub fn new(config: &GnnConfig, input_dim: usize, seed: u64) -> Result<Self> {
        if config.layers == 0 || config.hidden_dim == 0 {
            return Err(Error::Config("GNN needs at least one layer and a positive hidden dim".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.layers);
        let mut d = input_dim;
        for _ in 0..config.layers {
            layers.push(GnnLayer::new(config.variant, d, config.hidden_dim, &mut rng));
            d = config.hidden_dim;
        }
        Ok(GnnModel {
            variant: config.variant,
            layers,
            head: Dense::glorot(d, 2, &mut rng),
            dropout: config.dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Checks parameter shapes against each other and the variant.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvariantViolation("GNN has no layers".into()));
        }
        let mut d = self.input_dim();
        for l in &self.layers {
            let h = l.output_dim();
            let ok_attn = match self.variant {
                GnnVariant::MeanRelational => l.attn_dst.is_empty() && l.attn_src.is_empty() && l.rel_query.is_empty(),
                GnnVariant::AttnEdgeType => {
                    l.attn_dst.len() == RELATIONS
                        && l.attn_src.len() == RELATIONS
                        && l.attn_dst.iter().chain(&l.attn_src).all(|a| a.len() == h)
                }
                GnnVariant::AttnRelation => l.rel_query.len() == RELATIONS && l.rel_query.iter().all(|q| q.len() == h),
            };
            if l.input_dim() != d
                || l.bias.len() != h
                || l.w_rel.len() != RELATIONS
                || l.w_rel.iter().any(|w| w.dim() != (d, h))
                || !ok_attn
            {
                return Err(Error::InvariantViolation(format!(
                    "inconsistent {} layer shapes",
                    self.variant.name()
                )));
            }
            d = h;
        }
        if self.head.w.dim() != (d, 2) || self.head.b.len() != 2 {
            return Err(Error::InvariantViolation("GNN head shape mismatch".into()));
        }
        Ok(())
    }

    /// Per-node logits, in graph node order, without dropout.
    pub fn forward(&self, g: &HeteroGraph) -> Result<Vec<LogitPair>> {
        let cache = self.forward_cached(g, None)?;
        Ok(cache
            .logits
            .rows()
            .into_iter()
            .map(|r| LogitPair::new(r[0], r[1]))
            .collect())
    }

    /// Node representations after the last message-passing layer.
    pub fn representations(&self, g: &HeteroGraph) -> Result<Array2<f64>> {
        Ok(self.forward_cached(g, None)?.last)
    }

    pub(super) fn forward_cached(&self, g: &HeteroGraph, mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardCache> {
        if g.feature_dim() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), g.feature_dim()));
        }
        let mut h = g.features.clone();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = self.layer_forward(layer, g, &h.view(), rng.as_deref_mut());
            inputs.push(std::mem::replace(&mut h, out));
            caches.push(cache);
        }
        let logits = self.head.forward(&h.view());
        Ok(ForwardCache {
            inputs,
            layers: caches,
            last: h,
            logits,
        })
    }

    fn layer_forward(
        &self,
        layer: &GnnLayer,
        g: &HeteroGraph,
        h: &ArrayView2<f64>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, LayerCache) {
        let n = g.n_nodes();
        let width = layer.output_dim();
        let z = h.dot(&layer.w_self) + &layer.bias;
        let m: Vec<Array2<f64>> = layer.w_rel.iter().map(|w| h.dot(w)).collect();
        let mut agg = vec![Array2::<f64>::zeros((n, width)); RELATIONS];
        let mut alpha = vec![Vec::new(); RELATIONS];
        let mut score = vec![Vec::new(); RELATIONS];
        for r in 0..RELATIONS {
            let inc = g.incoming(r);
            match self.variant {
                GnnVariant::MeanRelational | GnnVariant::AttnRelation => {
                    for i in 0..n {
                        let src = inc.of(i);
                        if src.is_empty() {
                            continue;
                        }
                        let mut row = agg[r].row_mut(i);
                        for &j in src {
                            row += &m[r].row(j);
                        }
                        row /= src.len() as f64;
                    }
                }
                GnnVariant::AttnEdgeType => {
                    let zd = z.dot(&layer.attn_dst[r]);
                    let ms = m[r].dot(&layer.attn_src[r]);
                    let mut a = vec![0.0; inc.n_edges()];
                    let mut s = vec![0.0; inc.n_edges()];
                    for i in 0..n {
                        let src = inc.of(i);
                        if src.is_empty() {
                            continue;
                        }
                        let base = inc.offset(i);
                        let mut max = f64::NEG_INFINITY;
                        for (k, &j) in src.iter().enumerate() {
                            let u = zd[i] + ms[j];
                            s[base + k] = u;
                            max = max.max(lrelu(u, ATTN_SLOPE));
                        }
                        let mut total = 0.0;
                        for k in 0..src.len() {
                            let e = (lrelu(s[base + k], ATTN_SLOPE) - max).exp();
                            a[base + k] = e;
                            total += e;
                        }
                        let mut row = agg[r].row_mut(i);
                        for (k, &j) in src.iter().enumerate() {
                            a[base + k] /= total;
                            row.scaled_add(a[base + k], &m[r].row(j));
                        }
                    }
                    alpha[r] = a;
                    score[r] = s;
                }
            }
        }
        let mut pre = z.clone();
        let sigma = match self.variant {
            GnnVariant::AttnRelation => {
                let rr = RELATIONS as f64;
                let mut sig = Array2::zeros((n, RELATIONS));
                for i in 0..n {
                    let s: Vec<f64> = (0..RELATIONS).map(|r| agg[r].row(i).dot(&layer.rel_query[r])).collect();
                    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
                    let total: f64 = e.iter().sum();
                    let mut row = pre.row_mut(i);
                    for r in 0..RELATIONS {
                        sig[[i, r]] = e[r] / total;
                        row.scaled_add(rr * sig[[i, r]], &agg[r].row(i));
                    }
                }
                Some(sig)
            }
            _ => {
                for a in &agg {
                    pre += a;
                }
                None
            }
        };
        let mut out = pre.mapv(leaky);
        let mask = rng.filter(|_| self.dropout > 0.0).map(|rng| {
            let keep = 1.0 - self.dropout;
            let mask = Array2::from_shape_fn(out.raw_dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
            out *= &mask;
            mask
        });
        (
            out,
            LayerCache {
                z,
                m,
                agg,
                alpha,
                score,
                sigma,
                pre,
                mask,
            },
        )
    }

    /// Parameter views in a fixed order shared with [`GnnModel::zero_grads`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_self.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
            for w in &mut l.w_rel {
                out.push(w.as_slice_mut().expect("standard layout"));
            }
            for a in l.attn_dst.iter_mut().chain(l.attn_src.iter_mut()).chain(l.rel_query.iter_mut()) {
                out.push(a.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.head.w.as_slice_mut().expect("standard layout"));
        out.push(self.head.b.as_slice_mut().expect("standard layout"));
        out
    }

    /// Flattened copy of all parameters.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut m = self.clone();
        m.params_mut().into_iter().flat_map(|p| p.to_vec()).collect()
    }

    /// Sum of squares of every non-bias parameter.
    pub(super) fn weight_norm2(&self) -> f64 {
        let sq = |a: &[f64]| a.iter().map(|v| v * v).sum::<f64>();
        let mut total = sq(self.head.w.as_slice().expect("standard layout"));
        for l in &self.layers {
            total += sq(l.w_self.as_slice().expect("standard layout"));
            for a in &l.w_rel {
                total += sq(a.as_slice().expect("standard layout"));
            }
            for a in l.attn_dst.iter().chain(&l.attn_src).chain(&l.rel_query) {
                total += sq(a.as_slice().expect("standard layout"));
            }
        }
        total
    }

    /// Gradients of a loss with logit gradient `dlogits`, plus `l2/2` times
    /// [`GnnModel::weight_norm2`], laid out like [`GnnModel::params_mut`].
    pub(super) fn backward(&self, g: &HeteroGraph, cache: &ForwardCache, dlogits: &Array2<f64>, l2: f64) -> Vec<Vec<f64>> {
        let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.layers.len());
        let dw_head = cache.last.t().dot(dlogits) + &(&self.head.w * l2);
        let db_head = dlogits.sum_axis(Axis(0));
        let mut dout = dlogits.dot(&self.head.w.t());
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let need_input_grad = k > 0;
            let (grads, dinput) = self.layer_backward(layer, g, &cache.inputs[k], &cache.layers[k], dout, l2, need_input_grad);
            per_layer.push(grads);
            if let Some(d) = dinput {
                dout = d;
            } else {
                break;
            }
        }
        per_layer.reverse();
        let mut out: Vec<Vec<f64>> = per_layer.into_iter().flatten().collect();
        out.push(dw_head.iter().copied().collect());
        out.push(db_head.to_vec());
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        layer: &GnnLayer,
        g: &HeteroGraph,
        input: &Array2<f64>,
        c: &LayerCache,
        mut dpre: Array2<f64>,
        l2: f64,
        need_input_grad: bool,
    ) -> (Vec<Vec<f64>>, Option<Array2<f64>>) {
        let n = g.n_nodes();
        if let Some(mask) = &c.mask {
            dpre *= mask;
        }
        dpre.zip_mut_with(&c.pre, |d, &p| *d *= leaky_grad(p));
        let mut dz = dpre.clone();
        let mut dm: Vec<Array2<f64>> = c.m.iter().map(|m| Array2::zeros(m.raw_dim())).collect();
        let mut dattn_dst = Vec::new();
        let mut dattn_src = Vec::new();
        let mut dquery = Vec::new();

        // gradient reaching each relation's aggregate
        let dagg: Vec<Array2<f64>> = match self.variant {
            GnnVariant::AttnRelation => {
                let sigma = c.sigma.as_ref().expect("relation softmax cache");
                let rr = RELATIONS as f64;
                let mut dagg: Vec<Array2<f64>> = (0..RELATIONS).map(|_| Array2::zeros(dpre.raw_dim())).collect();
                let mut dq: Vec<Array1<f64>> = (0..RELATIONS).map(|_| Array1::zeros(layer.output_dim())).collect();
                for i in 0..n {
                    let dp = dpre.row(i);
                    let dsig: Vec<f64> = (0..RELATIONS).map(|r| rr * dp.dot(&c.agg[r].row(i))).collect();
                    let inner: f64 = (0..RELATIONS).map(|r| sigma[[i, r]] * dsig[r]).sum();
                    for r in 0..RELATIONS {
                        let s = sigma[[i, r]];
                        let ds = s * (dsig[r] - inner);
                        let mut row = dagg[r].row_mut(i);
                        row.scaled_add(rr * s, &dp);
                        row.scaled_add(ds, &layer.rel_query[r]);
                        dq[r].scaled_add(ds, &c.agg[r].row(i));
                    }
                }
                for r in 0..RELATIONS {
                    dq[r].scaled_add(l2, &layer.rel_query[r]);
                }
                dquery = dq;
                dagg
            }
            _ => vec![dpre.clone(); RELATIONS],
        };

        for r in 0..RELATIONS {
            let inc = g.incoming(r);
            match self.variant {
                GnnVariant::MeanRelational | GnnVariant::AttnRelation => {
                    for i in 0..n {
                        let src = inc.of(i);
                        if src.is_empty() {
                            continue;
                        }
                        let scale = 1.0 / src.len() as f64;
                        let da = dagg[r].row(i);
                        for &j in src {
                            dm[r].row_mut(j).scaled_add(scale, &da);
                        }
                    }
                }
                GnnVariant::AttnEdgeType => {
                    let mut dzd = Array1::<f64>::zeros(n);
                    let mut dms = Array1::<f64>::zeros(n);
                    for i in 0..n {
                        let src = inc.of(i);
                        if src.is_empty() {
                            continue;
                        }
                        let base = inc.offset(i);
                        let da = dagg[r].row(i);
                        let dalpha: Vec<f64> = src.iter().map(|&j| da.dot(&c.m[r].row(j))).collect();
                        let inner: f64 = (0..src.len()).map(|k| c.alpha[r][base + k] * dalpha[k]).sum();
                        for (k, &j) in src.iter().enumerate() {
                            let a = c.alpha[r][base + k];
                            dm[r].row_mut(j).scaled_add(a, &da);
                            let u = c.score[r][base + k];
                            let du = a * (dalpha[k] - inner) * if u > 0.0 { 1.0 } else { ATTN_SLOPE };
                            dzd[i] += du;
                            dms[j] += du;
                        }
                    }
                    let mut da_dst = c.z.t().dot(&dzd);
                    da_dst.scaled_add(l2, &layer.attn_dst[r]);
                    let mut da_src = c.m[r].t().dot(&dms);
                    da_src.scaled_add(l2, &layer.attn_src[r]);
                    for i in 0..n {
                        if dzd[i] != 0.0 {
                            dz.row_mut(i).scaled_add(dzd[i], &layer.attn_dst[r]);
                        }
                        if dms[i] != 0.0 {
                            dm[r].row_mut(i).scaled_add(dms[i], &layer.attn_src[r]);
                        }
                    }
                    dattn_dst.push(da_dst);
                    dattn_src.push(da_src);
                }
            }
        }

        let dw_self = input.t().dot(&dz) + &(&layer.w_self * l2);
        let db = dz.sum_axis(Axis(0));
        let mut grads = vec![dw_self.iter().copied().collect::<Vec<_>>(), db.to_vec()];
        for r in 0..RELATIONS {
            let dw = input.t().dot(&dm[r]) + &(&layer.w_rel[r] * l2);
            grads.push(dw.iter().copied().collect());
        }
        for a in dattn_dst.iter().chain(&dattn_src).chain(&dquery) {
            grads.push(a.to_vec());
        }
        let dinput = need_input_grad.then(|| {
            let mut dh = dz.dot(&layer.w_self.t());
            for r in 0..RELATIONS {
                dh += &dm[r].dot(&layer.w_rel[r].t());
            }
            dh
        });
        (grads, dinput)
    }
}
