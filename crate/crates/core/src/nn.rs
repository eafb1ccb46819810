//! Small dense networks with hand-written gradients, the Adam optimizer, and
//! the two training objectives used by the text heads and graph students.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{log_softmax2, softmax2, Label, LogitPair};

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

pub fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Glorot-uniform matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// Affine map `x W + b` with `W` stored input-major (`in x out`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Dense {
            w: glorot(input, output, rng),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    /// One leaky-ReLU hidden layer of this width, or a plain linear map.
    pub hidden: Option<usize>,
    pub dropout: f64,
}

/// Two-way classifier: linear, or one hidden layer then linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Option<Dense>,
    pub out: Dense,
    pub dropout: f64,
}

struct MlpCache {
    input: Array2<f64>,
    pre: Option<Array2<f64>>,
    mask: Option<Array2<f64>>,
    hidden: Option<Array2<f64>>,
}

impl Mlp {
    /// Zero-initialised when linear, Glorot-initialised when it has a hidden layer.
    pub fn new(shape: MlpShape, rng: &mut impl Rng) -> Self {
        match shape.hidden {
            None => Mlp {
                hidden: None,
                out: Dense::zeros(shape.input, 2),
                dropout: shape.dropout,
            },
            Some(h) => Mlp {
                hidden: Some(Dense::glorot(shape.input, h, rng)),
                out: Dense::glorot(h, 2, rng),
                dropout: shape.dropout,
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.out).input_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.out.is_finite() && self.hidden.as_ref().is_none_or(Dense::is_finite)
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::dim(self.input_dim(), got));
        }
        Ok(())
    }

    pub fn logits(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(x.ncols())?;
        Ok(self.forward_cached(x, None).0)
    }

    pub fn predict(&self, x: &[f64]) -> Result<LogitPair> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let z = self.logits(&view)?;
        Ok(LogitPair::new(z[[0, 0]], z[[0, 1]]))
    }

    fn forward_cached(&self, x: &ArrayView2<f64>, rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, MlpCache) {
        match &self.hidden {
            None => (
                self.out.forward(x),
                MlpCache {
                    input: x.to_owned(),
                    pre: None,
                    mask: None,
                    hidden: None,
                },
            ),
            Some(h) => {
                let pre = h.forward(x);
                let mut act = pre.mapv(leaky);
                let mask = rng.filter(|_| self.dropout > 0.0).map(|rng| {
                    let keep = 1.0 - self.dropout;
                    let m = Array2::from_shape_fn(act.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    act *= &m;
                    m
                });
                let z = self.out.forward(&act.view());
                (
                    z,
                    MlpCache {
                        input: x.to_owned(),
                        pre: Some(pre),
                        mask,
                        hidden: Some(act),
                    },
                )
            }
        }
    }

    /// Gradients (same layout as [`Mlp::params`]) of a loss whose logit
    /// gradient is `dz`, plus the L2 term `l2/2 * |W|^2` over weight matrices.
    fn backward(&self, cache: &MlpCache, dz: &Array2<f64>, l2: f64) -> Vec<Vec<f64>> {
        let feed = cache.hidden.as_ref().unwrap_or(&cache.input);
        let dw_out = feed.t().dot(dz) + &(&self.out.w * l2);
        let db_out = dz.sum_axis(Axis(0));
        match &self.hidden {
            None => vec![flat(dw_out), db_out.to_vec()],
            Some(h) => {
                let mut dh = dz.dot(&self.out.w.t());
                if let Some(m) = &cache.mask {
                    dh *= m;
                }
                let pre = cache.pre.as_ref().expect("hidden cache");
                dh.zip_mut_with(pre, |g, &p| *g *= leaky_grad(p));
                let dw1 = cache.input.t().dot(&dh) + &(&h.w * l2);
                let db1 = dh.sum_axis(Axis(0));
                vec![flat(dw1), db1.to_vec(), flat(dw_out), db_out.to_vec()]
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(h) = &mut self.hidden {
            out.push(h.w.as_slice_mut().expect("standard layout"));
            out.push(h.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.out.w.as_slice_mut().expect("standard layout"));
        out.push(self.out.b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn params(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.push(h.w.iter().copied().collect());
            out.push(h.b.to_vec());
        }
        out.push(self.out.w.iter().copied().collect());
        out.push(self.out.b.to_vec());
        out
    }

    fn weight_norm2(&self) -> f64 {
        let sq = |d: &Dense| d.w.iter().map(|v| v * v).sum::<f64>();
        sq(&self.out) + self.hidden.as_ref().map_or(0.0, sq)
    }
}

fn flat(a: Array2<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    }
}

/// What a two-way classifier is trained to minimise.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Softmax cross-entropy against hard labels.
    CrossEntropy { labels: &'a [Label] },
    /// `lambda * CE(student, y) + (1 - lambda) * KL(student || teacher)`.
    Distill {
        labels: &'a [Label],
        teacher: &'a [[f64; 2]],
        lambda: f64,
    },
}

impl Objective<'_> {
    fn len(&self) -> usize {
        match self {
            Objective::CrossEntropy { labels } | Objective::Distill { labels, .. } => labels.len(),
        }
    }

    /// Loss for one sample and its gradient with respect to the logits.
    fn sample(&self, i: usize, z: [f64; 2]) -> (f64, [f64; 2]) {
        let logp = log_softmax2(z);
        let p = softmax2(z);
        match *self {
            Objective::CrossEntropy { labels } => {
                let y = labels[i].index();
                let mut g = p;
                g[y] -= 1.0;
                (-logp[y], g)
            }
            Objective::Distill { labels, teacher, lambda } => {
                let y = labels[i].index();
                let logt = teacher_log(teacher[i]);
                let kl = p[0] * (logp[0] - logt[0]) + p[1] * (logp[1] - logt[1]);
                let mut g = [0.0; 2];
                for c in 0..2 {
                    let ce_g = p[c] - if c == y { 1.0 } else { 0.0 };
                    let kl_g = p[c] * (logp[c] - logt[c] - kl);
                    g[c] = lambda * ce_g + (1.0 - lambda) * kl_g;
                }
                (lambda * -logp[y] + (1.0 - lambda) * kl, g)
            }
        }
    }
}

fn teacher_log(t: [f64; 2]) -> [f64; 2] {
    [t[0].max(1e-300).ln(), t[1].max(1e-300).ln()]
}

/// Summed distillation loss over a batch given raw student logits and
/// frozen teacher probabilities.
pub fn distillation_loss(student: &[LogitPair], teacher: &[[f64; 2]], labels: &[Label], lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::BadLambda(lambda));
    }
    if student.len() != labels.len() || teacher.len() != labels.len() {
        return Err(Error::dim(labels.len(), student.len().min(teacher.len())));
    }
    let obj = Objective::Distill { labels, teacher, lambda };
    Ok(student.iter().enumerate().map(|(i, z)| obj.sample(i, z.0).0).sum())
}

/// Mean objective over `rows` plus `l2/2 * |W|^2`, and its parameter gradient.
pub fn loss_and_grad(mlp: &Mlp, x: &ArrayView2<f64>, rows: &[usize], obj: &Objective, l2: f64) -> (f64, Vec<Vec<f64>>) {
    batch_loss_and_grad(mlp, x, rows, obj, l2, None)
}

fn batch_loss_and_grad(
    mlp: &Mlp,
    x: &ArrayView2<f64>,
    rows: &[usize],
    obj: &Objective,
    l2: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (f64, Vec<Vec<f64>>) {
    let xb = x.select(Axis(0), rows);
    let (z, cache) = mlp.forward_cached(&xb.view(), rng);
    let n = rows.len() as f64;
    let mut dz = Array2::zeros((rows.len(), 2));
    let mut loss = 0.0;
    for (k, &i) in rows.iter().enumerate() {
        let (l, g) = obj.sample(i, [z[[k, 0]], z[[k, 1]]]);
        loss += l;
        dz[[k, 0]] = g[0] / n;
        dz[[k, 1]] = g[1] / n;
    }
    let grads = mlp.backward(&cache, &dz, l2);
    (loss / n + 0.5 * l2 * mlp.weight_norm2(), grads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            debug_assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Mini-batch Adam. Returns the full-data objective (no dropout) after each epoch.
pub fn train_mlp(mlp: &mut Mlp, x: &ArrayView2<f64>, obj: &Objective, cfg: &TrainConfig) -> Result<Vec<f64>> {
    if x.nrows() != obj.len() {
        return Err(Error::dim(obj.len(), x.nrows()));
    }
    mlp.check(x.ncols())?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let all = order.clone();
    let mut adam = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grads) = batch_loss_and_grad(mlp, x, batch, obj, cfg.l2, Some(&mut rng));
            adam.step(mlp.params_mut(), &grads);
        }
        history.push(loss_and_grad(mlp, x, &all, obj, cfg.l2).0);
    }
    if !mlp.is_finite() {
        return Err(Error::InvariantViolation("training produced non-finite parameters".into()));
    }
    Ok(history)
}
