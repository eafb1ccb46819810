//! Training of the message-passing teachers and their graph-free students.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gnn::{GnnConfig, GnnModel, GnnVariant};
use super::HeteroGraph;
use crate::error::{Error, Result};
use crate::nn::{train_mlp, Adam, Mlp, MlpShape, Objective, TrainConfig};
use crate::types::{softmax2, Label, LogitPair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnTrainConfig {
    pub variant: GnnVariant,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr: f64,
    /// Labelled nodes per optimizer step; every step runs the full graph.
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl GnnTrainConfig {
    pub fn new(variant: GnnVariant, seed: u64) -> Self {
        GnnTrainConfig {
            variant,
            hidden_dim: 128,
            layers: 2,
            dropout: 0.5,
            lr: 1e-3,
            batch_size: 128,
            epochs: 50,
            l2: 1e-5,
            seed,
        }
    }

    pub fn model_config(&self) -> GnnConfig {
        GnnConfig {
            variant: self.variant,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            dropout: self.dropout,
        }
    }
}

fn check_labeled(g: &HeteroGraph, labeled: &[(usize, Label)]) -> Result<()> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput("labelled nodes"));
    }
    if let Some(&(i, _)) = labeled.iter().find(|(i, _)| *i >= g.n_nodes()) {
        return Err(Error::InvariantViolation(format!("labelled node {i} outside graph")));
    }
    if labeled.iter().all(|(_, y)| *y == labeled[0].1) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

fn batch_objective(
    model: &GnnModel,
    g: &HeteroGraph,
    batch: &[(usize, Label)],
    l2: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let cache = model.forward_cached(g, rng)?;
    let n = batch.len() as f64;
    let mut dlogits = Array2::zeros((g.n_nodes(), 2));
    let mut loss = 0.0;
    for &(i, y) in batch {
        let z = [cache.logits[[i, 0]], cache.logits[[i, 1]]];
        let p = softmax2(z);
        let k = y.index();
        loss -= p[k].max(1e-300).ln();
        for c in 0..2 {
            dlogits[[i, c]] += (p[c] - if c == k { 1.0 } else { 0.0 }) / n;
        }
    }
    let grads = model.backward(g, &cache, &dlogits, l2);
    Ok((loss / n + 0.5 * l2 * model.weight_norm2(), grads))
}

/// Mean cross-entropy over `labeled` plus `l2/2` times the squared weight
/// norm, evaluated without dropout, and its gradient in
/// [`GnnModel::params_mut`] order.
pub fn gnn_loss_and_grad(
    model: &GnnModel,
    g: &HeteroGraph,
    labeled: &[(usize, Label)],
    l2: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_labeled(g, labeled)?;
    batch_objective(model, g, labeled, l2, None)
}

/// Trains a teacher on the labelled nodes. Returns the model and the
/// full-data objective after each epoch.
pub fn train_gnn(g: &HeteroGraph, labeled: &[(usize, Label)], cfg: &GnnTrainConfig) -> Result<(GnnModel, Vec<f64>)> {
    check_labeled(g, labeled)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut model = GnnModel::new(&cfg.model_config(), g.feature_dim(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(cfg.lr);
    let mut order = labeled.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grads) = batch_objective(&model, g, batch, cfg.l2, Some(&mut rng))?;
            adam.step(model.params_mut(), &grads);
        }
        history.push(batch_objective(&model, g, labeled, cfg.l2, None)?.0);
    }
    if model.param_vector().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvariantViolation("GNN training produced non-finite parameters".into()));
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    /// Insert one hidden layer of `hidden_dim` units; linear otherwise.
    pub use_hidden: bool,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lr: 5e-4,
            batch_size: 2048,
            epochs: 50,
            l2: 1e-5,
            use_hidden: false,
            hidden_dim: 1024,
            dropout: 0.3,
            lambda: 0.7,
            seed: 0,
        }
    }
}

/// Graph-free approximation of a teacher, fed the same node features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Student {
    pub net: Mlp,
}

/// Fits a student to `labels` and the frozen teacher probabilities, one row
/// of `x` per labelled node.
pub fn distill_student(
    x: &ArrayView2<f64>,
    teacher: &[[f64; 2]],
    labels: &[Label],
    cfg: &DistillConfig,
) -> Result<(Student, Vec<f64>)> {
    if !(0.0..=1.0).contains(&cfg.lambda) {
        return Err(Error::BadLambda(cfg.lambda));
    }
    if teacher.len() != labels.len() || x.nrows() != labels.len() {
        return Err(Error::dim(labels.len(), x.nrows().min(teacher.len())));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("distillation set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shape = MlpShape {
        input: x.ncols(),
        hidden: cfg.use_hidden.then_some(cfg.hidden_dim),
        dropout: cfg.dropout,
    };
    let mut net = Mlp::new(shape, &mut rng);
    let train = TrainConfig {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        l2: cfg.l2,
        seed: cfg.seed.wrapping_add(1),
    };
    let obj = Objective::Distill {
        labels,
        teacher,
        lambda: cfg.lambda,
    };
    let history = train_mlp(&mut net, x, &obj, &train)?;
    Ok((Student { net }, history))
}

pub fn predict_student(student: &Student, x: &[f64]) -> Result<LogitPair> {
    student.net.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    /// Two-cluster graph with label-homophilous edges. Feature 1 carries the
    /// label, feature 0 is noise.
    fn clustered(n: usize, seed: u64) -> (HeteroGraph, Vec<(usize, Label)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<Label> = (0..n).map(|i| Label::from_index(i % 2)).collect();
        let mut x = Array2::zeros((n, 3));
        for i in 0..n {
            x[[i, 0]] = rng.random_range(-1.0..1.0);
            x[[i, 1]] = if labels[i].is_bot() { 1.0 } else { -1.0 };
            x[[i, 2]] = 1.0;
        }
        let mut follows = Vec::new();
        for i in 0..n {
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                if j != i && labels[i] == labels[j] {
                    follows.push((j, i));
                }
            }
        }
        let ids = (0..n).map(|i| format!("n{i:03}")).collect();
        let g = HeteroGraph::from_parts(ids, x, follows).unwrap();
        (g, labels.into_iter().enumerate().collect())
    }

    #[test]
    fn training_reduces_loss_for_every_variant() {
        let (g, labeled) = clustered(60, 3);
        for v in [GnnVariant::MeanRelational, GnnVariant::AttnEdgeType, GnnVariant::AttnRelation] {
            let cfg = GnnTrainConfig {
                hidden_dim: 8,
                epochs: 30,
                batch_size: 16,
                lr: 1e-2,
                ..GnnTrainConfig::new(v, 1)
            };
            let (model, hist) = train_gnn(&g, &labeled, &cfg).unwrap();
            assert!(hist.last().unwrap() < &hist[0], "{v:?}: {hist:?}");
            let z = model.forward(&g).unwrap();
            let acc = labeled.iter().filter(|(i, y)| z[*i].argmax() == *y).count();
            assert!(acc >= 54, "{v:?} accuracy {acc}/60");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (g, labeled) = clustered(30, 9);
        let cfg = GnnTrainConfig {
            hidden_dim: 4,
            epochs: 3,
            ..GnnTrainConfig::new(GnnVariant::AttnEdgeType, 4)
        };
        let a = train_gnn(&g, &labeled, &cfg).unwrap();
        let b = train_gnn(&g, &labeled, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_labelled_sets() {
        let (g, _) = clustered(10, 1);
        let cfg = GnnTrainConfig::new(GnnVariant::MeanRelational, 0);
        assert!(matches!(train_gnn(&g, &[], &cfg), Err(Error::EmptyInput(_))));
        assert!(matches!(
            train_gnn(&g, &[(0, Label::Bot), (1, Label::Bot)], &cfg),
            Err(Error::SingleClass)
        ));
        assert!(train_gnn(&g, &[(0, Label::Bot), (99, Label::Human)], &cfg).is_err());
    }

    #[test]
    fn student_follows_teacher_when_lambda_zero() {
        let x = Array2::from_shape_fn((40, 2), |(i, j)| if j == 0 { (i % 2) as f64 } else { 1.0 });
        // teacher is confident in the opposite direction of the labels
        let labels: Vec<Label> = (0..40).map(|i| Label::from_index(i % 2)).collect();
        let teacher: Vec<[f64; 2]> = (0..40).map(|i| if i % 2 == 1 { [0.9, 0.1] } else { [0.1, 0.9] }).collect();
        let cfg = DistillConfig {
            lr: 0.05,
            batch_size: 8,
            epochs: 60,
            dropout: 0.0,
            lambda: 0.0,
            ..DistillConfig::default()
        };
        let (s, hist) = distill_student(&x.view(), &teacher, &labels, &cfg).unwrap();
        assert!(hist.last().unwrap() < &0.05);
        let p = predict_student(&s, &[1.0, 1.0]).unwrap().softmax();
        assert!((p.human() - 0.9).abs() < 0.05);
    }

    #[test]
    fn distill_rejects_bad_lambda() {
        let x = Array2::zeros((2, 1));
        let cfg = DistillConfig {
            lambda: -0.1,
            ..DistillConfig::default()
        };
        assert!(matches!(
            distill_student(&x.view(), &[[0.5, 0.5]; 2], &[Label::Bot, Label::Human], &cfg),
            Err(Error::BadLambda(_))
        ));
    }
}
