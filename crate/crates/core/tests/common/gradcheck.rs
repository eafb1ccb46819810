//! Central finite-difference checks of analytic gradients.

use std::cell::RefCell;

use botcensus_core::graph::{gnn_loss_and_grad, GnnConfig, GnnModel, GnnVariant, HeteroGraph};
use botcensus_core::nn::{loss_and_grad, Mlp, MlpShape, Objective};
use botcensus_core::Label;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
pub const RTOL: f64 = 1e-4;
/// Floor for gradients that are zero up to rounding.
const ATOL: f64 = 1e-8;

pub const VARIANTS: [GnnVariant; 3] = [GnnVariant::MeanRelational, GnnVariant::AttnEdgeType, GnnVariant::AttnRelation];

/// First mismatching (block, index, analytic, numeric), if any.
pub type Mismatch = Option<(usize, usize, f64, f64)>;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= RTOL * analytic.abs().max(numeric.abs()) + ATOL
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> HeteroGraph {
    let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0));
    let mut follows = Vec::new();
    for s in 0..n {
        for t in 0..n {
            if s != t && rng.random_bool(0.3) {
                follows.push((s, t));
            }
        }
    }
    let ids = (0..n).map(|i| format!("v{i}")).collect();
    HeteroGraph::from_parts(ids, x, follows).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<Label> {
    let mut y: Vec<Label> = (0..n).map(|_| Label::from_index(rng.random_range(0..2))).collect();
    y[0] = Label::Human;
    y[1] = Label::Bot;
    y
}

fn check_all(analytic: &[Vec<f64>], mut nudge: impl FnMut(usize, usize, f64), mut loss: impl FnMut() -> f64) -> Mismatch {
    for (b, block) in analytic.iter().enumerate() {
        for (i, &a) in block.iter().enumerate() {
            nudge(b, i, H);
            let up = loss();
            nudge(b, i, -2.0 * H);
            let down = loss();
            nudge(b, i, H);
            let numeric = (up - down) / (2.0 * H);
            if !close(a, numeric) {
                return Some((b, i, a, numeric));
            }
        }
    }
    None
}

/// One random small graph and model of `variant`, checked on every parameter.
pub fn gnn_instance(seed: u64, variant: GnnVariant) -> Mismatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..7);
    let dim = rng.random_range(2..4);
    let g = random_graph(&mut rng, n, dim);
    let labeled: Vec<(usize, Label)> = random_labels(&mut rng, n).into_iter().enumerate().collect();
    let cfg = GnnConfig {
        variant,
        hidden_dim: rng.random_range(2..4),
        layers: rng.random_range(1..3),
        dropout: 0.0,
    };
    let l2 = if rng.random_bool(0.5) { 0.0 } else { 1e-2 };
    let mut model = GnnModel::new(&cfg, dim, seed).unwrap();
    let (_, grads) = gnn_loss_and_grad(&model, &g, &labeled, l2).unwrap();
    let cell = RefCell::new(&mut model);
    check_all(
        &grads,
        |b, i, d| cell.borrow_mut().params_mut()[b][i] += d,
        || gnn_loss_and_grad(&cell.borrow(), &g, &labeled, l2).unwrap().0,
    )
}

/// One random text head (linear or one hidden layer) under cross-entropy or
/// the distillation objective.
pub fn text_head_instance(seed: u64) -> Mismatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..9);
    let dim = rng.random_range(2..6);
    let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(-2.0..2.0));
    let y = random_labels(&mut rng, n);
    let teacher: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let p = rng.random_range(0.05..0.95);
            [1.0 - p, p]
        })
        .collect();
    let shape = MlpShape {
        input: dim,
        hidden: rng.random_bool(0.5).then_some(3),
        dropout: 0.0,
    };
    let mut net = Mlp::new(shape, &mut rng);
    let obj = if rng.random_bool(0.3) {
        Objective::Distill {
            labels: &y,
            teacher: &teacher,
            lambda: 0.7,
        }
    } else {
        Objective::CrossEntropy { labels: &y }
    };
    let rows: Vec<usize> = (0..n).collect();
    let l2 = if rng.random_bool(0.5) { 0.0 } else { 1e-3 };
    let (_, grads) = loss_and_grad(&net, &x.view(), &rows, &obj, l2);
    let cell = RefCell::new(&mut net);
    check_all(
        &grads,
        |b, i, d| cell.borrow_mut().params_mut()[b][i] += d,
        || loss_and_grad(&cell.borrow(), &x.view(), &rows, &obj, l2).0,
    )
}
