//! End-to-end training: split, fit every channel, distil the graph
//! teachers, calibrate, and fit the combination weights.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};

use crate::bundle::{Bundle, InputEncoder, Manifest, ScoreTable, SubModel, UserInputs, BUNDLE_VERSION};
use crate::calibration::{apply_temperature, expected_calibration_error, fit_temperature, Temperature};
use crate::config::Config;
use crate::ensemble::{fit_weights, sub_model_key, Channel, EnsembleWeights};
use crate::error::{Error, Result};
use crate::features::{compute_features, fit_normalizer, FEATURE_NAMES, VERIFIED_INDEX};
use crate::graph::{build_graph, distill_student, train_gnn, DistillConfig, GnnTrainConfig};
use crate::ingest::{split_train_val, EdgeList, UserStore};
use crate::tabular::{train_adaboost, train_forest, BoostConfig, ForestConfig, TabularModel};
use crate::text::{train_text_head, TextHeadConfig};
use crate::types::{Label, LogitPair};

/// Per-stream seeds derived from the master seed.
fn derive_seed(master: u64, stream: u64) -> u64 {
    master
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        ^ stream
}

/// Diagnostics gathered while training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_val: usize,
    /// Full-data training objective per epoch, by sub-model or teacher key.
    pub loss_history: BTreeMap<String, Vec<f64>>,
    /// Student/teacher argmax agreement on validation nodes.
    pub student_agreement: BTreeMap<String, f64>,
    pub calibration: CalibrationReport,
    pub nll_history: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationReport {
    pub temperatures: BTreeMap<String, f64>,
    pub ece_before: BTreeMap<String, f64>,
    pub ece_after: BTreeMap<String, f64>,
}

fn labels_of(store: &UserStore) -> Vec<Label> {
    store.users().map(|u| u.label.expect("split keeps labelled users")).collect()
}

/// The (train, validation) split [`train_bundle`] uses for `cfg`.
pub fn training_split(store: &UserStore, cfg: &Config) -> Result<(UserStore, UserStore)> {
    split_train_val(store, cfg.split.val_fraction, derive_seed(cfg.seed, 1))
}

/// Trains every sub-model on a labelled store and returns a calibrated,
/// weighted bundle. `store` must carry labels; `edges` may mention users
/// outside it (they are dropped).
pub fn train_bundle(store: &UserStore, edges: &EdgeList, cfg: &Config) -> Result<(Bundle, TrainReport)> {
    cfg.validate()?;
    let (train, val) = training_split(store, cfg)?;
    let y_train = labels_of(&train);
    let y_val = labels_of(&val);
    if y_train.iter().all(|l| *l == y_train[0]) {
        return Err(Error::SingleClass);
    }
    let mut report = TrainReport {
        n_train: train.len(),
        n_val: val.len(),
        ..TrainReport::default()
    };

    let raw_train: Vec<_> = train.users().map(compute_features).collect();
    let normalizer = fit_normalizer(&raw_train)?;
    let x_train: Vec<Vec<f64>> = raw_train.iter().map(|r| r.to_vec()).collect();
    let mut models = BTreeMap::new();

    let forest = train_forest(
        &x_train,
        &y_train,
        &ForestConfig {
            n_trees: cfg.forest.n_trees,
            max_depth: cfg.forest.max_depth,
            max_features: None,
            bootstrap: cfg.forest.bootstrap,
            seed: derive_seed(cfg.seed, 2),
        },
    )?;
    models.insert(
        sub_model_key(Channel::Feature, "forest"),
        SubModel::Tabular {
            model: TabularModel::Forest(forest),
        },
    );
    let boost = train_adaboost(
        &x_train,
        &y_train,
        &BoostConfig {
            rounds: cfg.adaboost.rounds,
            features: None,
            seed: derive_seed(cfg.seed, 3),
        },
    )?;
    models.insert(
        sub_model_key(Channel::Feature, "adaboost"),
        SubModel::Tabular {
            model: TabularModel::Boost(boost),
        },
    );
    let baseline = train_adaboost(
        &x_train,
        &y_train,
        &BoostConfig {
            rounds: 1,
            features: Some(vec![VERIFIED_INDEX]),
            seed: 0,
        },
    )?;

    // every user of the labelled store becomes a graph node; only the
    // training side contributes labels
    let encoder = InputEncoder::new(
        normalizer.clone(),
        &cfg.graph.node_text_provider,
        cfg.text.providers.iter().map(String::as_str),
        cfg.text.dim,
    )?;
    let nodes = store.subset(train.ids().chain(val.ids()))?;
    let inputs: BTreeMap<&str, UserInputs> = nodes
        .users()
        .map(|u| Ok((u.id.as_str(), encoder.encode(u)?)))
        .collect::<Result<_>>()?;
    let stack = |ids: &mut dyn Iterator<Item = &str>, f: &dyn Fn(&UserInputs) -> &[f64]| -> Array2<f64> {
        let rows: Vec<&[f64]> = ids.map(|id| f(&inputs[id])).collect();
        let width = rows.first().map_or(0, |r| r.len());
        Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("rectangular rows")
    };

    let text_cfg = TextHeadConfig {
        lr: cfg.text.lr,
        batch_size: cfg.text.batch_size,
        epochs: cfg.text.epochs,
        l2: cfg.text.l2,
        use_hidden: cfg.text.use_hidden,
        hidden_dim: cfg.text.hidden_dim,
        dropout: cfg.text.dropout,
    };
    for (k, provider) in cfg.text.providers.iter().enumerate() {
        let x = stack(&mut train.ids(), &|u| u.text[provider].as_slice());
        let (head, hist) = train_text_head(&x.view(), &y_train, &text_cfg, derive_seed(cfg.seed, 10 + k as u64))?;
        let key = sub_model_key(Channel::Text, provider);
        report.loss_history.insert(key.clone(), hist);
        models.insert(
            key,
            SubModel::Text {
                provider: provider.clone(),
                head,
            },
        );
    }

    let node_x = stack(&mut nodes.ids(), &|u| u.node.as_slice());
    let graph = build_graph(&nodes, &edges.restrict_to(&nodes), node_x)?;
    let labeled: Vec<(usize, Label)> = train
        .labeled()
        .map(|(u, l)| (graph.index_of(&u.id).expect("node exists"), l))
        .collect();
    let train_rows: Vec<usize> = labeled.iter().map(|(i, _)| *i).collect();
    let val_rows: Vec<usize> = val.ids().map(|id| graph.index_of(id).expect("node exists")).collect();
    let student_x = graph.features.select(Axis(0), &train_rows);
    let mut archive = BTreeMap::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (k, variant) in cfg.graph.variants.iter().enumerate() {
        let count = seen.entry(variant.name()).or_default();
        let key = sub_model_key(Channel::Graph, &format!("{}-{}", variant.name(), count));
        *count += 1;
        let gcfg = GnnTrainConfig {
            variant: *variant,
            hidden_dim: cfg.graph.hidden_dim,
            layers: cfg.graph.layers,
            dropout: cfg.graph.dropout,
            lr: cfg.graph.lr,
            batch_size: cfg.graph.batch_size,
            epochs: cfg.graph.epochs,
            l2: cfg.graph.l2,
            seed: derive_seed(cfg.seed, 20 + k as u64),
        };
        let (teacher, hist) = train_gnn(&graph, &labeled, &gcfg)?;
        report.loss_history.insert(format!("{key}/teacher"), hist);
        let teacher_z = teacher.forward(&graph)?;
        let soft: Vec<[f64; 2]> = train_rows.iter().map(|&i| teacher_z[i].softmax().0).collect();
        let dcfg = DistillConfig {
            lr: cfg.distill.lr,
            batch_size: cfg.distill.batch_size,
            epochs: cfg.distill.epochs,
            l2: cfg.distill.l2,
            use_hidden: cfg.distill.use_hidden,
            hidden_dim: cfg.distill.hidden_dim,
            dropout: cfg.distill.dropout,
            lambda: cfg.distill.lambda,
            seed: derive_seed(cfg.seed, 40 + k as u64),
        };
        let (student, hist) = distill_student(&student_x.view(), &soft, &y_train, &dcfg)?;
        report.loss_history.insert(key.clone(), hist);
        let agree = val_rows
            .iter()
            .filter(|&&i| {
                let z = student.net.predict(graph.features.row(i).as_slice().expect("contiguous row"));
                z.map(|z| z.argmax() == teacher_z[i].argmax()).unwrap_or(false)
            })
            .count();
        report
            .student_agreement
            .insert(key.clone(), agree as f64 / val_rows.len().max(1) as f64);
        archive.insert(format!("{key}/teacher"), teacher);
        models.insert(
            key,
            SubModel::Student {
                variant: *variant,
                student,
            },
        );
    }

    let keys: Vec<String> = models.keys().cloned().collect();
    let manifest = Manifest {
        version: BUNDLE_VERSION.to_string(),
        sub_models: keys.clone(),
        temperatures: keys.iter().map(|k| (k.clone(), Temperature::IDENTITY)).collect(),
        weights: EnsembleWeights::uniform(keys.iter().map(String::as_str))?,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        normalizer,
        embedding_dim: cfg.text.dim,
        node_text_provider: cfg.graph.node_text_provider.clone(),
        archived: archive.keys().cloned().collect(),
        verified_baseline: Some(baseline),
    };
    let mut bundle = Bundle {
        manifest,
        models,
        archive,
    };
    bundle.validate()?;

    let scores = bundle.score_store(&val)?;
    report.calibration = calibrate(&mut bundle, &scores, &y_val, cfg.calibration.ece_bins)?;
    report.nll_history = refit_weights(&mut bundle, &scores, &y_val, cfg)?;
    Ok((bundle, report))
}

/// Fits one temperature per sub-model on labelled scores (in the table's
/// id order) and stores them in the bundle.
pub fn calibrate(bundle: &mut Bundle, scores: &ScoreTable, y: &[Label], bins: usize) -> Result<CalibrationReport> {
    let ids: Vec<&str> = scores.rows.keys().map(String::as_str).collect();
    let mut report = CalibrationReport::default();
    for (k, key) in scores.keys.iter().enumerate() {
        let z = scores.column(k, ids.iter().copied())?;
        let t = fit_temperature(&z, y)?;
        let probs = |t: Temperature| z.iter().map(|z| apply_temperature(*z, t)).collect::<Vec<_>>();
        report
            .ece_before
            .insert(key.clone(), expected_calibration_error(&probs(Temperature::IDENTITY), y, bins)?);
        report.ece_after.insert(key.clone(), expected_calibration_error(&probs(t), y, bins)?);
        report.temperatures.insert(key.clone(), t.value());
        bundle.manifest.temperatures.insert(key.clone(), t);
    }
    Ok(report)
}

/// Refits the combination weights on labelled scores with the bundle's
/// current temperatures. Returns the NLL after each accepted step.
pub fn refit_weights(bundle: &mut Bundle, scores: &ScoreTable, y: &[Label], cfg: &Config) -> Result<Vec<f64>> {
    let temps = bundle.temperatures();
    let ids: Vec<&str> = scores.rows.keys().map(String::as_str).collect();
    let probs = (0..scores.keys.len())
        .map(|k| {
            Ok(scores
                .column(k, ids.iter().copied())?
                .into_iter()
                .map(|z| apply_temperature(z, temps[k]))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_weights(&scores.keys, &probs, y, &cfg.weights)?;
    bundle.manifest.weights = fit.weights;
    bundle.validate()?;
    Ok(fit.nll_history)
}

/// Labels of `store` in id order, failing on any unlabelled user.
pub fn require_labels(store: &UserStore) -> Result<Vec<Label>> {
    store
        .users()
        .map(|u| u.label.ok_or(Error::MissingField("label")))
        .collect()
}

/// Argmax predictions of one sub-model's raw logits.
pub fn argmax_all(z: &[LogitPair]) -> Vec<Label> {
    z.iter().map(|z| z.argmax()).collect()
}
