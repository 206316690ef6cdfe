use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{loss_and_gradients, predict_example, Example, FusionMode};
use super::params::ModelParams;
use crate::autodiff::{clip_global_norm, AdamHyper, Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, PredictionBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub fusion: FusionMode,
    pub optimizer: OptimizerKind,
    pub adam: AdamHyper,
    pub epochs: usize,
    /// Documents per optimizer step; gradients are summed over the batch.
    pub batch_size: usize,
    /// Global gradient-norm cap, applied per step when set.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub threshold: f64,
    pub ks: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            fusion: FusionMode::Attention,
            optimizer: OptimizerKind::Adam,
            adam: AdamHyper::default(),
            epochs: 20,
            batch_size: 1,
            clip_norm: Some(5.0),
            seed: 0,
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            ks: vec![5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-document loss over the epoch, measured before each update.
    pub train_loss: f64,
    pub val: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation micro-F1, or the
    /// final parameters when there is no validation set.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub log: Vec<EpochLog>,
}

fn check_examples(params: &ModelParams, examples: &[Example], mode: FusionMode) -> Result<()> {
    let dims = &params.dims;
    for ex in examples {
        if ex.labels.len() != dims.n_labels {
            return Err(Error::shape("example labels", &[ex.labels.len()], &[dims.n_labels]));
        }
        if mode.uses_trees() && ex.leaves.len() != dims.n_trees {
            return Err(Error::shape("example leaves", &[ex.leaves.len()], &[dims.n_trees]));
        }
    }
    Ok(())
}

pub fn train(
    mut params: ModelParams,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::NoTrainingRecords);
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    check_examples(&params, train_set, config.fusion)?;
    check_examples(&params, val_set, config.fusion)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Optimizer::new(config.optimizer, config.adam, params.tensors());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc: Option<Vec<Vec<f64>>> = None;
            for &i in batch {
                let ex = &train_set[i];
                let (loss, grads) = loss_and_gradients(&params, ex, config.fusion)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        example: ex.admission_id.clone(),
                        detail: format!("loss = {loss}"),
                    });
                }
                total_loss += loss;
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (a, g) in a.iter_mut().zip(&grads) {
                            a.iter_mut().zip(g).for_each(|(a, g)| *a += g);
                        }
                    }
                }
            }
            let mut grads = acc.expect("chunks are nonempty");
            let norm = match config.clip_norm {
                Some(max) => clip_global_norm(&mut grads, max),
                None => 0.0,
            };
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    example: train_set[batch[0]].admission_id.clone(),
                    detail: "non-finite gradient norm".into(),
                });
            }
            optimizer.step(&mut params.tensors_mut(), &grads)?;
            if !params.is_finite() {
                let bad = params
                    .named()
                    .find(|(_, t)| !t.is_finite())
                    .map(|(n, _)| n)
                    .unwrap_or("?");
                return Err(Error::NonFiniteLoss {
                    epoch,
                    example: train_set[batch[0]].admission_id.clone(),
                    detail: format!("parameter {bad} became non-finite"),
                });
            }
        }

        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&params, val_set, config.fusion, config.threshold, &config.ks)?)
        };
        if let Some(report) = &val {
            let better = best.as_ref().map_or(true, |(f, _, _)| report.micro_f1 >= *f);
            if better {
                best = Some((report.micro_f1, epoch, params.clone()));
            }
        }
        log.push(EpochLog {
            epoch,
            train_loss: total_loss / train_set.len() as f64,
            val,
        });
    }

    let (best_epoch, best) = match best {
        Some((_, e, p)) => (e, p),
        None => (config.epochs, params.clone()),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        log,
    })
}

pub fn predict_probs(params: &ModelParams, examples: &[Example], mode: FusionMode) -> Result<Vec<Vec<f64>>> {
    examples.iter().map(|ex| predict_example(params, ex, mode)).collect()
}

pub fn evaluate(
    params: &ModelParams,
    examples: &[Example],
    mode: FusionMode,
    threshold: f64,
    ks: &[usize],
) -> Result<MetricsReport> {
    let probs = predict_probs(params, examples, mode)?;
    let gold = examples.iter().map(|e| e.labels.clone()).collect();
    MetricsReport::evaluate(&PredictionBatch::new(probs, gold)?, threshold, ks)
}

/// Per-epoch log as CSV. Undefined metrics are written as `nan`.
pub fn log_to_csv(log: &[EpochLog], ks: &[usize]) -> String {
    let mut s = String::from("epoch,train_loss,val_macro_auc,val_micro_auc,val_macro_f1,val_micro_f1");
    for k in ks {
        let _ = write!(s, ",val_p@{k}");
    }
    s.push('\n');
    for row in log {
        let _ = write!(s, "{},{}", row.epoch, row.train_loss);
        match &row.val {
            Some(r) => {
                for (_, v) in r.entries() {
                    let _ = write!(s, ",{v}");
                }
            }
            None => {
                for _ in 0..4 + ks.len() {
                    s.push_str(",nan");
                }
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    fn dims() -> ModelDims {
        ModelDims {
            vocab_size: 8,
            d_embed: 4,
            d_lstm: 3,
            d_tree: 3,
            d_leaf: 2,
            n_trees: 2,
            total_leaves: 4,
            n_labels: 3,
        }
    }

    fn example(id: &str, tokens: Vec<usize>, labels: Vec<f64>) -> Example {
        Example {
            admission_id: id.into(),
            tokens,
            leaves: vec![0, 3],
            labels,
        }
    }

    fn init(seed: u64) -> ModelParams {
        ModelParams::init(dims(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn single_example_memorized() {
        let ex = example("a", vec![1, 2, 3, 4], vec![1.0, 0.0, 1.0]);
        let cfg = TrainConfig {
            epochs: 200,
            adam: AdamHyper {
                lr: 0.01,
                ..AdamHyper::default()
            },
            ..TrainConfig::default()
        };
        let out = train(init(1), std::slice::from_ref(&ex), &[], &cfg).unwrap();
        let (loss, _) = loss_and_gradients(&out.last, &ex, cfg.fusion).unwrap();
        assert!(loss < 1e-2, "loss {loss}");
        assert_eq!(out.log.len(), 200);
        assert_eq!(out.best_epoch, 200);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let data = vec![
            example("a", vec![1, 2], vec![1.0, 0.0, 0.0]),
            example("b", vec![3], vec![0.0, 1.0, 0.0]),
        ];
        let cfg = TrainConfig {
            epochs: 3,
            ks: vec![1],
            optimizer: OptimizerKind::Sgd,
            adam: AdamHyper {
                lr: 0.0,
                ..AdamHyper::default()
            },
            ..TrainConfig::default()
        };
        let p = init(2);
        let out = train(p.clone(), &data, &data, &cfg).unwrap();
        assert_eq!(out.last, p);
        let losses: Vec<f64> = out.log.iter().map(|l| l.train_loss).collect();
        assert!(losses.iter().all(|&l| l == losses[0]));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let data = vec![
            example("a", vec![1, 2], vec![1.0, 0.0, 0.0]),
            example("b", vec![3, 5, 5], vec![0.0, 1.0, 1.0]),
            example("c", vec![7], vec![0.0, 0.0, 1.0]),
        ];
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            ks: vec![1, 3],
            ..TrainConfig::default()
        };
        let a = train(init(3), &data, &data, &cfg).unwrap();
        let b = train(init(3), &data, &data, &cfg).unwrap();
        assert_eq!(a.last, b.last);
        assert_eq!(a.log, b.log);
        assert!(a.best_epoch >= 1 && a.best_epoch <= 4);
        let csv = log_to_csv(&a.log, &cfg.ks);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("epoch,train_loss,val_macro_auc"));
    }

    #[test]
    fn input_errors() {
        let cfg = TrainConfig::default();
        assert!(matches!(train(init(0), &[], &[], &cfg), Err(Error::NoTrainingRecords)));
        let bad = example("a", vec![1], vec![1.0]);
        assert!(train(init(0), &[bad], &[], &cfg).is_err());
    }
}
