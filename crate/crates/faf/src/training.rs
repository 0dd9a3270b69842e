//! Meta-training loop: averaged meta-updates for the generalized module,
//! routed per-task updates for the functional regions, end-to-end router
//! and fusion training, and the load-balance-regularized loss.
//!
//! The differentiable balance term uses soft counts (summed routing
//! probabilities over the batch); hard activation counts are
//! piecewise-constant and only logged.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NormStats, TaskSeries, WindowPair};
use crate::error::{FafError, Result};
use crate::fewshot::{query_mse, AdaptConfig};
use crate::model::FafModel;
use crate::numerics::optim::{adam_step, clip_gradients, sgd_step, AdamState};
use crate::numerics::tape::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Tasks per meta-iteration (B).
    pub batch_tasks: usize,
    /// Meta learning rate for the generalized module (beta).
    pub meta_lr: f64,
    /// Learning rate for regions, router, and fusion (alpha).
    pub task_lr: f64,
    /// Weight of the load-balance term (lambda).
    pub balance_weight: f64,
    pub max_grad_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_tasks: 4,
            meta_lr: 1e-5,
            task_lr: 1e-3,
            balance_weight: 1e-5,
            max_grad_norm: 1.0,
            max_epochs: 500,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_tasks == 0 {
            return Err(FafError::Config("batch_tasks must be at least 1".into()));
        }
        if self.meta_lr <= 0.0 || self.task_lr <= 0.0 {
            return Err(FafError::Config("learning rates must be positive".into()));
        }
        if self.balance_weight < 0.0 {
            return Err(FafError::Config("balance_weight must be non-negative".into()));
        }
        if self.max_grad_norm <= 0.0 {
            return Err(FafError::Config("max_grad_norm must be positive".into()));
        }
        if self.patience == 0 {
            return Err(FafError::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// One training task's windowed history.
#[derive(Debug, Clone)]
pub struct TaskWindows {
    pub task_id: String,
    pub windows: Vec<WindowPair>,
}

/// Region usage in one iteration: hard activations (k per routed
/// forward) and summed routing probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageCounter {
    pub hard_counts: Vec<u64>,
    pub soft_counts: Vec<f64>,
}

impl UsageCounter {
    fn new(n: usize) -> Self {
        UsageCounter { hard_counts: vec![0; n], soft_counts: vec![0.0; n] }
    }

    pub fn merge(&mut self, other: &UsageCounter) {
        for (a, b) in self.hard_counts.iter_mut().zip(&other.hard_counts) {
            *a += b;
        }
        for (a, b) in self.soft_counts.iter_mut().zip(&other.soft_counts) {
            *a += b;
        }
    }
}

/// Differentiable-in-soft-counts balance penalty: sum_j (count_j - mean)^2.
pub fn balance_loss(counts: &[f64]) -> f64 {
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    counts.iter().map(|c| (c - mean) * (c - mean)).sum()
}

pub fn mse_loss(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() || y.is_empty() {
        return Err(FafError::ShapeMismatch {
            expected: vec![y.len()],
            got: vec![y_hat.len()],
            context: "mse_loss".into(),
        });
    }
    Ok(y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

pub fn total_loss(mse: f64, balance: f64, lambda: f64) -> f64 {
    mse + lambda * balance
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepStats {
    pub mse: f64,
    pub balance: f64,
    pub total: f64,
    pub clip_factor: f64,
    pub usage: UsageCounter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub train_balance: f64,
    pub train_total: f64,
    pub val_loss: f64,
    pub usage: UsageCounter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Adam states aligned with the model's parameter store. The generalized
/// module's entries exist but are bypassed: its meta-update is the plain
/// averaged-gradient step so the applied update stays exactly
/// beta * mean(per-task gradients).
pub struct Optimizer {
    pub states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(model: &FafModel, task_lr: f64) -> Self {
        let states = model
            .params()
            .iter()
            .map(|p| AdamState::new(p.value.shape().to_vec(), task_lr))
            .collect();
        Optimizer { states }
    }
}

/// One meta-iteration over a batch of tasks.
///
/// The batch loss is `mean_i(task MSE) + lambda * balance(soft counts)`,
/// built on one tape so a single backward pass yields: the averaged
/// per-task gradient for the generalized module (the balance term does
/// not reach it), per-region gradients only from the windows routed to
/// that region, and end-to-end gradients for router and fusion. After
/// global-norm clipping, the generalized module takes a plain step at
/// `meta_lr` and everything else an Adam step at `task_lr`; regions with
/// no activation this batch are left bitwise untouched.
pub fn meta_train_step(
    model: &mut FafModel,
    opt: &mut Optimizer,
    batch: &[&TaskWindows],
    cfg: &TrainConfig,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(FafError::Data("meta_train_step: empty batch".into()));
    }
    for t in batch {
        if t.windows.is_empty() {
            return Err(FafError::Data(format!("task `{}` has no training windows", t.task_id)));
        }
    }
    model.zero_grads();

    let n_regions = model.config.num_regions;
    let mut usage = UsageCounter::new(n_regions);
    let mut tape = Tape::new();
    let mut soft_node = None;
    let mut batch_mse_sum = None;

    for task in batch {
        let mut task_sum = None;
        for w in &task.windows {
            let pred = model.compose_on_tape(&mut tape, w.input.data())?;
            for j in &pred.decision.active {
                usage.hard_counts[*j] += 1;
            }
            soft_node = Some(match soft_node {
                Some(acc) => tape.add(acc, pred.probabilities),
                None => pred.probabilities,
            });
            let l = tape.mse_const(pred.output, w.target.data().to_vec())?;
            task_sum = Some(match task_sum {
                Some(acc) => tape.add(acc, l),
                None => l,
            });
        }
        let task_loss = tape.mul_const(task_sum.unwrap(), 1.0 / task.windows.len() as f64);
        batch_mse_sum = Some(match batch_mse_sum {
            Some(acc) => tape.add(acc, task_loss),
            None => task_loss,
        });
    }

    let batch_mse = tape.mul_const(batch_mse_sum.unwrap(), 1.0 / batch.len() as f64);
    let soft_node = soft_node.unwrap();
    usage.soft_counts = tape.value(soft_node).to_vec();
    let balance = tape.balance_loss(soft_node);
    let weighted_balance = tape.mul_const(balance, cfg.balance_weight);
    let total = tape.add(batch_mse, weighted_balance);

    let stats = StepStats {
        mse: tape.scalar(batch_mse),
        balance: tape.scalar(balance),
        total: tape.scalar(total),
        clip_factor: 1.0,
        usage,
    };
    if !stats.total.is_finite() {
        return Err(FafError::NonFinite {
            context: format!(
                "training step loss (mse = {}, balance = {}, tasks = {:?})",
                stats.mse,
                stats.balance,
                batch.iter().map(|t| t.task_id.as_str()).collect::<Vec<_>>()
            ),
        });
    }

    tape.backward(total, model.params_mut());
    let clip_factor = clip_gradients(model.params_mut().iter_mut(), cfg.max_grad_norm);

    // generalized module: averaged-gradient step at meta_lr
    let gkm: Vec<usize> = model.generalized_param_indices();
    for idx in &gkm {
        sgd_step(&mut model.params_mut()[*idx], cfg.meta_lr);
    }

    // active regions only, at task_lr
    let mut stepped: Vec<usize> = Vec::new();
    for j in 0..n_regions {
        if stats.usage.hard_counts[j] > 0 {
            stepped.extend(model.region_param_indices(j));
        }
    }
    stepped.extend(model.rank_param_indices());
    stepped.extend(model.fusion_param_indices());
    for idx in stepped {
        adam_step(&mut opt.states[idx], &mut model.params_mut()[idx]);
    }

    Ok(StepStats { clip_factor, ..stats })
}

/// Inputs to the training loop: windowed training tasks plus normalized
/// validation series for the early-stopping protocol.
pub struct TrainData {
    pub train: Vec<TaskWindows>,
    pub val: Vec<TaskSeries>,
    /// Stats the validation series are normalized with. Validation loss
    /// is computed on the normalized scale.
    pub norm: NormStats,
}

/// Epochs of shuffled task batches with validation-based early stopping.
/// Each epoch places every training task in exactly one batch. On
/// return, the model holds the best-validation parameters; the log
/// records every epoch.
pub fn train(
    model: &mut FafModel,
    opt: &mut Optimizer,
    data: &TrainData,
    cfg: &TrainConfig,
    adapt: &AdaptConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(FafError::Data("train: no training tasks".into()));
    }
    if data.val.is_empty() {
        return Err(FafError::Data("train: no validation tasks".into()));
    }
    let val_adapt = AdaptConfig { denormalize: false, ..adapt.clone() };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_5eed));
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut best_params: Option<Vec<crate::numerics::Parameter>> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);

        let mut usage = UsageCounter::new(model.config.num_regions);
        let mut mse_sum = 0.0;
        let mut balance_sum = 0.0;
        let mut total_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_tasks) {
            let batch: Vec<&TaskWindows> = chunk.iter().map(|i| &data.train[*i]).collect();
            let stats = meta_train_step(model, opt, &batch, cfg)?;
            usage.merge(&stats.usage);
            mse_sum += stats.mse;
            balance_sum += stats.balance;
            total_sum += stats.total;
            steps += 1;
        }

        let mut val_sum = 0.0;
        for series in &data.val {
            val_sum += query_mse(model, series, &data.norm, &val_adapt)?;
        }
        let val_loss = val_sum / data.val.len() as f64;

        log.epochs.push(EpochLog {
            epoch,
            train_mse: mse_sum / steps as f64,
            train_balance: balance_sum / steps as f64,
            train_total: total_sum / steps as f64,
            val_loss,
            usage,
        });

        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best_params = Some(model.params().to_vec());
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    if let Some(best) = best_params {
        for (p, b) in model.params_mut().iter_mut().zip(best) {
            *p = b;
        }
    }
    Ok(log)
}

/// Builds normalized training windows for the given task ids.
pub fn build_task_windows(
    series: &[TaskSeries],
    task_ids: &[String],
    norm: &NormStats,
    input_len: usize,
    output_len: usize,
) -> Result<Vec<TaskWindows>> {
    let mut out = Vec::with_capacity(task_ids.len());
    for id in task_ids {
        let s = series
            .iter()
            .find(|s| &s.task_id == id)
            .ok_or_else(|| FafError::Data(format!("task `{id}` not found in loaded data")))?;
        let normalized = crate::data::apply_norm(&s.values, norm);
        out.push(TaskWindows {
            task_id: id.clone(),
            windows: crate::data::make_windows(id, &normalized, input_len, output_len)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_windows;
    use crate::model::ModelConfig;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_len: 4,
            output_len: 2,
            num_regions: 4,
            top_k: 2,
            hidden_general: 5,
            hidden_region: 3,
            use_generalized: true,
        }
    }

    fn task(id: &str, phase: f64) -> TaskWindows {
        let values: Vec<f64> = (0..20).map(|t| (t as f64 * 0.4 + phase).sin()).collect();
        TaskWindows { task_id: id.into(), windows: make_windows(id, &values, 4, 2).unwrap() }
    }

    fn cfg() -> TrainConfig {
        TrainConfig { max_epochs: 3, patience: 2, ..TrainConfig::default() }
    }

    #[test]
    fn loss_helpers() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[0.0], &[3.0]).unwrap(), 9.0);
        assert!(mse_loss(&[0.0], &[1.0, 2.0]).is_err());

        assert_eq!(balance_loss(&[2.0, 2.0, 2.0, 2.0]), 0.0);
        assert_eq!(balance_loss(&[4.0, 0.0]), 8.0);
        assert_eq!(balance_loss(&[1.0, 5.0, 3.0]), balance_loss(&[3.0, 1.0, 5.0]));

        assert_eq!(total_loss(1.0, 8.0, 0.0), 1.0);
        assert_eq!(total_loss(1.0, 0.0, 1e-5), 1.0);
        assert!((total_loss(1.0, 8.0, 1e-5) - 1.00008).abs() < 1e-12);
    }

    #[test]
    fn identical_tasks_average_to_single_task_gradient() {
        // two tasks with identical data: averaged GKM gradient equals
        // either task's own gradient, so B=1 and B=2 apply the same update
        let t1 = task("a", 0.0);
        let t2 = TaskWindows { task_id: "b".into(), windows: t1.windows.clone() };
        let cfg = TrainConfig { max_grad_norm: 1e9, ..cfg() };

        let mut m1 = FafModel::new(small_config(), 5).unwrap();
        let mut o1 = Optimizer::new(&m1, cfg.task_lr);
        meta_train_step(&mut m1, &mut o1, &[&t1], &cfg).unwrap();

        let mut m2 = FafModel::new(small_config(), 5).unwrap();
        let mut o2 = Optimizer::new(&m2, cfg.task_lr);
        meta_train_step(&mut m2, &mut o2, &[&t1, &t2], &cfg).unwrap();

        for idx in m1.generalized_param_indices() {
            let a = m1.params()[idx].value.data();
            let b = m2.params()[idx].value.data();
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn inactive_regions_are_bitwise_unchanged() {
        let mut model = FafModel::new(small_config(), 9).unwrap();
        let mut opt = Optimizer::new(&model, 1e-3);
        let before: Vec<Vec<u64>> = (0..4)
            .map(|j| {
                model
                    .region_param_indices(j)
                    .iter()
                    .flat_map(|i| model.params()[*i].value.data().iter().map(|v| v.to_bits()))
                    .collect()
            })
            .collect();
        let t = task("a", 0.3);
        let stats = meta_train_step(&mut model, &mut opt, &[&t], &cfg()).unwrap();
        for j in 0..4 {
            let after: Vec<u64> = model
                .region_param_indices(j)
                .iter()
                .flat_map(|i| model.params()[*i].value.data().iter().map(|v| v.to_bits()))
                .collect();
            if stats.usage.hard_counts[j] == 0 {
                assert_eq!(before[j], after, "inactive region {j} changed");
            } else {
                assert_ne!(before[j], after, "active region {j} unchanged");
            }
        }
    }

    #[test]
    fn hard_counts_are_k_per_forward() {
        let mut model = FafModel::new(small_config(), 1).unwrap();
        let mut opt = Optimizer::new(&model, 1e-3);
        let t1 = task("a", 0.0);
        let t2 = task("b", 2.0);
        let stats = meta_train_step(&mut model, &mut opt, &[&t1, &t2], &cfg()).unwrap();
        let forwards = (t1.windows.len() + t2.windows.len()) as u64;
        assert_eq!(stats.usage.hard_counts.iter().sum::<u64>(), 2 * forwards);
        assert!(stats.usage.soft_counts.iter().all(|c| *c >= 0.0));
        let soft_total: f64 = stats.usage.soft_counts.iter().sum();
        assert!((soft_total - forwards as f64).abs() < 1e-9);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut model = FafModel::new(small_config(), 0).unwrap();
        let mut opt = Optimizer::new(&model, 1e-3);
        assert!(meta_train_step(&mut model, &mut opt, &[], &cfg()).is_err());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let run = || {
            let mut model = FafModel::new(small_config(), 0).unwrap();
            let mut opt = Optimizer::new(&model, 1e-3);
            let data = TrainData {
                train: (0..6).map(|i| task(&format!("t{i}"), i as f64)).collect(),
                val: vec![TaskSeries {
                    task_id: "v".into(),
                    values: (0..12).map(|t| (t as f64 * 0.4).sin()).collect(),
                    origin_dataset: "t".into(),
                }],
                norm: NormStats::identity(),
            };
            let adapt = AdaptConfig {
                support_len: 8,
                query_len: 2,
                adapt_lr: 1e-3,
                adapt_input_len: None,
                denormalize: false,
            };
            let log = train(&mut model, &mut opt, &data, &cfg(), &adapt).unwrap();
            let bits: Vec<u64> = model
                .params()
                .iter()
                .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
                .collect();
            (serde_json::to_string(&log).unwrap(), bits)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn patience_one_stops_after_first_regression() {
        // patience 1 with worsening validation: expect early stop
        let mut model = FafModel::new(small_config(), 2).unwrap();
        let mut opt = Optimizer::new(&model, 1e-3);
        let data = TrainData {
            train: (0..4).map(|i| task(&format!("t{i}"), i as f64)).collect(),
            val: vec![TaskSeries {
                task_id: "v".into(),
                values: (0..12).map(|t| (t as f64 * 0.4).sin()).collect(),
                origin_dataset: "t".into(),
            }],
            norm: NormStats::identity(),
        };
        let adapt = AdaptConfig {
            support_len: 8,
            query_len: 2,
            adapt_lr: 1e-3,
            adapt_input_len: None,
            denormalize: false,
        };
        let cfg = TrainConfig { max_epochs: 200, patience: 1, ..TrainConfig::default() };
        let log = train(&mut model, &mut opt, &data, &cfg, &adapt).unwrap();
        if log.stopped_early {
            let last = log.epochs.len();
            assert_eq!(last, log.best_epoch + 1);
        }
    }
}
