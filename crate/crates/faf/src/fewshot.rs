//! Test-time protocol: single-step fast adaptation of the generalized
//! module on a task's support segment, query prediction, and RMSE / MAE /
//! MAPE reporting per task and in aggregate.

use serde::{Deserialize, Serialize};

use crate::data::{self, NormStats, TaskSeries, WindowPair};
use crate::error::{FafError, Result};
use crate::exec::{par_map, ExecMode};
use crate::model::{AdaptedGkm, FafModel, RoutingDecision};
use crate::numerics::tape::Tape;
use crate::numerics::tensor::{Parameter, Tensor};

pub const MAPE_GUARD: f64 = 1e-8;

/// Few-shot protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Observations forming the support segment (default 16).
    pub support_len: usize,
    /// Observations scored as the query segment; must equal the model's
    /// output length (default 8).
    pub query_len: usize,
    /// Learning rate for the single adaptation step.
    pub adapt_lr: f64,
    /// Input length for adaptation windows cut from the support segment.
    /// When smaller than the model's input length, windows are left-padded
    /// with zeros. `None` uses the model input length unchanged (which
    /// with a 16-point support and a 16-in/8-out model yields zero
    /// windows, degrading adaptation to a warned no-op).
    pub adapt_input_len: Option<usize>,
    /// Compute metrics on de-normalized (original-scale) values.
    pub denormalize: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            support_len: 16,
            query_len: 8,
            adapt_lr: 1e-3,
            adapt_input_len: None,
            denormalize: true,
        }
    }
}

/// Per-task adapted state: a copy of the generalized module's parameters
/// after one support gradient step. The shared model is never modified.
#[derive(Debug, Clone)]
pub struct AdaptedTaskModel {
    pub task_id: String,
    pub gkm: Option<AdaptedGkm>,
    /// Set when adaptation was requested but no support window existed.
    pub no_support_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// Percent.
    pub mape: f64,
    /// True when some |y_i| fell below the MAPE denominator guard.
    pub mape_guard_engaged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: String,
    pub metrics: TaskMetrics,
    pub routing: RoutingDecision,
    pub adapted: bool,
    pub no_support_warning: bool,
    /// Query targets and predictions, original scale when denormalizing.
    pub targets: Vec<f64>,
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_task: Vec<TaskEval>,
    /// Unweighted means of the per-task metrics.
    pub aggregate: TaskMetrics,
}

fn check_lengths(y: &[f64], y_hat: &[f64], what: &str) -> Result<()> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(FafError::ShapeMismatch {
            expected: vec![y.len()],
            got: vec![y_hat.len()],
            context: what.into(),
        });
    }
    Ok(())
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat, "rmse")?;
    let n = y.len() as f64;
    Ok((y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt())
}

pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_lengths(y, y_hat, "mae")?;
    let n = y.len() as f64;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// MAPE in percent with denominator guard `max(|y_i|, 1e-8)`; also
/// reports whether the guard engaged.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<(f64, bool)> {
    check_lengths(y, y_hat, "mape")?;
    let n = y.len() as f64;
    let mut guard = false;
    let sum: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(a, b)| {
            let denom = if a.abs() < MAPE_GUARD {
                guard = true;
                MAPE_GUARD
            } else {
                a.abs()
            };
            (a - b).abs() / denom
        })
        .sum();
    Ok((100.0 / n * sum, guard))
}

pub fn task_metrics(y: &[f64], y_hat: &[f64]) -> Result<TaskMetrics> {
    let (mape, guard) = mape(y, y_hat)?;
    Ok(TaskMetrics {
        rmse: rmse(y, y_hat)?,
        mae: mae(y, y_hat)?,
        mape,
        mape_guard_engaged: guard,
    })
}

/// Adaptation windows cut from the support segment. When
/// `adapt_input_len` is below the model input length, window inputs are
/// left-padded with zeros up to the model input length.
pub fn make_adapt_windows(
    support: &[f64],
    model_input_len: usize,
    output_len: usize,
    adapt_input_len: Option<usize>,
) -> Result<Vec<WindowPair>> {
    let eff_in = adapt_input_len.unwrap_or(model_input_len).min(model_input_len);
    if eff_in == 0 {
        return Err(FafError::Config("adapt_input_len must be positive".into()));
    }
    if support.len() < eff_in + output_len {
        return Ok(Vec::new());
    }
    let mut windows = data::make_windows("support", support, eff_in, output_len)?;
    if eff_in < model_input_len {
        let pad = model_input_len - eff_in;
        for w in &mut windows {
            let mut padded = vec![0.0; pad];
            padded.extend_from_slice(w.input.data());
            w.input = Tensor::vector(padded);
        }
    }
    Ok(windows)
}

/// Mean MSE of the generalized module's output over the given windows,
/// optionally with adapted parameters. This is the quantity the
/// adaptation step descends.
pub fn support_loss(
    model: &FafModel,
    adapted: Option<&AdaptedGkm>,
    windows: &[WindowPair],
) -> Result<f64> {
    let mut sum = 0.0;
    for w in windows {
        let z = model.generalized_forward(&w.input, adapted)?;
        let n = z.len() as f64;
        sum += z
            .data()
            .iter()
            .zip(w.target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
    }
    Ok(sum / windows.len().max(1) as f64)
}

/// One gradient step on a copy of the generalized module's parameters,
/// descending the mean support MSE. Router, regions, and fusion are
/// untouched; the shared model is read-only.
pub fn fast_adapt(
    model: &FafModel,
    task_id: &str,
    support_windows: &[WindowPair],
    lr: f64,
) -> Result<AdaptedTaskModel> {
    if !model.config.use_generalized {
        return Ok(AdaptedTaskModel {
            task_id: task_id.into(),
            gkm: None,
            no_support_warning: false,
        });
    }
    let indices = model.generalized_param_indices();
    let mut temp: Vec<Parameter> =
        indices.iter().map(|i| model.params()[*i].clone()).collect();
    for p in &mut temp {
        p.zero_grad();
    }
    let current: AdaptedGkm = temp.iter().map(|p| p.value.clone()).collect();
    if support_windows.is_empty() {
        return Ok(AdaptedTaskModel {
            task_id: task_id.into(),
            gkm: Some(current),
            no_support_warning: true,
        });
    }

    let mut tape = Tape::new();
    let mut loss_sum = None;
    for w in support_windows {
        let z = model.generalized_forward_tape_external(&mut tape, &temp, w.input.data())?;
        let l = tape.mse_const(z, w.target.data().to_vec())?;
        loss_sum = Some(match loss_sum {
            Some(acc) => tape.add(acc, l),
            None => l,
        });
    }
    let loss = tape.mul_const(loss_sum.unwrap(), 1.0 / support_windows.len() as f64);
    tape.backward(loss, &mut temp);
    for p in &mut temp {
        crate::numerics::sgd_step(p, lr);
    }

    Ok(AdaptedTaskModel {
        task_id: task_id.into(),
        gkm: Some(temp.into_iter().map(|p| p.value).collect()),
        no_support_warning: false,
    })
}

fn predict_query(
    model: &FafModel,
    normalized: &[f64],
    cfg: &AdaptConfig,
) -> Result<(Vec<f64>, Vec<f64>, RoutingDecision, AdaptedTaskModel)> {
    if cfg.query_len != model.config.output_len {
        return Err(FafError::Config(format!(
            "query_len ({}) must equal the model output length ({})",
            cfg.query_len, model.config.output_len
        )));
    }
    if cfg.support_len < model.config.input_len {
        return Err(FafError::Config(format!(
            "support_len ({}) is shorter than the model input length ({}); no prediction window exists",
            cfg.support_len, model.config.input_len
        )));
    }
    let (support, query, _) = data::split_support_query(normalized, cfg.support_len, cfg.query_len)?;
    let windows = make_adapt_windows(
        &support,
        model.config.input_len,
        model.config.output_len,
        cfg.adapt_input_len,
    )?;
    let adapted = fast_adapt(model, "", &windows, cfg.adapt_lr)?;
    let x = Tensor::vector(support[support.len() - model.config.input_len..].to_vec());
    let (pred, routing) = model.compose_predict(&x, adapted.gkm.as_ref())?;
    Ok((pred.data().to_vec(), query, routing, adapted))
}

/// Full protocol for one task: normalize, split support/query, adapt,
/// predict, and score on de-normalized values (unless configured
/// otherwise).
pub fn evaluate_task(
    model: &FafModel,
    series: &TaskSeries,
    norm: &NormStats,
    cfg: &AdaptConfig,
) -> Result<TaskEval> {
    let normalized = data::apply_norm(&series.values, norm);
    let (pred_n, query_n, routing, adapted) = predict_query(model, &normalized, cfg)?;
    let (predictions, targets) = if cfg.denormalize {
        (data::inverse_norm(&pred_n, norm), data::inverse_norm(&query_n, norm))
    } else {
        (pred_n, query_n)
    };
    let metrics = task_metrics(&targets, &predictions)?;
    Ok(TaskEval {
        task_id: series.task_id.clone(),
        metrics,
        routing,
        adapted: adapted.gkm.is_some() && !adapted.no_support_warning,
        no_support_warning: adapted.no_support_warning,
        targets,
        predictions,
    })
}

/// Post-adaptation query MSE on the normalized scale; the quantity used
/// for validation-based early stopping.
pub fn query_mse(model: &FafModel, series: &TaskSeries, norm: &NormStats, cfg: &AdaptConfig) -> Result<f64> {
    let normalized = data::apply_norm(&series.values, norm);
    let (pred, query, _, _) = predict_query(model, &normalized, cfg)?;
    let n = query.len() as f64;
    Ok(pred.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Evaluates every test task (optionally in parallel; each task clones
/// the adapted parameters, the shared model is read-only) and reports
/// per-task metrics plus their unweighted mean, sorted by task id.
pub fn evaluate_suite(
    model: &FafModel,
    tasks: &[TaskSeries],
    norm: &NormStats,
    cfg: &AdaptConfig,
    mode: ExecMode,
) -> Result<MetricsReport> {
    if tasks.is_empty() {
        return Err(FafError::Data("evaluate_suite: no test tasks".into()));
    }
    let results: Vec<Result<TaskEval>> =
        par_map(mode, tasks.to_vec(), |t| evaluate_task(model, &t, norm, cfg));
    let mut per_task = results.into_iter().collect::<Result<Vec<_>>>()?;
    per_task.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let n = per_task.len() as f64;
    let aggregate = TaskMetrics {
        rmse: per_task.iter().map(|t| t.metrics.rmse).sum::<f64>() / n,
        mae: per_task.iter().map(|t| t.metrics.mae).sum::<f64>() / n,
        mape: per_task.iter().map(|t| t.metrics.mape).sum::<f64>() / n,
        mape_guard_engaged: per_task.iter().any(|t| t.metrics.mape_guard_engaged),
    };
    Ok(MetricsReport { per_task, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small_model() -> FafModel {
        FafModel::new(
            ModelConfig {
                input_len: 4,
                output_len: 2,
                num_regions: 3,
                top_k: 2,
                hidden_general: 5,
                hidden_region: 3,
                use_generalized: true,
            },
            7,
        )
        .unwrap()
    }

    fn small_cfg() -> AdaptConfig {
        AdaptConfig {
            support_len: 8,
            query_len: 2,
            adapt_lr: 1e-3,
            adapt_input_len: None,
            denormalize: true,
        }
    }

    #[test]
    fn metric_worked_example() {
        let y = [1.0, 2.0];
        let y_hat = [2.0, 3.0];
        assert_eq!(rmse(&y, &y_hat).unwrap(), 1.0);
        assert_eq!(mae(&y, &y_hat).unwrap(), 1.0);
        let (m, guard) = mape(&y, &y_hat).unwrap();
        assert!((m - 75.0).abs() < 1e-12);
        assert!(!guard);
    }

    #[test]
    fn perfect_prediction_all_zero() {
        let y = [1.5, -2.0, 3.0];
        let m = task_metrics(&y, &y).unwrap();
        assert_eq!((m.rmse, m.mae, m.mape), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mape_guard_engages_on_zero_target() {
        let (m, guard) = mape(&[0.0], &[1.0]).unwrap();
        assert!(guard);
        assert!(m.is_finite());
    }

    #[test]
    fn metric_length_mismatch_is_an_error() {
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn metrics_match_naive_oracle() {
        // independent direct-summation implementations
        let naive_rmse = |y: &[f64], p: &[f64]| {
            let mut s = 0.0;
            for i in 0..y.len() {
                s += (y[i] - p[i]).powi(2);
            }
            (s / y.len() as f64).sqrt()
        };
        let naive_mae = |y: &[f64], p: &[f64]| {
            let mut s = 0.0;
            for i in 0..y.len() {
                s += (y[i] - p[i]).abs();
            }
            s / y.len() as f64
        };
        let mut state = 99u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 5.0
        };
        for _ in 0..20 {
            let y: Vec<f64> = (0..16).map(|_| next()).collect();
            let p: Vec<f64> = (0..16).map(|_| next()).collect();
            assert!((rmse(&y, &p).unwrap() - naive_rmse(&y, &p)).abs() < 1e-12);
            assert!((mae(&y, &p).unwrap() - naive_mae(&y, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_lr_adaptation_is_identity() {
        let model = small_model();
        let support: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).sin()).collect();
        let windows = make_adapt_windows(&support, 4, 2, None).unwrap();
        assert!(!windows.is_empty());
        let adapted = fast_adapt(&model, "t", &windows, 0.0).unwrap();
        let gkm = adapted.gkm.unwrap();
        for (i, idx) in model.generalized_param_indices().iter().enumerate() {
            assert_eq!(gkm[i].data(), model.params()[*idx].value.data());
        }
    }

    #[test]
    fn empty_support_is_warned_noop() {
        let model = small_model();
        let adapted = fast_adapt(&model, "t", &[], 1e-3).unwrap();
        assert!(adapted.no_support_warning);
        let gkm = adapted.gkm.unwrap();
        for (i, idx) in model.generalized_param_indices().iter().enumerate() {
            assert_eq!(gkm[i].data(), model.params()[*idx].value.data());
        }
    }

    #[test]
    fn adaptation_step_matches_manual_descent() {
        // support loss after one step at small lr must not increase,
        // and must equal loss(W - lr * grad) computed by hand
        let model = small_model();
        let support: Vec<f64> = (0..8).map(|i| 0.5 + 0.1 * i as f64).collect();
        let windows = make_adapt_windows(&support, 4, 2, None).unwrap();
        let before = support_loss(&model, None, &windows).unwrap();

        let lr = 1e-3;
        let adapted = fast_adapt(&model, "t", &windows, lr).unwrap();
        let after = support_loss(&model, adapted.gkm.as_ref(), &windows).unwrap();
        assert!(after <= before, "after {after} > before {before}");

        // finite-difference directional check: loss decreases along -grad
        let h = 1e-7;
        let shrunk = fast_adapt(&model, "t", &windows, h).unwrap();
        let tiny = support_loss(&model, shrunk.gkm.as_ref(), &windows).unwrap();
        assert!(tiny < before);
    }

    #[test]
    fn adaptation_isolation_across_tasks() {
        let model = small_model();
        let norm = NormStats::identity();
        let cfg = small_cfg();
        let mk = |id: &str, phase: f64| TaskSeries {
            task_id: id.into(),
            values: (0..10).map(|i| (i as f64 * 0.4 + phase).sin()).collect(),
            origin_dataset: "t".into(),
        };
        let a = mk("a", 0.0);
        let b = mk("b", 1.0);
        let b_alone = evaluate_task(&model, &b, &norm, &cfg).unwrap();
        let _ = evaluate_task(&model, &a, &norm, &cfg).unwrap();
        let b_after = evaluate_task(&model, &b, &norm, &cfg).unwrap();
        assert_eq!(b_alone.metrics, b_after.metrics);
    }

    #[test]
    fn suite_aggregate_is_mean_of_tasks() {
        let model = small_model();
        let norm = NormStats::identity();
        let cfg = small_cfg();
        let tasks: Vec<TaskSeries> = (0..4)
            .map(|i| TaskSeries {
                task_id: format!("t{i}"),
                values: (0..10).map(|t| 1.0 + (t as f64 * 0.3 + i as f64).sin()).collect(),
                origin_dataset: "t".into(),
            })
            .collect();
        let report = evaluate_suite(&model, &tasks, &norm, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(report.per_task.len(), 4);
        let mean: f64 = report.per_task.iter().map(|t| t.metrics.rmse).sum::<f64>() / 4.0;
        assert_eq!(report.aggregate.rmse, mean);

        // single task: aggregate == that task
        let one = evaluate_suite(&model, &tasks[..1], &norm, &cfg, ExecMode::Sequential).unwrap();
        assert_eq!(one.aggregate, one.per_task[0].metrics);
    }

    #[test]
    fn parallel_and_sequential_reports_agree() {
        let model = small_model();
        let norm = NormStats::identity();
        let cfg = small_cfg();
        let tasks: Vec<TaskSeries> = (0..6)
            .map(|i| TaskSeries {
                task_id: format!("t{i}"),
                values: (0..12).map(|t| (t as f64 * 0.2 + i as f64 * 0.5).cos()).collect(),
                origin_dataset: "t".into(),
            })
            .collect();
        let seq = evaluate_suite(&model, &tasks, &norm, &cfg, ExecMode::Sequential).unwrap();
        let par = evaluate_suite(&model, &tasks, &norm, &cfg, ExecMode::Parallel).unwrap();
        for (a, b) in seq.per_task.iter().zip(&par.per_task) {
            assert_eq!(a.metrics, b.metrics);
        }
    }

    #[test]
    fn no_generalized_model_ignores_support() {
        let mut cfg_model = small_model().config.clone();
        cfg_model.use_generalized = false;
        let model = FafModel::new(cfg_model, 7).unwrap();
        let norm = NormStats::identity();
        let series = TaskSeries {
            task_id: "t".into(),
            values: (0..10).map(|t| (t as f64 * 0.3).sin()).collect(),
            origin_dataset: "t".into(),
        };
        let with = evaluate_task(&model, &series, &norm, &small_cfg()).unwrap();
        let cfg2 = AdaptConfig { adapt_lr: 0.0, ..small_cfg() };
        let without = evaluate_task(&model, &series, &norm, &cfg2).unwrap();
        assert_eq!(with.metrics, without.metrics);
        assert!(!with.adapted);
    }

    #[test]
    fn default_lengths_degrade_to_warned_noop() {
        // 16-point support cannot hold a full 16-in/8-out window
        let model = FafModel::new(ModelConfig::default(), 0).unwrap();
        let series = TaskSeries {
            task_id: "t".into(),
            values: (0..24).map(|t| t as f64 * 0.01).collect(),
            origin_dataset: "t".into(),
        };
        let eval = evaluate_task(&model, &series, &NormStats::identity(), &AdaptConfig::default())
            .unwrap();
        assert!(eval.no_support_warning);
        assert!(!eval.adapted);

        // shrinking the adaptation window re-enables adaptation
        let cfg = AdaptConfig { adapt_input_len: Some(8), ..AdaptConfig::default() };
        let eval = evaluate_task(&model, &series, &NormStats::identity(), &cfg).unwrap();
        assert!(eval.adapted);
    }
}
