//! Pipeline orchestration behind the CLI subcommands: data preparation,
//! training, evaluation, ablation sweeps, parameter accounting, and
//! synthetic-corpus generation. Every command persists the effective
//! config next to its outputs so any artifact can be reproduced from its
//! directory alone.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{self, CsvColumns, NormStats, SplitSpec, TaskSeries};
use crate::error::{FafError, Result};
use crate::exec::{par_map, ExecMode};
use crate::fewshot::{self, AdaptConfig, MetricsReport};
use crate::model::{FafModel, ModelConfig, ParamCounts};
use crate::synth::{self, SynthSpec};
use crate::training::{self, Optimizer, TrainConfig, TrainLog};

/// Every knob of a run, flat and fully serializable. A config file is
/// either JSON or a flat `key = value` document; CLI flags override
/// file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    // model
    pub input_len: usize,
    pub output_len: usize,
    pub num_regions: usize,
    pub top_k: usize,
    pub hidden_general: usize,
    pub hidden_region: usize,
    pub use_generalized: bool,
    // training
    pub batch_tasks: usize,
    pub meta_lr: f64,
    pub task_lr: f64,
    pub balance_weight: f64,
    pub max_grad_norm: f64,
    pub max_epochs: usize,
    pub patience: usize,
    // few-shot protocol
    pub support_len: usize,
    pub query_len: usize,
    pub adapt_lr: f64,
    pub adapt_input_len: Option<usize>,
    pub denormalize: bool,
    // misc
    pub seed: u64,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let a = AdaptConfig::default();
        RunConfig {
            input_len: m.input_len,
            output_len: m.output_len,
            num_regions: m.num_regions,
            top_k: m.top_k,
            hidden_general: m.hidden_general,
            hidden_region: m.hidden_region,
            use_generalized: m.use_generalized,
            batch_tasks: t.batch_tasks,
            meta_lr: t.meta_lr,
            task_lr: t.task_lr,
            balance_weight: t.balance_weight,
            max_grad_norm: t.max_grad_norm,
            max_epochs: t.max_epochs,
            patience: t.patience,
            support_len: a.support_len,
            query_len: a.query_len,
            adapt_lr: a.adapt_lr,
            adapt_input_len: a.adapt_input_len,
            denormalize: a.denormalize,
            seed: 0,
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_len: self.input_len,
            output_len: self.output_len,
            num_regions: self.num_regions,
            top_k: self.top_k,
            hidden_general: self.hidden_general,
            hidden_region: self.hidden_region,
            use_generalized: self.use_generalized,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_tasks: self.batch_tasks,
            meta_lr: self.meta_lr,
            task_lr: self.task_lr,
            balance_weight: self.balance_weight,
            max_grad_norm: self.max_grad_norm,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            support_len: self.support_len,
            query_len: self.query_len,
            adapt_lr: self.adapt_lr,
            adapt_input_len: self.adapt_input_len,
            denormalize: self.denormalize,
        }
    }

    pub fn exec_mode(&self) -> ExecMode {
        if self.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        if self.query_len != self.output_len {
            return Err(FafError::Config(format!(
                "query_len ({}) must equal output_len ({})",
                self.query_len, self.output_len
            )));
        }
        Ok(())
    }

    /// Parses a config document: JSON when it starts with `{`, otherwise
    /// flat `key = value` lines (`#` comments allowed).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        if text.trim_start().starts_with('{') {
            return serde_json::from_str(&text)
                .map_err(|e| FafError::Config(format!("{}: {e}", path.as_ref().display())));
        }
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                FafError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| FafError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    /// Sets a single field from its key-value form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| FafError::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "input_len" => self.input_len = parse(key, value)?,
            "output_len" => self.output_len = parse(key, value)?,
            "num_regions" => self.num_regions = parse(key, value)?,
            "top_k" => self.top_k = parse(key, value)?,
            "hidden_general" => self.hidden_general = parse(key, value)?,
            "hidden_region" => self.hidden_region = parse(key, value)?,
            "use_generalized" => self.use_generalized = parse(key, value)?,
            "batch_tasks" => self.batch_tasks = parse(key, value)?,
            "meta_lr" => self.meta_lr = parse(key, value)?,
            "task_lr" => self.task_lr = parse(key, value)?,
            "balance_weight" => self.balance_weight = parse(key, value)?,
            "max_grad_norm" => self.max_grad_norm = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "support_len" => self.support_len = parse(key, value)?,
            "query_len" => self.query_len = parse(key, value)?,
            "adapt_lr" => self.adapt_lr = parse(key, value)?,
            "adapt_input_len" => {
                self.adapt_input_len =
                    if value == "none" { None } else { Some(parse(key, value)?) }
            }
            "denormalize" => self.denormalize = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "parallel" => self.parallel = parse(key, value)?,
            _ => return Err(FafError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Flat key-value rendering, the same format `from_file` accepts.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let json = serde_json::to_value(self).expect("config serializes");
        for (k, v) in json.as_object().unwrap() {
            let rendered = match v {
                serde_json::Value::Null => "none".to_string(),
                other => other.to_string(),
            };
            let _ = writeln!(s, "{k} = {rendered}");
        }
        s
    }

    pub fn write_effective(&self, outdir: &Path) -> Result<()> {
        fs::create_dir_all(outdir)?;
        fs::write(
            outdir.join("config.json"),
            serde_json::to_string_pretty(self).expect("config serializes"),
        )?;
        Ok(())
    }
}

/// Writes a corpus in the standard long format.
pub fn write_corpus_csv(series: &[TaskSeries], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| FafError::Data(format!("cannot write {}: {e}", path.display())))?;
    w.write_record(["task_id", "time_index", "value"])
        .map_err(|e| FafError::Data(e.to_string()))?;
    for s in series {
        for (t, v) in s.values.iter().enumerate() {
            w.write_record([s.task_id.as_str(), &t.to_string(), &format!("{v}")])
                .map_err(|e| FafError::Data(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct SynthOutputs {
    pub corpus_csv: PathBuf,
    pub decomposition_json: PathBuf,
}

/// `synth`: generates the seeded corpus plus its ground-truth
/// decomposition sidecar.
pub fn cmd_synth(spec: &SynthSpec, outdir: &Path) -> Result<SynthOutputs> {
    fs::create_dir_all(outdir)?;
    let (series, decomposition) = synth::generate(spec)?;
    let corpus_csv = outdir.join("corpus.csv");
    write_corpus_csv(&series, &corpus_csv)?;
    let decomposition_json = outdir.join("decomposition.json");
    fs::write(
        &decomposition_json,
        serde_json::to_string(&serde_json::json!({
            "spec": spec,
            "decomposition": decomposition,
        }))
        .expect("decomposition serializes"),
    )?;
    Ok(SynthOutputs { corpus_csv, decomposition_json })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadSummary {
    pub n_tasks: usize,
    pub total_observations: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_tasks: usize,
    pub val_tasks: usize,
    pub test_tasks: usize,
    /// Observations beyond support+query on test tasks are unused.
    pub unused_test_observations: usize,
}

impl LoadSummary {
    pub fn render(&self) -> String {
        format!(
            "tasks: {} (train {}, val {}, test {})\n\
             observations: {} (task length {}..{})\n\
             unused test observations beyond support+query: {}\n",
            self.n_tasks,
            self.train_tasks,
            self.val_tasks,
            self.test_tasks,
            self.total_observations,
            self.min_len,
            self.max_len,
            self.unused_test_observations
        )
    }
}

pub struct PreparedData {
    pub series: Vec<TaskSeries>,
    pub splits: SplitSpec,
    pub norm: NormStats,
    pub summary: LoadSummary,
}

/// Shared front half of prepare/train/eval: load, partition, fit stats.
pub fn prepare_in_memory(csv: &Path, cfg: &RunConfig) -> Result<PreparedData> {
    let series = data::load_csv(csv, &CsvColumns::default())?;
    let task_ids: Vec<String> = series.iter().map(|s| s.task_id.clone()).collect();
    let splits = data::partition_tasks(&task_ids, cfg.seed)?;
    let train_refs: Vec<&TaskSeries> = series
        .iter()
        .filter(|s| splits.train_tasks.contains(&s.task_id))
        .collect();
    let norm = data::fit_norm(&train_refs)?;

    let need = cfg.support_len + cfg.query_len;
    let unused: usize = series
        .iter()
        .filter(|s| splits.test_tasks.contains(&s.task_id))
        .map(|s| s.values.len().saturating_sub(need))
        .sum();
    let summary = LoadSummary {
        n_tasks: series.len(),
        total_observations: series.iter().map(|s| s.values.len()).sum(),
        min_len: series.iter().map(|s| s.values.len()).min().unwrap_or(0),
        max_len: series.iter().map(|s| s.values.len()).max().unwrap_or(0),
        train_tasks: splits.train_tasks.len(),
        val_tasks: splits.val_tasks.len(),
        test_tasks: splits.test_tasks.len(),
        unused_test_observations: unused,
    };
    Ok(PreparedData { series, splits, norm, summary })
}

/// `prepare`: writes the split spec, normalization stats, and load
/// summary to disk.
pub fn cmd_prepare(csv: &Path, outdir: &Path, cfg: &RunConfig) -> Result<PreparedData> {
    let prepared = prepare_in_memory(csv, cfg)?;
    fs::create_dir_all(outdir)?;
    fs::write(
        outdir.join("splits.json"),
        serde_json::to_string_pretty(&prepared.splits).expect("splits serialize"),
    )?;
    fs::write(
        outdir.join("norm_stats.json"),
        serde_json::to_string_pretty(&prepared.norm).expect("stats serialize"),
    )?;
    fs::write(
        outdir.join("load_summary.json"),
        serde_json::to_string_pretty(&prepared.summary).expect("summary serializes"),
    )?;
    fs::write(outdir.join("load_summary.txt"), prepared.summary.render())?;
    cfg.write_effective(outdir)?;
    Ok(prepared)
}

pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub log: TrainLog,
}

/// `train`: full pipeline from CSV to best checkpoint + train log.
pub fn cmd_train(
    csv: &Path,
    outdir: &Path,
    cfg: &RunConfig,
    mut progress: impl FnMut(&str),
) -> Result<TrainOutputs> {
    cfg.validate()?;
    let prepared = prepare_in_memory(csv, cfg)?;
    fs::create_dir_all(outdir)?;
    cfg.write_effective(outdir)?;

    let mut model = FafModel::new(cfg.model_config(), cfg.seed)?;
    let mut opt = Optimizer::new(&model, cfg.task_lr);
    let train_windows = training::build_task_windows(
        &prepared.series,
        &prepared.splits.train_tasks,
        &prepared.norm,
        cfg.input_len,
        cfg.output_len,
    )?;
    let val: Vec<TaskSeries> = prepared
        .series
        .iter()
        .filter(|s| prepared.splits.val_tasks.contains(&s.task_id))
        .cloned()
        .collect();
    let data = training::TrainData { train: train_windows, val, norm: prepared.norm };

    let adapt = cfg.adapt_config();
    let train_cfg = cfg.train_config();
    let log = {
        let log = training::train(&mut model, &mut opt, &data, &train_cfg, &adapt)?;
        for e in &log.epochs {
            progress(&format!(
                "epoch {:4}  train_mse {:.6e}  balance {:.3e}  val {:.6e}",
                e.epoch, e.train_mse, e.train_balance, e.val_loss
            ));
        }
        progress(&format!(
            "best epoch {} (val {:.6e}){}",
            log.best_epoch,
            log.best_val_loss,
            if log.stopped_early { ", stopped early" } else { "" }
        ));
        log
    };

    let checkpoint = outdir.join("best.ckpt");
    Checkpoint {
        model,
        adam: Some(opt.states),
        norm: Some(prepared.norm),
        splits: Some(prepared.splits),
    }
    .save(&checkpoint)?;

    let train_log = outdir.join("train_log.json");
    fs::write(&train_log, serde_json::to_string_pretty(&log).expect("log serializes"))?;
    Ok(TrainOutputs { checkpoint, train_log, log })
}

pub struct EvalOutputs {
    pub report: MetricsReport,
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
    pub predictions_csv: Option<PathBuf>,
}

fn render_report(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<20} {:>12} {:>12} {:>12}  {}", "task", "rmse", "mae", "mape%", "active regions");
    for t in &report.per_task {
        let active = t
            .routing
            .active
            .iter()
            .map(|j| j.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let flag = if t.metrics.mape_guard_engaged { " (mape guard)" } else { "" };
        let _ = writeln!(
            s,
            "{:<20} {:>12.6} {:>12.6} {:>12.4}  [{}]{}",
            t.task_id, t.metrics.rmse, t.metrics.mae, t.metrics.mape, active, flag
        );
    }
    let a = &report.aggregate;
    let _ = writeln!(s, "{:<20} {:>12.6} {:>12.6} {:>12.4}", "AGGREGATE", a.rmse, a.mae, a.mape);
    s
}

/// `eval`: scores a checkpoint on its test tasks (the checkpoint's split
/// when the CSV contains those ids, otherwise every task in the CSV).
pub fn cmd_eval(
    ckpt_path: &Path,
    csv: &Path,
    outdir: &Path,
    cfg: &RunConfig,
    write_predictions_csv: bool,
) -> Result<EvalOutputs> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let series = data::load_csv(csv, &CsvColumns::default())?;
    let norm = ckpt.norm.unwrap_or_else(NormStats::identity);

    let tasks: Vec<TaskSeries> = match &ckpt.splits {
        Some(splits)
            if splits
                .test_tasks
                .iter()
                .all(|id| series.iter().any(|s| &s.task_id == id)) =>
        {
            series
                .iter()
                .filter(|s| splits.test_tasks.contains(&s.task_id))
                .cloned()
                .collect()
        }
        _ => series,
    };

    let report =
        fewshot::evaluate_suite(&ckpt.model, &tasks, &norm, &cfg.adapt_config(), cfg.exec_mode())?;

    fs::create_dir_all(outdir)?;
    cfg.write_effective(outdir)?;
    let report_json = outdir.join("report.json");
    fs::write(&report_json, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    let report_txt = outdir.join("report.txt");
    fs::write(&report_txt, render_report(&report))?;

    let predictions_csv = if write_predictions_csv {
        let path = outdir.join("predictions.csv");
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| FafError::Data(format!("cannot write {}: {e}", path.display())))?;
        w.write_record(["task_id", "horizon_step", "target", "prediction"])
            .map_err(|e| FafError::Data(e.to_string()))?;
        for t in &report.per_task {
            for (step, (y, p)) in t.targets.iter().zip(&t.predictions).enumerate() {
                w.write_record([
                    t.task_id.as_str(),
                    &(step + 1).to_string(),
                    &format!("{y}"),
                    &format!("{p}"),
                ])
                .map_err(|e| FafError::Data(e.to_string()))?;
            }
        }
        w.flush()?;
        Some(path)
    } else {
        None
    };

    Ok(EvalOutputs { report, report_json, report_txt, predictions_csv })
}

/// `params`: closed-form parameter accounting for a config (or the
/// config stored in a checkpoint).
pub fn cmd_params(config: &ModelConfig) -> (ParamCounts, String) {
    let counts = FafModel::count_from_config(config);
    let gkm = if config.use_generalized {
        format!(
            "({in_}*{hg} + {hg}) + ({hg}*{out} + {out})",
            in_ = config.input_len,
            hg = config.hidden_general,
            out = config.output_len
        )
    } else {
        "0".to_string()
    };
    let formula = format!(
        "total  = gkm + N*region + rank + fusion\n\
         gkm    = {gkm}\n\
         region = ({in_}*{hr} + {hr}) + ({hr}*{out} + {out})   [N = {n}, k = {k}]\n\
         rank   = {n}*{in_} + {n}\n\
         fusion = {out}*{out} + {out}\n\
         active = gkm + k*region + rank + fusion",
        in_ = config.input_len,
        hr = config.hidden_region,
        out = config.output_len,
        n = config.num_regions,
        k = config.top_k,
    );
    (counts, formula)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationGrid {
    /// S in {0, 1} x R in {2, 4, 8, 16} (top_k capped at R).
    ModuleRegions,
    /// (input, prediction) length settings (8/8, 8/16, 16/8, 16/16).
    Lengths,
}

fn ablation_cells(grid: AblationGrid, base: &RunConfig) -> Vec<(String, RunConfig)> {
    match grid {
        AblationGrid::ModuleRegions => {
            let mut cells = Vec::new();
            for s in [1usize, 0] {
                for r in [16usize, 8, 4, 2] {
                    let mut cfg = base.clone();
                    cfg.use_generalized = s == 1;
                    cfg.num_regions = r;
                    cfg.top_k = cfg.top_k.min(r);
                    cells.push((format!("S={s},R={r}"), cfg));
                }
            }
            cells
        }
        AblationGrid::Lengths => [(8usize, 8usize), (8, 16), (16, 8), (16, 16)]
            .iter()
            .map(|(l, h)| {
                let mut cfg = base.clone();
                cfg.input_len = *l;
                cfg.output_len = *h;
                cfg.query_len = *h;
                (format!("L={l},H={h}"), cfg)
            })
            .collect(),
    }
}

/// `ablate`: trains and evaluates one model per grid cell, emitting one
/// result row per cell. `filter` restricts to matching setting names.
pub fn cmd_ablate(
    csv: &Path,
    outdir: &Path,
    base: &RunConfig,
    grid: AblationGrid,
    filter: Option<&str>,
) -> Result<Vec<AblationRow>> {
    fs::create_dir_all(outdir)?;
    base.write_effective(outdir)?;
    let cells: Vec<(String, RunConfig)> = ablation_cells(grid, base)
        .into_iter()
        .filter(|(name, _)| filter.map_or(true, |f| f.split(';').any(|x| x.trim() == name)))
        .collect();
    if cells.is_empty() {
        return Err(FafError::Config("ablation grid filter matched no cells".into()));
    }

    let csv = csv.to_path_buf();
    let outdir_owned = outdir.to_path_buf();
    let rows: Vec<Result<AblationRow>> = par_map(base.exec_mode(), cells, move |(name, cfg)| {
        let cell_dir = outdir_owned.join(name.replace([',', '='], "_"));
        let mut cell_cfg = cfg;
        cell_cfg.parallel = false; // cell-level parallelism only
        let out = cmd_train(&csv, &cell_dir, &cell_cfg, |_| {})?;
        let eval = cmd_eval(&out.checkpoint, &csv, &cell_dir, &cell_cfg, false)?;
        Ok(AblationRow {
            setting: name,
            rmse: eval.report.aggregate.rmse,
            mae: eval.report.aggregate.mae,
            mape: eval.report.aggregate.mape,
            best_epoch: out.log.best_epoch,
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let table = outdir.join("ablation.csv");
    let mut w = csv::Writer::from_path(&table)
        .map_err(|e| FafError::Data(format!("cannot write {}: {e}", table.display())))?;
    w.write_record(["setting", "rmse", "mae", "mape", "best_epoch"])
        .map_err(|e| FafError::Data(e.to_string()))?;
    for r in &rows {
        w.write_record([
            r.setting.as_str(),
            &format!("{}", r.rmse),
            &format!("{}", r.mae),
            &format!("{}", r.mape),
            &r.best_epoch.to_string(),
        ])
        .map_err(|e| FafError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(rows)
}
