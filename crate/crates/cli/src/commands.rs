//! The `train`, `eval`, `gradcheck` and `curves` commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lsta_core::cells::CellKind;
use lsta_core::data::{load_idx_images, load_idx_labels, make_batches, rows_as_sequence, synth_signal_task, LabeledSequences, SynthConfig};
use lsta_core::linalg::{Matrix, ParamBlocks, Rng};
use lsta_core::network::{batch_gradients, evaluate, grad_check_with, Direction, Evaluation, GradCheckReport, SequenceModel};
use lsta_core::optim::Optimizer;

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetChoice, RunConfig};
use crate::error::{CliError, Result};
use crate::metrics::{curve_series, read_metrics, write_series, MetricsRow, MetricsWriter, Split};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.txt";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: LabeledSequences,
    pub test: LabeledSequences,
}

fn idx_path(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(CliError::MissingFile(plain))
}

fn load_idx_split(dir: &Path, prefix: &str) -> Result<LabeledSequences> {
    let images = load_idx_images(idx_path(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = load_idx_labels(idx_path(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    Ok(rows_as_sequence(&images, &labels, 10)?)
}

fn synth(cfg: &RunConfig, count: usize, seed: u64) -> Result<LabeledSequences> {
    Ok(synth_signal_task(&SynthConfig {
        count,
        steps: cfg.synth_steps,
        features: cfg.synth_features,
        signal_len: cfg.synth_signal_len,
        noise_sigma: cfg.synth_noise,
        seed,
    })?)
}

/// Training split: the first `train_n` examples after a `data_seed` shuffle.
pub fn load_train_set(cfg: &RunConfig) -> Result<LabeledSequences> {
    match cfg.dataset {
        DatasetChoice::Mnist | DatasetChoice::Fashion => {
            Ok(load_idx_split(&cfg.data_dir, "train")?.shuffled_subset(cfg.train_n, cfg.data_seed)?)
        }
        DatasetChoice::Synth => synth(cfg, cfg.train_n, cfg.data_seed),
    }
}

/// Test split: the first `test_n` examples after a `data_seed` shuffle. The
/// synthetic test set is drawn from the seed after `data_seed`.
pub fn load_test_set(cfg: &RunConfig) -> Result<LabeledSequences> {
    match cfg.dataset {
        DatasetChoice::Mnist | DatasetChoice::Fashion => {
            Ok(load_idx_split(&cfg.data_dir, "t10k")?.shuffled_subset(cfg.test_n, cfg.data_seed)?)
        }
        DatasetChoice::Synth => synth(cfg, cfg.test_n, cfg.data_seed.wrapping_add(1)),
    }
}

pub fn load_datasets(cfg: &RunConfig) -> Result<Datasets> {
    Ok(Datasets {
        train: load_train_set(cfg)?,
        test: load_test_set(cfg)?,
    })
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub final_test: Evaluation,
    /// Mean of the per-batch training losses, one entry per epoch.
    pub epoch_train_loss: Vec<f64>,
    pub steps: usize,
    pub elapsed_ms: u128,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

impl TrainSummary {
    pub fn summary_line(&self) -> String {
        format!("final_test_accuracy={}", self.final_test.accuracy)
    }
}

fn batch_order_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(epoch as u64)
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce(bool) -> Result<T> + Send) -> Result<T> {
    if workers <= 1 {
        return f(false);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::config("workers", e))?;
    pool.install(|| f(true))
}

pub fn build_model(cfg: &RunConfig, input: usize) -> Result<SequenceModel> {
    let mut rng = Rng::new(cfg.seed);
    Ok(SequenceModel::init(
        cfg.model.kind(),
        cfg.model.direction(),
        cfg.hidden,
        input,
        cfg.classes(),
        &mut rng,
        cfg.warm_start_as_lstm,
    )?)
}

pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = load_datasets(cfg)?;
    train_on(cfg, &data)
}

/// Trains on already-loaded data, writing `metrics.csv`, `model.ckpt`,
/// `config.txt` and `summary.txt` into `cfg.out`.
pub fn train_on(cfg: &RunConfig, data: &Datasets) -> Result<TrainSummary> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(CliError::config("train_n", "training set is empty"));
    }
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.to_kv())?;
    let metrics_path = cfg.out.join(METRICS_FILE);
    let checkpoint_path = cfg.out.join(CHECKPOINT_FILE);

    let mut model = build_model(cfg, data.train.features)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, &model)?;
    let mut metrics = MetricsWriter::create(&metrics_path)?;
    let train_examples = data.train.examples();
    let test_examples = data.test.examples();
    let start = Instant::now();
    let wall_ms = |start: &Instant| if cfg.wall_clock { start.elapsed().as_millis() as u64 } else { 0 };

    let (final_test, epoch_train_loss, steps) = with_workers(cfg.workers, |parallel| {
        let mut step = 0;
        let mut epoch_train_loss = Vec::with_capacity(cfg.epochs);
        let mut last_eval = None;
        for epoch in 1..=cfg.epochs {
            let mut loss_sum = 0.0;
            let batches = make_batches(train_examples.len(), cfg.batch, batch_order_seed(cfg.seed, epoch))?;
            for indices in &batches {
                step += 1;
                let batch: Vec<(&Matrix, usize)> = indices.iter().map(|&i| train_examples[i]).collect();
                let mut result = batch_gradients(&model, &batch, parallel)?;
                if !result.loss.is_finite() {
                    return Err(CliError::NonFiniteLoss { step, epoch });
                }
                optimizer.step(&mut model, &mut result.grads)?;
                loss_sum += result.loss;
                metrics.write(&MetricsRow {
                    epoch,
                    step,
                    split: Split::Train,
                    loss: result.loss,
                    accuracy: result.correct as f64 / batch.len() as f64,
                    wall_ms: wall_ms(&start),
                })?;
            }
            epoch_train_loss.push(loss_sum / batches.len() as f64);
            let eval = evaluate(&model, &test_examples, parallel)?;
            metrics.write(&MetricsRow {
                epoch,
                step,
                split: Split::Test,
                loss: eval.loss,
                accuracy: eval.accuracy,
                wall_ms: wall_ms(&start),
            })?;
            last_eval = Some(eval);
        }
        let final_test = match last_eval {
            Some(e) => e,
            None => evaluate(&model, &test_examples, parallel)?,
        };
        Ok((final_test, epoch_train_loss, step))
    })?;

    Checkpoint {
        model,
        seed: cfg.seed,
        config_echo: cfg.to_kv(),
    }
    .save(&checkpoint_path)?;
    let summary = TrainSummary {
        final_test,
        epoch_train_loss,
        steps,
        elapsed_ms: start.elapsed().as_millis(),
        metrics_path,
        checkpoint_path,
    };
    fs::write(
        cfg.out.join(SUMMARY_FILE),
        format!("{}\nfinal_test_loss={}\nelapsed_ms={}\n", summary.summary_line(), final_test.loss, summary.elapsed_ms),
    )?;
    Ok(summary)
}

/// Evaluates a model on a dataset, rejecting feature or class mismatches.
pub fn eval_model(model: &SequenceModel, data: &LabeledSequences, workers: usize) -> Result<Evaluation> {
    if model.input() != data.features {
        return Err(CliError::DimMismatch {
            what: "input feature",
            checkpoint: model.input(),
            dataset: data.features,
        });
    }
    if model.classes() != data.classes {
        return Err(CliError::DimMismatch {
            what: "class count",
            checkpoint: model.classes(),
            dataset: data.classes,
        });
    }
    let examples = data.examples();
    with_workers(workers, |parallel| Ok(evaluate(model, &examples, parallel)?))
}

pub fn eval(checkpoint: &Path, cfg: &RunConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)?;
    eval_model(&ck.model, &load_test_set(cfg)?, cfg.workers)
}

pub const GRADCHECK_SEED: u64 = 11;
pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;
/// Hidden size, input size, classes, sequence length.
pub const GRADCHECK_SHAPE: (usize, usize, usize, usize) = (4, 3, 3, 5);

#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub reports: Vec<(String, GradCheckReport)>,
    pub passed: bool,
}

impl GradcheckOutcome {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (model, report) in &self.reports {
            for b in &report.blocks {
                let verdict = if b.max_rel_err < report.threshold { "ok" } else { "FAIL" };
                out.push_str(&format!("{model:<7} {:<14} max_rel_err={:.3e} {verdict}\n", b.name, b.max_rel_err));
            }
        }
        out.push_str(if self.passed { "gradcheck passed\n" } else { "gradcheck FAILED\n" });
        out
    }
}

/// Central-difference check of every parameter gradient for each model
/// kind at a small fixed shape. With `inject_fault`, the analytic gradient
/// of each model's first block is doubled before comparison.
pub fn gradcheck(seed: u64, inject_fault: bool) -> Result<GradcheckOutcome> {
    let (h, d, k, t) = GRADCHECK_SHAPE;
    let variants = [
        ("lstm", CellKind::Lstm, Direction::Forward),
        ("gru", CellKind::Gru, Direction::Forward),
        ("lsta", CellKind::Lsta, Direction::Forward),
        ("bilstm", CellKind::Lstm, Direction::Bidirectional),
    ];
    let mut reports = Vec::new();
    for (name, kind, direction) in variants {
        let mut rng = Rng::new(seed);
        let model = SequenceModel::init(kind, direction, h, d, k, &mut rng, false)?;
        let sequence = Matrix::from_vec(t, d, (0..t * d).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
        let target = (rng.next_f64() * k as f64) as usize;
        let report = grad_check_with(&model, &sequence, target, GRADCHECK_STEP, GRADCHECK_THRESHOLD, |g| {
            if inject_fault {
                for v in g.blocks_mut().swap_remove(0).iter_mut() {
                    *v *= 2.0;
                }
            }
        })?;
        reports.push((name.to_string(), report));
    }
    let passed = reports.iter().all(|(_, r)| r.passed);
    Ok(GradcheckOutcome { reports, passed })
}

/// Writes `<split>_accuracy.csv` and `<split>_loss.csv` for each split found
/// in `metrics`.
pub fn curves(metrics: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_metrics(metrics)?;
    curve_series(&rows)?.iter().map(|s| write_series(s, out)).collect()
}
