//! Sequence classifiers: a recurrent cell unrolled over the rows of a `T×D`
//! matrix, read out from its final hidden state through a softmax head.
//!
//! Bidirectional models run a second, independently parameterised cell over
//! the reversed sequence and classify `[h_T, h'_1]`. Gradients are exact
//! full-sequence BPTT; [`grad_check`] compares them with central differences.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::cells::{CellKind, CellParams, CellState, StepCache};
use crate::error::{Error, Result};
use crate::linalg::{add_blocks, Matrix, ParamBlocks, Rng, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Bidirectional,
}

impl Direction {
    pub fn num_passes(self) -> usize {
        match self {
            Direction::Forward => 1,
            Direction::Bidirectional => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Bidirectional => "bidirectional",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "bidirectional" => Ok(Direction::Bidirectional),
            other => Err(Error::InvalidArgument(format!("unknown direction `{other}`"))),
        }
    }
}

/// A recurrent classifier. Also serves as its own gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel {
    pub direction: Direction,
    /// One cell per pass: `[forward]` or `[forward, backward]`.
    pub cells: Vec<CellParams>,
    pub head_w: Matrix,
    pub head_b: Vector,
}

impl SequenceModel {
    /// Randomly initialised model; the head uses the same Glorot scheme as
    /// the cells and a zero bias.
    pub fn init(
        kind: CellKind,
        direction: Direction,
        hidden: usize,
        input: usize,
        classes: usize,
        rng: &mut Rng,
        warm_start_as_lstm: bool,
    ) -> Result<Self> {
        check_dims(hidden, input, classes)?;
        let cells = (0..direction.num_passes())
            .map(|_| CellParams::init(kind, rng, hidden, input, warm_start_as_lstm))
            .collect();
        let feature = hidden * direction.num_passes();
        Ok(SequenceModel {
            direction,
            cells,
            head_w: crate::linalg::glorot_init(rng, classes, feature),
            head_b: Vector::zeros(classes),
        })
    }

    pub fn zeros(kind: CellKind, direction: Direction, hidden: usize, input: usize, classes: usize) -> Result<Self> {
        check_dims(hidden, input, classes)?;
        Ok(SequenceModel {
            direction,
            cells: (0..direction.num_passes())
                .map(|_| CellParams::zeros(kind, hidden, input))
                .collect(),
            head_w: Matrix::zeros(classes, hidden * direction.num_passes()),
            head_b: Vector::zeros(classes),
        })
    }

    pub fn zeros_like(&self) -> Self {
        SequenceModel {
            direction: self.direction,
            cells: self.cells.iter().map(CellParams::zeros_like).collect(),
            head_w: Matrix::zeros(self.head_w.rows(), self.head_w.cols()),
            head_b: Vector::zeros(self.head_b.dim()),
        }
    }

    pub fn kind(&self) -> CellKind {
        self.cells[0].kind()
    }

    pub fn hidden(&self) -> usize {
        self.cells[0].hidden()
    }

    pub fn input(&self) -> usize {
        self.cells[0].input()
    }

    pub fn classes(&self) -> usize {
        self.head_b.dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden() * self.direction.num_passes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.direction.num_passes() {
            return Err(Error::shape(
                "SequenceModel",
                format!("{} direction", self.direction),
                format!("{} cells", self.cells.len()),
            ));
        }
        for cell in &self.cells {
            cell.validate()?;
            if cell.kind() != self.kind() || cell.hidden() != self.hidden() || cell.input() != self.input() {
                return Err(Error::shape("SequenceModel", "matching cells", "cells of differing kind or size"));
            }
        }
        if self.head_w.shape() != (self.classes(), self.feature_dim()) {
            return Err(Error::shape(
                "SequenceModel head",
                format!("{}x{}", self.classes(), self.feature_dim()),
                self.head_w.to_string(),
            ));
        }
        check_dims(self.hidden(), self.input(), self.classes())
    }
}

fn check_dims(hidden: usize, input: usize, classes: usize) -> Result<()> {
    if hidden == 0 || input == 0 {
        return Err(Error::InvalidArgument("hidden and input sizes must be at least 1".into()));
    }
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
    }
    Ok(())
}

const PASS_PREFIX: [&str; 2] = ["fwd", "bwd"];

impl ParamBlocks for SequenceModel {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (prefix, cell) in PASS_PREFIX.iter().zip(&self.cells) {
            out.extend(cell.blocks().into_iter().map(|(n, b)| (format!("{prefix}.{n}"), b)));
        }
        out.push(("head.w".into(), self.head_w.as_slice()));
        out.push(("head.b".into(), self.head_b.as_slice()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for cell in &mut self.cells {
            out.extend(cell.blocks_mut());
        }
        out.push(self.head_w.as_mut_slice());
        out.push(self.head_b.as_mut_slice());
        out
    }
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Step caches per pass, in processing order (the backward pass walks
    /// the sequence from its last row to its first).
    pub caches: Vec<Vec<StepCache>>,
    pub finals: Vec<CellState>,
    pub feature: Vector,
    pub logits: Vector,
    pub probs: Vector,
}

pub fn softmax(logits: &Vector) -> Vector {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

/// Returns `−log softmax(logits)[target]` and its gradient `p − onehot(target)`.
pub fn softmax_cross_entropy(logits: &Vector, target: usize) -> Result<(f64, Vector)> {
    let classes = logits.dim();
    if target >= classes {
        return Err(Error::TargetOutOfRange { target, classes });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[target];
    let mut d = softmax(logits);
    d[target] -= 1.0;
    Ok((loss, d))
}

fn run_pass(cell: &CellParams, rows: impl Iterator<Item = Vector>) -> Result<(Vec<StepCache>, CellState)> {
    let mut state = CellState::zeros(cell.hidden());
    let mut caches = Vec::new();
    for x in rows {
        let (next, cache) = cell.step_forward(&x, &state)?;
        caches.push(cache);
        state = next;
    }
    Ok((caches, state))
}

/// Runs the model over `sequence` (one row per timestep) from zero states.
pub fn unroll_forward(model: &SequenceModel, sequence: &Matrix) -> Result<ForwardTrace> {
    let steps = sequence.rows();
    if steps == 0 {
        return Err(Error::EmptySequence);
    }
    if sequence.cols() != model.input() {
        return Err(Error::shape(
            "unroll_forward",
            format!("input dim {}", model.input()),
            format!("sequence {sequence}"),
        ));
    }
    let mut caches = Vec::with_capacity(model.cells.len());
    let mut finals = Vec::with_capacity(model.cells.len());
    for (pass, cell) in model.cells.iter().enumerate() {
        let (c, s) = if pass == 0 {
            run_pass(cell, (0..steps).map(|t| sequence.row_vector(t)))?
        } else {
            run_pass(cell, (0..steps).rev().map(|t| sequence.row_vector(t)))?
        };
        caches.push(c);
        finals.push(s);
    }
    let feature: Vector = finals
        .iter()
        .flat_map(|s| s.h.iter().copied())
        .collect::<Vec<_>>()
        .into();
    let mut logits = model.head_w.matvec(&feature)?;
    logits.add_assign(&model.head_b);
    let probs = softmax(&logits);
    Ok(ForwardTrace {
        caches,
        finals,
        feature,
        logits,
        probs,
    })
}

/// Exact gradient of the cross-entropy loss of `trace` w.r.t. every parameter.
pub fn bptt_backward(model: &SequenceModel, trace: &ForwardTrace, target: usize) -> Result<SequenceModel> {
    let mut grads = model.zeros_like();
    bptt_backward_into(model, trace, target, &mut grads)?;
    Ok(grads)
}

/// Like [`bptt_backward`] but accumulates into `grads`; returns the loss.
pub fn bptt_backward_into(
    model: &SequenceModel,
    trace: &ForwardTrace,
    target: usize,
    grads: &mut SequenceModel,
) -> Result<f64> {
    if trace.caches.len() != model.cells.len()
        || trace.feature.dim() != model.feature_dim()
        || trace.logits.dim() != model.classes()
    {
        return Err(Error::InvalidArgument(format!(
            "trace ({} passes, feature {}, {} logits) does not belong to this model ({} passes, feature {}, {} classes)",
            trace.caches.len(),
            trace.feature.dim(),
            trace.logits.dim(),
            model.cells.len(),
            model.feature_dim(),
            model.classes()
        )));
    }
    let (loss, d_logits) = softmax_cross_entropy(&trace.logits, target)?;
    grads.head_w.add_outer(&d_logits, &trace.feature)?;
    grads.head_b.add_assign(&d_logits);
    let d_feature = model.head_w.tr_matvec(&d_logits)?;

    let hidden = model.hidden();
    for (pass, (cell, caches)) in model.cells.iter().zip(&trace.caches).enumerate() {
        let g = &mut grads.cells[pass];
        let mut d_h: Vector = d_feature.as_slice()[pass * hidden..(pass + 1) * hidden].to_vec().into();
        let mut d_c = Vector::zeros(hidden);
        for cache in caches.iter().rev() {
            let step = cell.step_backward_into(cache, &d_h, &d_c, g)?;
            d_h = step.d_h_prev;
            d_c = step.d_c_prev;
        }
    }
    Ok(loss)
}

pub fn loss_and_grads(model: &SequenceModel, sequence: &Matrix, target: usize) -> Result<(f64, SequenceModel)> {
    let trace = unroll_forward(model, sequence)?;
    let mut grads = model.zeros_like();
    let loss = bptt_backward_into(model, &trace, target, &mut grads)?;
    Ok((loss, grads))
}

pub fn loss(model: &SequenceModel, sequence: &Matrix, target: usize) -> Result<f64> {
    let trace = unroll_forward(model, sequence)?;
    Ok(softmax_cross_entropy(&trace.logits, target)?.0)
}

/// Argmax of the class probabilities, lowest index on ties.
pub fn predict(model: &SequenceModel, sequence: &Matrix) -> Result<usize> {
    Ok(unroll_forward(model, sequence)?.probs.argmax())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst_block(&self) -> Option<&BlockError> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn grad_check(model: &SequenceModel, sequence: &Matrix, target: usize, step: f64, threshold: f64) -> Result<GradCheckReport> {
    grad_check_with(model, sequence, target, step, threshold, |_| {})
}

/// [`grad_check`] with a hook that may tamper with the analytic gradient
/// before comparison (fault injection).
pub fn grad_check_with(
    model: &SequenceModel,
    sequence: &Matrix,
    target: usize,
    step: f64,
    threshold: f64,
    tamper: impl FnOnce(&mut SequenceModel),
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let (_, mut analytic) = loss_and_grads(model, sequence, target)?;
    tamper(&mut analytic);

    let mut probe = model.clone();
    let mut blocks = Vec::new();
    let names: Vec<String> = model.blocks().into_iter().map(|(n, _)| n).collect();
    let analytic_blocks = analytic.blocks();
    for (bi, name) in names.into_iter().enumerate() {
        let mut worst = 0.0f64;
        for k in 0..analytic_blocks[bi].1.len() {
            let orig = probe.blocks_mut()[bi][k];
            probe.blocks_mut()[bi][k] = orig + step;
            let plus = loss(&probe, sequence, target)?;
            probe.blocks_mut()[bi][k] = orig - step;
            let minus = loss(&probe, sequence, target)?;
            probe.blocks_mut()[bi][k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic_blocks[bi].1[k], numeric));
        }
        blocks.push(BlockError { name, max_rel_err: worst });
    }
    let max_rel_err = blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        max_rel_err,
        threshold,
        passed: max_rel_err < threshold,
    })
}

/// Mean loss, mean gradient and correct-prediction count over a batch.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub loss: f64,
    pub grads: SequenceModel,
    pub correct: usize,
}

fn example_grads(model: &SequenceModel, sequence: &Matrix, target: usize) -> Result<(f64, SequenceModel, bool)> {
    let trace = unroll_forward(model, sequence)?;
    let hit = trace.probs.argmax() == target;
    let mut grads = model.zeros_like();
    let loss = bptt_backward_into(model, &trace, target, &mut grads)?;
    Ok((loss, grads, hit))
}

/// Per-example gradients are summed in ascending batch order whether or not
/// they were computed in parallel, so the result does not depend on
/// scheduling.
pub fn batch_gradients(model: &SequenceModel, batch: &[(&Matrix, usize)], parallel: bool) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_example: Vec<Result<(f64, SequenceModel, bool)>> = if parallel {
        batch.par_iter().map(|&(s, t)| example_grads(model, s, t)).collect()
    } else {
        batch.iter().map(|&(s, t)| example_grads(model, s, t)).collect()
    };
    let mut total = model.zeros_like();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for r in per_example {
        let (l, g, hit) = r?;
        loss_sum += l;
        add_blocks(&mut total, &g)?;
        correct += hit as usize;
    }
    let n = batch.len() as f64;
    total.scale_all(1.0 / n);
    Ok(BatchResult {
        loss: loss_sum / n,
        grads: total,
        correct,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

/// Mean loss and accuracy over `examples`; an empty set is an error.
pub fn evaluate(model: &SequenceModel, examples: &[(&Matrix, usize)], parallel: bool) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let one = |&(s, t): &(&Matrix, usize)| -> Result<(f64, bool)> {
        let trace = unroll_forward(model, s)?;
        let (l, _) = softmax_cross_entropy(&trace.logits, t)?;
        Ok((l, trace.probs.argmax() == t))
    };
    let results: Vec<Result<(f64, bool)>> = if parallel {
        examples.par_iter().map(one).collect()
    } else {
        examples.iter().map(one).collect()
    };
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for r in results {
        let (l, hit) = r?;
        loss_sum += l;
        correct += hit as usize;
    }
    let total = examples.len();
    Ok(Evaluation {
        loss: loss_sum / total as f64,
        accuracy: correct as f64 / total as f64,
        correct,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::approx_constant)]
    fn cross_entropy_uniform_logits() {
        let (l, d) = softmax_cross_entropy(&Vector::zeros(10), 3).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!((l - 2.302585).abs() < 1e-6);
        assert!((d.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_is_stable_for_huge_logits() {
        let (l, d) = softmax_cross_entropy(&Vector::from([1000.0, 0.0]), 0).unwrap();
        assert!(l.is_finite() && l.abs() < 1e-12);
        assert!(d.iter().all(|v| v.is_finite()));
        let (l, _) = softmax_cross_entropy(&Vector::from([1000.0, 0.0]), 1).unwrap();
        assert!((l - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let err = softmax_cross_entropy(&Vector::zeros(3), 3).unwrap_err();
        assert!(matches!(err, Error::TargetOutOfRange { target: 3, classes: 3 }));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(Vector::from([0.1, 5.0, -2.0]).argmax(), 1);
        assert_eq!(Vector::from([1.0, 3.0, 3.0]).argmax(), 1);
        assert_eq!(Vector::zeros(4).argmax(), 0);
    }

    #[test]
    fn model_needs_two_classes() {
        assert!(SequenceModel::zeros(CellKind::Lstm, Direction::Forward, 2, 2, 1).is_err());
    }

    #[test]
    fn block_names_are_unique() {
        let m = SequenceModel::zeros(CellKind::Lsta, Direction::Bidirectional, 2, 2, 2).unwrap();
        let names: Vec<String> = m.blocks().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names.len(), 2 * 12 + 2);
    }
}
