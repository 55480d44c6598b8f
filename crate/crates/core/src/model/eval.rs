use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_rows;
use crate::dataset::{Dataset, LoadedSegment};
use crate::error::{Error, Result};
use crate::metrics::{action_accuracy, argmax_row, top_k, ScoreSet};
use crate::model::TbnModel;
use crate::rng::derive_rng;
use crate::sampler::{sample_eval_tuples, sample_single_tbw, CompanionPlacement, SamplingMode};
use crate::tensor::{Scalar, Tensor};

/// How per-window logits combine into video scores.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Arithmetic mean of pre-softmax logits (the training-time aggregation).
    MeanLogits,
    /// Mean of per-window softmax scores.
    MeanSoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Evenly spaced windows per segment.
    pub anchors: usize,
    /// Companion placement; synchronous mapping by default, or random draws
    /// within the binding window.
    pub placement: CompanionPlacement,
    pub score: ScoreMode,
    /// Seed for window-placement draws (unused for synchronous placement).
    pub seed: u64,
}

impl EvalOptions {
    pub fn synchronous(anchors: usize) -> Self {
        EvalOptions {
            anchors,
            placement: CompanionPlacement::Synchronous,
            score: ScoreMode::MeanLogits,
            seed: 0,
        }
    }

    pub fn windowed(anchors: usize, width_rel: f64, seed: u64) -> Self {
        EvalOptions {
            anchors,
            placement: CompanionPlacement::Window { width_rel },
            score: ScoreMode::MeanLogits,
            seed,
        }
    }
}

const EVAL_CHUNK: usize = 64;

/// Scores every segment of `data` with deterministic anchors. With
/// synchronous placement the output is a pure function of (weights, data).
pub fn predict_scores<E: Scalar>(
    model: &TbnModel<E>,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<ScoreSet> {
    model.check_dataset(data)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluating an empty dataset".into()));
    }
    if opts.anchors == 0 {
        return Err(Error::InvalidArgument("eval needs at least one anchor".into()));
    }
    let specs = model.config.modality_specs();
    let mut cfg = model.config.tbw_config(SamplingMode::TestDeterministic);
    cfg.test_anchors = opts.anchors;

    let mut verb_rows = Vec::with_capacity(data.len() * model.config.verb_classes);
    let mut noun_rows = Vec::with_capacity(data.len() * model.config.noun_classes);
    for (chunk_idx, chunk) in data.segments.chunks(EVAL_CHUNK).enumerate() {
        let batch: Vec<&LoadedSegment> = chunk.iter().collect();
        let tuples = batch
            .iter()
            .enumerate()
            .map(|(i, seg)| {
                let seg_index = (chunk_idx * EVAL_CHUNK + i) as u64;
                let mut rng = derive_rng(opts.seed, "eval-placement", &[seg_index]);
                sample_eval_tuples(&seg.segment, &specs, &cfg, opts.placement, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let logits = model.eval_batch(&batch, &tuples)?;
        append_scores(&mut verb_rows, &logits.verb_parts, opts.score);
        append_scores(&mut noun_rows, &logits.noun_parts, opts.score);
    }

    Ok(ScoreSet {
        verb_scores: Tensor::new(vec![data.len(), model.config.verb_classes], verb_rows)?,
        noun_scores: Tensor::new(vec![data.len(), model.config.noun_classes], noun_rows)?,
        verb_labels: data.segments.iter().map(|s| s.segment.verb_class).collect(),
        noun_labels: data.segments.iter().map(|s| s.segment.noun_class).collect(),
        tags: data.segments.iter().map(|s| s.segment.tags.clone()).collect(),
        probabilities: opts.score == ScoreMode::MeanSoftmax,
    })
}

/// Combines per-window logits into per-row scores, summed in f64 so the
/// result is independent of window order.
fn append_scores<E: Scalar>(out: &mut Vec<f64>, parts: &[Tensor<E>], mode: ScoreMode) {
    let (n, c) = parts[0].dims2().expect("logits are rank 2");
    let k = parts.len() as f64;
    for row in 0..n {
        let mut acc = vec![0.0f64; c];
        for part in parts {
            match mode {
                ScoreMode::MeanLogits => {
                    for (a, v) in acc.iter_mut().zip(part.row(row)) {
                        *a += v.to_f64();
                    }
                }
                ScoreMode::MeanSoftmax => {
                    let logits: Vec<f64> = part.row(row).iter().map(|v| v.to_f64()).collect();
                    let probs = softmax_rows(&Tensor::new(vec![1, c], logits).expect("row"));
                    for (a, &p) in acc.iter_mut().zip(probs.data()) {
                        *a += p;
                    }
                }
            }
        }
        out.extend(acc.into_iter().map(|a| a / k));
    }
}

/// Mean of per-member softmax scores. Members must agree on labels and class
/// counts; logit-valued members are softmaxed first.
pub fn ensemble_scores(members: &[ScoreSet]) -> Result<ScoreSet> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble of zero members".into()))?;
    let n = first.len();
    let (_, vc) = first.verb_scores.dims2()?;
    let (_, nc) = first.noun_scores.dims2()?;
    for m in members {
        let (_, mvc) = m.verb_scores.dims2()?;
        let (_, mnc) = m.noun_scores.dims2()?;
        if m.len() != n || mvc != vc || mnc != nc {
            return Err(Error::InvalidArgument(
                "ensemble members disagree on rows or class counts".into(),
            ));
        }
        if m.verb_labels != first.verb_labels || m.noun_labels != first.noun_labels {
            return Err(Error::InvalidArgument(
                "ensemble members were evaluated on different segments".into(),
            ));
        }
    }
    let average = |pick: fn(&ScoreSet) -> &Tensor<f64>, classes: usize| -> Result<Tensor<f64>> {
        let mut acc = Tensor::zeros(&[n, classes]);
        for m in members {
            let probs = if m.probabilities { pick(m).clone() } else { softmax_rows(pick(m)) };
            acc.add_scaled(&probs, 1.0)?;
        }
        Ok(acc.map(|v| v / members.len() as f64))
    };
    Ok(ScoreSet {
        verb_scores: average(|m| &m.verb_scores, vc)?,
        noun_scores: average(|m| &m.noun_scores, nc)?,
        verb_labels: first.verb_labels.clone(),
        noun_labels: first.noun_labels.clone(),
        tags: first.tags.clone(),
        probabilities: true,
    })
}

/// One width's sweep statistics (mean and standard deviation over runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub width_rel: f64,
    pub runs: usize,
    pub verb_mean: f64,
    pub verb_std: f64,
    pub noun_mean: f64,
    pub noun_std: f64,
    pub action_mean: f64,
    pub action_std: f64,
}

/// For each width, samples a *single* binding window per segment, scores the
/// dataset, and repeats `runs` times to report mean and standard deviation
/// per task. A width of 0 is the synchrony point.
pub fn sweep_widths<E: Scalar>(
    model: &TbnModel<E>,
    data: &Dataset,
    widths: &[(String, f64)],
    runs: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if widths.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one width".into()));
    }
    if runs == 0 {
        return Err(Error::InvalidArgument("sweep needs at least one run".into()));
    }
    model.check_dataset(data)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("sweeping an empty dataset".into()));
    }
    let specs = model.config.modality_specs();
    let verb_labels: Vec<usize> = data.segments.iter().map(|s| s.segment.verb_class).collect();
    let noun_labels: Vec<usize> = data.segments.iter().map(|s| s.segment.noun_class).collect();

    let mut points = Vec::with_capacity(widths.len());
    for (w_idx, (label, width_rel)) in widths.iter().enumerate() {
        if *width_rel < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sweep width {label:?} is negative"
            )));
        }
        let mut verb_accs = Vec::with_capacity(runs);
        let mut noun_accs = Vec::with_capacity(runs);
        let mut action_accs = Vec::with_capacity(runs);
        for run in 0..runs {
            let mut verb_rows = Vec::with_capacity(data.len() * model.config.verb_classes);
            let mut noun_rows = Vec::with_capacity(data.len() * model.config.noun_classes);
            for (chunk_idx, chunk) in data.segments.chunks(EVAL_CHUNK).enumerate() {
                let batch: Vec<&LoadedSegment> = chunk.iter().collect();
                let tuples = batch
                    .iter()
                    .enumerate()
                    .map(|(i, seg)| {
                        let seg_index = (chunk_idx * EVAL_CHUNK + i) as u64;
                        let mut rng = derive_rng(
                            seed,
                            "sweep",
                            &[w_idx as u64, run as u64, seg_index],
                        );
                        let b_secs = width_rel * seg.segment.duration();
                        sample_single_tbw(&seg.segment, &specs, b_secs, &mut rng)
                            .map(|t| vec![t])
                    })
                    .collect::<Result<Vec<_>>>()?;
                let logits = model.eval_batch(&batch, &tuples)?;
                append_scores(&mut verb_rows, &logits.verb_parts, ScoreMode::MeanLogits);
                append_scores(&mut noun_rows, &logits.noun_parts, ScoreMode::MeanLogits);
            }
            let vs = Tensor::new(vec![data.len(), model.config.verb_classes], verb_rows)?;
            let ns = Tensor::new(vec![data.len(), model.config.noun_classes], noun_rows)?;
            verb_accs.push(top_k(&vs, &verb_labels, 1)?);
            noun_accs.push(top_k(&ns, &noun_labels, 1)?);
            action_accs.push(action_accuracy(&vs, &ns, &verb_labels, &noun_labels)?);
        }
        let (verb_mean, verb_std) = mean_std(&verb_accs);
        let (noun_mean, noun_std) = mean_std(&noun_accs);
        let (action_mean, action_std) = mean_std(&action_accs);
        points.push(SweepPoint {
            label: label.clone(),
            width_rel: *width_rel,
            runs,
            verb_mean,
            verb_std,
            noun_mean,
            noun_std,
            action_mean,
            action_std,
        });
    }
    Ok(points)
}

/// Sample mean and standard deviation (n-1 denominator; 0 for a single run).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// CSV rendering of sweep results.
pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(
        "label,width_rel,runs,verb_mean,verb_std,noun_mean,noun_std,action_mean,action_std\n",
    );
    for p in points {
        out.push_str(&format!(
            "{},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            p.label,
            p.width_rel,
            p.runs,
            p.verb_mean,
            p.verb_std,
            p.noun_mean,
            p.noun_std,
            p.action_mean,
            p.action_std
        ));
    }
    out
}

/// Convenience: top-1 verb accuracy of a score set (used by several tests
/// and the sweep assertions).
pub fn verb_top1(set: &ScoreSet) -> Result<f64> {
    top_k(&set.verb_scores, &set.verb_labels, 1)
}

/// Per-class verb accuracy vector from a score set.
pub fn per_class_verb_accuracy(set: &ScoreSet, classes: usize) -> Vec<f64> {
    let mut correct = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    for (row, &label) in set.verb_labels.iter().enumerate() {
        support[label] += 1;
        if argmax_row(set.verb_scores.row(row)) == label {
            correct[label] += 1;
        }
    }
    (0..classes)
        .map(|c| if support[c] == 0 { 0.0 } else { correct[c] as f64 / support[c] as f64 })
        .collect()
}
