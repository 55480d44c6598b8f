//! Evaluation suite: top-k accuracy, per-class precision/recall, action
//! accuracy, confusion matrices, tail splits, modality-dominance
//! categorization and tag-restricted subsets.
//!
//! Argmax ties always break toward the lower class index so every number
//! here is deterministic.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::autodiff::softmax_rows;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-row scores and labels for both tasks, plus the manifest tags of each
/// row. The score matrices are `[n, C]`.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    pub verb_scores: Tensor<f64>,
    pub noun_scores: Tensor<f64>,
    pub verb_labels: Vec<usize>,
    pub noun_labels: Vec<usize>,
    pub tags: Vec<BTreeSet<String>>,
    /// True when rows already hold softmax probabilities (ensembles); used
    /// only for the joint action ranking.
    pub probabilities: bool,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.verb_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verb_labels.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.verb_labels.len();
        let (vn, _) = self.verb_scores.dims2()?;
        let (nn, _) = self.noun_scores.dims2()?;
        if vn != n || nn != n || self.noun_labels.len() != n || self.tags.len() != n {
            return Err(Error::ShapeMismatch(
                "score rows, labels and tags must agree in length".into(),
            ));
        }
        Ok(())
    }

    fn select(&self, keep: &[bool]) -> ScoreSet {
        let pick_rows = |scores: &Tensor<f64>| {
            let (_, c) = scores.dims2().expect("validated");
            let mut data = Vec::new();
            let mut rows = 0;
            for (row, &k) in keep.iter().enumerate() {
                if k {
                    data.extend_from_slice(scores.row(row));
                    rows += 1;
                }
            }
            Tensor::new(vec![rows, c], data).expect("row selection")
        };
        let pick = |v: &[usize]| -> Vec<usize> {
            v.iter().zip(keep).filter(|(_, &k)| k).map(|(x, _)| *x).collect()
        };
        ScoreSet {
            verb_scores: pick_rows(&self.verb_scores),
            noun_scores: pick_rows(&self.noun_scores),
            verb_labels: pick(&self.verb_labels),
            noun_labels: pick(&self.noun_labels),
            tags: self.tags.iter().zip(keep).filter(|(_, &k)| k).map(|(t, _)| t.clone()).collect(),
            probabilities: self.probabilities,
        }
    }
}

/// Everything reported for one task; the confusion matrix goes to CSV rather
/// than JSON.
#[derive(Debug, Clone, Serialize)]
pub struct TaskMetrics {
    pub top1: f64,
    pub top5: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class_accuracy: Vec<f64>,
    pub support: Vec<usize>,
    #[serde(skip)]
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionMetrics {
    pub top1: f64,
    pub top5: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub n: usize,
    pub verb: TaskMetrics,
    pub noun: TaskMetrics,
    pub action: ActionMetrics,
}

/// Predicted class of one score row, ties toward the lower index.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in row.iter().enumerate().skip(1) {
        if s > row[best] {
            best = c;
        }
    }
    best
}

/// Fraction of rows whose label ranks within the `k` largest scores, ties
/// resolved toward lower class indices.
pub fn top_k(scores: &Tensor<f64>, labels: &[usize], k: usize) -> Result<f64> {
    let (n, c) = scores.dims2()?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} score rows",
            labels.len()
        )));
    }
    if k == 0 || k > c {
        return Err(Error::InvalidArgument(format!("top-k with k={k} over {c} classes")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("top-k over zero rows".into()));
    }
    let mut hits = 0usize;
    for (row, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let r = scores.row(row);
        let s = r[label];
        let rank = r
            .iter()
            .enumerate()
            .filter(|&(cls, &v)| v > s || (v == s && cls < label))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Fraction of rows where both the verb and the noun top-1 are correct.
pub fn action_accuracy(
    verb_scores: &Tensor<f64>,
    noun_scores: &Tensor<f64>,
    verb_labels: &[usize],
    noun_labels: &[usize],
) -> Result<f64> {
    let (n, vc) = verb_scores.dims2()?;
    let (n2, nc) = noun_scores.dims2()?;
    if n != n2 || verb_labels.len() != n || noun_labels.len() != n {
        return Err(Error::ShapeMismatch("action accuracy row mismatch".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("action accuracy over zero rows".into()));
    }
    let mut hits = 0usize;
    for row in 0..n {
        if verb_labels[row] >= vc || noun_labels[row] >= nc {
            return Err(Error::InvalidArgument("label out of range".into()));
        }
        if argmax_row(verb_scores.row(row)) == verb_labels[row]
            && argmax_row(noun_scores.row(row)) == noun_labels[row]
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Row-normalised confusion counts: `confusion[true][predicted]`.
pub fn confusion_matrix(scores: &Tensor<f64>, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    let (n, c) = scores.dims2()?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch("confusion label mismatch".into()));
    }
    let mut m = vec![vec![0usize; c]; c];
    for (row, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        m[label][argmax_row(scores.row(row))] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct PerClassPr {
    /// `None` where the class was never predicted (precision undefined).
    pub precision: Vec<Option<f64>>,
    /// `None` where the class has no support (recall undefined).
    pub recall: Vec<Option<f64>>,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

/// Per-class precision/recall from argmax predictions. Macro averages skip
/// classes where the quantity is undefined instead of imputing zero.
pub fn per_class_pr(scores: &Tensor<f64>, labels: &[usize]) -> Result<PerClassPr> {
    let confusion = confusion_matrix(scores, labels)?;
    Ok(pr_from_confusion(&confusion))
}

fn pr_from_confusion(confusion: &[Vec<usize>]) -> PerClassPr {
    let c = confusion.len();
    let mut precision = Vec::with_capacity(c);
    let mut recall = Vec::with_capacity(c);
    for cls in 0..c {
        let tp = confusion[cls][cls];
        let predicted: usize = (0..c).map(|t| confusion[t][cls]).sum();
        let support: usize = confusion[cls].iter().sum();
        precision.push((predicted > 0).then(|| tp as f64 / predicted as f64));
        recall.push((support > 0).then(|| tp as f64 / support as f64));
    }
    let mean_defined = |v: &[Option<f64>]| {
        let defined: Vec<f64> = v.iter().flatten().copied().collect();
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    };
    PerClassPr {
        macro_precision: mean_defined(&precision),
        macro_recall: mean_defined(&recall),
        precision,
        recall,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailSplit {
    pub head_classes: Vec<usize>,
    pub tail_classes: Vec<usize>,
    pub head_mean_acc: f64,
    pub tail_mean_acc: f64,
}

/// Ranks classes by descending training-set count (ties toward the lower
/// class id), splits off the top `ceil(0.1 * C)` and reports the mean
/// per-class accuracy of each side.
pub fn tail_split(train_counts: &[usize], per_class_acc: &[f64]) -> Result<TailSplit> {
    if train_counts.len() != per_class_acc.len() || train_counts.is_empty() {
        return Err(Error::ShapeMismatch(
            "class counts and accuracies must be equal-length and non-empty".into(),
        ));
    }
    let c = train_counts.len();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by_key(|&cls| (std::cmp::Reverse(train_counts[cls]), cls));
    let head_len = (c as f64 * 0.1).ceil() as usize;
    let head_classes: Vec<usize> = order[..head_len].to_vec();
    let tail_classes: Vec<usize> = order[head_len..].to_vec();
    let mean = |ids: &[usize]| {
        if ids.is_empty() {
            0.0
        } else {
            ids.iter().map(|&i| per_class_acc[i]).sum::<f64>() / ids.len() as f64
        }
    };
    Ok(TailSplit {
        head_mean_acc: mean(&head_classes),
        tail_mean_acc: mean(&tail_classes),
        head_classes,
        tail_classes,
    })
}

/// For each class, the set of modalities whose per-class accuracy lies
/// within `threshold` of the best modality (the seven-region Venn
/// categorization). `accs[m][c]` is modality `m`'s accuracy on class `c`.
pub fn modality_dominance(accs: &[Vec<f64>], threshold: f64) -> Result<Vec<Vec<usize>>> {
    if accs.is_empty() {
        return Err(Error::InvalidArgument("no modalities given".into()));
    }
    let c = accs[0].len();
    if accs.iter().any(|a| a.len() != c) {
        return Err(Error::ShapeMismatch("per-modality accuracy lengths differ".into()));
    }
    let mut out = Vec::with_capacity(c);
    for cls in 0..c {
        let best = accs.iter().map(|a| a[cls]).fold(f64::NEG_INFINITY, f64::max);
        let set: Vec<usize> = (0..accs.len()).filter(|&m| accs[m][cls] >= best - threshold).collect();
        out.push(set);
    }
    Ok(out)
}

/// Full [`EvalResult`] over a score set.
pub fn evaluate(set: &ScoreSet) -> Result<EvalResult> {
    set.validate()?;
    if set.is_empty() {
        return Err(Error::InvalidArgument("evaluation over zero rows".into()));
    }
    let verb = task_metrics(&set.verb_scores, &set.verb_labels)?;
    let noun = task_metrics(&set.noun_scores, &set.noun_labels)?;
    let action = ActionMetrics {
        top1: action_accuracy(&set.verb_scores, &set.noun_scores, &set.verb_labels, &set.noun_labels)?,
        top5: action_top_k(set, 5)?,
    };
    Ok(EvalResult { n: set.len(), verb, noun, action })
}

fn task_metrics(scores: &Tensor<f64>, labels: &[usize]) -> Result<TaskMetrics> {
    let (_, c) = scores.dims2()?;
    let confusion = confusion_matrix(scores, labels)?;
    let pr = pr_from_confusion(&confusion);
    let mut per_class_accuracy = vec![0.0; c];
    let mut support = vec![0usize; c];
    for cls in 0..c {
        support[cls] = confusion[cls].iter().sum();
        if support[cls] > 0 {
            per_class_accuracy[cls] = confusion[cls][cls] as f64 / support[cls] as f64;
        }
    }
    Ok(TaskMetrics {
        top1: top_k(scores, labels, 1)?,
        top5: top_k(scores, labels, 5.min(c))?,
        macro_precision: pr.macro_precision,
        macro_recall: pr.macro_recall,
        per_class_accuracy,
        support,
        confusion,
    })
}

/// Top-k over the joint (verb, noun) ranking; rows are ranked by the product
/// of the two tasks' softmax probabilities.
fn action_top_k(set: &ScoreSet, k: usize) -> Result<f64> {
    let (n, vc) = set.verb_scores.dims2()?;
    let (_, nc) = set.noun_scores.dims2()?;
    let k = k.min(vc * nc);
    let (vp, np) = if set.probabilities {
        (set.verb_scores.clone(), set.noun_scores.clone())
    } else {
        (softmax_rows(&set.verb_scores), softmax_rows(&set.noun_scores))
    };
    let mut hits = 0usize;
    for row in 0..n {
        let vrow = vp.row(row);
        let nrow = np.row(row);
        let target = vrow[set.verb_labels[row]] * nrow[set.noun_labels[row]];
        let target_idx = set.verb_labels[row] * nc + set.noun_labels[row];
        let mut rank = 0usize;
        'outer: for (vi, &v) in vrow.iter().enumerate() {
            for (ni, &nn) in nrow.iter().enumerate() {
                let s = v * nn;
                let idx = vi * nc + ni;
                if s > target || (s == target && idx < target_idx) {
                    rank += 1;
                    if rank >= k {
                        break 'outer;
                    }
                }
            }
        }
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Metrics over the rows carrying `tag` and over the complement, in that
/// order. Unknown or never-used tags are rejected so typos surface loudly.
pub fn subset_eval(set: &ScoreSet, tag: &str) -> Result<(EvalResult, EvalResult)> {
    set.validate()?;
    let keep: Vec<bool> = set.tags.iter().map(|t| t.contains(tag)).collect();
    let hits = keep.iter().filter(|&&k| k).count();
    if hits == 0 {
        return Err(Error::InvalidArgument(format!(
            "tag {tag:?} matches no evaluated segment"
        )));
    }
    let subset = set.select(&keep);
    let complement_mask: Vec<bool> = keep.iter().map(|&k| !k).collect();
    let complement = set.select(&complement_mask);
    let subset_result = evaluate(&subset)?;
    let complement_result = if complement.is_empty() {
        // Tag covers everything: the complement is empty, report the subset
        // twice rather than failing.
        subset_result.clone()
    } else {
        evaluate(&complement)?
    };
    Ok((subset_result, complement_result))
}

/// Renders a confusion matrix as CSV with a `true\predicted` header column.
pub fn confusion_to_csv(confusion: &[Vec<usize>]) -> String {
    let c = confusion.len();
    let mut out = String::from("true\\predicted");
    for cls in 0..c {
        out.push_str(&format!(",{cls}"));
    }
    out.push('\n');
    for (cls, row) in confusion.iter().enumerate() {
        out.push_str(&cls.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
