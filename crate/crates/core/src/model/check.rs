//! Finite-difference verification of every differentiable operation and of
//! the full model, in 64-bit mode.

use std::collections::BTreeSet;

use rand::Rng;

use crate::autodiff::{grad_check, GradCheckConfig, ParamStore, Tape};
use crate::dataset::{LoadedSegment, StreamData};
use crate::error::Result;
use crate::model::{FusionKind, ModelConfig, ModelModality, TbnModel, TbwSettings};
use crate::rng::derive_rng;
use crate::sampler::{sample_training_tuples, ActionSegment, ModalityKind, SamplingMode};
use crate::tensor::Tensor;

/// Tolerance for compositions involving rectifier masks.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Tolerance for linear and smooth primitive operations.
pub const GRADCHECK_TOL_LINEAR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

fn rand_tensor(seed: u64, tag: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = derive_rng(seed, "gradcheck-data", &[tag]);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn op_check<F>(name: &str, tol: f64, store: &mut ParamStore<f64>, run: F) -> CheckOutcome
where
    F: FnMut(&mut ParamStore<f64>, bool) -> f64,
{
    let report = grad_check(store, run, GradCheckConfig::default());
    CheckOutcome { name: name.to_string(), max_rel_err: report.max_rel_err(), tol }
}

/// Runs every per-operation check, one full-model check per fusion strategy,
/// and a vector+audio pipeline check. With `corrupt` set, one gradient entry
/// of the concatenation model is doubled after backward, which must surface
/// as a failure (used to prove the checker can fail).
pub fn gradcheck_suite(seed: u64, corrupt: bool) -> Result<Vec<CheckOutcome>> {
    let mut outcomes = vec![
        check_affine(seed),
        check_concat(seed),
        check_mean_of(seed),
        check_mean_axis(seed),
        check_scale(seed),
        check_mul(seed),
        check_sigmoid(seed),
        check_softmax_xent(seed),
        check_relu(seed),
        check_dropout(seed),
    ];
    for fusion in [FusionKind::Concat, FusionKind::ContextGate, FusionKind::Gating] {
        let corrupt_this = corrupt && fusion == FusionKind::Concat;
        outcomes.push(check_model(seed, fusion, false, corrupt_this)?);
    }
    outcomes.push(check_model(seed, FusionKind::Concat, true, false)?);
    Ok(outcomes)
}

fn check_affine(seed: u64) -> CheckOutcome {
    let mut store = ParamStore::new();
    let x = store.register("x", rand_tensor(seed, 0, &[3, 4], -1.0, 1.0));
    let w = store.register("w", rand_tensor(seed, 1, &[4, 2], -1.0, 1.0));
    let b = store.register("b", rand_tensor(seed, 2, &[2], -1.0, 1.0));
    op_check("affine", GRADCHECK_TOL_LINEAR, &mut store, |store, backward| {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.param(store, x), tape.param(store, w), tape.param(store, b));
        let y = tape.affine(xv, wv, bv).unwrap();
        let m = tape.mean_axis(y, 0).unwrap();
        // Weighted sum keeps every output coordinate in the loss.
        let weights = tape.leaf(Tensor::new(vec![2], vec![0.7, -1.3]).unwrap());
        let prod = tape.mul(m, weights).unwrap();
        let two = tape.scale(prod, 2.0);
        let loss = tape.sum(two);
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, store).unwrap();
        }
        value
    })
}

fn check_concat(seed: u64) -> CheckOutcome {
    let mut store = ParamStore::new();
    let a = store.register("a", rand_tensor(seed, 3, &[2, 3], -1.0, 1.0));
    let b = store.register("b", rand_tensor(seed, 4, &[2, 2], -1.0, 1.0));
    let c = store.register("c", rand_tensor(seed, 5, &[2, 4], -1.0, 1.0));
    op_check("concat", GRADCHECK_TOL_LINEAR, &mut store, |store, backward| {
        let mut tape = Tape::new();
        let parts = [tape.param(store, a), tape.param(store, b), tape.param(store, c)];
        let cat = tape.concat(&parts).unwrap();
        let weights = tape.leaf(rand_tensor(seed, 6, &[2, 9], -1.0, 1.0));
        let prod = tape.mul(cat, weights).unwrap();
        let m = tape.mean_axis(prod, 1).unwrap();
        let loss = tape.sum(m);
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, store).unwrap();
        }
        value
    })
}

fn check_mean_of(seed: u64) -> CheckOutcome {
    let mut store = ParamStore::new();
    let a = store.register("a", rand_tensor(seed, 7, &[2, 3], -1.0, 1.0));
    let b = store.register("b", rand_tensor(seed, 8, &[2, 3], -1.0, 1.0));
    op_check("mean_of", GRADCHECK_TOL_LINEAR, &mut store, |store, backward| {
        let mut tape = Tape::new();
        let parts = [tape.param(store, a), tape.param(store, b)];
        let m = tape.mean_of(&parts).unwrap();
        let weights = tape.leaf(rand_tensor(seed, 9, &[2, 3], -1.0, 1.0));
        let prod = tape.mul(m, weights).unwrap();
        let row = tape.mean_axis(prod, 0).unwrap();
        let loss = tape.sum(row);
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, store).unwrap();
        }
        value
    })
}

fn check_mean_axis(seed: u64) -> CheckOutcome {
    let mut store = ParamStore::new();
    let a = store.register("a", rand_tensor(seed, 10, &[3, 5], -1.0, 1.0));
    op_check("mean_over_axis", GRADCHECK_TOL_LINEAR, &mut store, |store, backward| {
        let mut tape = Tape::new();
        let av = tape.param(store, a);
        let rows = tape.mean_axis(av, 1).unwrap();
        let weights = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let prod = tape.mul(rows, weights).unwrap();
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, store).unwrap();
        }
        value
    })
}

fn check_scale(seed: u64) -> CheckOutcome {
    let mut store = ParamStore::new();
    let a = store.register("a", rand_tensor(seed, 11, &[2, 4], -1.0, 1.0));
    op_check("scale", GRADCHECK_TOL_LINEAR, &mut store, |store, backward| {
        let mut tape = Tape::new();
        let av = tape.param(store, a);
        let s = tape.scale(av, -1.7);
        let m = tape.mean_axis(s, 0).unwrap();
        let loss = tape.sum(m);
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, store).unwrap();
        }
        value
    })
}

fn check_mul(seed: u64) -> CheckOutcome {
    let mut store = ParamStore::new();
    let a = store.register("a", rand_tensor(seed, 12, &[2, 4], -1.0, 1.0));
    let b = store.register("b", rand_tensor(seed, 13, &[2, 4], -1.0, 1.0));
    op_check("elementwise_mul", GRADCHECK_TOL_LINEAR, &mut store, |store, backward| {
        let mut tape = Tape::new();
        let (av, bv) = (tape.param(store, a), tape.param(store, b));
        let prod = tape.mul(av, bv).unwrap();
        let m = tape.mean_axis(prod, 1).unwrap();
        let loss = tape.sum(m);
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, store).unwrap();
        }
        value
    })
}

fn check_sigmoid(seed: u64) -> CheckOutcome {
    let mut store = ParamStore::new();
    let a = store.register("a", rand_tensor(seed, 14, &[3, 3], -2.0, 2.0));
    op_check("sigmoid", GRADCHECK_TOL_LINEAR, &mut store, |store, backward| {
        let mut tape = Tape::new();
        let av = tape.param(store, a);
        let s = tape.sigmoid(av);
        let m = tape.mean_axis(s, 0).unwrap();
        let loss = tape.sum(m);
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, store).unwrap();
        }
        value
    })
}

fn check_softmax_xent(seed: u64) -> CheckOutcome {
    let mut store = ParamStore::new();
    let logits = store.register("logits", rand_tensor(seed, 15, &[5, 10], -2.0, 2.0));
    op_check("softmax_xent", GRADCHECK_TOL_LINEAR, &mut store, |store, backward| {
        let mut tape = Tape::new();
        let lv = tape.param(store, logits);
        let loss = tape.softmax_xent(lv, &[0, 3, 9, 5, 2]).unwrap();
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, store).unwrap();
        }
        value
    })
}

fn check_relu(seed: u64) -> CheckOutcome {
    // Values are kept away from the kink so central differences are valid.
    let mut store = ParamStore::new();
    let base = rand_tensor(seed, 16, &[3, 4], -1.0, 1.0);
    let shifted = base.map(|v| if v.abs() < 0.2 { v + 0.4 } else { v });
    let a = store.register("a", shifted);
    op_check("relu", GRADCHECK_TOL, &mut store, |store, backward| {
        let mut tape = Tape::new();
        let av = tape.param(store, a);
        let r = tape.relu(av);
        let weights = tape.leaf(rand_tensor(seed, 17, &[3, 4], 0.5, 1.5));
        let prod = tape.mul(r, weights).unwrap();
        let m = tape.mean_axis(prod, 1).unwrap();
        let loss = tape.sum(m);
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, store).unwrap();
        }
        value
    })
}

fn check_dropout(seed: u64) -> CheckOutcome {
    let mut store = ParamStore::new();
    let a = store.register("a", rand_tensor(seed, 18, &[4, 4], -1.0, 1.0));
    op_check("dropout", GRADCHECK_TOL_LINEAR, &mut store, |store, backward| {
        let mut tape = Tape::new();
        let av = tape.param(store, a);
        // The mask is a function of the re-derived rng only, so every probe
        // sees the same mask and the map stays differentiable.
        let mut rng = derive_rng(seed, "gradcheck-dropout", &[]);
        let d = tape.dropout(av, 0.4, true, &mut rng).unwrap();
        let m = tape.mean_axis(d, 0).unwrap();
        let loss = tape.sum(m);
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, store).unwrap();
        }
        value
    })
}

/// Tiny in-memory dataset for full-model checks.
fn toy_segments(seed: u64, with_audio: bool) -> (Vec<ModelModality>, Vec<LoadedSegment>) {
    let mut rng = derive_rng(seed, "gradcheck-streams", &[]);
    let duration = 2.0;
    let mut modalities = vec![
        ModelModality { id: "va".into(), kind: ModalityKind::VectorFrame, rate: 13.0, input_dim: 5 },
        ModelModality { id: "vb".into(), kind: ModalityKind::VectorFrame, rate: 7.0, input_dim: 5 },
        ModelModality { id: "vc".into(), kind: ModalityKind::VectorFrame, rate: 9.0, input_dim: 5 },
    ];
    if with_audio {
        modalities.pop();
        modalities.pop();
        modalities.push(ModelModality {
            id: "mic".into(),
            kind: ModalityKind::AudioWaveform,
            rate: f64::from(crate::audio::TARGET_RATE),
            input_dim: ModelConfig::audio_input_dim(32),
        });
    }
    let n_segments = if with_audio { 1 } else { 2 };
    let mut segments = Vec::new();
    for s in 0..n_segments {
        let streams = modalities
            .iter()
            .map(|m| match m.kind {
                ModalityKind::VectorFrame => {
                    let frames = (duration * m.rate).floor() as usize;
                    StreamData::Frames {
                        rate: m.rate,
                        dim: m.input_dim,
                        data: (0..frames * m.input_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
                    }
                }
                ModalityKind::AudioWaveform => {
                    let samples = (duration * m.rate).floor() as usize;
                    StreamData::Audio(crate::audio::Waveform::mono(
                        (0..samples).map(|_| rng.gen_range(-0.5f32..0.5)).collect(),
                        m.rate as u32,
                    ))
                }
            })
            .collect();
        segments.push(LoadedSegment {
            segment: ActionSegment {
                video_id: format!("toy{s}"),
                start: 0.0,
                end: duration,
                verb_class: s % 3,
                noun_class: (s + 1) % 4,
                tags: BTreeSet::new(),
            },
            streams,
        });
    }
    (modalities, segments)
}

fn check_model(seed: u64, fusion: FusionKind, with_audio: bool, corrupt: bool) -> Result<CheckOutcome> {
    let (modalities, segments) = toy_segments(seed, with_audio);
    let config = ModelConfig {
        modalities,
        feature_dim: 5,
        hidden_dim: 6,
        fused_dim: 7,
        fusion,
        verb_classes: 3,
        noun_classes: 4,
        dropout: 0.25,
        audio_pool: 32,
        tbw: TbwSettings {
            segments: if with_audio { 1 } else { 2 },
            width_rel: 1.0,
            test_anchors: 3,
        },
    };
    let mut model = TbnModel::<f64>::new(config, seed)?;
    let specs = model.config.modality_specs();
    let tbw = model.config.tbw_config(SamplingMode::TrainRandom);

    // Windows are sampled once and fixed; only the weights move during the
    // probes.
    let tuples = segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let mut rng = derive_rng(seed, "gradcheck-tuples", &[i as u64]);
            sample_training_tuples(&seg.segment, &specs, &tbw, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let batch: Vec<&LoadedSegment> = segments.iter().collect();

    let name = match (fusion, with_audio) {
        (FusionKind::Concat, true) => "forward_loss (vector+audio)".to_string(),
        (f, _) => format!("forward_loss ({f:?})"),
    };
    let check_config = GradCheckConfig {
        coords_per_param: if with_audio { 6 } else { 12 },
        ..GradCheckConfig::default()
    };
    let mut probe_store = model.store.clone();
    let mut run = |store: &mut ParamStore<f64>, backward: bool| {
        // grad_check mutates the store it was given; forward must read the
        // same storage, so swap it into the model for the call.
        std::mem::swap(&mut model.store, store);
        let mut dropout_rng = derive_rng(seed, "gradcheck-model-dropout", &[]);
        let result = model.forward_loss(&batch, &tuples, true, &mut dropout_rng);
        let (tape, loss, _) = match result {
            Ok(v) => v,
            Err(e) => {
                std::mem::swap(&mut model.store, store);
                panic!("forward failed during gradient check: {e}");
            }
        };
        let value = tape.value(loss).item();
        if backward {
            tape.backward(loss, &mut model.store).expect("backward");
            if corrupt {
                let id = model.store.id_by_name("fusion.w").expect("fusion weights");
                for g in model.store.param_mut(id).grad.data_mut() {
                    *g = *g * 2.0 + 1.0;
                }
            }
        }
        std::mem::swap(&mut model.store, store);
        value
    };
    let report = grad_check(&mut probe_store, &mut run, check_config);
    Ok(CheckOutcome { name, max_rel_err: report.max_rel_err(), tol: GRADCHECK_TOL })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes_at_its_tolerances() {
        let outcomes = gradcheck_suite(0xfeed, false).unwrap();
        assert!(outcomes.len() >= 14);
        for o in &outcomes {
            assert!(o.passed(), "{}: {} >= {}", o.name, o.max_rel_err, o.tol);
        }
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let outcomes = gradcheck_suite(0xfeed, true).unwrap();
        let bad: Vec<_> = outcomes.iter().filter(|o| !o.passed()).collect();
        assert!(
            bad.iter().any(|o| o.name.contains("Concat")),
            "corruption went unnoticed: {bad:?}"
        );
    }
}
