use std::fs;
use std::path::{Path, PathBuf};

use tbn_core::audio::{prepare_waveform, window_spectrogram, Waveform, SPEC_BINS, SPEC_FRAMES};
use tbn_core::dataset::{load_dataset, read_stream, write_json, Dataset};
use tbn_core::error::{Error, Result};
use tbn_core::metrics::{confusion_to_csv, evaluate, subset_eval, EvalResult, ScoreSet};
use tbn_core::model::{
    ensemble_scores, gradcheck_suite, logs_to_csv, predict_scores, sweep_to_csv, sweep_widths,
    train, EvalOptions, ModelConfig, TbnModel,
};
use tbn_core::sampler::CompanionPlacement;
use tbn_core::synthgen::generate_dataset;

use crate::config::{parse_width, CompanionMode, RunConfig};
use crate::plot::sweep_svg;

fn ensure_out_dir(config: &RunConfig, default: &str) -> Result<PathBuf> {
    let dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn manifest_path(config: &RunConfig) -> Result<&Path> {
    config
        .manifest
        .as_deref()
        .ok_or_else(|| Error::Config("no manifest given (flag --manifest or config)".into()))
}

fn load_for_model(config: &RunConfig) -> Result<Dataset> {
    load_dataset(manifest_path(config)?, config.modalities.as_deref())
}

pub fn cmd_gen(config: &RunConfig) -> Result<()> {
    let out = ensure_out_dir(config, "tbn-dataset")?;
    let paths = generate_dataset(&config.synth, config.seed, &out)?;
    config.write_effective(&out)?;
    let train_lines = config.synth.n_classes * config.synth.samples_per_class;
    let test_lines = config.synth.n_classes * config.synth.test_samples_per_class;
    println!(
        "wrote {} ({train_lines} segments) and {} ({test_lines} segments)",
        paths.train_manifest.display(),
        paths.test_manifest.display()
    );
    Ok(())
}

pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let out = ensure_out_dir(config, "tbn-run")?;
    let data = load_for_model(config)?;
    let mut model_config = ModelConfig::for_dataset(&data, config.model.fusion)?;
    model_config.feature_dim = config.model.feature_dim;
    model_config.hidden_dim = config.model.hidden_dim;
    model_config.fused_dim = config.model.fused_dim;
    model_config.dropout = config.model.dropout;
    model_config.audio_pool = config.model.audio_pool;
    model_config.tbw = config.tbw;
    // Audio input widths depend on the pooling patch size.
    for m in &mut model_config.modalities {
        if m.kind == tbn_core::sampler::ModalityKind::AudioWaveform {
            m.input_dim = ModelConfig::audio_input_dim(config.model.audio_pool);
        }
    }

    let mut model = TbnModel::<f32>::new(model_config, config.seed)?;
    let logs = train(&mut model, &data, &config.train, config.seed)?;

    let ckpt = out.join("checkpoint.tbn");
    model.save(&ckpt)?;
    let log_path = out.join("train_log.csv");
    fs::write(&log_path, logs_to_csv(&logs)).map_err(|e| Error::io(&log_path, e))?;
    config.write_effective(&out)?;
    if let Some(last) = logs.last() {
        println!(
            "trained {} epochs: loss {:.4}, verb top-1 {:.3}, noun top-1 {:.3} -> {}",
            logs.len(),
            last.loss,
            last.verb_top1,
            last.noun_top1,
            ckpt.display()
        );
    }
    Ok(())
}

fn checkpoint_scores(
    ckpt_path: &Path,
    config: &RunConfig,
    data_cache: &mut Option<(Vec<String>, Dataset)>,
) -> Result<ScoreSet> {
    let model = TbnModel::<f32>::load(ckpt_path)?;
    let ids: Vec<String> = model.config.modalities.iter().map(|m| m.id.clone()).collect();
    // Reload only when the modality set differs from the cached dataset.
    if data_cache.as_ref().map(|(cached, _)| cached != &ids).unwrap_or(true) {
        let data = load_dataset(manifest_path(config)?, Some(&ids))?;
        *data_cache = Some((ids.clone(), data));
    }
    let (_, data) = data_cache.as_ref().expect("cache filled above");
    let anchors = config.eval.anchors.unwrap_or(model.config.tbw.test_anchors);
    let placement = match config.eval.companions {
        CompanionMode::Sync => CompanionPlacement::Synchronous,
        CompanionMode::Tbw => {
            CompanionPlacement::Window { width_rel: model.config.tbw.width_rel }
        }
    };
    let opts = EvalOptions {
        anchors,
        placement,
        score: config.eval.score,
        seed: config.seed,
    };
    predict_scores(&model, data, &opts)
}

fn write_eval_outputs(out: &Path, name: &str, result: &EvalResult) -> Result<()> {
    write_json(&out.join(format!("{name}.json")), result)?;
    let verb_csv = out.join(format!("{name}_verb_confusion.csv"));
    fs::write(&verb_csv, confusion_to_csv(&result.verb.confusion))
        .map_err(|e| Error::io(&verb_csv, e))?;
    let noun_csv = out.join(format!("{name}_noun_confusion.csv"));
    fs::write(&noun_csv, confusion_to_csv(&result.noun.confusion))
        .map_err(|e| Error::io(&noun_csv, e))?;
    Ok(())
}

pub fn cmd_eval(config: &RunConfig) -> Result<()> {
    let out = ensure_out_dir(config, "tbn-eval")?;
    let mut cache = None;
    let scores = if config.eval.ensemble.is_empty() {
        let ckpt = config
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config("no checkpoint given (flag --checkpoint or config)".into()))?;
        checkpoint_scores(ckpt, config, &mut cache)?
    } else {
        let members = config
            .eval
            .ensemble
            .iter()
            .map(|p| checkpoint_scores(p, config, &mut cache))
            .collect::<Result<Vec<_>>>()?;
        ensemble_scores(&members)?
    };

    let result = evaluate(&scores)?;
    write_eval_outputs(&out, "eval", &result)?;
    if let Some(tag) = &config.eval.subset_tag {
        let (subset, rest) = subset_eval(&scores, tag)?;
        write_eval_outputs(&out, "eval_subset", &subset)?;
        write_eval_outputs(&out, "eval_rest", &rest)?;
        println!(
            "subset {tag:?}: verb top-1 {:.3} (n={}), rest {:.3} (n={})",
            subset.verb.top1, subset.n, rest.verb.top1, rest.n
        );
    }
    config.write_effective(&out)?;
    println!(
        "evaluated {} segments: verb top-1 {:.3}, noun top-1 {:.3}, action top-1 {:.3} -> {}",
        result.n,
        result.verb.top1,
        result.noun.top1,
        result.action.top1,
        out.join("eval.json").display()
    );
    Ok(())
}

pub fn cmd_sweep_b(config: &RunConfig) -> Result<()> {
    let out = ensure_out_dir(config, "tbn-sweep")?;
    let ckpt = config
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("no checkpoint given (flag --checkpoint or config)".into()))?;
    let model = TbnModel::<f32>::load(ckpt)?;
    let ids: Vec<String> = model.config.modalities.iter().map(|m| m.id.clone()).collect();
    let data = load_dataset(manifest_path(config)?, Some(&ids))?;
    if config.sweep.widths.is_empty() {
        return Err(Error::InvalidArgument("sweep width list is empty".into()));
    }
    let widths = config
        .sweep
        .widths
        .iter()
        .map(|label| parse_width(label).map(|w| (label.clone(), w)))
        .collect::<Result<Vec<_>>>()?;
    let points = sweep_widths(&model, &data, &widths, config.sweep.runs, config.seed)?;

    let csv_path = out.join("sweep.csv");
    fs::write(&csv_path, sweep_to_csv(&points)).map_err(|e| Error::io(&csv_path, e))?;
    let svg_path = out.join("sweep.svg");
    fs::write(&svg_path, sweep_svg(&points)).map_err(|e| Error::io(&svg_path, e))?;
    config.write_effective(&out)?;
    for p in &points {
        println!(
            "{:>6}: verb {:.3}+-{:.3}  noun {:.3}+-{:.3}  action {:.3}+-{:.3}",
            p.label, p.verb_mean, p.verb_std, p.noun_mean, p.noun_std, p.action_mean, p.action_std
        );
    }
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

pub fn cmd_gradcheck(config: &RunConfig, corrupt: bool) -> Result<()> {
    let outcomes = gradcheck_suite(config.seed, corrupt)?;
    let mut failed = 0;
    for o in &outcomes {
        println!(
            "{:<32} max rel err {:>10.3e}  tol {:>7.0e}  {}",
            o.name,
            o.max_rel_err,
            o.tol,
            if o.passed() { "ok" } else { "FAIL" }
        );
        if !o.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::InvalidArgument(format!(
            "{failed} of {} gradient checks failed",
            outcomes.len()
        )));
    }
    println!("all {} gradient checks passed", outcomes.len());
    Ok(())
}

#[derive(serde::Serialize)]
struct SpectrogramSidecar {
    rows: usize,
    cols: usize,
    center_time: f64,
}

pub fn cmd_dump(config: &RunConfig, input: &Path, center: Option<f64>, output: &Path) -> Result<()> {
    let _ = config;
    let (samples, sidecar) = read_stream(input)?;
    let wave = Waveform {
        samples,
        sample_rate: sidecar.sample_rate.unwrap_or(sidecar.rate as u32),
        channels: sidecar.channels.unwrap_or(1),
    };
    let prepared = prepare_waveform(&wave)?;
    let center = center.unwrap_or_else(|| prepared.duration() / 2.0);
    let spec = window_spectrogram(&prepared, center)?;
    let mut bytes = Vec::with_capacity(spec.values.len() * 4);
    for v in &spec.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(output, bytes).map_err(|e| Error::io(output, e))?;
    let sidecar_path = {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".json");
        output.with_file_name(name)
    };
    write_json(
        &sidecar_path,
        &SpectrogramSidecar { rows: SPEC_BINS, cols: SPEC_FRAMES, center_time: center },
    )?;
    println!(
        "wrote {SPEC_BINS}x{SPEC_FRAMES} spectrogram at {center:.3}s -> {}",
        output.display()
    );
    Ok(())
}
