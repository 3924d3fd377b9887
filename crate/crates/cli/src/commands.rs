use std::fs;
use std::path::Path;

use ckpd_core::checkpoint;
use ckpd_core::covariance::input_covariance;
use ckpd_core::fscil::{prepare_base, run_from_base, ProbeRequest};
use ckpd_core::numkernel::io::{load_matrix, save_matrix};
use ckpd_core::{
    compute_asr, compute_metrics, decompose as kpd_decompose, generate_task, merge,
    session_selection, CovarianceBuffer, Error, ExperimentConfig, Matrix, Result, RunMetrics,
};
use log::info;
use serde_json::json;

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<&Path> {
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), cfg.to_json()? + "\n")?;
    Ok(out)
}

fn labels_csv(labels: impl Iterator<Item = u32>) -> String {
    let mut s = String::from("label\n");
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    s
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let task = generate_task(&cfg.session_spec())?;
    for s in &task.sessions {
        let dir = out.join(format!("session_{}", s.session));
        fs::create_dir_all(&dir)?;
        for (name, samples) in [("train", &s.train), ("test", &s.test)] {
            let rows: Vec<&[f64]> = samples.iter().map(|x| x.input.as_slice()).collect();
            save_matrix(dir.join(format!("{name}.mat")), &Matrix::from_rows(&rows)?)?;
            fs::write(
                dir.join(format!("{name}_labels.csv")),
                labels_csv(samples.iter().map(|x| x.label.0)),
            )?;
        }
    }
    info!("wrote {} sessions to {}", task.sessions.len(), out.display());
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let out = prepare_out(cfg)?;
    let train = cfg.train_config();
    let (task, base) = prepare_base(&cfg.session_spec(), &train)?;
    info!("base backbone hash {}", base.model.content_hash());
    let result = run_from_base(&base, &task, cfg.strategy, &train, None)?;
    for (t, h) in result.backbone_hashes.iter().enumerate() {
        info!("session {} backbone hash {h}", t + 1);
    }

    fs::write(out.join("metrics.csv"), result.metrics.to_csv())?;
    write_json(
        &out.join("metrics.json"),
        &json!({
            "strategy": cfg.strategy,
            "seed": cfg.seed,
            "avg": result.metrics.avg,
            "pd": result.metrics.pd,
            "sessions": result.metrics.sessions,
            "backbone_hashes": result.backbone_hashes,
        }),
    )?;
    let asr_dir = out.join("asr");
    fs::create_dir_all(&asr_dir)?;
    for report in &result.asr_reports {
        let stem = format!("session_{}", report.session_id);
        write_json(&asr_dir.join(format!("{stem}.json")), &serde_json::to_value(report)?)?;
        fs::write(asr_dir.join(format!("{stem}.csv")), report.to_csv())?;
    }
    let state = &result.final_state;
    checkpoint::save(out.join("checkpoint"), &state.model, &state.classifier)?;
    state.buffer.save(out.join("buffer.txt"))?;
    println!(
        "{} seed {}: avg {:.4} pd {:.4}",
        cfg.strategy, cfg.seed, result.metrics.avg, result.metrics.pd
    );
    Ok(())
}

pub fn decompose(cfg: &ExperimentConfig, weight: &Path, activations: &Path) -> Result<()> {
    let w = load_matrix(weight)?;
    let acts = load_matrix(activations)?;
    if acts.cols() != w.cols() {
        return Err(Error::Shape(format!(
            "activations have width {}, weight expects {}",
            acts.cols(),
            w.cols()
        )));
    }
    let sigma = input_covariance(&acts.transpose())?;
    let layer = kpd_decompose(&w, &sigma, &cfg.kpd())?;
    let out = cfg.output_dir.as_path();
    layer.save_dir(out)?;
    let reconstruction_error = merge(&layer).sub(&w)?.frobenius_norm();
    write_json(
        &out.join("report.json"),
        &json!({
            "rank_r": layer.rank_r,
            "singular_values": layer.singular_values,
            "asr": compute_asr(&layer.singular_values, layer.rank_r)?,
            "lambda_final": layer.lambda_final,
            "reconstruction_error": reconstruction_error,
        }),
    )?;
    info!("reconstruction error {reconstruction_error:e}");
    Ok(())
}

pub fn asr_report(cfg: &ExperimentConfig, ckpt: &Path, buffer: &Path, session: usize) -> Result<()> {
    let (model, _) = checkpoint::load(ckpt)?;
    let buffer = CovarianceBuffer::load(buffer, cfg.seed)?;
    if buffer.dim() != Some(model.input_dim()) {
        return Err(Error::Shape(format!(
            "buffer dimension {:?} does not match backbone input {}",
            buffer.dim(),
            model.input_dim()
        )));
    }
    let (report, _) = session_selection(&model, &buffer, &cfg.kpd(), cfg.k_layers, session)?;
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out)?;
    fs::write(out.join("asr.csv"), report.to_csv())?;
    write_json(&out.join("asr.json"), &serde_json::to_value(&report)?)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn probe_dropout(cfg: &ExperimentConfig, rate: f64, session: usize, mask_seed: Option<u64>) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidRate(rate));
    }
    if session == 0 || session > cfg.num_incremental {
        return Err(Error::InvalidConfig(format!(
            "probe session must be in 1..={}",
            cfg.num_incremental
        )));
    }
    let out = prepare_out(cfg)?;
    let train = cfg.train_config();
    let (task, base) = prepare_base(&cfg.session_spec(), &train)?;
    let req = ProbeRequest { session, rate, mask_seed: mask_seed.unwrap_or(cfg.seed) };
    let result = run_from_base(&base, &task, cfg.strategy, &train, Some(&req))?;
    let probe = result
        .probe
        .ok_or_else(|| Error::InvalidConfig(format!("session {session} was not probed")))?;
    write_json(
        &out.join("probe.json"),
        &json!({
            "strategy": cfg.strategy,
            "seed": cfg.seed,
            "mask_seed": req.mask_seed,
            "probe": probe,
        }),
    )?;
    println!(
        "{} session {session} rate {rate}: base {:.4} -> {:.4}, novel {:.4} -> {:.4}",
        cfg.strategy, probe.clean_base, probe.base_acc, probe.clean_novel, probe.novel_acc
    );
    Ok(())
}

pub fn metrics(input: &Path) -> Result<()> {
    let parsed = RunMetrics::from_csv(&fs::read_to_string(input)?)?;
    let m = compute_metrics(&parsed.sessions)?;
    println!("{}", serde_json::to_string(&json!({ "avg": m.avg, "pd": m.pd }))?);
    Ok(())
}
