//! On-disk formats: NDJSON datasets with JSON manifests, binary tensor
//! checkpoints for policies and reward models, and CSV report writers.
//!
//! Every writer is deterministic: identical inputs produce identical bytes.
//! Floats are printed with the shortest representation that round-trips.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::env::{Catalog, LoggedInteraction, NoiseModel, OfflineDataset, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::policy::{ContextEncoder, ParametricPolicy};
use crate::rm::RewardModel;
use crate::train::{SweepRow, TrainTrace};

pub const DATASET_MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_DATA_FILE: &str = "data.ndjson";
pub const CHECKPOINT_MANIFEST_FILE: &str = "checkpoint.json";
pub const CHECKPOINT_PARAMS_FILE: &str = "params.bin";

/// Sidecar metadata stored next to an NDJSON dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_contexts: usize,
    pub n_actions: usize,
    pub n_records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trajectories: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    s: usize,
    a: usize,
    r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    traj: Option<usize>,
}

/// Writes `data.ndjson`, `manifest.json`, and (when the dataset carries
/// per-context histories) `histories.json` into `dir`.
pub fn save_dataset(dir: &Path, dataset: &OfflineDataset, manifest: &DatasetManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(std::fs::File::create(dir.join(DATASET_DATA_FILE))?);
    if let Some(trajectories) = &dataset.trajectories {
        for (tid, traj) in trajectories.iter().enumerate() {
            for step in &traj.steps {
                let row = Row {
                    s: step.context,
                    a: step.action,
                    r: step.observed_reward,
                    traj: Some(tid),
                };
                serde_json::to_writer(&mut out, &row)?;
                out.write_all(b"\n")?;
            }
        }
    } else {
        for step in &dataset.interactions {
            let row = Row {
                s: step.context,
                a: step.action,
                r: step.observed_reward,
                traj: None,
            };
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    let manifest_json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join(DATASET_MANIFEST_FILE), manifest_json + "\n")?;
    if let Some(histories) = &dataset.histories {
        let json = serde_json::to_string(histories)?;
        std::fs::write(dir.join("histories.json"), json + "\n")?;
    }
    Ok(())
}

/// Loads a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(OfflineDataset, DatasetManifest)> {
    let manifest_text = std::fs::read_to_string(dir.join(DATASET_MANIFEST_FILE))?;
    let manifest: DatasetManifest = serde_json::from_str(&manifest_text)?;
    let catalog = Catalog::new(manifest.n_contexts, manifest.n_actions)?;

    let file = std::fs::File::open(dir.join(DATASET_DATA_FILE))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }

    let grouped = rows.iter().any(|r| r.traj.is_some());
    let mut dataset = if grouped {
        let mut trajectories: Vec<Trajectory> = Vec::new();
        let mut current: Option<usize> = None;
        for row in &rows {
            let tid = row.traj.ok_or_else(|| {
                Error::parameter("dataset mixes trajectory rows with plain rows")
            })?;
            if current != Some(tid) {
                trajectories.push(Trajectory { steps: Vec::new() });
                current = Some(tid);
            }
            trajectories
                .last_mut()
                .expect("pushed above")
                .steps
                .push(LoggedInteraction {
                    context: row.s,
                    action: row.a,
                    observed_reward: row.r,
                });
        }
        OfflineDataset::from_trajectories(catalog, trajectories)?
    } else {
        let interactions = rows
            .iter()
            .map(|row| LoggedInteraction {
                context: row.s,
                action: row.a,
                observed_reward: row.r,
            })
            .collect();
        OfflineDataset::from_interactions(catalog, interactions)?
    };

    let histories_path = dir.join("histories.json");
    if histories_path.exists() {
        let text = std::fs::read_to_string(histories_path)?;
        dataset.histories = Some(serde_json::from_str(&text)?);
    }
    Ok((dataset, manifest))
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EncoderManifest {
    OneHot { n_contexts: usize },
    Learned { n_contexts: usize },
    MeanHistory { histories: Vec<Vec<usize>> },
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    model: String,
    tensors: Vec<TensorInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoder: Option<EncoderManifest>,
    #[serde(default)]
    meta: serde_json::Value,
}

fn write_tensor(out: &mut impl Write, data: &[f64]) -> Result<()> {
    out.write_all(&(data.len() as u64).to_le_bytes())?;
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(input: &mut impl Read, expected_len: usize) -> Result<Vec<f64>> {
    let mut len_buf = [0u8; 8];
    input.read_exact(&mut len_buf)?;
    let len = u64::from_le_bytes(len_buf) as usize;
    if len != expected_len {
        return Err(Error::parameter(format!(
            "tensor length {len} does not match manifest shape ({expected_len})"
        )));
    }
    let mut buf = [0u8; 8];
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        input.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok(values)
}

fn tensor_info(name: &str, shape: &[usize]) -> TensorInfo {
    TensorInfo {
        name: name.to_string(),
        shape: shape.to_vec(),
    }
}

fn write_checkpoint(dir: &Path, manifest: &CheckpointManifest, tensors: &[&[f64]]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join(CHECKPOINT_MANIFEST_FILE), json + "\n")?;
    let mut out = BufWriter::new(std::fs::File::create(dir.join(CHECKPOINT_PARAMS_FILE))?);
    for data in tensors {
        write_tensor(&mut out, data)?;
    }
    out.flush()?;
    Ok(())
}

fn read_checkpoint(dir: &Path, expected_model: &str) -> Result<(CheckpointManifest, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(dir.join(CHECKPOINT_MANIFEST_FILE))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.model != expected_model {
        return Err(Error::parameter(format!(
            "checkpoint holds a {:?} model, expected {expected_model:?}",
            manifest.model
        )));
    }
    let mut input = BufReader::new(std::fs::File::open(dir.join(CHECKPOINT_PARAMS_FILE))?);
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for info in &manifest.tensors {
        let len = info.shape.iter().product();
        tensors.push(read_tensor(&mut input, len)?);
    }
    Ok((manifest, tensors))
}

fn array2_from(shape: &[usize], data: Vec<f64>) -> Result<Array2<f64>> {
    if shape.len() != 2 {
        return Err(Error::parameter(format!(
            "expected a rank-2 tensor, manifest says rank {}",
            shape.len()
        )));
    }
    Array2::from_shape_vec((shape[0], shape[1]), data)
        .map_err(|e| Error::parameter(format!("tensor shape mismatch: {e}")))
}

/// Saves a policy checkpoint (JSON manifest plus row-major `params.bin`).
/// `meta` is free-form run metadata stored verbatim in the manifest.
pub fn save_policy(dir: &Path, policy: &ParametricPolicy, meta: serde_json::Value) -> Result<()> {
    let mut tensors: Vec<&[f64]> = vec![
        policy.item_embeddings.as_slice().expect("standard layout"),
        policy.item_bias.as_slice().expect("standard layout"),
    ];
    let mut infos = vec![
        tensor_info("item_embeddings", policy.item_embeddings.shape()),
        tensor_info("item_bias", policy.item_bias.shape()),
    ];
    let encoder = match &policy.encoder {
        ContextEncoder::OneHot { n_contexts } => EncoderManifest::OneHot {
            n_contexts: *n_contexts,
        },
        ContextEncoder::Learned { embeddings } => {
            infos.push(tensor_info("context_embeddings", embeddings.shape()));
            tensors.push(embeddings.as_slice().expect("standard layout"));
            EncoderManifest::Learned {
                n_contexts: embeddings.nrows(),
            }
        }
        ContextEncoder::MeanHistory { histories, .. } => EncoderManifest::MeanHistory {
            histories: histories.clone(),
        },
    };
    let manifest = CheckpointManifest {
        model: "policy".to_string(),
        tensors: infos,
        encoder: Some(encoder),
        meta,
    };
    write_checkpoint(dir, &manifest, &tensors)
}

/// Loads a policy checkpoint written by [`save_policy`].
pub fn load_policy(dir: &Path) -> Result<(ParametricPolicy, serde_json::Value)> {
    let (manifest, mut tensors) = read_checkpoint(dir, "policy")?;
    let expected = match manifest.encoder.as_ref() {
        Some(EncoderManifest::Learned { .. }) => 3,
        Some(_) => 2,
        None => {
            return Err(Error::parameter(
                "policy checkpoint is missing its encoder description",
            ))
        }
    };
    if tensors.len() != expected || manifest.tensors.len() != expected {
        return Err(Error::parameter(format!(
            "policy checkpoint should carry {expected} tensors, found {}",
            tensors.len()
        )));
    }
    let item_embeddings = array2_from(&manifest.tensors[0].shape, tensors.remove(0))?;
    let item_bias = Array1::from_vec(tensors.remove(0));
    let encoder = match manifest.encoder.expect("checked above") {
        EncoderManifest::OneHot { n_contexts } => ContextEncoder::OneHot { n_contexts },
        EncoderManifest::Learned { .. } => ContextEncoder::Learned {
            embeddings: array2_from(&manifest.tensors[2].shape, tensors.remove(0))?,
        },
        EncoderManifest::MeanHistory { histories } => ContextEncoder::MeanHistory {
            histories,
            dim: item_embeddings.ncols(),
        },
    };
    let policy = ParametricPolicy::from_parts(item_embeddings, item_bias, encoder)?;
    Ok((policy, manifest.meta))
}

/// Saves a reward-model checkpoint in the same manifest/params layout.
pub fn save_reward_model(dir: &Path, model: &RewardModel, meta: serde_json::Value) -> Result<()> {
    let global_bias = [model.global_bias];
    let tensors: Vec<&[f64]> = vec![
        model.user_embeddings.as_slice().expect("standard layout"),
        model.item_embeddings.as_slice().expect("standard layout"),
        model.item_bias.as_slice().expect("standard layout"),
        &global_bias,
    ];
    let manifest = CheckpointManifest {
        model: "reward_model".to_string(),
        tensors: vec![
            tensor_info("user_embeddings", model.user_embeddings.shape()),
            tensor_info("item_embeddings", model.item_embeddings.shape()),
            tensor_info("item_bias", model.item_bias.shape()),
            tensor_info("global_bias", &[1]),
        ],
        encoder: None,
        meta,
    };
    write_checkpoint(dir, &manifest, &tensors)
}

/// Loads a reward-model checkpoint written by [`save_reward_model`].
pub fn load_reward_model(dir: &Path) -> Result<(RewardModel, serde_json::Value)> {
    let (manifest, mut tensors) = read_checkpoint(dir, "reward_model")?;
    if tensors.len() != 4 {
        return Err(Error::parameter(format!(
            "reward-model checkpoint should carry 4 tensors, found {}",
            tensors.len()
        )));
    }
    let user_embeddings = array2_from(&manifest.tensors[0].shape, tensors.remove(0))?;
    let item_embeddings = array2_from(&manifest.tensors[1].shape, tensors.remove(0))?;
    let item_bias = Array1::from_vec(tensors.remove(0));
    let global = tensors.remove(0);
    let model = RewardModel::from_parts(user_embeddings, item_embeddings, item_bias, global[0])?;
    Ok((model, manifest.meta))
}

/// Formats a float with the shortest digits that parse back exactly.
pub fn format_float(x: f64) -> String {
    format!("{x}")
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

/// Per-epoch training trace. Metric columns are empty when the epoch had
/// no evaluation hooks attached.
pub fn train_trace_csv(trace: &TrainTrace) -> String {
    let mut out = String::from("epoch,loss,true_value,kl_to_tilt,ndcg10,ndcg50,hr10,hr50,mrr\n");
    for rec in &trace.records {
        let m = rec.metrics.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            rec.epoch,
            format_float(rec.loss),
            opt_cell(rec.true_value),
            opt_cell(rec.kl_to_tilt),
            opt_cell(m.map(|m| m.ndcg10)),
            opt_cell(m.map(|m| m.ndcg50)),
            opt_cell(m.map(|m| m.hr10)),
            opt_cell(m.map(|m| m.hr50)),
            opt_cell(m.map(|m| m.mrr)),
        ));
    }
    out
}

/// One labelled evaluation row, e.g. the final metrics of one algorithm.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub algo: String,
    pub epoch: usize,
    pub report: MetricsReport,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "algo,epoch,n_cases,hr10,hr50,ndcg10,ndcg50,mrr,avg_reward,oracle_value\n",
    );
    for row in rows {
        let m = &row.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.algo,
            row.epoch,
            m.n_cases,
            format_float(m.hr10),
            format_float(m.hr50),
            format_float(m.ndcg10),
            format_float(m.ndcg50),
            format_float(m.mrr),
            opt_cell(m.avg_reward),
            opt_cell(m.oracle_value),
        ));
    }
    out
}

/// One step of an optimization-against-reward-model run.
#[derive(Debug, Clone, Copy)]
pub struct HackRow {
    pub step: usize,
    pub avg_rm_score: f64,
    pub oracle_value: f64,
    pub ndcg10: Option<f64>,
}

pub fn hack_csv(rows: &[HackRow]) -> String {
    let mut out = String::from("step,avg_rm_score,oracle_value,ndcg10\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.step,
            format_float(row.avg_rm_score),
            format_float(row.oracle_value),
            opt_cell(row.ndcg10),
        ));
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "lambda,best_value_epoch,best_value,final_value,best_ndcg10_epoch,best_ndcg10,final_ndcg10\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            format_float(row.lambda),
            row.best_value_epoch,
            format_float(row.best_value),
            format_float(row.final_value),
            row.best_ndcg10_epoch,
            format_float(row.best_ndcg10),
            format_float(row.final_ndcg10),
        ));
    }
    out
}

/// Writes a string to `path`, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Run manifest written next to every CLI artifact: the resolved config
/// plus the seed, so a run can be reproduced from its output directory.
pub fn run_manifest(command: &str, seed: u64, config: serde_json::Value) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    map.insert("command".into(), command.into());
    map.insert("seed".into(), serde_json::json!(seed));
    map.insert("config".into(), config);
    serde_json::Value::Object(map)
}

/// Loads logged interactions back as a map for spot checks in tests.
pub fn interaction_counts(dataset: &OfflineDataset) -> HashMap<(usize, usize), usize> {
    let mut counts = HashMap::new();
    for step in &dataset.interactions {
        *counts.entry((step.context, step.action)).or_insert(0) += 1;
    }
    counts
}
