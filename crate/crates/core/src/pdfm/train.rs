use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::PdfmConfig;
use super::model::{init_model, Batch, PdfmGrads, PdfmModel};
use super::table::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::{concat_blocks, NodeInputs, Source};
use crate::graph::RegionGraph;
use crate::nn::{AdamState, CosineSchedule, Matrix};
use crate::sampling::{sample_many, SamplerConfig, Subgraph};
use crate::{io, par, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PdfmModel,
    pub history: Vec<EpochLog>,
    pub train_seeds: Vec<usize>,
    pub val_seeds: Vec<usize>,
}

/// Concatenate the graph's model-source blocks in canonical source order.
pub fn model_inputs(graph: &RegionGraph) -> Result<NodeInputs> {
    let blocks: Vec<_> = Source::MODEL_SOURCES.iter().filter_map(|s| graph.block(*s)).collect();
    if blocks.is_empty() {
        return Err(Error::Schema("graph has no feature blocks to train on".into()));
    }
    concat_blocks(&blocks)
}

/// Uniform seeded split of `0..n` into (train, validation), both ascending.
pub fn split_seeds(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut rng::stream(seed, "validation-split"));
    let n_val = (validation_fraction * n as f64).round() as usize;
    let mut val = all[..n_val].to_vec();
    let mut train = all[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// One round of message passing reads only the seed's own draws, which the
/// sampler makes first, so sampling a single hop yields the same neighbours
/// as any deeper setting.
fn hop1(cfg: &SamplerConfig, seed: u64) -> SamplerConfig {
    SamplerConfig { max_hops: 1, seed, ..cfg.clone() }
}

/// Loss (and optionally gradient) of the mean loss over `subs`, computed in
/// fixed-size chunks reduced in order.
fn batch_loss(
    model: &PdfmModel,
    x: &Matrix,
    subs: &[&Subgraph],
    cfg: &PdfmConfig,
    want_grads: bool,
) -> Result<(f64, Option<PdfmGrads>)> {
    let total = subs.len() as f64;
    let chunks: Vec<&[&Subgraph]> = subs.chunks(cfg.grad_chunk).collect();
    let weight = |s: Source| cfg.loss_weight(s);
    let parts = par::try_map_slice(&chunks, |chunk| {
        let batch = Batch::from_subgraphs(chunk);
        let scale = chunk.len() as f64 / total;
        let mut g = want_grads.then(|| PdfmGrads::zeros_like(model));
        let l = model.loss_batch(x, &batch, &weight, cfg.huber_delta, scale, g.as_mut())?;
        Ok::<_, Error>((l.total * scale, g))
    })?;
    let mut loss = 0.0;
    let mut grads: Option<PdfmGrads> = None;
    for (l, g) in parts {
        loss += l;
        if let Some(g) = g {
            match grads.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
    }
    Ok((loss, grads))
}

/// Mean reconstruction loss over `subs` without updating anything.
pub fn evaluate_loss(model: &PdfmModel, x: &Matrix, subs: &[Subgraph], cfg: &PdfmConfig) -> Result<f64> {
    let refs: Vec<&Subgraph> = subs.iter().collect();
    Ok(batch_loss(model, x, &refs, cfg, false)?.0)
}

/// Self-supervised training: every node is a seed, 80/20 train/validation
/// split, mini-batches of subgraphs, Adam with cosine decay.
pub fn train_pdfm(graph: &RegionGraph, cfg: &PdfmConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let inputs = model_inputs(graph)?;
    let x = &inputs.values;
    let mut model = init_model(cfg, &inputs.provenance, &mut rng::stream(cfg.seed, "init"))?;
    let (train_seeds, val_seeds) = split_seeds(graph.len(), cfg.validation_fraction, cfg.seed);
    let mut history = Vec::new();
    if cfg.epochs == 0 || train_seeds.is_empty() {
        return Ok(TrainOutcome { model, history, train_seeds, val_seeds });
    }
    let sampler_master = rng::derive_u64(cfg.seed, cfg.sampler.seed);
    let val_subs = sample_many(graph, &val_seeds, &hop1(&cfg.sampler, rng::derive(sampler_master, "validation")))?;
    let steps_per_epoch = train_seeds.len().div_ceil(cfg.batch_size);
    let schedule = CosineSchedule::new(cfg.lr_max, cfg.lr_min, (cfg.epochs * steps_per_epoch) as u64)?;
    let mut params = model.params();
    let mut adam = AdamState::new(params.len());
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let sampler = hop1(&cfg.sampler, rng::derive(sampler_master, &format!("epoch-{epoch}")));
        let mut order = train_seeds.clone();
        order.shuffle(&mut rng::stream(cfg.seed, &format!("order-{epoch}")));
        let subs = sample_many(graph, &order, &sampler)?;
        let epoch_lr = schedule.lr(step as u64);
        let mut epoch_loss = 0.0;
        for batch in subs.chunks(cfg.batch_size) {
            let refs: Vec<&Subgraph> = batch.iter().collect();
            let (loss, grads) = batch_loss(&model, x, &refs, cfg, true)?;
            if !loss.is_finite() {
                return Err(Error::Training { step, reason: format!("loss is {loss}") });
            }
            let flat = grads.expect("gradients requested").flatten();
            if flat.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training { step, reason: "non-finite gradient".into() });
            }
            adam.step(&mut params, &flat, schedule.lr(step as u64))?;
            model.set_params(&params)?;
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        let train_loss = epoch_loss / train_seeds.len() as f64;
        let val_loss = if val_subs.is_empty() { None } else { Some(evaluate_loss(&model, x, &val_subs, cfg)?) };
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:?} lr {epoch_lr:.2e}");
        history.push(EpochLog { epoch, train_loss, val_loss, lr: epoch_lr });
    }
    Ok(TrainOutcome { model, history, train_seeds, val_seeds })
}

/// One embedding per graph node, each from its own sampled subgraph.
pub fn export_embeddings(model: &PdfmModel, graph: &RegionGraph, sampler: &SamplerConfig) -> Result<EmbeddingTable> {
    let inputs = model_inputs(graph)?;
    model.check_inputs(&inputs)?;
    let seeds: Vec<usize> = (0..graph.len()).collect();
    let subs = sample_many(graph, &seeds, &hop1(sampler, sampler.seed))?;
    let chunks: Vec<&[Subgraph]> = subs.chunks(64).collect();
    let parts = par::try_map_slice(&chunks, |chunk| {
        let refs: Vec<&Subgraph> = chunk.iter().collect();
        model.embed_batch(&inputs.values, &Batch::from_subgraphs(&refs))
    })?;
    let mut values = Array2::zeros((graph.len(), model.embedding_dim()));
    let mut at = 0;
    for p in parts {
        values.slice_mut(ndarray::s![at..at + p.nrows(), ..]).assign(&p);
        at += p.nrows();
    }
    let weights: Vec<u8> = model.params().iter().flat_map(|v| v.to_le_bytes()).collect();
    let fingerprint = io::fingerprint(&(io::sha256_hex(&weights), sampler.seed));
    EmbeddingTable::new(inputs.ids.clone(), values, fingerprint, model.partitions.clone())
}

/// JSON-lines training log (one object per epoch).
pub fn write_training_log(path: &std::path::Path, history: &[EpochLog]) -> Result<()> {
    let mut text = String::new();
    for h in history {
        text.push_str(&serde_json::to_string(h).expect("log entries serialize"));
        text.push('\n');
    }
    io::write_string(path, &text)
}

pub fn read_training_log(path: &std::path::Path) -> Result<Vec<EpochLog>> {
    io::read_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::parse(path, e.to_string())))
        .collect()
}
