use std::collections::HashMap;
use std::ops::Range;

use ndarray::{s, Array1, Array2, Axis};

use super::config::{Partition, PdfmConfig, Pooling};
use crate::error::{Error, Result};
use crate::features::{NodeInputs, Source};
use crate::graph::EdgeSetKind;
use crate::nn::{huber_loss, Activation, Checkpoint, DenseCache, DenseGrads, DenseLayer, Matrix};
use crate::rng::Rng;
use crate::sampling::Subgraph;

/// Reconstruction head for one source. It sees only `partition` columns of
/// the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderHead {
    pub source: Source,
    pub partition: Range<usize>,
    /// Columns of the concatenated input this head reconstructs.
    pub target_cols: Range<usize>,
    pub layer: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdfmModel {
    pub encoder: DenseLayer,
    /// One per edge set in [`EdgeSetKind::ALL`] order, or a single shared layer.
    pub neighbor: Vec<DenseLayer>,
    pub self_transform: DenseLayer,
    pub embedding: DenseLayer,
    pub heads: Vec<DecoderHead>,
    pub pooling: Pooling,
    pub partitions: Vec<Partition>,
    pub input_layout: Vec<(Source, Range<usize>)>,
}

/// Build a model for inputs laid out as `layout` (source → input columns).
pub fn init_model(cfg: &PdfmConfig, layout: &[(Source, Range<usize>)], rng: &mut Rng) -> Result<PdfmModel> {
    cfg.validate()?;
    let width = layout.iter().map(|(_, r)| r.end).max().unwrap_or(0);
    if width == 0 {
        return Err(Error::Shape("model inputs have no columns".into()));
    }
    let h = cfg.hidden;
    let encoder = DenseLayer::glorot(width, h, Activation::Gelu, rng);
    let n_neighbor = if cfg.share_neighbor_weights { 1 } else { EdgeSetKind::ALL.len() };
    let neighbor = (0..n_neighbor).map(|_| DenseLayer::glorot(h, h, Activation::Relu, rng)).collect();
    let self_transform = DenseLayer::glorot(h, h, Activation::Identity, rng);
    let embedding = DenseLayer::glorot(h, cfg.embedding_dim, Activation::Identity, rng);
    let mut heads = Vec::new();
    for (source, cols) in layout {
        let part = cfg.partition_of(*source).ok_or_else(|| {
            Error::config("pdfm.partitions", format!("input source {source} is not assigned to a partition"))
        })?;
        heads.push(DecoderHead {
            source: *source,
            partition: part.range(),
            target_cols: cols.clone(),
            layer: DenseLayer::glorot(part.width(), cols.len(), Activation::Identity, rng),
        });
    }
    Ok(PdfmModel {
        encoder,
        neighbor,
        self_transform,
        embedding,
        heads,
        pooling: cfg.pooling,
        partitions: cfg.partitions.clone(),
        input_layout: layout.to_vec(),
    })
}

/// Row indices needed for one mini-batch, with per-seed neighbour lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub seeds: Vec<usize>,
    /// Unique graph indices whose initial state is needed, ascending.
    pub nodes: Vec<usize>,
    /// Row in `nodes` of each seed.
    pub seed_rows: Vec<usize>,
    /// `[edge set][seed]` → rows in `nodes` of the sampled hop-1 neighbours.
    pub neighbors: Vec<Vec<Vec<usize>>>,
}

impl Batch {
    pub fn from_subgraphs(subgraphs: &[&Subgraph]) -> Self {
        let mut nodes: Vec<usize> = subgraphs
            .iter()
            .flat_map(|sg| {
                std::iter::once(sg.seed()).chain(sg.edges.iter().filter(|e| e.from == 0).map(|e| sg.nodes[e.to]))
            })
            .collect();
        nodes.sort_unstable();
        nodes.dedup();
        let row: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let neighbors = EdgeSetKind::ALL
            .iter()
            .map(|&k| {
                subgraphs
                    .iter()
                    .map(|sg| sg.seed_neighbors(k).map(|l| row[&sg.nodes[l]]).collect())
                    .collect()
            })
            .collect();
        Self {
            seeds: subgraphs.iter().map(|sg| sg.seed()).collect(),
            seed_rows: subgraphs.iter().map(|sg| row[&sg.seed()]).collect(),
            nodes,
            neighbors,
        }
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

/// Intermediate values of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    encoder: DenseCache,
    /// Per edge set: rows of `h0` fed to the neighbour layer, their positions, cache.
    neighbor: Vec<Option<(Vec<usize>, HashMap<usize, usize>, DenseCache)>>,
    self_transform: DenseCache,
    embedding_cache: DenseCache,
    pub embedding: Matrix,
    h0_rows: usize,
}

/// Parameter gradients in the same layout as [`PdfmModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct PdfmGrads {
    pub encoder: DenseGrads,
    pub neighbor: Vec<DenseGrads>,
    pub self_transform: DenseGrads,
    pub embedding: DenseGrads,
    pub heads: Vec<DenseGrads>,
}

impl PdfmGrads {
    pub fn zeros_like(m: &PdfmModel) -> Self {
        Self {
            encoder: DenseGrads::zeros_like(&m.encoder),
            neighbor: m.neighbor.iter().map(DenseGrads::zeros_like).collect(),
            self_transform: DenseGrads::zeros_like(&m.self_transform),
            embedding: DenseGrads::zeros_like(&m.embedding),
            heads: m.heads.iter().map(|h| DenseGrads::zeros_like(&h.layer)).collect(),
        }
    }

    pub fn add_assign(&mut self, o: &PdfmGrads) {
        self.encoder.add_assign(&o.encoder);
        self.neighbor.iter_mut().zip(&o.neighbor).for_each(|(a, b)| a.add_assign(b));
        self.self_transform.add_assign(&o.self_transform);
        self.embedding.add_assign(&o.embedding);
        self.heads.iter_mut().zip(&o.heads).for_each(|(a, b)| a.add_assign(b));
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.encoder.write_params(&mut out);
        self.neighbor.iter().for_each(|g| g.write_params(&mut out));
        self.self_transform.write_params(&mut out);
        self.embedding.write_params(&mut out);
        self.heads.iter().for_each(|g| g.write_params(&mut out));
        out
    }
}

/// Loss terms of one batch, per head and weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub per_source: Vec<(Source, f64)>,
}

impl PdfmModel {
    pub fn hidden(&self) -> usize {
        self.encoder.outputs()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding.outputs()
    }

    pub fn input_width(&self) -> usize {
        self.encoder.inputs()
    }

    fn neighbor_layer(&self, kind: EdgeSetKind) -> usize {
        if self.neighbor.len() == 1 {
            0
        } else {
            kind.index()
        }
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        std::iter::once(&self.encoder)
            .chain(self.neighbor.iter())
            .chain([&self.self_transform, &self.embedding])
            .chain(self.heads.iter().map(|h| &h.layer))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.param_count()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.layers().for_each(|l| l.write_params(&mut out));
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.param_count(), flat.len())));
        }
        let mut rest = self.encoder.read_params(flat);
        for l in &mut self.neighbor {
            rest = l.read_params(rest);
        }
        rest = self.self_transform.read_params(rest);
        rest = self.embedding.read_params(rest);
        for h in &mut self.heads {
            rest = h.layer.read_params(rest);
        }
        Ok(())
    }

    /// Check that `inputs` has the column layout the model was built for.
    pub fn check_inputs(&self, inputs: &NodeInputs) -> Result<()> {
        if inputs.provenance != self.input_layout {
            return Err(Error::Schema(format!(
                "input layout {:?} does not match the model's {:?}",
                inputs.provenance, self.input_layout
            )));
        }
        Ok(())
    }

    /// Batched forward pass up to the embedding layer.
    pub fn forward_batch(&self, x: &Matrix, batch: &Batch) -> Result<ForwardCache> {
        let x_u = x.select(Axis(0), &batch.nodes);
        let (h0, enc_cache) = self.encoder.forward_cached(&x_u)?;
        let b = batch.len();
        let mut pooled = Array2::<f64>::zeros((b, self.hidden()));
        let mut neighbor = Vec::with_capacity(EdgeSetKind::ALL.len());
        for kind in EdgeSetKind::ALL {
            let lists = &batch.neighbors[kind.index()];
            let mut rows: Vec<usize> = lists.iter().flatten().copied().collect();
            if rows.is_empty() {
                neighbor.push(None);
                continue;
            }
            rows.sort_unstable();
            rows.dedup();
            let pos: HashMap<usize, usize> = rows.iter().enumerate().map(|(i, &r)| (r, i)).collect();
            let (m, cache) = self.neighbor[self.neighbor_layer(kind)].forward_cached(&h0.select(Axis(0), &rows))?;
            for (i, list) in lists.iter().enumerate() {
                let scale = self.pool_scale(list.len());
                let mut acc = pooled.row_mut(i);
                for r in list {
                    acc.scaled_add(scale, &m.row(pos[r]));
                }
            }
            neighbor.push(Some((rows, pos, cache)));
        }
        let (hs, self_cache) = self.self_transform.forward_cached(&h0.select(Axis(0), &batch.seed_rows))?;
        let h1 = hs + &pooled;
        let (embedding, embedding_cache) = self.embedding.forward_cached(&h1)?;
        Ok(ForwardCache {
            encoder: enc_cache,
            neighbor,
            self_transform: self_cache,
            embedding_cache,
            embedding,
            h0_rows: h0.nrows(),
        })
    }

    fn pool_scale(&self, count: usize) -> f64 {
        match self.pooling {
            Pooling::Sum => 1.0,
            Pooling::Mean => 1.0 / count.max(1) as f64,
        }
    }

    /// Reconstruction loss of a batch and, when `grads` is given, accumulate
    /// gradients of `scale * loss` into it.
    pub fn loss_batch(
        &self,
        x: &Matrix,
        batch: &Batch,
        weights: &dyn Fn(Source) -> f64,
        delta: f64,
        scale: f64,
        grads: Option<&mut PdfmGrads>,
    ) -> Result<BatchLoss> {
        let cache = self.forward_batch(x, batch)?;
        let e = &cache.embedding;
        let targets = x.select(Axis(0), &batch.seeds);
        let mut d_e = Array2::<f64>::zeros(e.raw_dim());
        let mut total = 0.0;
        let mut per_source = Vec::with_capacity(self.heads.len());
        let want_grads = grads.is_some();
        let mut head_grads = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let slice = e.slice(s![.., head.partition.clone()]).to_owned();
            let (pred, hc) = head.layer.forward_cached(&slice)?;
            let target = targets.slice(s![.., head.target_cols.clone()]);
            let pred_flat: Vec<f64> = pred.iter().copied().collect();
            let target_flat: Vec<f64> = target.iter().copied().collect();
            let (l, g) = huber_loss(&pred_flat, &target_flat, delta)?;
            let w = weights(head.source);
            total += w * l;
            per_source.push((head.source, l));
            if want_grads {
                let up = Array2::from_shape_vec(pred.raw_dim(), g).expect("same shape") * (w * scale);
                let (hg, d_slice) = head.layer.backward(&hc, &up)?;
                d_e.slice_mut(s![.., head.partition.clone()]).zip_mut_with(&d_slice, |a, b| *a += b);
                head_grads.push(hg);
            }
        }
        if let Some(grads) = grads {
            let g = self.backward(&cache, batch, &d_e)?;
            let mut g = g;
            g.heads = head_grads;
            grads.add_assign(&g);
        }
        Ok(BatchLoss { total, per_source })
    }

    /// Backpropagate an upstream gradient on the embeddings. Head gradients
    /// are returned as zeros.
    pub fn backward(&self, cache: &ForwardCache, batch: &Batch, d_e: &Matrix) -> Result<PdfmGrads> {
        let mut grads = PdfmGrads::zeros_like(self);
        let (g_emb, d_h1) = self.embedding.backward(&cache.embedding_cache, d_e)?;
        grads.embedding = g_emb;
        let (g_self, d_seed) = self.self_transform.backward(&cache.self_transform, &d_h1)?;
        grads.self_transform = g_self;
        let mut d_h0 = Array2::<f64>::zeros((cache.h0_rows, self.hidden()));
        for (i, &r) in batch.seed_rows.iter().enumerate() {
            let mut row = d_h0.row_mut(r);
            row += &d_seed.row(i);
        }
        for kind in EdgeSetKind::ALL {
            let Some((rows, pos, nc)) = &cache.neighbor[kind.index()] else { continue };
            let mut d_m = Array2::<f64>::zeros((rows.len(), self.hidden()));
            for (i, list) in batch.neighbors[kind.index()].iter().enumerate() {
                let scale = self.pool_scale(list.len());
                for r in list {
                    d_m.row_mut(pos[r]).scaled_add(scale, &d_h1.row(i));
                }
            }
            let li = self.neighbor_layer(kind);
            let (g, d_a) = self.neighbor[li].backward(nc, &d_m)?;
            grads.neighbor[li].add_assign(&g);
            for (j, &r) in rows.iter().enumerate() {
                let mut row = d_h0.row_mut(r);
                row += &d_a.row(j);
            }
        }
        let (g_enc, _) = self.encoder.backward(&cache.encoder, &d_h0)?;
        grads.encoder = g_enc;
        Ok(grads)
    }

    /// Embeddings for a batch (no gradients).
    pub fn embed_batch(&self, x: &Matrix, batch: &Batch) -> Result<Matrix> {
        Ok(self.forward_batch(x, batch)?.embedding)
    }

    pub fn to_checkpoint(&self, cfg: &PdfmConfig) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.insert("encoder", &self.encoder);
        for (i, l) in self.neighbor.iter().enumerate() {
            let name = if self.neighbor.len() == 1 { "shared".to_string() } else { EdgeSetKind::ALL[i].as_str().to_string() };
            ck.insert(format!("neighbor.{name}"), l);
        }
        ck.insert("self", &self.self_transform);
        ck.insert("embedding", &self.embedding);
        for h in &self.heads {
            ck.insert(format!("decoder.{}", h.source), &h.layer);
        }
        let layout: Vec<_> = self.input_layout.iter().map(|(s, r)| (s, [r.start, r.end])).collect();
        ck.meta = serde_json::json!({ "config": cfg, "input_layout": layout });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(PdfmModel, PdfmConfig)> {
        let bad = |what: &str| Error::Schema(format!("checkpoint meta: {what}"));
        let cfg: PdfmConfig = serde_json::from_value(ck.meta["config"].clone()).map_err(|e| bad(&e.to_string()))?;
        let layout: Vec<(Source, [usize; 2])> =
            serde_json::from_value(ck.meta["input_layout"].clone()).map_err(|e| bad(&e.to_string()))?;
        let layout: Vec<(Source, Range<usize>)> = layout.into_iter().map(|(s, [a, b])| (s, a..b)).collect();
        let mut r = crate::rng::from_seed(0);
        let mut model = init_model(&cfg, &layout, &mut r)?;
        model.encoder = ck.layer("encoder")?;
        for i in 0..model.neighbor.len() {
            let name = if model.neighbor.len() == 1 { "shared".to_string() } else { EdgeSetKind::ALL[i].as_str().to_string() };
            model.neighbor[i] = ck.layer(&format!("neighbor.{name}"))?;
        }
        model.self_transform = ck.layer("self")?;
        model.embedding = ck.layer("embedding")?;
        for h in &mut model.heads {
            h.layer = ck.layer(&format!("decoder.{}", h.source))?;
        }
        Ok((model, cfg))
    }
}

/// Initial hidden states `GeLU(W x + b)` for feature rows.
pub fn encode_inputs(model: &PdfmModel, rows: &Matrix) -> Result<Matrix> {
    model.encoder.forward(rows)
}

/// Seed state after one round of message passing, given initial states for
/// every node of `sub` (rows in subgraph-local order).
pub fn sage_forward(model: &PdfmModel, sub: &Subgraph, h0: &Matrix) -> Result<Array1<f64>> {
    if h0.nrows() != sub.len() {
        return Err(Error::Shape(format!("{} states for {} subgraph nodes", h0.nrows(), sub.len())));
    }
    let seed = h0.slice(s![0..1, ..]).to_owned();
    let mut h1 = model.self_transform.forward(&seed)?.row(0).to_owned();
    for kind in EdgeSetKind::ALL {
        let locals: Vec<usize> = sub.seed_neighbors(kind).collect();
        if locals.is_empty() {
            continue;
        }
        let m = model.neighbor[model.neighbor_layer(kind)].forward(&h0.select(Axis(0), &locals))?;
        let scale = model.pool_scale(locals.len());
        h1.scaled_add(scale, &m.sum_axis(Axis(0)));
    }
    Ok(h1)
}

/// Linear embedding of a final hidden state.
pub fn embed(model: &PdfmModel, h1: &Array1<f64>) -> Result<Array1<f64>> {
    let x = h1.clone().insert_axis(Axis(0));
    Ok(model.embedding.forward(&x)?.row(0).to_owned())
}

/// Per-source reconstructions, each read from its own partition only.
pub fn reconstruct(model: &PdfmModel, e: &Array1<f64>) -> Result<Vec<(Source, Array1<f64>)>> {
    if e.len() != model.embedding_dim() {
        return Err(Error::Shape(format!("embedding width {} != {}", e.len(), model.embedding_dim())));
    }
    model
        .heads
        .iter()
        .map(|h| {
            let slice = e.slice(s![h.partition.clone()]).to_owned().insert_axis(Axis(0));
            Ok((h.source, h.layer.forward(&slice)?.row(0).to_owned()))
        })
        .collect()
}
