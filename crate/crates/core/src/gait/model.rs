//! Spatial-temporal graph convolution over skeleton windows.
//!
//! Each block applies a partitioned graph convolution across joints, then a
//! set of parallel temporal branches whose outputs are concatenated along
//! channels, adds a residual path and applies the activation:
//!
//! ```text
//! h   = act( sum_p A_p X W_p + b )
//! z   = concat_i branch_i(h)
//! out = act( z + residual(X) )
//! ```
//!
//! Windows are pooled over time and joints, projected to the embedding
//! dimension and averaged over a subject's windows.
//!
//! All parameters live in one flat vector so optimizers, checksums and
//! checkpoints treat the model uniformly.

use serde::{Deserialize, Serialize};

use super::graph::{build_adjacency, PartitionStrategy, SkeletonGraph};
use super::preprocess::{NormalizedWindow, WindowConfig};
use super::skeleton::NUM_JOINTS;
use crate::error::{Error, Result};
use crate::nn::{self, Activation};
use crate::seed;
use crate::types::{FeatureVector, Modality};

pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TemporalBranch {
    /// Channel mixing only.
    Pointwise { channels: usize },
    /// Temporal convolution with zero "same" padding.
    Conv {
        channels: usize,
        kernel: usize,
        dilation: usize,
    },
    /// Channel mixing followed by a stride-1 temporal max over `kernel` frames.
    MaxPool { channels: usize, kernel: usize },
}

impl TemporalBranch {
    pub fn channels(&self) -> usize {
        match *self {
            TemporalBranch::Pointwise { channels }
            | TemporalBranch::Conv { channels, .. }
            | TemporalBranch::MaxPool { channels, .. } => channels,
        }
    }

    fn weight_len(&self, in_channels: usize) -> usize {
        let taps = match self {
            TemporalBranch::Conv { kernel, .. } => *kernel,
            _ => 1,
        };
        taps * in_channels * self.channels()
    }

    /// Pointwise, k3 d1, k3 d2, max-pool 3; `channels` split evenly.
    pub fn default_set(channels: usize) -> Vec<TemporalBranch> {
        let q = channels / 4;
        let first = channels - 3 * q;
        vec![
            TemporalBranch::Pointwise { channels: first },
            TemporalBranch::Conv {
                channels: q,
                kernel: 3,
                dilation: 1,
            },
            TemporalBranch::Conv {
                channels: q,
                kernel: 3,
                dilation: 2,
            },
            TemporalBranch::MaxPool {
                channels: q,
                kernel: 3,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub channels: usize,
    pub branches: Vec<TemporalBranch>,
}

impl BlockConfig {
    pub fn with_default_branches(channels: usize) -> Self {
        Self {
            channels,
            branches: TemporalBranch::default_set(channels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitModelConfig {
    pub blocks: Vec<BlockConfig>,
    pub embedding_dim: usize,
    pub partition: PartitionStrategy,
    pub activation: Activation,
    pub window: WindowConfig,
}

impl Default for GaitModelConfig {
    fn default() -> Self {
        Self {
            blocks: vec![
                BlockConfig::with_default_branches(16),
                BlockConfig::with_default_branches(16),
            ],
            embedding_dim: 16,
            partition: PartitionStrategy::Distance,
            activation: Activation::Relu,
            window: WindowConfig::default(),
        }
    }
}

impl GaitModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config(
                "gait.blocks must contain at least one block".into(),
            ));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("gait.embedding_dim must be positive".into()));
        }
        for (i, block) in self.blocks.iter().enumerate() {
            if block.branches.is_empty() {
                return Err(Error::Config(format!(
                    "gait.blocks[{i}] has no temporal branches"
                )));
            }
            let total: usize = block.branches.iter().map(TemporalBranch::channels).sum();
            if total != block.channels {
                return Err(Error::Config(format!(
                    "gait.blocks[{i}]: branch channels sum to {total}, block has {}",
                    block.channels
                )));
            }
            for (k, br) in block.branches.iter().enumerate() {
                if br.channels() == 0 {
                    return Err(Error::Config(format!(
                        "gait.blocks[{i}].branches[{k}] has zero channels"
                    )));
                }
                let ok = match *br {
                    TemporalBranch::Pointwise { .. } => true,
                    TemporalBranch::Conv {
                        kernel, dilation, ..
                    } => kernel % 2 == 1 && dilation >= 1,
                    TemporalBranch::MaxPool { kernel, .. } => kernel % 2 == 1,
                };
                if !ok {
                    return Err(Error::Config(format!(
                        "gait.blocks[{i}].branches[{k}]: kernels must be odd and dilation >= 1"
                    )));
                }
            }
        }
        self.window.validate()
    }
}

#[derive(Debug, Clone)]
struct BranchLayout {
    spec: TemporalBranch,
    weight: usize,
    bias: usize,
    channel_offset: usize,
}

#[derive(Debug, Clone)]
struct BlockLayout {
    in_channels: usize,
    channels: usize,
    spatial_weight: usize,
    spatial_bias: usize,
    branches: Vec<BranchLayout>,
    /// `(weight, bias)` offsets of the 1x1 residual projection.
    residual: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct Layout {
    partitions: usize,
    blocks: Vec<BlockLayout>,
    embed_weight: usize,
    embed_bias: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &GaitModelConfig, partitions: usize) -> Self {
        let mut offset = 0;
        let mut take = |n: usize| {
            let at = offset;
            offset += n;
            at
        };
        let mut in_channels = INPUT_CHANNELS;
        let mut blocks = Vec::new();
        for b in &cfg.blocks {
            let c = b.channels;
            let spatial_weight = take(partitions * in_channels * c);
            let spatial_bias = take(c);
            let mut channel_offset = 0;
            let branches = b
                .branches
                .iter()
                .map(|br| {
                    let l = BranchLayout {
                        spec: *br,
                        weight: take(br.weight_len(c)),
                        bias: take(br.channels()),
                        channel_offset,
                    };
                    channel_offset += br.channels();
                    l
                })
                .collect();
            let residual = (in_channels != c).then(|| (take(in_channels * c), take(c)));
            blocks.push(BlockLayout {
                in_channels,
                channels: c,
                spatial_weight,
                spatial_bias,
                branches,
                residual,
            });
            in_channels = c;
        }
        let embed_weight = take(cfg.embedding_dim * in_channels);
        let embed_bias = take(cfg.embedding_dim);
        Self {
            partitions,
            blocks,
            embed_weight,
            embed_bias,
            total: offset,
        }
    }
}

/// Row-wise channel mixing `y[r] = x[r] W + b` with `W` stored `[in][out]`.
fn mix(x: &[f64], rows: usize, cin: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let cout = b.len();
    let mut y = vec![0.0; rows * cout];
    for r in 0..rows {
        let yr = &mut y[r * cout..(r + 1) * cout];
        yr.copy_from_slice(b);
        for c in 0..cin {
            let xv = x[r * cin + c];
            if xv == 0.0 {
                continue;
            }
            let wr = &w[c * cout..(c + 1) * cout];
            for (o, wv) in yr.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
    y
}

/// Backward of [`mix`]; accumulates into `gw`, `gb` and (if given) `gx`.
#[allow(clippy::too_many_arguments)]
fn mix_backward(
    x: &[f64],
    rows: usize,
    cin: usize,
    w: &[f64],
    gy: &[f64],
    cout: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    mut gx: Option<&mut [f64]>,
) {
    for r in 0..rows {
        let gr = &gy[r * cout..(r + 1) * cout];
        for (b, g) in gb.iter_mut().zip(gr) {
            *b += g;
        }
        for c in 0..cin {
            let xv = x[r * cin + c];
            let wr = &w[c * cout..(c + 1) * cout];
            let gwr = &mut gw[c * cout..(c + 1) * cout];
            let mut acc = 0.0;
            for o in 0..cout {
                gwr[o] += xv * gr[o];
                acc += wr[o] * gr[o];
            }
            if let Some(gx) = gx.as_deref_mut() {
                gx[r * cin + c] += acc;
            }
        }
    }
}

/// Source frame of each max-pooled output.
struct BranchCache {
    argmax: Vec<usize>,
}

struct BlockCache {
    input: Vec<f64>,
    aggregated: Vec<Vec<f64>>,
    hidden: Vec<f64>,
    branches: Vec<Option<BranchCache>>,
    output: Vec<f64>,
}

struct WindowCache {
    frames: usize,
    blocks: Vec<BlockCache>,
    pooled: Vec<f64>,
}

/// The spatial-temporal graph feature extractor.
#[derive(Debug, Clone)]
pub struct GaitModel {
    cfg: GaitModelConfig,
    graph: SkeletonGraph,
    layout: Layout,
    params: Vec<f64>,
}

impl GaitModel {
    pub fn new(cfg: GaitModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let graph = build_adjacency(cfg.partition);
        let layout = Layout::new(&cfg, graph.partitions().len());
        let mut rng = seed::rng(seed);
        let mut params = vec![0.0; layout.total];
        for b in &layout.blocks {
            let p = layout.partitions;
            let n = p * b.in_channels * b.channels;
            params[b.spatial_weight..b.spatial_weight + n].copy_from_slice(&nn::init_weights(
                &mut rng,
                n,
                b.in_channels * p,
            ));
            for br in &b.branches {
                let n = br.spec.weight_len(b.channels);
                let fan_in = n / br.spec.channels();
                params[br.weight..br.weight + n]
                    .copy_from_slice(&nn::init_weights(&mut rng, n, fan_in));
            }
            if let Some((w, _)) = b.residual {
                let n = b.in_channels * b.channels;
                params[w..w + n].copy_from_slice(&nn::init_weights(&mut rng, n, b.in_channels));
            }
        }
        let last = layout.blocks.last().expect("validated").channels;
        let n = cfg.embedding_dim * last;
        params[layout.embed_weight..layout.embed_weight + n]
            .copy_from_slice(&nn::init_weights(&mut rng, n, last));
        Ok(Self {
            cfg,
            graph,
            layout,
            params,
        })
    }

    /// Rebuilds a model around an existing parameter vector.
    pub fn from_params(cfg: GaitModelConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let graph = build_adjacency(cfg.partition);
        let layout = Layout::new(&cfg, graph.partitions().len());
        if params.len() != layout.total {
            return Err(Error::DimensionMismatch {
                context: "gait model parameters",
                expected: layout.total,
                actual: params.len(),
            });
        }
        Ok(Self {
            cfg,
            graph,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &GaitModelConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &SkeletonGraph {
        &self.graph
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn embedding_dim(&self) -> usize {
        self.cfg.embedding_dim
    }

    pub fn checksum(&self) -> String {
        seed::checksum(&self.params)
    }

    fn check_graph(&self, graph: &SkeletonGraph) -> Result<()> {
        if graph.partitions().len() != self.layout.partitions {
            return Err(Error::Config(format!(
                "graph has {} partitions, model was built for {}",
                graph.partitions().len(),
                self.layout.partitions
            )));
        }
        Ok(())
    }

    fn forward_window(
        &self,
        window: &NormalizedWindow,
        params: &[f64],
        sparse: &[Vec<Vec<(usize, f64)>>],
    ) -> (Vec<f64>, WindowCache) {
        let t_len = window.frames;
        let v = NUM_JOINTS;
        let rows = t_len * v;
        let act = self.cfg.activation;
        let mut x = window.data.clone();
        let mut caches = Vec::with_capacity(self.layout.blocks.len());
        for b in &self.layout.blocks {
            let (cin, c) = (b.in_channels, b.channels);
            // spatial graph convolution
            let mut pre = vec![0.0; rows * c];
            for r in 0..rows {
                pre[r * c..(r + 1) * c]
                    .copy_from_slice(&params[b.spatial_bias..b.spatial_bias + c]);
            }
            let mut aggregated = Vec::with_capacity(sparse.len());
            for (p, rows_p) in sparse.iter().enumerate() {
                let mut ax = vec![0.0; rows * cin];
                for t in 0..t_len {
                    for (i, nbrs) in rows_p.iter().enumerate() {
                        let dst = (t * v + i) * cin;
                        for &(j, a) in nbrs {
                            let src = (t * v + j) * cin;
                            for ch in 0..cin {
                                ax[dst + ch] += a * x[src + ch];
                            }
                        }
                    }
                }
                let w =
                    &params[b.spatial_weight + p * cin * c..b.spatial_weight + (p + 1) * cin * c];
                let zero = vec![0.0; c];
                let y = mix(&ax, rows, cin, w, &zero);
                pre.iter_mut().zip(&y).for_each(|(a, b)| *a += b);
                aggregated.push(ax);
            }
            let hidden: Vec<f64> = pre.iter().map(|&z| act.apply(z)).collect();

            // temporal branches, concatenated channel-wise
            let mut z = vec![0.0; rows * c];
            let mut branch_caches = Vec::with_capacity(b.branches.len());
            for br in &b.branches {
                let cb = br.spec.channels();
                let w = &params[br.weight..br.weight + br.spec.weight_len(c)];
                let bias = &params[br.bias..br.bias + cb];
                let (y, cache) = match br.spec {
                    TemporalBranch::Pointwise { .. } => (mix(&hidden, rows, c, w, bias), None),
                    TemporalBranch::Conv {
                        kernel, dilation, ..
                    } => (
                        temporal_conv(&hidden, t_len, v, c, cb, kernel, dilation, w, bias),
                        None,
                    ),
                    TemporalBranch::MaxPool { kernel, .. } => {
                        let pre_pool = mix(&hidden, rows, c, w, bias);
                        let (y, argmax) = temporal_max(&pre_pool, t_len, v, cb, kernel);
                        (y, Some(BranchCache { argmax }))
                    }
                };
                for r in 0..rows {
                    z[r * c + br.channel_offset..r * c + br.channel_offset + cb]
                        .copy_from_slice(&y[r * cb..(r + 1) * cb]);
                }
                branch_caches.push(cache);
            }

            // residual
            match b.residual {
                Some((w, bias)) => {
                    let r = mix(
                        &x,
                        rows,
                        cin,
                        &params[w..w + cin * c],
                        &params[bias..bias + c],
                    );
                    z.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
                }
                None => z.iter_mut().zip(&x).for_each(|(a, b)| *a += b),
            }
            let output: Vec<f64> = z.iter().map(|&s| act.apply(s)).collect();
            caches.push(BlockCache {
                input: std::mem::replace(&mut x, output.clone()),
                aggregated,
                hidden,
                branches: branch_caches,
                output,
            });
        }
        let c_last = self.layout.blocks.last().expect("validated").channels;
        let mut pooled = vec![0.0; c_last];
        for r in 0..rows {
            for ch in 0..c_last {
                pooled[ch] += x[r * c_last + ch];
            }
        }
        pooled.iter_mut().for_each(|p| *p /= rows as f64);
        let m = self.cfg.embedding_dim;
        let embedding = nn::dense(
            &pooled,
            &params[self.layout.embed_weight..self.layout.embed_weight + m * c_last],
            &params[self.layout.embed_bias..self.layout.embed_bias + m],
        );
        (
            embedding,
            WindowCache {
                frames: t_len,
                blocks: caches,
                pooled,
            },
        )
    }

    fn backward_window(
        &self,
        cache: &WindowCache,
        grad_embedding: &[f64],
        params: &[f64],
        sparse: &[Vec<Vec<(usize, f64)>>],
        grad: &mut [f64],
    ) {
        let v = NUM_JOINTS;
        let t_len = cache.frames;
        let rows = t_len * v;
        let act = self.cfg.activation;
        let m = self.cfg.embedding_dim;
        let c_last = cache.pooled.len();
        let (ew, eb) = (self.layout.embed_weight, self.layout.embed_bias);
        let (gw_embed, gb_embed) = split_pair(grad, ew, m * c_last, eb, m);
        let grad_pooled = nn::dense_backward(
            &cache.pooled,
            &params[ew..ew + m * c_last],
            grad_embedding,
            gw_embed,
            gb_embed,
        );
        let mut g_out = vec![0.0; rows * c_last];
        for r in 0..rows {
            for ch in 0..c_last {
                g_out[r * c_last + ch] = grad_pooled[ch] / rows as f64;
            }
        }
        for (b, bc) in self.layout.blocks.iter().zip(&cache.blocks).rev() {
            let (cin, c) = (b.in_channels, b.channels);
            let g_sum: Vec<f64> = g_out
                .iter()
                .zip(&bc.output)
                .map(|(g, y)| g * act.derivative_from_output(*y))
                .collect();
            let mut g_in = vec![0.0; rows * cin];
            match b.residual {
                Some((w, bias)) => {
                    let (gw, gb) = split_pair(grad, w, cin * c, bias, c);
                    mix_backward(
                        &bc.input,
                        rows,
                        cin,
                        &params[w..w + cin * c],
                        &g_sum,
                        c,
                        gw,
                        gb,
                        Some(&mut g_in),
                    );
                }
                None => g_in.iter_mut().zip(&g_sum).for_each(|(a, b)| *a += b),
            }

            let mut g_hidden = vec![0.0; rows * c];
            for (br, br_cache) in b.branches.iter().zip(&bc.branches) {
                let cb = br.spec.channels();
                let wl = br.spec.weight_len(c);
                let mut gy = vec![0.0; rows * cb];
                for r in 0..rows {
                    gy[r * cb..(r + 1) * cb].copy_from_slice(
                        &g_sum[r * c + br.channel_offset..r * c + br.channel_offset + cb],
                    );
                }
                let w = &params[br.weight..br.weight + wl];
                let (gw, gb) = split_pair(grad, br.weight, wl, br.bias, cb);
                match br.spec {
                    TemporalBranch::Pointwise { .. } => {
                        mix_backward(&bc.hidden, rows, c, w, &gy, cb, gw, gb, Some(&mut g_hidden));
                    }
                    TemporalBranch::Conv {
                        kernel, dilation, ..
                    } => temporal_conv_backward(
                        &bc.hidden,
                        t_len,
                        v,
                        c,
                        cb,
                        kernel,
                        dilation,
                        w,
                        &gy,
                        gw,
                        gb,
                        &mut g_hidden,
                    ),
                    TemporalBranch::MaxPool { .. } => {
                        let pc = br_cache.as_ref().expect("max-pool cache");
                        let mut g_pre = vec![0.0; rows * cb];
                        for t in 0..t_len {
                            for j in 0..v {
                                for o in 0..cb {
                                    let idx = (t * v + j) * cb + o;
                                    let src = (pc.argmax[idx] * v + j) * cb + o;
                                    g_pre[src] += gy[idx];
                                }
                            }
                        }
                        mix_backward(
                            &bc.hidden,
                            rows,
                            c,
                            w,
                            &g_pre,
                            cb,
                            gw,
                            gb,
                            Some(&mut g_hidden),
                        );
                    }
                }
            }

            let g_pre: Vec<f64> = g_hidden
                .iter()
                .zip(&bc.hidden)
                .map(|(g, h)| g * act.derivative_from_output(*h))
                .collect();
            let p_count = self.layout.partitions;
            let (gw_all, gb) =
                split_pair(grad, b.spatial_weight, p_count * cin * c, b.spatial_bias, c);
            for (p, rows_p) in sparse.iter().enumerate() {
                let w =
                    &params[b.spatial_weight + p * cin * c..b.spatial_weight + (p + 1) * cin * c];
                let gw = &mut gw_all[p * cin * c..(p + 1) * cin * c];
                let mut g_ax = vec![0.0; rows * cin];
                let mut dummy_bias = vec![0.0; c];
                mix_backward(
                    &bc.aggregated[p],
                    rows,
                    cin,
                    w,
                    &g_pre,
                    c,
                    gw,
                    &mut dummy_bias,
                    Some(&mut g_ax),
                );
                for t in 0..t_len {
                    for (i, nbrs) in rows_p.iter().enumerate() {
                        let src = (t * v + i) * cin;
                        for &(j, a) in nbrs {
                            let dst = (t * v + j) * cin;
                            for ch in 0..cin {
                                g_in[dst + ch] += a * g_ax[src + ch];
                            }
                        }
                    }
                }
            }
            for r in 0..rows {
                for ch in 0..c {
                    gb[ch] += g_pre[r * c + ch];
                }
            }
            g_out = g_in;
        }
    }

    /// Per-window embeddings.
    pub fn window_embeddings(&self, windows: &[NormalizedWindow]) -> Result<Vec<Vec<f64>>> {
        self.window_embeddings_with_graph(windows, &self.graph)
    }

    pub fn window_embeddings_with_graph(
        &self,
        windows: &[NormalizedWindow],
        graph: &SkeletonGraph,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_graph(graph)?;
        check_windows(windows)?;
        let sparse = graph.sparse_partitions();
        Ok(windows
            .iter()
            .map(|w| self.forward_window(w, &self.params, &sparse).0)
            .collect())
    }

    /// Subject feature: the mean embedding over `windows`.
    pub fn forward(&self, windows: &[NormalizedWindow]) -> Result<FeatureVector> {
        gait_forward(windows, &self.graph, self)
    }

    /// Returns the subject feature and accumulates `d(loss)/d(params)` into
    /// `grad`, given `d(loss)/d(feature)` from `head`.
    pub fn forward_backward(
        &self,
        windows: &[NormalizedWindow],
        grad: &mut [f64],
        head: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<Vec<f64>> {
        check_windows(windows)?;
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                context: "gait gradient buffer",
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        let sparse = self.graph.sparse_partitions();
        let (embeddings, caches): (Vec<_>, Vec<_>) = windows
            .iter()
            .map(|w| self.forward_window(w, &self.params, &sparse))
            .unzip();
        let feature = crate::math::mean_rows(&embeddings);
        let g_feature = head(&feature);
        let scale = 1.0 / windows.len() as f64;
        let g_window: Vec<f64> = g_feature.iter().map(|g| g * scale).collect();
        for cache in &caches {
            self.backward_window(cache, &g_window, &self.params, &sparse, grad);
        }
        Ok(feature)
    }
}

fn split_pair(
    grad: &mut [f64],
    a: usize,
    a_len: usize,
    b: usize,
    b_len: usize,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + a_len <= b);
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + a_len], &mut hi[..b_len])
}

fn check_windows(windows: &[NormalizedWindow]) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::InvalidValue("no gait windows".into()));
    }
    for w in windows {
        if w.frames == 0 || w.data.len() != w.frames * NUM_JOINTS * INPUT_CHANNELS {
            return Err(Error::ShapeMismatch {
                context: "gait window",
                expected: format!("{} x {NUM_JOINTS} x {INPUT_CHANNELS}", w.frames),
                actual: format!("{} values", w.data.len()),
            });
        }
    }
    Ok(())
}

/// Runs the extractor on `windows` over an explicit graph and averages the
/// window embeddings into one subject feature.
pub fn gait_forward(
    windows: &[NormalizedWindow],
    graph: &SkeletonGraph,
    model: &GaitModel,
) -> Result<FeatureVector> {
    let embeddings = model.window_embeddings_with_graph(windows, graph)?;
    FeatureVector::new(Modality::Gait, crate::math::mean_rows(&embeddings))
}

#[allow(clippy::too_many_arguments)]
fn temporal_conv(
    x: &[f64],
    t_len: usize,
    v: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
    dilation: usize,
    w: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let half = (kernel / 2) as isize;
    let mut y = vec![0.0; t_len * v * cout];
    for t in 0..t_len {
        for j in 0..v {
            let dst = (t * v + j) * cout;
            y[dst..dst + cout].copy_from_slice(b);
            for k in 0..kernel {
                let st = t as isize + (k as isize - half) * dilation as isize;
                if st < 0 || st >= t_len as isize {
                    continue;
                }
                let src = (st as usize * v + j) * cin;
                for c in 0..cin {
                    let xv = x[src + c];
                    let wr = &w[(k * cin + c) * cout..(k * cin + c + 1) * cout];
                    for o in 0..cout {
                        y[dst + o] += xv * wr[o];
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn temporal_conv_backward(
    x: &[f64],
    t_len: usize,
    v: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
    dilation: usize,
    w: &[f64],
    gy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    gx: &mut [f64],
) {
    let half = (kernel / 2) as isize;
    for t in 0..t_len {
        for j in 0..v {
            let dst = (t * v + j) * cout;
            let g = &gy[dst..dst + cout];
            for (b, gv) in gb.iter_mut().zip(g) {
                *b += gv;
            }
            for k in 0..kernel {
                let st = t as isize + (k as isize - half) * dilation as isize;
                if st < 0 || st >= t_len as isize {
                    continue;
                }
                let src = (st as usize * v + j) * cin;
                for c in 0..cin {
                    let base = (k * cin + c) * cout;
                    let xv = x[src + c];
                    let mut acc = 0.0;
                    for o in 0..cout {
                        gw[base + o] += xv * g[o];
                        acc += w[base + o] * g[o];
                    }
                    gx[src + c] += acc;
                }
            }
        }
    }
}

/// Stride-1 max over `kernel` frames centered on each frame (edges clipped).
fn temporal_max(
    x: &[f64],
    t_len: usize,
    v: usize,
    c: usize,
    kernel: usize,
) -> (Vec<f64>, Vec<usize>) {
    let half = kernel / 2;
    let mut y = vec![0.0; x.len()];
    let mut arg = vec![0; x.len()];
    for t in 0..t_len {
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(t_len - 1);
        for j in 0..v {
            for ch in 0..c {
                let mut best = lo;
                for s in lo + 1..=hi {
                    if x[(s * v + j) * c + ch] > x[(best * v + j) * c + ch] {
                        best = s;
                    }
                }
                let idx = (t * v + j) * c + ch;
                y[idx] = x[(best * v + j) * c + ch];
                arg[idx] = best;
            }
        }
    }
    (y, arg)
}
