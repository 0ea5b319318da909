use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{global_avg_pool, Layer, LayerCache, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// One input branch: a layer stack over a fixed sample shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Full architecture: branches whose tapped features are concatenated and
/// mapped to the output by a dense head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub branches: Vec<BranchSpec>,
    pub head: Vec<LayerSpec>,
}

/// Where a branch's features come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapInfo {
    pub layer: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchLayout {
    /// Tapped layers in order; empty when the branch exposes its final output.
    pub taps: Vec<TapInfo>,
    pub final_shape: Vec<usize>,
    pub feature_width: usize,
}

impl NetworkSpec {
    /// Validates layer composition and returns per-branch feature layouts plus
    /// the output width.
    pub fn layout(&self) -> Result<(Vec<BranchLayout>, usize)> {
        if self.branches.is_empty() {
            return Err(Error::Shape("network needs at least one branch".into()));
        }
        let mut layouts = Vec::with_capacity(self.branches.len());
        let mut features = 0;
        for (bi, branch) in self.branches.iter().enumerate() {
            let mut shape = branch.input_shape.clone();
            let mut taps = Vec::new();
            for (li, spec) in branch.layers.iter().enumerate() {
                if matches!(spec, LayerSpec::Dense { .. }) && shape.len() != 1 {
                    return Err(Error::Shape(format!(
                        "branch {bi} layer {li}: dense layer needs a flat input, got {shape:?}"
                    )));
                }
                shape = spec
                    .output_shape(&shape)
                    .map_err(|e| Error::Shape(format!("branch {bi} layer {li}: {e}")))?;
                if matches!(spec, LayerSpec::ConcatTap) {
                    taps.push(TapInfo {
                        layer: li,
                        width: shape[0],
                    });
                }
            }
            let width = if taps.is_empty() {
                shape.iter().product()
            } else {
                taps.iter().map(|t| t.width).sum()
            };
            features += width;
            layouts.push(BranchLayout {
                taps,
                final_shape: shape,
                feature_width: width,
            });
        }
        let mut shape = vec![features];
        for (li, spec) in self.head.iter().enumerate() {
            match spec {
                LayerSpec::Dense { .. } | LayerSpec::Relu | LayerSpec::Tanh => {}
                other => {
                    return Err(Error::Shape(format!(
                        "head layer {li}: {} not allowed in the head",
                        other.name()
                    )))
                }
            }
            shape = spec
                .output_shape(&shape)
                .map_err(|e| Error::Shape(format!("head layer {li}: {e}")))?;
        }
        Ok((layouts, shape[0]))
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    layouts: Vec<BranchLayout>,
    outputs: usize,
    branches: Vec<Vec<Layer<T>>>,
    head: Vec<Layer<T>>,
    /// Identity of this parameter set; changes whenever parameters change so
    /// a cache from an older forward pass is detected as stale.
    stamp: u64,
}

impl<T: Real> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            layouts: self.layouts.clone(),
            outputs: self.outputs,
            branches: self.branches.clone(),
            head: self.head.clone(),
            stamp: fresh_id(),
        }
    }
}

impl<T: Real> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.branches == other.branches && self.head == other.head
    }
}

/// Forward-pass record sufficient for [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    stamp: u64,
    batch: usize,
    branches: Vec<Vec<LayerCache<T>>>,
    tap_shapes: Vec<Vec<Vec<usize>>>,
    head: Vec<LayerCache<T>>,
}

/// Parameter gradients, aligned with [`Network::param_slots`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub(crate) slots: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn slots(&self) -> &[Vec<T>] {
        &self.slots
    }

    pub fn is_zero(&self) -> bool {
        self.slots.iter().flatten().all(|v| *v == T::zero())
    }
}

impl<T: Real> Network<T> {
    /// Builds a network with Kaiming-uniform initialization from `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(spec, |s| Layer::init(s, &mut rng))
    }

    /// Builds a network with every parameter set to zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        Self::build(spec, Layer::zeros)
    }

    fn build(spec: NetworkSpec, mut make: impl FnMut(LayerSpec) -> Layer<T>) -> Result<Self> {
        let (layouts, outputs) = spec.layout()?;
        let branches = spec
            .branches
            .iter()
            .map(|b| b.layers.iter().cloned().map(&mut make).collect())
            .collect();
        let head = spec.head.iter().cloned().map(&mut make).collect();
        Ok(Self {
            spec,
            layouts,
            outputs,
            branches,
            head,
            stamp: fresh_id(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layouts(&self) -> &[BranchLayout] {
        &self.layouts
    }

    pub fn output_width(&self) -> usize {
        self.outputs
    }

    /// Width of the concatenated feature vector entering the head.
    pub fn head_input_width(&self) -> usize {
        self.layouts.iter().map(|l| l.feature_width).sum()
    }

    pub fn branch_layers(&self, branch: usize) -> &[Layer<T>] {
        &self.branches[branch]
    }

    pub fn head_layers(&self) -> &[Layer<T>] {
        &self.head
    }

    pub fn param_count(&self) -> usize {
        self.param_slots().iter().map(|(_, p)| p.len()).sum()
    }

    /// Named parameter arrays in canonical order: branch layers, then head.
    pub fn param_slots(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (bi, layers) in self.branches.iter().enumerate() {
            for (li, layer) in layers.iter().enumerate() {
                for (name, p) in layer.spec.param_names().iter().zip(&layer.params) {
                    out.push((format!("branch{bi}.{li}.{}.{name}", layer.spec.name()), p.as_slice()));
                }
            }
        }
        for (li, layer) in self.head.iter().enumerate() {
            for (name, p) in layer.spec.param_names().iter().zip(&layer.params) {
                out.push((format!("head.{li}.{}.{name}", layer.spec.name()), p.as_slice()));
            }
        }
        out
    }

    /// Mutable parameter arrays in canonical order. Invalidates caches.
    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.stamp = fresh_id();
        self.branches
            .iter_mut()
            .flatten()
            .chain(self.head.iter_mut())
            .flat_map(|l| l.params.iter_mut())
            .collect()
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.stamp = fresh_id();
        self.branches.iter_mut().flatten().chain(self.head.iter_mut())
    }

    /// Zeroes (or restores) the contribution of tap `tap` in `branch`.
    /// Returns false when the branch has no such tap.
    pub fn set_tap_ablated(&mut self, branch: usize, tap: usize, ablated: bool) -> bool {
        let Some(info) = self.layouts.get(branch).and_then(|l| l.taps.get(tap)) else {
            return false;
        };
        let layer = info.layer;
        self.branches[branch][layer].ablated = ablated;
        self.stamp = fresh_id();
        true
    }

    fn check_inputs(&self, inputs: &[&Tensor<T>]) -> Result<usize> {
        if inputs.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "network has {} input branches, got {} inputs",
                self.branches.len(),
                inputs.len()
            )));
        }
        let batch = inputs[0].batch();
        for (bi, (x, b)) in inputs.iter().zip(&self.spec.branches).enumerate() {
            if x.sample_shape() != b.input_shape.as_slice() || x.batch() != batch {
                return Err(Error::Shape(format!(
                    "branch {bi} expects samples of shape {:?} (batch {batch}), got {:?}",
                    b.input_shape,
                    x.shape()
                )));
            }
        }
        Ok(batch)
    }

    /// Inference-only forward pass.
    pub fn predict(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.run(inputs, false).map(|(y, _)| y)
    }

    /// Forward pass that keeps what the backward pass needs.
    pub fn forward(&self, inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.run(inputs, true)
    }

    fn run(&self, inputs: &[&Tensor<T>], keep: bool) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let batch = self.check_inputs(inputs)?;
        let width = self.head_input_width();
        let mut features = vec![T::zero(); batch * width];
        let mut offset = 0;
        let mut branch_caches = Vec::with_capacity(self.branches.len());
        let mut tap_shapes = Vec::with_capacity(self.branches.len());
        for (bi, layers) in self.branches.iter().enumerate() {
            let layout = &self.layouts[bi];
            let mut caches = Vec::with_capacity(layers.len());
            let mut shapes = Vec::new();
            let mut x = inputs[bi].clone();
            for layer in layers {
                let (y, cache) = layer.forward(&x, keep);
                caches.push(cache);
                if matches!(layer.spec, LayerSpec::ConcatTap) {
                    shapes.push(y.shape().to_vec());
                    let pooled = if y.shape().len() == 4 { global_avg_pool(&y) } else { y.clone() };
                    let w = pooled.sample_len();
                    if !layer.ablated {
                        scatter(&mut features, width, offset, w, pooled.data());
                    }
                    offset += w;
                }
                x = y;
            }
            if layout.taps.is_empty() {
                let w = x.sample_len();
                scatter(&mut features, width, offset, w, x.data());
                offset += w;
            }
            branch_caches.push(caches);
            tap_shapes.push(shapes);
        }
        let mut h = Tensor::new(vec![batch, width], features)?;
        let mut head_caches = Vec::with_capacity(self.head.len());
        for layer in &self.head {
            let (y, cache) = layer.forward(&h, keep);
            head_caches.push(cache);
            h = y;
        }
        if !h.is_finite() {
            return Err(Error::Training("network produced a non-finite output".into()));
        }
        Ok((
            h,
            ForwardCache {
                stamp: self.stamp,
                batch,
                branches: branch_caches,
                tap_shapes,
                head: head_caches,
            },
        ))
    }

    /// Backpropagates `loss_grad` (shape `[batch, outputs]`).
    pub fn backward(&self, cache: &ForwardCache<T>, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
        if cache.stamp != self.stamp {
            return Err(Error::Shape(
                "stale cache: parameters changed since the forward pass".into(),
            ));
        }
        if loss_grad.shape() != [cache.batch, self.outputs] {
            return Err(Error::Shape(format!(
                "loss gradient shape {:?} does not match output [{}, {}]",
                loss_grad.shape(),
                cache.batch,
                self.outputs
            )));
        }
        if cache.head.len() != self.head.len() || cache.branches.iter().zip(&self.branches).any(|(c, l)| c.len() != l.len()) {
            return Err(Error::Shape("cache does not match network structure".into()));
        }
        let mut slots: Vec<Vec<T>> = self
            .branches
            .iter()
            .flatten()
            .chain(self.head.iter())
            .flat_map(|l| l.params.iter().map(|p| vec![T::zero(); p.len()]))
            .collect();
        let head_start: usize = self.branches.iter().flatten().map(|l| l.params.len()).sum();

        // Head.
        let mut g = loss_grad.clone();
        let mut slot = slots.len();
        for (layer, c) in self.head.iter().zip(&cache.head).rev() {
            slot -= layer.params.len();
            g = layer
                .backward(c, g, &mut slots[slot..slot + layer.params.len()], true)
                .expect("head input gradient");
        }
        debug_assert_eq!(slot, head_start);
        let width = self.head_input_width();
        let dfeat = g.into_data();

        // Branches, walking feature offsets in forward order.
        let mut offset = 0;
        let mut slot_base = 0;
        for (bi, layers) in self.branches.iter().enumerate() {
            let layout = &self.layouts[bi];
            let caches = &cache.branches[bi];
            let branch_slots: usize = layers.iter().map(|l| l.params.len()).sum();
            let mut tap_grads = Vec::with_capacity(layout.taps.len());
            for t in &layout.taps {
                tap_grads.push(gather(&dfeat, width, offset, t.width, cache.batch));
                offset += t.width;
            }
            let mut final_shape = vec![cache.batch];
            final_shape.extend_from_slice(&layout.final_shape);
            let mut g = if layout.taps.is_empty() {
                let w = layout.feature_width;
                let d = gather(&dfeat, width, offset, w, cache.batch);
                offset += w;
                Tensor::new(final_shape, d)?
            } else {
                Tensor::zeros(final_shape)
            };
            let mut slot = slot_base + branch_slots;
            let mut tap_idx = layout.taps.len();
            for (li, (layer, c)) in layers.iter().zip(caches).enumerate().rev() {
                if matches!(layer.spec, LayerSpec::ConcatTap) {
                    tap_idx -= 1;
                    if !layer.ablated {
                        add_tap_grad(&mut g, &cache.tap_shapes[bi][tap_idx], &tap_grads[tap_idx]);
                    }
                    continue;
                }
                slot -= layer.params.len();
                let need_input = li > 0;
                match layer.backward(c, g, &mut slots[slot..slot + layer.params.len()], need_input) {
                    Some(dx) => g = dx,
                    None => break,
                }
            }
            slot_base += branch_slots;
        }
        Ok(Gradients { slots })
    }
}

fn scatter<T: Real>(features: &mut [T], width: usize, offset: usize, w: usize, src: &[T]) {
    for (row, chunk) in features.chunks_mut(width).zip(src.chunks(w)) {
        row[offset..offset + w].copy_from_slice(chunk);
    }
}

fn gather<T: Real>(dfeat: &[T], width: usize, offset: usize, w: usize, batch: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * w);
    for row in dfeat.chunks(width) {
        out.extend_from_slice(&row[offset..offset + w]);
    }
    out
}

fn add_tap_grad<T: Real>(g: &mut Tensor<T>, shape: &[usize], dtap: &[T]) {
    if shape.len() == 4 {
        let plane = shape[2] * shape[3];
        let inv = T::one() / T::from_usize_lossy(plane);
        for (chunk, &d) in g.data_mut().chunks_mut(plane).zip(dtap) {
            let v = d * inv;
            for x in chunk {
                *x += v;
            }
        }
    } else {
        for (x, &d) in g.data_mut().iter_mut().zip(dtap) {
            *x += d;
        }
    }
}

/// Mean squared error over every element and its gradient.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    let n = T::from_usize_lossy(pred.data().len());
    let mut loss = T::zero();
    let two = T::lit(2.0);
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            two * d / n
        })
        .collect();
    Ok((loss / n, Tensor::new(pred.shape().to_vec(), grad)?))
}
