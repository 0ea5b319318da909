use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{gemm, Real};

/// Architecture description of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        units: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Tanh,
    /// Non-overlapping `size × size` max pooling.
    MaxPool {
        size: usize,
    },
    GlobalAvgPool,
    /// Two 3×3 convolutions with a ReLU between them, a parameter-free
    /// identity shortcut (strided subsampling plus zero channel padding when
    /// the shape changes) and a ReLU after the sum.
    Residual {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    /// Routes the global-average-pooled activation to the head. Identity on
    /// the main path.
    ConcatTap,
}

impl LayerSpec {
    pub(crate) fn tag(&self) -> u8 {
        match self {
            LayerSpec::Dense { .. } => 1,
            LayerSpec::Conv2d { .. } => 2,
            LayerSpec::Relu => 3,
            LayerSpec::Tanh => 4,
            LayerSpec::MaxPool { .. } => 5,
            LayerSpec::GlobalAvgPool => 6,
            LayerSpec::Residual { .. } => 7,
            LayerSpec::ConcatTap => 8,
        }
    }

    pub(crate) fn dims(&self) -> Vec<usize> {
        match *self {
            LayerSpec::Dense { inputs, units } => vec![inputs, units],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => vec![in_channels, out_channels, kernel, stride, padding],
            LayerSpec::MaxPool { size } => vec![size],
            LayerSpec::Residual {
                in_channels,
                out_channels,
                stride,
            } => vec![in_channels, out_channels, stride],
            LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::GlobalAvgPool | LayerSpec::ConcatTap => {
                vec![]
            }
        }
    }

    pub(crate) fn from_tag(tag: u8, dims: &[usize]) -> Result<Self> {
        let need = |n: usize| {
            if dims.len() == n {
                Ok(())
            } else {
                Err(Error::Format(format!(
                    "layer tag {tag} expects {n} shape values, found {}",
                    dims.len()
                )))
            }
        };
        Ok(match tag {
            1 => {
                need(2)?;
                LayerSpec::Dense {
                    inputs: dims[0],
                    units: dims[1],
                }
            }
            2 => {
                need(5)?;
                LayerSpec::Conv2d {
                    in_channels: dims[0],
                    out_channels: dims[1],
                    kernel: dims[2],
                    stride: dims[3],
                    padding: dims[4],
                }
            }
            3 => LayerSpec::Relu,
            4 => LayerSpec::Tanh,
            5 => {
                need(1)?;
                LayerSpec::MaxPool { size: dims[0] }
            }
            6 => LayerSpec::GlobalAvgPool,
            7 => {
                need(3)?;
                LayerSpec::Residual {
                    in_channels: dims[0],
                    out_channels: dims[1],
                    stride: dims[2],
                }
            }
            8 => LayerSpec::ConcatTap,
            other => return Err(Error::Format(format!("unknown layer tag {other}"))),
        })
    }

    /// Shapes of the trainable arrays, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, units } => vec![vec![units, inputs], vec![units]],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            LayerSpec::Residual {
                in_channels,
                out_channels,
                ..
            } => vec![
                vec![out_channels, in_channels, 3, 3],
                vec![out_channels],
                vec![out_channels, out_channels, 3, 3],
                vec![out_channels],
            ],
            _ => vec![],
        }
    }

    pub(crate) fn param_names(&self) -> &'static [&'static str] {
        match self {
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } => &["weight", "bias"],
            LayerSpec::Residual { .. } => &["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"],
            _ => &[],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::GlobalAvgPool => "globalavgpool",
            LayerSpec::Residual { .. } => "residual",
            LayerSpec::ConcatTap => "concat_tap",
        }
    }

    /// Output sample shape for a given input sample shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            if input.len() == 3 {
                Ok((input[0], input[1], input[2]))
            } else {
                Err(Error::Shape(format!(
                    "{what} expects a [channels, height, width] input, got {input:?}"
                )))
            }
        };
        match *self {
            LayerSpec::Dense { inputs, units } => {
                if input.len() != 1 || input[0] != inputs {
                    return Err(Error::Shape(format!(
                        "dense layer expects [{inputs}] input, got {input:?}"
                    )));
                }
                Ok(vec![units])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = spatial("conv2d")?;
                if c != in_channels {
                    return Err(Error::Shape(format!(
                        "conv2d expects {in_channels} channels, got {c}"
                    )));
                }
                if kernel == 0 || stride == 0 {
                    return Err(Error::Shape("conv2d kernel and stride must be positive".into()));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::Shape(format!(
                        "conv2d kernel {kernel} larger than padded input {h}x{w}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::ConcatTap => Ok(input.to_vec()),
            LayerSpec::MaxPool { size } => {
                let (c, h, w) = spatial("maxpool")?;
                if size == 0 || h < size || w < size {
                    return Err(Error::Shape(format!("maxpool {size} on {h}x{w} input")));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::GlobalAvgPool => {
                let (c, _, _) = spatial("globalavgpool")?;
                Ok(vec![c])
            }
            LayerSpec::Residual {
                in_channels,
                out_channels,
                stride,
            } => {
                let (c, h, w) = spatial("residual")?;
                if c != in_channels {
                    return Err(Error::Shape(format!(
                        "residual block expects {in_channels} channels, got {c}"
                    )));
                }
                if out_channels < in_channels || stride == 0 {
                    return Err(Error::Shape(
                        "residual block cannot shrink channels and needs stride >= 1".into(),
                    ));
                }
                Ok(vec![out_channels, (h - 1) / stride + 1, (w - 1) / stride + 1])
            }
        }
    }
}

/// A layer together with its trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub(crate) spec: LayerSpec,
    pub(crate) params: Vec<Vec<T>>,
    /// Tap layers only: when set, the tap contributes zeros to the head.
    pub(crate) ablated: bool,
}

/// State kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache<T> {
    None,
    Input(Tensor<T>),
    Output(Tensor<T>),
    ArgMax { indices: Vec<usize>, input_shape: Vec<usize> },
    InputShape(Vec<usize>),
    Residual {
        input: Tensor<T>,
        mid: Tensor<T>,
        out: Tensor<T>,
    },
}

impl<T: Real> Layer<T> {
    /// Kaiming-uniform weights (`bound = sqrt(6 / fan_in)`) and zero biases.
    pub fn init<R: Rng>(spec: LayerSpec, rng: &mut R) -> Self {
        let shapes = spec.param_shapes();
        let params = shapes
            .iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                if shape.len() == 1 {
                    vec![T::zero(); n]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
                }
            })
            .collect();
        Self {
            spec,
            params,
            ablated: false,
        }
    }

    pub fn zeros(spec: LayerSpec) -> Self {
        let params = spec
            .param_shapes()
            .iter()
            .map(|s| vec![T::zero(); s.iter().product()])
            .collect();
        Self {
            spec,
            params,
            ablated: false,
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    pub(crate) fn forward(&self, x: &Tensor<T>, keep: bool) -> (Tensor<T>, LayerCache<T>) {
        match self.spec {
            LayerSpec::Dense { inputs, units } => {
                let b = x.batch();
                let mut out = vec![T::zero(); b * units];
                gemm(b, inputs, units, T::one(), x.data(), false, &self.params[0], true, T::zero(), &mut out);
                let bias = &self.params[1];
                for row in out.chunks_mut(units) {
                    for (o, &bb) in row.iter_mut().zip(bias) {
                        *o += bb;
                    }
                }
                let cache = if keep { LayerCache::Input(x.clone()) } else { LayerCache::None };
                (Tensor::new(vec![b, units], out).unwrap(), cache)
            }
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                out_channels,
                ..
            } => {
                let geo = ConvGeometry::new(x.shape(), out_channels, kernel, stride, padding);
                let out = conv_forward(&geo, x.data(), &self.params[0], &self.params[1]);
                let cache = if keep { LayerCache::Input(x.clone()) } else { LayerCache::None };
                (out, cache)
            }
            LayerSpec::Relu => {
                let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
                let out = Tensor::new(x.shape().to_vec(), data).unwrap();
                let cache = if keep { LayerCache::Output(out.clone()) } else { LayerCache::None };
                (out, cache)
            }
            LayerSpec::Tanh => {
                let data = x.data().iter().map(|&v| v.tanh()).collect();
                let out = Tensor::new(x.shape().to_vec(), data).unwrap();
                let cache = if keep { LayerCache::Output(out.clone()) } else { LayerCache::None };
                (out, cache)
            }
            LayerSpec::MaxPool { size } => {
                let (out, indices) = maxpool_forward(x, size);
                let cache = if keep {
                    LayerCache::ArgMax {
                        indices,
                        input_shape: x.shape().to_vec(),
                    }
                } else {
                    LayerCache::None
                };
                (out, cache)
            }
            LayerSpec::GlobalAvgPool => {
                let out = global_avg_pool(x);
                (out, LayerCache::InputShape(x.shape().to_vec()))
            }
            LayerSpec::Residual {
                in_channels,
                out_channels,
                stride,
            } => {
                let g1 = ConvGeometry::new(x.shape(), out_channels, 3, stride, 1);
                let mut mid = conv_forward(&g1, x.data(), &self.params[0], &self.params[1]);
                relu_inplace(mid.data_mut());
                let g2 = ConvGeometry::new(mid.shape(), out_channels, 3, 1, 1);
                let mut out = conv_forward(&g2, mid.data(), &self.params[2], &self.params[3]);
                shortcut_add(x, in_channels, stride, &mut out);
                relu_inplace(out.data_mut());
                let cache = if keep {
                    LayerCache::Residual {
                        input: x.clone(),
                        mid,
                        out: out.clone(),
                    }
                } else {
                    LayerCache::None
                };
                (out, cache)
            }
            LayerSpec::ConcatTap => (x.clone(), LayerCache::None),
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient when `need_input` is set.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache<T>,
        dy: Tensor<T>,
        grads: &mut [Vec<T>],
        need_input: bool,
    ) -> Option<Tensor<T>> {
        match (&self.spec, cache) {
            (&LayerSpec::Dense { inputs, units }, LayerCache::Input(x)) => {
                let b = x.batch();
                let (gw, rest) = grads.split_at_mut(1);
                gemm(units, b, inputs, T::one(), dy.data(), true, x.data(), false, T::one(), &mut gw[0]);
                for row in dy.data().chunks(units) {
                    for (g, &d) in rest[0].iter_mut().zip(row) {
                        *g += d;
                    }
                }
                need_input.then(|| {
                    let mut dx = vec![T::zero(); b * inputs];
                    gemm(b, units, inputs, T::one(), dy.data(), false, &self.params[0], false, T::zero(), &mut dx);
                    Tensor::new(x.shape().to_vec(), dx).unwrap()
                })
            }
            (
                &LayerSpec::Conv2d {
                    kernel,
                    stride,
                    padding,
                    out_channels,
                    ..
                },
                LayerCache::Input(x),
            ) => {
                let geo = ConvGeometry::new(x.shape(), out_channels, kernel, stride, padding);
                let (gw, gb) = grads.split_at_mut(1);
                conv_backward(&geo, x.data(), &self.params[0], dy.data(), &mut gw[0], &mut gb[0], need_input)
                    .map(|dx| Tensor::new(x.shape().to_vec(), dx).unwrap())
            }
            (LayerSpec::Relu, LayerCache::Output(y)) => {
                let mut dx = dy;
                for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                Some(dx)
            }
            (LayerSpec::Tanh, LayerCache::Output(y)) => {
                let mut dx = dy;
                for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
                    *d *= T::one() - v * v;
                }
                Some(dx)
            }
            (LayerSpec::MaxPool { .. }, LayerCache::ArgMax { indices, input_shape }) => {
                let mut dx = Tensor::zeros(input_shape.clone());
                let buf = dx.data_mut();
                for (&i, &d) in indices.iter().zip(dy.data()) {
                    buf[i] += d;
                }
                Some(dx)
            }
            (LayerSpec::GlobalAvgPool, LayerCache::InputShape(shape)) => Some(gap_backward(shape, dy.data())),
            (
                &LayerSpec::Residual {
                    in_channels,
                    out_channels,
                    stride,
                },
                LayerCache::Residual { input, mid, out },
            ) => {
                let mut dsum = dy;
                for (d, &v) in dsum.data_mut().iter_mut().zip(out.data()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                let g2 = ConvGeometry::new(mid.shape(), out_channels, 3, 1, 1);
                let (ga, gb) = grads.split_at_mut(2);
                let (w2, b2) = gb.split_at_mut(1);
                let mut dmid = conv_backward(&g2, mid.data(), &self.params[2], dsum.data(), &mut w2[0], &mut b2[0], true)
                    .expect("input gradient requested");
                for (d, &v) in dmid.iter_mut().zip(mid.data()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                let g1 = ConvGeometry::new(input.shape(), out_channels, 3, stride, 1);
                let (w1, b1) = ga.split_at_mut(1);
                let dx = conv_backward(&g1, input.data(), &self.params[0], &dmid, &mut w1[0], &mut b1[0], need_input);
                need_input.then(|| {
                    let mut dx = Tensor::new(input.shape().to_vec(), dx.unwrap()).unwrap();
                    shortcut_backward(&dsum, in_channels, stride, &mut dx);
                    dx
                })
            }
            (LayerSpec::ConcatTap, _) => Some(dy),
            (spec, _) => panic!("cache does not match layer {}", spec.name()),
        }
    }
}

fn relu_inplace<T: Real>(v: &mut [T]) {
    for x in v {
        *x = x.max(T::zero());
    }
}

pub(crate) fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
    let inv = T::one() / T::from_usize_lossy(plane);
    let data = x.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::new(vec![b, c], data).unwrap()
}

pub(crate) fn gap_backward<T: Real>(shape: &[usize], dy: &[T]) -> Tensor<T> {
    let plane = shape[2] * shape[3];
    let inv = T::one() / T::from_usize_lossy(plane);
    let mut data = Vec::with_capacity(dy.len() * plane);
    for &d in dy {
        data.extend(std::iter::repeat(d * inv).take(plane));
    }
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn maxpool_forward<T: Real>(x: &Tensor<T>, size: usize) -> (Tensor<T>, Vec<usize>) {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut idx = Vec::with_capacity(out.capacity());
    let data = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = base + (oy * size + dy) * w + ox * size + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                }
                out.push(data[best]);
                idx.push(best);
            }
        }
    }
    (Tensor::new(vec![b, c, oh, ow], out).unwrap(), idx)
}

fn shortcut_add<T: Real>(x: &Tensor<T>, in_channels: usize, stride: usize, out: &mut Tensor<T>) {
    let (xs, os) = (x.shape().to_vec(), out.shape().to_vec());
    let (h, w) = (xs[2], xs[3]);
    let (oc, oh, ow) = (os[1], os[2], os[3]);
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..xs[0] {
        for c in 0..in_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    od[((b * oc + c) * oh + oy) * ow + ox] +=
                        xd[((b * in_channels + c) * h + oy * stride) * w + ox * stride];
                }
            }
        }
    }
}

fn shortcut_backward<T: Real>(dsum: &Tensor<T>, in_channels: usize, stride: usize, dx: &mut Tensor<T>) {
    let os = dsum.shape().to_vec();
    let xs = dx.shape().to_vec();
    let (h, w) = (xs[2], xs[3]);
    let (oc, oh, ow) = (os[1], os[2], os[3]);
    let dd = dsum.data();
    let xd = dx.data_mut();
    for b in 0..xs[0] {
        for c in 0..in_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    xd[((b * in_channels + c) * h + oy * stride) * w + ox * stride] +=
                        dd[((b * oc + c) * oh + oy) * ow + ox];
                }
            }
        }
    }
}

/// Geometry of one batched convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new(in_shape: &[usize], out_c: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let (in_h, in_w) = (in_shape[2], in_shape[3]);
        Self {
            batch: in_shape[0],
            in_c: in_shape[1],
            in_h,
            in_w,
            out_c,
            kernel,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kernel) / stride + 1,
            out_w: (in_w + 2 * pad - kernel) / stride + 1,
        }
    }

    fn rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

/// Lowers the batch to a `[C·k·k, B·Ho·Wo]` patch matrix.
fn im2col<T: Real>(g: &ConvGeometry, x: &[T]) -> Vec<T> {
    let (rows, cols) = (g.rows(), g.cols());
    let plane = g.out_h * g.out_w;
    let mut col = vec![T::zero(); rows * cols];
    for c in 0..g.in_c {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let r = (c * g.kernel + ky) * g.kernel + kx;
                let row = &mut col[r * cols..(r + 1) * cols];
                for b in 0..g.batch {
                    let src = &x[(b * g.in_c + c) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    let dst = &mut row[b * plane..(b + 1) * plane];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.in_w..][..g.in_w];
                        let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.in_w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Real>(g: &ConvGeometry, col: &[T]) -> Vec<T> {
    let cols = g.cols();
    let plane = g.out_h * g.out_w;
    let mut x = vec![T::zero(); g.batch * g.in_c * g.in_h * g.in_w];
    for c in 0..g.in_c {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let r = (c * g.kernel + ky) * g.kernel + kx;
                let row = &col[r * cols..(r + 1) * cols];
                for b in 0..g.batch {
                    let dst = &mut x[(b * g.in_c + c) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    let src = &row[b * plane..(b + 1) * plane];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.in_w..][..g.in_w];
                        for (ox, &s) in src[oy * g.out_w..(oy + 1) * g.out_w].iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.in_w as isize {
                                dst_row[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn conv_forward<T: Real>(g: &ConvGeometry, x: &[T], w: &[T], bias: &[T]) -> Tensor<T> {
    let col = im2col(g, x);
    let (rows, cols) = (g.rows(), g.cols());
    let mut tmp = vec![T::zero(); g.out_c * cols];
    gemm(g.out_c, rows, cols, T::one(), w, false, &col, false, T::zero(), &mut tmp);
    let plane = g.out_h * g.out_w;
    let mut out = Vec::with_capacity(g.batch * g.out_c * plane);
    for b in 0..g.batch {
        for o in 0..g.out_c {
            let bb = bias[o];
            out.extend(tmp[o * cols + b * plane..o * cols + (b + 1) * plane].iter().map(|&v| v + bb));
        }
    }
    Tensor::new(vec![g.batch, g.out_c, g.out_h, g.out_w], out).unwrap()
}

/// Accumulates weight and bias gradients; returns the input gradient on request.
fn conv_backward<T: Real>(
    g: &ConvGeometry,
    x: &[T],
    w: &[T],
    dy: &[T],
    gw: &mut [T],
    gb: &mut [T],
    need_input: bool,
) -> Option<Vec<T>> {
    let (rows, cols) = (g.rows(), g.cols());
    let plane = g.out_h * g.out_w;
    // dy is [B, O, P]; rearrange to [O, B·P].
    let mut dyt = vec![T::zero(); g.out_c * cols];
    for b in 0..g.batch {
        for o in 0..g.out_c {
            dyt[o * cols + b * plane..o * cols + (b + 1) * plane]
                .copy_from_slice(&dy[(b * g.out_c + o) * plane..(b * g.out_c + o + 1) * plane]);
        }
    }
    for (o, b) in gb.iter_mut().enumerate() {
        *b += dyt[o * cols..(o + 1) * cols].iter().copied().sum::<T>();
    }
    let col = im2col(g, x);
    gemm(g.out_c, cols, rows, T::one(), &dyt, false, &col, true, T::one(), gw);
    if !need_input {
        return None;
    }
    let mut dcol = col;
    gemm(rows, g.out_c, cols, T::one(), w, true, &dyt, false, T::zero(), &mut dcol);
    Some(col2im(g, &dcol))
}
