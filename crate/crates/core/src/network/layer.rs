use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, Vector};

use super::activation::{Activation, ActivationJacobian, UnitState};
use super::lstm::{LstmCache, LstmCell};

/// Channel-major image shape `(channels, height, width)`; flattening follows
/// `index = (c * height + i) * width + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape3 {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }
}

/// Fully connected layer `x ↦ σ(A x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        if bias.dim() != weights.rows() {
            return Err(Error::shape(format!(
                "dense bias has length {} but weights have {} rows",
                bias.dim(),
                weights.rows()
            )));
        }
        activation.validate()?;
        Ok(Dense {
            weights,
            bias,
            activation,
        })
    }

    /// Dense layer with zero bias.
    pub fn linear(weights: Matrix, activation: Activation) -> Result<Self> {
        let rows = weights.rows();
        Self::new(weights, Vector::zeros(rows), activation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    None,
    /// Zero border of `kernel_size / 2` on every side.
    Zero,
}

/// Multi-channel 2D convolution (cross-correlation) followed by an
/// activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub input: Shape3,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// Kernels indexed `[out][in][row][col]`, row-major.
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: Padding,
    pub activation: Activation,
}

impl Conv2d {
    pub fn new(
        input: Shape3,
        out_channels: usize,
        kernel_size: usize,
        kernels: Vec<f64>,
        bias: Vec<f64>,
        stride: usize,
        padding: Padding,
        activation: Activation,
    ) -> Result<Self> {
        if kernel_size == 0 || kernel_size.is_multiple_of(2) {
            return Err(Error::contract(format!(
                "convolution kernels must have odd side, got {kernel_size}"
            )));
        }
        if stride == 0 {
            return Err(Error::contract("convolution stride must be positive"));
        }
        let expect = out_channels * input.channels * kernel_size * kernel_size;
        if kernels.len() != expect {
            return Err(Error::shape(format!(
                "convolution expects {expect} kernel weights, got {}",
                kernels.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::shape(format!(
                "convolution expects {out_channels} biases, got {}",
                bias.len()
            )));
        }
        let conv = Conv2d {
            input,
            out_channels,
            kernel_size,
            kernels,
            bias,
            stride,
            padding,
            activation,
        };
        let pad = conv.pad();
        if input.height + 2 * pad < kernel_size || input.width + 2 * pad < kernel_size {
            return Err(Error::shape("convolution kernel larger than padded input"));
        }
        activation.validate()?;
        Ok(conv)
    }

    fn pad(&self) -> usize {
        match self.padding {
            Padding::None => 0,
            Padding::Zero => self.kernel_size / 2,
        }
    }

    pub fn output_shape(&self) -> Shape3 {
        let pad = self.pad();
        let k = self.kernel_size;
        Shape3 {
            channels: self.out_channels,
            height: (self.input.height + 2 * pad - k) / self.stride + 1,
            width: (self.input.width + 2 * pad - k) / self.stride + 1,
        }
    }

    #[inline]
    fn kernel(&self, oc: usize, ic: usize, ki: usize, kj: usize) -> f64 {
        let k = self.kernel_size;
        self.kernels[((oc * self.input.channels + ic) * k + ki) * k + kj]
    }

    /// Visits the in-bounds input taps of output `(oc, oi, oj)` in increasing
    /// input-index order, passing `(input_index, weight)`.
    #[inline]
    fn taps(&self, oc: usize, oi: usize, oj: usize, mut f: impl FnMut(usize, f64)) {
        let pad = self.pad() as isize;
        let k = self.kernel_size;
        let (h, w) = (self.input.height as isize, self.input.width as isize);
        for ic in 0..self.input.channels {
            for ki in 0..k {
                let r = (oi * self.stride + ki) as isize - pad;
                if r < 0 || r >= h {
                    continue;
                }
                for kj in 0..k {
                    let c = (oj * self.stride + kj) as isize - pad;
                    if c < 0 || c >= w {
                        continue;
                    }
                    f(
                        self.input.index(ic, r as usize, c as usize),
                        self.kernel(oc, ic, ki, kj),
                    );
                }
            }
        }
    }

    /// Sliding-window pre-activation.
    pub fn convolve(&self, x: &[f64]) -> Vec<f64> {
        let out = self.output_shape();
        let mut z = vec![0.0; out.len()];
        for oc in 0..out.channels {
            for oi in 0..out.height {
                for oj in 0..out.width {
                    let mut acc = 0.0;
                    self.taps(oc, oi, oj, |idx, wgt| acc += wgt * x[idx]);
                    z[out.index(oc, oi, oj)] = acc + self.bias[oc];
                }
            }
        }
        z
    }

    /// The linear part of the layer as an explicit matrix acting on the
    /// flattened input.
    pub fn matrix(&self) -> Matrix {
        let out = self.output_shape();
        let mut m = Matrix::zeros(out.len(), self.input.len());
        for oc in 0..out.channels {
            for oi in 0..out.height {
                for oj in 0..out.width {
                    let row = out.index(oc, oi, oj);
                    self.taps(oc, oi, oj, |idx, wgt| m[(row, idx)] += wgt);
                }
            }
        }
        m
    }

    /// `g · C` for a row vector `g` over outputs, where `C` is [`Self::matrix`].
    fn back_convolve(&self, g: &[f64], out_row: &mut [f64]) {
        let out = self.output_shape();
        for oc in 0..out.channels {
            for oi in 0..out.height {
                for oj in 0..out.width {
                    let gv = g[out.index(oc, oi, oj)];
                    if gv != 0.0 {
                        self.taps(oc, oi, oj, |idx, wgt| out_row[idx] += gv * wgt);
                    }
                }
            }
        }
    }

    /// Frobenius norm of [`Self::matrix`] without building it.
    pub fn frobenius_norm(&self) -> f64 {
        let out = self.output_shape();
        let mut s = 0.0;
        for oc in 0..out.channels {
            for oi in 0..out.height {
                for oj in 0..out.width {
                    self.taps(oc, oi, oj, |_, wgt| s += wgt * wgt);
                }
            }
        }
        s.sqrt()
    }
}

/// Non-overlapping average pooling with a square window; trailing rows and
/// columns that do not fill a window are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct AvgPool {
    pub input: Shape3,
    pub window: usize,
}

impl AvgPool {
    pub fn new(input: Shape3, window: usize) -> Result<Self> {
        if window == 0 || window > input.height || window > input.width {
            return Err(Error::contract(format!(
                "pooling window {window} does not fit a {}x{} map",
                input.height, input.width
            )));
        }
        Ok(AvgPool { input, window })
    }

    pub fn output_shape(&self) -> Shape3 {
        Shape3 {
            channels: self.input.channels,
            height: self.input.height / self.window,
            width: self.input.width / self.window,
        }
    }

    fn for_each_window(&self, mut f: impl FnMut(usize, usize)) {
        let out = self.output_shape();
        let w = self.window;
        for c in 0..out.channels {
            for i in 0..out.height {
                for j in 0..out.width {
                    let o = out.index(c, i, j);
                    for a in 0..w {
                        for b in 0..w {
                            f(o, self.input.index(c, i * w + a, j * w + b));
                        }
                    }
                }
            }
        }
    }

    fn pool(&self, x: &[f64]) -> Vec<f64> {
        let scale = 1.0 / (self.window * self.window) as f64;
        let mut y = vec![0.0; self.output_shape().len()];
        self.for_each_window(|o, i| y[o] += x[i]);
        y.iter_mut().for_each(|v| *v *= scale);
        y
    }

    pub fn matrix(&self) -> Matrix {
        let scale = 1.0 / (self.window * self.window) as f64;
        let mut m = Matrix::zeros(self.output_shape().len(), self.input.len());
        self.for_each_window(|o, i| m[(o, i)] = scale);
        m
    }
}

/// Pointwise activation on its own, e.g. a ReLU after a pooling layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Elementwise {
    pub dim: usize,
    pub activation: Activation,
}

/// Residual block `x ↦ x + F(x)` with `F` the composition of `inner`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub inner: Vec<Layer>,
}

impl Residual {
    pub fn new(inner: Vec<Layer>) -> Result<Self> {
        let first = inner
            .first()
            .ok_or_else(|| Error::contract("residual block needs at least one inner layer"))?;
        let last = inner.last().expect("non-empty");
        check_chain(&inner)?;
        if first.in_dim() != last.out_dim() {
            return Err(Error::shape(format!(
                "residual block maps dimension {} to {}; skip connection needs them equal",
                first.in_dim(),
                last.out_dim()
            )));
        }
        Ok(Residual { inner })
    }
}

pub(crate) fn check_chain(layers: &[Layer]) -> Result<()> {
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].out_dim() != pair[1].in_dim() {
            return Err(Error::shape(format!(
                "layer {} outputs dimension {} but layer {} expects {}",
                i,
                pair[0].out_dim(),
                i + 1,
                pair[1].in_dim()
            )));
        }
    }
    Ok(())
}

/// One map of the layer sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    AvgPool(AvgPool),
    /// Reinterprets a channel-major map as a flat vector; the identity on
    /// the underlying data.
    Flatten(Shape3),
    Elementwise(Elementwise),
    Residual(Residual),
    Lstm(LstmCell),
}

/// Everything a forward pass through one layer leaves behind for its
/// Jacobian.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Vec<f64>,
    /// Argument of the activation; empty for layers without one.
    pub pre_activation: Vec<f64>,
    pub output: Vec<f64>,
    /// Units whose pre-activation sits on a breakpoint.
    pub kinks: Vec<usize>,
    pub(crate) nested: Nested,
}

#[derive(Debug, Clone)]
pub(crate) enum Nested {
    None,
    Residual(Vec<LayerTrace>),
    Lstm(LstmCache),
}

impl LayerTrace {
    fn plain(input: &[f64], pre: Vec<f64>, output: Vec<f64>, kinks: Vec<usize>) -> Self {
        LayerTrace {
            input: input.to_vec(),
            pre_activation: pre,
            output,
            kinks,
            nested: Nested::None,
        }
    }

    pub fn has_kink(&self) -> bool {
        !self.kinks.is_empty()
    }
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weights.cols(),
            Layer::Conv2d(c) => c.input.len(),
            Layer::AvgPool(p) => p.input.len(),
            Layer::Flatten(s) => s.len(),
            Layer::Elementwise(e) => e.dim,
            Layer::Residual(r) => r.inner[0].in_dim(),
            Layer::Lstm(l) => l.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weights.rows(),
            Layer::Conv2d(c) => c.output_shape().len(),
            Layer::AvgPool(p) => p.output_shape().len(),
            Layer::Flatten(s) => s.len(),
            Layer::Elementwise(e) => e.dim,
            Layer::Residual(r) => r.inner.last().expect("non-empty").out_dim(),
            Layer::Lstm(l) => l.out_dim(),
        }
    }

    pub fn activation(&self) -> Option<&Activation> {
        match self {
            Layer::Dense(d) => Some(&d.activation),
            Layer::Conv2d(c) => Some(&c.activation),
            Layer::Elementwise(e) => Some(&e.activation),
            _ => None,
        }
    }

    /// Evaluates the layer; `x` must have length [`Self::in_dim`].
    pub fn forward(&self, x: &[f64]) -> LayerTrace {
        debug_assert_eq!(x.len(), self.in_dim());
        match self {
            Layer::Dense(d) => {
                let z: Vec<f64> = (0..d.weights.rows())
                    .map(|i| dot(d.weights.row(i), x) + d.bias[i])
                    .collect();
                activate(x, z, &d.activation)
            }
            Layer::Conv2d(c) => activate(x, c.convolve(x), &c.activation),
            Layer::Elementwise(e) => activate(x, x.to_vec(), &e.activation),
            Layer::AvgPool(p) => LayerTrace::plain(x, Vec::new(), p.pool(x), Vec::new()),
            Layer::Flatten(_) => LayerTrace::plain(x, Vec::new(), x.to_vec(), Vec::new()),
            Layer::Residual(r) => {
                let mut traces = Vec::with_capacity(r.inner.len());
                let mut cur = x.to_vec();
                for layer in &r.inner {
                    let t = layer.forward(&cur);
                    cur = t.output.clone();
                    traces.push(t);
                }
                let output = cur.iter().zip(x).map(|(a, b)| a + b).collect();
                let kinks = traces
                    .iter()
                    .flat_map(|t| t.kinks.iter().copied())
                    .collect();
                LayerTrace {
                    input: x.to_vec(),
                    pre_activation: Vec::new(),
                    output,
                    kinks,
                    nested: Nested::Residual(traces),
                }
            }
            Layer::Lstm(l) => l.forward(x),
        }
    }

    /// Explicit `out_dim × in_dim` Jacobian at the traced point.
    ///
    /// Units sitting on a breakpoint use the inactive-side derivative; callers
    /// that must not silently differentiate there check [`LayerTrace::kinks`].
    pub fn jacobian(&self, trace: &LayerTrace) -> Matrix {
        match self {
            Layer::Dense(d) => {
                let j = d.activation.jacobian(&trace.pre_activation, &trace.output);
                affine_after(&j, &d.weights)
            }
            Layer::Conv2d(c) => {
                let j = c.activation.jacobian(&trace.pre_activation, &trace.output);
                affine_after(&j, &c.matrix())
            }
            Layer::Elementwise(e) => e
                .activation
                .jacobian(&trace.pre_activation, &trace.output)
                .to_matrix(),
            Layer::AvgPool(p) => p.matrix(),
            Layer::Flatten(s) => Matrix::identity(s.len()),
            Layer::Residual(r) => {
                let traces = residual_traces(trace);
                let n = self.in_dim();
                let mut acc = Matrix::identity(n);
                for (layer, t) in r.inner.iter().zip(traces) {
                    acc = layer.jacobian(t).matmul(&acc).expect("chained shapes");
                }
                acc.add(&Matrix::identity(n)).expect("square")
            }
            Layer::Lstm(l) => l.jacobian(lstm_cache(trace)),
        }
    }

    /// `left · J` without materializing `J` where the structure allows it.
    pub fn pull_rows(&self, left: &Matrix, trace: &LayerTrace) -> Matrix {
        debug_assert_eq!(left.cols(), self.out_dim());
        match self {
            Layer::Dense(d) => {
                let scaled = d
                    .activation
                    .jacobian(&trace.pre_activation, &trace.output)
                    .pull_rows(left);
                scaled.matmul(&d.weights).expect("dense shapes")
            }
            Layer::Conv2d(c) => {
                let scaled = c
                    .activation
                    .jacobian(&trace.pre_activation, &trace.output)
                    .pull_rows(left);
                let mut out = Matrix::zeros(left.rows(), c.input.len());
                for r in 0..left.rows() {
                    c.back_convolve(scaled.row(r), out.row_mut(r));
                }
                out
            }
            Layer::Elementwise(e) => e
                .activation
                .jacobian(&trace.pre_activation, &trace.output)
                .pull_rows(left),
            Layer::AvgPool(p) => {
                let scale = 1.0 / (p.window * p.window) as f64;
                let mut out = Matrix::zeros(left.rows(), p.input.len());
                for r in 0..left.rows() {
                    let (g, o) = (left.row(r), out.row_mut(r));
                    p.for_each_window(|oi, ii| o[ii] = g[oi] * scale);
                }
                out
            }
            Layer::Flatten(_) => left.clone(),
            Layer::Residual(r) => {
                let traces = residual_traces(trace);
                let mut acc = left.clone();
                for (layer, t) in r.inner.iter().zip(traces).rev() {
                    acc = layer.pull_rows(&acc, t);
                }
                acc.add(left).expect("square residual")
            }
            Layer::Lstm(l) => left
                .matmul(&l.jacobian(lstm_cache(trace)))
                .expect("lstm shapes"),
        }
    }

    /// Appends the states of this layer's non-differentiable units.
    pub(crate) fn unit_states(&self, trace: &LayerTrace, out: &mut Vec<UnitState>) {
        match self {
            Layer::Residual(r) => {
                for (layer, t) in r.inner.iter().zip(residual_traces(trace)) {
                    layer.unit_states(t, out);
                }
            }
            _ => {
                if let Some(act) = self.activation() {
                    out.extend(act.unit_states(&trace.pre_activation));
                }
            }
        }
    }

    /// Upper bound on the Lipschitz constant of the layer.
    pub fn lipschitz_bound(&self) -> Result<f64> {
        Ok(match self {
            Layer::Dense(d) => d.weights.frobenius_norm() * d.activation.max_slope(),
            Layer::Conv2d(c) => c.frobenius_norm() * c.activation.max_slope(),
            Layer::Elementwise(e) => e.activation.max_slope(),
            // Rows of the averaging matrix are orthogonal with norm 1/window.
            Layer::AvgPool(p) => 1.0 / p.window as f64,
            Layer::Flatten(_) => 1.0,
            Layer::Residual(r) => {
                let mut inner = 1.0;
                for l in &r.inner {
                    inner *= l.lipschitz_bound()?;
                }
                1.0 + inner
            }
            Layer::Lstm(_) => {
                return Err(Error::Unsupported(
                    "LSTM cells have no global Lipschitz bound (it grows with the cell state)"
                        .into(),
                ))
            }
        })
    }
}

fn activate(x: &[f64], z: Vec<f64>, act: &Activation) -> LayerTrace {
    let output = act.apply(&z);
    let kinks = act.kinks(&z);
    LayerTrace::plain(x, z, output, kinks)
}

/// `Jσ · A`
fn affine_after(j: &ActivationJacobian, a: &Matrix) -> Matrix {
    match j {
        ActivationJacobian::Diagonal(d) => {
            let mut m = a.clone();
            m.scale_rows(d);
            m
        }
        ActivationJacobian::Full(m) => m.matmul(a).expect("activation shapes"),
    }
}

fn residual_traces(trace: &LayerTrace) -> &[LayerTrace] {
    match &trace.nested {
        Nested::Residual(t) => t,
        _ => panic!("trace does not belong to a residual block"),
    }
}

fn lstm_cache(trace: &LayerTrace) -> &LstmCache {
    match &trace.nested {
        Nested::Lstm(c) => c,
        _ => panic!("trace does not belong to an LSTM cell"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_by_five_image() -> Vec<f64> {
        vec![
            1., 0., 4., 0., 1., //
            3., 1., 0., 0., 2., //
            7., 1., 1., 0., 3., //
            8., 1., 5., 0., 0., //
            5., 2., 0., 0., 0.,
        ]
    }

    fn diagonal_conv(stride: usize, padding: Padding) -> Conv2d {
        let k = vec![1., 0., 0., 0., 1., 0., 0., 0., 1.];
        Conv2d::new(
            Shape3::new(1, 5, 5),
            1,
            3,
            k,
            vec![0.0],
            stride,
            padding,
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn convolution_feature_map() {
        let conv = diagonal_conv(2, Padding::None);
        assert_eq!(conv.output_shape(), Shape3::new(1, 2, 2));
        assert_eq!(conv.convolve(&five_by_five_image()), vec![3., 7., 8., 1.]);
    }

    #[test]
    fn conv_matrix_matches_sliding_window() {
        for (stride, padding) in [(1, Padding::None), (2, Padding::None), (1, Padding::Zero), (2, Padding::Zero)] {
            let conv = diagonal_conv(stride, padding);
            let x = five_by_five_image();
            let via_matrix = conv.matrix().mul_vec(&x).unwrap();
            assert_eq!(via_matrix.as_slice(), conv.convolve(&x).as_slice());
        }
    }

    #[test]
    fn zero_padding_keeps_size() {
        let conv = diagonal_conv(1, Padding::Zero);
        assert_eq!(conv.output_shape(), Shape3::new(1, 5, 5));
        let z = conv.convolve(&five_by_five_image());
        // Corner (0,0) sees only the in-bounds diagonal taps (0,0) and (1,1).
        assert_eq!(z[0], 1.0 + 1.0);
    }

    #[test]
    fn even_kernel_rejected() {
        let r = Conv2d::new(
            Shape3::new(1, 4, 4),
            1,
            2,
            vec![0.0; 4],
            vec![0.0],
            1,
            Padding::None,
            Activation::Identity,
        );
        assert!(r.is_err());
    }

    #[test]
    fn avgpool_is_constant_averaging() {
        let p = AvgPool::new(Shape3::new(1, 4, 4), 2).unwrap();
        let layer = Layer::AvgPool(p);
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let t = layer.forward(&x);
        assert_eq!(t.output, vec![2.5, 4.5, 10.5, 12.5]);
        let j = layer.jacobian(&t);
        assert!(j.row(0).iter().all(|&v| v == 0.0 || v == 0.25));
        let pulled = layer.pull_rows(&Matrix::identity(4), &t);
        assert_eq!(pulled, j);
    }

    #[test]
    fn relu_dense_jacobian_ranks() {
        let d = Dense::linear(Matrix::from_rows(&[[3.0, 0.0, 0.0]]), Activation::Relu).unwrap();
        let layer = Layer::Dense(d);
        let on = layer.forward(&[1.0, 5.0, -2.0]);
        assert_eq!(layer.jacobian(&on).as_slice(), &[3.0, 0.0, 0.0]);
        let off = layer.forward(&[-1.0, 5.0, -2.0]);
        assert_eq!(layer.jacobian(&off).as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn residual_with_dead_inner_is_identity() {
        let inner = Layer::Dense(
            Dense::new(
                Matrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]),
                Vector::from([-10.0, -10.0]),
                Activation::Relu,
            )
            .unwrap(),
        );
        let res = Layer::Residual(Residual::new(vec![inner]).unwrap());
        let t = res.forward(&[0.3, 0.4]);
        assert_eq!(t.output, vec![0.3, 0.4]);
        assert_eq!(res.jacobian(&t), Matrix::identity(2));
    }

    #[test]
    fn residual_dimension_mismatch() {
        let inner = Layer::Dense(Dense::linear(Matrix::zeros(3, 2), Activation::Tanh).unwrap());
        assert!(matches!(Residual::new(vec![inner]), Err(Error::Shape(_))));
    }
}
