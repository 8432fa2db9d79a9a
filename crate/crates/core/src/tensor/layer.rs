use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

/// One layer of an auto-encoder chain.
///
/// Convolutions consume `[channels, length]`, dense layers consume
/// `[units]`. `Trim` crops trailing time steps (or zero-pads them) so a
/// mirrored decoder lands on exactly the encoder's input length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Conv1dTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        in_units: usize,
        out_units: usize,
    },
    Activation {
        function: Activation,
    },
    Flatten,
    Reshape {
        channels: usize,
        length: usize,
    },
    Trim {
        length: usize,
    },
}

impl LayerSpec {
    pub fn conv1d(inp: usize, out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv1d {
            in_channels: inp,
            out_channels: out,
            kernel_size: kernel,
            stride,
            padding,
        }
    }

    pub fn conv1d_transpose(
        inp: usize,
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        LayerSpec::Conv1dTranspose {
            in_channels: inp,
            out_channels: out,
            kernel_size: kernel,
            stride,
            padding,
        }
    }

    pub fn dense(inp: usize, out: usize) -> Self {
        LayerSpec::Dense {
            in_units: inp,
            out_units: out,
        }
    }

    pub fn relu() -> Self {
        LayerSpec::Activation {
            function: Activation::Relu,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Conv1dTranspose { .. } => "conv1d_transpose",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Trim { .. } => "trim",
        }
    }

    fn validate(&self) -> Result<()> {
        let conv = match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                ..
            }
            | LayerSpec::Conv1dTranspose {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                ..
            } => Some((in_channels, out_channels, kernel_size, stride)),
            _ => None,
        };
        if let Some((i, o, k, s)) = conv {
            if i == 0 || o == 0 || k == 0 || s == 0 {
                return Err(Error::Config(format!(
                    "{}: channels, kernel_size and stride must be >= 1",
                    self.name()
                )));
            }
        }
        match *self {
            LayerSpec::Dense {
                in_units,
                out_units,
            } if in_units == 0 || out_units == 0 => {
                Err(Error::Config("dense: units must be >= 1".into()))
            }
            LayerSpec::Reshape { channels, length } if channels == 0 || length == 0 => {
                Err(Error::Config("reshape: dimensions must be >= 1".into()))
            }
            LayerSpec::Trim { length: 0 } => Err(Error::Config("trim: length must be >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Shapes of the (weight, bias) pair, if the layer has parameters.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => Some((vec![out_channels, in_channels, kernel_size], vec![out_channels])),
            LayerSpec::Conv1dTranspose {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => Some((vec![in_channels, out_channels, kernel_size], vec![out_channels])),
            LayerSpec::Dense {
                in_units,
                out_units,
            } => Some((vec![out_units, in_units], vec![out_units])),
            _ => None,
        }
    }

    /// Number of inputs feeding each output unit, used for weight init.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                kernel_size,
                ..
            } => in_channels * kernel_size,
            LayerSpec::Conv1dTranspose {
                in_channels,
                kernel_size,
                stride,
                ..
            } => in_channels * kernel_size.div_ceil(stride),
            LayerSpec::Dense { in_units, .. } => in_units,
            _ => 0,
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => {
                let len = expect_channels(self, input, in_channels)?;
                let padded = len + 2 * padding;
                if padded < kernel_size {
                    return Err(Error::Config(format!(
                        "conv1d: padded length {padded} shorter than kernel {kernel_size}"
                    )));
                }
                Ok(vec![out_channels, (padded - kernel_size) / stride + 1])
            }
            LayerSpec::Conv1dTranspose {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => {
                let len = expect_channels(self, input, in_channels)?;
                let full = (len - 1) * stride + kernel_size;
                if full <= 2 * padding {
                    return Err(Error::Config(format!(
                        "conv1d_transpose: padding {padding} leaves no output"
                    )));
                }
                Ok(vec![out_channels, full - 2 * padding])
            }
            LayerSpec::Dense {
                in_units,
                out_units,
            } => {
                if input != [in_units] {
                    return Err(Error::shape("dense input", &[in_units], input));
                }
                Ok(vec![out_units])
            }
            LayerSpec::Activation { .. } => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { channels, length } => {
                if input != [channels * length] {
                    return Err(Error::shape("reshape input", &[channels * length], input));
                }
                Ok(vec![channels, length])
            }
            LayerSpec::Trim { length } => {
                if input.len() != 2 {
                    return Err(Error::shape("trim input (rank 2)", &[0, length], input));
                }
                Ok(vec![input[0], length])
            }
        }
    }

    /// Evaluate the layer on `input` with optional `(weight, bias)`.
    pub fn forward(&self, params: Option<(&Tensor, &Tensor)>, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let params = self.check_params(params)?;
        let x = input.data();
        let data = match (*self, params) {
            (
                LayerSpec::Conv1d {
                    in_channels,
                    kernel_size,
                    stride,
                    padding,
                    ..
                },
                Some((w, b)),
            ) => conv1d_forward(
                x,
                w.data(),
                b.data(),
                ConvDims {
                    cin: in_channels,
                    cout: out_shape[0],
                    len_in: input.shape()[1],
                    len_out: out_shape[1],
                    kernel: kernel_size,
                    stride,
                    padding,
                },
            ),
            (
                LayerSpec::Conv1dTranspose {
                    in_channels,
                    kernel_size,
                    stride,
                    padding,
                    ..
                },
                Some((w, b)),
            ) => conv_transpose_forward(
                x,
                w.data(),
                b.data(),
                ConvDims {
                    cin: in_channels,
                    cout: out_shape[0],
                    len_in: input.shape()[1],
                    len_out: out_shape[1],
                    kernel: kernel_size,
                    stride,
                    padding,
                },
            ),
            (
                LayerSpec::Dense {
                    in_units,
                    out_units,
                },
                Some((w, b)),
            ) => dense_forward(x, w.data(), b.data(), in_units, out_units),
            (LayerSpec::Activation { function }, _) => x.iter().map(|&v| function.apply(v)).collect(),
            (LayerSpec::Flatten, _) | (LayerSpec::Reshape { .. }, _) => x.to_vec(),
            (LayerSpec::Trim { length }, _) => trim_forward(x, input.shape()[0], input.shape()[1], length),
            _ => unreachable!("parameter presence checked above"),
        };
        let out = Tensor::from_parts(out_shape, data);
        out.ensure_finite(self.name())?;
        Ok(out)
    }

    /// Vector-Jacobian product of the layer. Returns the input gradient
    /// (when `need_input`) and the parameter gradients (when `need_params`
    /// and the layer has parameters).
    pub(crate) fn backward(
        &self,
        params: Option<(&Tensor, &Tensor)>,
        input: &Tensor,
        output: &Tensor,
        grad_out: &Tensor,
        need_input: bool,
        need_params: bool,
    ) -> (Option<Tensor>, Option<(Tensor, Tensor)>) {
        let x = input.data();
        let g = grad_out.data();
        match (*self, params) {
            (
                LayerSpec::Conv1d {
                    in_channels,
                    kernel_size,
                    stride,
                    padding,
                    ..
                },
                Some((w, _)),
            ) => {
                let dims = ConvDims {
                    cin: in_channels,
                    cout: output.shape()[0],
                    len_in: input.shape()[1],
                    len_out: output.shape()[1],
                    kernel: kernel_size,
                    stride,
                    padding,
                };
                let dx = need_input
                    .then(|| Tensor::from_parts(input.shape().to_vec(), conv1d_grad_input(g, w.data(), dims)));
                let dp = need_params.then(|| {
                    let (dw, db) = conv1d_grad_params(g, x, dims);
                    (
                        Tensor::from_parts(w.shape().to_vec(), dw),
                        Tensor::from_parts(vec![dims.cout], db),
                    )
                });
                (dx, dp)
            }
            (
                LayerSpec::Conv1dTranspose {
                    in_channels,
                    kernel_size,
                    stride,
                    padding,
                    ..
                },
                Some((w, _)),
            ) => {
                let dims = ConvDims {
                    cin: in_channels,
                    cout: output.shape()[0],
                    len_in: input.shape()[1],
                    len_out: output.shape()[1],
                    kernel: kernel_size,
                    stride,
                    padding,
                };
                let dx = need_input.then(|| {
                    Tensor::from_parts(input.shape().to_vec(), conv_transpose_grad_input(g, w.data(), dims))
                });
                let dp = need_params.then(|| {
                    let (dw, db) = conv_transpose_grad_params(g, x, dims);
                    (
                        Tensor::from_parts(w.shape().to_vec(), dw),
                        Tensor::from_parts(vec![dims.cout], db),
                    )
                });
                (dx, dp)
            }
            (
                LayerSpec::Dense {
                    in_units,
                    out_units,
                },
                Some((w, _)),
            ) => {
                let w = w.data();
                let dx = need_input.then(|| {
                    let mut dx = vec![0.0; in_units];
                    for (o, &go) in g.iter().enumerate() {
                        let row = &w[o * in_units..(o + 1) * in_units];
                        for (d, &wv) in dx.iter_mut().zip(row) {
                            *d += wv * go;
                        }
                    }
                    Tensor::from_parts(vec![in_units], dx)
                });
                let dp = need_params.then(|| {
                    let mut dw = vec![0.0; in_units * out_units];
                    for (o, &go) in g.iter().enumerate() {
                        for (d, &xv) in dw[o * in_units..(o + 1) * in_units].iter_mut().zip(x) {
                            *d = go * xv;
                        }
                    }
                    (
                        Tensor::from_parts(vec![out_units, in_units], dw),
                        Tensor::from_parts(vec![out_units], g.to_vec()),
                    )
                });
                (dx, dp)
            }
            (LayerSpec::Activation { function }, _) => {
                let y = output.data();
                let dx = need_input.then(|| {
                    let d = x
                        .iter()
                        .zip(y)
                        .zip(g)
                        .map(|((&xv, &yv), &gv)| gv * function.derivative(xv, yv))
                        .collect();
                    Tensor::from_parts(input.shape().to_vec(), d)
                });
                (dx, None)
            }
            (LayerSpec::Flatten, _) | (LayerSpec::Reshape { .. }, _) => (
                need_input.then(|| Tensor::from_parts(input.shape().to_vec(), g.to_vec())),
                None,
            ),
            (LayerSpec::Trim { length }, _) => {
                let (c, len_in) = (input.shape()[0], input.shape()[1]);
                let dx = need_input.then(|| {
                    let mut dx = vec![0.0; c * len_in];
                    let keep = len_in.min(length);
                    for ch in 0..c {
                        dx[ch * len_in..ch * len_in + keep]
                            .copy_from_slice(&g[ch * length..ch * length + keep]);
                    }
                    Tensor::from_parts(input.shape().to_vec(), dx)
                });
                (dx, None)
            }
            _ => unreachable!("parameter presence checked in forward"),
        }
    }

    fn check_params<'p>(
        &self,
        params: Option<(&'p Tensor, &'p Tensor)>,
    ) -> Result<Option<(&'p Tensor, &'p Tensor)>> {
        match (self.param_shapes(), params) {
            (None, _) => Ok(None),
            (Some(_), None) => Err(Error::Config(format!("{} requires parameters", self.name()))),
            (Some((ws, bs)), Some((w, b))) => {
                if w.shape() != ws.as_slice() {
                    return Err(Error::shape(format!("{} weight", self.name()), &ws, w.shape()));
                }
                if b.shape() != bs.as_slice() {
                    return Err(Error::shape(format!("{} bias", self.name()), &bs, b.shape()));
                }
                Ok(Some((w, b)))
            }
        }
    }
}

fn expect_channels(spec: &LayerSpec, input: &[usize], channels: usize) -> Result<usize> {
    if input.len() != 2 || input[0] != channels || input[1] == 0 {
        let len = input.get(1).copied().unwrap_or(0);
        return Err(Error::shape(format!("{} input", spec.name()), &[channels, len], input));
    }
    Ok(input[1])
}

/// Type-check a layer chain from `input`, returning every intermediate
/// shape (index 0 is the input). Errors name the offending layer.
pub fn check_chain(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input.to_vec()];
    for (i, layer) in layers.iter().enumerate() {
        let next = layer
            .output_shape(shapes.last().expect("non-empty"))
            .map_err(|e| e.at_layer(i))?;
        shapes.push(next);
    }
    Ok(shapes)
}

#[derive(Debug, Clone, Copy)]
struct ConvDims {
    cin: usize,
    cout: usize,
    len_in: usize,
    len_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

/// Positions `t` in `[0, dst_len)` whose source index `t*stride + k - padding`
/// lands in `[0, src_len)`.
fn taps(src_len: usize, dst_len: usize, k: usize, stride: usize, padding: usize) -> std::ops::Range<usize> {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if src_len + padding > k {
        ((src_len - 1 + padding - k) / stride + 1).min(dst_len)
    } else {
        0
    };
    lo..hi.max(lo)
}

/// `cols[(c*kernel + k)*dst_len + t] = src[c][t*stride + k - padding]`,
/// zero where the index falls outside the source.
fn unfold(src: &[f64], channels: usize, src_len: usize, dst_len: usize, kernel: usize, stride: usize, padding: usize) -> Vec<f64> {
    let mut cols = vec![0.0; channels * kernel * dst_len];
    for c in 0..channels {
        let s = &src[c * src_len..(c + 1) * src_len];
        for k in 0..kernel {
            let row = &mut cols[(c * kernel + k) * dst_len..(c * kernel + k + 1) * dst_len];
            for t in taps(src_len, dst_len, k, stride, padding) {
                row[t] = s[t * stride + k - padding];
            }
        }
    }
    cols
}

/// Adjoint of [`unfold`]: scatter-add the columns back onto the source grid.
fn fold(cols: &[f64], channels: usize, src_len: usize, dst_len: usize, kernel: usize, stride: usize, padding: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels * src_len];
    for c in 0..channels {
        let o = &mut out[c * src_len..(c + 1) * src_len];
        for k in 0..kernel {
            let row = &cols[(c * kernel + k) * dst_len..(c * kernel + k + 1) * dst_len];
            for t in taps(src_len, dst_len, k, stride, padding) {
                o[t * stride + k - padding] += row[t];
            }
        }
    }
    out
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[r] = sum_j m[r][j] * cols[j]` with rows of length `len`.
fn mat_cols(m: &[f64], rows: usize, cols: &[f64], len: usize) -> Vec<f64> {
    let inner = cols.len() / len;
    let mut out = vec![0.0; rows * len];
    for r in 0..rows {
        let o = &mut out[r * len..(r + 1) * len];
        for j in 0..inner {
            axpy(o, m[r * inner + j], &cols[j * len..(j + 1) * len]);
        }
    }
    out
}

fn conv1d_forward(x: &[f64], w: &[f64], b: &[f64], d: ConvDims) -> Vec<f64> {
    let cols = unfold(x, d.cin, d.len_in, d.len_out, d.kernel, d.stride, d.padding);
    let mut out = mat_cols(w, d.cout, &cols, d.len_out);
    for (o, row) in out.chunks_mut(d.len_out).enumerate() {
        row.iter_mut().for_each(|v| *v += b[o]);
    }
    out
}

fn conv1d_grad_input(g: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let ck = d.cin * d.kernel;
    let mut dcols = vec![0.0; ck * d.len_out];
    for o in 0..d.cout {
        let gr = &g[o * d.len_out..(o + 1) * d.len_out];
        for j in 0..ck {
            axpy(&mut dcols[j * d.len_out..(j + 1) * d.len_out], w[o * ck + j], gr);
        }
    }
    fold(&dcols, d.cin, d.len_in, d.len_out, d.kernel, d.stride, d.padding)
}

fn conv1d_grad_params(g: &[f64], x: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>) {
    let cols = unfold(x, d.cin, d.len_in, d.len_out, d.kernel, d.stride, d.padding);
    let ck = d.cin * d.kernel;
    let mut dw = vec![0.0; d.cout * ck];
    let mut db = vec![0.0; d.cout];
    for o in 0..d.cout {
        let gr = &g[o * d.len_out..(o + 1) * d.len_out];
        db[o] = gr.iter().sum();
        for j in 0..ck {
            dw[o * ck + j] = dot(gr, &cols[j * d.len_out..(j + 1) * d.len_out]);
        }
    }
    (dw, db)
}

// A transposed convolution is the adjoint of a convolution from the output
// grid back to the input grid, so it reuses unfold/fold with the roles of
// the two lengths swapped.

fn conv_transpose_forward(x: &[f64], w: &[f64], b: &[f64], d: ConvDims) -> Vec<f64> {
    // cols[(o*kernel + k)][i] = sum_c w[c][o][k] * x[c][i]
    let ok = d.cout * d.kernel;
    let mut cols = vec![0.0; ok * d.len_in];
    for c in 0..d.cin {
        let xr = &x[c * d.len_in..(c + 1) * d.len_in];
        for j in 0..ok {
            axpy(&mut cols[j * d.len_in..(j + 1) * d.len_in], w[c * ok + j], xr);
        }
    }
    let mut out = fold(&cols, d.cout, d.len_out, d.len_in, d.kernel, d.stride, d.padding);
    for (o, row) in out.chunks_mut(d.len_out).enumerate() {
        row.iter_mut().for_each(|v| *v += b[o]);
    }
    out
}

fn conv_transpose_grad_input(g: &[f64], w: &[f64], d: ConvDims) -> Vec<f64> {
    let gcols = unfold(g, d.cout, d.len_out, d.len_in, d.kernel, d.stride, d.padding);
    mat_cols(w, d.cin, &gcols, d.len_in)
}

fn conv_transpose_grad_params(g: &[f64], x: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>) {
    let gcols = unfold(g, d.cout, d.len_out, d.len_in, d.kernel, d.stride, d.padding);
    let ok = d.cout * d.kernel;
    let mut dw = vec![0.0; d.cin * ok];
    for c in 0..d.cin {
        let xr = &x[c * d.len_in..(c + 1) * d.len_in];
        for j in 0..ok {
            dw[c * ok + j] = dot(xr, &gcols[j * d.len_in..(j + 1) * d.len_in]);
        }
    }
    let db = (0..d.cout)
        .map(|o| g[o * d.len_out..(o + 1) * d.len_out].iter().sum())
        .collect();
    (dw, db)
}

fn dense_forward(x: &[f64], w: &[f64], b: &[f64], inp: usize, out: usize) -> Vec<f64> {
    (0..out)
        .map(|o| {
            let row = &w[o * inp..(o + 1) * inp];
            b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn trim_forward(x: &[f64], channels: usize, len_in: usize, length: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels * length];
    let keep = len_in.min(length);
    for c in 0..channels {
        out[c * length..c * length + keep].copy_from_slice(&x[c * len_in..c * len_in + keep]);
    }
    out
}
