//! Versioned text model file.
//!
//! ```text
//! simec-model
//! version 1
//! input_dim 2
//! memory_dim 0
//! layers 1
//! layer 0 dense in=2 out=1 activation=relu
//! blob weights shape=1x2 data=<base64>
//! blob bias shape=1 data=<base64>
//! end
//! ```
//!
//! Blobs are little-endian binary64 in row-major order, base64 encoded with
//! the standard alphabet and padding. Keys appear in the fixed order shown by
//! [`write_model`]; anything else is rejected. Residual blocks are followed
//! by their inner layers, labelled `layer <outer>.<inner>`.

use std::fmt::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::network::{
    Activation, AvgPool, Conv2d, Dense, Elementwise, Layer, LstmCell, NetworkSpec, Padding,
    Residual, Shape3,
};

pub const MODEL_MAGIC: &str = "simec-model";
pub const MODEL_VERSION: u32 = 1;

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    parse_model(&std::fs::read_to_string(path)?)
}

pub fn save_model(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_model(net))?;
    Ok(())
}

pub fn write_model(net: &NetworkSpec) -> String {
    let mut s = String::new();
    writeln!(s, "{MODEL_MAGIC}").unwrap();
    writeln!(s, "version {MODEL_VERSION}").unwrap();
    writeln!(s, "input_dim {}", net.input_dim()).unwrap();
    writeln!(s, "memory_dim {}", net.memory_dim().unwrap_or(0)).unwrap();
    writeln!(s, "layers {}", net.layers().len()).unwrap();
    for (i, layer) in net.layers().iter().enumerate() {
        write_layer(&mut s, &i.to_string(), layer);
    }
    s.push_str("end\n");
    s
}

fn shape3(s: Shape3) -> String {
    format!("{}x{}x{}", s.channels, s.height, s.width)
}

fn write_blob(s: &mut String, name: &str, shape: &[usize], data: &[f64]) {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let shape: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    writeln!(s, "blob {name} shape={} data={}", shape.join("x"), STANDARD.encode(bytes)).unwrap();
}

fn write_layer(s: &mut String, label: &str, layer: &Layer) {
    match layer {
        Layer::Dense(d) => {
            let (out, inp) = d.weights.shape();
            writeln!(s, "layer {label} dense in={inp} out={out} activation={}", d.activation).unwrap();
            write_blob(s, "weights", &[out, inp], d.weights.as_slice());
            write_blob(s, "bias", &[out], &d.bias);
        }
        Layer::Conv2d(c) => {
            let padding = match c.padding {
                Padding::None => "none",
                Padding::Zero => "zero",
            };
            writeln!(
                s,
                "layer {label} conv2d input={} out_channels={} kernel={} stride={} padding={padding} activation={}",
                shape3(c.input),
                c.out_channels,
                c.kernel_size,
                c.stride,
                c.activation
            )
            .unwrap();
            let k = c.kernel_size;
            write_blob(s, "kernels", &[c.out_channels, c.input.channels, k, k], &c.kernels);
            write_blob(s, "bias", &[c.out_channels], &c.bias);
        }
        Layer::AvgPool(p) => {
            writeln!(s, "layer {label} avgpool input={} window={}", shape3(p.input), p.window).unwrap();
        }
        Layer::Flatten(shape) => {
            writeln!(s, "layer {label} flatten shape={}", shape3(*shape)).unwrap();
        }
        Layer::Elementwise(e) => {
            writeln!(s, "layer {label} elementwise dim={} activation={}", e.dim, e.activation).unwrap();
        }
        Layer::Residual(r) => {
            writeln!(s, "layer {label} residual inner={}", r.inner.len()).unwrap();
            for (j, l) in r.inner.iter().enumerate() {
                write_layer(s, &format!("{label}.{j}"), l);
            }
        }
        Layer::Lstm(c) => {
            let h = c.hidden_dim;
            writeln!(s, "layer {label} lstm input={} hidden={h}", c.input_dim).unwrap();
            write_blob(s, "w_input", &[4 * h, c.input_dim], c.w_input.as_slice());
            write_blob(s, "w_hidden", &[4 * h, h], c.w_hidden.as_slice());
            write_blob(s, "bias", &[4 * h], &c.bias);
        }
    }
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    /// Next line that is neither blank nor a `#` comment, with its 1-based number.
    fn next(&mut self) -> Result<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok((i + 1, t));
            }
        }
        Err(Error::format("unexpected end of model file"))
    }
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("line {line}: {msg}"))
}

fn header_value(lines: &mut Lines, key: &str) -> Result<usize> {
    let (n, line) = lines.next()?;
    let mut it = line.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(k), Some(v), None) if k == key => {
            v.parse().map_err(|_| bad(n, format!("`{key}` needs a non-negative integer, got `{v}`")))
        }
        _ => Err(bad(n, format!("expected `{key} <value>`, got `{line}`"))),
    }
}

/// Values of `key=value` tokens, which must appear exactly in `keys` order.
fn fields<'a>(n: usize, tokens: &[&'a str], keys: &[&str]) -> Result<Vec<&'a str>> {
    if tokens.len() != keys.len() {
        return Err(bad(n, format!("expected fields {}", keys.join(" "))));
    }
    tokens
        .iter()
        .zip(keys)
        .map(|(t, k)| match t.split_once('=') {
            Some((key, v)) if key == *k => Ok(v),
            _ => Err(bad(n, format!("expected `{k}=...`, got `{t}`"))),
        })
        .collect()
}

fn uint(n: usize, key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(n, format!("`{key}` must be a non-negative integer, got `{v}`")))
}

fn dims(n: usize, v: &str) -> Result<Vec<usize>> {
    v.split('x').map(|d| uint(n, "shape", d)).collect()
}

fn parse_shape3(n: usize, v: &str) -> Result<Shape3> {
    match dims(n, v)?[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok(Shape3::new(c, h, w)),
        _ => Err(bad(n, format!("expected a CxHxW shape, got `{v}`"))),
    }
}

fn activation(n: usize, v: &str) -> Result<Activation> {
    v.parse::<Activation>()
        .and_then(|a| a.validate().map(|_| a))
        .map_err(|e| bad(n, e))
}

fn read_blob(lines: &mut Lines, layer: usize, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let (n, line) = lines.next()?;
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 4 || tokens[0] != "blob" || tokens[1] != name {
        return Err(bad(n, format!("layer {layer}: expected `blob {name} shape=... data=...`")));
    }
    let f = fields(n, &tokens[2..], &["shape", "data"])?;
    let declared = dims(n, f[0])?;
    if declared != shape {
        return Err(Error::Shape(format!(
            "layer {layer}: blob `{name}` declared shape {} but the layer needs {}",
            f[0],
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
        )));
    }
    let bytes = STANDARD
        .decode(f[1])
        .map_err(|e| bad(n, format!("layer {layer}: blob `{name}` is not valid base64: {e}")))?;
    let expected = shape.iter().product::<usize>() * 8;
    if bytes.len() != expected {
        return Err(Error::BlobLength {
            layer,
            name: name.to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad(n, format!("layer {layer}: blob `{name}` has non-finite entries")));
    }
    Ok(data)
}

fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
    Matrix::new(rows, cols, data).expect("blob length checked")
}

/// Prefixes errors that do not already name a location with the layer index.
fn at_layer(layer: usize, e: Error) -> Error {
    match e {
        Error::Shape(m) if !m.starts_with("layer") => Error::Shape(format!("layer {layer}: {m}")),
        Error::Contract(m) => Error::Format(format!("layer {layer}: {m}")),
        other => other,
    }
}

fn read_layer(lines: &mut Lines, index: usize, label: &str) -> Result<Layer> {
    let (n, line) = lines.next()?;
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 3 || tokens[0] != "layer" || tokens[1] != label {
        return Err(bad(n, format!("expected `layer {label} <type> ...`, got `{line}`")));
    }
    let rest = &tokens[3..];
    let layer = match tokens[2] {
        "dense" => {
            let f = fields(n, rest, &["in", "out", "activation"])?;
            let (inp, out) = (uint(n, "in", f[0])?, uint(n, "out", f[1])?);
            let act = activation(n, f[2])?;
            let w = read_blob(lines, index, "weights", &[out, inp])?;
            let b = read_blob(lines, index, "bias", &[out])?;
            Dense::new(matrix(out, inp, w), Vector::from(b), act).map(Layer::Dense)
        }
        "conv2d" => {
            let f = fields(
                n,
                rest,
                &["input", "out_channels", "kernel", "stride", "padding", "activation"],
            )?;
            let input = parse_shape3(n, f[0])?;
            let oc = uint(n, "out_channels", f[1])?;
            let k = uint(n, "kernel", f[2])?;
            let stride = uint(n, "stride", f[3])?;
            let padding = match f[4] {
                "none" => Padding::None,
                "zero" => Padding::Zero,
                other => return Err(bad(n, format!("unknown padding `{other}`"))),
            };
            let act = activation(n, f[5])?;
            let kernels = read_blob(lines, index, "kernels", &[oc, input.channels, k, k])?;
            let bias = read_blob(lines, index, "bias", &[oc])?;
            Conv2d::new(input, oc, k, kernels, bias, stride, padding, act).map(Layer::Conv2d)
        }
        "avgpool" => {
            let f = fields(n, rest, &["input", "window"])?;
            AvgPool::new(parse_shape3(n, f[0])?, uint(n, "window", f[1])?).map(Layer::AvgPool)
        }
        "flatten" => {
            let f = fields(n, rest, &["shape"])?;
            Ok(Layer::Flatten(parse_shape3(n, f[0])?))
        }
        "elementwise" => {
            let f = fields(n, rest, &["dim", "activation"])?;
            let dim = uint(n, "dim", f[0])?;
            if dim == 0 {
                return Err(bad(n, "elementwise layer needs a positive dimension"));
            }
            Ok(Layer::Elementwise(Elementwise {
                dim,
                activation: activation(n, f[1])?,
            }))
        }
        "residual" => {
            let f = fields(n, rest, &["inner"])?;
            let count = uint(n, "inner", f[0])?;
            let inner = (0..count)
                .map(|j| read_layer(lines, index, &format!("{label}.{j}")))
                .collect::<Result<Vec<_>>>()?;
            Residual::new(inner).map(Layer::Residual)
        }
        "lstm" => {
            let f = fields(n, rest, &["input", "hidden"])?;
            let (d, h) = (uint(n, "input", f[0])?, uint(n, "hidden", f[1])?);
            let wi = read_blob(lines, index, "w_input", &[4 * h, d])?;
            let wh = read_blob(lines, index, "w_hidden", &[4 * h, h])?;
            let b = read_blob(lines, index, "bias", &[4 * h])?;
            LstmCell::new(matrix(4 * h, d, wi), matrix(4 * h, h, wh), Vector::from(b)).map(Layer::Lstm)
        }
        other => return Err(bad(n, format!("layer {index}: unknown layer type `{other}`"))),
    };
    layer.map_err(|e| at_layer(index, e))
}

pub fn parse_model(text: &str) -> Result<NetworkSpec> {
    let mut lines = Lines {
        inner: text.lines().enumerate().peekable(),
    };
    let (n, magic) = lines.next()?;
    if magic != MODEL_MAGIC {
        return Err(bad(n, format!("not a model file (expected `{MODEL_MAGIC}`)")));
    }
    let version = header_value(&mut lines, "version")?;
    if version != MODEL_VERSION as usize {
        return Err(Error::Version {
            found: version.min(u32::MAX as usize) as u32,
            supported: MODEL_VERSION,
        });
    }
    let input_dim = header_value(&mut lines, "input_dim")?;
    let memory_dim = header_value(&mut lines, "memory_dim")?;
    let count = header_value(&mut lines, "layers")?;
    let layers = (0..count)
        .map(|i| read_layer(&mut lines, i, &i.to_string()))
        .collect::<Result<Vec<_>>>()?;
    let (n, end) = lines.next()?;
    if end != "end" {
        return Err(bad(n, format!("expected `end`, got `{end}`")));
    }
    if let Ok((n, extra)) = lines.next() {
        return Err(bad(n, format!("trailing content after `end`: `{extra}`")));
    }
    let net = if memory_dim == 0 {
        NetworkSpec::new(layers)?
    } else {
        NetworkSpec::recurrent(layers, memory_dim)?
    };
    if net.input_dim() != input_dim {
        return Err(Error::Shape(format!(
            "header declares input_dim {input_dim} but layer 0 expects {}",
            net.input_dim()
        )));
    }
    Ok(net)
}
