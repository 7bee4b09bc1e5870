//! Versioned text checkpoints for encoder and GAT parameters.
//!
//! ```text
//! multictx-checkpoint 1 <kind>
//! meta <key> <value>
//! tensor <name> <rows> <cols>
//! <rows * cols values on one line>
//! ```
//! Values are written in shortest round-trip form, so reloading is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use multictx_core::linalg::Mat;
use multictx_core::ssgat::{Activation, GatLayer, SsgatParams};
use multictx_core::EncoderParams;

use crate::error::{Error, Result};
use crate::formats::{read_text, write_text};

const MAGIC: &str = "multictx-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    /// In file order.
    pub tensors: Vec<(String, Mat)>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Checkpoint {
        Checkpoint {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION} {}\n", self.kind);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, m) in &self.tensors {
            let _ = writeln!(out, "tensor {name} {} {}", m.rows, m.cols);
            let values: Vec<String> = m.data.iter().map(|x| x.to_string()).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Checkpoint> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty checkpoint"))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        let kind = match head.as_slice() {
            [MAGIC, v, kind] => {
                if v.parse::<u32>().ok() != Some(VERSION) {
                    return Err(Error::parse(path, 1, format!("unsupported checkpoint version {v}")));
                }
                kind.to_string()
            }
            _ => return Err(Error::parse(path, 1, "not a multictx checkpoint")),
        };
        let mut ck = Checkpoint::new(&kind);
        while let Some((line, l)) = lines.next() {
            let mut parts = l.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some("meta"), Some(rest)) => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                (Some("tensor"), Some(rest)) => {
                    let f: Vec<&str> = rest.split_whitespace().collect();
                    let [name, r, c] = f.as_slice() else {
                        return Err(Error::parse(path, line, "expected: tensor <name> <rows> <cols>"));
                    };
                    let (rows, cols) = match (r.parse::<usize>(), c.parse::<usize>()) {
                        (Ok(r), Ok(c)) => (r, c),
                        _ => return Err(Error::parse(path, line, "bad tensor shape")),
                    };
                    let (vline, values) = lines
                        .next()
                        .ok_or_else(|| Error::parse(path, line + 1, format!("missing values for tensor {name}")))?;
                    let data: Vec<f64> = values
                        .split_whitespace()
                        .map(|x| x.parse::<f64>().ok().filter(|v| v.is_finite()))
                        .collect::<Option<_>>()
                        .ok_or_else(|| Error::parse(path, vline, format!("bad value in tensor {name}")))?;
                    if data.len() != rows * cols {
                        return Err(Error::parse(
                            path,
                            vline,
                            format!("tensor {name}: {} values for shape {rows}x{cols}", data.len()),
                        ));
                    }
                    ck.tensors.push((name.to_string(), Mat::from_vec(rows, cols, data)));
                }
                _ if l.trim().is_empty() => {}
                _ => return Err(Error::parse(path, line, format!("unexpected line {l:?}"))),
            }
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::parse(&read_text(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    fn tensor(&self, name: &str, path: &Path) -> Result<&Mat> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::format(path, format!("checkpoint has no tensor {name}")))
    }

    fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::format(path, format!("expected a {kind} checkpoint, found {}", self.kind)))
        }
    }
}

fn row(v: &[f64]) -> Mat {
    Mat::from_vec(1, v.len(), v.to_vec())
}

pub fn encoder_checkpoint(params: &EncoderParams, base: &str) -> Checkpoint {
    let mut ck = Checkpoint::new("encoder");
    ck.meta.insert("base".into(), base.to_string());
    ck.tensors = vec![
        ("w1".into(), params.w1.clone()),
        ("b1".into(), row(&params.b1)),
        ("w2".into(), params.w2.clone()),
        ("b2".into(), row(&params.b2)),
    ];
    ck
}

pub fn encoder_from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<EncoderParams> {
    ck.expect_kind("encoder", path)?;
    let params = EncoderParams {
        w1: ck.tensor("w1", path)?.clone(),
        b1: ck.tensor("b1", path)?.data.clone(),
        w2: ck.tensor("w2", path)?.clone(),
        b2: ck.tensor("b2", path)?.data.clone(),
    };
    params.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(params)
}

fn activation_name(a: Activation) -> String {
    match a {
        Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
        Activation::Identity => "identity".into(),
    }
}

fn parse_activation(s: &str) -> Option<Activation> {
    match s.split_once(':') {
        Some(("leaky_relu", slope)) => slope.parse().ok().map(Activation::LeakyRelu),
        None if s == "identity" => Some(Activation::Identity),
        _ => None,
    }
}

pub fn ssgat_checkpoint(params: &SsgatParams) -> Checkpoint {
    let mut ck = Checkpoint::new("ssgat");
    ck.meta.insert("layers".into(), params.layers.len().to_string());
    for (i, layer) in params.layers.iter().enumerate() {
        ck.meta.insert(format!("layer{i}.heads"), layer.heads().to_string());
        ck.meta.insert(format!("layer{i}.concat"), layer.concat.to_string());
        ck.meta.insert(format!("layer{i}.activation"), activation_name(layer.activation));
        for (h, w) in layer.weights.iter().enumerate() {
            ck.tensors.push((format!("layer{i}.head{h}"), w.clone()));
        }
        ck.tensors.push((format!("layer{i}.bias"), row(&layer.bias)));
    }
    ck
}

pub fn ssgat_from_checkpoint(ck: &Checkpoint, path: &Path) -> Result<SsgatParams> {
    ck.expect_kind("ssgat", path)?;
    let meta = |key: &str| {
        ck.meta
            .get(key)
            .ok_or_else(|| Error::format(path, format!("checkpoint has no meta {key}")))
    };
    let bad = |key: &str| Error::format(path, format!("bad meta {key}"));
    let n: usize = meta("layers")?.parse().map_err(|_| bad("layers"))?;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let key = |s: &str| format!("layer{i}.{s}");
        let heads: usize = meta(&key("heads"))?.parse().map_err(|_| bad(&key("heads")))?;
        let concat: bool = meta(&key("concat"))?.parse().map_err(|_| bad(&key("concat")))?;
        let activation = parse_activation(meta(&key("activation"))?).ok_or_else(|| bad(&key("activation")))?;
        let weights = (0..heads)
            .map(|h| ck.tensor(&key(&format!("head{h}")), path).cloned())
            .collect::<Result<Vec<_>>>()?;
        let bias = ck.tensor(&key("bias"), path)?.data.clone();
        layers.push(GatLayer {
            weights,
            bias,
            concat,
            activation,
        });
    }
    let params = SsgatParams { layers };
    params.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(params)
}
