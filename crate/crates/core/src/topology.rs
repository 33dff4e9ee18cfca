//! Workload topology files and convolution lowering.
//!
//! Two CSV layouts are accepted:
//! GEMM `Layer Name, M, N, K, Sparsity,` and convolution
//! `Layer name, IFMAP Height, IFMAP Width, Filter Height, Filter Width, Channels, Num Filter, Strides,`
//! (optionally followed by a sparsity column as well).

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    /// Decide from the header's column count.
    Auto,
    Gemm,
    Conv,
}

impl FromStr for TopologyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(TopologyKind::Auto),
            "gemm" => Ok(TopologyKind::Gemm),
            "conv" => Ok(TopologyKind::Conv),
            other => Err(format!("unknown topology kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerShape {
    Conv { ifmap_h: u64, ifmap_w: u64, filt_h: u64, filt_w: u64, channels: u64, num_filters: u64, stride: u64 },
    Gemm { m: u64, n: u64, k: u64 },
}

/// N nonzeros in every block of M consecutive elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NmRatio {
    pub n: u64,
    pub m: u64,
}

impl NmRatio {
    pub fn dense(m: u64) -> Self {
        NmRatio { n: m, m }
    }
}

impl fmt::Display for NmRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

impl FromStr for NmRatio {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (n, m) = s.trim().split_once(':').ok_or_else(|| format!("sparsity `{s}` is not of the form N:M"))?;
        let n: u64 = n.trim().parse().map_err(|_| format!("sparsity `{s}`: N is not an integer"))?;
        let m: u64 = m.trim().parse().map_err(|_| format!("sparsity `{s}`: M is not an integer"))?;
        if n == 0 || m == 0 {
            return Err(format!("sparsity `{s}`: N and M must be >= 1"));
        }
        if n > m {
            return Err(format!("sparsity `{s}`: N must not exceed M"));
        }
        Ok(NmRatio { n, m })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub shape: LayerShape,
    pub sparsity: Option<NmRatio>,
}

/// Output is M x N with reduction depth K.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GemmOp {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub source_layer: String,
}

impl GemmOp {
    pub fn new(m: u64, n: u64, k: u64) -> Self {
        GemmOp { m, n, k, source_layer: String::new() }
    }

    pub fn macs(&self) -> u64 {
        self.m * self.n * self.k
    }
}

impl LayerSpec {
    pub fn to_gemm(&self) -> Result<GemmOp> {
        match self.shape {
            LayerShape::Gemm { m, n, k } => Ok(GemmOp { m, n, k, source_layer: self.name.clone() }),
            LayerShape::Conv { .. } => lower_conv_to_gemm(self),
        }
    }
}

/// im2col lowering: one GEMM row per output pixel, one column per filter.
pub fn lower_conv_to_gemm(layer: &LayerSpec) -> Result<GemmOp> {
    let LayerShape::Conv { ifmap_h, ifmap_w, filt_h, filt_w, channels, num_filters, stride } = layer.shape else {
        return Err(SimError::validation(format!("layer `{}` is not a convolution", layer.name)));
    };
    if filt_h > ifmap_h || filt_w > ifmap_w {
        return Err(SimError::validation(format!(
            "layer `{}`: filter {filt_h}x{filt_w} is larger than ifmap {ifmap_h}x{ifmap_w}",
            layer.name
        )));
    }
    let out_h = (ifmap_h - filt_h) / stride + 1;
    let out_w = (ifmap_w - filt_w) / stride + 1;
    Ok(GemmOp { m: out_h * out_w, n: num_filters, k: filt_h * filt_w * channels, source_layer: layer.name.clone() })
}

fn parse_dim(line: usize, field: &str, what: &str) -> Result<u64> {
    let v: u64 = field.parse().map_err(|_| SimError::parse(line, format!("{what}: `{field}` is not a non-negative integer")))?;
    if v == 0 {
        return Err(SimError::validation(format!("line {line}: {what} must be >= 1")));
    }
    Ok(v)
}

fn parse_sparsity(line: usize, field: Option<&str>) -> Result<Option<NmRatio>> {
    match field {
        None | Some("") => Ok(None),
        Some(tok) => tok.parse::<NmRatio>().map(Some).map_err(|e| SimError::parse(line, e)),
    }
}

pub fn parse_topology(text: &str, kind: TopologyKind) -> Result<Vec<LayerSpec>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let header_cols = reader.headers()?.iter().filter(|h| !h.is_empty()).count();
    if header_cols == 0 {
        return Err(SimError::parse(1, "topology header row is missing"));
    }
    let kind = match kind {
        TopologyKind::Auto if header_cols <= 5 => TopologyKind::Gemm,
        TopologyKind::Auto => TopologyKind::Conv,
        k => k,
    };
    let dims_needed = if kind == TopologyKind::Gemm { 3 } else { 7 };

    let mut layers = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut fields: Vec<&str> = record.iter().collect();
        while fields.last() == Some(&"") {
            fields.pop();
        }
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 1 + dims_needed {
            return Err(SimError::parse(line, format!("expected {} columns, found {}", 1 + dims_needed, fields.len())));
        }
        if fields.len() > 2 + dims_needed {
            return Err(SimError::parse(line, format!("too many columns ({})", fields.len())));
        }
        let name = fields[0].to_string();
        let d: Vec<u64> = fields[1..=dims_needed]
            .iter()
            .enumerate()
            .map(|(i, f)| parse_dim(line, f, &format!("column {}", i + 2)))
            .collect::<Result<_>>()?;
        let shape = if kind == TopologyKind::Gemm {
            LayerShape::Gemm { m: d[0], n: d[1], k: d[2] }
        } else {
            LayerShape::Conv {
                ifmap_h: d[0],
                ifmap_w: d[1],
                filt_h: d[2],
                filt_w: d[3],
                channels: d[4],
                num_filters: d[5],
                stride: d[6],
            }
        };
        let sparsity = parse_sparsity(line, fields.get(1 + dims_needed).copied())?;
        layers.push(LayerSpec { name, shape, sparsity });
    }
    Ok(layers)
}
