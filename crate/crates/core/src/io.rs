//! Hidden-state dump formats (HSD binary, JSONL) and CSV/JSON reports.
//!
//! HSD layout, all integers little-endian:
//!
//! ```text
//! header  "HSD1" | flags u32 | n_sequences u64 | n_layers u32 | dim u32 | n_classes u32
//! pooled  per sequence: label i64 | L*D f32 (layer-major)
//! tokens  per sequence: label i64 | T u32 | [mask: T+1 bytes] | (T+1)*L*D f32 (token-major, then layer)
//! ```
//!
//! Flag bit 0 selects token storage, bit 1 marks a padding mask. Token 0 is CLS.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{HiddenStateDataset, Storage, TokenSequence};
use crate::error::{Error, Result};
use crate::metrics::MetricCurve;

pub const MAGIC: &[u8; 4] = b"HSD1";
pub const FLAG_TOKENS: u32 = 1;
pub const FLAG_PADDING: u32 = 1 << 1;
const HEADER_LEN: u64 = 28;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.offset(),
                needed: n - (self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let start = self.offset();
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Truncated {
            offset: start,
            needed: usize::MAX,
        })?)?;
        bytes
            .chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinitePayload {
                        offset: start + 4 * i as u64,
                    })
                }
            })
            .collect()
    }
}

pub fn read_hsd(path: impl AsRef<Path>) -> Result<HiddenStateDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_hsd(&bytes)
}

pub fn decode_hsd(bytes: &[u8]) -> Result<HiddenStateDataset> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: magic.try_into().unwrap(),
        });
    }
    let flags = c.u32()?;
    if flags & !(FLAG_TOKENS | FLAG_PADDING) != 0 {
        return Err(Error::InvalidHeader {
            offset: 4,
            reason: format!("unknown flag bits {flags:#x}"),
        });
    }
    let tokens = flags & FLAG_TOKENS != 0;
    let masked = flags & FLAG_PADDING != 0;
    if masked && !tokens {
        return Err(Error::InvalidHeader {
            offset: 4,
            reason: "padding mask requires token storage".into(),
        });
    }
    let n = c.u64()?;
    let n_layers = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let n_classes = c.u32()?;
    for (offset, value, name) in [(16, n_layers, "n_layers"), (20, dim, "dim"), (24, n_classes as usize, "n_classes")] {
        if value == 0 {
            return Err(Error::InvalidHeader {
                offset,
                reason: format!("{name} must be at least 1"),
            });
        }
    }
    debug_assert_eq!(c.offset(), HEADER_LEN);
    let per_token = n_layers * dim;
    // every record needs at least its label and one token
    let min_record = 8 + 4 * per_token as u64;
    if n.saturating_mul(min_record) > (bytes.len() as u64).saturating_sub(HEADER_LEN) {
        return Err(Error::Truncated {
            offset: c.offset(),
            needed: (n.saturating_mul(min_record) - (bytes.len() as u64 - HEADER_LEN)) as usize,
        });
    }
    let n = n as usize;
    let mut labels = Vec::with_capacity(n);
    let read_label = |c: &mut Cursor| -> Result<u32> {
        let offset = c.offset();
        let label = c.i64()?;
        if label < 0 || label >= n_classes as i64 {
            return Err(Error::LabelOutOfRange {
                offset,
                label,
                n_classes,
            });
        }
        Ok(label as u32)
    };
    let ds = if tokens {
        let mut sequences = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(read_label(&mut c)?);
            let t = c.u32()? as usize;
            let padding = if masked {
                Some(c.take(t + 1)?.to_vec())
            } else {
                None
            };
            let states = c.f32s((t + 1) * per_token)?;
            sequences.push(TokenSequence {
                n_tokens: t,
                states,
                padding,
            });
        }
        HiddenStateDataset::tokens(n_layers, dim, n_classes as usize, labels, sequences)?
    } else {
        let mut data = Vec::with_capacity(n * per_token);
        for _ in 0..n {
            labels.push(read_label(&mut c)?);
            data.extend(c.f32s(per_token)?);
        }
        HiddenStateDataset::pooled(n_layers, dim, n_classes as usize, labels, data, None)?
    };
    if c.pos != bytes.len() {
        return Err(Error::InvalidHeader {
            offset: c.offset(),
            reason: format!("{} trailing bytes after the last record", bytes.len() - c.pos),
        });
    }
    Ok(ds)
}

pub fn encode_hsd(ds: &HiddenStateDataset) -> Vec<u8> {
    let mut out = Vec::new();
    let mut flags = 0;
    if ds.is_token_level() {
        flags |= FLAG_TOKENS;
    }
    if ds.has_padding_mask() {
        flags |= FLAG_PADDING;
    }
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(ds.n_sequences() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.n_layers() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.n_classes() as u32).to_le_bytes());
    let put = |out: &mut Vec<u8>, vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    match ds.storage() {
        Storage::Pooled { data, .. } => {
            let per = ds.n_layers() * ds.dim();
            for (i, &y) in ds.labels().iter().enumerate() {
                out.extend_from_slice(&(y as i64).to_le_bytes());
                put(&mut out, &data[i * per..(i + 1) * per]);
            }
        }
        Storage::Tokens { sequences } => {
            for (seq, &y) in sequences.iter().zip(ds.labels()) {
                out.extend_from_slice(&(y as i64).to_le_bytes());
                out.extend_from_slice(&(seq.n_tokens as u32).to_le_bytes());
                if let Some(mask) = &seq.padding {
                    out.extend_from_slice(mask);
                }
                put(&mut out, &seq.states);
            }
        }
    }
    out
}

pub fn write_hsd(ds: &HiddenStateDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_hsd(ds)).map_err(|e| Error::io(path, e))
}

/// Reads pooled states, one `{"label": int, "states": [[f; D]; L]}` per line.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<HiddenStateDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn parse_jsonl(text: &str) -> Result<HiddenStateDataset> {
    let mut shape: Option<(usize, usize)> = None;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Jsonl { line, reason };
        let v: Value = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        let label = v
            .get("label")
            .and_then(Value::as_u64)
            .filter(|&l| l <= u32::MAX as u64)
            .ok_or_else(|| err("\"label\" must be a non-negative integer".into()))?;
        let states = v
            .get("states")
            .and_then(Value::as_array)
            .ok_or_else(|| err("\"states\" must be an array of layers".into()))?;
        let l = states.len();
        let mut row = Vec::new();
        let mut d = None;
        for layer in states {
            let vec = layer
                .as_array()
                .ok_or_else(|| err("each layer must be an array of numbers".into()))?;
            if *d.get_or_insert(vec.len()) != vec.len() {
                return Err(Error::DimensionMismatch {
                    line,
                    expected: format!("D={}", d.unwrap()),
                    found: format!("D={} within the same line", vec.len()),
                });
            }
            for x in vec {
                let x = x.as_f64().ok_or_else(|| err("state entries must be numbers".into()))?;
                let f = x as f32;
                if !f.is_finite() {
                    return Err(err(format!("state value {x} is not finite in binary32")));
                }
                row.push(f);
            }
        }
        let d = d.unwrap_or(0);
        match shape {
            None => {
                if l == 0 || d == 0 {
                    return Err(err("states must have at least one layer and one dimension".into()));
                }
                shape = Some((l, d));
            }
            Some((el, ed)) if (el, ed) != (l, d) => {
                return Err(Error::DimensionMismatch {
                    line,
                    expected: format!("L={el}, D={ed}"),
                    found: format!("L={l}, D={d}"),
                });
            }
            _ => {}
        }
        labels.push(label as u32);
        data.extend(row);
    }
    let (l, d) = shape.ok_or(Error::EmptyDataset)?;
    let k = labels.iter().max().map_or(1, |&m| m as usize + 1);
    HiddenStateDataset::pooled(l, d, k, labels, data, None)
}

/// JSONL rendering of a pooled dataset.
pub fn render_jsonl(ds: &HiddenStateDataset) -> Result<String> {
    let Storage::Pooled { data, .. } = ds.storage() else {
        return Err(Error::InvalidArgument(
            "JSONL holds pooled states only; pool the dataset first".into(),
        ));
    };
    let (l, d) = (ds.n_layers(), ds.dim());
    let mut out = String::new();
    for (i, &y) in ds.labels().iter().enumerate() {
        let states: Vec<&[f32]> = (0..l).map(|j| &data[(i * l + j) * d..][..d]).collect();
        out.push_str(&json!({ "label": y, "states": states }).to_string());
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(ds: &HiddenStateDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_jsonl(ds)?).map_err(|e| Error::io(path, e))
}

/// Auxiliary report cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AuxValue {
    Num(f64),
    Text(String),
}

impl From<f64> for AuxValue {
    fn from(v: f64) -> Self {
        AuxValue::Num(v)
    }
}

impl From<usize> for AuxValue {
    fn from(v: usize) -> Self {
        AuxValue::Num(v as f64)
    }
}

impl From<String> for AuxValue {
    fn from(v: String) -> Self {
        AuxValue::Text(v)
    }
}

impl From<&str> for AuxValue {
    fn from(v: &str) -> Self {
        AuxValue::Text(v.to_string())
    }
}

impl AuxValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AuxValue::Num(v) => Some(*v),
            AuxValue::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// 1-based layer index.
    pub layer: usize,
    pub metric: String,
    pub value: f64,
    pub aux: BTreeMap<String, AuxValue>,
}

impl ReportRow {
    pub fn new(layer: usize, metric: impl Into<String>, value: f64) -> Self {
        ReportRow {
            layer,
            metric: metric.into(),
            value,
            aux: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<AuxValue>) -> Self {
        self.aux.insert(key.to_string(), value.into());
        self
    }
}

/// Rows for every layer of a curve.
pub fn curve_rows(curve: &MetricCurve, metric: &str) -> Vec<ReportRow> {
    curve
        .layers()
        .zip(curve.values())
        .map(|(l, &v)| ReportRow::new(l, metric, v))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// JSON for a `.json` extension, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

/// Shortest round-trip decimal form; non-finite values become `inf`, `-inf`, `nan`.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        let s = format!("{v:?}");
        s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
    }
}

pub fn parse_real(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "nan" => Some(f64::NAN),
        t => t.parse().ok(),
    }
}

fn aux_columns(rows: &[ReportRow]) -> Vec<String> {
    let mut keys: Vec<String> = rows.iter().flat_map(|r| r.aux.keys().cloned()).collect();
    keys.sort();
    keys.dedup();
    keys
}

fn real_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(format_real(v))
    }
}

pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let cols = aux_columns(rows);
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            let mut header = vec!["layer".to_string(), "metric".into(), "value".into()];
            header.extend(cols.iter().cloned());
            w.write_record(&header).expect("write to memory");
            for r in rows {
                let mut rec = vec![r.layer.to_string(), r.metric.clone(), format_real(r.value)];
                rec.extend(cols.iter().map(|c| match r.aux.get(c) {
                    Some(AuxValue::Num(v)) => format_real(*v),
                    Some(AuxValue::Text(t)) => t.clone(),
                    None => String::new(),
                }));
                w.write_record(&rec).expect("write to memory");
            }
            String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 fields")
        }
        ReportFormat::Json => {
            let arr: Vec<Value> = rows
                .iter()
                .map(|r| {
                    let mut obj = serde_json::Map::new();
                    obj.insert("layer".into(), json!(r.layer));
                    obj.insert("metric".into(), json!(r.metric));
                    obj.insert("value".into(), real_json(r.value));
                    if !r.aux.is_empty() {
                        let aux = r
                            .aux
                            .iter()
                            .map(|(k, v)| {
                                let v = match v {
                                    AuxValue::Num(x) => real_json(*x),
                                    AuxValue::Text(t) => json!(t),
                                };
                                (k.clone(), v)
                            })
                            .collect();
                        obj.insert("aux".into(), Value::Object(aux));
                    }
                    Value::Object(obj)
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&arr).expect("serializable");
            s.push('\n');
            s
        }
    }
}

pub fn write_report(rows: &[ReportRow], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_report(rows, format)).map_err(|e| Error::io(path, e))
}

fn report_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Report {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn parse_report_csv(text: &str, path: &Path) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| report_err(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 3 || header[..3] != ["layer", "metric", "value"] {
        return Err(report_err(path, "header must start with layer,metric,value"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| report_err(path, e.to_string()))?;
        let line = i + 2;
        let layer = rec[0]
            .parse()
            .map_err(|_| report_err(path, format!("line {line}: bad layer {:?}", &rec[0])))?;
        let value = parse_real(&rec[2])
            .ok_or_else(|| report_err(path, format!("line {line}: bad value {:?}", &rec[2])))?;
        let mut row = ReportRow::new(layer, &rec[1], value);
        for (k, cell) in header[3..].iter().zip(rec.iter().skip(3)) {
            if cell.is_empty() {
                continue;
            }
            let v = match parse_real(cell) {
                Some(x) => AuxValue::Num(x),
                None => AuxValue::Text(cell.to_string()),
            };
            row.aux.insert(k.clone(), v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn json_real(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => parse_real(s),
        _ => None,
    }
}

pub fn parse_report_json(text: &str, path: &Path) -> Result<Vec<ReportRow>> {
    let v: Value = serde_json::from_str(text).map_err(|e| report_err(path, e.to_string()))?;
    let arr = v.as_array().ok_or_else(|| report_err(path, "expected a JSON array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, obj)| {
            let bad = |what: &str| report_err(path, format!("row {i}: {what}"));
            let layer = obj
                .get("layer")
                .and_then(Value::as_u64)
                .ok_or_else(|| bad("missing layer"))? as usize;
            let metric = obj
                .get("metric")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("missing metric"))?;
            let value = obj.get("value").and_then(json_real).ok_or_else(|| bad("missing value"))?;
            let mut row = ReportRow::new(layer, metric, value);
            if let Some(aux) = obj.get("aux").and_then(Value::as_object) {
                for (k, v) in aux {
                    let a = match v {
                        Value::Number(n) => AuxValue::Num(n.as_f64().ok_or_else(|| bad("bad aux"))?),
                        Value::String(s) => match parse_real(s) {
                            Some(x) if !x.is_finite() => AuxValue::Num(x),
                            _ => AuxValue::Text(s.clone()),
                        },
                        _ => return Err(bad("aux values must be numbers or strings")),
                    };
                    row.aux.insert(k.clone(), a);
                }
            }
            Ok(row)
        })
        .collect()
}

/// Reads a report written by [`write_report`], choosing the parser by extension.
pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match ReportFormat::from_path(path) {
        ReportFormat::Csv => parse_report_csv(&text, path),
        ReportFormat::Json => parse_report_json(&text, path),
    }
}

/// Rebuilds a curve from report rows. With several metrics present, `metric`
/// must pick one. Layers must cover `1..=L` exactly once.
pub fn curve_from_rows(rows: &[ReportRow], metric: Option<&str>, path: &Path) -> Result<MetricCurve> {
    let mut names: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let chosen = match (metric, names.as_slice()) {
        (Some(m), _) => m,
        (None, [only]) => only,
        (None, []) => return Err(report_err(path, "no rows")),
        (None, _) => {
            return Err(report_err(
                path,
                format!("several metrics present ({}); pick one", names.join(", ")),
            ))
        }
    };
    let mut by_layer: BTreeMap<usize, f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == chosen) {
        if by_layer.insert(r.layer, r.value).is_some() {
            return Err(report_err(path, format!("layer {} appears twice", r.layer)));
        }
    }
    if by_layer.is_empty() {
        return Err(report_err(path, format!("no rows for metric {chosen:?}")));
    }
    let expected: Vec<usize> = (1..=by_layer.len()).collect();
    if by_layer.keys().copied().collect::<Vec<_>>() != expected {
        return Err(report_err(path, "layers must be exactly 1..=L"));
    }
    MetricCurve::try_new(by_layer.into_values().collect())
        .map_err(|e| report_err(path, e.to_string()))
}
