//! File formats.
//!
//! - CSPN-MAP: an ASCII header line `CSPN-MAP 1 C H W`, a line with the `C`
//!   class ids, then `C*H*W` little-endian `f64` values, channel-major and
//!   row-major within a channel.
//! - Masks: binary portable graymap (P5), gray value = class id.
//! - Constraints: a JSON object mapping class-id strings to sizes.
//! - Checkpoints: magic `CSPNMODL1`, layer dimensions, then the parameters as
//!   little-endian `f64`.
//! - Metrics: one JSON object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layer::SizeConstraints;
use crate::tensor::{ChannelStack, LabelMask};
use crate::toy::ToyModel;
use crate::ClassId;

pub const MAP_MAGIC: &str = "CSPN-MAP";
pub const MAP_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 9] = b"CSPNMODL1";

/// Header lines longer than this are rejected rather than buffered.
const MAX_HEADER_LINE: u64 = 4096;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_header_line<R: BufRead>(r: &mut R, what: &str) -> Result<String> {
    let mut line = String::new();
    let n = r.take(MAX_HEADER_LINE).read_line(&mut line)?;
    if n == 0 || !line.ends_with('\n') {
        return Err(format_err(format!("truncated or oversized {what} line")));
    }
    line.pop();
    Ok(line)
}

fn parse_field<T: std::str::FromStr>(token: Option<&str>, name: &str) -> Result<T> {
    token
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| format_err(format!("bad or missing {name} in header")))
}

pub fn write_map<W: Write>(mut w: W, stack: &ChannelStack) -> Result<()> {
    writeln!(
        w,
        "{MAP_MAGIC} {MAP_VERSION} {} {} {}",
        stack.channels(),
        stack.height(),
        stack.width()
    )?;
    let ids: Vec<String> = stack.class_ids().iter().map(|k| k.to_string()).collect();
    writeln!(w, "{}", ids.join(" "))?;
    for v in stack.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_map<R: Read>(r: R) -> Result<ChannelStack> {
    let mut r = BufReader::new(r);
    let header = read_header_line(&mut r, "header")?;
    let mut tokens = header.split(' ');
    if tokens.next() != Some(MAP_MAGIC) {
        return Err(format_err("not a CSPN-MAP file"));
    }
    let version: u32 = parse_field(tokens.next(), "version")?;
    if version != MAP_VERSION {
        return Err(format_err(format!("unsupported CSPN-MAP version {version}")));
    }
    let c: usize = parse_field(tokens.next(), "channel count")?;
    let h: usize = parse_field(tokens.next(), "height")?;
    let w: usize = parse_field(tokens.next(), "width")?;
    if tokens.next().is_some() {
        return Err(format_err("trailing fields in header"));
    }

    let id_line = read_header_line(&mut r, "class id")?;
    let ids = id_line
        .split_whitespace()
        .map(|t| {
            t.parse::<ClassId>()
                .map_err(|_| format_err(format!("bad class id {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ids.len() != c {
        return Err(format_err(format!(
            "header declares {c} channels but lists {} ids",
            ids.len()
        )));
    }

    let len = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| format_err("dimensions overflow"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(format_err(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            len * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    ChannelStack::new(ids, h, w, data)
}

pub fn save_map(path: impl AsRef<Path>, stack: &ChannelStack) -> Result<()> {
    write_map(BufWriter::new(File::create(path)?), stack)
}

pub fn load_map(path: impl AsRef<Path>) -> Result<ChannelStack> {
    read_map(File::open(path)?)
}

pub fn write_pgm<W: Write>(mut w: W, mask: &LabelMask) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    w.write_all(mask.labels())?;
    w.flush()?;
    Ok(())
}

/// Reads a P5 graymap with maxval at most 255. Comments are not supported.
pub fn read_pgm<R: Read>(r: R) -> Result<LabelMask> {
    let mut bytes = Vec::new();
    BufReader::new(r).read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated PGM header"));
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P5" {
        return Err(format_err("not a binary PGM (P5)"));
    }
    let mut number = |name: &str| -> Result<usize> {
        let t = token()?;
        parse_field(std::str::from_utf8(t).ok(), name)
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format_err(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[pos + 1.min(bytes.len() - pos)..];
    if raster.len() != width * height {
        return Err(format_err(format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            width * height
        )));
    }
    LabelMask::new(height, width, raster.to_vec())
}

pub fn save_pgm(path: impl AsRef<Path>, mask: &LabelMask) -> Result<()> {
    write_pgm(BufWriter::new(File::create(path)?), mask)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<LabelMask> {
    read_pgm(File::open(path)?)
}

/// Serializes constraints with keys in numeric class order.
struct ConstraintsJson<'a>(&'a SizeConstraints);

impl Serialize for ConstraintsJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0.iter() {
            map.serialize_entry(&k.to_string(), &v)?;
        }
        map.end()
    }
}

pub fn constraints_to_json(constraints: &SizeConstraints) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ConstraintsJson(constraints))?)
}

pub fn constraints_from_json(text: &str) -> Result<SizeConstraints> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| format_err("constraints must be a JSON object"))?;
    let mut out = SizeConstraints::new();
    for (key, v) in obj {
        let class: ClassId = key.parse().map_err(|_| format_err(format!("bad class id {key:?}")))?;
        let size = v
            .as_f64()
            .ok_or_else(|| format_err(format!("size for class {class} is not a number")))?;
        out.insert(class, size)?;
    }
    Ok(out)
}

pub fn save_constraints(path: impl AsRef<Path>, constraints: &SizeConstraints) -> Result<()> {
    let mut text = constraints_to_json(constraints)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_constraints(path: impl AsRef<Path>) -> Result<SizeConstraints> {
    constraints_from_json(&std::fs::read_to_string(path)?)
}

/// Layer shapes as `(out_channels, in_channels, kernel)`.
fn layer_dims(model: &ToyModel) -> [[u32; 3]; 3] {
    let f = model.features() as u32;
    let c = model.classes() as u32;
    [[f, 3, 3], [f, f, 3], [c, f, 1]]
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &ToyModel) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for layer in layer_dims(model) {
        for d in layer {
            w.write_all(&d.to_le_bytes())?;
        }
    }
    for v in model.flat_params() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<ToyModel> {
    let mut bytes = Vec::new();
    BufReader::new(r).read_to_end(&mut bytes)?;
    let rest = bytes
        .strip_prefix(CHECKPOINT_MAGIC.as_slice())
        .ok_or_else(|| format_err("not a CSPNMODL1 checkpoint"))?;
    if rest.len() < 36 {
        return Err(format_err("truncated checkpoint header"));
    }
    let (dims, payload) = rest.split_at(36);
    let dims: Vec<u32> = dims
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("chunk of 4")))
        .collect();
    let (features, classes) = (dims[0] as usize, dims[6] as usize);
    let mut model = ToyModel::zeros(features, classes);
    let expected = layer_dims(&model).concat();
    if dims != expected || features == 0 || classes == 0 {
        return Err(format_err("checkpoint layer dimensions are inconsistent"));
    }
    if payload.len() != model.num_params() * 8 {
        return Err(format_err(format!(
            "checkpoint has {} parameter bytes, expected {}",
            payload.len(),
            model.num_params() * 8
        )));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    model.set_flat_params(&flat)?;
    Ok(model)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &ToyModel) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ToyModel> {
    read_checkpoint(File::open(path)?)
}

/// Append `record` as one JSON line.
pub fn write_json_line<W: Write, T: Serialize>(mut w: W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut w, record)?;
    w.write_all(b"\n")?;
    Ok(())
}
