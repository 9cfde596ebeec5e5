//! Raster file formats.
//!
//! * `.flo` (Middlebury): magic `202021.25` as little-endian f32, i32 width,
//!   i32 height, then row-major interleaved f32 `(u, v)`. Invalid flow is written
//!   as `1e10` and read back as NaN for any component above `1e9`.
//! * PFM: `Pf` (1 channel) or `PF` (3 channels), `width height`, scale `-1`
//!   (little-endian), f32 rows stored bottom-to-top. NaN marks invalid pixels.
//! * PGM16: `P5`, maxval 65535, big-endian u16. 65535 is the invalid label.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::field::{DenseField, FieldKind, LABEL_INVALID};
use crate::{Error, Result};

const FLO_MAGIC: f32 = 202021.25;
const FLO_UNKNOWN: f32 = 1e10;
const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;

pub fn write_flo<W: Write>(mut w: W, flow: &DenseField) -> Result<()> {
    if flow.kind() != FieldKind::Flow {
        return Err(Error::InvalidInput(format!("cannot write {:?} as .flo", flow.kind())));
    }
    let mut buf = Vec::with_capacity(12 + flow.data().len() * 4);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    buf.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for &v in flow.data() {
        let v = v as f32;
        let v = if v.is_finite() { v } else { FLO_UNKNOWN };
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_flo<R: Read>(mut r: R) -> Result<DenseField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(Error::Format("truncated .flo header".into()));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(Error::Format("bad .flo magic".into()));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 || height <= 0 {
        return Err(Error::Format(format!("bad .flo dimensions {width}x{height}")));
    }
    let n = width as usize * height as usize * 2;
    if bytes.len() != 12 + 4 * n {
        return Err(Error::Format(format!(
            ".flo payload has {} bytes, expected {}",
            bytes.len() - 12,
            4 * n
        )));
    }
    let data = (0..n)
        .map(|k| {
            let v = f32::from_le_bytes(word(12 + 4 * k));
            if v.abs() > FLO_UNKNOWN_THRESHOLD || v.is_nan() {
                f64::NAN
            } else {
                v as f64
            }
        })
        .collect();
    DenseField::from_data(width as usize, height as usize, FieldKind::Flow, data)
}

pub fn write_pfm<W: Write>(mut w: W, field: &DenseField) -> Result<()> {
    let tag = match field.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::InvalidInput(format!("PFM cannot hold {c} channels"))),
    };
    let (width, height) = field.dims();
    let c = field.channels();
    let mut buf = format!("{tag}\n{width} {height}\n-1\n").into_bytes();
    buf.reserve(field.data().len() * 4);
    for row in (0..height).rev() {
        let start = row * width * c;
        for &v in &field.data()[start..start + width * c] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a PFM; the returned field gets `kind`, which must match the channel count.
pub fn read_pfm<R: Read>(mut r: R, kind: FieldKind) -> Result<DenseField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (tokens, offset) = header_tokens(&bytes, 4)?;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(Error::Format(format!("bad PFM tag {t:?}"))),
    };
    if channels != kind.channels() {
        return Err(Error::Format(format!(
            "PFM has {channels} channels but {kind:?} needs {}",
            kind.channels()
        )));
    }
    let width = parse_dim(&tokens[1])?;
    let height = parse_dim(&tokens[2])?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale {:?}", tokens[3])))?;
    if scale == 0.0 {
        return Err(Error::Format("PFM scale must be non-zero".into()));
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let payload = &bytes[offset..];
    if payload.len() != 4 * n {
        return Err(Error::Format(format!(
            "PFM payload has {} bytes, expected {}",
            payload.len(),
            4 * n
        )));
    }
    let mut data = vec![0.0; n];
    let row_len = width * channels;
    for (file_row, chunk) in payload.chunks_exact(4 * row_len).enumerate() {
        let row = height - 1 - file_row;
        for (k, b) in chunk.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            data[row * row_len + k] = v as f64;
        }
    }
    DenseField::from_data(width, height, kind, data)
}

pub fn write_pgm16<W: Write>(mut w: W, labels: &DenseField) -> Result<()> {
    if labels.kind() != FieldKind::Label {
        return Err(Error::InvalidInput(format!("cannot write {:?} as PGM16", labels.kind())));
    }
    let (width, height) = labels.dims();
    let mut buf = format!("P5\n{width} {height}\n65535\n").into_bytes();
    buf.reserve(labels.len() * 2);
    for idx in 0..labels.len() {
        let v = match labels.label(idx) {
            Some(id) if id < LABEL_INVALID => id as u16,
            Some(id) => {
                return Err(Error::InvalidInput(format!("label {id} does not fit in PGM16")))
            }
            None => LABEL_INVALID as u16,
        };
        buf.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_pgm16<R: Read>(mut r: R) -> Result<DenseField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (tokens, offset) = header_tokens(&bytes, 4)?;
    if tokens[0] != "P5" {
        return Err(Error::Format(format!("bad PGM tag {:?}", tokens[0])));
    }
    let width = parse_dim(&tokens[1])?;
    let height = parse_dim(&tokens[2])?;
    if tokens[3] != "65535" {
        return Err(Error::Format(format!("expected maxval 65535, got {}", tokens[3])));
    }
    let payload = &bytes[offset..];
    if payload.len() != 2 * width * height {
        return Err(Error::Format("PGM payload size mismatch".into()));
    }
    let data = payload
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64)
        .collect();
    DenseField::from_data(width, height, FieldKind::Label, data)
}

/// Splits `count` whitespace-separated header tokens; returns them and the payload
/// offset (one whitespace byte after the last token).
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(Error::Format("missing payload".into()));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(s: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Format(format!("bad dimension {s:?}"))),
    }
}

pub fn save_flo(path: impl AsRef<Path>, flow: &DenseField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_flo(&mut w, flow)?;
    w.flush()?;
    Ok(())
}

pub fn load_flo(path: impl AsRef<Path>) -> Result<DenseField> {
    read_flo(BufReader::new(File::open(path)?))
}

pub fn save_pfm(path: impl AsRef<Path>, field: &DenseField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pfm(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load_pfm(path: impl AsRef<Path>, kind: FieldKind) -> Result<DenseField> {
    read_pfm(BufReader::new(File::open(path)?), kind)
}

pub fn save_pgm16(path: impl AsRef<Path>, labels: &DenseField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm16(&mut w, labels)?;
    w.flush()?;
    Ok(())
}

pub fn load_pgm16(path: impl AsRef<Path>) -> Result<DenseField> {
    read_pgm16(BufReader::new(File::open(path)?))
}
