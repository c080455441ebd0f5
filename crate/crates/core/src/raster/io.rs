use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeoTransform, Raster};
use crate::error::{Error, Result};

const DSRAST_MAGIC: &[u8; 8] = b"DSRAST01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    Dsrast,
    Pfm,
    Pgm,
}

impl RasterFormat {
    /// Guess the format from a file extension, defaulting to DSRAST.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(e) if e == "pfm" => RasterFormat::Pfm,
            Some(e) if e == "pgm" => RasterFormat::Pgm,
            _ => RasterFormat::Dsrast,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DsrastHeader {
    width: u32,
    height: u32,
    channels: u32,
    dtype: String,
    nodata: Option<f64>,
    geotransform: Option<[f64; 6]>,
    crs: Option<String>,
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::UnknownMagic(_) => Error::UnknownMagic(path.display().to_string()),
        other => other,
    })
}

pub fn write_raster(raster: &Raster, path: impl AsRef<Path>, format: RasterFormat) -> Result<()> {
    let bytes = encode(raster, format)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Decodes any supported format, detected by magic bytes.
pub fn decode(bytes: &[u8]) -> Result<Raster> {
    if bytes.starts_with(DSRAST_MAGIC) {
        decode_dsrast(bytes)
    } else if bytes.starts_with(b"Pf") || bytes.starts_with(b"PF") {
        decode_pfm(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else {
        Err(Error::UnknownMagic("<memory>".into()))
    }
}

pub fn encode(raster: &Raster, format: RasterFormat) -> Result<Vec<u8>> {
    match format {
        RasterFormat::Dsrast => Ok(encode_dsrast(raster)),
        RasterFormat::Pfm => encode_pfm(raster),
        RasterFormat::Pgm => encode_pgm(raster),
    }
}

fn decode_dsrast(bytes: &[u8]) -> Result<Raster> {
    let len_bytes = bytes
        .get(8..12)
        .ok_or_else(|| Error::TruncatedFile("dsrast header length".into()))?;
    let n = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    let json = bytes
        .get(12..12 + n)
        .ok_or_else(|| Error::TruncatedFile("dsrast header".into()))?;
    let header: DsrastHeader = serde_json::from_slice(json)
        .map_err(|e| Error::HeaderFieldMissing(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(Error::HeaderFieldMissing(format!("unsupported dtype {}", header.dtype)));
    }
    let count = header.width as usize * header.height as usize * header.channels as usize;
    let body = &bytes[12 + n..];
    if body.len() < count * 4 {
        return Err(Error::TruncatedFile(format!(
            "expected {} sample bytes, found {}",
            count * 4,
            body.len()
        )));
    }
    let data = body[..count * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut raster = Raster::new(header.width, header.height, header.channels, data)?
        .with_nodata_sentinel(header.nodata.map(|v| v as f32));
    if let Some(gt) = header.geotransform {
        raster = raster.with_geotransform(GeoTransform(gt))?;
    }
    if let Some(crs) = header.crs {
        raster = raster.with_crs(crs);
    }
    Ok(raster)
}

fn encode_dsrast(raster: &Raster) -> Vec<u8> {
    let header = DsrastHeader {
        width: raster.width(),
        height: raster.height(),
        channels: raster.channels(),
        dtype: "f32".into(),
        nodata: raster.nodata_sentinel().map(|v| v as f64),
        geotransform: raster.geotransform().map(|g| g.0),
        crs: raster.crs().map(str::to_owned),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let sentinel = raster.nodata_sentinel();
    let mut out = Vec::with_capacity(12 + json.len() + raster.data().len() * 4);
    out.extend_from_slice(DSRAST_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &v in raster.data() {
        let v = match sentinel {
            Some(s) if v.is_nan() => s,
            _ => v,
        };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Splits off `count` whitespace-separated header tokens; the single
/// whitespace byte after the last token is consumed too.
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
            return Err(Error::TruncatedFile("header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(Error::TruncatedFile("header".into()));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(tok: &str, name: &str) -> Result<u32> {
    tok.parse()
        .map_err(|_| Error::HeaderFieldMissing(format!("{name}: {tok:?}")))
}

fn decode_pfm(bytes: &[u8]) -> Result<Raster> {
    let (tok, start) = header_tokens(bytes, 4)?;
    let channels = match tok[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(Error::UnknownMagic("pfm".into())),
    };
    let width = parse_dim(&tok[1], "width")?;
    let height = parse_dim(&tok[2], "height")?;
    let scale: f64 = tok[3]
        .parse()
        .map_err(|_| Error::HeaderFieldMissing(format!("scale: {:?}", tok[3])))?;
    let little = scale < 0.0;
    let (w, h, c) = (width as usize, height as usize, channels as usize);
    let body = &bytes[start..];
    if body.len() < w * h * c * 4 {
        return Err(Error::TruncatedFile("pfm samples".into()));
    }
    let mut data = vec![0.0f32; w * h * c];
    for (i, chunk) in body[..w * h * c * 4].chunks_exact(4).enumerate() {
        let arr: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(arr) } else { f32::from_be_bytes(arr) };
        // rows are stored bottom-up
        let file_row = i / (w * c);
        let rest = i % (w * c);
        let row = h - 1 - file_row;
        // stereo benchmarks mark invalid disparities with infinity
        data[row * w * c + rest] = if v.is_infinite() { f32::NAN } else { v };
    }
    Raster::new(width, height, channels, data)
}

fn encode_pfm(raster: &Raster) -> Result<Vec<u8>> {
    let tag = match raster.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::RangeError(format!("pfm needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", raster.width(), raster.height()).into_bytes();
    let h = raster.height() as usize;
    for row in (0..h).rev() {
        for &v in raster.row(row) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_pgm(bytes: &[u8]) -> Result<Raster> {
    let (tok, start) = header_tokens(bytes, 4)?;
    let width = parse_dim(&tok[1], "width")?;
    let height = parse_dim(&tok[2], "height")?;
    let maxval = parse_dim(&tok[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::HeaderFieldMissing(format!("maxval {maxval}")));
    }
    let n = width as usize * height as usize;
    let body = &bytes[start..];
    let data: Vec<f32> = if maxval < 256 {
        if body.len() < n {
            return Err(Error::TruncatedFile("pgm samples".into()));
        }
        let k = 255.0 / maxval as f32;
        body[..n].iter().map(|&b| b as f32 * k).collect()
    } else {
        if body.len() < 2 * n {
            return Err(Error::TruncatedFile("pgm samples".into()));
        }
        let k = 255.0 / maxval as f32;
        body[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * k)
            .collect()
    };
    Raster::new(width, height, 1, data)
}

fn encode_pgm(raster: &Raster) -> Result<Vec<u8>> {
    if raster.channels() != 1 {
        return Err(Error::RangeError("pgm needs a single channel".into()));
    }
    let mut out = format!("P5\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    for &v in raster.data() {
        if !(0.0..=255.0).contains(&v) {
            return Err(Error::RangeError(format!("pgm sample {v} outside [0,255]")));
        }
        out.push(v.round() as u8);
    }
    Ok(out)
}
