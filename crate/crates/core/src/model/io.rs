//! `GHSM` model files.
//!
//! Layout: magic `GHSM`, `u32` little-endian header length, UTF-8 JSON
//! header, then every parameter blob as little-endian `f32` in build order
//! (conv kernels `[out][in][kh][kw]`, dense weights `[out][in]`).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, Model, Network, ParamCount};

pub const MODEL_MAGIC: &[u8; 4] = b"GHSM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub zone_id: String,
    pub seed: u64,
    pub epochs: u32,
    pub normalization_divisor: f64,
    pub arch: ArchitectureConfig,
    pub params: ParamCount,
    pub blobs: Vec<BlobInfo>,
}

impl ModelHeader {
    fn payload_len(&self) -> usize {
        self.blobs.iter().map(|b| b.len).sum()
    }
}

fn header_for(model: &Model) -> ModelHeader {
    ModelHeader {
        format_version: MODEL_VERSION,
        zone_id: model.zone_id.clone(),
        seed: model.seed,
        epochs: model.epochs,
        normalization_divisor: model.arch.normalization_divisor,
        arch: model.arch.clone(),
        params: model.net.enumerate_params(),
        blobs: model
            .net
            .blobs()
            .into_iter()
            .map(|(name, _, v)| BlobInfo { name: name.to_string(), len: v.len() })
            .collect(),
    }
}

pub fn write_model<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&header_for(model))?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::config("model header too large"))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(4 * model.net.enumerate_params().total());
    for (_, _, values) in model.net.blobs() {
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads the exact byte count or reports the offset where input ran out.
fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::format(
                    offset + filled as u64,
                    format!("truncated {what}: expected {} bytes, found {filled}", buf.len()),
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Parses magic and header, leaving the reader at the first parameter byte.
fn read_header_from<R: Read>(r: &mut R) -> Result<(ModelHeader, u64)> {
    let mut magic = [0u8; 4];
    read_exact_at(r, &mut magic, 0, "magic")?;
    if &magic != MODEL_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"GHSM\"")));
    }
    let mut len = [0u8; 4];
    read_exact_at(r, &mut len, 4, "header length")?;
    let len = u32::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    read_exact_at(r, &mut json, 8, "header")?;
    let header: ModelHeader =
        serde_json::from_slice(&json).map_err(|e| Error::format(8, format!("invalid model header: {e}")))?;
    if header.format_version != MODEL_VERSION {
        return Err(Error::format(8, format!("unsupported model format version {}", header.format_version)));
    }
    header.arch.validate().map_err(|e| Error::format(8, format!("header architecture: {e}")))?;
    Ok((header, 8 + len as u64))
}

pub fn read_model<R: Read>(mut r: R) -> Result<Model> {
    let (header, mut offset) = read_header_from(&mut r)?;
    let mut net = Network::<f32>::zeros(&header.arch)?;
    let expected: Vec<(String, usize)> = net.blobs().iter().map(|(n, _, v)| (n.to_string(), v.len())).collect();
    let listed: Vec<(String, usize)> = header.blobs.iter().map(|b| (b.name.clone(), b.len)).collect();
    if expected != listed {
        return Err(Error::format(8, "blob table does not match the architecture"));
    }
    let mut bytes = vec![0u8; 4 * header.payload_len()];
    read_exact_at(&mut r, &mut bytes, offset, "parameter payload")?;
    let mut values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for blob in net.blobs_mut() {
        for v in blob.iter_mut() {
            *v = values.next().expect("payload length checked");
        }
    }
    offset += bytes.len() as u64;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format(offset, "trailing bytes after parameter payload"));
    }
    Ok(Model { arch: header.arch, net, zone_id: header.zone_id, seed: header.seed, epochs: header.epochs })
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    read_model(fs::read(path)?.as_slice())
}

/// Header only; the parameter payload is not read.
pub fn read_model_header(path: impl AsRef<Path>) -> Result<ModelHeader> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    read_header_from(&mut f).map(|(h, _)| h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        let mut m = Model::new(&ArchitectureConfig::with_filters(3, 4, 5), "Z31", 17).unwrap();
        m.epochs = 4;
        m
    }

    #[test]
    fn bytes_round_trip() {
        let m = small();
        let mut a = Vec::new();
        write_model(&m, &mut a).unwrap();
        let back = read_model(a.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut b = Vec::new();
        write_model(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_magic() {
        let mut a = Vec::new();
        write_model(&small(), &mut a).unwrap();
        a[0] = b'X';
        assert!(matches!(read_model(a.as_slice()), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncation_names_offset() {
        let mut a = Vec::new();
        write_model(&small(), &mut a).unwrap();
        let cut = a.len() - 3;
        match read_model(&a[..cut]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, cut),
            other => panic!("expected format error, got {other:?}"),
        }
        a.push(0);
        a.extend_from_slice(&[0; 3]);
        assert!(matches!(read_model(a.as_slice()), Err(Error::Format { .. })));
    }

    #[test]
    fn unsupported_version() {
        let m = small();
        let mut header = header_for(&m);
        header.format_version = 9;
        let json = serde_json::to_vec(&header).unwrap();
        let mut bytes = MODEL_MAGIC.to_vec();
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&json);
        let err = read_model(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
