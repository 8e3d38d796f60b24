//! Versioned named-tensor container.
//!
//! Binary layout: the 8-byte magic `DUBCKPT\x01`, a little-endian `u32`
//! header length, the JSON header, then for each tensor a `u32` name length,
//! the UTF-8 name, `u64` rows, `u64` cols, and `rows·cols` little-endian
//! `f64` values.
//!
//! Text layout: the line `DUBCKPT-TEXT`, the JSON header on one line, then
//! one `name rows cols v0 v1 ...` line per tensor. Values use the shortest
//! decimal form that parses back to the same bits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor2D};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DUBCKPT\x01";
const TEXT_MAGIC: &str = "DUBCKPT-TEXT";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Binary,
    Text,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub encoding: Encoding,
    pub step_count: u64,
    pub frozen: Vec<String>,
    pub config: serde_json::Value,
}

pub fn save_checkpoint(store: &ParamStore, path: &Path, config: &serde_json::Value, encoding: Encoding) -> Result<()> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        encoding,
        step_count: store.step_count(),
        frozen: store.iter().filter(|(_, e)| e.frozen).map(|(n, _)| n.clone()).collect(),
        config: config.clone(),
    };
    let header_json = serde_json::to_string(&header)?;
    let bytes = match encoding {
        Encoding::Binary => {
            let mut b = Vec::new();
            b.extend_from_slice(MAGIC);
            b.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
            b.extend_from_slice(header_json.as_bytes());
            for (name, e) in store.iter() {
                b.extend_from_slice(&(name.len() as u32).to_le_bytes());
                b.extend_from_slice(name.as_bytes());
                b.extend_from_slice(&(e.value.rows() as u64).to_le_bytes());
                b.extend_from_slice(&(e.value.cols() as u64).to_le_bytes());
                for v in e.value.data() {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
            b
        }
        Encoding::Text => {
            let mut s = format!("{TEXT_MAGIC}\n{header_json}\n");
            for (name, e) in store.iter() {
                s.push_str(&format!("{name} {} {}", e.value.rows(), e.value.cols()));
                for v in e.value.data() {
                    s.push_str(&format!(" {v}"));
                }
                s.push('\n');
            }
            s.into_bytes()
        }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated file while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn check_header(header: &CheckpointHeader) -> Result<()> {
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    Ok(())
}

fn parse_header(text: &str) -> Result<CheckpointHeader> {
    let header: CheckpointHeader =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    check_header(&header)?;
    Ok(header)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamStore)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, tensors) = if bytes.starts_with(MAGIC) {
        read_binary(&bytes)?
    } else if bytes.starts_with(TEXT_MAGIC.as_bytes()) {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        read_text(text)?
    } else {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    };
    let mut store = ParamStore::new();
    for (name, t) in tensors {
        if store.contains(&name) {
            return Err(Error::Checkpoint(format!("tensor `{name}` appears twice")));
        }
        store.insert(name, t);
    }
    for name in &header.frozen {
        store
            .set_frozen(name, true)
            .map_err(|_| Error::Checkpoint(format!("frozen tensor `{name}` is missing")))?;
    }
    store.set_step_count(header.step_count);
    Ok((header, store))
}

fn read_binary(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<(String, Tensor2D)>)> {
    let mut r = Reader {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let hlen = r.u32("header length")? as usize;
    let htext = std::str::from_utf8(r.take(hlen, "header")?)
        .map_err(|e| Error::Checkpoint(format!("header is not UTF-8: {e}")))?;
    let header = parse_header(htext)?;
    let mut tensors = Vec::new();
    while r.pos < bytes.len() {
        let nlen = r.u32("tensor name length")? as usize;
        let name = String::from_utf8(r.take(nlen, "tensor name")?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?;
        let rows = r.u64(&name)? as usize;
        let cols = r.u64(&name)? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` has absurd shape")))?;
        let raw = r.take(n, &format!("values of `{name}`"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor2D::new(rows, cols, data)?));
    }
    Ok((header, tensors))
}

fn read_text(text: &str) -> Result<(CheckpointHeader, Vec<(String, Tensor2D)>)> {
    let mut lines = text.lines();
    lines.next();
    let header = parse_header(
        lines
            .next()
            .ok_or_else(|| Error::Checkpoint("missing header line".into()))?,
    )?;
    let mut tensors = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Checkpoint(format!("line {}: {m}", i + 3));
        let mut parts = line.split(' ');
        let name = parts.next().ok_or_else(|| bad("missing name"))?.to_string();
        let mut dim = || -> Result<usize> {
            parts
                .next()
                .and_then(|p| p.parse().ok())
                .ok_or_else(|| bad(&format!("bad shape for `{name}`")))
        };
        let rows = dim()?;
        let cols = dim()?;
        let data = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| bad(&format!("bad value `{p}` in `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if data.len() != rows * cols {
            return Err(bad(&format!(
                "`{name}` has {} values for shape {rows}x{cols}",
                data.len()
            )));
        }
        tensors.push((name, Tensor2D::new(rows, cols, data)?));
    }
    Ok((header, tensors))
}

/// Copies checkpoint values into `store`, which fixes the expected names
/// and shapes.
pub fn restore_into(store: &mut ParamStore, path: &Path) -> Result<CheckpointHeader> {
    let (header, loaded) = load_checkpoint(path)?;
    store.load_values_from(&loaded)?;
    store.set_step_count(header.step_count);
    Ok(header)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(
            "a.w",
            Tensor2D::new(2, 2, vec![0.1, -1e-300, f64::MAX, 1.0 / 3.0]).unwrap(),
        );
        s.insert_frozen("b", Tensor2D::new(1, 3, vec![std::f64::consts::PI, -0.0, 7.0]).unwrap());
        s.set_step_count(9);
        s
    }

    fn bits(s: &ParamStore) -> Vec<(String, Vec<u64>, bool)> {
        s.iter()
            .map(|(n, e)| {
                (
                    n.clone(),
                    e.value.data().iter().map(|v| v.to_bits()).collect(),
                    e.frozen,
                )
            })
            .collect()
    }

    #[test]
    fn round_trip_both_encodings() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = serde_json::json!({"k": 10});
        for enc in [Encoding::Binary, Encoding::Text] {
            let p = dir.path().join(format!("{enc:?}.ckpt"));
            save_checkpoint(&store(), &p, &cfg, enc).unwrap();
            let (h, s) = load_checkpoint(&p).unwrap();
            assert_eq!(h.config, cfg);
            assert_eq!(h.encoding, enc);
            assert_eq!(bits(&s), bits(&store()));
            assert_eq!(s.step_count(), 9);
        }
    }

    #[test]
    fn truncated_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&store(), &p, &serde_json::Value::Null, Encoding::Binary).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        save_checkpoint(&store(), &p, &serde_json::Value::Null, Encoding::Text).unwrap();
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replace("\"format_version\":1", "\"format_version\":99");
        std::fs::write(&p, text).unwrap();
        assert!(load_checkpoint(&p).unwrap_err().to_string().contains("version 99"));
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&store(), &p, &serde_json::Value::Null, Encoding::Binary).unwrap();
        let mut other = store();
        other.set("a.w", Tensor2D::zeros(3, 2)).unwrap_err();
        let mut other2 = ParamStore::new();
        other2.insert("a.w", Tensor2D::zeros(3, 2));
        other2.insert("b", Tensor2D::zeros(1, 3));
        let err = restore_into(&mut other2, &p).unwrap_err().to_string();
        assert!(err.contains("a.w"), "{err}");
        restore_into(&mut other, &p).unwrap();
    }
}
