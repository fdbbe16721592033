//! Flat little-endian float64 blobs with a text manifest.
//!
//! The manifest starts with `tbd-params <version>` and then lists one tensor
//! per line as `name<TAB>d0,d1,..<TAB>byte_offset<TAB>byte_len`. Tensors are
//! laid out back to back in the blob in manifest order.

use std::fs;
use std::path::Path;

use crate::error::FormatError;
use crate::tensor::Tensor;

pub const PARAMS_VERSION: u32 = 1;
const MAGIC: &str = "tbd-params";

pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> (String, Vec<u8>) {
    let mut manifest = format!("{MAGIC} {PARAMS_VERSION}\n");
    let mut blob = Vec::new();
    for (name, t) in entries {
        assert!(!name.contains(['\t', '\n']), "parameter names cannot hold tabs or newlines");
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        manifest.push_str(&format!(
            "{name}\t{}\t{offset}\t{}\n",
            dims.join(","),
            blob.len() - offset
        ));
    }
    (manifest, blob)
}

pub fn decode(manifest: &str, blob: &[u8]) -> Result<Vec<(String, Tensor)>, FormatError> {
    let mut lines = manifest.lines();
    let header = lines.next().unwrap_or_default();
    let version = header
        .strip_prefix(MAGIC)
        .map(str::trim)
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| FormatError::Malformed {
            what: "params manifest header",
            detail: header.to_string(),
        })?;
    if version != PARAMS_VERSION {
        return Err(FormatError::Version {
            found: version,
            expected: PARAMS_VERSION,
        });
    }
    let mut out = Vec::new();
    let mut expected_offset = 0usize;
    for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let malformed = || FormatError::Malformed {
            what: "params manifest line",
            detail: format!("line {}: {line:?}", lineno + 2),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, dims, offset, len] = fields[..] else {
            return Err(malformed());
        };
        let shape: Vec<usize> = if dims.is_empty() {
            Vec::new()
        } else {
            dims.split(',')
                .map(|d| d.parse().map_err(|_| malformed()))
                .collect::<Result<_, _>>()?
        };
        let offset: usize = offset.parse().map_err(|_| malformed())?;
        let len: usize = len.parse().map_err(|_| malformed())?;
        let numel: usize = shape.iter().product();
        if len != numel * 8 {
            return Err(FormatError::Inconsistent(format!(
                "`{name}` declares {len} bytes for shape {shape:?}"
            )));
        }
        if offset != expected_offset {
            return Err(FormatError::Inconsistent(format!(
                "`{name}` starts at byte {offset}, expected {expected_offset}"
            )));
        }
        let end = offset + len;
        if end > blob.len() {
            return Err(FormatError::Truncated {
                name: name.to_string(),
                start: offset,
                end,
                len: blob.len(),
            });
        }
        let data = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| FormatError::Inconsistent(e.to_string()))?;
        out.push((name.to_string(), t));
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(FormatError::Inconsistent(format!(
            "blob has {} bytes, manifest covers {expected_offset}",
            blob.len()
        )));
    }
    Ok(out)
}

/// Writes `<stem>.manifest` and `<stem>.bin` under `dir`.
pub fn write_params<'a>(
    dir: &Path,
    stem: &str,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<(), FormatError> {
    let (manifest, blob) = encode(entries);
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    let mpath = dir.join(format!("{stem}.manifest"));
    let bpath = dir.join(format!("{stem}.bin"));
    fs::write(&mpath, manifest).map_err(|e| FormatError::io(&mpath, e))?;
    fs::write(&bpath, blob).map_err(|e| FormatError::io(&bpath, e))?;
    Ok(())
}

pub fn read_params(dir: &Path, stem: &str) -> Result<Vec<(String, Tensor)>, FormatError> {
    let mpath = dir.join(format!("{stem}.manifest"));
    let bpath = dir.join(format!("{stem}.bin"));
    let manifest = fs::read_to_string(&mpath).map_err(|e| FormatError::io(&mpath, e))?;
    let blob = fs::read(&bpath).map_err(|e| FormatError::io(&bpath, e))?;
    decode(&manifest, &blob)
}
