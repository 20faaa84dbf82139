//! Checkpoint layout: one JSON header line terminated by `\n`, followed by the
//! raw little-endian `f64` payload of every parameter in name order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NumError, ParameterStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    payload_bytes: usize,
    payload_sha256: String,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    byte_offset: usize,
}

pub fn write_checkpoint(store: &ParameterStore) -> Result<Vec<u8>, NumError> {
    if store.is_empty() {
        return Err(NumError::InvalidInput(
            "cannot checkpoint an empty store".into(),
        ));
    }
    let mut payload = Vec::with_capacity(store.num_scalars() * 8);
    let mut params = Vec::new();
    for (name, p) in store.iter() {
        params.push(Entry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            byte_offset: payload.len(),
        });
        for x in p.value.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        payload_bytes: payload.len(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
        params,
    };
    let mut out = serde_json::to_vec(&header).map_err(|e| NumError::Format(e.to_string()))?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ParameterStore, NumError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NumError::Corrupt("missing header terminator".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| NumError::Corrupt(format!("unreadable header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(NumError::Format(format!(
            "format_version {} is not supported (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let payload = &bytes[nl + 1..];
    if payload.len() != header.payload_bytes {
        return Err(NumError::Corrupt(format!(
            "payload has {} bytes, header declares {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(NumError::Corrupt("payload checksum mismatch".into()));
    }
    let mut store = ParameterStore::new();
    for e in &header.params {
        let n: usize = e.shape.iter().product();
        let end = e.byte_offset + n * 8;
        if end > payload.len() {
            return Err(NumError::Corrupt(format!(
                "entry `{}` overruns payload",
                e.name
            )));
        }
        let data = payload[e.byte_offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data)
            .map_err(|_| NumError::Corrupt(format!("entry `{}` has a bad shape", e.name)))?;
        store.insert(e.name.clone(), t);
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParameterStore, path: &Path) -> Result<(), NumError> {
    let bytes = write_checkpoint(store)?;
    let tmp = path.with_extension("tmp");
    let io = |source| NumError::Io {
        path: path.display().to_string(),
        source,
    };
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Loads a checkpoint into `store`, whose parameter names and shapes must
/// match exactly. Nothing is modified unless every entry validates.
pub fn load_checkpoint(store: &mut ParameterStore, path: &Path) -> Result<(), NumError> {
    let bytes = fs::read(path).map_err(|source| NumError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let loaded = read_checkpoint(&bytes)?;
    for (name, p) in store.iter() {
        let found = loaded
            .value(name)
            .ok_or_else(|| NumError::Format(format!("checkpoint lacks parameter `{name}`")))?;
        if found.shape() != p.value.shape() {
            return Err(NumError::ParamShape {
                name: name.to_string(),
                expected: p.value.shape().to_vec(),
                found: found.shape().to_vec(),
            });
        }
    }
    if let Some(extra) = loaded.names().find(|n| !store.contains(n)) {
        return Err(NumError::Format(format!(
            "checkpoint has unexpected parameter `{extra}`"
        )));
    }
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        *store.value_mut(&name).expect("present") = loaded.value(&name).expect("checked").clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_store() -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = ParameterStore::new();
        s.insert_xavier("a.w", 3, 4, &mut rng);
        s.insert_xavier("b.w", 1, 7, &mut rng);
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = random_store();
        let back = read_checkpoint(&write_checkpoint(&s).unwrap()).unwrap();
        for (name, p) in s.iter() {
            let q = back.value(name).unwrap();
            let a: Vec<u64> = p.value.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = q.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn corrupted_byte_is_detected_without_partial_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let s = random_store();
        save_checkpoint(&s, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        let mut target = random_store();
        target.value_mut("a.w").unwrap().fill(0.5);
        let before = target.value("a.w").unwrap().clone();
        assert!(matches!(
            load_checkpoint(&mut target, &path),
            Err(NumError::Corrupt(_))
        ));
        assert_eq!(target.value("a.w").unwrap(), &before);
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = write_checkpoint(&random_store()).unwrap();
        assert!(matches!(
            read_checkpoint(&bytes[..bytes.len() - 8]),
            Err(NumError::Corrupt(_))
        ));
    }

    #[test]
    fn version_mismatch_is_format_error() {
        let bytes = write_checkpoint(&random_store()).unwrap();
        let text =
            String::from_utf8_lossy(&bytes).replace("\"format_version\":1", "\"format_version\":9");
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let mut patched = text.as_bytes()[..nl].to_vec();
        patched.extend_from_slice(&bytes[nl..]);
        assert!(matches!(
            read_checkpoint(&patched),
            Err(NumError::Format(_))
        ));
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&random_store(), &path).unwrap();
        let mut other = ParameterStore::new();
        other.insert("a.w", Tensor::zeros(4, 3));
        other.insert("b.w", Tensor::zeros(1, 7));
        let err = load_checkpoint(&mut other, &path).unwrap_err();
        assert!(err.to_string().contains("a.w"), "{err}");
    }
}
