//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "RDQNWGT\0"
//! version      u32      1
//! spec_hash    u64      first 8 bytes of SHA-256 over the spec JSON
//! spec_len     u32      followed by the spec JSON (UTF-8)
//! n_layers     u32
//! per layer:   name_len u8, name, n_dims u8, dims u32 x n_dims, bias_len u32
//! data:        per layer, weights then biases, f32
//! ```
//!
//! Layer order is `conv1.., fc1..` as produced by `NetworkSpec::layers`.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{LayerGeom, LayerParams, Network, NetworkSpec, Scalar};
use crate::error::{Error, Result};
use crate::fsutil;

pub const WEIGHT_MAGIC: &[u8; 8] = b"RDQNWGT\0";
pub const WEIGHT_VERSION: u32 = 1;

pub fn spec_hash(spec: &NetworkSpec) -> u64 {
    let json = serde_json::to_vec(spec).expect("spec serializes");
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn encode<T: Scalar>(spec: &NetworkSpec, params: &[LayerParams<T>]) -> Result<Vec<u8>> {
    let layers = spec.layers()?;
    if layers.len() != params.len() {
        return Err(Error::Shape("parameter list does not match spec".into()));
    }
    let json = serde_json::to_vec(spec).expect("spec serializes");
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&spec_hash(spec).to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in &layers {
        out.push(l.name.len() as u8);
        out.extend_from_slice(l.name.as_bytes());
        let dims = l.weight_shape();
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(l.bias_len() as u32).to_le_bytes());
    }
    for p in params {
        for &v in p.weight.iter().chain(&p.bias) {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::WeightFormat(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

struct LayerHeader {
    name: String,
    dims: Vec<usize>,
    bias_len: usize,
}

fn describe(dims: &[usize], bias: usize) -> String {
    format!("weight {dims:?}, bias [{bias}]")
}

fn decode<T: Scalar>(bytes: &[u8], expected: Option<&NetworkSpec>) -> Result<(NetworkSpec, Vec<LayerParams<T>>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8).ok() != Some(&WEIGHT_MAGIC[..]) {
        return Err(Error::WeightFormat("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != WEIGHT_VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let hash = r.u64()?;
    let json_len = r.u32()? as usize;
    let spec: NetworkSpec = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| Error::WeightFormat(format!("embedded spec: {e}")))?;
    if spec_hash(&spec) != hash {
        return Err(Error::WeightFormat("embedded spec does not match its hash".into()));
    }
    let n = r.u32()? as usize;
    let mut headers = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u8()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::WeightFormat("layer name is not UTF-8".into()))?;
        let nd = r.u8()? as usize;
        let dims = (0..nd).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let bias_len = r.u32()? as usize;
        headers.push(LayerHeader { name, dims, bias_len });
    }

    let layers = spec.layers()?;
    check_headers(&layers, &headers)?;
    if let Some(want) = expected {
        if spec_hash(want) != hash {
            let want_layers = want.layers()?;
            for (i, w) in want_layers.iter().enumerate() {
                match headers.get(i) {
                    None => {
                        return Err(Error::WeightFormat(format!("layer `{}` missing from file", w.name)));
                    }
                    Some(h) if h.dims != w.weight_shape() || h.bias_len != w.bias_len() => {
                        return Err(Error::WeightFormat(format!(
                            "layer `{}`: expected {}, file has {}",
                            w.name,
                            describe(&w.weight_shape(), w.bias_len()),
                            describe(&h.dims, h.bias_len)
                        )));
                    }
                    _ => {}
                }
            }
            if headers.len() > want_layers.len() {
                return Err(Error::WeightFormat(format!(
                    "layer `{}` not present in the expected architecture",
                    headers[want_layers.len()].name
                )));
            }
            return Err(Error::WeightFormat(format!(
                "architecture mismatch (input {:?} vs {:?}, same layer shapes)",
                spec.input, want.input
            )));
        }
    }

    let mut params = Vec::with_capacity(n);
    for h in &headers {
        let wn: usize = h.dims.iter().product();
        let mut read = |count: usize| -> Result<Vec<T>> {
            let raw = r.take(count * 4)?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect())
        };
        let weight = read(wn)?;
        let bias = read(h.bias_len)?;
        params.push(LayerParams { weight, bias });
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((spec, params))
}

fn check_headers(layers: &[LayerGeom], headers: &[LayerHeader]) -> Result<()> {
    if layers.len() != headers.len() {
        return Err(Error::WeightFormat(format!(
            "file lists {} layers, its spec has {}",
            headers.len(),
            layers.len()
        )));
    }
    for (l, h) in layers.iter().zip(headers) {
        if l.name != h.name || l.weight_shape() != h.dims || l.bias_len() != h.bias_len {
            return Err(Error::WeightFormat(format!("layer table entry `{}` disagrees with embedded spec", h.name)));
        }
    }
    Ok(())
}

/// Writes any parameter-shaped set (weights, optimizer moments) for `spec`.
pub fn save_params<T: Scalar>(spec: &NetworkSpec, params: &[LayerParams<T>], path: &Path) -> Result<()> {
    fsutil::atomic_write(path, &encode(spec, params)?)
}

/// Reads a parameter set, optionally checking it against `expected`.
pub fn load_params<T: Scalar>(path: &Path, expected: Option<&NetworkSpec>) -> Result<(NetworkSpec, Vec<LayerParams<T>>)> {
    decode(&fsutil::read_bytes(path)?, expected)
}

pub fn save_weights<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    save_params(net.spec(), net.params(), path)
}

/// Loads a network using the architecture embedded in the file.
pub fn load_weights<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let (spec, params) = load_params(path, None)?;
    Network::from_params(spec, params)
}

/// Loads a network and fails unless it has architecture `spec`.
pub fn load_weights_expecting<T: Scalar>(path: &Path, spec: &NetworkSpec) -> Result<Network<T>> {
    let (spec, params) = load_params(path, Some(spec))?;
    Network::from_params(spec, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{desk_spec, ConvSpec};

    fn small() -> NetworkSpec {
        NetworkSpec {
            input: [6, 12, 12],
            convs: vec![ConvSpec::new(4, 4, 2, 0), ConvSpec::new(8, 3, 1, 1)],
            fc: vec![8 * 5 * 5, 16],
            output: 4,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let net = Network::<f32>::new(small(), 3).unwrap();
        save_weights(&net, &p).unwrap();
        let back: Network<f32> = load_weights(&p).unwrap();
        let bits = |n: &Network<f32>| n.param_iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&net));
        assert_eq!(back.spec(), net.spec());
        let again: Network<f32> = load_weights_expecting(&p, &small()).unwrap();
        assert_eq!(bits(&again), bits(&net));
    }

    #[test]
    fn wrong_spec_names_the_layer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        save_weights(&Network::<f32>::new(small(), 3).unwrap(), &p).unwrap();
        let mut other = small();
        other.convs[1].filters = 6;
        other.fc[0] = 6 * 5 * 5;
        let err = load_weights_expecting::<f32>(&p, &other).unwrap_err().to_string();
        assert!(err.contains("conv2"), "{err}");
        let err = load_weights_expecting::<f32>(&p, &desk_spec()).unwrap_err().to_string();
        assert!(err.contains("conv1"), "{err}");
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        save_weights(&Network::<f32>::new(small(), 3).unwrap(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&p, &bytes).unwrap();
        let err = load_weights::<f32>(&p).unwrap_err();
        assert!(matches!(err, Error::WeightFormat(ref m) if m.contains("magic")), "{err}");
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let net = Network::<f32>::new(small(), 3).unwrap();
        let bytes = encode(net.spec(), net.params()).unwrap();
        let err = decode::<f32>(&bytes[..bytes.len() - 3], None).unwrap_err();
        assert!(matches!(err, Error::WeightFormat(_)));
    }
}
