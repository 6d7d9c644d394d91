//! Versioned binary weight container: magic, format version, architecture
//! digest, the spec JSON (so files are self-describing), then little-endian
//! f32 payloads per parameter tensor.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::net::{LayerSpec, Network};
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PPW1";
const VERSION: u32 = 1;

pub fn save_weights(net: &Network, path: &Path) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&net.spec_digest().to_le_bytes());
    let spec_json =
        serde_json::to_vec(&(net.input_shape(), net.specs(), net.init_seed)).expect("specs serialize");
    out.extend_from_slice(&(spec_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec_json);
    let tensors: Vec<&Tensor> = net
        .params()
        .iter()
        .flat_map(|p| [&p.weight, &p.bias])
        .collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

struct Reader {
    buf: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptWeights(format!(
                "truncated file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
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
}

/// Load a self-describing weight file into a freshly built network.
pub fn load_weights(path: &Path) -> Result<Network> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(Error::CorruptWeights("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::WeightMismatch {
            expected: format!("format version {VERSION}"),
            found: format!("{version}"),
        });
    }
    let digest = r.u64()?;
    let spec_len = r.u32()? as usize;
    let spec_bytes = r.take(spec_len)?.to_vec();
    let (input_shape, specs, init_seed): (Vec<usize>, Vec<LayerSpec>, u64) =
        serde_json::from_slice(&spec_bytes)
            .map_err(|e| Error::CorruptWeights(format!("spec json: {e}")))?;
    let mut net = Network::new(&input_shape, &specs, init_seed)?;
    if net.spec_digest() != digest {
        return Err(Error::CorruptWeights(
            "architecture digest does not match stored spec".into(),
        ));
    }

    let n_tensors = r.u32()? as usize;
    let expected_tensors = net.params().len() * 2;
    if n_tensors != expected_tensors {
        return Err(Error::WeightMismatch {
            expected: format!("{expected_tensors} tensors"),
            found: format!("{n_tensors}"),
        });
    }
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let bytes = r.take(len * 4)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::from_vec_unchecked(shape, data));
    }
    if r.pos != r.buf.len() {
        return Err(Error::CorruptWeights(format!(
            "{} trailing bytes",
            r.buf.len() - r.pos
        )));
    }

    let mut it = tensors.into_iter();
    for (li, p) in net.params_mut().iter_mut().enumerate() {
        let w = it.next().unwrap();
        let b = it.next().unwrap();
        if w.shape() != p.weight.shape() || b.shape() != p.bias.shape() {
            return Err(Error::WeightMismatch {
                expected: format!(
                    "layer {li}: weight {:?} bias {:?}",
                    p.weight.shape(),
                    p.bias.shape()
                ),
                found: format!("weight {:?} bias {:?}", w.shape(), b.shape()),
            });
        }
        p.weight = w;
        p.bias = b;
    }
    Ok(net)
}

/// Load weights and require that they fit the given architecture.
pub fn load_weights_expecting(path: &Path, expected: &Network) -> Result<Network> {
    let net = load_weights(path)?;
    if net.spec_digest() != expected.spec_digest() {
        return Err(Error::WeightMismatch {
            expected: format!(
                "spec digest {:016x} (input {:?})",
                expected.spec_digest(),
                expected.input_shape()
            ),
            found: format!(
                "spec digest {:016x} (input {:?})",
                net.spec_digest(),
                net.input_shape()
            ),
        });
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::net::Activation;

    fn sample_net() -> Network {
        Network::new(
            &[3, 8, 8],
            &[
                LayerSpec::Conv {
                    filters: 2,
                    kernel: 3,
                    activation: Activation::LeakyRelu,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 4,
                    activation: Activation::Linear,
                },
            ],
            99,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = sample_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&net, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn truncated_file_is_a_corruption_error() {
        let net = sample_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 17]).unwrap();
        assert!(matches!(
            load_weights(&path),
            Err(Error::CorruptWeights(_))
        ));
    }

    #[test]
    fn mismatched_spec_is_rejected_with_both_sides_named() {
        let net = sample_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&net, &path).unwrap();
        let other = Network::new(
            &[5],
            &[LayerSpec::Dense {
                units: 2,
                activation: Activation::Relu,
            }],
            1,
        )
        .unwrap();
        let err = load_weights_expecting(&path, &other).unwrap_err();
        match err {
            Error::WeightMismatch { expected, found } => {
                assert!(expected.contains("[5]"), "{expected}");
                assert!(found.contains("[3, 8, 8]"), "{found}");
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
