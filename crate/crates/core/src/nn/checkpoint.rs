//! Binary checkpoint container for named networks.
//!
//! Layout (little-endian):
//!
//! ```text
//! "NNCP"  version:u16  net_count:u16
//! per net:
//!   name_len:u32  name:utf8
//!   layer_count:u32
//!   layer_count × (n_in:u32, n_out:u32, activation:u32)
//!   per layer: weights f64 × n_out·n_in (row-major), bias f64 × n_out
//! checksum:u64   wrapping sum of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Activation, Dense, DenseNet};

const MAGIC: &[u8; 4] = b"NNCP";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    nets: Vec<(String, DenseNet)>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::CheckpointFormat(msg.into())
}

pub(crate) fn byte_sum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(u64::from(b)))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(fmt_err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| fmt_err("size overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn push(&mut self, name: impl Into<String>, net: DenseNet) {
        self.nets.push((name.into(), net));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.nets.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Result<&DenseNet> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
            .ok_or_else(|| fmt_err(format!("checkpoint has no entry named {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u16::try_from(self.nets.len()).map_err(|_| fmt_err("too many networks"))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for (name, net) in &self.nets {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
            for l in net.layers() {
                for v in [l.n_in as u32, l.n_out as u32, l.activation.code()] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            for l in net.layers() {
                for v in l.weights.iter().chain(&l.bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let sum = byte_sum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 2 + 2 + 8 {
            return Err(fmt_err("file too short for a checkpoint header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt_err("bad magic, not a checkpoint file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(fmt_err(format!(
                "unsupported version: expected {CHECKPOINT_VERSION}, found {version}"
            )));
        }
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if stored != byte_sum(body) {
            return Err(fmt_err("checksum mismatch (file truncated or corrupted)"));
        }
        let count = r.u16("network count")?;
        let mut nets = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| fmt_err("network name is not UTF-8"))?
                .to_owned();
            let n_layers = r.u32("layer count")? as usize;
            let mut shapes = Vec::with_capacity(n_layers.min(1024));
            for _ in 0..n_layers {
                let n_in = r.u32("layer shape")? as usize;
                let n_out = r.u32("layer shape")? as usize;
                let code = r.u32("activation")?;
                let act = Activation::from_code(code)
                    .ok_or_else(|| fmt_err(format!("unknown activation code {code} in {name:?}")))?;
                shapes.push((n_in, n_out, act));
            }
            let mut layers = Vec::with_capacity(n_layers);
            for (n_in, n_out, activation) in shapes {
                let weights = r.f64s(n_in * n_out, "weights")?;
                let bias = r.f64s(n_out, "bias")?;
                layers.push(Dense {
                    n_in,
                    n_out,
                    activation,
                    weights,
                    bias,
                });
            }
            let net = DenseNet::from_layers(layers)
                .map_err(|e| fmt_err(format!("network {name:?} has inconsistent dimensions: {e}")))?;
            nets.push((name, net));
        }
        if r.pos != body.len() {
            return Err(fmt_err("trailing bytes after the last network"));
        }
        Ok(Checkpoint { nets })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(5);
        let mut ck = Checkpoint::new();
        ck.push(
            "branch",
            DenseNet::mlp(6, &[5, 4], 3, Activation::Relu, Activation::Identity, &mut rng),
        );
        ck.push(
            "trunk",
            DenseNet::mlp(1, &[4], 3, Activation::Tanh, Activation::Tanh, &mut rng),
        );
        ck.push("output_bias", DenseNet::constant(&[0.123456789]));
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.nncp");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
        assert_eq!(back.names().collect::<Vec<_>>(), vec!["branch", "trunk", "output_bias"]);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::CheckpointFormat(_)), "cut {cut}");
        }
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 7;
        let msg = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(msg.contains("expected 1") && msg.contains("found 7"), "{msg}");
    }

    #[test]
    fn bad_magic_and_corruption() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CheckpointFormat(_))
        ));
        let mut bytes = sample().to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::CheckpointFormat(_))
        ));
    }

    #[test]
    fn missing_entry_is_reported() {
        assert!(sample().get("critic").is_err());
    }

    proptest::proptest! {
        #[test]
        fn random_nets_round_trip(seed in 0u64..500, width in 1usize..9, depth in 1usize..4) {
            let mut rng = Rng::new(seed);
            let hidden = vec![width; depth];
            let mut ck = Checkpoint::new();
            ck.push("n", DenseNet::mlp(width + 1, &hidden, 2, Activation::Tanh, Activation::Identity, &mut rng));
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            proptest::prop_assert_eq!(back, ck);
        }
    }
}
