//! Model checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"IINRCKPT"                 8 bytes
//! header length               u64, little-endian
//! header                      JSON (specs, seeds, section sizes)
//! parameters                  f64 little-endian, sections in header order
//! ```
//!
//! Each section is one MLP's [`MlpModel::flat_params`]. The latent field is
//! stored by its generating spec (mode, seed, grid, channels) and redrawn on
//! load, which reproduces it exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iinr::latent::{LatentField, LatentMode};
use crate::iinr::model::{IinrModel, IinrSpec};
use crate::mlp::{MlpModel, MlpSpec};
use crate::rng::Rng;

pub const MAGIC: &[u8; 8] = b"IINRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Section {
    name: String,
    spec: MlpSpec,
    seed: u64,
    count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LatentHeader {
    mode: LatentMode,
    seed: u64,
    base_resolution: Vec<usize>,
    channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    parameter_count: usize,
    sections: Vec<Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iinr: Option<IinrSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent: Option<LatentHeader>,
}

/// A model as stored on disk.
#[derive(Clone, Debug)]
pub enum Checkpoint {
    Mlp(MlpModel),
    Iinr(IinrModel),
}

fn section(name: &str, m: &MlpModel) -> Section {
    Section {
        name: name.into(),
        spec: m.spec.clone(),
        seed: m.seed,
        count: m.parameter_count(),
    }
}

fn restore(s: &Section, values: &[f64]) -> Result<MlpModel> {
    let mut m = MlpModel::init(s.spec.clone(), &mut Rng::new(s.seed))?;
    m.set_flat_params(values)?;
    m.seed = s.seed;
    Ok(m)
}

impl Checkpoint {
    fn models(&self) -> Vec<(&'static str, &MlpModel)> {
        match self {
            Checkpoint::Mlp(m) => vec![("backbone", m)],
            Checkpoint::Iinr(m) => vec![
                ("backbone", &m.backbone),
                ("feedback", &m.feedback),
                ("fuse", &m.fuse),
            ],
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let models = self.models();
        let sections: Vec<Section> = models.iter().map(|(n, m)| section(n, m)).collect();
        let header = Header {
            version: FORMAT_VERSION,
            kind: match self {
                Checkpoint::Mlp(_) => "mlp".into(),
                Checkpoint::Iinr(_) => "iinr".into(),
            },
            parameter_count: sections.iter().map(|s| s.count).sum(),
            sections,
            iinr: match self {
                Checkpoint::Iinr(m) => Some(m.spec.clone()),
                Checkpoint::Mlp(_) => None,
            },
            latent: match self {
                Checkpoint::Iinr(m) => Some(LatentHeader {
                    mode: m.latent.mode,
                    seed: m.latent.seed,
                    base_resolution: m.latent.base_resolution.clone(),
                    channels: m.latent.channels,
                }),
                Checkpoint::Mlp(_) => None,
            },
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * header.parameter_count);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in models {
            for v in m.flat_params() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                detail: "not a checkpoint (bad magic)".into(),
            });
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Parse {
                offset: 8,
                detail: format!("header length {len} exceeds file size {}", bytes.len()),
            })?;
        let header: Header = serde_json::from_slice(&bytes[16..body])?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Parse {
                offset: 16,
                detail: format!("unsupported checkpoint version {}", header.version),
            });
        }
        let blob = &bytes[body..];
        let need = 8 * header.sections.iter().map(|s| s.count).sum::<usize>();
        if blob.len() != need {
            return Err(Error::Parse {
                offset: body,
                detail: format!("parameter blob: expected {need} bytes, found {}", blob.len()),
            });
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut models = Vec::new();
        let mut at = 0;
        for s in &header.sections {
            models.push(restore(s, &values[at..at + s.count])?);
            at += s.count;
        }
        match (header.kind.as_str(), header.iinr, header.latent) {
            ("mlp", _, _) if models.len() == 1 => Ok(Checkpoint::Mlp(models.remove(0))),
            ("iinr", Some(spec), Some(l)) if models.len() == 3 => {
                let latent = LatentField::new(l.mode, l.seed, l.base_resolution, l.channels)?;
                let fuse = models.pop().expect("three sections");
                let feedback = models.pop().expect("three sections");
                let backbone = models.pop().expect("three sections");
                Ok(Checkpoint::Iinr(IinrModel::from_parts(spec, backbone, feedback, fuse, latent)?))
            }
            (kind, _, _) => Err(Error::Parse {
                offset: 16,
                detail: format!("inconsistent header for checkpoint kind '{kind}'"),
            }),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;

    fn bits(m: &MlpModel) -> Vec<u64> {
        m.flat_params().iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn mlp_roundtrip_bit_exact() {
        let spec = MlpSpec::new(2, 3, 8, 1, Activation::GaborWavelet { omega: 7.0, sigma: 13.0 });
        let mut m = MlpModel::init(spec, &mut Rng::new(4)).unwrap();
        // values that text formats would mangle
        let mut p = m.flat_params();
        p[0] = 0.1 + 0.2;
        p[1] = -0.0;
        p[2] = f64::MIN_POSITIVE / 4.0;
        m.set_flat_params(&p).unwrap();
        let bytes = Checkpoint::Mlp(m.clone()).to_bytes().unwrap();
        assert!(bytes.starts_with(MAGIC));
        match Checkpoint::from_bytes(&bytes).unwrap() {
            Checkpoint::Mlp(back) => {
                assert_eq!(bits(&back), bits(&m));
                assert_eq!(back.spec, m.spec);
                assert_eq!(back.seed, m.seed);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn iinr_roundtrip_bit_exact() {
        let backbone = MlpSpec::new(2, 1, 8, 1, Activation::Sine { omega: 30.0 });
        let m = IinrModel::init(IinrSpec::around(backbone, vec![4, 4]), 9).unwrap();
        let bytes = Checkpoint::Iinr(m.clone()).to_bytes().unwrap();
        match Checkpoint::from_bytes(&bytes).unwrap() {
            Checkpoint::Iinr(back) => {
                assert_eq!(bits(&back.backbone), bits(&m.backbone));
                assert_eq!(bits(&back.feedback), bits(&m.feedback));
                assert_eq!(bits(&back.fuse), bits(&m.fuse));
                assert_eq!(back.latent, m.latent);
                assert_eq!(back.spec, m.spec);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn corrupt_inputs() {
        let spec = MlpSpec::new(1, 1, 2, 0, Activation::Relu);
        let m = MlpModel::init(spec, &mut Rng::new(0)).unwrap();
        let bytes = Checkpoint::Mlp(m).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
        let mut bad = bytes.clone();
        bad[8] = 0xff;
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
