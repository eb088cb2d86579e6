//! Checkpoint container.
//!
//! Little-endian throughout:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `RFSFCKPT` |
//! | 4 | version `u32` (= 1) |
//! | 4 + n | model config as JSON, length-prefixed |
//! | 4 | section count |
//!
//! Each section is a `u16`-prefixed UTF-8 name (`generator`,
//! `discriminator`), a `u32` tensor count, then per tensor a `u16`-prefixed
//! name, `u32` rank, `u32` dims and the row-major `f64` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

use super::config::ModelConfig;
use super::discriminator::Discriminator;
use super::generator::Generator;

const MAGIC: &[u8; 8] = b"RFSFCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub sections: Vec<(String, Vec<(String, Tensor)>)>,
}

fn snapshot(set: &ParamSet) -> Vec<(String, Tensor)> {
    set.iter().map(|(n, p)| (n.to_string(), p.value.clone())).collect()
}

fn restore_into(set: &mut ParamSet, section: &str, tensors: &[(String, Tensor)]) -> Result<()> {
    if tensors.len() != set.len() {
        return Err(Error::Format(format!(
            "{section}: checkpoint has {} tensors, model expects {}",
            tensors.len(),
            set.len()
        )));
    }
    for (name, value) in tensors {
        set.set_value(name, value.clone())
            .map_err(|e| Error::Format(format!("{section}: {e}")))?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<usize> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

impl Checkpoint {
    pub fn from_models(gen: &Generator, disc: &Discriminator) -> Self {
        Checkpoint {
            config: gen.config().clone(),
            sections: vec![
                ("generator".into(), snapshot(gen.params())),
                ("discriminator".into(), snapshot(disc.params())),
            ],
        }
    }

    fn section(&self, name: &str) -> Result<&[(String, Tensor)]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint has no {name} section")))
    }

    /// Rebuilds both networks from the stored config and weights.
    pub fn restore(&self) -> Result<(Generator, Discriminator)> {
        let mut gen = Generator::new(&self.config, 0)?;
        let mut disc = Discriminator::new(&self.config, 0)?;
        restore_into(gen.params_mut(), "generator", self.section("generator")?)?;
        restore_into(disc.params_mut(), "discriminator", self.section("discriminator")?)?;
        Ok((gen, disc))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, tensors) in &self.sections {
            put_name(&mut out, name);
            out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
            for (pname, t) in tensors {
                put_name(&mut out, pname);
                out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                for d in t.shape() {
                    out.extend_from_slice(&(*d as u32).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let cfg_len = r.u32()?;
        let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)?;
        let n_sections = r.u32()?;
        let mut sections = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let len = r.u16()?;
            let name = r.string(len)?;
            let count = r.u32()?;
            let mut tensors = Vec::with_capacity(count);
            for _ in 0..count {
                let len = r.u16()?;
                let pname = r.string(len)?;
                let rank = r.u32()?;
                let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let n: usize = shape.iter().product();
                let data = r
                    .take(n * 8)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                tensors.push((pname, Tensor::new(shape, data)?));
            }
            sections.push((name, tensors));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
