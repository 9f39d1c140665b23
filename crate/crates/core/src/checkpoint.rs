//! Versioned little-endian binary checkpoints.
//!
//! Layout: magic, format version, model config as JSON, the parameter table,
//! then an optional optimizer block with the Adam step and moments. Values are
//! stored as `f64`, so both `f32` and `f64` models round-trip exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::predictor::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"DNSPATH\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub model: Model<S>,
    pub optimizer: Option<AdamState<S>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer<W>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.u64(b.len() as u64)?;
        Ok(self.0.write_all(b)?)
    }
    fn tensor<S: Scalar>(&mut self, name: &str, t: &Tensor<S>) -> Result<()> {
        self.bytes(name.as_bytes())?;
        self.u32(t.shape().len() as u32)?;
        for &d in t.shape() {
            self.u64(d as u64)?;
        }
        t.data().iter().try_for_each(|x| self.f64(x.as_f64()))
    }
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|_| bad("file is truncated"))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn len(&mut self, limit: u64, what: &str) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(bad(format!("{what} length {n} is implausible")));
        }
        Ok(n as usize)
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len(1 << 24, "string")?;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b).map_err(|_| bad("file is truncated"))?;
        Ok(b)
    }
    fn tensor<S: Scalar>(&mut self) -> Result<(String, Tensor<S>)> {
        let name = String::from_utf8(self.bytes()?).map_err(|_| bad("tensor name is not UTF-8"))?;
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(bad(format!("tensor `{name}` has {ndim} dimensions")));
        }
        let shape = (0..ndim).map(|_| self.len(1 << 32, "dimension")).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).filter(|&n| n <= 1 << 32);
        let numel = numel.ok_or_else(|| bad(format!("tensor `{name}` is too large")))?;
        let data = (0..numel).map(|_| self.f64().map(S::lit)).collect::<Result<Vec<_>>>()?;
        Ok((name, Tensor::new(shape, data)?))
    }
}

impl<S: Scalar> Checkpoint<S> {
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = Writer(w);
        w.0.write_all(MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        w.bytes(&serde_json::to_vec(&self.model.config)?)?;
        w.u64(self.model.params.len() as u64)?;
        for (name, t) in self.model.params.iter() {
            w.tensor(name, t)?;
        }
        match &self.optimizer {
            None => w.u32(0)?,
            Some(opt) => {
                w.u32(1)?;
                let AdamConfig { lr, beta1, beta2, eps } = opt.config;
                for v in [lr, beta1, beta2, eps] {
                    w.f64(v)?;
                }
                w.u64(opt.step)?;
                for moments in [&opt.m, &opt.v] {
                    w.u64(moments.len() as u64)?;
                    for (name, t) in moments {
                        w.tensor(name, t)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader(r);
        if &r.array::<8>()? != MAGIC {
            return Err(bad("not a densepath checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
        }
        let config: ModelConfig =
            serde_json::from_slice(&r.bytes()?).map_err(|e| bad(format!("model config: {e}")))?;
        config.validate()?;
        let mut params = ParamStore::new();
        for _ in 0..r.len(1 << 20, "parameter table")? {
            let (name, t) = r.tensor()?;
            params.insert(name, t);
        }
        let expected = Model::<S>::new(config.clone(), 0)?;
        for (name, t) in expected.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(bad(format!("`{name}` has shape {:?}, config implies {:?}", p.shape(), t.shape())))
                }
                None => return Err(bad(format!("missing parameter `{name}`"))),
            }
        }
        if params.len() != expected.params.len() {
            return Err(bad("checkpoint has parameters the config does not define"));
        }
        let optimizer = match r.u32()? {
            0 => None,
            1 => {
                let config = AdamConfig { lr: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
                let step = r.u64()?;
                let mut moments = [BTreeMap::new(), BTreeMap::new()];
                for m in &mut moments {
                    for _ in 0..r.len(1 << 20, "moment table")? {
                        let (name, t) = r.tensor()?;
                        if params.get(&name).map(|p| p.shape()) != Some(t.shape()) {
                            return Err(bad(format!("optimizer moment `{name}` does not match the parameters")));
                        }
                        m.insert(name, t);
                    }
                }
                let [m, v] = moments;
                Some(AdamState { config, step, m, v })
            }
            flag => return Err(bad(format!("bad optimizer flag {flag}"))),
        };
        if r.0.read(&mut [0u8])? != 0 {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Self { model: Model { config, params }, optimizer })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        Ok(w.flush()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
