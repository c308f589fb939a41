//! `MDCK` checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! b"MDCK" | version u32 = 1
//! config: count u32, then per entry key (u32 len + utf8), value (u32 len + utf8)
//! params: count u32, then per entry name (u32 len + utf8), ndim u32, dims u32..., values f64...
//! adam:   flag u8; if 1: step u64, beta1 f64, beta2 f64, eps f64, then m and v
//!         values for every parameter in table order
//! epoch u64 | step u64
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::diff::{AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
    pub epoch: u64,
    pub step: u64,
}

impl Checkpoint {
    pub fn new(config: BTreeMap<String, String>, params: ParamStore) -> Self {
        Self {
            config,
            params,
            adam: None,
            epoch: 0,
            step: 0,
        }
    }

    pub fn config_value(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::ShapeTableMismatch(format!("checkpoint config lacks `{key}`")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.len(self.config.len())?;
        for (k, v) in &self.config {
            w.str(k)?;
            w.str(v)?;
        }
        w.len(self.params.len())?;
        for (name, t) in self.params.iter() {
            w.str(name)?;
            w.len(t.shape().len())?;
            for &d in t.shape() {
                w.len(d)?;
            }
            w.f64s(t.data());
        }
        match &self.adam {
            None => w.buf.push(0),
            Some(a) => {
                if !a.matches(&self.params) {
                    return Err(Error::ShapeTableMismatch("optimizer moments do not match parameters".into()));
                }
                w.buf.push(1);
                w.buf.extend_from_slice(&a.step.to_le_bytes());
                w.f64s(&[a.beta1, a.beta2, a.eps]);
                for t in a.m.iter().chain(&a.v) {
                    w.f64s(t.data());
                }
            }
        }
        w.buf.extend_from_slice(&self.epoch.to_le_bytes());
        w.buf.extend_from_slice(&self.step.to_le_bytes());
        Ok(w.buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: "MDCK" });
        }
        r.pos = 4;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut config = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            let v = r.str()?;
            config.insert(k, v);
        }
        let mut params = ParamStore::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            if ndim > 4 {
                return Err(Error::MalformedHeader(format!("parameter {name} has {ndim} dims")));
            }
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(Error::TruncatedPayload)?;
            let data = r.f64s(count)?;
            params.insert(name, Tensor::new(&shape, data)?);
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let h = r.f64s(3)?;
                let mut state = AdamState::new(&params, h[0], h[1], h[2]);
                state.step = step;
                for t in state.m.iter_mut().chain(state.v.iter_mut()) {
                    let values = r.f64s(t.len())?;
                    t.data_mut().copy_from_slice(&values);
                }
                Some(state)
            }
            f => return Err(Error::MalformedHeader(format!("bad optimizer flag {f}"))),
        };
        let epoch = r.u64()?;
        let step = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::MalformedHeader(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            params,
            adam,
            epoch,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, n: usize) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("length {n} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.len(s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn f64s(&mut self, values: &[f64]) {
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedPayload)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::TruncatedPayload)?;
        self.pos = end;
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

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::MalformedHeader("string is not utf-8".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::TruncatedPayload)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
