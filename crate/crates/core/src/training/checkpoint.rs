//! Binary checkpoint: magic, the run configuration as text, then named
//! little-endian `f64` arrays with their shapes.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numeric::{RngSeed, Tensor};

use super::heads::MeanParams;
use super::model::Model;

pub const MAGIC: &[u8; 8] = b"HMRCKPT1";

const MEAN_POSE: &str = "mean.pose";
const MEAN_SHAPE: &str = "mean.shape";
const MEAN_CAMERA: &str = "mean.camera";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("length {v} too large")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_array(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.ndim())?;
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
    }

    fn array(&mut self) -> Result<(String, Tensor)> {
        let n = self.u32()?;
        let name = self.string(n)?;
        let ndim = self.u32()?;
        let shape = (0..ndim)
            .map(|_| usize::try_from(self.u64()?).map_err(|_| Error::Format("dimension overflow".into())))
            .collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| Error::Format(format!("array {name}: size overflow")))?;
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("array {name}: {e}")))?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let store = &self.model.store;
        out.extend_from_slice(&((store.len() + 3) as u64).to_le_bytes());
        for (name, t) in store.iter() {
            put_array(&mut out, name, t)?;
        }
        let means = &self.model.means;
        put_array(&mut out, MEAN_POSE, &means.pose)?;
        put_array(&mut out, MEAN_SHAPE, &means.shape)?;
        put_array(&mut out, MEAN_CAMERA, &Tensor::new(&[3], means.camera.to_vec())?)?;
        Ok(out)
    }

    /// Parses a checkpoint, rebuilding the model from the echoed config and
    /// checking every array name and shape against it.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf, pos: 0 };
        if cur.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let n = usize::try_from(cur.u64()?).map_err(|_| Error::Format("config length overflow".into()))?;
        let config = RunConfig::parse(&cur.string(n)?)?;
        let count = cur.u64()?;
        let mut arrays = Vec::new();
        for _ in 0..count {
            arrays.push(cur.array()?);
        }
        if cur.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint arrays".into()));
        }

        let mut model = Model::new(&config.decoder, RngSeed(0))?;
        let mut take = |name: &str| -> Result<Tensor> {
            let i = arrays
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing {name}")))?;
            Ok(arrays.swap_remove(i).1)
        };
        let camera = take(MEAN_CAMERA)?;
        if camera.shape() != [3] {
            return Err(Error::Format(format!("{MEAN_CAMERA} has shape {:?}", camera.shape())));
        }
        let means = MeanParams {
            pose: take(MEAN_POSE)?,
            shape: take(MEAN_SHAPE)?,
            camera: [camera.data()[0], camera.data()[1], camera.data()[2]],
        };
        means.validate().map_err(|e| Error::Format(format!("mean parameters: {e}")))?;
        let names: Vec<String> = model.store.iter().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            let t = take(name)?;
            let id = model.store.id(name).expect("name from store");
            let dst = model.store.get_mut(id);
            if dst.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "{name}: checkpoint shape {:?}, config implies {:?}",
                    t.shape(),
                    dst.shape()
                )));
            }
            *dst = t;
        }
        if let Some((name, _)) = arrays.first() {
            return Err(Error::Format(format!("unexpected array {name} in checkpoint")));
        }
        model.means = means;
        Ok(Self { config, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
