//! Binary model checkpoints. All integers and floats are little-endian.
//!
//! | field | type |
//! |---|---|
//! | magic `LIFT3DCK` | 8 bytes |
//! | format version (1) | u32 |
//! | flags, bit 0 = optimizer state follows | u32 |
//! | latent_dim, style_dim, style_layers, mapping_layers, base_res, base_channels, kernel, plane_channels, decoder_hidden | 9 x u32 |
//! | stage count `s`, then `s` stage widths | u32, s x u32 |
//! | omega0, density_gain | 2 x f64 |
//! | parameter count `n`, then the parameters | u64, n x f64 |
//! | object count `k`, latent dim `d` | 2 x u32 |
//! | per object: id byte length, UTF-8 id, latent | u32, bytes, d x f64 |
//! | optimizer: step | u64 |
//! | optimizer: Adam block for the parameters, then one per object | see below |
//!
//! An Adam block is `lr, beta1, beta2, eps` (4 x f64), its step (u64), then
//! the first and second moments (2 x len f64).
//!
//! Parameters are stored in the generator's declared tensor order: mapping
//! layers (weight then bias), the constant base grid, each synthesis stage
//! (conv weight, conv bias, modulation gain weight and bias, shift weight and
//! bias), the plane projection (same fields), then the decoder linear layer,
//! FiLM gain and shift, density head and color head. Dense weights are
//! `[out][in]` and conv weights `[out][in][ky][kx]`.

use crate::error::{Error, Result};
use lift3d_core::generator::{GeneratorConfig, GeneratorParams, LatentCode};
use lift3d_core::optim::{Adam, OptimState};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"LIFT3DCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: GeneratorParams,
    pub ids: Vec<String>,
    pub latents: Vec<LatentCode>,
    /// Optimizer state for resuming; the loss history is not stored.
    pub optimizer: Option<OptimState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn len32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Usage(format!("{v} does not fit the checkpoint's u32 field")))?;
        self.u32(v);
        Ok(())
    }
    fn adam(&mut self, a: &Adam) {
        self.f64s(&[a.lr, a.beta1, a.beta2, a.eps]);
        self.u64(a.step);
        self.f64s(&a.m);
        self.f64s(&a.v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated checkpoint at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.path, "length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    fn adam(&mut self, len: usize) -> Result<Adam> {
        let (lr, beta1, beta2, eps) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let step = self.u64()?;
        Ok(Adam { lr, beta1, beta2, eps, step, m: self.f64s(len)?, v: self.f64s(len)? })
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.ids.len() != self.latents.len() {
            return Err(Error::Usage(format!("{} ids for {} latents", self.ids.len(), self.latents.len())));
        }
        let cfg = self.params.config();
        let mut w = Writer(Vec::with_capacity(64 + 8 * self.params.len() * if self.optimizer.is_some() { 3 } else { 1 }));
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u32(self.optimizer.is_some() as u32);
        for v in [
            cfg.latent_dim,
            cfg.style_dim,
            cfg.style_layers,
            cfg.mapping_layers,
            cfg.base_res,
            cfg.base_channels,
            cfg.kernel,
            cfg.plane_channels,
            cfg.decoder_hidden,
            cfg.stage_channels.len(),
        ] {
            w.len32(v)?;
        }
        for &c in &cfg.stage_channels {
            w.len32(c)?;
        }
        w.f64s(&[cfg.omega0, cfg.density_gain]);
        w.u64(self.params.len() as u64);
        w.f64s(self.params.data());
        w.len32(self.latents.len())?;
        w.len32(cfg.latent_dim)?;
        for (id, z) in self.ids.iter().zip(&self.latents) {
            if z.dim() != cfg.latent_dim {
                return Err(Error::Usage(format!("latent of {id} has dim {}, expected {}", z.dim(), cfg.latent_dim)));
            }
            w.len32(id.len())?;
            w.0.extend_from_slice(id.as_bytes());
            w.f64s(&z.0);
        }
        if let Some(s) = &self.optimizer {
            if s.latents.len() != self.latents.len() {
                return Err(Error::Usage("optimizer state and latent table disagree on the object count".into()));
            }
            w.u64(s.step);
            w.adam(&s.params);
            for a in &s.latents {
                w.adam(a);
            }
        }
        Ok(w.0)
    }

    pub fn decode(buf: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { buf, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a lift3d checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let flags = r.u32()?;
        let mut dims = [0usize; 10];
        for d in &mut dims {
            *d = r.usize()?;
        }
        let stage_channels = (0..dims[9]).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let cfg = GeneratorConfig {
            latent_dim: dims[0],
            style_dim: dims[1],
            style_layers: dims[2],
            mapping_layers: dims[3],
            base_res: dims[4],
            base_channels: dims[5],
            kernel: dims[6],
            plane_channels: dims[7],
            decoder_hidden: dims[8],
            stage_channels,
            omega0: r.f64()?,
            density_gain: r.f64()?,
        };
        let n = usize::try_from(r.u64()?).map_err(|_| Error::format(path, "parameter count overflows"))?;
        let params = GeneratorParams::from_data(cfg, r.f64s(n)?).map_err(|e| Error::format(path, e.to_string()))?;
        let (k, d) = (r.usize()?, r.usize()?);
        if d != params.config().latent_dim {
            return Err(Error::format(path, format!("latent table dim {d} disagrees with the config")));
        }
        let mut ids = Vec::with_capacity(k);
        let mut latents = Vec::with_capacity(k);
        for _ in 0..k {
            let len = r.usize()?;
            let id = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format(path, "object id is not UTF-8"))?;
            ids.push(id.to_string());
            latents.push(LatentCode(r.f64s(d)?));
        }
        let optimizer = if flags & 1 == 1 {
            let step = r.u64()?;
            let p = r.adam(params.len())?;
            let lat = (0..k).map(|_| r.adam(d)).collect::<Result<Vec<_>>>()?;
            Some(OptimState { step, params: p, latents: lat, history: Vec::new() })
        } else {
            None
        };
        if r.pos != buf.len() {
            return Err(Error::format(path, format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint { params, ids, latents, optimizer })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&buf, path)
    }
}
