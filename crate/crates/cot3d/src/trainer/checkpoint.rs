//! Versioned binary checkpoints: magic header, config snapshot, vocab,
//! step counter, parameter blocks, optimizer moments, and the loss log.
//! All floats are stored as little-endian f64 bits, so save -> load ->
//! save is byte-identical.

use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use super::optim::AdamWState;
use crate::encoders::vocab::Vocab;
use crate::error::{CotError, Result};
use crate::tensorkit::{ParamSet, Tensor};

pub const MAGIC: &[u8] = b"COT3D-CKPT v1\n";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub step: u64,
    pub params: ParamSet,
    pub opt: AdamWState,
    pub loss_log: Vec<f64>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.rows() as u32);
        self.u32(t.cols() as u32);
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CotError::Checkpoint("truncated checkpoint file".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64_raw(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CotError::Checkpoint("non-UTF-8 string field".into()))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64_raw()?);
        }
        Tensor::new(rows, cols, data)
            .map_err(|e| CotError::Checkpoint(format!("invalid tensor payload: {e}")))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.str(&ckpt.config.to_text());
    w.str(&ckpt.vocab.to_text());
    w.u64(ckpt.step);
    w.u32(ckpt.params.len() as u32);
    for block in ckpt.params.blocks() {
        w.str(&block.name);
        w.bytes(&[u8::from(block.trainable)]);
        w.tensor(&block.value);
    }
    w.u64(ckpt.opt.t);
    w.u32(ckpt.opt.m.len() as u32);
    for (m, v) in ckpt.opt.m.iter().zip(&ckpt.opt.v) {
        w.tensor(m);
        w.tensor(v);
    }
    w.u32(ckpt.loss_log.len() as u32);
    for &loss in &ckpt.loss_log {
        w.f64(loss);
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &w.buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path)?;
    let mut r = Reader::new(&buf);
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(CotError::Checkpoint(
            "bad magic header (not a checkpoint, or unsupported version)".into(),
        ));
    }
    let config = TrainConfig::from_text(&r.str()?)
        .map_err(|e| CotError::Checkpoint(format!("config snapshot: {e}")))?;
    let vocab = Vocab::from_text(&r.str()?)
        .map_err(|e| CotError::Checkpoint(format!("vocab snapshot: {e}")))?;
    let step = r.u64()?;
    let n_blocks = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n_blocks {
        let name = r.str()?;
        let trainable = r.take(1)?[0] != 0;
        let value = r.tensor()?;
        let idx = params.add(name, value);
        params.get_mut(idx).trainable = trainable;
    }
    let t = r.u64()?;
    let n_moments = r.u32()? as usize;
    if n_moments != n_blocks {
        return Err(CotError::Checkpoint(format!(
            "optimizer tracks {n_moments} blocks, checkpoint has {n_blocks}"
        )));
    }
    let mut m = Vec::with_capacity(n_moments);
    let mut v = Vec::with_capacity(n_moments);
    for _ in 0..n_moments {
        m.push(r.tensor()?);
        v.push(r.tensor()?);
    }
    let n_losses = r.u32()? as usize;
    let mut loss_log = Vec::with_capacity(n_losses);
    for _ in 0..n_losses {
        loss_log.push(r.f64_raw()?);
    }
    if !r.done() {
        return Err(CotError::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(Checkpoint {
        config,
        vocab,
        step,
        params,
        opt: AdamWState { m, v, t },
        loss_log,
    })
}
