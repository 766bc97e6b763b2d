//! Checkpoint files.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic            4 bytes  "MLCK"
//! version          u32      currently 1
//! config length    u32      byte count of the key=value snapshot
//! config text      UTF-8    parseable by the config reader
//! epochs done      u32
//! best flag        u8       0 = no dev score yet, 1 = present
//! best dev wer     f64      only when the flag is 1
//! optimizer step   u64
//! param count      u32
//! per parameter, in lexicographic name order:
//!   name length    u32
//!   name           UTF-8
//!   rank           u32
//!   dims           u32 each
//!   values         f64 x numel
//!   moment m       f64 x numel
//!   moment v       f64 x numel
//! ```
//!
//! A checkpoint restores training exactly: parameters, both optimizer
//! moment vectors and the step counter, the epoch cursor, and the full
//! config (whose seed drives all shuffling and augmentation), so a resumed
//! run is bit-identical to one that never stopped.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::config::Config;
use crate::data::files::Cursor;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};
use crate::train::{Adam, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Config,
    pub state: TrainState,
}

impl Checkpoint {
    /// Vocabulary size the parameters were shaped for, read off the
    /// classifier bias.
    pub fn vocab_size(&self) -> Result<usize> {
        let bias = self.state.store.get("classifier.bias")?;
        Ok(bias.numel())
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    let config_text = ckpt.config.to_kv_text();
    buf.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_text.as_bytes());

    buf.extend_from_slice(&(ckpt.state.epochs_done as u32).to_le_bytes());
    match ckpt.state.best_dev_wer {
        Some(w) => {
            buf.push(1);
            buf.extend_from_slice(&w.to_le_bytes());
        }
        None => buf.push(0),
    }
    buf.extend_from_slice(&ckpt.state.adam.t.to_le_bytes());

    let store = &ckpt.state.store;
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let n = tensor.numel();
        let zeros = vec![0.0f64; n];
        let m = ckpt.state.adam.m.get(name).map(|v| v.as_slice()).unwrap_or(&zeros);
        let v = ckpt.state.adam.v.get(name).map(|v| v.as_slice()).unwrap_or(&zeros);
        if m.len() != n || v.len() != n {
            return Err(Error::Shape(format!(
                "optimizer moments for {name} have length {}/{}, parameter has {n}",
                m.len(),
                v.len()
            )));
        }
        for &x in m {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for &x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, offset: 0, path };

    let magic = cur.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        cur.offset = 0;
        return Err(cur.fail(format!("bad magic {magic:02x?}, expected {CHECKPOINT_MAGIC:02x?}")));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(cur.fail(format!("unsupported version {version}")));
    }

    let config_len = cur.u32("config length")? as usize;
    let config_bytes = cur.take(config_len, "config text")?;
    let config_text = std::str::from_utf8(config_bytes)
        .map_err(|e| cur.fail(format!("config text is not UTF-8: {e}")))?;
    let config = Config::from_kv_text(config_text)?;

    let epochs_done = cur.u32("epochs done")? as usize;
    let best_dev_wer = match cur.take(1, "best flag")?[0] {
        0 => None,
        1 => {
            let w = cur.f64("best dev wer")?;
            if !w.is_finite() {
                return Err(cur.fail(format!("non-finite best dev wer {w}")));
            }
            Some(w)
        }
        other => return Err(cur.fail(format!("bad best flag {other}"))),
    };
    let adam_t = cur.u64("optimizer step")?;

    let count = cur.u32("param count")? as usize;
    let mut store = ParamStore::new();
    let mut adam = Adam::new();
    adam.t = adam_t;
    let mut prev_name: Option<String> = None;
    for _ in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name_bytes = cur.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| cur.fail(format!("name is not UTF-8: {e}")))?
            .to_string();
        if let Some(prev) = &prev_name {
            if *prev >= name {
                return Err(cur.fail(format!("names out of order: {prev:?} then {name:?}")));
            }
        }
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = cur.u32("dim")? as usize;
            if d == 0 {
                return Err(cur.fail(format!("zero dimension in {name}")));
            }
            shape.push(d);
        }
        let numel: usize = shape.iter().product();
        let read_block = |cur: &mut Cursor, what: &str| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(numel);
            for _ in 0..numel {
                let x = cur.f64(what)?;
                if !x.is_finite() {
                    return Err(cur.fail(format!("non-finite value in {what} of {name}")));
                }
                out.push(x);
            }
            Ok(out)
        };
        let values = read_block(&mut cur, "values")?;
        let m = read_block(&mut cur, "moment m")?;
        let v = read_block(&mut cur, "moment v")?;
        store.insert(&name, Tensor::new(shape, values)?)?;
        adam.m.insert(name.clone(), m);
        adam.v.insert(name.clone(), v);
        prev_name = Some(name);
    }
    if cur.offset != bytes.len() {
        return Err(cur.fail(format!("{} trailing bytes", bytes.len() - cur.offset)));
    }

    Ok(Checkpoint {
        config,
        state: TrainState { store, adam, epochs_done, best_dev_wer },
    })
}
