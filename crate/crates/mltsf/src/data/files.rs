//! On-disk formats: binary feature files and the vocabulary list.
//!
//! Feature file layout, all little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "MLTS"
//!      4     4  version, u32 = 1
//!      8     4  T  (frame count, u32)
//!     12     4  C  (channels per frame, u32)
//!     16     4  L  (label count, u32)
//!     20   4*L  label ids, u32 each
//!   20+4L 4*T*C feature values, f32 row-major
//! ```
//!
//! Values are stored as f32; generation quantizes through f32 once, so
//! write-then-read reproduces the in-memory sample bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::{Dataset, FeatureSeq, Sample, Vocab, BLANK_NAME};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MLTS";
pub const FEATURE_VERSION: u32 = 1;
/// Extension used by dataset directories.
pub const FEATURE_EXT: &str = "mlts";

pub fn write_features(path: &Path, sample: &Sample) -> Result<()> {
    let f = &sample.features;
    let mut buf: Vec<u8> =
        Vec::with_capacity(20 + 4 * sample.labels.len() + 4 * f.len() * f.dim());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(f.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(f.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(sample.labels.len() as u32).to_le_bytes());
    for &l in &sample.labels {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for &v in f.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub(crate) struct Cursor<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) offset: usize,
    pub(crate) path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub(crate) fn fail(&self, what: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.display().to_string(),
            offset: self.offset as u64,
            what: what.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} left",
                self.bytes.len() - self.offset
            )));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let s = self.take(4, what)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let s = self.take(8, what)?;
        Ok(u64::from_le_bytes(s.try_into().expect("take returned 8 bytes")))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        let s = self.take(4, what)?;
        Ok(f32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        let s = self.take(8, what)?;
        Ok(f64::from_le_bytes(s.try_into().expect("take returned 8 bytes")))
    }
}

/// Read one feature file. The sample's seed field is not part of the format
/// and comes back as 0.
pub fn read_features(path: &Path) -> Result<Sample> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, offset: 0, path };

    let magic = cur.take(4, "magic")?;
    if magic != FEATURE_MAGIC {
        cur.offset = 0;
        return Err(cur.fail(format!("bad magic {magic:02x?}, expected {FEATURE_MAGIC:02x?}")));
    }
    let version_at = cur.offset;
    let version = cur.u32("version")?;
    if version != FEATURE_VERSION {
        cur.offset = version_at;
        return Err(cur.fail(format!("unsupported version {version}")));
    }
    let t = cur.u32("frame count")? as usize;
    let c = cur.u32("channel count")? as usize;
    let l = cur.u32("label count")? as usize;
    if t == 0 || c == 0 {
        cur.offset = 8;
        return Err(cur.fail(format!("empty feature matrix {t}x{c}")));
    }
    if l == 0 {
        cur.offset = 16;
        return Err(cur.fail("no labels"));
    }
    let mut labels = Vec::with_capacity(l);
    for _ in 0..l {
        labels.push(cur.u32("label id")? as usize);
    }
    let mut data = Vec::with_capacity(t * c);
    for _ in 0..t * c {
        let at = cur.offset;
        let v = cur.f32("feature value")?;
        if !v.is_finite() {
            cur.offset = at;
            return Err(cur.fail(format!("non-finite feature value {v}")));
        }
        data.push(v as f64);
    }
    if cur.offset != bytes.len() {
        return Err(cur.fail(format!("{} trailing bytes", bytes.len() - cur.offset)));
    }
    let features = FeatureSeq::new(t, c, data)?;
    Ok(Sample { features, labels, seed: 0 })
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    for name in vocab.names() {
        out.push_str(name);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path)?;
    let names: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
    if names.first().map(|s| s.as_str()) != Some(BLANK_NAME) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            offset: 0,
            what: format!("first vocabulary line must be {BLANK_NAME:?}"),
        });
    }
    Vocab::new(names)
}

/// Load `vocab.txt` plus every `.mlts` file in a directory, sorted by file
/// name. Label ids are validated against the vocabulary.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let vocab = read_vocab(&dir.join("vocab.txt"))?;
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(FEATURE_EXT))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no .{FEATURE_EXT} files in {}", dir.display())));
    }
    let mut samples = Vec::with_capacity(paths.len());
    for p in &paths {
        let s = read_features(p)?;
        if let Some(&bad) = s.labels.iter().find(|&&l| l == 0 || l >= vocab.size()) {
            return Err(Error::Parse {
                path: p.display().to_string(),
                offset: 20,
                what: format!("label id {bad} invalid for vocabulary of size {}", vocab.size()),
            });
        }
        samples.push(s);
    }
    Ok(Dataset { vocab, samples })
}

/// Write a whole split into a directory as numbered feature files.
pub fn write_split(dir: &Path, prefix: &str, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let width = samples.len().to_string().len().max(4);
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{prefix}{i:0width$}.{FEATURE_EXT}");
        write_features(&dir.join(name), s)?;
    }
    Ok(())
}
