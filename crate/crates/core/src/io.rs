//! Binary dataset container and JSON sidecars.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes   "RSDS"
//! version      u32       1
//! n, m         u64, u64
//! seed         u64
//! provenance   u8        0 clean, 1 perturbed
//! q tag        u8        0 finite, 1 infinity
//! q            f64       0 when clean or infinite
//! delta        f64
//! parent_seed  u64
//! has_mu       u8        followed by n f64 when 1
//! has_coeffs   u8        followed by n·m f64, column-major, when 1
//! samples      n·m f64   column-major
//! ```
//!
//! Metadata lives next to the container in `<path>.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covmodel::{CovarianceModel, Dataset, Provenance};
use crate::error::{Error, Result};
use crate::norms::NormIndex;

const MAGIC: &[u8; 4] = b"RSDS";
const VERSION: u32 = 1;

/// `<path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn put_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Serialize a dataset into the container format.
pub fn encode_dataset<W: Write>(w: &mut W, d: &Dataset) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(d.n() as u64).to_le_bytes())?;
    w.write_all(&(d.m() as u64).to_le_bytes())?;
    w.write_all(&d.seed.to_le_bytes())?;
    let (tag, qtag, q, delta, parent) = match d.provenance {
        Provenance::Clean => (0u8, 0u8, 0.0, 0.0, 0u64),
        Provenance::Perturbed { q, delta, parent_seed } => match q {
            NormIndex::Infinity => (1, 1, 0.0, delta, parent_seed),
            NormIndex::Finite(v) => (1, 0, v, delta, parent_seed),
        },
    };
    w.write_all(&[tag, qtag])?;
    w.write_all(&q.to_le_bytes())?;
    w.write_all(&delta.to_le_bytes())?;
    w.write_all(&parent.to_le_bytes())?;
    match &d.mu {
        Some(mu) => {
            w.write_all(&[1])?;
            put_f64s(w, mu.as_slice())?;
        }
        None => w.write_all(&[0])?,
    }
    match &d.coefficients {
        Some(c) => {
            w.write_all(&[1])?;
            put_f64s(w, c.as_slice())?;
        }
        None => w.write_all(&[0])?,
    }
    put_f64s(w, d.samples.as_slice())
}

struct Cursor<R: Read> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated container: {e}")))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count).map(|_| self.f64()).collect()
    }
}

/// Parse a container written by [`encode_dataset`].
pub fn decode_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut c = Cursor { inner: r };
    if &c.bytes::<4>()? != MAGIC {
        return Err(Error::Format("not a dataset container (bad magic)".into()));
    }
    let version = u32::from_le_bytes(c.bytes()?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let n = c.u64()? as usize;
    let m = c.u64()? as usize;
    let seed = c.u64()?;
    let tag = c.u8()?;
    let qtag = c.u8()?;
    let q = c.f64()?;
    let delta = c.f64()?;
    let parent_seed = c.u64()?;
    let provenance = match (tag, qtag) {
        (0, _) => Provenance::Clean,
        (1, 1) => Provenance::Perturbed { q: NormIndex::Infinity, delta, parent_seed },
        (1, 0) => Provenance::Perturbed { q: NormIndex::Finite(q), delta, parent_seed },
        _ => return Err(Error::Format(format!("unknown provenance tag {tag}/{qtag}"))),
    };
    let mu = match c.u8()? {
        0 => None,
        1 => Some(DVector::from_vec(c.f64s(n)?)),
        t => return Err(Error::Format(format!("bad mean flag {t}"))),
    };
    let coefficients = match c.u8()? {
        0 => None,
        1 => Some(DMatrix::from_vec(n, m, c.f64s(n * m)?)),
        t => return Err(Error::Format(format!("bad coefficient flag {t}"))),
    };
    let samples = DMatrix::from_vec(n, m, c.f64s(n * m)?);
    let mut rest = [0u8; 1];
    if c.inner.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after samples".into()));
    }
    Ok(Dataset { samples, provenance, seed, mu, coefficients })
}

/// Write the container and, when given, its JSON sidecar.
pub fn write_dataset(path: &Path, d: &Dataset, sidecar: Option<&serde_json::Value>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::at(path))?);
    encode_dataset(&mut w, d)?;
    w.flush()?;
    if let Some(meta) = sidecar {
        write_json(&sidecar_path(path), meta)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(BufReader::new(File::open(path).map_err(Error::at(path))?))
}

/// The sidecar of `path`, or `None` if there is none.
pub fn read_sidecar(path: &Path) -> Result<Option<serde_json::Value>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_reader(BufReader::new(File::open(&side).map_err(Error::at(&side))?))?))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::at(path))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Lossless JSON form of a [`CovarianceModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub n: usize,
    pub r: usize,
    pub eigvals: Vec<f64>,
    /// Column-major `n × n`.
    pub basis: Vec<f64>,
    pub kappa: f64,
    pub kappa_exact: bool,
}

impl ModelRecord {
    pub fn from_model(m: &CovarianceModel) -> Self {
        ModelRecord {
            n: m.n,
            r: m.r,
            eigvals: m.eigvals.iter().cloned().collect(),
            basis: m.basis.as_slice().to_vec(),
            kappa: m.kappa,
            kappa_exact: m.kappa_exact,
        }
    }

    /// Rebuild the model with the stored `κ`, without re-measuring.
    pub fn to_model(&self) -> Result<CovarianceModel> {
        if self.eigvals.len() != self.n || self.basis.len() != self.n * self.n {
            return Err(Error::Format("model record has inconsistent sizes".into()));
        }
        Ok(CovarianceModel {
            n: self.n,
            r: self.r,
            eigvals: DVector::from_vec(self.eigvals.clone()),
            basis: DMatrix::from_vec(self.n, self.n, self.basis.clone()),
            kappa: self.kappa,
            kappa_exact: self.kappa_exact,
        })
    }
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
