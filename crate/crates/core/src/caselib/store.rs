//! Binary persistence for case libraries.
//!
//! Little-endian layout: magic `GCASELIB`, format version, config, the two
//! fingerprints, pool specs (JSON strings), then cases and the cluster model.
//! Missing per-model errors are stored as NaN.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use super::{Case, CaseLibrary, ClusterModel, Fingerprint, KPolicy, LibraryConfig};
use crate::baselines::ForecastModelSpec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GCASELIB";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_library(library: &CaseLibrary, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(library, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_library(path: &Path) -> Result<CaseLibrary> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn encode<W: Write>(lib: &CaseLibrary, w: &mut W) -> std::io::Result<()> {
    let c = &lib.config;
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(c.lookback as u64)?;
    w.write_u64::<LittleEndian>(c.horizon as u64)?;
    w.write_u64::<LittleEndian>(c.period as u64)?;
    match c.k_policy {
        KPolicy::Auto => {
            w.write_u8(0)?;
            w.write_u64::<LittleEndian>(0)?;
        }
        KPolicy::Fixed(k) => {
            w.write_u8(1)?;
            w.write_u64::<LittleEndian>(k as u64)?;
        }
    }
    w.write_u64::<LittleEndian>(c.seed)?;
    w.write_u64::<LittleEndian>(c.max_iter as u64)?;
    w.write_f64::<LittleEndian>(c.tol)?;
    w.write_u8(c.znorm as u8)?;
    w.write_all(&lib.dataset_fingerprint.0)?;
    w.write_all(&lib.pool_fingerprint.0)?;

    w.write_u32::<LittleEndian>(lib.pool.len() as u32)?;
    for spec in &lib.pool {
        let json = serde_json::to_vec(spec).map_err(std::io::Error::other)?;
        w.write_u32::<LittleEndian>(json.len() as u32)?;
        w.write_all(&json)?;
    }

    w.write_u64::<LittleEndian>(lib.cases.len() as u64)?;
    for case in &lib.cases {
        w.write_u64::<LittleEndian>(case.case_id as u64)?;
        w.write_u64::<LittleEndian>(case.anchor as u64)?;
        w.write_u32::<LittleEndian>(case.best_model as u32)?;
        w.write_u32::<LittleEndian>(case.cluster_id as u32)?;
        for v in case.lookback.iter().chain(&case.future) {
            w.write_f64::<LittleEndian>(*v)?;
        }
        for e in &case.per_model_mse {
            w.write_f64::<LittleEndian>(e.unwrap_or(f64::NAN))?;
        }
    }

    let m = &lib.clusters;
    w.write_u64::<LittleEndian>(m.k as u64)?;
    w.write_u64::<LittleEndian>(m.seed)?;
    w.write_u64::<LittleEndian>(m.iterations as u64)?;
    w.write_f64::<LittleEndian>(m.inertia)?;
    let dim = m.centers.first().map_or(0, Vec::len);
    w.write_u64::<LittleEndian>(dim as u64)?;
    for center in &m.centers {
        for v in center {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    w.write_u64::<LittleEndian>(m.objective_history.len() as u64)?;
    for v in &m.objective_history {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::LibraryFormat {
            offset: self.pos as u64,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!(
                "unexpected end of file: needed {n} bytes, {} left",
                self.bytes.len() - self.pos
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }

    /// Reads a count and checks that at least `count * unit` bytes remain.
    fn count(&mut self, unit: usize, what: &str) -> Result<usize> {
        let start = self.pos;
        let n = self.u64()?;
        let left = (self.bytes.len() - self.pos) as u64;
        if n.saturating_mul(unit as u64) > left {
            self.pos = start;
            return self.fail(format!("{what} count {n} exceeds the remaining data"));
        }
        Ok(n as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn fingerprint(&mut self) -> Result<Fingerprint> {
        let mut fp = [0u8; 32];
        fp.copy_from_slice(self.take(32)?);
        Ok(Fingerprint(fp))
    }
}

fn decode(bytes: &[u8]) -> Result<CaseLibrary> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        r.pos = 0;
        return r.fail("not a case library (bad magic)");
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        r.pos -= 4;
        return r.fail(format!("unsupported format version {version}"));
    }
    let lookback = r.u64()? as usize;
    let horizon = r.u64()? as usize;
    let period = r.u64()? as usize;
    let k_policy = match (r.u8()?, r.u64()?) {
        (0, _) => KPolicy::Auto,
        (1, k) => KPolicy::Fixed(k as usize),
        (tag, _) => {
            r.pos -= 9;
            return r.fail(format!("unknown k policy tag {tag}"));
        }
    };
    let config = LibraryConfig {
        lookback,
        horizon,
        period,
        k_policy,
        seed: r.u64()?,
        max_iter: r.u64()? as usize,
        tol: r.f64()?,
        znorm: r.u8()? != 0,
    };
    if lookback == 0 || horizon == 0 {
        return r.fail("zero look-back or horizon length");
    }
    let dataset_fingerprint = r.fingerprint()?;
    let pool_fingerprint = r.fingerprint()?;

    let pool_len = r.u32()? as usize;
    let mut pool = Vec::with_capacity(pool_len.min(1024));
    for _ in 0..pool_len {
        let len = r.u32()? as usize;
        let at = r.pos;
        let spec: ForecastModelSpec = match serde_json::from_slice(r.take(len)?) {
            Ok(spec) => spec,
            Err(e) => {
                r.pos = at;
                return r.fail(format!("bad pool spec: {e}"));
            }
        };
        pool.push(spec);
    }
    if pool.is_empty() {
        return r.fail("empty model pool");
    }

    let case_bytes = lookback
        .saturating_add(horizon)
        .saturating_add(pool_len)
        .saturating_mul(8)
        .saturating_add(24);
    let n_cases = r.count(case_bytes, "case")?;
    let mut cases = Vec::with_capacity(n_cases);
    for _ in 0..n_cases {
        let at = r.pos;
        let case_id = r.u64()? as usize;
        let anchor = r.u64()? as usize;
        let best_model = r.u32()? as usize;
        let cluster_id = r.u32()? as usize;
        if best_model >= pool_len {
            r.pos = at;
            return r.fail(format!("case {case_id} names pool model {best_model}"));
        }
        let lookback = r.f64s(lookback)?;
        let future = r.f64s(horizon)?;
        let per_model_mse = r
            .f64s(pool_len)?
            .into_iter()
            .map(|e| (!e.is_nan()).then_some(e))
            .collect();
        cases.push(Case {
            case_id,
            anchor,
            lookback,
            future,
            best_model,
            per_model_mse,
            cluster_id,
        });
    }

    let k_at = r.pos;
    let k = r.u64()? as usize;
    let seed = r.u64()?;
    let iterations = r.u64()? as usize;
    let inertia = r.f64()?;
    let dim = r.u64()? as usize;
    if dim != config.lookback || k == 0 || k > n_cases {
        r.pos = k_at;
        return r.fail(format!("inconsistent cluster header (k = {k}, dim = {dim})"));
    }
    let needed = k.saturating_mul(dim).saturating_mul(8);
    if needed > bytes.len() - r.pos {
        return r.fail("truncated cluster centers");
    }
    let centers = (0..k).map(|_| r.f64s(dim)).collect::<Result<Vec<_>>>()?;
    let n_hist = r.count(8, "objective history")?;
    let objective_history = r.f64s(n_hist)?;
    if r.pos != bytes.len() {
        return r.fail("trailing bytes after the cluster model");
    }
    if let Some(bad) = cases.iter().find(|c| c.cluster_id >= k) {
        return Err(Error::LibraryFormat {
            offset: k_at as u64,
            reason: format!("case {} assigned to missing cluster {}", bad.case_id, bad.cluster_id),
        });
    }
    let assignments = cases.iter().map(|c| c.cluster_id).collect();

    Ok(CaseLibrary {
        config,
        pool,
        cases,
        clusters: ClusterModel {
            k,
            centers,
            assignments,
            inertia,
            seed,
            iterations,
            objective_history,
        },
        dataset_fingerprint,
        pool_fingerprint,
    })
}
