//! Walk results on disk: an exact little-endian binary record and a CSV
//! view for plotting.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic "SIMECWLK" | version u32
//! mode u8 | steps u64 | delta f64 | eps f64 | relative_eps u8 | seed u64
//! tau opt | energy_budget opt | initial_direction opt-vec
//! points u64 | input_dim u64 | output_dim u64
//! points f64[points·input_dim] | outputs f64[points·output_dim]
//! signature hashes u64[points] | kernel dims u32[points]
//! increments (dE, dPl) f64[2·points]
//! energy f64 | pseudolength f64 | termination u8 | tau_used opt
//! ```
//!
//! `opt` is a presence byte followed by an `f64` when present; `opt-vec` is
//! a presence byte, a `u64` length and the entries.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::walk::{Increment, Termination, WalkConfig, WalkMode, WalkResult};

pub const WALK_MAGIC: &[u8; 8] = b"SIMECWLK";
pub const WALK_VERSION: u32 = 1;

/// A walk as persisted: configuration echo and every retained point.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkRecord {
    pub config: WalkConfig,
    pub points: Vec<Vector>,
    pub outputs: Vec<Vector>,
    pub signature_hashes: Vec<u64>,
    pub kernel_dims: Vec<usize>,
    pub increments: Vec<Increment>,
    pub energy: f64,
    pub pseudolength: f64,
    pub termination: Termination,
    pub tau: Option<f64>,
}

impl WalkRecord {
    pub fn from_result(config: &WalkConfig, r: &WalkResult) -> Self {
        WalkRecord {
            config: config.clone(),
            points: r.points.clone(),
            outputs: r.outputs.clone(),
            signature_hashes: r.signatures.iter().map(|s| s.hash64()).collect(),
            kernel_dims: r.kernel_dims.clone(),
            increments: r.increments.clone(),
            energy: r.energy,
            pseudolength: r.pseudolength,
            termination: r.termination,
            tau: r.tau,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn dims(&self) -> Result<(usize, usize)> {
        let n = self.points.len();
        let d = self.points.first().map_or(0, |p| p.dim());
        let m = self.outputs.first().map_or(0, |o| o.dim());
        let consistent = self.outputs.len() == n
            && self.signature_hashes.len() == n
            && self.kernel_dims.len() == n
            && self.increments.len() == n
            && self.points.iter().all(|p| p.dim() == d)
            && self.outputs.iter().all(|o| o.dim() == m);
        if !consistent {
            return Err(Error::shape("walk record rows are inconsistent"));
        }
        Ok((d, m))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let (d, m) = self.dims()?;
        let n = self.points.len();
        let mut w = Vec::with_capacity(128 + n * (8 * (d + m) + 28));
        w.extend_from_slice(WALK_MAGIC);
        w.extend_from_slice(&WALK_VERSION.to_le_bytes());
        let c = &self.config;
        w.push(WalkMode::ALL.iter().position(|&x| x == c.mode).expect("listed") as u8);
        put_u64(&mut w, c.steps as u64);
        put_f64(&mut w, c.delta);
        put_f64(&mut w, c.eps);
        w.push(c.relative_eps as u8);
        put_u64(&mut w, c.seed);
        put_opt(&mut w, c.tau);
        put_opt(&mut w, c.energy_budget);
        match &c.initial_direction {
            None => w.push(0),
            Some(v) => {
                w.push(1);
                put_u64(&mut w, v.dim() as u64);
                v.iter().for_each(|&x| put_f64(&mut w, x));
            }
        }
        put_u64(&mut w, n as u64);
        put_u64(&mut w, d as u64);
        put_u64(&mut w, m as u64);
        for p in &self.points {
            p.iter().for_each(|&x| put_f64(&mut w, x));
        }
        for o in &self.outputs {
            o.iter().for_each(|&x| put_f64(&mut w, x));
        }
        self.signature_hashes.iter().for_each(|&h| put_u64(&mut w, h));
        for &k in &self.kernel_dims {
            w.extend_from_slice(&(k as u32).to_le_bytes());
        }
        for inc in &self.increments {
            put_f64(&mut w, inc.energy);
            put_f64(&mut w, inc.pseudolength);
        }
        put_f64(&mut w, self.energy);
        put_f64(&mut w, self.pseudolength);
        w.push(self.termination.code());
        put_opt(&mut w, self.tau);
        Ok(w)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != WALK_MAGIC {
            return Err(Error::format("not a walk record"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != WALK_VERSION {
            return Err(Error::Version {
                found: version,
                supported: WALK_VERSION,
            });
        }
        let mode = *WalkMode::ALL
            .get(r.u8()? as usize)
            .ok_or_else(|| Error::format("unknown walk mode code"))?;
        let steps = r.len()?;
        let delta = r.f64()?;
        let eps = r.f64()?;
        let relative_eps = r.flag()?;
        let seed = r.u64()?;
        let tau = r.opt()?;
        let energy_budget = r.opt()?;
        let initial_direction = if r.flag()? {
            let k = r.len()?;
            Some(r.vector(k)?)
        } else {
            None
        };
        let config = WalkConfig {
            mode,
            steps,
            delta,
            eps,
            relative_eps,
            tau,
            seed,
            energy_budget,
            initial_direction,
        };
        let n = r.len()?;
        let d = r.len()?;
        let m = r.len()?;
        let expected = n
            .checked_mul(8 * (d + m) + 28)
            .ok_or_else(|| Error::format("walk record sizes overflow"))?;
        if r.remaining() < expected {
            return Err(Error::format("walk record is truncated"));
        }
        let points = (0..n).map(|_| r.vector(d)).collect::<Result<Vec<_>>>()?;
        let outputs = (0..n).map(|_| r.vector(m)).collect::<Result<Vec<_>>>()?;
        let signature_hashes = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let kernel_dims = (0..n)
            .map(|_| Ok(u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize))
            .collect::<Result<Vec<_>>>()?;
        let increments = (0..n)
            .map(|_| {
                Ok(Increment {
                    energy: r.f64()?,
                    pseudolength: r.f64()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let energy = r.f64()?;
        let pseudolength = r.f64()?;
        let termination =
            Termination::from_code(r.u8()?).ok_or_else(|| Error::format("unknown termination code"))?;
        let tau_used = r.opt()?;
        if r.remaining() != 0 {
            return Err(Error::format("trailing bytes after walk record"));
        }
        Ok(WalkRecord {
            config,
            points,
            outputs,
            signature_hashes,
            kernel_dims,
            increments,
            energy,
            pseudolength,
            termination,
            tau: tau_used,
        })
    }
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_opt(w: &mut Vec<u8>, v: Option<f64>) {
    match v {
        None => w.push(0),
        Some(x) => {
            w.push(1);
            put_f64(w, x);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.remaining() < k {
            return Err(Error::format("walk record is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::format(format!("bad flag byte {b}"))),
        }
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format("length does not fit in memory"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn opt(&mut self) -> Result<Option<f64>> {
        Ok(if self.flag()? { Some(self.f64()?) } else { None })
    }

    fn vector(&mut self, k: usize) -> Result<Vector> {
        (0..k).map(|_| self.f64()).collect::<Result<Vec<_>>>().map(Vector::from)
    }
}

pub fn write_walk(record: &WalkRecord, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, record.encode()?)?;
    Ok(())
}

pub fn read_walk(path: impl AsRef<Path>) -> Result<WalkRecord> {
    WalkRecord::decode(&std::fs::read(path)?)
}

/// 17 significant digits, enough to recover every `f64` exactly.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per point: `step,x0..,out0..,dE,dPl`.
pub fn write_walk_csv(record: &WalkRecord, mut out: impl Write) -> Result<()> {
    let (d, m) = record.dims()?;
    let mut header = vec!["step".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("out{i}")));
    header.push("dE".into());
    header.push("dPl".into());
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for (k, (p, o)) in record.points.iter().zip(&record.outputs).enumerate() {
        line.clear();
        line.push_str(&k.to_string());
        let inc = record.increments[k];
        for &x in p.iter().chain(o.iter()).chain([inc.energy, inc.pseudolength].iter()) {
            line.push(',');
            line.push_str(&format_float(x));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
