//! Bit-exact persistence for CSI batches and ground truth (CSIB binary
//! format) and CSV ingestion for externally captured CSI.
//!
//! CSIB layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "CSIB"
//! version u16      1
//! flags   u16      bit0 = impairment block present
//!                  bit1 = true-channel block present
//! P       u32      frames
//! K       u32      subcarriers
//! t_rep   f64
//! t_sym   f64
//! f_c     f64
//! payload P*K * (re f64, im f64), frame-major
//! [impairments]  P * (g1_db, g2_db, tau_s, psi_rad) as f64
//! [true channel] P*K complex f64 pairs, then K static-component
//!                complex pairs, then gamma f64
//! ```

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::{CsiBatch, CsiKind, GroundTruth, SystemParams};

const MAGIC: [u8; 4] = *b"CSIB";
const VERSION: u16 = 1;
const FLAG_IMPAIRMENTS: u16 = 1 << 0;
const FLAG_TRUE_CHANNEL: u16 = 1 << 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 8 + 8 + 8;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn complex(&mut self, v: Complex64) {
        self.f64(v.re);
        self.f64(v.im);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn complex(&mut self) -> Result<Complex64> {
        Ok(Complex64::new(self.f64()?, self.f64()?))
    }
}

fn expected_len(p: usize, k: usize, flags: u16) -> usize {
    let mut n = HEADER_LEN + p * k * 16;
    if flags & FLAG_IMPAIRMENTS != 0 {
        n += p * 4 * 8;
    }
    if flags & FLAG_TRUE_CHANNEL != 0 {
        n += p * k * 16 + k * 16 + 8;
    }
    n
}

/// Serialize a batch (and optionally its ground truth) to CSIB bytes.
pub fn encode_csib(batch: &CsiBatch, truth: Option<&GroundTruth>) -> Result<Vec<u8>> {
    let (p, k) = (batch.frames(), batch.subcarriers());
    if p > u32::MAX as usize || k > u32::MAX as usize {
        return Err(Error::InvalidParams("dimension exceeds u32".into()));
    }
    let mut flags = 0u16;
    if let Some(t) = truth {
        if t.has_impairments() {
            if t.gain_large_db.len() != p
                || t.gain_agc_db.len() != p
                || t.timing_err.len() != p
                || t.cpe.len() != p
            {
                return Err(Error::LengthMismatch {
                    what: "impairment records",
                    expected: p,
                    found: t.gain_large_db.len(),
                });
            }
            flags |= FLAG_IMPAIRMENTS;
        }
        if t.has_channel() {
            if t.static_b.len() != k || t.dynamic_d.len() != p * k {
                return Err(Error::LengthMismatch {
                    what: "true-channel block",
                    expected: p * k,
                    found: t.dynamic_d.len(),
                });
            }
            flags |= FLAG_TRUE_CHANNEL;
        }
    }
    let mut w = Writer {
        buf: Vec::with_capacity(expected_len(p, k, flags)),
    };
    w.buf.extend_from_slice(&MAGIC);
    w.u16(VERSION);
    w.u16(flags);
    w.u32(p as u32);
    w.u32(k as u32);
    w.f64(batch.params.t_rep);
    w.f64(batch.params.t_sym);
    w.f64(batch.params.f_carrier);
    for &c in batch.data() {
        w.complex(c);
    }
    if let Some(t) = truth {
        if flags & FLAG_IMPAIRMENTS != 0 {
            for i in 0..p {
                w.f64(t.gain_large_db[i]);
                w.f64(t.gain_agc_db[i]);
                w.f64(t.timing_err[i]);
                w.f64(t.cpe[i]);
            }
        }
        if flags & FLAG_TRUE_CHANNEL != 0 {
            for i in 0..p * k {
                w.complex(t.static_b[i % k] + t.dynamic_d[i]);
            }
            for &b in &t.static_b {
                w.complex(b);
            }
            w.f64(t.gamma);
        }
    }
    Ok(w.buf)
}

/// Parse CSIB bytes back into a batch and optional ground truth.
///
/// The batch comes back tagged `Observed` (the format does not store the
/// kind) with the default timing-bound parameter.
pub fn decode_csib(bytes: &[u8]) -> Result<(CsiBatch, Option<GroundTruth>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion { found: version });
    }
    let flags = r.u16()?;
    let p = r.u32()? as usize;
    let k = r.u32()? as usize;
    let t_rep = r.f64()?;
    let t_sym = r.f64()?;
    let f_carrier = r.f64()?;
    let want = expected_len(p, k, flags);
    if bytes.len() != want {
        return Err(Error::Corrupt {
            expected: want,
            found: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(p * k);
    for _ in 0..p * k {
        data.push(r.complex()?);
    }
    let params = SystemParams {
        subcarriers: k,
        frames: p,
        t_rep,
        t_sym,
        f_carrier,
        kappa: 20.0,
    };
    let batch = CsiBatch::new(params, data, CsiKind::Observed)?;

    if flags & (FLAG_IMPAIRMENTS | FLAG_TRUE_CHANNEL) == 0 {
        return Ok((batch, None));
    }
    let mut truth = GroundTruth {
        static_b: Vec::new(),
        dynamic_d: Vec::new(),
        gamma: f64::NAN,
        gain_large_db: Vec::new(),
        gain_agc_db: Vec::new(),
        timing_err: Vec::new(),
        cpe: Vec::new(),
    };
    if flags & FLAG_IMPAIRMENTS != 0 {
        truth.gain_large_db.reserve(p);
        for _ in 0..p {
            truth.gain_large_db.push(r.f64()?);
            truth.gain_agc_db.push(r.f64()?);
            truth.timing_err.push(r.f64()?);
            truth.cpe.push(r.f64()?);
        }
    }
    if flags & FLAG_TRUE_CHANNEL != 0 {
        let mut true_h = Vec::with_capacity(p * k);
        for _ in 0..p * k {
            true_h.push(r.complex()?);
        }
        let mut static_b = Vec::with_capacity(k);
        for _ in 0..k {
            static_b.push(r.complex()?);
        }
        truth.gamma = r.f64()?;
        truth.dynamic_d = true_h
            .iter()
            .enumerate()
            .map(|(i, &h)| h - static_b[i % k])
            .collect();
        truth.static_b = static_b;
    }
    Ok((batch, Some(truth)))
}

/// Write a batch (and optional ground truth) to a CSIB file.
pub fn write_csib(path: &Path, batch: &CsiBatch, truth: Option<&GroundTruth>) -> Result<()> {
    let bytes = encode_csib(batch, truth)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a CSIB file.
pub fn read_csib(path: &Path) -> Result<(CsiBatch, Option<GroundTruth>)> {
    let bytes = fs::read(path)?;
    decode_csib(&bytes)
}

/// Import CSI from CSV. Two layouts are accepted, auto-detected from the
/// column count and the given geometry:
///
/// - long: rows `(p, k, re, im)`, P·K rows in any order;
/// - wide: one row per frame with 2K columns `(re_0, im_0, ..., re_{K-1},
///   im_{K-1})`.
///
/// A single header row is detected and skipped when its cells do not
/// parse as numbers.
pub fn import_csv(path: &Path, params: SystemParams) -> Result<CsiBatch> {
    let content = fs::read_to_string(path)?;
    import_csv_str(&content, params)
}

fn parse_cell(field: &str, row: usize, col: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::Csv(format!(
            "non-numeric cell at row {row}, column {col}: {field:?}"
        ))
    })
}

/// CSV import from an in-memory string (see [`import_csv`]).
pub fn import_csv_str(content: &str, params: SystemParams) -> Result<CsiBatch> {
    params.validate()?;
    let (p_count, k_count) = (params.frames, params.subcarriers);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(content.as_bytes());
    let mut records: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Csv("empty file".into()));
    }
    // header: first row with any non-numeric cell
    let has_header = records[0].iter().any(|f| f.trim().parse::<f64>().is_err());
    let rows = if has_header {
        &records[1..]
    } else {
        &records[..]
    };
    if rows.is_empty() {
        return Err(Error::Csv("no data rows".into()));
    }
    let cols = rows[0].len();
    let wide = cols == 2 * k_count && rows.len() == p_count;
    let long = cols == 4 && !wide;
    if wide {
        let mut data = Vec::with_capacity(p_count * k_count);
        for (ri, rec) in rows.iter().enumerate() {
            if rec.len() != cols {
                return Err(Error::Csv(format!(
                    "row {ri} has {} columns, expected {cols}",
                    rec.len()
                )));
            }
            for k in 0..k_count {
                let re = parse_cell(&rec[2 * k], ri, 2 * k)?;
                let im = parse_cell(&rec[2 * k + 1], ri, 2 * k + 1)?;
                data.push(Complex64::new(re, im));
            }
        }
        return CsiBatch::new(params, data, CsiKind::Observed);
    }
    if long {
        let mut data = vec![None; p_count * k_count];
        for (ri, rec) in rows.iter().enumerate() {
            if rec.len() != 4 {
                return Err(Error::Csv(format!(
                    "row {ri} has {} columns, expected 4",
                    rec.len()
                )));
            }
            let pf = parse_cell(&rec[0], ri, 0)?;
            let kf = parse_cell(&rec[1], ri, 1)?;
            if pf.fract() != 0.0 || kf.fract() != 0.0 || pf < 0.0 || kf < 0.0 {
                return Err(Error::Csv(format!(
                    "row {ri}: indices ({pf}, {kf}) are not non-negative integers"
                )));
            }
            let (p, k) = (pf as usize, kf as usize);
            if p >= p_count || k >= k_count {
                return Err(Error::Csv(format!(
                    "row {ri}: index ({p}, {k}) outside {p_count}x{k_count}"
                )));
            }
            let re = parse_cell(&rec[2], ri, 2)?;
            let im = parse_cell(&rec[3], ri, 3)?;
            let slot = &mut data[p * k_count + k];
            if slot.is_some() {
                return Err(Error::Csv(format!("duplicate cell ({p}, {k})")));
            }
            *slot = Some(Complex64::new(re, im));
        }
        let missing = data.iter().filter(|v| v.is_none()).count();
        if missing > 0 {
            let gaps: Vec<String> = data
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_none())
                .take(10)
                .map(|(i, _)| format!("({}, {})", i / k_count, i % k_count))
                .collect();
            return Err(Error::Csv(format!(
                "expected {} rows, found {}; missing cells: {}{}",
                p_count * k_count,
                rows.len(),
                gaps.join(", "),
                if missing > 10 { ", ..." } else { "" }
            )));
        }
        let data = data.into_iter().map(Option::unwrap).collect();
        return CsiBatch::new(params, data, CsiKind::Observed);
    }
    Err(Error::Csv(format!(
        "cannot match layout: {} rows x {cols} columns against P={p_count}, K={k_count} \
         (expected {p_count} rows x {} columns wide, or {} rows x 4 columns long)",
        rows.len(),
        2 * k_count,
        p_count * k_count
    )))
}
