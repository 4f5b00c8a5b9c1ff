//! Dataset files.
//!
//! CSV: header `n,k,mask,mu,sigma,label,x1,x2,x3,x4`; `mask` is a 0/1 string
//! over the n positions, `label` is 1 for out of control, unused coordinates
//! are empty. Floats use the shortest representation that round-trips.
//!
//! Binary (all integers and floats little-endian):
//!
//! ```text
//! "QCDS" | version: u8 | n: u8 | count: u64
//! count x ( mask: u8 | label: u8 | mu: f64 | sigma: f64 | x: n x f64 )
//! ```

use std::io::{BufRead, Read, Write};

use super::{ContaminationPattern, PositionMask, TupleRecord, MAX_N};
use crate::error::{format_err, Error, FormatErrorCode, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"QCDS";
pub const DATASET_FORMAT_VERSION: u8 = 1;

const CSV_HEADER: &str = "n,k,mask,mu,sigma,label,x1,x2,x3,x4";

pub fn write_csv<'a, W, I>(mut out: W, records: I) -> Result<u64>
where
    W: Write,
    I: IntoIterator<Item = &'a TupleRecord<f64>>,
{
    writeln!(out, "{CSV_HEADER}")?;
    let mut count = 0;
    for r in records {
        let p = &r.pattern;
        write!(
            out,
            "{},{},{},{},{},{}",
            p.n(),
            p.k(),
            p.mask().to_bit_string(p.n()),
            p.mu(),
            p.sigma(),
            u8::from(r.label)
        )?;
        for i in 0..MAX_N {
            match r.values().get(i) {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
        count += 1;
    }
    Ok(count)
}

fn csv_err(line: usize, msg: impl std::fmt::Display) -> Error {
    format_err(FormatErrorCode::Inconsistent, format!("line {line}: {msg}"))
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<TupleRecord<f64>>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some(CSV_HEADER) {
        return Err(format_err(FormatErrorCode::BadMagic, "missing dataset CSV header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 + MAX_N {
            return Err(csv_err(lineno, format!("expected {} fields", 6 + MAX_N)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| csv_err(lineno, e));
        let n: usize = fields[0].parse().map_err(|e| csv_err(lineno, e))?;
        let k: usize = fields[1].parse().map_err(|e| csv_err(lineno, e))?;
        let mask = PositionMask::parse_bit_string(fields[2]).map_err(|e| csv_err(lineno, e))?;
        let pattern = ContaminationPattern::new(n, mask, num(fields[3])?, num(fields[4])?)
            .map_err(|e| csv_err(lineno, e))?;
        if pattern.k() != k || fields[5] != if pattern.k() > 0 { "1" } else { "0" } {
            return Err(csv_err(lineno, "k/label disagree with mask"));
        }
        let values = fields[6..6 + n].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        out.push(TupleRecord::new(&values, pattern)?);
    }
    Ok(out)
}

pub fn write_binary<'a, W, I>(mut out: W, n: usize, records: I) -> Result<u64>
where
    W: Write,
    I: IntoIterator<Item = &'a TupleRecord<f64>>,
    I::IntoIter: ExactSizeIterator,
{
    let records = records.into_iter();
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&[DATASET_FORMAT_VERSION, n as u8])?;
    out.write_all(&(records.len() as u64).to_le_bytes())?;
    let mut count = 0;
    for r in records {
        if r.n() != n {
            return Err(Error::Shape(format!("record with n = {} in an n = {n} file", r.n())));
        }
        let p = &r.pattern;
        out.write_all(&[p.mask().bits(), u8::from(r.label)])?;
        out.write_all(&p.mu().to_le_bytes())?;
        out.write_all(&p.sigma().to_le_bytes())?;
        for v in r.values() {
            out.write_all(&v.to_le_bytes())?;
        }
        count += 1;
    }
    Ok(count)
}

fn read_exact_or_truncated<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err(FormatErrorCode::Truncated, "unexpected end of dataset file"),
        _ => Error::Io(e),
    })
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(input, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Vec<TupleRecord<f64>>> {
    let mut header = [0u8; 14];
    read_exact_or_truncated(&mut input, &mut header)?;
    if &header[..4] != DATASET_MAGIC {
        return Err(format_err(FormatErrorCode::BadMagic, "not a QCDS file"));
    }
    if header[4] != DATASET_FORMAT_VERSION {
        return Err(format_err(
            FormatErrorCode::UnsupportedVersion,
            format!("dataset version {} (expected {DATASET_FORMAT_VERSION})", header[4]),
        ));
    }
    let n = header[5] as usize;
    let count = u64::from_le_bytes(header[6..14].try_into().expect("8 bytes"));
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut values = [0.0; MAX_N];
    for _ in 0..count {
        let mut tag = [0u8; 2];
        read_exact_or_truncated(&mut input, &mut tag)?;
        let mu = read_f64(&mut input)?;
        let sigma = read_f64(&mut input)?;
        let pattern = ContaminationPattern::new(n, PositionMask::from_bits(tag[0]), mu, sigma)
            .map_err(|e| format_err(FormatErrorCode::Inconsistent, e.to_string()))?;
        if u8::from(pattern.k() > 0) != tag[1] {
            return Err(format_err(FormatErrorCode::Inconsistent, "label disagrees with mask"));
        }
        for v in values.iter_mut().take(n) {
            *v = read_f64(&mut input)?;
        }
        out.push(TupleRecord::new(&values[..n], pattern)?);
    }
    Ok(out)
}
