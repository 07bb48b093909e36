//! Dense matrix files: CSV (row-major, shortest round-trip decimals) and the
//! `GMAT` binary container (magic, u32 rows, u32 cols, little-endian f64).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::group_matrix::Dense;

pub const GMAT_MAGIC: &[u8; 4] = b"GMAT";

pub fn write_csv<W: Write>(m: &Dense, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Dense> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: '{s}': {e}", rows.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format("ragged rows".into()));
    }
    Ok(Dense::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_gmat<W: Write>(m: &Dense, mut out: W) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| Error::Format("too many rows".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| Error::Format("too many columns".into()))?;
    let mut buf = Vec::with_capacity(12 + 8 * m.len());
    buf.extend_from_slice(GMAT_MAGIC);
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_gmat<R: Read>(mut input: R) -> Result<Dense> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_gmat(&bytes)
}

fn decode_gmat(bytes: &[u8]) -> Result<Dense> {
    if bytes.len() < 12 || &bytes[..4] != GMAT_MAGIC {
        return Err(Error::Format("missing GMAT header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    if payload.len() != rows * cols * 8 {
        return Err(Error::Format(format!(
            "payload of {} bytes for a {rows}x{cols} matrix",
            payload.len()
        )));
    }
    let vals: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Dense::from_row_slice(rows, cols, &vals))
}

/// Reads either format, sniffing the GMAT magic.
pub fn load_matrix(path: &Path) -> Result<Dense> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(GMAT_MAGIC) {
        decode_gmat(&bytes)
    } else {
        read_csv(bytes.as_slice())
    }
}

/// Writes GMAT for a `.gmat` extension, CSV otherwise.
pub fn save_matrix(m: &Dense, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let out = std::io::BufWriter::new(file);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gmat")) {
        write_gmat(m, out)
    } else {
        write_csv(m, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn both_formats_round_trip(rows in 0usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut r = crate::sampling::rng(seed);
            let m = crate::sampling::normal_dense(&mut r, rows, cols) * 1e3;
            let mut csv_buf = Vec::new();
            write_csv(&m, &mut csv_buf).unwrap();
            let back = read_csv(csv_buf.as_slice()).unwrap();
            if rows > 0 {
                prop_assert_eq!(&back, &m);
            }
            let mut bin = Vec::new();
            write_gmat(&m, &mut bin).unwrap();
            prop_assert_eq!(bin.len(), 12 + 8 * rows * cols);
            prop_assert_eq!(read_gmat(bin.as_slice()).unwrap(), m);
        }
    }

    #[test]
    fn header_layout() {
        let m = Dense::from_row_slice(1, 2, &[1.5, -2.0]);
        let mut bin = Vec::new();
        write_gmat(&m, &mut bin).unwrap();
        assert_eq!(&bin[..4], b"GMAT");
        assert_eq!(&bin[4..8], &1u32.to_le_bytes());
        assert_eq!(&bin[8..12], &2u32.to_le_bytes());
        assert_eq!(&bin[12..20], &1.5f64.to_le_bytes());
        assert!(read_gmat(&bin[..15]).is_err());
        assert!(read_gmat(&b"XMAT00000000"[..]).is_err());
    }

    #[test]
    fn ragged_csv_is_rejected() {
        assert!(read_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(read_csv("1,x\n".as_bytes()).is_err());
    }
}
