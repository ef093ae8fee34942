//! Matrix persistence.
//!
//! `.bmf` files start with a one-line JSON header
//! `{"n":…,"bands":…,"layout":"banded_lower"|"dense","dtype":"f64"}` followed
//! by raw little-endian `f64` values. Banded matrices store their compact
//! `n × bands` rows; dense matrices store all `n × n` entries row-major.
//!
//! CSV import / export always uses the densified matrix.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::banded::BandedLowerTriangular;
use crate::dense::DenseMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    BandedLower,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmfHeader {
    pub n: usize,
    pub bands: usize,
    pub layout: Layout,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredMatrix {
    Banded(BandedLowerTriangular),
    Dense(DenseMatrix),
}

impl StoredMatrix {
    pub fn n(&self) -> usize {
        match self {
            StoredMatrix::Banded(c) => c.n(),
            StoredMatrix::Dense(m) => m.rows(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            StoredMatrix::Banded(c) => c.to_dense(),
            StoredMatrix::Dense(m) => m.clone(),
        }
    }

    /// Lower-triangular encoder view. Dense matrices are compacted with their
    /// full bandwidth and must be lower triangular.
    pub fn into_banded(self) -> Result<BandedLowerTriangular> {
        match self {
            StoredMatrix::Banded(c) => Ok(c),
            StoredMatrix::Dense(m) => {
                let bands = m.bandwidth().max(1);
                BandedLowerTriangular::from_dense(&m, bands)
            }
        }
    }
}

pub fn write_bmf<W: Write>(mut w: W, m: &StoredMatrix) -> Result<()> {
    let (header, values): (BmfHeader, &[f64]) = match m {
        StoredMatrix::Banded(c) => (
            BmfHeader {
                n: c.n(),
                bands: c.bands(),
                layout: Layout::BandedLower,
                dtype: "f64".into(),
            },
            c.data(),
        ),
        StoredMatrix::Dense(d) => {
            if !d.is_square() {
                return Err(Error::Format("dense .bmf matrices must be square".into()));
            }
            (
                BmfHeader {
                    n: d.rows(),
                    bands: d.rows(),
                    layout: Layout::Dense,
                    dtype: "f64".into(),
                },
                d.values(),
            )
        }
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_bmf<R: Read>(r: R) -> Result<StoredMatrix> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("missing header line".into()));
    }
    let header: BmfHeader = serde_json::from_slice(&line[..line.len() - 1])?;
    if header.dtype != "f64" {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    let count = match header.layout {
        Layout::BandedLower => header.n * header.bands,
        Layout::Dense => header.n * header.n,
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    match header.layout {
        Layout::BandedLower => Ok(StoredMatrix::Banded(BandedLowerTriangular::new(
            header.n,
            header.bands,
            values,
        )?)),
        Layout::Dense => Ok(StoredMatrix::Dense(DenseMatrix::from_vec(
            header.n, header.n, values,
        )?)),
    }
}

pub fn save_bmf(path: impl AsRef<Path>, m: &StoredMatrix) -> Result<()> {
    write_bmf(BufWriter::new(File::create(path)?), m)
}

pub fn load_bmf(path: impl AsRef<Path>) -> Result<StoredMatrix> {
    read_bmf(File::open(path)?)
}

pub fn write_csv<W: Write>(w: W, m: &DenseMatrix) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..m.rows() {
        wr.write_record(m.row(i).iter().map(|v| format!("{v:?}")))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<DenseMatrix> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad CSV value {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    DenseMatrix::from_rows(&rows)
}
