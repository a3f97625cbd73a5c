//! Minimal self-describing columnar binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "RFCOLUMN"
//! format       u16      container format version
//! schema_name  str      u32 length + utf-8
//! schema_ver   u32      version of the table schema stored inside
//! n_rows       u64
//! n_cols       u32
//! per column:  name (str), type tag (u8), payload
//! ```
//!
//! Payloads: `i64`/`f64`/`u32` are packed arrays of `n_rows` values; strings
//! are `n_rows` length-prefixed utf-8 values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RFCOLUMN";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    I64(Vec<i64>),
    F64(Vec<f64>),
    U32(Vec<u32>),
    Str(Vec<String>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::I64(v) => v.len(),
            ColumnData::F64(v) => v.len(),
            ColumnData::U32(v) => v.len(),
            ColumnData::Str(v) => v.len(),
        }
    }

    fn tag(&self) -> u8 {
        match self {
            ColumnData::I64(_) => 1,
            ColumnData::F64(_) => 2,
            ColumnData::U32(_) => 3,
            ColumnData::Str(_) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTable {
    pub schema: String,
    pub schema_version: u32,
    pub columns: Vec<Column>,
}

impl ColumnTable {
    pub fn new(schema: &str, schema_version: u32) -> Self {
        Self {
            schema: schema.to_string(),
            schema_version,
            columns: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, data: ColumnData) -> &mut Self {
        self.columns.push(Column {
            name: name.to_string(),
            data,
        });
        self
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.data.len())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.data)
    }

    pub fn take(&mut self, name: &str, origin: &Path) -> Result<ColumnData> {
        let idx = self
            .columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::format(origin, format!("missing column `{name}`")))?;
        Ok(self.columns.swap_remove(idx).data)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let n = self.n_rows();
        if let Some(c) = self.columns.iter().find(|c| c.data.len() != n) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("column `{}` has {} rows, expected {n}", c.name, c.data.len()),
            ));
        }
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.schema)?;
        w.write_all(&self.schema_version.to_le_bytes())?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&(self.columns.len() as u32).to_le_bytes())?;
        for col in &self.columns {
            write_str(&mut w, &col.name)?;
            w.write_all(&[col.data.tag()])?;
            match &col.data {
                ColumnData::I64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                ColumnData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                ColumnData::U32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                ColumnData::Str(v) => v.iter().try_for_each(|s| write_str(&mut w, s))?,
            }
        }
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(mut r: impl Read, origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(origin, m.to_string());
        let io = |e: std::io::Error| Error::format(origin, format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("not a columnar table (bad magic)"));
        }
        let format = u16::from_le_bytes(read_array(&mut r).map_err(io)?);
        if format != FORMAT_VERSION {
            return Err(bad(&format!("unsupported container version {format}")));
        }
        let schema = read_str(&mut r).map_err(io)?;
        let schema_version = u32::from_le_bytes(read_array(&mut r).map_err(io)?);
        let n = u64::from_le_bytes(read_array(&mut r).map_err(io)?) as usize;
        let n_cols = u32::from_le_bytes(read_array(&mut r).map_err(io)?) as usize;
        let mut columns = Vec::with_capacity(n_cols);
        for _ in 0..n_cols {
            let name = read_str(&mut r).map_err(io)?;
            let [tag] = read_array::<1>(&mut r).map_err(io)?;
            let data = match tag {
                1 => ColumnData::I64(read_packed(&mut r, n, i64::from_le_bytes).map_err(io)?),
                2 => ColumnData::F64(read_packed(&mut r, n, f64::from_le_bytes).map_err(io)?),
                3 => ColumnData::U32(read_packed(&mut r, n, u32::from_le_bytes).map_err(io)?),
                4 => ColumnData::Str((0..n).map(|_| read_str(&mut r)).collect::<std::io::Result<_>>().map_err(io)?),
                t => return Err(bad(&format!("unknown column type tag {t}"))),
            };
            columns.push(Column { name, data });
        }
        Ok(Self {
            schema,
            schema_version,
            columns,
        })
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file), path)
    }

    /// Checks the embedded schema name and version.
    pub fn expect_schema(&self, schema: &str, version: u32, origin: &Path) -> Result<()> {
        if self.schema != schema || self.schema_version != version {
            return Err(Error::format(
                origin,
                format!(
                    "expected schema {schema} v{version}, found {} v{}",
                    self.schema, self.schema_version
                ),
            ));
        }
        Ok(())
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let len = u32::from_le_bytes(read_array(r)?) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

fn read_packed<T, const N: usize>(
    r: &mut impl Read,
    n: usize,
    from: fn([u8; N]) -> T,
) -> std::io::Result<Vec<T>> {
    let mut buf = vec![0u8; n * N];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(N)
        .map(|c| from(c.try_into().expect("chunk size")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(ints in proptest::collection::vec(any::<i64>(), 0..40),
                      names in proptest::collection::vec("[a-zA-Z0-9 ]{0,8}", 0..40)) {
            let n = ints.len().min(names.len());
            let mut t = ColumnTable::new("demo", 3);
            t.push("i", ColumnData::I64(ints[..n].to_vec()))
             .push("f", ColumnData::F64(ints[..n].iter().map(|&x| x as f64 * 0.5).collect()))
             .push("u", ColumnData::U32((0..n as u32).collect()))
             .push("s", ColumnData::Str(names[..n].to_vec()));
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = ColumnTable::read_from(&buf[..], Path::new("mem")).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let err = ColumnTable::read_from(&b"NOTMAGIC"[..], Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
        let mut t = ColumnTable::new("demo", 1);
        t.push("f", ColumnData::F64(vec![1.0, 2.0]));
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(ColumnTable::read_from(&buf[..], Path::new("x")).is_err());
    }
}
