//! Binary lookup-table format, little-endian throughout:
//!
//! ```text
//! magic       4 bytes  "LCPT"
//! version     u32
//! axis count  u32
//! per axis    u32 node count, then that many f64 node coordinates
//! samples     u64      Monte Carlo samples per node
//! seed        u64      build seed
//! values      f64 × product(node counts), row-major (last axis fastest)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::scalar::Scalar;

use super::{Chart, GridSpec, LookupTable, ProbError, TableMeta};

pub const MAGIC: [u8; 4] = *b"LCPT";
pub const FORMAT_VERSION: u32 = 1;

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], ProbError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ProbError::Format("truncated".into()),
        _ => ProbError::Io(e),
    })?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, ProbError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ProbError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64, ProbError> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

impl<T: Scalar> LookupTable<T> {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ProbError> {
        w.write_all(&MAGIC)?;
        w.write_all(&self.meta.version.to_le_bytes())?;
        w.write_all(&(self.grid.axes.len() as u32).to_le_bytes())?;
        for axis in &self.grid.axes {
            w.write_all(&(axis.len() as u32).to_le_bytes())?;
            for x in axis {
                w.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        w.write_all(&self.meta.samples.to_le_bytes())?;
        w.write_all(&self.meta.seed.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ProbError> {
        let magic: [u8; 4] = read_array(&mut r)?;
        if magic != MAGIC {
            return Err(ProbError::Format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(ProbError::Format(format!("unsupported version {version}")));
        }
        let n_axes = read_u32(&mut r)? as usize;
        if n_axes != Chart::AXES {
            return Err(ProbError::Format(format!(
                "expected {} axes, got {n_axes}",
                Chart::AXES
            )));
        }
        let mut axes = Vec::with_capacity(n_axes);
        for _ in 0..n_axes {
            let n = read_u32(&mut r)? as usize;
            if n > 1 << 20 {
                return Err(ProbError::Format(format!("implausible axis length {n}")));
            }
            let axis = (0..n)
                .map(|_| read_f64(&mut r).map(T::of))
                .collect::<Result<Vec<_>, _>>()?;
            axes.push(axis);
        }
        let samples = read_u64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let grid = GridSpec::new(axes)?;
        let values = (0..grid.node_count())
            .map(|_| read_f64(&mut r).map(T::of))
            .collect::<Result<Vec<_>, _>>()?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(ProbError::Format("trailing bytes".into()));
        }
        LookupTable::from_parts(grid, values, TableMeta { version, samples, seed })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProbError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProbError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
