//! Little-endian binary containers. Every file starts with a 4-byte magic
//! followed by a `u16` version.
//!
//! Grid corpus (`VBPG`): repeated records of `h: u32, w: u32` and `h*w`
//! base indices as `u32`, until end of file.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::QuantGrid;

pub const GRID_MAGIC: &[u8; 4] = b"VBPG";
pub const GRID_VERSION: u16 = 1;

/// Reader that remembers how many bytes it has consumed, so format errors
/// can name an offset.
pub(crate) struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn truncated(&self, what: &str) -> Error {
        Error::Format {
            offset: self.offset,
            reason: format!("truncated while reading {what}"),
        }
    }

    /// Fills `buf` completely. Returns `Ok(false)` on a clean EOF before the
    /// first byte and a format error on a partial read.
    pub(crate) fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<bool> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    self.offset += read as u64;
                    if read == 0 {
                        return Ok(false);
                    }
                    return Err(self.truncated(what));
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += read as u64;
        Ok(true)
    }

    pub(crate) fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        if self.fill(buf, what)? {
            Ok(())
        } else {
            Err(self.truncated(what))
        }
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.exact(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn header(&mut self, magic: &[u8; 4], version: u16) -> Result<()> {
        let mut m = [0u8; 4];
        self.exact(&mut m, "magic")?;
        if &m != magic {
            return Err(Error::Format {
                offset: 0,
                reason: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&m),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        let v = self.u16("version")?;
        if v != version {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported version {v}"),
            });
        }
        Ok(())
    }
}

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], version: u16) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())
}

pub fn write_grids<W: Write>(mut w: W, grids: &[QuantGrid]) -> Result<()> {
    write_header(&mut w, GRID_MAGIC, GRID_VERSION)?;
    for g in grids {
        w.write_all(&g.height().to_le_bytes())?;
        w.write_all(&g.width().to_le_bytes())?;
        for &c in g.cells() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_grids<R: Read>(r: R) -> Result<Vec<QuantGrid>> {
    let mut r = OffsetReader::new(r);
    r.header(GRID_MAGIC, GRID_VERSION)?;
    let mut grids = Vec::new();
    loop {
        let mut hb = [0u8; 4];
        if !r.fill(&mut hb, "record height")? {
            break;
        }
        let h = u32::from_le_bytes(hb);
        let w = r.u32("record width")?;
        let n = h as u64 * w as u64;
        if n > (1 << 30) {
            return Err(Error::Format {
                offset: r.offset(),
                reason: format!("implausible grid size {h}x{w}"),
            });
        }
        let mut raw = vec![0u8; n as usize * 4];
        r.exact(&mut raw, "grid cells")?;
        let cells = raw
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        grids.push(QuantGrid::new(h, w, cells)?);
    }
    Ok(grids)
}

pub fn save_grids(path: impl AsRef<Path>, grids: &[QuantGrid]) -> Result<()> {
    write_grids(BufWriter::new(File::create(path)?), grids)
}

pub fn load_grids(path: impl AsRef<Path>) -> Result<Vec<QuantGrid>> {
    read_grids(BufReader::new(File::open(path)?))
}
