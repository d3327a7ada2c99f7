//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"LSTA1"
//! u8  cell kind        0 = lstm, 1 = lsta, 2 = gru
//! u8  direction        0 = forward, 1 = bidirectional
//! u32 hidden, u32 input, u32 classes
//! u64 seed
//! u32 length, then UTF-8 config echo
//! u32 block count
//! per block: u32 name length, name, u64 value count, f64 values
//! ```
//!
//! Blocks appear in [`ParamBlocks::blocks`] order: for each pass (`fwd.`,
//! then `bwd.`) the cell's weights and biases, then `head.w`, `head.b`.

use std::fs;
use std::path::Path;

use lsta_core::cells::CellKind;
use lsta_core::linalg::ParamBlocks;
use lsta_core::network::{Direction, SequenceModel};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 5] = b"LSTA1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SequenceModel,
    pub seed: u64,
    pub config_echo: String,
}

fn kind_code(kind: CellKind) -> u8 {
    match kind {
        CellKind::Lstm => 0,
        CellKind::Lsta => 1,
        CellKind::Gru => 2,
    }
}

fn to_u32(what: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| CliError::Checkpoint(format!("{what} {v} does not fit in u32")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        let mut out = MAGIC.to_vec();
        out.push(kind_code(m.kind()));
        out.push(match m.direction {
            Direction::Forward => 0,
            Direction::Bidirectional => 1,
        });
        for (what, v) in [("hidden", m.hidden()), ("input", m.input()), ("classes", m.classes())] {
            out.extend_from_slice(&to_u32(what, v)?.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&to_u32("config length", self.config_echo.len())?.to_le_bytes());
        out.extend_from_slice(self.config_echo.as_bytes());
        let blocks = m.blocks();
        out.extend_from_slice(&to_u32("block count", blocks.len())?.to_le_bytes());
        for (name, values) in blocks {
            out.extend_from_slice(&to_u32("name length", name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(CliError::Checkpoint("missing LSTA1 magic".into()));
        }
        let kind = match r.u8()? {
            0 => CellKind::Lstm,
            1 => CellKind::Lsta,
            2 => CellKind::Gru,
            other => return Err(CliError::Checkpoint(format!("unknown cell kind code {other}"))),
        };
        let direction = match r.u8()? {
            0 => Direction::Forward,
            1 => Direction::Bidirectional,
            other => return Err(CliError::Checkpoint(format!("unknown direction code {other}"))),
        };
        let hidden = r.u32()? as usize;
        let input = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let seed = r.u64()?;
        let echo_len = r.u32()? as usize;
        let config_echo = String::from_utf8(r.take(echo_len)?.to_vec())
            .map_err(|_| CliError::Checkpoint("config echo is not UTF-8".into()))?;

        let mut model = SequenceModel::zeros(kind, direction, hidden, input, classes)?;
        let expected: Vec<(String, usize)> = model.blocks().into_iter().map(|(n, b)| (n, b.len())).collect();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(CliError::Checkpoint(format!(
                "{count} blocks stored, {} expected for this model",
                expected.len()
            )));
        }
        let mut targets = model.blocks_mut();
        for ((name, len), target) in expected.iter().zip(targets.iter_mut()) {
            let name_len = r.u32()? as usize;
            let stored = r.take(name_len)?;
            if stored != name.as_bytes() {
                return Err(CliError::Checkpoint(format!(
                    "expected block `{name}`, found `{}`",
                    String::from_utf8_lossy(stored)
                )));
            }
            let n = r.u64()? as usize;
            if n != *len {
                return Err(CliError::Checkpoint(format!("block `{name}` has {n} values, expected {len}")));
            }
            for v in target.iter_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(CliError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { model, seed, config_echo })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CliError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
