//! `BRFP` container: a compiled program with its map dependencies and
//! pending relocations. All integers little-endian.
//!
//! ```text
//! "BRFP" u16 version u16 prog_type
//! u16 len, section name bytes
//! u16 n, n x (u16 map_type, u32 key, u32 value, u32 max_entries, u32 flags)
//! u32 n, n x (u32 insn_index, u32 map_ordinal)
//! u32 len, instruction bytes
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::catalog::{MapSpecRequest, MapTypeId, ProgramTypeId};
use crate::isa::{decode_program, encode_program, EncodeError, RawProgram, RelocationRecord, SyntaxError};

pub const MAGIC: &[u8; 4] = b"BRFP";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub prog: RawProgram,
    pub map_deps: Vec<MapSpecRequest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("truncated at byte {0}")]
    Truncated(usize),
    #[error("unknown program type {0}")]
    ProgType(u16),
    #[error("unknown map type {0}")]
    MapType(u16),
    #[error("section name is not UTF-8")]
    SectionName,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("too many entries for the format")]
    TooLarge,
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Decode(#[from] SyntaxError),
}

fn len16(n: usize) -> Result<[u8; 2], ContainerError> {
    u16::try_from(n).map(u16::to_le_bytes).map_err(|_| ContainerError::TooLarge)
}

fn len32(n: usize) -> Result<[u8; 4], ContainerError> {
    u32::try_from(n).map(u32::to_le_bytes).map_err(|_| ContainerError::TooLarge)
}

pub fn write_container(c: &Container) -> Result<Vec<u8>, ContainerError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&c.prog.prog_type.code().to_le_bytes());
    out.extend_from_slice(&len16(c.prog.section_name.len())?);
    out.extend_from_slice(c.prog.section_name.as_bytes());
    out.extend_from_slice(&len16(c.map_deps.len())?);
    for m in &c.map_deps {
        out.extend_from_slice(&m.map_type.code().to_le_bytes());
        for v in [m.key_size, m.value_size, m.max_entries, m.flags] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&len32(c.prog.relocations.len())?);
    for r in &c.prog.relocations {
        out.extend_from_slice(&r.insn_index.to_le_bytes());
        out.extend_from_slice(&r.map_ordinal.to_le_bytes());
    }
    let code = encode_program(&c.prog.insns)?;
    out.extend_from_slice(&len32(code.len())?);
    out.extend_from_slice(&code);
    Ok(out)
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(ContainerError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_container(bytes: &[u8]) -> Result<Container, ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(ContainerError::Version(version));
    }
    let pt = r.u16()?;
    let prog_type = ProgramTypeId::from_code(pt).ok_or(ContainerError::ProgType(pt))?;
    let n = r.u16()? as usize;
    let section_name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| ContainerError::SectionName)?;
    let n = r.u16()? as usize;
    let mut map_deps = Vec::with_capacity(n);
    for _ in 0..n {
        let mt = r.u16()?;
        let map_type = MapTypeId::from_code(mt).ok_or(ContainerError::MapType(mt))?;
        let (key_size, value_size, max_entries, flags) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        map_deps.push(MapSpecRequest { map_type, key_size, value_size, max_entries, flags });
    }
    let n = r.u32()? as usize;
    let mut relocations = Vec::with_capacity(n.min(bytes.len() / 8));
    for _ in 0..n {
        relocations.push(RelocationRecord { insn_index: r.u32()?, map_ordinal: r.u32()? });
    }
    let n = r.u32()? as usize;
    let insns = decode_program(r.take(n)?)?;
    if r.pos != bytes.len() {
        return Err(ContainerError::Trailing(bytes.len() - r.pos));
    }
    Ok(Container { prog: RawProgram { prog_type, section_name, insns, relocations }, map_deps })
}
