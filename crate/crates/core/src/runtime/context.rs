//! Context and packet construction for each program type.

use alloc::vec;
use alloc::vec::Vec;

use super::exec::SOCK_ADDR;
use crate::catalog::{Catalog, ProgramTypeId};

fn put(ctx: &mut [u8], off: usize, width: usize, v: u64) {
    if let Some(dst) = ctx.get_mut(off..off + width) {
        dst.copy_from_slice(&v.to_le_bytes()[..width]);
    }
}

/// Context bytes and packet data a `pt` program sees for `payload`.
pub fn build_context(catalog: &Catalog, pt: ProgramTypeId, payload: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let desc = &catalog.program_type(pt).context;
    let mut ctx = vec![0u8; desc.size as usize];
    let field = |name: &str| desc.field(name).map(|f| (f.offset as usize, f.width as usize));
    let set = |ctx: &mut Vec<u8>, name: &str, v: u64| {
        if let Some((off, w)) = field(name) {
            put(ctx, off, w, v);
        }
    };
    let word = |i: usize| payload.get(i * 4..i * 4 + 4).map_or(0, |b| u32::from_le_bytes(b.try_into().unwrap_or([0; 4])) as u64);
    let mut packet = Vec::new();
    match pt {
        ProgramTypeId::SocketFilter => {
            packet = payload.to_vec();
            set(&mut ctx, "len", payload.len() as u64);
            set(&mut ctx, "protocol", 0x0008);
            set(&mut ctx, "ifindex", 1);
            set(&mut ctx, "hash", word(0) ^ word(1));
            set(&mut ctx, "sk", SOCK_ADDR);
        }
        ProgramTypeId::Xdp => {
            packet = payload.to_vec();
            set(&mut ctx, "ingress_ifindex", 1);
            set(&mut ctx, "rx_queue_index", word(0) & 3);
        }
        ProgramTypeId::CgroupSock => {
            set(&mut ctx, "bound_dev_if", 1);
            set(&mut ctx, "family", 2);
            set(&mut ctx, "type", 1);
            set(&mut ctx, "protocol", 6);
            set(&mut ctx, "src_ip4", word(0));
            set(&mut ctx, "src_port", word(1) & 0xffff);
        }
        ProgramTypeId::Kprobe | ProgramTypeId::Tracepoint | ProgramTypeId::PerfEvent => {
            // Register and argument words come from the payload.
            let n = payload.len().min(ctx.len());
            ctx[..n].copy_from_slice(&payload[..n]);
        }
    }
    (ctx, packet)
}
