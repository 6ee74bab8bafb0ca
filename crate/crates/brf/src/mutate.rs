//! Mutation of the syscalls around a program. The prologue is never
//! touched; the mandatory TEST_RUN stays first.

use brf_core::catalog::MapTypeId;
use rand::Rng;

use crate::input::{random_aux, random_key, random_payload, AuxCall, AuxOp, FuzzInput, Trigger};

const MAX_AUX: usize = 256;
const MAX_TRIGGERS: usize = 4;

pub fn mutate_aux<R: Rng>(input: &FuzzInput, rng: &mut R) -> FuzzInput {
    let mut out = input.clone();
    let nt = out.triggers.len();
    let has_maps = !out.ast.map_deps.is_empty();
    match rng.gen_range(0..100) {
        0..=29 if has_maps && out.aux.len() < MAX_AUX => {
            if let Some(a) = random_aux(rng, &out.ast, nt) {
                let at = rng.gen_range(0..=out.aux.len());
                out.aux.insert(at, a);
            }
        }
        30..=44 if has_maps && out.aux.len() < MAX_AUX => {
            // A run of inserts with consecutive keys, to fill a map.
            let map = rng.gen_range(0..out.ast.map_deps.len() as u32);
            let spec = out.ast.map_deps[map as usize];
            let base: u32 = rng.gen_range(0..4);
            let at = rng.gen_range(0..=nt as u32);
            let flags = if matches!(spec.map_type, MapTypeId::Queue | MapTypeId::Stack) { rng.gen_range(0..3) & 2 } else { 0 };
            let n = rng.gen_range(4..=64).min(MAX_AUX - out.aux.len());
            for i in 0..n as u32 {
                let mut key = vec![0u8; spec.key_size as usize];
                let b = (base + i).to_le_bytes();
                let k = key.len().min(4);
                key[..k].copy_from_slice(&b[..k]);
                let mut value = vec![0u8; spec.value_size as usize];
                rng.fill(&mut value[..]);
                out.aux.push(AuxCall { at, op: AuxOp::Update, map, key, value, flags });
            }
        }
        45..=59 if !out.aux.is_empty() => {
            let i = rng.gen_range(0..out.aux.len());
            let n = rng.gen_range(1..=(out.aux.len() - i).min(4));
            out.aux.drain(i..i + n);
        }
        60..=79 if !out.aux.is_empty() => {
            let i = rng.gen_range(0..out.aux.len());
            let a = &mut out.aux[i];
            let spec = out.ast.map_deps.get(a.map as usize).copied();
            match rng.gen_range(0..5) {
                0 => a.op = AuxOp::ALL[rng.gen_range(0..4)],
                1 => a.flags = [0u64, 1, 2, 3][rng.gen_range(0..4)],
                2 => a.at = rng.gen_range(0..=nt as u32),
                3 => rng.fill(&mut a.value[..]),
                _ => {
                    if let Some(s) = spec {
                        a.key = random_key(rng, s.key_size as usize, s.max_entries);
                    }
                }
            }
        }
        80..=89 if nt < MAX_TRIGGERS => {
            let kind = match &out.triggers[nt - 1] {
                Trigger::Event { kind, .. } => *kind,
                Trigger::TestRun { .. } => return out,
            };
            out.triggers.push(Trigger::Event { kind, payload: random_payload(rng) });
        }
        _ => {
            let i = rng.gen_range(0..nt.max(1));
            match out.triggers.get_mut(i) {
                Some(Trigger::TestRun { payload }) | Some(Trigger::Event { payload, .. }) => {
                    if !payload.is_empty() && rng.gen_bool(0.5) {
                        let j = rng.gen_range(0..payload.len());
                        payload[j] = rng.gen();
                    } else {
                        *payload = random_payload(rng);
                    }
                }
                None => {}
            }
        }
    }
    out
}
