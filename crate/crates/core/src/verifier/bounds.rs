//! Signed and unsigned interval domain for 64-bit scalars.
//!
//! Every transfer function here is sound: for any concrete operands inside
//! the input intervals, the concrete result (with eBPF semantics, including
//! division by zero and masked shift amounts) lies inside the output.

use crate::isa::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bounds {
    pub smin: i64,
    pub smax: i64,
    pub umin: u64,
    pub umax: u64,
}

impl Bounds {
    pub const FULL: Bounds = Bounds { smin: i64::MIN, smax: i64::MAX, umin: 0, umax: u64::MAX };

    pub const fn constant(v: u64) -> Bounds {
        Bounds { smin: v as i64, smax: v as i64, umin: v, umax: v }
    }

    pub fn unsigned(lo: u64, hi: u64) -> Bounds {
        Bounds { umin: lo, umax: hi, ..Bounds::FULL }.normalize()
    }

    pub fn signed(lo: i64, hi: i64) -> Bounds {
        Bounds { smin: lo, smax: hi, ..Bounds::FULL }.normalize()
    }

    /// Unknown value of `bytes` width, zero-extended.
    pub fn width(bytes: u32) -> Bounds {
        if bytes >= 8 {
            Bounds::FULL
        } else {
            Bounds::unsigned(0, (1u64 << (bytes * 8)) - 1)
        }
    }

    pub fn known(&self) -> Option<u64> {
        (self.umin == self.umax).then_some(self.umin)
    }

    pub fn is_empty(&self) -> bool {
        self.smin > self.smax || self.umin > self.umax
    }

    pub fn contains(&self, v: u64) -> bool {
        v >= self.umin && v <= self.umax && (v as i64) >= self.smin && (v as i64) <= self.smax
    }

    /// Tightens each domain using the other.
    pub fn normalize(self) -> Bounds {
        let mut b = self;
        let half = i64::MAX as u64;
        if b.umax <= half || b.umin > half {
            b.smin = b.smin.max(b.umin as i64);
            b.smax = b.smax.min(b.umax as i64);
        }
        if b.smin >= 0 || b.smax < 0 {
            b.umin = b.umin.max(b.smin as u64);
            b.umax = b.umax.min(b.smax as u64);
        }
        b
    }

    pub fn hull(a: Bounds, b: Bounds) -> Bounds {
        Bounds {
            smin: a.smin.min(b.smin),
            smax: a.smax.max(b.smax),
            umin: a.umin.min(b.umin),
            umax: a.umax.max(b.umax),
        }
    }

    pub fn intersect(a: Bounds, b: Bounds) -> Bounds {
        Bounds {
            smin: a.smin.max(b.smin),
            smax: a.smax.min(b.smax),
            umin: a.umin.max(b.umin),
            umax: a.umax.min(b.umax),
        }
        .normalize()
    }

    /// Bounds of the low 32 bits, zero-extended.
    pub fn trunc32(self) -> Bounds {
        let m = u32::MAX as u64;
        if self.umax <= m {
            self
        } else if self.umin >> 32 == self.umax >> 32 {
            Bounds::unsigned(self.umin & m, self.umax & m)
        } else {
            Bounds::unsigned(0, m)
        }
    }

    fn from_pair(s: Option<(i64, i64)>, u: Option<(u64, u64)>) -> Bounds {
        let (smin, smax) = s.unwrap_or((i64::MIN, i64::MAX));
        let (umin, umax) = u.unwrap_or((0, u64::MAX));
        Bounds { smin, smax, umin, umax }.normalize()
    }
}

fn mask_bound(x: u64) -> u64 {
    if x == 0 {
        0
    } else {
        u64::MAX >> x.leading_zeros()
    }
}

/// Concrete 64-bit ALU semantics shared by the domain's constant folding.
pub fn eval_alu64(op: u8, a: u64, b: u64) -> u64 {
    match op {
        BPF_ADD => a.wrapping_add(b),
        BPF_SUB => a.wrapping_sub(b),
        BPF_MUL => a.wrapping_mul(b),
        BPF_DIV => a.checked_div(b).unwrap_or(0),
        BPF_MOD => a.checked_rem(b).unwrap_or(a),
        BPF_OR => a | b,
        BPF_AND => a & b,
        BPF_XOR => a ^ b,
        BPF_LSH => a << (b & 63),
        BPF_RSH => a >> (b & 63),
        BPF_ARSH => ((a as i64) >> (b & 63)) as u64,
        BPF_MOV => b,
        BPF_NEG => (a as i64).wrapping_neg() as u64,
        _ => 0,
    }
}

/// Concrete 32-bit ALU semantics; the result is zero-extended.
pub fn eval_alu32(op: u8, a: u64, b: u64) -> u64 {
    let (a, b) = (a as u32, b as u32);
    let r = match op {
        BPF_ADD => a.wrapping_add(b),
        BPF_SUB => a.wrapping_sub(b),
        BPF_MUL => a.wrapping_mul(b),
        BPF_DIV => a.checked_div(b).unwrap_or(0),
        BPF_MOD => a.checked_rem(b).unwrap_or(a),
        BPF_OR => a | b,
        BPF_AND => a & b,
        BPF_XOR => a ^ b,
        BPF_LSH => a << (b & 31),
        BPF_RSH => a >> (b & 31),
        BPF_ARSH => ((a as i32) >> (b & 31)) as u32,
        BPF_MOV => b,
        BPF_NEG => (a as i32).wrapping_neg() as u32,
        _ => 0,
    };
    r as u64
}

/// Byte-order conversion; the host is treated as little-endian.
pub fn eval_end(to_be: bool, width: i32, v: u64) -> u64 {
    match (to_be, width) {
        (false, 16) => v & 0xffff,
        (false, 32) => v & 0xffff_ffff,
        (false, _) => v,
        (true, 16) => (v as u16).swap_bytes() as u64,
        (true, 32) => (v as u32).swap_bytes() as u64,
        (true, _) => v.swap_bytes(),
    }
}

/// Interval transfer for a 64-bit binary ALU operation.
pub fn alu64(op: u8, a: Bounds, b: Bounds) -> Bounds {
    if let (Some(x), Some(y)) = (a.known(), b.known()) {
        return Bounds::constant(eval_alu64(op, x, y));
    }
    match op {
        BPF_MOV => b,
        BPF_ADD => {
            let s = a.smin.checked_add(b.smin).zip(a.smax.checked_add(b.smax));
            let u = match (a.umin.checked_add(b.umin), a.umax.checked_add(b.umax)) {
                (Some(lo), Some(hi)) => Some((lo, hi)),
                (None, None) => Some((a.umin.wrapping_add(b.umin), a.umax.wrapping_add(b.umax))),
                _ => None,
            };
            Bounds::from_pair(s, u)
        }
        BPF_SUB => {
            let s = a.smin.checked_sub(b.smax).zip(a.smax.checked_sub(b.smin));
            let u = (a.umin >= b.umax).then(|| (a.umin - b.umax, a.umax - b.umin));
            Bounds::from_pair(s, u)
        }
        BPF_MUL => {
            let u = a.umax.checked_mul(b.umax).map(|hi| (a.umin * b.umin, hi));
            let corners = [
                a.smin.checked_mul(b.smin),
                a.smin.checked_mul(b.smax),
                a.smax.checked_mul(b.smin),
                a.smax.checked_mul(b.smax),
            ];
            let s = if corners.iter().all(Option::is_some) {
                let c = corners.map(|c| c.unwrap_or(0));
                Some((*c.iter().min().unwrap_or(&0), *c.iter().max().unwrap_or(&0)))
            } else {
                None
            };
            Bounds::from_pair(s, u)
        }
        BPF_DIV => {
            if b.umin > 0 {
                Bounds::unsigned(a.umin / b.umax, a.umax / b.umin)
            } else {
                Bounds::unsigned(0, a.umax)
            }
        }
        BPF_MOD => {
            if b.umin > 0 {
                Bounds::unsigned(0, a.umax.min(b.umax - 1))
            } else {
                Bounds::unsigned(0, a.umax)
            }
        }
        BPF_AND => Bounds::unsigned(0, a.umax.min(b.umax)),
        BPF_OR => Bounds::unsigned(a.umin.max(b.umin), mask_bound(a.umax | b.umax)),
        BPF_XOR => Bounds::unsigned(0, mask_bound(a.umax | b.umax)),
        BPF_LSH => {
            if b.umax < 64 && a.umax.leading_zeros() as u64 >= b.umax {
                Bounds::unsigned(a.umin << b.umin, a.umax << b.umax)
            } else {
                Bounds::FULL
            }
        }
        BPF_RSH => {
            if b.umax < 64 {
                Bounds::unsigned(a.umin >> b.umax, a.umax >> b.umin)
            } else {
                Bounds::unsigned(0, a.umax)
            }
        }
        BPF_ARSH => {
            if b.umax < 64 {
                let (lo, hi) = (b.umin as u32, b.umax as u32);
                Bounds::signed((a.smin >> lo).min(a.smin >> hi), (a.smax >> lo).max(a.smax >> hi))
            } else {
                Bounds::signed(a.smin.min(0), a.smax.max(0))
            }
        }
        _ => Bounds::FULL,
    }
}

/// Interval transfer for a 32-bit binary ALU operation.
pub fn alu32(op: u8, a: Bounds, b: Bounds) -> Bounds {
    let (a, b) = (a.trunc32(), b.trunc32());
    if let (Some(x), Some(y)) = (a.known(), b.known()) {
        return Bounds::constant(eval_alu32(op, x, y));
    }
    let full32 = Bounds::unsigned(0, u32::MAX as u64);
    match op {
        BPF_ARSH => full32,
        BPF_LSH | BPF_RSH => {
            let amount = if b.umax < 32 { b } else { Bounds::unsigned(0, 31) };
            alu64(op, a, amount).trunc32()
        }
        _ => alu64(op, a, b).trunc32(),
    }
}

pub fn neg(a: Bounds, wide: bool) -> Bounds {
    if wide {
        match a.known() {
            Some(x) => Bounds::constant(eval_alu64(BPF_NEG, x, 0)),
            None if a.smin != i64::MIN => Bounds::signed(-a.smax, -a.smin),
            None => Bounds::FULL,
        }
    } else {
        match a.trunc32().known() {
            Some(x) => Bounds::constant(eval_alu32(BPF_NEG, x, 0)),
            None => Bounds::unsigned(0, u32::MAX as u64),
        }
    }
}

pub fn end(a: Bounds, to_be: bool, width: i32) -> Bounds {
    if let Some(x) = a.known() {
        return Bounds::constant(eval_end(to_be, width, x));
    }
    let limit = match width {
        16 => 0xffff,
        32 => 0xffff_ffff,
        _ => u64::MAX,
    };
    if !to_be && a.umax <= limit {
        a
    } else {
        Bounds::unsigned(0, limit)
    }
}

/// Concrete comparison for a conditional jump operation.
pub fn eval_cmp(op: u8, a: u64, b: u64) -> bool {
    match op {
        BPF_JEQ => a == b,
        BPF_JNE => a != b,
        BPF_JGT => a > b,
        BPF_JGE => a >= b,
        BPF_JLT => a < b,
        BPF_JLE => a <= b,
        BPF_JSGT => (a as i64) > (b as i64),
        BPF_JSGE => (a as i64) >= (b as i64),
        BPF_JSLT => (a as i64) < (b as i64),
        BPF_JSLE => (a as i64) <= (b as i64),
        BPF_JSET => a & b != 0,
        _ => false,
    }
}

/// The comparison that holds exactly when `op` does not.
pub fn negate_cmp(op: u8) -> u8 {
    match op {
        BPF_JEQ => BPF_JNE,
        BPF_JNE => BPF_JEQ,
        BPF_JGT => BPF_JLE,
        BPF_JLE => BPF_JGT,
        BPF_JGE => BPF_JLT,
        BPF_JLT => BPF_JGE,
        BPF_JSGT => BPF_JSLE,
        BPF_JSLE => BPF_JSGT,
        BPF_JSGE => BPF_JSLT,
        BPF_JSLT => BPF_JSGE,
        other => other,
    }
}

/// Narrows `(a, b)` assuming `a op b` holds. `None` when the predicate is
/// unsatisfiable within the given intervals.
pub fn refine(op: u8, a: Bounds, b: Bounds) -> Option<(Bounds, Bounds)> {
    let (mut a, mut b) = (a, b);
    match op {
        BPF_JEQ => {
            let m = Bounds::intersect(a, b);
            a = m;
            b = m;
        }
        BPF_JNE => {
            if let Some(k) = b.known() {
                a = exclude(a, k)?;
            }
            if let Some(k) = a.known() {
                b = exclude(b, k)?;
            }
        }
        BPF_JGT => {
            a.umin = a.umin.max(b.umin.checked_add(1)?);
            b.umax = b.umax.min(a.umax.checked_sub(1)?);
        }
        BPF_JGE => {
            a.umin = a.umin.max(b.umin);
            b.umax = b.umax.min(a.umax);
        }
        BPF_JSGT => {
            a.smin = a.smin.max(b.smin.checked_add(1)?);
            b.smax = b.smax.min(a.smax.checked_sub(1)?);
        }
        BPF_JSGE => {
            a.smin = a.smin.max(b.smin);
            b.smax = b.smax.min(a.smax);
        }
        BPF_JLT | BPF_JLE | BPF_JSLT | BPF_JSLE => {
            let mirrored = match op {
                BPF_JLT => BPF_JGT,
                BPF_JLE => BPF_JGE,
                BPF_JSLT => BPF_JSGT,
                _ => BPF_JSGE,
            };
            let (nb, na) = refine(mirrored, b, a)?;
            return Some((na, nb));
        }
        BPF_JSET => {
            if let (Some(x), Some(y)) = (a.known(), b.known()) {
                if x & y == 0 {
                    return None;
                }
            }
            if mask_bound(a.umax) & mask_bound(b.umax) == 0 {
                return None;
            }
        }
        _ => {}
    }
    let (a, b) = (a.normalize(), b.normalize());
    if a.is_empty() || b.is_empty() {
        None
    } else {
        Some((a, b))
    }
}

fn exclude(a: Bounds, k: u64) -> Option<Bounds> {
    let mut a = a;
    if a.umin == k {
        a.umin = a.umin.checked_add(1)?;
    }
    if a.umax == k {
        a.umax = a.umax.checked_sub(1)?;
    }
    if a.smin == k as i64 {
        a.smin = a.smin.checked_add(1)?;
    }
    if a.smax == k as i64 {
        a.smax = a.smax.checked_sub(1)?;
    }
    let a = a.normalize();
    (!a.is_empty()).then_some(a)
}

/// `JSET` with "not taken" means `a & b == 0`; intervals are left as is
/// unless both sides are constants.
pub fn refine_not(op: u8, a: Bounds, b: Bounds) -> Option<(Bounds, Bounds)> {
    if op == BPF_JSET {
        if let (Some(x), Some(y)) = (a.known(), b.known()) {
            if x & y != 0 {
                return None;
            }
        }
        return Some((a, b));
    }
    refine(negate_cmp(op), a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_in(b: Bounds) -> impl Iterator<Item = u64> {
        (b.umin..=b.umax).filter(move |v| b.contains(*v))
    }

    #[test]
    fn add_shifts_interval() {
        let r = alu64(BPF_ADD, Bounds::unsigned(0, 10), Bounds::constant(5));
        assert_eq!((r.umin, r.umax, r.smin, r.smax), (5, 15, 5, 15));
    }

    #[test]
    fn small_interval_ops_contain_every_concrete_result() {
        let ops = [
            BPF_ADD, BPF_SUB, BPF_MUL, BPF_DIV, BPF_MOD, BPF_OR, BPF_AND, BPF_XOR, BPF_LSH,
            BPF_RSH, BPF_ARSH, BPF_MOV,
        ];
        let ranges = [(0u64, 3u64), (5, 9), (60, 66), (u64::MAX - 3, u64::MAX), (0, 0)];
        for op in ops {
            for &(al, ah) in &ranges {
                for &(bl, bh) in &ranges {
                    let a = Bounds::unsigned(al, ah);
                    let b = Bounds::unsigned(bl, bh);
                    let r64 = alu64(op, a, b);
                    let r32 = alu32(op, a, b);
                    for x in all_in(a) {
                        for y in all_in(b) {
                            assert!(r64.contains(eval_alu64(op, x, y)), "op {op:#x} {x} {y}");
                            assert!(r32.contains(eval_alu32(op, x, y)), "op32 {op:#x} {x} {y}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn branch_split_covers_original() {
        let a = Bounds::unsigned(0, 100);
        let k = Bounds::constant(16);
        let (t, _) = refine(BPF_JLT, a, k).unwrap();
        let (f, _) = refine_not(BPF_JLT, a, k).unwrap();
        assert_eq!((t.umin, t.umax), (0, 15));
        assert_eq!((f.umin, f.umax), (16, 100));
    }
}
