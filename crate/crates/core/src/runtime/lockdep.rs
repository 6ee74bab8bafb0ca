//! Lock-context tracking in the style of lockdep.
//!
//! Two rules: a lock class taken both from interrupt context and from task
//! context with interrupts enabled can self-deadlock; two classes taken in
//! both orders can deadlock against each other.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockClass {
    /// Hash-map bucket lock.
    Bucket,
    /// Queue/stack map lock.
    Queue,
    /// Scheduler run-queue lock, held while scheduler tracepoints fire.
    RunQueue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockCtx {
    TaskIrqOn,
    IrqOff,
    Interrupt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Violation {
    /// Class seen with interrupts enabled in task context and in interrupt context.
    IrqUnsafe(LockClass),
    /// Classes acquired in both orders.
    Cycle(LockClass, LockClass),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LockTracker {
    seen: BTreeSet<(LockClass, LockCtx)>,
    order: BTreeSet<(LockClass, LockClass)>,
    held: Vec<LockClass>,
    reported: BTreeSet<Violation>,
}

impl LockTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an acquisition and returns violations not reported before.
    pub fn acquire(&mut self, class: LockClass, ctx: LockCtx) -> Vec<Violation> {
        self.seen.insert((class, ctx));
        for h in &self.held {
            if *h != class {
                self.order.insert((*h, class));
            }
        }
        self.held.push(class);
        self.check()
    }

    pub fn release(&mut self, class: LockClass) {
        if let Some(i) = self.held.iter().rposition(|c| *c == class) {
            self.held.remove(i);
        }
    }

    /// All violations implied by the observations so far, each reported once.
    pub fn check(&mut self) -> Vec<Violation> {
        let mut out = Vec::new();
        for &(class, ctx) in &self.seen {
            if ctx == LockCtx::Interrupt && self.seen.contains(&(class, LockCtx::TaskIrqOn)) {
                out.push(Violation::IrqUnsafe(class));
            }
        }
        for &(a, b) in &self.order {
            if a < b && self.order.contains(&(b, a)) {
                out.push(Violation::Cycle(a, b));
            }
        }
        out.retain(|v| self.reported.insert(*v));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_context_is_silent() {
        let mut t = LockTracker::new();
        for _ in 0..3 {
            assert!(t.acquire(LockClass::Bucket, LockCtx::IrqOff).is_empty());
            t.release(LockClass::Bucket);
            assert!(t.acquire(LockClass::Bucket, LockCtx::Interrupt).is_empty());
            t.release(LockClass::Bucket);
        }
    }

    #[test]
    fn irq_enabled_task_plus_interrupt_is_reported_once() {
        let mut t = LockTracker::new();
        assert!(t.acquire(LockClass::Queue, LockCtx::TaskIrqOn).is_empty());
        t.release(LockClass::Queue);
        assert_eq!(t.acquire(LockClass::Queue, LockCtx::Interrupt), [Violation::IrqUnsafe(LockClass::Queue)]);
        t.release(LockClass::Queue);
        assert!(t.acquire(LockClass::Queue, LockCtx::Interrupt).is_empty());
    }

    #[test]
    fn two_lock_cycle() {
        let mut t = LockTracker::new();
        t.acquire(LockClass::RunQueue, LockCtx::IrqOff);
        assert!(t.acquire(LockClass::Bucket, LockCtx::IrqOff).is_empty());
        t.release(LockClass::Bucket);
        t.release(LockClass::RunQueue);
        t.acquire(LockClass::Bucket, LockCtx::IrqOff);
        let v = t.acquire(LockClass::RunQueue, LockCtx::IrqOff);
        assert_eq!(v, [Violation::Cycle(LockClass::Bucket, LockClass::RunQueue)]);
    }
}
