//! Scalar-operation counters for instrumented kernels.
//!
//! Counting is off unless a session is open on the current thread. The dense
//! GEMM reports one multiply and one addition per multiply-accumulate; the
//! spike kernels (binary/ternary products and mask-gated value sums) report
//! additions only. Neuron layers report their threshold comparisons; the
//! membrane leak and scalar rescaling are not counted.

use std::cell::Cell;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub multiplies: u64,
    pub additions: u64,
    pub comparisons: u64,
}

impl OpCounters {
    /// Associative merge of two sessions.
    pub fn merge(self, other: OpCounters) -> OpCounters {
        OpCounters {
            multiplies: self.multiplies + other.multiplies,
            additions: self.additions + other.additions,
            comparisons: self.comparisons + other.comparisons,
        }
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        *self = self.merge(rhs);
    }
}

thread_local! {
    static ACTIVE: Cell<Option<OpCounters>> = const { Cell::new(None) };
}

fn bump(f: impl FnOnce(&mut OpCounters)) {
    ACTIVE.with(|cell| {
        if let Some(mut c) = cell.get() {
            f(&mut c);
            cell.set(Some(c));
        }
    });
}

pub(crate) fn record_macs(n: u64) {
    bump(|c| {
        c.multiplies += n;
        c.additions += n;
    });
}

pub(crate) fn record_adds(n: u64) {
    bump(|c| c.additions += n);
}

pub(crate) fn record_cmps(n: u64) {
    bump(|c| c.comparisons += n);
}

/// Runs `f` inside a counting session and returns what it recorded.
///
/// Sessions nest: an inner session's counts are also added to the outer one.
pub fn count_ops<R>(f: impl FnOnce() -> R) -> (R, OpCounters) {
    let outer = ACTIVE.with(|c| c.replace(Some(OpCounters::default())));
    let out = f();
    let inner = ACTIVE.with(|c| c.get()).unwrap_or_default();
    ACTIVE.with(|c| c.set(outer.map(|o| o.merge(inner))));
    (out, inner)
}

pub fn counting_active() -> bool {
    ACTIVE.with(|c| c.get().is_some())
}
