//! Per-thread floating-point operation counter.
//!
//! Kernels report the flops they perform; callers bracket a computation with
//! [`reset`] and [`read`] (or use [`measure`]) to obtain an exact,
//! hardware-independent cost.

use std::cell::Cell;

thread_local! {
    static FLOPS: Cell<u64> = const { Cell::new(0) };
}

pub fn record(flops: u64) {
    FLOPS.with(|c| c.set(c.get().wrapping_add(flops)));
}

pub fn reset() {
    FLOPS.with(|c| c.set(0));
}

pub fn read() -> u64 {
    FLOPS.with(Cell::get)
}

/// Runs `f` and returns its result with the flops it recorded on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = read();
    let r = f();
    (r, read().wrapping_sub(before))
}
