//! Element-count accounting for tensor allocations.
//!
//! Every tensor buffer created by this crate reports its length to a
//! thread-local meter. [`measure`] opens a scope and returns the statistics
//! for allocations made inside it, which is how the update kernels report
//! their `peak_temp_elements` without depending on OS-level RSS.

use std::cell::RefCell;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AllocStats {
    /// Largest single tensor allocated in the scope, in elements.
    pub peak_single: usize,
    /// Sum of all tensor allocations in the scope, in elements.
    pub total: usize,
    /// Number of tensor allocations in the scope.
    pub count: usize,
}

impl AllocStats {
    fn merge(&mut self, other: &AllocStats) {
        self.peak_single = self.peak_single.max(other.peak_single);
        self.total += other.total;
        self.count += other.count;
    }
}

thread_local! {
    static SCOPES: RefCell<Vec<AllocStats>> = const { RefCell::new(Vec::new()) };
}

pub(crate) fn record(elements: usize) {
    SCOPES.with(|scopes| {
        if let Some(top) = scopes.borrow_mut().last_mut() {
            top.peak_single = top.peak_single.max(elements);
            top.total += elements;
            top.count += 1;
        }
    });
}

/// Runs `f` and returns its result together with the allocations it made.
///
/// Scopes nest: an inner scope's statistics are folded into the enclosing one.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, AllocStats) {
    SCOPES.with(|scopes| scopes.borrow_mut().push(AllocStats::default()));
    let out = f();
    let stats = SCOPES.with(|scopes| {
        let mut scopes = scopes.borrow_mut();
        let stats = scopes.pop().expect("meter scope underflow");
        if let Some(parent) = scopes.last_mut() {
            parent.merge(&stats);
        }
        stats
    });
    (out, stats)
}
