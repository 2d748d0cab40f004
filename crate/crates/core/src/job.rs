//! Progress reporting and cooperative cancellation for long-running fits.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct Progress {
    done: AtomicUsize,
    total: AtomicUsize,
    cancelled: AtomicBool,
}

impl Progress {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_total(&self, total: usize) {
        self.total.store(total, Ordering::Relaxed);
    }

    pub fn tick(&self) {
        self.done.fetch_add(1, Ordering::Relaxed);
    }

    pub fn done(&self) -> usize {
        self.done.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> usize {
        self.total.load(Ordering::Relaxed)
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::Relaxed);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::Relaxed)
    }
}

/// Errors with [`Error::Cancelled`] once `progress` has been cancelled.
pub(crate) fn checkpoint(progress: Option<&Progress>) -> Result<()> {
    match progress {
        Some(p) if p.is_cancelled() => Err(Error::Cancelled),
        _ => Ok(()),
    }
}

pub(crate) fn tick(progress: Option<&Progress>) {
    if let Some(p) = progress {
        p.tick();
    }
}
