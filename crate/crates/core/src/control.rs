use std::sync::{Arc, RwLock};

use crate::model::ControlParams;

/// Shared cell holding the current control parameters.
///
/// Readers take an `Arc` snapshot, so a read never observes a half-written
/// update. Only the navigator path stores.
#[derive(Debug)]
pub struct ControlCell {
    inner: RwLock<Arc<ControlParams>>,
}

impl ControlCell {
    pub fn new(params: ControlParams) -> Self {
        Self {
            inner: RwLock::new(Arc::new(params)),
        }
    }

    pub fn snapshot(&self) -> Arc<ControlParams> {
        self.inner.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn store(&self, params: ControlParams) {
        *self.inner.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(params);
    }

    /// Read-modify-write under the write lock. `f` must be cheap; it runs
    /// while readers wait.
    pub fn update<T>(&self, f: impl FnOnce(&ControlParams) -> (ControlParams, T)) -> (ControlParams, T) {
        let mut guard = self.inner.write().unwrap_or_else(|e| e.into_inner());
        let (next, extra) = f(&guard);
        *guard = Arc::new(next.clone());
        (next, extra)
    }
}
