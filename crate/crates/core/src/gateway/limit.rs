use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding concurrent backend calls.
pub(crate) struct Semaphore {
    available: Mutex<usize>,
    cond: Condvar,
}

pub(crate) struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Semaphore {
            available: Mutex::new(permits),
            cond: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|p| p.into_inner());
        while *n == 0 {
            n = self.cond.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|p| p.into_inner());
        *n += 1;
        self.0.cond.notify_one();
    }
}
