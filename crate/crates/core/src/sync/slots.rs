use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding how many workers compute at once.
///
/// With fewer cores than workers, threads that compute together are
/// time-sliced and each one's compute clock absorbs the others' work. Giving
/// each compute phase a slot keeps the compute column honest; time spent
/// waiting for a slot is waiting on other workers and is booked as barrier
/// wait.
pub struct ComputeSlots {
    free: Mutex<usize>,
    cv: Condvar,
}

pub struct SlotGuard<'a> {
    slots: &'a ComputeSlots,
}

impl ComputeSlots {
    pub fn new(slots: usize) -> Self {
        ComputeSlots {
            free: Mutex::new(slots.max(1)),
            cv: Condvar::new(),
        }
    }

    /// One slot per available core.
    pub fn per_core() -> Self {
        Self::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self
            .cv
            .wait_while(self.free.lock().expect("slot lock"), |f| *f == 0)
            .expect("slot lock");
        *free -= 1;
        SlotGuard { slots: self }
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.slots.free.lock().expect("slot lock") += 1;
        self.slots.cv.notify_one();
    }
}
