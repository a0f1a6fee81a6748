//! Bounded exponential backoff shared by the workers.

use std::time::Duration;

use crate::controlplane::TaskControl;

#[derive(Debug, Clone)]
pub(crate) struct Backoff {
    next: Duration,
    max: Duration,
    left: u32,
}

impl Backoff {
    pub fn new(initial: Duration, max: Duration, attempts: u32) -> Self {
        Self {
            next: initial,
            max,
            left: attempts,
        }
    }

    /// Sleeps for the current delay and doubles it. Returns false once the
    /// attempt budget is spent or the worker was told to exit.
    pub fn wait(&mut self, ctl: &TaskControl) -> bool {
        if self.left == 0 || ctl.should_exit() {
            return false;
        }
        self.left -= 1;
        ctl.sleep(self.next);
        self.next = (self.next * 2).min(self.max);
        !ctl.should_exit()
    }
}

impl Default for Backoff {
    /// 50 ms doubling to 2 s, eight retries (about 8 s in total).
    fn default() -> Self {
        Self::new(Duration::from_millis(50), Duration::from_secs(2), 8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_is_bounded() {
        let ctl = TaskControl::detached(0);
        let mut b = Backoff::new(Duration::from_millis(1), Duration::from_millis(2), 3);
        assert!(b.wait(&ctl));
        assert!(b.wait(&ctl));
        assert!(b.wait(&ctl));
        assert!(!b.wait(&ctl));
    }
}
