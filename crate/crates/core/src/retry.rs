use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retries provider failures with exponential backoff: the n-th retry waits
/// `base_delay * 2^(n-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: u32) -> Self {
        RetryPolicy {
            retries,
            base_delay_ms: 0,
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64 << retry.saturating_sub(1).min(16);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor))
    }

    /// Runs `op` until it succeeds, fails with a non-provider error, or the
    /// retries are used up.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_provider() && !matches!(e, Error::BudgetExhausted(_)) && attempt < self.retries => {
                    attempt += 1;
                    log::warn!("{e}; retry {attempt}/{}", self.retries);
                    let delay = self.delay(attempt);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                other => return other,
            }
        }
    }
}
