use std::time::{SystemTime, UNIX_EPOCH};

use super::PrngError;

/// A source of seed material. `OsEntropy` is the only one used outside tests.
pub trait EntropySource: Send {
    fn fill(&mut self, dest: &mut [u8]) -> Result<(), PrngError>;

    fn next_u64(&mut self) -> Result<u64, PrngError> {
        let mut buf = [0u8; 8];
        self.fill(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }
}

/// The operating system's entropy device (`getrandom(2)` / `/dev/urandom`).
#[derive(Clone, Copy, Debug, Default)]
pub struct OsEntropy;

impl EntropySource for OsEntropy {
    fn fill(&mut self, dest: &mut [u8]) -> Result<(), PrngError> {
        getrandom::getrandom(dest).map_err(|e| PrngError::OsEntropyUnavailable(e.to_string()))
    }
}

/// Wall clock with microsecond resolution.
pub trait Clock {
    fn now_us(&self) -> Result<u64, PrngError>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_us(&self) -> Result<u64, PrngError> {
        let since = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_err(|e| PrngError::ClockUnavailable(e.to_string()))?;
        u64::try_from(since.as_micros()).map_err(|e| PrngError::ClockUnavailable(e.to_string()))
    }
}

/// A clock frozen at a given number of microseconds since the epoch.
#[derive(Clone, Copy, Debug)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_us(&self) -> Result<u64, PrngError> {
        Ok(self.0)
    }
}
