//! Counter-based Philox4x32 generator with 10 rounds.
//!
//! The 64-bit key occupies both key lanes (low lane first); the 64-bit
//! counter occupies counter lanes 0 and 1, lanes 2 and 3 stay zero. Each
//! counter value yields one 64-bit word built from output lanes 0 and 1.

const MUL0: u32 = 0xD251_1F53;
const MUL1: u32 = 0xCD9E_8D57;
const WEYL0: u32 = 0x9E37_79B9;
const WEYL1: u32 = 0xBB67_AE85;
const ROUNDS: usize = 10;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// The raw Philox4x32-10 block function.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut ctr = counter;
    let mut k = key;
    for round in 0..ROUNDS {
        if round > 0 {
            k[0] = k[0].wrapping_add(WEYL0);
            k[1] = k[1].wrapping_add(WEYL1);
        }
        let (hi0, lo0) = mulhilo(MUL0, ctr[0]);
        let (hi1, lo1) = mulhilo(MUL1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0];
    }
    ctr
}

/// Output word at `counter` for `key`; a pure function of both.
#[inline]
pub fn word_at(key: u64, counter: u64) -> u64 {
    let out = philox4x32_10(
        [counter as u32, (counter >> 32) as u32, 0, 0],
        [key as u32, (key >> 32) as u32],
    );
    out[0] as u64 | ((out[1] as u64) << 32)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Philox4x32 {
    key: u64,
    counter: u64,
}

impl Philox4x32 {
    pub fn new(key: u64) -> Self {
        Self { key, counter: 0 }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Repositions the stream; the next word is `word_at(key, counter)`.
    pub fn seek(&mut self, counter: u64) {
        self.counter = counter;
    }

    pub fn next_u64(&mut self) -> u64 {
        let w = word_at(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        w
    }
}
