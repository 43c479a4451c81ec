//! AES-128 in counter mode, keyed from OS entropy and rekeyed periodically.

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;

use super::entropy::EntropySource;
use super::PrngError;

/// Number of output words after which a fresh key is drawn.
pub const RESEED_INTERVAL: u64 = 1 << 20;

pub struct CsprngCtr {
    cipher: Aes128,
    counter: u128,
    spare: Option<u64>,
    words_since_reseed: u64,
    reseeds: u64,
    entropy: Box<dyn EntropySource>,
}

impl CsprngCtr {
    pub fn new(mut entropy: Box<dyn EntropySource>) -> Result<Self, PrngError> {
        let cipher = fresh_cipher(entropy.as_mut())?;
        Ok(Self {
            cipher,
            counter: 0,
            spare: None,
            words_since_reseed: 0,
            reseeds: 0,
            entropy,
        })
    }

    /// Number of rekeys performed since construction.
    pub fn reseeds(&self) -> u64 {
        self.reseeds
    }

    /// Draws a new key immediately and restarts the counter.
    pub fn reseed(&mut self) -> Result<(), PrngError> {
        self.cipher = fresh_cipher(self.entropy.as_mut())?;
        self.counter = 0;
        self.spare = None;
        self.words_since_reseed = 0;
        self.reseeds += 1;
        Ok(())
    }

    pub fn next_u64(&mut self) -> Result<u64, PrngError> {
        if self.words_since_reseed >= RESEED_INTERVAL {
            self.reseed()?;
        }
        self.words_since_reseed += 1;
        if let Some(w) = self.spare.take() {
            return Ok(w);
        }
        let mut block = GenericArray::from(self.counter.to_le_bytes());
        self.counter = self.counter.wrapping_add(1);
        self.cipher.encrypt_block(&mut block);
        let bytes: [u8; 16] = block.into();
        let (lo, hi) = bytes.split_at(8);
        self.spare = Some(u64::from_le_bytes(hi.try_into().expect("8 bytes")));
        Ok(u64::from_le_bytes(lo.try_into().expect("8 bytes")))
    }
}

fn fresh_cipher(entropy: &mut dyn EntropySource) -> Result<Aes128, PrngError> {
    let mut key = [0u8; 16];
    entropy.fill(&mut key)?;
    let cipher = Aes128::new(&GenericArray::from(key));
    key.fill(0);
    Ok(cipher)
}

impl std::fmt::Debug for CsprngCtr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CsprngCtr")
            .field("words_since_reseed", &self.words_since_reseed)
            .field("reseeds", &self.reseeds)
            .finish_non_exhaustive()
    }
}
