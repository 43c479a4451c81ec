//! Wire formats shared with external producers: raw little-endian 64-bit
//! words, and newline-delimited decimal reals.

use std::io::{self, BufRead, Read, Write};

use thiserror::Error;

use crate::prng::{PrngError, WordSource};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("raw stream ends with a partial word of {0} bytes")]
    TrailingBytes(usize),
    #[error("line {line}: {text:?} is not a finite decimal number")]
    BadNumber { line: usize, text: String },
}

/// Iterates over little-endian `u64` words.
pub struct RawWordReader<R> {
    inner: R,
    done: bool,
}

impl<R: Read> RawWordReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, done: false }
    }
}

impl<R: Read> Iterator for RawWordReader<R> {
    type Item = Result<u64, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut buf = [0u8; 8];
        let mut filled = 0;
        while filled < 8 {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
        }
        match filled {
            8 => Some(Ok(u64::from_le_bytes(buf))),
            0 => {
                self.done = true;
                None
            }
            n => {
                self.done = true;
                Some(Err(StreamError::TrailingBytes(n)))
            }
        }
    }
}

/// Iterates over one real per line. Blank lines are skipped.
pub struct TextSampleReader<R> {
    lines: io::Lines<R>,
    line: usize,
}

impl<R: BufRead> TextSampleReader<R> {
    pub fn new(inner: R) -> Self {
        Self { lines: inner.lines(), line: 0 }
    }
}

impl<R: BufRead> Iterator for TextSampleReader<R> {
    type Item = Result<f64, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            let trimmed = text.trim();
            if trimmed.is_empty() {
                continue;
            }
            return Some(match trimmed.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(StreamError::BadNumber { line: self.line, text: trimmed.to_string() }),
            });
        }
    }
}

pub fn write_raw_words<W: Write>(out: &mut W, words: &[u64]) -> io::Result<()> {
    for w in words {
        out.write_all(&w.to_le_bytes())?;
    }
    Ok(())
}

/// Writes one value per line using the shortest representation that reads
/// back to the same `f64`.
pub fn write_text_samples<W: Write>(out: &mut W, samples: &[f64]) -> io::Result<()> {
    for x in samples {
        writeln!(out, "{x:?}")?;
    }
    Ok(())
}

/// Adapts a raw reader into a word source for the samplers. The first read
/// error is kept so callers can tell it apart from a clean end of stream.
pub struct RawWordSource<R> {
    reader: RawWordReader<R>,
    error: Option<StreamError>,
}

impl<R: Read> RawWordSource<R> {
    pub fn new(inner: R) -> Self {
        Self { reader: RawWordReader::new(inner), error: None }
    }

    pub fn take_error(&mut self) -> Option<StreamError> {
        self.error.take()
    }
}

impl<R: Read> WordSource for RawWordSource<R> {
    fn next_word(&mut self) -> Result<u64, PrngError> {
        match self.reader.next() {
            Some(Ok(w)) => Ok(w),
            Some(Err(e)) => {
                self.error = Some(e);
                Err(PrngError::StreamExhausted)
            }
            None => Err(PrngError::StreamExhausted),
        }
    }
}
