//! Task mixing and the buffered shuffle.
//!
//! Indexing and retrieval examples interleave by Bernoulli sampling with
//! probability `r / (r + 1)` for indexing (so `r` is the expected number of
//! indexing examples per retrieval example, and stays continuous), then pass
//! through a fixed-size shuffle buffer: fill, emit a uniformly random slot,
//! refill that slot from the stream. Deterministic given the seed; the
//! buffer runs on the consumer side in arrival order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seeding;

#[cfg(test)]
use super::TaskKind;
use super::TrainingExample;

const TAG_CHOICE: u64 = 0x43484f49;
const TAG_BUFFER: u64 = 0x42554646;

/// Mixing knobs. `r = f64::INFINITY` trains indexing only (the zero-shot
/// regime); `r = 0` trains retrieval only.
#[derive(Debug, Clone, Copy)]
pub struct TaskMix {
    pub r: f64,
    pub buffer_size: usize,
    pub seed: u64,
}

impl Default for TaskMix {
    fn default() -> Self {
        TaskMix {
            r: 32.0,
            buffer_size: 256,
            seed: 0,
        }
    }
}

/// Running counters over what the stream has handed out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub indexing: u64,
    pub retrieval: u64,
    pub epochs_indexing: u64,
    pub epochs_retrieval: u64,
}

/// Per-epoch example provider; epochs regenerate any per-epoch randomness
/// (inverted-index offsets, span-corruption masks).
pub trait ExampleSource {
    fn epoch(&self, epoch: u64) -> Result<Vec<TrainingExample>>;
}

impl<F> ExampleSource for F
where
    F: Fn(u64) -> Result<Vec<TrainingExample>>,
{
    fn epoch(&self, epoch: u64) -> Result<Vec<TrainingExample>> {
        self(epoch)
    }
}

struct CyclingSource<'a> {
    source: &'a dyn ExampleSource,
    current: Vec<TrainingExample>,
    pos: usize,
    epoch: u64,
}

impl<'a> CyclingSource<'a> {
    fn new(source: &'a dyn ExampleSource) -> Result<Self> {
        let current = source.epoch(0)?;
        Ok(CyclingSource {
            source,
            current,
            pos: 0,
            epoch: 0,
        })
    }

    fn next(&mut self) -> (TrainingExample, bool) {
        if self.pos >= self.current.len() {
            self.epoch += 1;
            // the first epoch validated the configuration; later epochs only
            // reroll sampling randomness
            self.current = self
                .source
                .epoch(self.epoch)
                .expect("epoch regeneration cannot fail after a valid first epoch");
            self.pos = 0;
        }
        let ex = self.current[self.pos].clone();
        self.pos += 1;
        (ex, self.pos == 1 && self.epoch > 0)
    }
}

/// The infinite mixed-and-shuffled training stream.
pub struct MixStream<'a> {
    indexing: Option<CyclingSource<'a>>,
    retrieval: Option<CyclingSource<'a>>,
    mix: TaskMix,
    choice_rng: ChaCha8Rng,
    buffer_rng: ChaCha8Rng,
    buffer: Vec<TrainingExample>,
    stats: StreamStats,
}

impl<'a> MixStream<'a> {
    /// Build the stream. Sources the ratio makes reachable must be non-empty.
    pub fn new(
        indexing: Option<&'a dyn ExampleSource>,
        retrieval: Option<&'a dyn ExampleSource>,
        mix: TaskMix,
    ) -> Result<Self> {
        if mix.r.is_nan() || mix.r < 0.0 {
            return Err(Error::Config(format!(
                "task ratio r must be >= 0 (or inf), got {}",
                mix.r
            )));
        }
        if mix.buffer_size == 0 {
            return Err(Error::Config("shuffle buffer_size must be >= 1".into()));
        }
        let needs_indexing = mix.r > 0.0;
        let needs_retrieval = mix.r.is_finite();

        let indexing = match (needs_indexing, indexing) {
            (true, Some(s)) => {
                let c = CyclingSource::new(s)?;
                if c.current.is_empty() {
                    return Err(Error::InvalidInput("indexing example set is empty".into()));
                }
                Some(c)
            }
            (true, None) => {
                return Err(Error::Config(
                    "ratio r > 0 requires indexing examples".into(),
                ))
            }
            (false, _) => None,
        };
        let retrieval = match (needs_retrieval, retrieval) {
            (true, Some(s)) => {
                let c = CyclingSource::new(s)?;
                if c.current.is_empty() {
                    return Err(Error::InvalidInput("retrieval example set is empty".into()));
                }
                Some(c)
            }
            (true, None) => {
                return Err(Error::Config(
                    "finite ratio r requires retrieval examples".into(),
                ))
            }
            (false, _) => None,
        };

        let mut stream = MixStream {
            indexing,
            retrieval,
            mix,
            choice_rng: seeding::rng(mix.seed, TAG_CHOICE),
            buffer_rng: seeding::rng(mix.seed, TAG_BUFFER),
            buffer: Vec::with_capacity(mix.buffer_size),
            stats: StreamStats::default(),
        };
        for _ in 0..mix.buffer_size {
            let ex = stream.next_raw();
            stream.buffer.push(ex);
        }
        Ok(stream)
    }

    fn next_raw(&mut self) -> TrainingExample {
        let take_indexing = if self.mix.r.is_infinite() {
            true
        } else if self.mix.r == 0.0 {
            false
        } else {
            let p = self.mix.r / (self.mix.r + 1.0);
            self.choice_rng.gen::<f64>() < p
        };
        if take_indexing {
            let (ex, wrapped) = self.indexing.as_mut().expect("validated").next();
            self.stats.indexing += 1;
            if wrapped {
                self.stats.epochs_indexing += 1;
            }
            ex
        } else {
            let (ex, wrapped) = self.retrieval.as_mut().expect("validated").next();
            self.stats.retrieval += 1;
            if wrapped {
                self.stats.epochs_retrieval += 1;
            }
            ex
        }
    }

    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    pub fn mix(&self) -> TaskMix {
        self.mix
    }
}

impl Iterator for MixStream<'_> {
    type Item = TrainingExample;

    fn next(&mut self) -> Option<TrainingExample> {
        let slot = self.buffer_rng.gen_range(0..self.buffer.len());
        let incoming = self.next_raw();
        Some(std::mem::replace(&mut self.buffer[slot], incoming))
    }
}
