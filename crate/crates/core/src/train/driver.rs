//! The teacher-forced training loop: consume the mixed stream in batches,
//! step Adam, periodically evaluate and checkpoint, abort on non-finite loss
//! with the last good checkpoint retained on disk.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{
    adam_step, backward, save_checkpoint, AdamState, Batch, BatchExample, ModelParams,
};
use crate::seeding;

use super::mix::MixStream;

const TAG_STEP_DROPOUT: u64 = 0x53544450;

/// Validation metrics recorded at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub hits1: f64,
    pub hits10: f64,
    pub index_hits1: f64,
}

/// One row of the metric trace (one per evaluation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// Mean training loss over the window since the previous evaluation.
    pub train_loss: f64,
    pub hits1: f64,
    pub hits10: f64,
    pub index_hits1: f64,
}

impl TraceRow {
    pub fn csv_header() -> &'static str {
        "step,train_loss,hits1,hits10,index_hits1"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.train_loss, self.hits1, self.hits10, self.index_hits1
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    /// Checkpoint directory; None skips persistence.
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 20_000,
            batch_size: 32,
            eval_every: 500,
            out_dir: None,
            seed: 0,
        }
    }
}

/// What a finished (or aborted) run leaves behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
    /// (step, path) of every persisted checkpoint, in step order.
    pub checkpoints: Vec<(usize, PathBuf)>,
    pub consumed_indexing: u64,
    pub consumed_retrieval: u64,
}

fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("ckpt_{step}.bin"))
}

/// Run the loop. `eval_fn` sees the f32-quantized parameter snapshot (the
/// exact values the checkpoint at that step stores), so re-evaluating a
/// saved checkpoint reproduces the recorded metrics.
pub fn train(
    params: &mut ModelParams,
    opt: &mut AdamState,
    stream: &mut MixStream,
    options: &TrainOptions,
    eval_fn: &mut dyn FnMut(&ModelParams, usize) -> Result<EvalPoint>,
) -> Result<TrainOutcome> {
    if options.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut trace = Vec::new();
    let mut checkpoints = Vec::new();

    let snapshot = params.quantized();
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir)?;
        let path = checkpoint_path(dir, 0);
        save_checkpoint(&path, &snapshot)?;
        checkpoints.push((0, path));
    }

    let mut window_loss = 0.0;
    let mut window_count = 0usize;
    let use_dropout = params.config.dropout > 0.0;

    for step in 1..=options.steps {
        let batch = Batch {
            examples: (0..options.batch_size)
                .map(|_| {
                    let ex = stream.next().expect("stream is infinite");
                    BatchExample::new(ex.enc_tokens, ex.dec_targets)
                })
                .collect(),
        };
        let dropout_seed =
            use_dropout.then(|| seeding::derive2(options.seed, TAG_STEP_DROPOUT, step as u64));
        let (loss, grads) = match backward(params, &batch, dropout_seed) {
            Ok(ok) => ok,
            Err(Error::NonFiniteLoss { value, .. }) => {
                return Err(Error::NonFiniteLoss { step, value });
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, value: loss });
        }
        adam_step(opt, params, &grads);
        window_loss += loss;
        window_count += 1;

        let at_eval = options.eval_every > 0 && step % options.eval_every == 0;
        let at_end = step == options.steps;
        if at_eval || at_end {
            let snapshot = params.quantized();
            if !snapshot.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    value: f64::NAN,
                });
            }
            let point = eval_fn(&snapshot, step)?;
            trace.push(TraceRow {
                step,
                train_loss: window_loss / window_count.max(1) as f64,
                hits1: point.hits1,
                hits10: point.hits10,
                index_hits1: point.index_hits1,
            });
            window_loss = 0.0;
            window_count = 0;
            if let Some(dir) = &options.out_dir {
                let path = checkpoint_path(dir, step);
                save_checkpoint(&path, &snapshot)?;
                checkpoints.push((step, path));
            }
        }
    }

    let stats = stream.stats();
    Ok(TrainOutcome {
        params: params.clone(),
        trace,
        checkpoints,
        consumed_indexing: stats.indexing,
        consumed_retrieval: stats.retrieval,
    })
}

/// Index of the best trace row under `metric` (ties go to the earliest).
pub fn select_best_checkpoint<F>(trace: &[TraceRow], metric: F) -> Option<usize>
where
    F: Fn(&TraceRow) -> f64,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in trace.iter().enumerate() {
        let v = metric(row);
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, hits1: f64) -> TraceRow {
        TraceRow {
            step,
            train_loss: 0.0,
            hits1,
            hits10: hits1,
            index_hits1: 0.0,
        }
    }

    #[test]
    fn best_checkpoint_is_argmax() {
        let trace = vec![row(1, 0.1), row(2, 0.3), row(3, 0.2)];
        assert_eq!(select_best_checkpoint(&trace, |r| r.hits1), Some(1));
    }

    #[test]
    fn best_checkpoint_ties_go_earliest() {
        let trace = vec![row(1, 0.2), row(2, 0.2), row(3, 0.2)];
        assert_eq!(select_best_checkpoint(&trace, |r| r.hits1), Some(0));
    }

    #[test]
    fn best_checkpoint_single_entry() {
        let trace = vec![row(5, 0.0)];
        assert_eq!(select_best_checkpoint(&trace, |r| r.hits1), Some(0));
        assert_eq!(select_best_checkpoint(&[], |r| r.hits1), None);
    }
}
