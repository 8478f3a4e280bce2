//! Pretraining, downstream evaluation and the pieces they share.

pub mod ablate;
pub mod checkpoint;
pub mod downstream;
pub mod optim;
pub mod pretrain;
pub mod run;

pub use ablate::{ablate, AblationConfig, AblationRow, AblationTable, LAMBDA_SWEEP};
pub use checkpoint::{Checkpoint, EpochRecord, TrainState, CHECKPOINT_VERSION};
pub use downstream::{
    finetune, linear_probe, probe_features, probe_on_features, DownstreamConfig, DownstreamOutcome, FeatureSet,
};
pub use optim::{Adam, AdamConfig, EarlyStopping, OptimizerState, Schedule, ScheduleKind, Verdict, WeightDecay};
pub use pretrain::{pretrain, LeadCache, PretrainConfig, PretrainOutcome, RunControl};
pub use run::RunDir;

use std::ops::Range;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Consecutive index ranges of size `batch`. A trailing range shorter than
/// `min_last` is merged into the previous one.
pub(crate) fn batch_ranges(n: usize, batch: usize, min_last: usize) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = (0..n).step_by(batch.max(1)).map(|s| s..(s + batch).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() < min_last) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

/// A forward pass split over several tapes, `chunk` rows each, so that no
/// single activation buffer grows with the batch. The caller computes a loss
/// on [`ChunkedPass::output`] and hands `dL/d output` to
/// [`ChunkedPass::backward`].
pub(crate) struct ChunkedPass {
    parts: Vec<(Tape, Var, Range<usize>)>,
    output: Tensor,
}

impl ChunkedPass {
    pub fn forward<F>(rows: &[Vec<f64>], chunk: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&mut Tape, Var) -> Result<Var>,
    {
        if rows.is_empty() {
            return Err(Error::shape("chunked forward", "no rows"));
        }
        let mut parts = Vec::new();
        let mut data = Vec::new();
        let mut width = 0;
        for r in batch_ranges(rows.len(), chunk, 1) {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::from_rows(&rows[r.clone()])?)?;
            let y = f(&mut tape, x)?;
            let v = tape.value(y);
            width = v.len() / r.len();
            data.extend_from_slice(v.data());
            parts.push((tape, y, r));
        }
        Ok(Self { parts, output: Tensor::new(vec![rows.len(), width], data)? })
    }

    pub fn output(&self) -> &Tensor {
        &self.output
    }

    /// Back-propagates `grad` (shaped like the output) chunk by chunk and
    /// hands each chunk's gradients to `sink`.
    pub fn backward(self, grad: &Tensor, mut sink: impl FnMut(&Gradients)) -> Result<()> {
        if grad.shape() != self.output.shape() {
            return Err(Error::shape("chunked backward", format!("{:?} vs {:?}", grad.shape(), self.output.shape())));
        }
        let width = self.output.shape()[1];
        for (mut tape, y, r) in self.parts {
            let g = Tensor::new(vec![r.len(), width], grad.data()[r.start * width..r.end * width].to_vec())?;
            let s = tape.custom_scalar(y, 0.0, g)?;
            sink(&tape.backward(s)?);
        }
        Ok(())
    }
}

/// Adds `src` into `dst` elementwise.
pub(crate) fn accumulate(dst: &mut [Tensor], src: Vec<Tensor>) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.add_assign(&s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    #[test]
    fn batch_ranges_merge_short_tail() {
        assert_eq!(batch_ranges(10, 4, 2), vec![0..4, 4..8, 8..10]);
        assert_eq!(batch_ranges(9, 4, 2), vec![0..4, 4..9]);
        assert_eq!(batch_ranges(1, 4, 2), vec![0..1]);
        assert!(batch_ranges(0, 4, 2).is_empty());
    }

    #[test]
    fn chunked_gradients_match_one_tape() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(vec![2, 3], vec![0.5, -1.0, 0.25, 2.0, 0.1, -0.3]).unwrap());
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0 - i as f64, 0.5 * i as f64]).collect();
        let upstream = Tensor::new(vec![5, 2], (0..10).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();

        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&rows).unwrap()).unwrap();
        let wv = tape.param(&store, w).unwrap();
        let y = tape.linear(x, wv, None).unwrap();
        let y = tape.swish(y).unwrap();
        let s = tape.custom_scalar(y, 0.0, upstream.clone()).unwrap();
        let whole = tape.backward(s).unwrap().for_store(&store);

        let pass = ChunkedPass::forward(&rows, 2, |t, x| {
            let wv = t.param(&store, w)?;
            let y = t.linear(x, wv, None)?;
            t.swish(y)
        })
        .unwrap();
        let mut total = vec![Tensor::zeros(&[2, 3])];
        pass.backward(&upstream, |g| accumulate(&mut total, g.for_store(&store))).unwrap();
        for (a, b) in total[0].data().iter().zip(whole[0].data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
