use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{EpochRecord, TrainHistory};
use crate::error::{CsFlowError, Result};
use crate::flow::{save_checkpoint, FlowModel};

/// Receives per-epoch progress during training.
pub trait ProgressSink {
    fn on_epoch(&mut self, record: &EpochRecord, model: &FlowModel) -> Result<()>;

    fn on_complete(&mut self, _model: &FlowModel, _history: &TrainHistory) -> Result<()> {
        Ok(())
    }
}

/// Discards all progress.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl ProgressSink for NullSink {
    fn on_epoch(&mut self, _: &EpochRecord, _: &FlowModel) -> Result<()> {
        Ok(())
    }
}

/// Writes one JSON object per line.
#[derive(Debug)]
pub struct NdjsonSink<W: Write> {
    out: W,
}

impl<W: Write> NdjsonSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> ProgressSink for NdjsonSink<W> {
    fn on_epoch(&mut self, record: &EpochRecord, _: &FlowModel) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Saves `epoch_NNNN.csfc` every `every` epochs and `final.csfc` at the end.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    dir: PathBuf,
    every: Option<usize>,
}

impl CheckpointSink {
    pub fn new(dir: impl Into<PathBuf>, every: Option<usize>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| CsFlowError::io_at(&dir, e))?;
        Ok(Self { dir, every: every.filter(|&n| n > 0) })
    }

    pub fn final_path(&self) -> PathBuf {
        self.dir.join("final.csfc")
    }

    pub fn epoch_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch_{epoch:04}.csfc"))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl ProgressSink for CheckpointSink {
    fn on_epoch(&mut self, record: &EpochRecord, model: &FlowModel) -> Result<()> {
        match self.every {
            Some(n) if record.epoch.is_multiple_of(n) => save_checkpoint(model, &self.epoch_path(record.epoch)),
            _ => Ok(()),
        }
    }

    fn on_complete(&mut self, model: &FlowModel, _: &TrainHistory) -> Result<()> {
        save_checkpoint(model, &self.final_path())
    }
}

impl<S: ProgressSink + ?Sized> ProgressSink for &mut S {
    fn on_epoch(&mut self, record: &EpochRecord, model: &FlowModel) -> Result<()> {
        (**self).on_epoch(record, model)
    }

    fn on_complete(&mut self, model: &FlowModel, history: &TrainHistory) -> Result<()> {
        (**self).on_complete(model, history)
    }
}

/// Fans progress out to several sinks in order.
impl ProgressSink for Vec<Box<dyn ProgressSink + '_>> {
    fn on_epoch(&mut self, record: &EpochRecord, model: &FlowModel) -> Result<()> {
        self.iter_mut().try_for_each(|s| s.on_epoch(record, model))
    }

    fn on_complete(&mut self, model: &FlowModel, history: &TrainHistory) -> Result<()> {
        self.iter_mut().try_for_each(|s| s.on_complete(model, history))
    }
}
