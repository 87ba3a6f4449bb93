//! Training runs, learning-rate schedules and the growth experiments.
//!
//! [`sgd_train`] is plain minibatch SGD with the inverse-square-root
//! [`Schedule`]. [`FusePointSweep`] asks when to self-fuse under a fixed
//! cost [`BudgetModel`]; [`OffsetSweep`] trains a fused network under
//! shifted schedules and dumps heatmaps of the first dense kernel. Sweep
//! rows run on a worker pool capped by the `FUSEKIT_THREADS` environment
//! variable.

mod collate;
mod manifest;
mod pgm;
mod pool;
pub mod presets;
mod schedule;
mod sweep;
mod train;

pub use collate::{collate, Collated, Table};
pub use manifest::{git_describe, Manifest, MANIFEST_FILE};
pub use pgm::{heatmap_pgm, read_pgm, write_heatmap, Pgm};
pub use pool::{par_map, worker_count, THREADS_ENV};
pub use schedule::Schedule;
pub use sweep::{
    first_dense_kernel, fuse_point_csv, grow_and_train, heatmap_name, offset_csv, BudgetModel, FusePointRow, FusePointSweep,
    Growth, GrowthRun, OffsetRow, OffsetSweep, FUSE_POINT_HEADER, OFFSET_HEADER,
};
pub use train::{
    block_magnitudes, evaluate, sgd_step, sgd_train, Record, Status, TrainConfig, TrainOutcome, Trajectory,
    TRAJECTORY_HEADER,
};

use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) use crate::bea::csv_error;

/// `header` line followed by one serialized row per item.
pub(crate) fn csv_string<T: Serialize>(header: &str, rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let body = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let body = String::from_utf8(body).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(format!("{header}\n{body}"))
}
