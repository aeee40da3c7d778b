//! Frames, ingestion, scaling, windowing, and synthetic generators.

mod frame;
mod scaling;
mod split;
pub mod synth;
mod window;

pub use frame::{csv_string, load_csv, read_csv, write_csv, Column, Role, Schema, SeriesFrame};
pub use scaling::{global_standardize, mean_rescale, mean_scale_local, Scaler};
pub use split::{split, split_ranges, SplitRanges, SplitSpec};
pub use window::{make_windows, make_windows_for_targets, Window, WindowBatch, WindowSpec};
