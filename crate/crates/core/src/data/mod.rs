//! Shared data model: matrices, soft labels, class weights, frame tables
//! and their on-disk CSV schemas.

mod csv_io;
mod frame;
mod labels;
mod matrix;

pub use csv_io::{
    read_bytes, read_frame_csv, read_prediction_csv, read_stream_csv, write_frame_csv,
    write_prediction_csv, write_stream_csv, write_text, PredictionSet, RowKey, StreamRecord,
};
pub use frame::{FrameRow, FrameTable, Violation};
pub use labels::{
    class_weights_from_frequency, harden_labels, ClassWeights, ScoreKind, ScoreMatrix,
    SoftLabelMatrix, ROW_SUM_TOL,
};
pub use matrix::Matrix;
