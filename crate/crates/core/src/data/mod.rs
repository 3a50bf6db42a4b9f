//! Traffic series ingestion and synthesis, calendar features, windowing,
//! chronological splits, normalization and neighbor lists.

mod calendar;
pub mod kv;
mod neighbors;
mod series;
mod synth;
mod windows;

pub use calendar::{calendar_features, Calendar, DAYS_PER_WEEK};
pub use neighbors::{build_neighbor_lists, square_grid, NeighborLists, NeighborMode, RegionGraph};
pub use series::{ingest_csv, parse_time, read_adjacency, write_csv, FlowSeries, Ingested, Meta};
pub use synth::{generate_synthetic, SynthConfig, SynthTruth, Synthetic};
pub use windows::{
    chronological_split, fit_normalizer, make_windows, Dataset, NormStats, SplitRatios, SplitTag,
    Splits, WindowBatch, WindowSpec, Windows, MIN_STD,
};
