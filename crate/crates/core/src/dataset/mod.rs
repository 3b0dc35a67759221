//! Detector series, health filtering, plan-period sliding windows,
//! normalization, zeroing augmentation and a synthetic corridor.

mod augment;
mod health;
mod series;
mod synth;
mod windows;

pub use augment::{augment_zero, pick_days, ZeroMode};
pub use health::{filter_healthy_days, HealthCalendar};
pub(crate) use series::{csv_open_error, TIMESTAMP_FORMAT};
pub use series::{
    exclude_detectors, load_series, slot_of, slot_time, write_series, DetectorSeries, FlowGrid,
    Gap, SLOTS_PER_DAY, STEP_MINUTES,
};
pub use synth::{
    corridor_topology, generate_synthetic, intersection_id, through_share, DemandProfile,
    SyntheticCorridor, SyntheticCorridorConfig, DEPARTURE_EAST, DEPARTURE_NORTH, LEFT_PHASE,
    SIDE_PHASE, THROUGH_PHASE,
};
pub use windows::{
    chronological_split, slice_plan_windows, weekday_index, NormStats, Sample,
    SlidingWindowDataset, SplitDataset, DEFAULT_HORIZON, DEFAULT_WINDOWS,
};
