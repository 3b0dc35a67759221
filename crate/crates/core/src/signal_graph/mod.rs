//! Signal timing plans, detector topology and the phase-split transition
//! matrix with its diffusion operators.

mod graph;
mod plan;
mod topology;

pub use graph::{
    build_transition_matrix, diffusion_supports, restrict_graph, stationary_distribution,
    threshold, DetectorGraph, GraphOptions,
};
pub(crate) use plan::toml_error;
pub use plan::{
    phase_split_fraction, ActivationWindow, IntersectionPlans, PhaseSplit, PlanBook,
    SignalTimingPlan, SplitMode, WeekdayMask,
};
pub use topology::{Detector, DetectorKind, Direction, PhaseMovement, Topology};
