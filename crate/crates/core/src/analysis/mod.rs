//! Spike density, operation counting, capacity and energy analysis.

pub mod capacity;
pub mod counters;
pub mod density;
pub mod energy;
pub mod prop2;
pub mod report;

pub use capacity::{capacity_bits, CapacityKind};
pub use counters::{count_ops, OpCounters};
pub use density::{LayerCount, SpikeStats};
pub use energy::{energy_estimate, EnergyReport, E_AC_PJ, E_MAC_PJ};
pub use prop2::{prop2_demo, spike_map, Prop2Report, Prop2Witness};
pub use report::{network_macs, AnalysisReport};
