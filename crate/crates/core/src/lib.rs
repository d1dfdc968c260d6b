pub mod campaign;
pub mod constraints;
pub mod driver_sched;
pub mod executor;
pub mod factory;
pub mod group_sched;
pub mod model;
pub mod seed;
pub mod synth;
