//! Lock-free multi-threaded runtime and a deterministic bounded-delay simulator.

mod shared;
mod simulator;

pub use shared::{run_async, AsyncOptions, AsyncOutput, AsyncStats, SharedIterate, Stall};
pub use simulator::{
    entry_block, replay_check, run_simulated, DelayLaw, DelayScenario, MaskPolicy, ReplayReport, ScheduledRead,
    SimulationOutput,
    UpdateLog, UpdateLogEntry, EPOCH_STARTS_HEADER, REPLAY_TOLERANCE, UPDATE_LOG_HEADER,
};
