//! Headless simulator, scenario runner and experiment harnesses.

mod config;
mod experiments;
mod scenario;
mod settings;
mod world;

pub use config::{
    CoupleSpec, DecoupleSpec, FootprintSpec, LimitsSpec, MpcSpec, NoiseSpec, PhaseSpec, RobotSpec, ScenarioConfig,
    SlotPairSpec, SlotSpec, TargetSpec, TimingSpec, DEFAULT_SEED,
};
pub use experiments::{
    coupling_trial, decoupling_trial, offsets_from_mm, parallel_map, run_coupling_experiment,
    run_decoupling_experiment, run_timing_benchmark, summarize_offsets, timing_cell, trial_rng, CouplingSetup,
    CouplingTrial, DecouplingSetup, DecouplingTrial, OffsetSummary, TimingCell, TrialNoise,
};
pub use scenario::{
    run_scenario, write_csv, LogRow, PairReport, PhaseReport, ScenarioLog, ScenarioSummary, SolverReport, Termination,
};
pub use settings::SimSettings;
pub use world::{
    step_world, track_velocity, Contact, ContactParams, ContactPhase, RobotBody, SimEvent, SimEventKind, World,
};
