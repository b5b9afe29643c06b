//! Experiment configuration and execution.

pub mod builtins;
pub mod config;
pub mod runner;
pub mod thermal;

pub use builtins::{builtin, builtin_configs, BUILTIN_NAMES, QUADRATIC_HORIZON};
pub use config::{
    Check, ExperimentConfig, InitialState, MetricName, OracleSpec, PlantSource, ResolvedExperiment, UtilitySpec,
    Variant, VerifyOptions, CONFIG_VERSION,
};
pub use runner::{
    load_runs, replica_seed, run_checks, run_experiment, run_replica, run_replicas, verify_result_dir, CheckEntry,
    ExperimentResult, LinkResult, Manifest, ReplicaFailure, CONFIG_FILE, MANIFEST_FILE,
};
pub use thermal::{surrogate_spec, thermal_plant_spec, RcNetwork, OUTDOOR_TEMPERATURE, SAMPLE_HOURS};
