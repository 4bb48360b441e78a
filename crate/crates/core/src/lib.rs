//! Profiling of preprocessing strategies for ML input pipelines.
//!
//! A pipeline is a chain of steps from a stored dataset to training-ready
//! tensors. A strategy splits it: the leading steps run once offline and are
//! materialized into record containers, the rest run online in every epoch.
//! This crate materializes strategies, measures their online throughput,
//! storage and preprocessing time, and ranks them.

pub mod analysis;
pub mod cli;
pub mod exec;
pub mod model;
pub mod profiler;
pub mod recordio;
pub mod storage;
pub mod throttle;
pub mod workloads;

pub use analysis::{score_and_rank, StrategyRanking};
pub use exec::{run_online, CpuModel, Engine, EngineCosts, EpochStats, OnlinePlan, RunConfig};
pub use model::{
    enumerate_strategies, CacheMode, Compression, DType, ObjectiveWeights, OptionGrid, Pipeline, StepSpec, Strategy,
    Tensor,
};
pub use profiler::{profile_campaign, profile_strategy, Campaign, ProfileConfig, ProfileRecord, Profiler};
pub use storage::{BackendConfig, Storage};
pub use workloads::{preset, DatasetDescriptor, Layout, PresetName};
