//! Score-based diffusion: schedule, networks, training and sampling.

pub mod checkpoint;
pub mod loss;
pub mod nets;
pub mod nn;
pub mod pipeline;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use checkpoint::{Checkpoint, ModelKind, Normalization, Standardizer};
pub use loss::{grad_check, velocity_loss, GradCheckReport, NoiseDraw, TrainItem};
pub use nets::{Net, NetConfig, ScoreNetwork};
pub use pipeline::{GenerationLog, ImageGenerator, PointCloudGenerator};
pub use sampler::{ddim_step, sample, sample_many, FnField, NetField, SampleRequest, VelocityField};
pub use schedule::{
    ddim_update, perturb, predict_x0, schedule_at, score_from_velocity, velocity_target, DiffusionSchedule,
};
pub use train::{train, LossRecord, TrainHyper, TrainOutcome};
