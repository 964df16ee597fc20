//! Desk-scale laboratory for mode connectivity in machine unlearning:
//! train small classifiers, unlearn a forget set under several methods and
//! optimization regimes, connect pairs of unlearned models with linear and
//! quadratic Bézier curves, and measure retain-loss barriers and forget-loss
//! cliffs along the path.

pub mod curves;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod optim;
pub mod unlearn;
pub mod rng;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use nn::{Activation, Layout, LayoutEntry, MlpArch, MlpModel, ParamVector};
pub use tensor::{Graph, NodeId, Tensor};

pub use curves::{curve_point, init_midpoint, sample_curve, train_midpoint, CurveKind, CurveSpec};
pub use data::{corrupt_labels, load_idx, make_blobs, make_moons, split_forget_retain, SplitDataset};
pub use eval::{
    barrier_profile, evaluate_point, forget_quality, ks_two_sample, mc_barrier_standard,
    zrf_score, BarrierReport, ForgetStatistic, MetricRecord, FORGET_QUALITY_THRESHOLD,
};
pub use experiment::{run_setting, ExperimentConfig, Setting};
pub use optim::{
    curriculum_order, estimate_hessian_diag, sgd_step, CurriculumDirection, OptKind,
    OptimizerSpec, OptimizerState,
};
pub use unlearn::{
    retrain_oracle, run_unlearn, salun_mask, unlearn_bt, unlearn_ga, unlearn_gd, unlearn_npo,
    unlearn_rl, unlearn_salun, Method, TrainSchedule, UnlearnConfig, UnlearnResult,
};
