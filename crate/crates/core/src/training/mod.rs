//! Losses, optimizer, stage schedule, corpus handling and the training loop.

pub mod data;
pub mod loss;
pub mod optim;
pub mod schedule;
pub mod train;

pub use data::{CorpusConfig, SceneData, StageScene, Target, TrainSample};
pub use loss::{LossParts, LossWeights, PerceptualProxy};
pub use optim::{Adam, OptimizerConfig};
pub use schedule::{Stage, StageConfig};
pub use train::{evaluate, evaluate_dynamic, init_decoder, train, EvalReport, TrainConfig, TrainReport};
