//! Softmax classifier heads, weighted cross-entropy, Adam and FGM
//! adversarial training. Shared by the fsi, matcher and aligner components.

mod artifact;
mod fgm;
mod head;
mod optim;
mod train;

pub use artifact::{HeadArtifact, HeadDims, HeadMetadata};
pub use fgm::{fgm_perturb, FgmConfig, FgmTarget};
pub use head::{
    argmax, head_forward, head_gradients, softmax, weighted_cross_entropy, ClassifierHead,
    HeadGradients, LOG_FLOOR,
};
pub use optim::Adam;
pub use train::{
    train_head, train_head_with_history, EpochStats, Optimizer, StepStats, Trainer,
    TrainingConfig, FINE_TUNE_LEARNING_RATE, FROZEN_LEARNING_RATE,
};
