//! Contrastive fine-tuning of the projection heads on image/caption pairs.

mod batches;
mod finetune;
mod loss;
mod optim;

pub use batches::{sample_epoch_batches, TrainBatch};
pub use finetune::{
    batch_loss, finetune, EpochLog, LogitScale, PairFeatures, Precision, StepLog, TrainConfig, TrainOutcome,
    TrainStatus, ValidationSet, MAX_LOGIT_SCALE, PRETRAINED_LOGIT_SCALE,
};
pub use loss::{contrastive_loss, contrastive_loss_with_grad, LossOutput, NORM_TOLERANCE};
pub use optim::{cosine_lr, Optimizer, OptimizerKind};
