//! Losses, class weighting, the epoch loop and checkpoints.

mod checkpoint;
mod data;
mod epoch;
mod loss;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta,
    CHECKPOINT_VERSION,
};
pub use data::{build_dataset, load_sample_image, prepare_data, Dataset, PreparedData, Sample};
pub use epoch::{
    fit, train_epoch, training_pair, EpochHook, EpochStats, FitResult, HistoryRecord, TrainConfig,
};
pub use loss::{
    class_weights, final_loss, final_loss_value, one_hot, sr_loss, sr_loss_value, weighted_ce,
    weighted_ce_value, CeForm, LossConfig, WeightMode, LOG_FLOOR,
};

pub(crate) use epoch::meta_tensor;
