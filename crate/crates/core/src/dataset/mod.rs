//! Rating ingestion, binarization, k-core filtering and user-level splits.

pub mod filter;
pub mod io;
pub mod matrix;
pub mod ratings;
pub mod split;
pub mod stats;

pub use filter::{kcore_filter, prepare, PrepareConfig, PreparedDataset};
pub use matrix::InteractionMatrix;
pub use ratings::{binarize, load_interactions, ColumnOrder, LoadOptions, RatingFormat, RatingRecord, RawRatings};
pub use split::{
    holdout_split, inject_ground_truth, split_users, DatasetSplits, GroundTruthInjection, HeldOutUsers,
    InjectConfig, SplitRatios,
};
pub use stats::{dataset_stats, DatasetStats};
