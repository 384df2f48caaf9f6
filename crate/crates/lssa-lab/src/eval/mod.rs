//! Retrieval evaluation: indices over dataset splits, recall at k in both
//! directions, attack success rates over originally-correct queries, and
//! source→target transfer matrices.

pub mod index;
pub mod transfer;

pub use index::{
    adversarial_index, attack_success_rate, build_index, pair_rank, recall_at_k, Asr, Direction,
    RetrievalIndex,
};
pub use transfer::{
    median, score_transfer, transfer_matrix, DirectionMetrics, PairRecord, RecallTriple,
    TransferReport, REPORT_SCHEMA_VERSION,
};
