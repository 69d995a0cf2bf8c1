//! LoRA adapter auditing: parse tensor containers, reconstruct full-rank
//! weight updates, and profile relative update magnitude across the network.

mod analysis;
mod tensorfile;

pub use analysis::{
    audit_adapter_files, compute_stats, depth_profile, global_histogram, pair_adapters,
    reconstruct_update, relative_update, resolve_alpha_rank, write_histogram_csv, write_stats_csv,
    AdapterPair, AuditError, AuditReport, DepthProfile, GlobalHistogram, HistogramBins,
    LayerNameScheme, ModuleKind, RelativeUpdate, UpdateStats, HISTOGRAM_CSV_HEADER, HIST_BINS,
    HIST_HI, HIST_LO, STATS_CSV_HEADER, THRESHOLDS,
};
pub use tensorfile::{
    read_tensor_file, write_tensor_file, Dtype, TensorEntry, TensorError, TensorFileReader,
    TensorMeta, TensorWrite,
};
