//! Reconstructing full-rank weight updates from LoRA adapter pairs and
//! profiling relative update magnitude across depth and module type.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use ndarray::Array2;
use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use super::tensorfile::{TensorEntry, TensorError, TensorFileReader};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("adapter {path} has lora_{present} but no matching lora_{missing}")]
    OrphanAdapter {
        path: String,
        present: char,
        missing: char,
    },
    #[error("adapter {path}: {message}")]
    ShapeMismatch { path: String, message: String },
    #[error("adapter {path}: tensor rank {tensor_rank} disagrees with configured rank {config_rank}")]
    RankMismatch {
        path: String,
        tensor_rank: usize,
        config_rank: usize,
    },
    #[error("no base weight tensor matches adapter layer {path}")]
    MissingBase { path: String },
    #[error("adapter tensor name does not match the layer naming scheme: {0}")]
    UnparsedLayerName(String),
    #[error("every base weight is zero; no relative updates to analyze")]
    AllMasked,
    #[error("layer indices are not contiguous: missing layer {0}")]
    NonContiguousLayers(usize),
    #[error("invalid layer-name scheme: {0}")]
    BadScheme(String),
    #[error("alpha is required (not in sidecar config, not given as a flag)")]
    MissingAlpha,
    #[error("audit io: {0}")]
    Io(#[from] io::Error),
}

/// The seven module slots LoRA adapters attach to in each transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModuleKind {
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    MlpGate,
    MlpUp,
    MlpDown,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 7] = [
        ModuleKind::AttnQ,
        ModuleKind::AttnK,
        ModuleKind::AttnV,
        ModuleKind::AttnO,
        ModuleKind::MlpGate,
        ModuleKind::MlpUp,
        ModuleKind::MlpDown,
    ];

    pub fn is_attention(&self) -> bool {
        matches!(
            self,
            ModuleKind::AttnQ | ModuleKind::AttnK | ModuleKind::AttnV | ModuleKind::AttnO
        )
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModuleKind::AttnQ => "attn_q",
            ModuleKind::AttnK => "attn_k",
            ModuleKind::AttnV => "attn_v",
            ModuleKind::AttnO => "attn_o",
            ModuleKind::MlpGate => "mlp_gate",
            ModuleKind::MlpUp => "mlp_up",
            ModuleKind::MlpDown => "mlp_down",
        }
    }
}

/// Maps tensor names to (layer index, module kind).
///
/// The default matches Llama-style names like
/// `model.layers.17.self_attn.q_proj.weight`; a custom pattern with three
/// capture groups (digits, attention-or-mlp block, projection name) covers
/// other schemes.
pub struct LayerNameScheme {
    regex: Regex,
}

impl LayerNameScheme {
    pub fn default_llama() -> Self {
        Self {
            regex: Regex::new(r"layers\.(\d+)\.(self_attn|mlp)\.(q|k|v|o|gate|up|down)_proj")
                .expect("valid constant regex"),
        }
    }

    pub fn from_pattern(pattern: &str) -> Result<Self, AuditError> {
        let regex = Regex::new(pattern).map_err(|e| AuditError::BadScheme(e.to_string()))?;
        if regex.captures_len() < 4 {
            return Err(AuditError::BadScheme(
                "pattern needs three capture groups: layer index, block, projection".to_string(),
            ));
        }
        Ok(Self { regex })
    }

    /// Load `{"pattern": "..."}` from a mapping file.
    pub fn from_mapping_file(path: &Path) -> Result<Self, AuditError> {
        #[derive(Deserialize)]
        struct Mapping {
            pattern: String,
        }
        let raw = std::fs::read_to_string(path)?;
        let mapping: Mapping =
            serde_json::from_str(&raw).map_err(|e| AuditError::BadScheme(e.to_string()))?;
        Self::from_pattern(&mapping.pattern)
    }

    pub fn parse(&self, name: &str) -> Option<(usize, ModuleKind)> {
        let caps = self.regex.captures(name)?;
        let layer: usize = caps.get(1)?.as_str().parse().ok()?;
        let block = caps.get(2)?.as_str();
        let proj = caps.get(3)?.as_str();
        let attention = block.contains("attn");
        let kind = match (attention, proj) {
            (true, "q") => ModuleKind::AttnQ,
            (true, "k") => ModuleKind::AttnK,
            (true, "v") => ModuleKind::AttnV,
            (true, "o") => ModuleKind::AttnO,
            (false, "gate") => ModuleKind::MlpGate,
            (false, "up") => ModuleKind::MlpUp,
            (false, "down") => ModuleKind::MlpDown,
            _ => return None,
        };
        Some((layer, kind))
    }
}

/// LoRA A and B matrices for one layer, with the scaling hyperparameters.
#[derive(Debug, Clone)]
pub struct AdapterPair {
    pub layer_path: String,
    /// r × d_in
    pub a: Array2<f64>,
    /// d_out × r
    pub b: Array2<f64>,
    pub alpha: f64,
    pub rank: usize,
}

/// Group `<path>.lora_A` / `<path>.lora_B` tensors into pairs.
pub fn pair_adapters(
    entries: &[TensorEntry],
    alpha: f64,
    rank: usize,
) -> Result<Vec<AdapterPair>, AuditError> {
    let mut sides: BTreeMap<String, (Option<&TensorEntry>, Option<&TensorEntry>)> =
        BTreeMap::new();
    for entry in entries {
        let stripped = entry
            .name
            .strip_suffix(".weight")
            .unwrap_or(entry.name.as_str());
        if let Some(path) = stripped.strip_suffix(".lora_A") {
            sides.entry(path.to_string()).or_default().0 = Some(entry);
        } else if let Some(path) = stripped.strip_suffix(".lora_B") {
            sides.entry(path.to_string()).or_default().1 = Some(entry);
        }
    }

    let mut pairs = Vec::new();
    for (path, (a, b)) in sides {
        let a = a.ok_or(AuditError::OrphanAdapter {
            path: path.clone(),
            present: 'B',
            missing: 'A',
        })?;
        let b = b.ok_or(AuditError::OrphanAdapter {
            path: path.clone(),
            present: 'A',
            missing: 'B',
        })?;
        let to_matrix = |e: &TensorEntry| -> Result<Array2<f64>, AuditError> {
            if e.shape.len() != 2 {
                return Err(AuditError::ShapeMismatch {
                    path: path.clone(),
                    message: format!("{} has shape {:?}, expected a matrix", e.name, e.shape),
                });
            }
            Array2::from_shape_vec((e.shape[0], e.shape[1]), e.data.clone()).map_err(|e| {
                AuditError::ShapeMismatch {
                    path: path.clone(),
                    message: e.to_string(),
                }
            })
        };
        let a_mat = to_matrix(a)?;
        let b_mat = to_matrix(b)?;
        if a_mat.nrows() != b_mat.ncols() {
            return Err(AuditError::ShapeMismatch {
                path,
                message: format!(
                    "A has {} rows but B has {} columns",
                    a_mat.nrows(),
                    b_mat.ncols()
                ),
            });
        }
        if a_mat.nrows() != rank {
            return Err(AuditError::RankMismatch {
                path,
                tensor_rank: a_mat.nrows(),
                config_rank: rank,
            });
        }
        pairs.push(AdapterPair {
            layer_path: path,
            a: a_mat,
            b: b_mat,
            alpha,
            rank,
        });
    }
    Ok(pairs)
}

/// The full-rank update (alpha / rank) · B · A, shaped d_out × d_in.
pub fn reconstruct_update(pair: &AdapterPair) -> Array2<f64> {
    pair.b.dot(&pair.a) * (pair.alpha / pair.rank as f64)
}

/// Elementwise |update / base| with zero base weights masked out.
pub struct RelativeUpdate {
    /// |u/w| where the base weight is nonzero; 0.0 placeholder elsewhere.
    pub rel: Array2<f64>,
    pub zero_base: Array2<bool>,
    pub n_zero_base: usize,
}

impl RelativeUpdate {
    /// Values over unmasked cells only.
    pub fn unmasked(&self) -> impl Iterator<Item = f64> + '_ {
        self.rel
            .iter()
            .zip(self.zero_base.iter())
            .filter(|(_, &masked)| !masked)
            .map(|(&v, _)| v)
    }
}

pub fn relative_update(
    update: &Array2<f64>,
    base: &Array2<f64>,
) -> Result<RelativeUpdate, AuditError> {
    if update.dim() != base.dim() {
        return Err(AuditError::ShapeMismatch {
            path: String::new(),
            message: format!(
                "update is {:?} but base is {:?}",
                update.dim(),
                base.dim()
            ),
        });
    }
    let mut rel = Array2::zeros(update.dim());
    let mut zero_base = Array2::from_elem(update.dim(), false);
    let mut n_zero_base = 0usize;
    ndarray::Zip::from(&mut rel)
        .and(&mut zero_base)
        .and(update)
        .and(base)
        .for_each(|r, m, &u, &w| {
            if w == 0.0 {
                *m = true;
                n_zero_base += 1;
            } else {
                *r = (u / w).abs();
            }
        });
    Ok(RelativeUpdate {
        rel,
        zero_base,
        n_zero_base,
    })
}

/// Thresholds every fraction is reported at.
pub const THRESHOLDS: [f64; 3] = [0.01, 0.1, 1.0];

pub const HIST_LO: f64 = 1e-8;
pub const HIST_HI: f64 = 1e4;
pub const HIST_BINS: usize = 120;

/// Log10-spaced bin counts over [1e-8, 1e4], with out-of-range tallies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramBins {
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Default for HistogramBins {
    fn default() -> Self {
        Self {
            counts: vec![0; HIST_BINS],
            underflow: 0,
            overflow: 0,
        }
    }
}

impl HistogramBins {
    const STEP: f64 = 12.0 / HIST_BINS as f64; // log10 span of one bin

    pub fn add(&mut self, value: f64) {
        if value < HIST_LO {
            self.underflow += 1;
        } else if value >= HIST_HI {
            self.overflow += 1;
        } else {
            let idx = ((value.log10() + 8.0) / Self::STEP) as usize;
            self.counts[idx.min(HIST_BINS - 1)] += 1;
        }
    }

    pub fn merge(&mut self, other: &HistogramBins) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
    }

    pub fn edges(bin: usize) -> (f64, f64) {
        let lo = 10f64.powf(-8.0 + bin as f64 * Self::STEP);
        let hi = 10f64.powf(-8.0 + (bin + 1) as f64 * Self::STEP);
        (lo, hi)
    }
}

/// Per-layer, per-module update statistics.
#[derive(Debug, Clone)]
pub struct UpdateStats {
    pub layer_index: usize,
    pub module_kind: ModuleKind,
    pub n_weights: usize,
    pub n_zero_base: usize,
    /// Counts of unmasked cells exceeding each of [`THRESHOLDS`]; counted
    /// directly from the values, never from histogram bins.
    pub n_gt: [usize; 3],
    pub histogram: HistogramBins,
}

impl UpdateStats {
    pub fn n_unmasked(&self) -> usize {
        self.n_weights - self.n_zero_base
    }

    /// Fraction of unmasked weights exceeding THRESHOLDS[i]; 0 when every
    /// cell is masked.
    pub fn frac_gt(&self, i: usize) -> f64 {
        let denom = self.n_unmasked();
        if denom == 0 {
            0.0
        } else {
            self.n_gt[i] as f64 / denom as f64
        }
    }
}

/// Summarize one layer's relative update matrix.
pub fn compute_stats(
    layer_index: usize,
    module_kind: ModuleKind,
    rel: &RelativeUpdate,
) -> UpdateStats {
    let mut n_gt = [0usize; 3];
    let mut histogram = HistogramBins::default();
    for value in rel.unmasked() {
        for (slot, threshold) in n_gt.iter_mut().zip(THRESHOLDS) {
            if value > threshold {
                *slot += 1;
            }
        }
        histogram.add(value);
    }
    UpdateStats {
        layer_index,
        module_kind,
        n_weights: rel.rel.len(),
        n_zero_base: rel.n_zero_base,
        n_gt,
        histogram,
    }
}

/// Network-wide histogram plus exact tail fractions.
#[derive(Debug, Clone)]
pub struct GlobalHistogram {
    pub bins: HistogramBins,
    pub n_values: usize,
    pub frac_gt_001: f64,
    pub frac_gt_1: f64,
}

/// Merge per-layer stats into the global histogram. Tail fractions come
/// from the exact per-layer threshold counts, not from bins.
pub fn global_histogram(stats: &[UpdateStats]) -> Result<GlobalHistogram, AuditError> {
    let mut bins = HistogramBins::default();
    let mut n_values = 0usize;
    let mut n_gt_001 = 0usize;
    let mut n_gt_1 = 0usize;
    for s in stats {
        bins.merge(&s.histogram);
        n_values += s.n_unmasked();
        n_gt_001 += s.n_gt[0];
        n_gt_1 += s.n_gt[2];
    }
    if n_values == 0 {
        return Err(AuditError::AllMasked);
    }
    Ok(GlobalHistogram {
        bins,
        n_values,
        frac_gt_001: n_gt_001 as f64 / n_values as f64,
        frac_gt_1: n_gt_1 as f64 / n_values as f64,
    })
}

/// Fraction-over-depth series split into all / attention-only / MLP-only,
/// one value per threshold, plus the attention-to-MLP ratio per layer.
#[derive(Debug, Clone)]
pub struct DepthProfile {
    pub layers: Vec<usize>,
    pub all: Vec<[f64; 3]>,
    pub attention: Vec<[f64; 3]>,
    pub mlp: Vec<[f64; 3]>,
    pub attn_mlp_ratio: Vec<[Option<f64>; 3]>,
}

pub fn depth_profile(stats: &[UpdateStats]) -> Result<DepthProfile, AuditError> {
    let mut by_layer: BTreeMap<usize, Vec<&UpdateStats>> = BTreeMap::new();
    for s in stats {
        by_layer.entry(s.layer_index).or_default().push(s);
    }
    if let (Some(&first), Some(&last)) = (
        by_layer.keys().next(),
        by_layer.keys().next_back(),
    ) {
        for layer in first..=last {
            if !by_layer.contains_key(&layer) {
                return Err(AuditError::NonContiguousLayers(layer));
            }
        }
    }

    let group_fracs = |group: &[&&UpdateStats]| -> [f64; 3] {
        let denom: usize = group.iter().map(|s| s.n_unmasked()).sum();
        let mut fracs = [0.0; 3];
        if denom > 0 {
            for (i, frac) in fracs.iter_mut().enumerate() {
                let count: usize = group.iter().map(|s| s.n_gt[i]).sum();
                *frac = count as f64 / denom as f64;
            }
        }
        fracs
    };

    let mut profile = DepthProfile {
        layers: Vec::new(),
        all: Vec::new(),
        attention: Vec::new(),
        mlp: Vec::new(),
        attn_mlp_ratio: Vec::new(),
    };
    for (layer, group) in &by_layer {
        let everything: Vec<&&UpdateStats> = group.iter().collect();
        let attn: Vec<&&UpdateStats> = group
            .iter()
            .filter(|s| s.module_kind.is_attention())
            .collect();
        let mlp: Vec<&&UpdateStats> = group
            .iter()
            .filter(|s| !s.module_kind.is_attention())
            .collect();
        let attn_fracs = group_fracs(&attn);
        let mlp_fracs = group_fracs(&mlp);
        let mut ratio = [None; 3];
        for i in 0..3 {
            if mlp_fracs[i] > 0.0 {
                ratio[i] = Some(attn_fracs[i] / mlp_fracs[i]);
            }
        }
        profile.layers.push(*layer);
        profile.all.push(group_fracs(&everything));
        profile.attention.push(attn_fracs);
        profile.mlp.push(mlp_fracs);
        profile.attn_mlp_ratio.push(ratio);
    }
    Ok(profile)
}

/// Everything the lora-audit stage produces.
pub struct AuditReport {
    pub stats: Vec<UpdateStats>,
    pub global: GlobalHistogram,
    pub profile: DepthProfile,
    pub alpha: f64,
    pub rank: usize,
}

/// Hyperparameters read from a PEFT-style sidecar `adapter_config.json`.
#[derive(Debug, Default, Deserialize)]
struct SidecarConfig {
    #[serde(alias = "lora_alpha")]
    alpha: Option<f64>,
    #[serde(alias = "r")]
    rank: Option<usize>,
}

/// Resolve alpha and rank: sidecar config beats flags; rank can fall back
/// to the adapter tensor shape, alpha never defaults.
pub fn resolve_alpha_rank(
    adapter_path: &Path,
    alpha_flag: Option<f64>,
    rank_flag: Option<usize>,
    entries: &[TensorEntry],
) -> Result<(f64, usize), AuditError> {
    let sidecar = adapter_path
        .parent()
        .map(|dir| dir.join("adapter_config.json"))
        .filter(|p| p.exists())
        .map(|p| -> Result<SidecarConfig, AuditError> {
            let raw = std::fs::read_to_string(&p)?;
            serde_json::from_str(&raw).map_err(|e| AuditError::BadScheme(e.to_string()))
        })
        .transpose()?
        .unwrap_or_default();

    let alpha = sidecar
        .alpha
        .or(alpha_flag)
        .ok_or(AuditError::MissingAlpha)?;
    let rank = sidecar.rank.or(rank_flag).or_else(|| {
        entries
            .iter()
            .find(|e| e.name.contains(".lora_A") && e.shape.len() == 2)
            .map(|e| e.shape[0])
    });
    let rank = rank.ok_or_else(|| {
        AuditError::BadScheme("rank not in sidecar, flags, or tensor shapes".to_string())
    })?;
    Ok((alpha, rank))
}

/// Full audit: pair adapters, reconstruct updates layer by layer against
/// the base weights, and aggregate. Base tensors load one at a time so peak
/// memory stays at one d_out × d_in block.
pub fn audit_adapter_files(
    base_path: &Path,
    adapter_path: &Path,
    alpha_flag: Option<f64>,
    rank_flag: Option<usize>,
    scheme: &LayerNameScheme,
) -> Result<AuditReport, AuditError> {
    let adapter_entries = super::tensorfile::read_tensor_file(adapter_path)?;
    let (alpha, rank) = resolve_alpha_rank(adapter_path, alpha_flag, rank_flag, &adapter_entries)?;
    let mut pairs = pair_adapters(&adapter_entries, alpha, rank)?;
    drop(adapter_entries);

    let mut base = TensorFileReader::open(base_path)?;
    let base_index: BTreeMap<(usize, ModuleKind), String> = base
        .metas()
        .iter()
        .filter_map(|m| scheme.parse(&m.name).map(|key| (key, m.name.clone())))
        .collect();

    pairs.sort_by_key(|p| {
        scheme
            .parse(&p.layer_path)
            .map(|(layer, kind)| (layer, kind))
    });

    let mut stats = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let (layer, kind) = scheme
            .parse(&pair.layer_path)
            .ok_or_else(|| AuditError::UnparsedLayerName(pair.layer_path.clone()))?;
        let base_name = base_index
            .get(&(layer, kind))
            .ok_or_else(|| AuditError::MissingBase {
                path: pair.layer_path.clone(),
            })?;
        let base_entry = base.load(base_name)?;
        let base_matrix = Array2::from_shape_vec(
            (base_entry.shape[0], base_entry.shape[1]),
            base_entry.data,
        )
        .map_err(|e| AuditError::ShapeMismatch {
            path: pair.layer_path.clone(),
            message: e.to_string(),
        })?;
        let update = reconstruct_update(pair);
        if update.dim() != base_matrix.dim() {
            return Err(AuditError::ShapeMismatch {
                path: pair.layer_path.clone(),
                message: format!(
                    "reconstructed update is {:?} but base weight is {:?}",
                    update.dim(),
                    base_matrix.dim()
                ),
            });
        }
        let rel = relative_update(&update, &base_matrix)?;
        stats.push(compute_stats(layer, kind, &rel));
    }

    let global = global_histogram(&stats)?;
    let profile = depth_profile(&stats)?;
    Ok(AuditReport {
        stats,
        global,
        profile,
        alpha,
        rank,
    })
}

pub const STATS_CSV_HEADER: &str =
    "layer,module,n_weights,n_zero_base,frac_gt_0.01,frac_gt_0.1,frac_gt_1.0";

pub fn write_stats_csv<W: io::Write>(
    stats: &[UpdateStats],
    fingerprint: &str,
    mut writer: W,
) -> io::Result<()> {
    writeln!(writer, "# memprobe fingerprint={fingerprint} zero_base=masked fractions=weight-count-over-unmasked")?;
    writeln!(writer, "{STATS_CSV_HEADER}")?;
    for s in stats {
        writeln!(
            writer,
            "{},{},{},{},{:.9},{:.9},{:.9}",
            s.layer_index,
            s.module_kind.as_str(),
            s.n_weights,
            s.n_zero_base,
            s.frac_gt(0),
            s.frac_gt(1),
            s.frac_gt(2)
        )?;
    }
    Ok(())
}

pub const HISTOGRAM_CSV_HEADER: &str = "bin_lo,bin_hi,count";

pub fn write_histogram_csv<W: io::Write>(
    hist: &GlobalHistogram,
    fingerprint: &str,
    mut writer: W,
) -> io::Result<()> {
    writeln!(
        writer,
        "# memprobe fingerprint={fingerprint} n_values={} frac_gt_0.01={:.9} frac_gt_1.0={:.9}",
        hist.n_values, hist.frac_gt_001, hist.frac_gt_1
    )?;
    writeln!(writer, "{HISTOGRAM_CSV_HEADER}")?;
    writeln!(writer, "0,{:.9e},{}", HIST_LO, hist.bins.underflow)?;
    for (bin, count) in hist.bins.counts.iter().enumerate() {
        let (lo, hi) = HistogramBins::edges(bin);
        writeln!(writer, "{lo:.9e},{hi:.9e},{count}")?;
    }
    writeln!(writer, "{:.9e},inf,{}", HIST_HI, hist.bins.overflow)?;
    Ok(())
}
