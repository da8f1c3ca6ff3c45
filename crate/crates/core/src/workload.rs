//! Transformer encoders as lists of GEMMs plus CPU-side layers.
//!
//! A layer is expanded into six GEMM kinds (shapes are `M×K×N`):
//!
//! | label       | count | shape                 |
//! |-------------|-------|-----------------------|
//! | QKV         | 3     | seq × hidden × hidden |
//! | AttnScores  | heads | seq × d_head × seq    |
//! | AttnContext | heads | seq × seq × d_head    |
//! | OutProj     | 1     | seq × hidden × hidden |
//! | FF1         | 1     | seq × hidden × ff     |
//! | FF2         | 1     | seq × ff × hidden     |
//!
//! Every GEMM instance is a separate offload. Weights are packed once
//! ahead of time and live in memory untouched by the CPU; activations are
//! packed right before each offload, which costs CPU time and leaves them in
//! the LLC.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::dtype::DType;
use crate::engine::{operand_bytes, run_baseline_gemm, simulate_gemm, speedup, AddressSpace, CategoryNs, Placement, SimReport};
use crate::error::{Error, Result};
use crate::gemm::GemmShape;
use crate::sysmodel::AccessMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub name: String,
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub seq_len: usize,
    pub dtype: DType,
}

impl TransformerConfig {
    /// A config with the usual `ff_dim = 4 * hidden`.
    pub fn new(name: &str, num_layers: usize, hidden: usize, heads: usize, seq_len: usize, dtype: DType) -> Self {
        TransformerConfig { name: name.into(), num_layers, hidden, heads, ff_dim: 4 * hidden, seq_len, dtype }
    }

    pub fn d_head(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.num_layers, self.hidden, self.heads, self.ff_dim, self.seq_len];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("model `{}`: all dimensions must be >= 1", self.name)));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "model `{}`: hidden size {} is not divisible by {} heads",
                self.name, self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GemmLabel {
    #[serde(rename = "QKV")]
    Qkv,
    AttnScores,
    AttnContext,
    OutProj,
    #[serde(rename = "FF1")]
    Ff1,
    #[serde(rename = "FF2")]
    Ff2,
}

impl GemmLabel {
    pub const ALL: [GemmLabel; 6] =
        [GemmLabel::Qkv, GemmLabel::AttnScores, GemmLabel::AttnContext, GemmLabel::OutProj, GemmLabel::Ff1, GemmLabel::Ff2];

    pub fn name(self) -> &'static str {
        match self {
            GemmLabel::Qkv => "QKV",
            GemmLabel::AttnScores => "AttnScores",
            GemmLabel::AttnContext => "AttnContext",
            GemmLabel::OutProj => "OutProj",
            GemmLabel::Ff1 => "FF1",
            GemmLabel::Ff2 => "FF2",
        }
    }

    /// Whether B is a trained weight (as opposed to another activation).
    pub fn b_is_weight(self) -> bool {
        !matches!(self, GemmLabel::AttnScores | GemmLabel::AttnContext)
    }
}

impl fmt::Display for GemmLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GemmTask {
    pub label: GemmLabel,
    pub shape: GemmShape,
    pub count: usize,
}

/// Elements processed per layer by the CPU-side layers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NonGemmCounts {
    pub softmax: u64,
    pub layernorm: u64,
    pub activation: u64,
    pub transpose: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Expansion {
    pub num_layers: usize,
    pub tasks: Vec<GemmTask>,
    pub non_gemm: NonGemmCounts,
}

impl Expansion {
    pub fn total_macs(&self) -> u64 {
        self.num_layers as u64 * self.tasks.iter().map(|t| t.count as u64 * t.shape.macs()).sum::<u64>()
    }
}

/// Per-layer GEMM list and CPU work of `config`.
pub fn expand(config: &TransformerConfig) -> Result<Expansion> {
    config.validate()?;
    let (s, h, f, nh, dh) = (config.seq_len, config.hidden, config.ff_dim, config.heads, config.d_head());
    // GemmShape::new takes (m, n, k)
    let mk = |label, m, k, n, count| -> Result<GemmTask> { Ok(GemmTask { label, shape: GemmShape::new(m, n, k)?, count }) };
    let tasks = vec![
        mk(GemmLabel::Qkv, s, h, h, 3)?,
        mk(GemmLabel::AttnScores, s, dh, s, nh)?,
        mk(GemmLabel::AttnContext, s, s, dh, nh)?,
        mk(GemmLabel::OutProj, s, h, h, 1)?,
        mk(GemmLabel::Ff1, s, h, f, 1)?,
        mk(GemmLabel::Ff2, s, f, h, 1)?,
    ];
    let (s, h, f, nh) = (s as u64, h as u64, f as u64, nh as u64);
    let non_gemm = NonGemmCounts { softmax: nh * s * s, layernorm: 2 * s * h, activation: s * f, transpose: s * h };
    Ok(Expansion { num_layers: config.num_layers, tasks, non_gemm })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Baseline,
    Accelerated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownRow {
    pub label: String,
    pub category: String,
    pub ns: u64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformerReport {
    pub model: String,
    pub dtype: DType,
    pub execution: Execution,
    pub mode: Option<AccessMode>,
    #[serde(flatten)]
    pub report: SimReport,
    pub baseline_ns: u64,
    /// Time spent in GEMM labels, all categories.
    pub gemm_ns: u64,
    /// One-time weight packing, not part of `total_ns`.
    pub setup_ns: u64,
    pub gemm_macs: u64,
    pub breakdown: Vec<BreakdownRow>,
}

impl TransformerReport {
    pub fn gemm_share(&self) -> f64 {
        self.gemm_ns as f64 / self.report.total_ns as f64
    }

    /// Summed time of one label over all categories.
    pub fn label_ns(&self, label: &str) -> u64 {
        self.breakdown.iter().filter(|r| r.label == label).map(|r| r.ns).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

const CATEGORIES: [&str; 4] = ["gemm_compute", "data_transfer", "control", "non_gemm_cpu"];
const CPU_LABELS: [&str; 5] = ["Softmax", "LayerNorm", "Activation", "Transpose", "Pack"];

fn category_values(c: &CategoryNs) -> [u64; 4] {
    [c.gemm_compute, c.data_transfer, c.control, c.non_gemm_cpu]
}

/// Runs one inference of `config` on the CPU alone or with GEMMs offloaded.
pub fn run_transformer(config: &TransformerConfig, sys: &SystemConfig, execution: Execution) -> Result<TransformerReport> {
    sys.validate()?;
    let exp = expand(config)?;
    let dtype = config.dtype;
    let cpu = &sys.cpu;
    let layers = exp.num_layers as u64;
    let ng = exp.non_gemm;

    let cpu_ns = |elements: u64, cycles: f64| cpu.cycles_to_ns(elements as f64 * cycles);
    let cpu_layer_ns = [
        cpu_ns(ng.softmax, cpu.softmax_cycles_per_element),
        cpu_ns(ng.layernorm, cpu.layernorm_cycles_per_element),
        cpu_ns(ng.activation, cpu.activation_cycles_per_element),
        cpu_ns(ng.transpose, cpu.transpose_cycles_per_element),
    ];

    let mut per_label: Vec<(String, CategoryNs)> = Vec::new();
    let mut add = |label: &str, c: CategoryNs| match per_label.iter_mut().find(|(l, _)| l == label) {
        Some((_, acc)) => acc.add(&c),
        None => per_label.push((label.to_string(), c)),
    };

    let baseline_gemm: Vec<u64> =
        exp.tasks.iter().map(|t| t.count as u64 * run_baseline_gemm(t.shape, dtype, cpu)).collect();
    let baseline_ns = layers * (baseline_gemm.iter().sum::<u64>() + cpu_layer_ns.iter().sum::<u64>());

    let mut energy_mj = 0.0;
    let mut bytes_moved = 0;
    let mut setup_ns = 0;
    match execution {
        Execution::Baseline => {
            for (t, ns) in exp.tasks.iter().zip(&baseline_gemm) {
                add(t.label.name(), CategoryNs { gemm_compute: layers * ns, ..Default::default() });
            }
        }
        Execution::Accelerated => {
            let w = sys.array.dim;
            let mut mem = sys.memory_system();
            let mut space = AddressSpace::default();
            let warm = sys.mode == AccessMode::DC && sys.engine.prewarm_operands;
            let pack_cycles = cpu.pack_cycles_per_element;

            // activation buffers are reused by every layer
            let act: Vec<Placement> = exp
                .tasks
                .iter()
                .map(|t| {
                    let (a, b, c) = operand_bytes(t.shape, dtype, w)?;
                    Ok(Placement { a: space.alloc(a), b: if t.label.b_is_weight() { 0 } else { space.alloc(b) }, c: space.alloc(c) })
                })
                .collect::<Result<_>>()?;

            for _ in 0..exp.num_layers {
                for (t, base) in exp.tasks.iter().zip(&act) {
                    let (a_bytes, b_bytes, _) = operand_bytes(t.shape, dtype, w)?;
                    let s = t.shape;
                    for _ in 0..t.count {
                        let mut place = *base;
                        let mut packed = s.m * s.k;
                        if t.label.b_is_weight() {
                            place.b = space.alloc(b_bytes);
                            setup_ns += cpu_ns((s.k * s.n) as u64, pack_cycles);
                        } else {
                            packed += s.k * s.n;
                            if warm {
                                mem.cpu_touch(place.b, b_bytes);
                            }
                        }
                        if warm {
                            mem.cpu_touch(place.a, a_bytes);
                        }
                        add("Pack", CategoryNs { non_gemm_cpu: cpu_ns(packed as u64, pack_cycles), ..Default::default() });
                        let timing = simulate_gemm(s, dtype, sys, &mut mem, place)?;
                        energy_mj += timing.energy_mj;
                        add(t.label.name(), timing.categories);
                    }
                }
            }
            bytes_moved = mem.ledger().bytes_moved();
        }
    }
    for (label, ns) in CPU_LABELS.iter().zip(cpu_layer_ns) {
        add(label, CategoryNs { non_gemm_cpu: layers * ns, ..Default::default() });
    }

    let mut category_ns = CategoryNs::default();
    let mut gemm_ns = 0;
    for (label, c) in &per_label {
        category_ns.add(c);
        if GemmLabel::ALL.iter().any(|g| g.name() == label) {
            gemm_ns += c.total();
        }
    }
    let total_ns = category_ns.total();
    let mut breakdown = Vec::new();
    for (label, c) in &per_label {
        for (cat, ns) in CATEGORIES.iter().zip(category_values(c)) {
            if ns > 0 {
                breakdown.push(BreakdownRow {
                    label: label.clone(),
                    category: cat.to_string(),
                    ns,
                    percent: 100.0 * ns as f64 / total_ns as f64,
                });
            }
        }
    }

    Ok(TransformerReport {
        model: config.name.clone(),
        dtype,
        execution,
        mode: (execution == Execution::Accelerated).then_some(sys.mode),
        report: SimReport {
            total_ns,
            category_ns,
            bytes_moved,
            energy_mj,
            speedup_vs_baseline: speedup(total_ns, baseline_ns),
        },
        baseline_ns,
        gemm_ns,
        setup_ns,
        gemm_macs: exp.total_macs(),
        breakdown,
    })
}

/// The built-in encoder models, Int32 by default.
pub fn builtin_configs() -> Vec<TransformerConfig> {
    let d = DType::Int32;
    vec![
        TransformerConfig::new("bert-medium", 8, 512, 8, 128, d),
        TransformerConfig::new("bert-base", 12, 768, 12, 128, d),
        TransformerConfig::new("bert-large", 24, 1024, 16, 128, d),
        TransformerConfig::new("vit-base", 12, 768, 12, 197, d),
        TransformerConfig::new("vit-large", 24, 1024, 16, 197, d),
        TransformerConfig::new("vit-huge", 32, 1280, 16, 197, d),
    ]
}

/// Looks a model up by name, ignoring case and `_`/`-` differences.
pub fn lookup(name: &str) -> Result<TransformerConfig> {
    let norm = |s: &str| s.to_ascii_lowercase().replace('_', "-");
    let want = norm(name);
    builtin_configs().into_iter().find(|c| c.name == want).ok_or_else(|| Error::UnknownModel(name.to_string()))
}

/// Reads a JSON array of model configs. `ff_dim` defaults to `4 * hidden`.
pub fn configs_from_json(text: &str) -> Result<Vec<TransformerConfig>> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Row {
        name: String,
        num_layers: usize,
        hidden: usize,
        heads: usize,
        ff_dim: Option<usize>,
        seq_len: usize,
        #[serde(default = "default_dtype")]
        dtype: DType,
    }
    fn default_dtype() -> DType {
        DType::Int32
    }
    let rows: Vec<Row> = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    rows.into_iter()
        .map(|r| {
            let c = TransformerConfig {
                ff_dim: r.ff_dim.unwrap_or(4 * r.hidden),
                name: r.name,
                num_layers: r.num_layers,
                hidden: r.hidden,
                heads: r.heads,
                seq_len: r.seq_len,
                dtype: r.dtype,
            };
            c.validate()?;
            Ok(c)
        })
        .collect()
}
