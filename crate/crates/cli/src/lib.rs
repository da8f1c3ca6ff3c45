//! Sweep and experiment drivers behind the `matrixflow` binary.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use matrixflow::workload::{configs_from_json, BreakdownRow};
use matrixflow::{
    estimate_gemm, lookup, run_baseline_gemm, run_transformer, AccessMode, DType, Execution, GemmShape, LinkConfig,
    SystemConfig, TransformerConfig, TransformerReport,
};
use rayon::prelude::*;
use serde::Serialize;

pub const CONFIG_ENV: &str = "MATRIXFLOW_CONFIG";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid config, unknown model. Exit code 2.
    Usage(String),
    /// The simulation or writing its output failed. Exit code 3.
    Sim(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Sim(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Sim(m) => f.write_str(m),
        }
    }
}

impl From<matrixflow::Error> for CliError {
    fn from(e: matrixflow::Error) -> Self {
        use matrixflow::Error::*;
        match e {
            InvalidConfig(_) | UnknownModel(_) | Format(_) => CliError::Usage(e.to_string()),
            _ => CliError::Sim(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "matrixflow", version, about = "Page-aligned blocked GEMM accelerator simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Square GEMMs over a list of sizes, one dtype.
    GemmSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024,2048")]
        sizes: Vec<usize>,
        #[arg(long, default_value = "int8")]
        dtype: DType,
    },
    /// One square GEMM size over every dtype.
    DtypeSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "512")]
        sizes: Vec<usize>,
    },
    /// One square GEMM over several link configurations.
    PcieSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 512)]
        size: usize,
        #[arg(long, default_value = "int8")]
        dtype: DType,
        /// Links as LANESxTOTAL_GBPS.
        #[arg(long, value_delimiter = ',', default_value = "16x64,4x16,4x5")]
        links: Vec<LinkSpec>,
    },
    /// A transformer inference, accelerated or on the CPU alone.
    Transformer {
        #[command(flatten)]
        common: Common,
        /// A model name, or `all` for every model in the table.
        #[arg(long, default_value = "bert-base")]
        model: String,
        #[arg(long, default_value = "int32")]
        dtype: DType,
        #[arg(long)]
        seq_len: Option<usize>,
        /// JSON array of model configs replacing the built-in table.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Run everything on the CPU cost model.
        #[arg(long)]
        baseline: bool,
        /// Also write the per-label breakdown as CSV.
        #[arg(long)]
        breakdown_csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// System config JSON; falls back to $MATRIXFLOW_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the access mode of the config.
    #[arg(long)]
    pub mode: Option<AccessMode>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub lanes: u32,
    pub total_gbps: f64,
}

impl FromStr for LinkSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lanes, gbps) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected LANESxGBPS, got `{s}`"))?;
        let lanes: u32 = lanes.trim().parse().map_err(|_| format!("bad lane count in `{s}`"))?;
        let total_gbps: f64 = gbps.trim().parse().map_err(|_| format!("bad rate in `{s}`"))?;
        if lanes == 0 || !(total_gbps > 0.0) {
            return Err(format!("link `{s}` must have lanes >= 1 and a positive rate"));
        }
        Ok(LinkSpec { lanes, total_gbps })
    }
}

impl std::fmt::Display for LinkSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.lanes, self.total_gbps)
    }
}

impl Common {
    pub fn system(&self) -> CliResult<SystemConfig> {
        let path = self.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let mut sys = match path {
            Some(p) => {
                let text = fs::read_to_string(&p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                SystemConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => SystemConfig::default(),
        };
        if let Some(m) = self.mode {
            sys.mode = m;
        }
        Ok(sys)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GemmRow {
    pub size: usize,
    pub mode: String,
    pub dtype: String,
    pub total_ns: u64,
    pub baseline_ns: u64,
    pub speedup: String,
    pub bytes_moved: u64,
    pub energy_mj: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcieRow {
    pub link: String,
    pub lanes: u32,
    pub total_gbps: f64,
    pub size: usize,
    pub dtype: String,
    pub mode: String,
    pub total_ns: u64,
    pub data_transfer_ns: u64,
    pub speedup: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct BreakdownCsvRow<'a> {
    model: &'a str,
    label: &'a str,
    category: &'a str,
    ns: u64,
    percent: String,
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

pub fn gemm_rows(sys: &SystemConfig, sizes: &[usize], dtypes: &[DType]) -> CliResult<Vec<GemmRow>> {
    if sizes.is_empty() {
        return Err(CliError::Usage("no sizes given".into()));
    }
    let points: Vec<(DType, usize)> = dtypes.iter().flat_map(|&d| sizes.iter().map(move |&s| (d, s))).collect();
    let mut rows = points
        .par_iter()
        .enumerate()
        .map(|(idx, &(dtype, size))| {
            let shape = GemmShape::square(size).map_err(|e| CliError::Usage(e.to_string()))?;
            let (r, _) = estimate_gemm(shape, dtype, sys)?;
            Ok((
                idx,
                GemmRow {
                    size,
                    mode: sys.mode.to_string(),
                    dtype: dtype.name().into(),
                    total_ns: r.total_ns,
                    baseline_ns: run_baseline_gemm(shape, dtype, &sys.cpu),
                    speedup: fixed(r.speedup_vs_baseline),
                    bytes_moved: r.bytes_moved,
                    energy_mj: format!("{:.9}", r.energy_mj),
                },
            ))
        })
        .collect::<CliResult<Vec<_>>>()?;
    rows.sort_by_key(|(key, _)| *key);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn pcie_rows(sys: &SystemConfig, size: usize, dtype: DType, links: &[LinkSpec]) -> CliResult<Vec<PcieRow>> {
    let shape = GemmShape::square(size).map_err(|e| CliError::Usage(e.to_string()))?;
    links
        .par_iter()
        .map(|l| {
            // only the rate changes; efficiency and latency come from the config
            let agg = LinkConfig::aggregate(l.lanes, l.total_gbps);
            let link = LinkConfig { lanes: agg.lanes, per_lane_gbps: agg.per_lane_gbps, ..sys.link };
            let sys = sys.clone().with_link(link);
            sys.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let (r, _) = estimate_gemm(shape, dtype, &sys)?;
            Ok(PcieRow {
                link: l.to_string(),
                lanes: l.lanes,
                total_gbps: l.total_gbps,
                size,
                dtype: dtype.name().into(),
                mode: sys.mode.to_string(),
                total_ns: r.total_ns,
                data_transfer_ns: r.category_ns.data_transfer,
                speedup: fixed(r.speedup_vs_baseline),
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Sim(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Sim(e.to_string()))
}

pub fn breakdown_csv(reports: &[TransformerReport]) -> CliResult<Vec<u8>> {
    let rows: Vec<BreakdownCsvRow> = reports
        .iter()
        .flat_map(|r| {
            r.breakdown.iter().map(move |b: &BreakdownRow| BreakdownCsvRow {
                model: &r.model,
                label: &b.label,
                category: &b.category,
                ns: b.ns,
                percent: fixed(b.percent),
            })
        })
        .collect();
    write_csv(&rows)
}

/// Resolves `--model` (a name or `all`) against the table.
pub fn select_models(
    model: &str,
    table: Option<&Path>,
    dtype: DType,
    seq_len: Option<usize>,
) -> CliResult<Vec<TransformerConfig>> {
    let mut selected = match table {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            let all = configs_from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            if model == "all" {
                all
            } else {
                let found = all.into_iter().find(|c| c.name.eq_ignore_ascii_case(model));
                vec![found.ok_or_else(|| CliError::Usage(format!("unknown model `{model}`")))?]
            }
        }
        None if model == "all" => matrixflow::builtin_configs(),
        None => vec![lookup(model)?],
    };
    for c in &mut selected {
        c.dtype = dtype;
        if let Some(s) = seq_len {
            c.seq_len = s;
        }
        c.validate()?;
    }
    Ok(selected)
}

pub fn transformer_reports(sys: &SystemConfig, models: &[TransformerConfig], baseline: bool) -> CliResult<Vec<TransformerReport>> {
    let exec = if baseline { Execution::Baseline } else { Execution::Accelerated };
    models.par_iter().map(|m| Ok(run_transformer(m, sys, exec)?)).collect()
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::Sim(format!("{}: {e}", p.display()))),
        None => io::stdout().write_all(bytes).map_err(|e| CliError::Sim(e.to_string())),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GemmSweep { common, sizes, dtype } => {
            let rows = gemm_rows(&common.system()?, &sizes, &[dtype])?;
            emit(common.out.as_deref(), &write_csv(&rows)?)
        }
        Command::DtypeSweep { common, sizes } => {
            let rows = gemm_rows(&common.system()?, &sizes, &DType::ALL)?;
            emit(common.out.as_deref(), &write_csv(&rows)?)
        }
        Command::PcieSweep { common, size, dtype, links } => {
            let rows = pcie_rows(&common.system()?, size, dtype, &links)?;
            emit(common.out.as_deref(), &write_csv(&rows)?)
        }
        Command::Transformer { common, model, dtype, seq_len, models, baseline, breakdown_csv: csv_path } => {
            let sys = common.system()?;
            let selected = select_models(&model, models.as_deref(), dtype, seq_len)?;
            let reports = transformer_reports(&sys, &selected, baseline)?;
            let mut json = if model == "all" {
                serde_json::to_string_pretty(&reports)
            } else {
                serde_json::to_string_pretty(&reports[0])
            }
            .map_err(|e| CliError::Sim(e.to_string()))?;
            json.push('\n');
            emit(common.out.as_deref(), json.as_bytes())?;
            if let Some(p) = csv_path {
                emit(Some(&p), &breakdown_csv(&reports)?)?;
            }
            Ok(())
        }
    }
}
