//! Page-aligned blocked GEMM and a timing model of a loosely-coupled
//! systolic-array accelerator.
//!
//! * [`layout`]: matrices cut into 4 KiB page blocks.
//! * [`gemm`]: scalar oracle and the blocked multiply.
//! * [`systolic`]: the PE array, functionally and in cycles.
//! * [`sysmodel`]: PCIe link, DMA, SMMU, LLC and DRAM.
//! * [`engine`]: the offload pipeline and its [`SimReport`].
//! * [`workload`]: transformer layers expanded into GEMMs and CPU work.

pub mod config;
pub mod dtype;
pub mod engine;
pub mod error;
pub mod gemm;
pub mod layout;
pub mod matrix;
pub mod sysmodel;
pub mod systolic;
pub mod workload;

pub use half::f16;

pub use config::{CpuCostModel, EngineConfig, PerDType, SystemConfig};
pub use dtype::{AccRule, DType, Element, PpaEntry, PpaTable};
pub use engine::{estimate_gemm, run_baseline_gemm, run_gemm, speedup, CategoryNs, GemmRun, SimReport};
pub use error::{Error, Result};
pub use gemm::{block_matrix_multiply, multi_acc, naive_gemm, GemmShape};
pub use layout::{block_geometry, BlockGeometry, BlockedMatrix, Layout, PAGE_BYTES};
pub use matrix::Matrix;
pub use sysmodel::{AccessMode, LinkConfig, MemoryConfig, SmmuConfig, TransferLedger};
pub use systolic::{block_energy, sa_compute_block, sa_cycles, ArrayConfig};
pub use workload::{builtin_configs, expand, lookup, run_transformer, Execution, GemmLabel, TransformerConfig, TransformerReport};
