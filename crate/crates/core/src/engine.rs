//! The offload pipeline: DMA fetches of A/B pages into the input buffers,
//! block ops on the array, result tiles collected in Buffer C and written
//! back one page at a time.
//!
//! Time runs on a 1 ns tick. Per step `(i, j, k)` the read DMA engine fetches
//! page `A(i, k)` then page `B(j, k)` (each: descriptor, translation,
//! payload); the array starts the block op once both pages are in and it is
//! idle. With double buffering the next fetch may start as soon as the
//! buffer slot it overwrites has been consumed. Buffer C is flushed on the
//! upstream direction of the link when a page of result tiles is complete
//! (or a row band ends) and runs concurrently with the next fetches; the
//! array stalls only if it must latch a tile while the previous flush is
//! still draining.
//!
//! Categories are attributed by what is exposed on the timeline: any instant
//! where the array is busy counts as `gemm_compute`; otherwise, if a payload
//! is moving, `data_transfer`; everything else (the CPU command, descriptor
//! fetches, translations, stalls) is `control`. The categories therefore
//! partition `[0, total)` exactly.

use serde::{Deserialize, Serialize};

use crate::config::{CpuCostModel, SystemConfig};
use crate::dtype::DType;
use crate::error::{Error, Result};
use crate::gemm::{block_matrix_multiply, check_operands, GemmShape};
use crate::layout::{block_geometry, BlockedMatrix, PAGE_BYTES};
use crate::sysmodel::{AccessMode, Direction, MemorySystem, TransferLedger};
use crate::systolic::block_energy;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryNs {
    pub gemm_compute: u64,
    pub data_transfer: u64,
    pub control: u64,
    pub non_gemm_cpu: u64,
}

impl CategoryNs {
    pub fn total(&self) -> u64 {
        self.gemm_compute + self.data_transfer + self.control + self.non_gemm_cpu
    }

    pub fn add(&mut self, other: &CategoryNs) {
        self.gemm_compute += other.gemm_compute;
        self.data_transfer += other.data_transfer;
        self.control += other.control;
        self.non_gemm_cpu += other.non_gemm_cpu;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_ns: u64,
    pub category_ns: CategoryNs,
    pub bytes_moved: u64,
    pub energy_mj: f64,
    pub speedup_vs_baseline: f64,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

/// Timing of one offloaded GEMM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GemmTiming {
    pub total_ns: u64,
    pub categories: CategoryNs,
    pub energy_mj: f64,
    pub block_ops: u64,
    pub array_cycles: u64,
    /// Busy time of each engine, overlapped or not.
    pub compute_busy_ns: u64,
    pub read_busy_ns: u64,
    pub write_busy_ns: u64,
}

/// Physical base addresses of the three operands' first pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub a: u64,
    pub b: u64,
    pub c: u64,
}

/// Page-aligned bump allocator over the simulated physical address space.
#[derive(Debug, Clone)]
pub struct AddressSpace {
    next: u64,
}

impl Default for AddressSpace {
    fn default() -> Self {
        AddressSpace { next: 0x1000_0000 }
    }
}

impl AddressSpace {
    pub fn alloc(&mut self, bytes: u64) -> u64 {
        let base = self.next;
        self.next += bytes.div_ceil(PAGE_BYTES as u64).max(1) * PAGE_BYTES as u64;
        base
    }
}

/// Blocked byte sizes of the operands of `shape`.
pub fn operand_bytes(shape: GemmShape, dtype: DType, w: usize) -> Result<(u64, u64, u64)> {
    let g = block_geometry(dtype, w)?;
    let (mb, nb, kb) = shape.block_counts(&g);
    let page = PAGE_BYTES as u64;
    let c_pages = mb as u64 * shape.n.div_ceil(g.l) as u64;
    Ok(((mb * kb) as u64 * page, (nb * kb) as u64 * page, c_pages * page))
}

struct Channel {
    compute_free: u64,
    buf_free: [u64; 2],
    cbuf_free: u64,
    cbuf_tiles: usize,
    steps: u64,
    tiles: Vec<(usize, usize)>,
    next_tile: usize,
    next_k: usize,
}

/// Runs the timing model for one GEMM. Values are not computed; the result
/// depends only on the shape, dtype, configuration and memory-system state.
pub fn simulate_gemm(
    shape: GemmShape,
    dtype: DType,
    sys: &SystemConfig,
    mem: &mut MemorySystem,
    place: Placement,
) -> Result<GemmTiming> {
    let g = block_geometry(dtype, sys.array.dim)?;
    if g.l % g.w != 0 {
        return Err(Error::GeometryMismatch(format!("block width {} is not a multiple of {}", g.l, g.w)));
    }
    let (mb, nb, kb) = shape.block_counts(&g);
    let page = PAGE_BYTES as u64;
    let c_band_pages = shape.n.div_ceil(g.l) as u64;
    let tiles_per_page = g.tiles_per_page();
    let tile_bytes = (g.w * g.w * dtype.byte_width()) as u64;
    let ppa = sys.ppa.get(dtype);
    let sa_cycles = sys.array.sa_cycles(g.l);
    let sa_ns = (sa_cycles as f64 * 1e9 / ppa.freq_hz).ceil() as u64;
    let slots = if sys.engine.double_buffer { 2 } else { 1 };

    let t0 = sys.engine.command_ns;
    let mut channels: Vec<Channel> = (0..sys.channels)
        .map(|ch| Channel {
            compute_free: t0,
            buf_free: [t0; 2],
            cbuf_free: t0,
            cbuf_tiles: 0,
            steps: 0,
            tiles: (ch..mb).step_by(sys.channels).flat_map(|i| (0..nb).map(move |j| (i, j))).collect(),
            next_tile: 0,
            next_k: 0,
        })
        .collect();

    let mut read_free = t0;
    let mut write_free = t0;
    let mut compute_iv: Vec<(u64, u64)> = Vec::with_capacity(mb * nb * kb);
    let mut data_iv: Vec<(u64, u64)> = Vec::with_capacity(mb * nb * kb * 2 + mb * nb);
    let (mut read_busy, mut write_busy) = (0u64, 0u64);
    let mut block_ops = 0u64;

    // round-robin over channels, one step each, until all are drained
    loop {
        let mut progressed = false;
        for ch in channels.iter_mut() {
            if ch.next_tile >= ch.tiles.len() {
                continue;
            }
            progressed = true;
            let (i, j) = ch.tiles[ch.next_tile];
            let k = ch.next_k;
            let slot = (ch.steps % slots as u64) as usize;
            ch.steps += 1;

            let mut t = read_free.max(ch.buf_free[slot]);
            for (addr, blocks_before) in [(place.a, i * kb + k), (place.b, j * kb + k)] {
                let cost = mem.dma_block_transfer(addr + blocks_before as u64 * page, page, Direction::Read);
                let data_start = t + cost.control_ns;
                t = data_start + cost.data_ns;
                data_iv.push((data_start, t));
                read_busy += cost.total();
            }
            read_free = t;

            let start = t.max(ch.compute_free);
            let end = start + sa_ns;
            compute_iv.push((start, end));
            block_ops += 1;
            ch.compute_free = end;
            ch.buf_free[slot] = end;

            if k + 1 < kb {
                ch.next_k += 1;
                continue;
            }
            ch.next_k = 0;
            ch.next_tile += 1;

            // latch the finished tile into Buffer C, waiting out a running flush
            let stored = end.max(ch.cbuf_free);
            ch.compute_free = stored;
            ch.cbuf_tiles += 1;
            if ch.cbuf_tiles == tiles_per_page || j + 1 == nb {
                let page_col = (j * g.w) / g.l;
                let addr = place.c + (i as u64 * c_band_pages + page_col as u64) * page;
                let bytes = ch.cbuf_tiles as u64 * tile_bytes;
                let cost = mem.dma_block_transfer(addr, bytes, Direction::Write);
                let wstart = stored.max(write_free);
                let data_start = wstart + cost.control_ns;
                write_free = data_start + cost.data_ns;
                data_iv.push((data_start, write_free));
                write_busy += cost.total();
                ch.cbuf_free = write_free;
                ch.cbuf_tiles = 0;
            }
        }
        if !progressed {
            break;
        }
    }

    let total = channels.iter().map(|c| c.compute_free).max().unwrap_or(t0).max(write_free).max(t0);
    let compute_busy = block_ops * sa_ns;
    let compute_exposed = union_len(&mut compute_iv);
    compute_iv.extend_from_slice(&data_iv);
    let busy = union_len(&mut compute_iv);
    let categories = CategoryNs {
        gemm_compute: compute_exposed,
        data_transfer: busy - compute_exposed,
        control: total - busy,
        non_gemm_cpu: 0,
    };
    debug_assert_eq!(categories.total(), total);

    Ok(GemmTiming {
        total_ns: total,
        categories,
        energy_mj: block_energy(&ppa, block_ops * sa_cycles),
        block_ops,
        array_cycles: block_ops * sa_cycles,
        compute_busy_ns: compute_busy,
        read_busy_ns: read_busy,
        write_busy_ns: write_busy,
    })
}

/// Total length covered by a set of half-open intervals.
fn union_len(iv: &mut [(u64, u64)]) -> u64 {
    iv.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for &(s, e) in iv.iter() {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

/// Output, report and transfer counters of one offloaded GEMM.
#[derive(Debug, Clone)]
pub struct GemmRun {
    pub c: BlockedMatrix,
    pub report: SimReport,
    pub ledger: TransferLedger,
    pub timing: GemmTiming,
}

/// Multiplies `a` by `b` on the modelled accelerator.
///
/// The result is the blocked multiply; timing never influences values.
pub fn run_gemm(a: &BlockedMatrix, b: &BlockedMatrix, sys: &SystemConfig) -> Result<GemmRun> {
    sys.validate()?;
    let shape = check_operands(a, b)?;
    if a.geometry().w != sys.array.dim {
        return Err(Error::GeometryMismatch(format!(
            "operands are packed for a {0}x{0} array, system has {1}x{1}",
            a.geometry().w,
            sys.array.dim
        )));
    }
    let c = block_matrix_multiply(a, b)?;

    let mut space = AddressSpace::default();
    let place = Placement {
        a: space.alloc(a.byte_len() as u64),
        b: space.alloc(b.byte_len() as u64),
        c: space.alloc(c.byte_len() as u64),
    };
    let mut mem = sys.memory_system();
    if sys.mode == AccessMode::DC && sys.engine.prewarm_operands {
        mem.cpu_touch(place.a, a.byte_len() as u64);
        mem.cpu_touch(place.b, b.byte_len() as u64);
    }
    let timing = simulate_gemm(shape, a.dtype(), sys, &mut mem, place)?;
    let baseline = run_baseline_gemm(shape, a.dtype(), &sys.cpu);
    let ledger = *mem.ledger();
    let report = SimReport {
        total_ns: timing.total_ns,
        category_ns: timing.categories,
        bytes_moved: ledger.bytes_moved(),
        energy_mj: timing.energy_mj,
        speedup_vs_baseline: speedup(timing.total_ns, baseline),
    };
    Ok(GemmRun { c, report, ledger, timing })
}

/// Timing-only counterpart of [`run_gemm`] for a shape on a fresh system.
pub fn estimate_gemm(shape: GemmShape, dtype: DType, sys: &SystemConfig) -> Result<(SimReport, TransferLedger)> {
    sys.validate()?;
    let (a_bytes, b_bytes, c_bytes) = operand_bytes(shape, dtype, sys.array.dim)?;
    let mut space = AddressSpace::default();
    let place = Placement { a: space.alloc(a_bytes), b: space.alloc(b_bytes), c: space.alloc(c_bytes) };
    let mut mem = sys.memory_system();
    if sys.mode == AccessMode::DC && sys.engine.prewarm_operands {
        mem.cpu_touch(place.a, a_bytes);
        mem.cpu_touch(place.b, b_bytes);
    }
    let timing = simulate_gemm(shape, dtype, sys, &mut mem, place)?;
    let baseline = run_baseline_gemm(shape, dtype, &sys.cpu);
    let ledger = *mem.ledger();
    Ok((
        SimReport {
            total_ns: timing.total_ns,
            category_ns: timing.categories,
            bytes_moved: ledger.bytes_moved(),
            energy_mj: timing.energy_mj,
            speedup_vs_baseline: speedup(timing.total_ns, baseline),
        },
        ledger,
    ))
}

/// Single-threaded triple-loop GEMM on the host CPU, in ns.
pub fn run_baseline_gemm(shape: GemmShape, dtype: DType, cpu: &CpuCostModel) -> u64 {
    cpu.cycles_to_ns(shape.macs() as f64 * cpu.mac_cycles(dtype))
}

pub fn speedup(accelerated_ns: u64, baseline_ns: u64) -> f64 {
    baseline_ns as f64 / accelerated_ns as f64
}
