//! Browser bindings for the demo page in `www/`. Every export takes plain
//! strings and numbers and returns a JSON string.

use matrixflow::{block_geometry, estimate_gemm, AccessMode, CategoryNs, DType, GemmShape, LinkConfig, SystemConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_SIZE: usize = 2048;

#[derive(Serialize)]
struct SweepPoint {
    size: usize,
    total_ns: u64,
    baseline_ns: u64,
    speedup: f64,
    bytes_moved: u64,
    energy_mj: f64,
    categories: CategoryNs,
}

#[derive(Serialize)]
struct LinkPoint {
    label: String,
    lanes: u32,
    total_gbps: f64,
    total_ns: u64,
    data_transfer_ns: u64,
    speedup: f64,
}

#[derive(Serialize)]
struct PageRegion {
    page: usize,
    row0: usize,
    rows: usize,
    col0: usize,
    cols: usize,
}

#[derive(Serialize)]
struct BlockMap {
    w: usize,
    l: usize,
    grid: (usize, usize),
    padded_rows: usize,
    padded_cols: usize,
    column_major: bool,
    pages: Vec<PageRegion>,
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| format!("{what}: {e}"))
}

fn check_size(n: usize) -> Result<(), String> {
    if n == 0 || n > MAX_SIZE {
        return Err(format!("size {n} outside 1..={MAX_SIZE}"));
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// Speedup of square GEMMs of the given comma-separated sizes.
pub fn gemm_sweep_json(sizes: &str, dtype: &str, mode: &str) -> Result<String, String> {
    let dtype: DType = parse(dtype, "dtype")?;
    let sys = SystemConfig::default().with_mode(parse::<AccessMode>(mode, "mode")?);
    let mut points = Vec::new();
    for s in sizes.split(',').filter(|s| !s.trim().is_empty()) {
        let size: usize = parse(s, "size")?;
        check_size(size)?;
        let shape = GemmShape::square(size).map_err(|e| e.to_string())?;
        let (r, _) = estimate_gemm(shape, dtype, &sys).map_err(|e| e.to_string())?;
        points.push(SweepPoint {
            size,
            total_ns: r.total_ns,
            baseline_ns: matrixflow::run_baseline_gemm(shape, dtype, &sys.cpu),
            speedup: r.speedup_vs_baseline,
            bytes_moved: r.bytes_moved,
            energy_mj: r.energy_mj,
            categories: r.category_ns,
        });
    }
    to_json(&points)
}

/// One square GEMM over the 16x64, 4x16 and 4x5 Gb/s links.
pub fn pcie_compare_json(size: usize, dtype: &str, mode: &str) -> Result<String, String> {
    check_size(size)?;
    let dtype: DType = parse(dtype, "dtype")?;
    let base = SystemConfig::default().with_mode(parse::<AccessMode>(mode, "mode")?);
    let shape = GemmShape::square(size).map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    for (lanes, gbps) in [(16, 64.0), (4, 16.0), (4, 5.0)] {
        let sys = base.clone().with_link(LinkConfig::aggregate(lanes, gbps));
        let (r, _) = estimate_gemm(shape, dtype, &sys).map_err(|e| e.to_string())?;
        points.push(LinkPoint {
            label: format!("{lanes} lanes, {gbps} Gb/s"),
            lanes,
            total_gbps: gbps,
            total_ns: r.total_ns,
            data_transfer_ns: r.category_ns.data_transfer,
            speedup: r.speedup_vs_baseline,
        });
    }
    to_json(&points)
}

/// Which page holds which region of a `rows x cols` operand.
pub fn block_map_json(rows: usize, cols: usize, dtype: &str, operand: &str) -> Result<String, String> {
    check_size(rows)?;
    check_size(cols)?;
    let g = block_geometry(parse(dtype, "dtype")?, 16).map_err(|e| e.to_string())?;
    let (w, l) = (g.w, g.l);
    let column_major = match operand {
        "a" | "A" => false,
        "b" | "B" => true,
        other => return Err(format!("operand must be `a` or `b`, got `{other}`")),
    };
    // A: W x L blocks over (rows, cols); B: L x W blocks, outer index over columns
    let (br, bc) = if column_major { (l, w) } else { (w, l) };
    let (gr, gc) = (rows.div_ceil(br), cols.div_ceil(bc));
    let grid = if column_major { (gc, gr) } else { (gr, gc) };
    let mut pages = Vec::with_capacity(gr * gc);
    for outer in 0..grid.0 {
        for inner in 0..grid.1 {
            let (bi, bj) = if column_major { (inner, outer) } else { (outer, inner) };
            pages.push(PageRegion { page: outer * grid.1 + inner, row0: bi * br, rows: br, col0: bj * bc, cols: bc });
        }
    }
    to_json(&BlockMap { w, l, grid, padded_rows: gr * br, padded_cols: gc * bc, column_major, pages })
}

#[wasm_bindgen]
pub fn gemm_sweep(sizes: &str, dtype: &str, mode: &str) -> Result<String, JsValue> {
    gemm_sweep_json(sizes, dtype, mode).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn pcie_compare(size: usize, dtype: &str, mode: &str) -> Result<String, JsValue> {
    pcie_compare_json(size, dtype, mode).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn block_map(rows: usize, cols: usize, dtype: &str, operand: &str) -> Result<String, JsValue> {
    block_map_json(rows, cols, dtype, operand).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use matrixflow::{BlockedMatrix, Matrix};
    use serde_json::Value;

    #[test]
    fn sweep_points() {
        let v: Value = serde_json::from_str(&gemm_sweep_json("64, 128", "int8", "dc").unwrap()).unwrap();
        let pts = v.as_array().unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1]["size"], 128);
        assert!(pts[1]["speedup"].as_f64().unwrap() > pts[0]["speedup"].as_f64().unwrap());
        assert!(gemm_sweep_json("64", "int7", "dc").is_err());
        assert!(gemm_sweep_json("4096", "int8", "dc").is_err());
    }

    #[test]
    fn pcie_ordering() {
        let v: Value = serde_json::from_str(&pcie_compare_json(256, "int8", "dm").unwrap()).unwrap();
        let t: Vec<u64> = v.as_array().unwrap().iter().map(|p| p["total_ns"].as_u64().unwrap()).collect();
        assert!(t[0] < t[1] && t[1] < t[2]);
    }

    /// The map must agree with where the packer really puts every element.
    #[test]
    fn block_map_matches_packer() {
        for (rows, cols, operand) in [(40, 300, "a"), (300, 40, "b"), (1, 1, "b")] {
            let v: Value = serde_json::from_str(&block_map_json(rows, cols, "int16", operand).unwrap()).unwrap();
            let dense = Matrix::<i16>::from_fn(rows, cols, |r, c| (r * cols + c) as i16).unwrap();
            let packed =
                if operand == "a" { BlockedMatrix::pack_a(&dense, 16) } else { BlockedMatrix::pack_b(&dense, 16) }.unwrap();
            for p in v["pages"].as_array().unwrap() {
                let f = |k: &str| p[k].as_u64().unwrap() as usize;
                for r in f("row0")..(f("row0") + f("rows")).min(rows) {
                    for c in f("col0")..(f("col0") + f("cols")).min(cols) {
                        assert_eq!(packed.element_offset(r, c) / 4096, f("page"));
                    }
                }
            }
            assert_eq!(v["pages"].as_array().unwrap().len(), packed.num_blocks());
        }
        assert!(block_map_json(10, 10, "int8", "c").is_err());
    }
}
