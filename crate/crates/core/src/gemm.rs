//! Reference and blocked matrix multiplication.
//!
//! [`naive_gemm`] is the scalar oracle: one accumulator per output element,
//! `k` ascending, narrowed once. [`block_matrix_multiply`] walks the block
//! grid `i -> j -> k`, accumulating whole-page products with [`multi_acc`]
//! into a `W x W` accumulator tile that is narrowed only after the last `k`
//! block. Because the accumulator carries over between `k` blocks in the same
//! order, the two agree bit-for-bit on integers (wrapping addition) and agree
//! in summation order on floats.

use serde::{Deserialize, Serialize};

use crate::dtype::Element;
use crate::error::{Error, Result};
use crate::layout::{BlockGeometry, BlockedMatrix, Layout};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl GemmShape {
    pub fn new(m: usize, n: usize, k: usize) -> Result<Self> {
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::ShapeMismatch(format!("GEMM dimensions must be >= 1, got {m}x{n}x{k}")));
        }
        Ok(GemmShape { m, n, k })
    }

    pub fn square(size: usize) -> Result<Self> {
        Self::new(size, size, size)
    }

    pub fn macs(&self) -> u64 {
        self.m as u64 * self.n as u64 * self.k as u64
    }

    /// Block-grid extents `(M/W, N/W, K/L)` after padding.
    pub fn block_counts(&self, geometry: &BlockGeometry) -> (usize, usize, usize) {
        (self.m.div_ceil(geometry.w), self.n.div_ceil(geometry.w), self.k.div_ceil(geometry.l))
    }
}

/// `C = A * B` with a single accumulator per output element.
pub fn naive_gemm<T: Element>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.rows() {
        return Err(Error::ShapeMismatch(format!(
            "A is {}x{} but B is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, n, kk) = (a.rows(), b.cols(), a.cols());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::Acc::default();
            for k in 0..kk {
                acc = T::mac(acc, a.get(i, k), b.get(k, j));
            }
            out.push(T::narrow(acc));
        }
    }
    Matrix::new(m, n, out)
}

/// Accumulates one page product into a `W x W` accumulator tile.
///
/// `a` is a row-major `W x L` page, `b` a column-major `L x W` page (column
/// `c` is `b[c*L .. (c+1)*L]`), `acc` a row-major `W x W` tile.
pub fn multi_acc<T: Element>(a: &[T], b: &[T], acc: &mut [T::Acc], geometry: &BlockGeometry) -> Result<()> {
    let (w, l) = (geometry.w, geometry.l);
    if a.len() != w * l || b.len() != w * l || acc.len() != w * w {
        return Err(Error::GeometryMismatch(format!(
            "expected {w}x{l} operands and a {w}x{w} accumulator, got {}, {} and {} elements",
            a.len(),
            b.len(),
            acc.len()
        )));
    }
    for r in 0..w {
        let a_row = &a[r * l..(r + 1) * l];
        for c in 0..w {
            let b_col = &b[c * l..(c + 1) * l];
            let slot = &mut acc[r * w + c];
            *slot = a_row.iter().zip(b_col).fold(*slot, |s, (&x, &y)| T::mac(s, x, y));
        }
    }
    Ok(())
}

/// Checks that `a` and `b` can be multiplied and returns the logical shape.
pub fn check_operands(a: &BlockedMatrix, b: &BlockedMatrix) -> Result<GemmShape> {
    if a.layout() != Layout::ARowBand {
        return Err(Error::LayoutMismatch("left operand must be row-band packed".into()));
    }
    if b.layout() != Layout::BRestructured {
        return Err(Error::LayoutMismatch("right operand must be restructured (column-streamable)".into()));
    }
    if a.dtype() != b.dtype() {
        return Err(Error::DTypeMismatch { expected: a.dtype(), got: b.dtype() });
    }
    if a.geometry() != b.geometry() {
        return Err(Error::GeometryMismatch("operands use different block sizes".into()));
    }
    if a.logical_cols() != b.logical_rows() {
        return Err(Error::ShapeMismatch(format!(
            "A is {}x{} but B is {}x{}",
            a.logical_rows(),
            a.logical_cols(),
            b.logical_rows(),
            b.logical_cols()
        )));
    }
    let g = a.geometry();
    if g.l % g.w != 0 {
        return Err(Error::GeometryMismatch(format!("block width {} is not a multiple of {}", g.l, g.w)));
    }
    GemmShape::new(a.logical_rows(), b.logical_cols(), a.logical_cols())
}

/// Blocked multiply of a row-band `A` by a restructured `B`. The result is
/// row-band packed with the same dtype.
pub fn block_matrix_multiply(a: &BlockedMatrix, b: &BlockedMatrix) -> Result<BlockedMatrix> {
    check_operands(a, b)?;
    crate::dispatch_dtype!(a.dtype(), T => multiply_typed::<T>(a, b))
}

fn decode_all<T: Element>(m: &BlockedMatrix) -> Vec<T> {
    let width = T::DTYPE.byte_width();
    m.pages().chunks_exact(width).map(T::read_le).collect()
}

fn multiply_typed<T: Element>(a: &BlockedMatrix, b: &BlockedMatrix) -> Result<BlockedMatrix> {
    let g = a.geometry();
    let (w, l, page_elems) = (g.w, g.l, g.elements());
    let (m_blocks, k_blocks) = a.block_grid();
    let (n_blocks, kb) = b.block_grid();
    debug_assert_eq!(k_blocks, kb);

    let mut c = BlockedMatrix::zeros(a.logical_rows(), b.logical_cols(), Layout::ARowBand, g)?;
    let a_elems = decode_all::<T>(a);
    let b_elems = decode_all::<T>(b);
    let band_pages = c.block_grid().1;
    let band_bytes = band_pages * g.page_bytes;
    let width = T::DTYPE.byte_width();

    let compute_band = |i: usize, band: &mut [u8]| {
        let mut acc = vec![T::Acc::default(); w * w];
        for j in 0..n_blocks {
            acc.fill(T::Acc::default());
            for k in 0..k_blocks {
                let a_blk = &a_elems[(i * k_blocks + k) * page_elems..][..page_elems];
                let b_blk = &b_elems[(j * k_blocks + k) * page_elems..][..page_elems];
                multi_acc(a_blk, b_blk, &mut acc, &g).expect("page geometry checked above");
            }
            // narrow once, then store the W x W tile into its page
            let (page, col0) = ((j * w) / l, (j * w) % l);
            let page_base = page * g.page_bytes;
            for r in 0..w {
                for cc in 0..w {
                    let off = page_base + (r * l + col0 + cc) * width;
                    T::narrow(acc[r * w + cc]).write_le(&mut band[off..off + width]);
                }
            }
        }
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        c.pages_mut().par_chunks_mut(band_bytes).enumerate().for_each(|(i, band)| compute_band(i, band));
    }
    #[cfg(not(feature = "parallel"))]
    {
        c.pages_mut().chunks_mut(band_bytes).enumerate().for_each(|(i, band)| compute_band(i, band));
    }
    debug_assert_eq!(c.block_grid().0, m_blocks);
    Ok(c)
}

/// Packs dense operands, runs the blocked multiply and unpacks the result.
pub fn blocked_gemm_dense<T: Element>(a: &Matrix<T>, b: &Matrix<T>, w: usize) -> Result<Matrix<T>> {
    let pa = BlockedMatrix::pack_a(a, w)?;
    let pb = BlockedMatrix::pack_b(b, w)?;
    block_matrix_multiply(&pa, &pb)?.unpack()
}
