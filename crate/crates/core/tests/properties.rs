use matrixflow::gemm::blocked_gemm_dense;
use matrixflow::{
    block_matrix_multiply, estimate_gemm, naive_gemm, run_gemm, AccessMode, BlockedMatrix, DType, Element, GemmShape,
    LinkConfig, Matrix, SystemConfig, f16,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix<T: Element>(rows: usize, cols: usize, seed: u64, gen: impl Fn(&mut ChaCha8Rng) -> T) -> Matrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| gen(&mut rng)).unwrap()
}

fn roundtrip<T: Element>(rows: usize, cols: usize, seed: u64, gen: impl Fn(&mut ChaCha8Rng) -> T) {
    let m = random_matrix(rows, cols, seed, gen);
    let a = BlockedMatrix::pack_a(&m, 16).unwrap();
    let b = BlockedMatrix::pack_b(&m, 16).unwrap();
    assert_eq!(a.unpack::<T>().unwrap(), m);
    assert_eq!(b.unpack::<T>().unwrap(), m);
    let loaded = BlockedMatrix::read_from(&a.to_bytes()[..]).unwrap();
    assert_eq!(loaded, a);
}

/// Nonzero elements summed over every stored block, padding included.
fn stored_nonzeros<T: Element>(m: &BlockedMatrix) -> usize {
    let (outer, inner) = m.block_grid();
    let mut n = 0;
    for o in 0..outer {
        for i in 0..inner {
            n += m.decode_block::<T>(o, i).unwrap().iter().filter(|v| **v != T::default()).count();
        }
    }
    n
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn pack_unpack_identity(rows in 1usize..300, cols in 1usize..300, seed: u64) {
        roundtrip::<i8>(rows, cols, seed, |r| r.gen());
        roundtrip::<i16>(rows, cols, seed, |r| r.gen());
        roundtrip::<i32>(rows, cols, seed, |r| r.gen());
        roundtrip::<f32>(rows, cols, seed, |r| r.gen_range(-1.0..1.0));
        roundtrip::<f16>(rows, cols, seed, |r| f16::from_f32(r.gen_range(-1.0..1.0)));
    }

    #[test]
    fn padding_stays_zero(rows in 1usize..200, cols in 1usize..400, seed: u64) {
        let m = random_matrix::<i16>(rows, cols, seed, |r| r.gen_range(1..=i16::MAX));
        let a = BlockedMatrix::pack_a(&m, 16).unwrap();
        let b = BlockedMatrix::pack_b(&m, 16).unwrap();
        prop_assert_eq!(stored_nonzeros::<i16>(&a), rows * cols);
        prop_assert_eq!(stored_nonzeros::<i16>(&b), rows * cols);
    }

    #[test]
    fn b_blocks_stream_columns(rows in 1usize..300, cols in 1usize..60, seed: u64) {
        let m = random_matrix::<i32>(rows, cols, seed, |r| r.gen());
        let b = BlockedMatrix::pack_b(&m, 16).unwrap();
        let g = b.geometry();
        let (nj, nk) = b.block_grid();
        for j in 0..nj {
            for k in 0..nk {
                let block = b.decode_block::<i32>(j, k).unwrap();
                for c in 0..g.w {
                    for r in 0..g.l {
                        let (row, col) = (k * g.l + r, j * g.w + c);
                        let want = if row < rows && col < cols { m.get(row, col) } else { 0 };
                        prop_assert_eq!(block[c * g.l + r], want);
                    }
                }
            }
        }
    }

    #[test]
    fn integer_blocked_equals_naive(m in 1usize..80, n in 1usize..80, k in 1usize..300, seed: u64) {
        let a = random_matrix::<i8>(m, k, seed, |r| r.gen());
        let b = random_matrix::<i8>(k, n, seed ^ 1, |r| r.gen());
        prop_assert_eq!(blocked_gemm_dense(&a, &b, 16).unwrap(), naive_gemm(&a, &b).unwrap());
        let a = random_matrix::<i32>(m, k, seed, |r| r.gen());
        let b = random_matrix::<i32>(k, n, seed ^ 1, |r| r.gen());
        prop_assert_eq!(blocked_gemm_dense(&a, &b, 16).unwrap(), naive_gemm(&a, &b).unwrap());
    }

    #[test]
    fn fp32_close_to_f64(m in 1usize..60, n in 1usize..60, k in 1usize..300, seed: u64) {
        let a = random_matrix::<f32>(m, k, seed, |r| r.gen_range(-1.0..1.0));
        let b = random_matrix::<f32>(k, n, seed ^ 1, |r| r.gen_range(-1.0..1.0));
        let c = blocked_gemm_dense(&a, &b, 16).unwrap();
        for i in 0..m {
            for j in 0..n {
                let exact: f64 = (0..k).map(|p| a.get(i, p) as f64 * b.get(p, j) as f64).sum();
                let abs_sum: f64 = (0..k).map(|p| (a.get(i, p) as f64 * b.get(p, j) as f64).abs()).sum();
                prop_assert!((c.get(i, j) as f64 - exact).abs() <= 1e-5 * abs_sum.max(1e-30));
            }
        }
    }

    #[test]
    fn timing_never_touches_values(m in 1usize..70, n in 1usize..70, k in 1usize..200, seed: u64,
                                   gbps in 1.0f64..200.0, dm: bool, double_buffer: bool, channels in 1usize..4) {
        let a = BlockedMatrix::pack_a(&random_matrix::<i16>(m, k, seed, |r| r.gen()), 16).unwrap();
        let b = BlockedMatrix::pack_b(&random_matrix::<i16>(k, n, seed ^ 1, |r| r.gen()), 16).unwrap();
        let mut sys = SystemConfig::default().with_link(LinkConfig::aggregate(16, gbps));
        sys.mode = if dm { AccessMode::DM } else { AccessMode::DC };
        sys.engine.double_buffer = double_buffer;
        sys.channels = channels;
        let run = run_gemm(&a, &b, &sys).unwrap();
        prop_assert_eq!(run.c, block_matrix_multiply(&a, &b).unwrap());
        prop_assert_eq!(run.report.category_ns.total(), run.report.total_ns);
    }

    #[test]
    fn more_bandwidth_never_slower(m in 1usize..200, n in 1usize..200, k in 1usize..400, dm: bool) {
        let shape = GemmShape::new(m, n, k).unwrap();
        let mode = if dm { AccessMode::DM } else { AccessMode::DC };
        let mut prev = u64::MAX;
        for gbps in [5.0, 16.0, 64.0] {
            let sys = SystemConfig::default().with_mode(mode).with_link(LinkConfig::aggregate(16, gbps));
            let t = estimate_gemm(shape, DType::Int8, &sys).unwrap().0.total_ns;
            prop_assert!(t <= prev);
            prev = t;
        }
    }
}

#[test]
fn fp16_within_tolerance() {
    let (m, n, k) = (37, 29, 300);
    let a = random_matrix::<f16>(m, k, 7, |r| f16::from_f32(r.gen_range(-1.0..1.0)));
    let b = random_matrix::<f16>(k, n, 8, |r| f16::from_f32(r.gen_range(-1.0..1.0)));
    let c = blocked_gemm_dense(&a, &b, 16).unwrap();
    for i in 0..m {
        for j in 0..n {
            let exact: f64 = (0..k).map(|p| a.get(i, p).to_f64() * b.get(p, j).to_f64()).sum();
            let abs_sum: f64 = (0..k).map(|p| (a.get(i, p).to_f64() * b.get(p, j).to_f64()).abs()).sum();
            assert!((c.get(i, j).to_f64() - exact).abs() <= 2e-3 * abs_sum);
        }
    }
}

#[test]
fn dc_not_slower_than_dm_on_warm_operands() {
    for n in [128, 512] {
        let shape = GemmShape::square(n).unwrap();
        let dc = estimate_gemm(shape, DType::Int8, &SystemConfig::default()).unwrap().0;
        let dm = estimate_gemm(shape, DType::Int8, &SystemConfig::default().with_mode(AccessMode::DM)).unwrap().0;
        assert!(dc.total_ns <= dm.total_ns);
    }
}
