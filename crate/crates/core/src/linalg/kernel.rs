//! Direct `C = A * B` on row-major slices.
//!
//! Register tiles of `ROWS x LANES` accumulators, blocked over `k` and `n` so
//! a strip of `B` stays in cache while the rows of `A` stream past. Every
//! output entry is accumulated as `0 + a[i,0]*b[0,j] + a[i,1]*b[1,j] + ...`
//! in increasing `p`, so results are bit-identical to the textbook triple
//! loop and independent of how rows are split across threads.

const ROWS: usize = 4;
const LANES: usize = 16;
const KC: usize = 256;
const NC: usize = 128;
/// Rows of `C` handed to one rayon task.
#[cfg(feature = "parallel")]
const PAR_ROWS: usize = 32;

/// `c = a * b` where `a` is `m x k`, `b` is `k x n` and `c` (`m x n`) is
/// zero on entry. Splits rows of `c` across the rayon pool when the
/// `parallel` feature is on.
pub(crate) fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if m >= 2 * PAR_ROWS && m * k * n >= 1 << 18 && rayon::current_num_threads() > 1 {
            c.par_chunks_mut(PAR_ROWS * n)
                .zip(a.par_chunks(PAR_ROWS * k))
                .for_each(|(c_blk, a_blk)| {
                    let rows = c_blk.len() / n;
                    gemm_seq(a_blk, b, c_blk, rows, k, n);
                });
            return;
        }
    }
    gemm_seq(a, b, c, m, k, n);
}

/// Single-threaded `c = a * b`; `c` must be zero on entry.
pub fn gemm_seq(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    gemm_strided(a, k, b, n, c, n, m, k, n);
}

/// Strided form of [`gemm_seq`]: `lda`, `ldb` and `ldc` are the row pitches
/// of the three operands. Adds into `c` rather than overwriting.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    a: &[f64],
    lda: usize,
    b: &[f64],
    ldb: usize,
    c: &mut [f64],
    ldc: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let ld = Pitch {
        a: lda,
        b: ldb,
        c: ldc,
    };
    for jc in (0..n).step_by(NC) {
        let jend = (jc + NC).min(n);
        for pc in (0..k).step_by(KC) {
            let pend = (pc + KC).min(k);
            let mut i = 0;
            while i + ROWS <= m {
                row_panel::<ROWS>(a, b, c, ld, i, jc, jend, pc, pend);
                i += ROWS;
            }
            match m - i {
                3 => row_panel::<3>(a, b, c, ld, i, jc, jend, pc, pend),
                2 => row_panel::<2>(a, b, c, ld, i, jc, jend, pc, pend),
                1 => row_panel::<1>(a, b, c, ld, i, jc, jend, pc, pend),
                _ => {}
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn row_panel<const R: usize>(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    ld: Pitch,
    i: usize,
    jc: usize,
    jend: usize,
    pc: usize,
    pend: usize,
) {
    let mut j = jc;
    while j + LANES <= jend {
        tile::<R, LANES>(a, b, c, ld, i, j, pc, pend);
        j += LANES;
    }
    if j + 8 <= jend {
        tile::<R, 8>(a, b, c, ld, i, j, pc, pend);
        j += 8;
    }
    if j + 4 <= jend {
        tile::<R, 4>(a, b, c, ld, i, j, pc, pend);
        j += 4;
    }
    while j < jend {
        tile::<R, 1>(a, b, c, ld, i, j, pc, pend);
        j += 1;
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn tile<const R: usize, const W: usize>(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    ld: Pitch,
    i: usize,
    j: usize,
    pc: usize,
    pend: usize,
) {
    let mut acc = [[0.0f64; W]; R];
    for r in 0..R {
        let off = (i + r) * ld.c + j;
        acc[r].copy_from_slice(&c[off..off + W]);
    }
    let a_rows: [&[f64]; R] =
        std::array::from_fn(|r| &a[(i + r) * ld.a + pc..(i + r) * ld.a + pend]);
    for (q, p) in (pc..pend).enumerate() {
        let b_row: &[f64; W] = b[p * ld.b + j..p * ld.b + j + W].try_into().unwrap();
        for r in 0..R {
            let av = a_rows[r][q];
            for t in 0..W {
                acc[r][t] += av * b_row[t];
            }
        }
    }
    for r in 0..R {
        let off = (i + r) * ld.c + j;
        c[off..off + W].copy_from_slice(&acc[r]);
    }
}

#[derive(Clone, Copy)]
struct Pitch {
    a: usize,
    b: usize,
    c: usize,
}
