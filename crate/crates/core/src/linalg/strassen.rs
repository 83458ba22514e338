//! Strassen multiplication over zero-padded power-of-two squares.
//!
//! Each level forms the seven half-size products one at a time and folds
//! them straight into the output quadrants, so the only scratch memory is a
//! single workspace of `size^2` entries allocated up front.

use super::kernel::{gemm, gemm_strided};

/// Square blocks at or below this size use the direct product.
pub const STRASSEN_CUTOFF: usize = 64;

#[cfg(feature = "parallel")]
const PAR_MIN: usize = 256;

/// `cutoff` is the square block size at or below which the direct product
/// takes over; it must be at least 1.
pub(crate) fn strassen(
    a: &[f64],
    b: &[f64],
    m: usize,
    k: usize,
    n: usize,
    cutoff: usize,
) -> Vec<f64> {
    debug_assert!(cutoff >= 1);
    let size = m.max(k).max(n).next_power_of_two();
    if size <= cutoff || m == 0 || n == 0 || k == 0 {
        let mut c = vec![0.0; m * n];
        gemm(a, b, &mut c, m, k, n);
        return c;
    }
    let square = m == size && k == size && n == size;
    let (ap, bp);
    let (a_view, b_view) = if square {
        (View::new(a, size), View::new(b, size))
    } else {
        ap = pad(a, m, k, size);
        bp = pad(b, k, n, size);
        (View::new(&ap, size), View::new(&bp, size))
    };
    let mut cp = vec![0.0; size * size];
    let mut ws = vec![0.0; size * size];
    recurse(a_view, b_view, &mut cp, size, size, &mut ws, cutoff);
    if square {
        return cp;
    }
    let mut c = Vec::with_capacity(m * n);
    for i in 0..m {
        c.extend_from_slice(&cp[i * size..i * size + n]);
    }
    c
}

fn pad(src: &[f64], rows: usize, cols: usize, size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    for i in 0..rows {
        out[i * size..i * size + cols].copy_from_slice(&src[i * cols..(i + 1) * cols]);
    }
    out
}

/// Square block inside a row-major buffer with row pitch `stride`.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    stride: usize,
}

impl<'a> View<'a> {
    fn new(data: &'a [f64], stride: usize) -> Self {
        View { data, stride }
    }

    fn quad(self, q: Quad, h: usize) -> Self {
        View {
            data: &self.data[q.offset(h, self.stride)..],
            stride: self.stride,
        }
    }

    #[inline]
    fn row(&self, i: usize, len: usize) -> &'a [f64] {
        &self.data[i * self.stride..i * self.stride + len]
    }
}

#[derive(Clone, Copy)]
enum Quad {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Quad {
    fn offset(self, h: usize, stride: usize) -> usize {
        match self {
            Quad::TopLeft => 0,
            Quad::TopRight => h,
            Quad::BottomLeft => h * stride,
            Quad::BottomRight => h * stride + h,
        }
    }
}

/// One side of a Strassen product: a quadrant, or the sum/difference of two.
#[derive(Clone, Copy)]
enum Term {
    One(Quad),
    Sum(Quad, Quad),
    Diff(Quad, Quad),
}

use Quad::{BottomLeft as Q21, BottomRight as Q22, TopLeft as Q11, TopRight as Q12};

/// The seven products and, for each, the output quadrants it feeds with
/// their signs. Applying them in order reproduces
/// `C11 = M1 + M4 - M5 + M7`, `C12 = M3 + M5`, `C21 = M2 + M4`,
/// `C22 = M1 - M2 + M3 + M6`.
const PRODUCTS: [(Term, Term, &[(Quad, f64)]); 7] = [
    (
        Term::Sum(Q11, Q22),
        Term::Sum(Q11, Q22),
        &[(Q11, 1.0), (Q22, 1.0)],
    ),
    (
        Term::Sum(Q21, Q22),
        Term::One(Q11),
        &[(Q21, 1.0), (Q22, -1.0)],
    ),
    (
        Term::One(Q11),
        Term::Diff(Q12, Q22),
        &[(Q12, 1.0), (Q22, 1.0)],
    ),
    (
        Term::One(Q22),
        Term::Diff(Q21, Q11),
        &[(Q11, 1.0), (Q21, 1.0)],
    ),
    (
        Term::Sum(Q11, Q12),
        Term::One(Q22),
        &[(Q11, -1.0), (Q12, 1.0)],
    ),
    (Term::Diff(Q21, Q11), Term::Sum(Q11, Q12), &[(Q22, 1.0)]),
    (Term::Diff(Q12, Q22), Term::Sum(Q21, Q22), &[(Q11, 1.0)]),
];

/// Writes `a * b` (both `s x s`) into `c` (pitch `ldc`). `ws` needs at
/// least `s^2` entries.
fn recurse(
    a: View<'_>,
    b: View<'_>,
    c: &mut [f64],
    ldc: usize,
    s: usize,
    ws: &mut [f64],
    cutoff: usize,
) {
    if s <= cutoff {
        for i in 0..s {
            c[i * ldc..i * ldc + s].fill(0.0);
        }
        gemm_strided(a.data, a.stride, b.data, b.stride, c, ldc, s, s, s);
        return;
    }
    let h = s / 2;
    for i in 0..s {
        c[i * ldc..i * ldc + s].fill(0.0);
    }

    #[cfg(feature = "parallel")]
    if h >= PAR_MIN / 2 && rayon::current_num_threads() > 1 {
        parallel_products(a, b, c, ldc, h, cutoff);
        return;
    }

    let (ta, rest) = ws.split_at_mut(h * h);
    let (tb, rest) = rest.split_at_mut(h * h);
    let (prod, rest) = rest.split_at_mut(h * h);
    for (left, right, targets) in PRODUCTS {
        let lv = materialize(a, left, h, ta);
        let rv = materialize(b, right, h, tb);
        recurse(lv, rv, prod, h, h, rest, cutoff);
        for &(q, sign) in targets {
            accumulate(c, ldc, q, h, prod, sign);
        }
    }
}

#[cfg(feature = "parallel")]
fn parallel_products(a: View<'_>, b: View<'_>, c: &mut [f64], ldc: usize, h: usize, cutoff: usize) {
    use rayon::prelude::*;
    let prods: Vec<Vec<f64>> = PRODUCTS
        .par_iter()
        .map(|&(left, right, _)| {
            let mut ta = vec![0.0; h * h];
            let mut tb = vec![0.0; h * h];
            let mut ws = vec![0.0; h * h];
            let mut out = vec![0.0; h * h];
            let lv = materialize(a, left, h, &mut ta);
            let rv = materialize(b, right, h, &mut tb);
            recurse(lv, rv, &mut out, h, h, &mut ws, cutoff);
            out
        })
        .collect();
    for (prod, &(_, _, targets)) in prods.iter().zip(PRODUCTS.iter()) {
        for &(q, sign) in targets {
            accumulate(c, ldc, q, h, prod, sign);
        }
    }
}

/// Returns a view of `term` over `src`, writing into `buf` when the term is
/// a sum or difference.
fn materialize<'a>(src: View<'a>, term: Term, h: usize, buf: &'a mut [f64]) -> View<'a> {
    let (x, y, sign) = match term {
        Term::One(q) => return src.quad(q, h),
        Term::Sum(p, q) => (src.quad(p, h), src.quad(q, h), 1.0),
        Term::Diff(p, q) => (src.quad(p, h), src.quad(q, h), -1.0),
    };
    for i in 0..h {
        let out = &mut buf[i * h..(i + 1) * h];
        for ((o, &u), &v) in out.iter_mut().zip(x.row(i, h)).zip(y.row(i, h)) {
            *o = if sign > 0.0 { u + v } else { u - v };
        }
    }
    View::new(buf, h)
}

fn accumulate(c: &mut [f64], ldc: usize, q: Quad, h: usize, prod: &[f64], sign: f64) {
    let off = q.offset(h, ldc);
    for i in 0..h {
        let dst = &mut c[off + i * ldc..off + i * ldc + h];
        let src = &prod[i * h..(i + 1) * h];
        if sign > 0.0 {
            dst.iter_mut().zip(src).for_each(|(d, &p)| *d += p);
        } else {
            dst.iter_mut().zip(src).for_each(|(d, &p)| *d -= p);
        }
    }
}
