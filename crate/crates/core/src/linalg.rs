//! Small dense kernels on row-major `f64` slices.
//!
//! Reductions use eight independent accumulators so the compiler can
//! vectorize them, and summation order is fixed. On x86-64 CPUs with AVX2 and
//! FMA the level-1/2 kernels run a fused multiply-add build chosen at runtime,
//! so results are reproducible on a given machine but may differ in the last
//! bits between machines with and without FMA.

#[inline(always)]
fn fmadd<const F: bool>(a: f64, b: f64, c: f64) -> f64 {
    if F {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

#[inline(always)]
fn dot_body<const F: bool>(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = fmadd::<F>(x[k], y[k], acc[k]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail = fmadd::<F>(*x, *y, tail);
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline(always)]
fn axpy_body<const F: bool>(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = fmadd::<F>(a, *xi, *yi);
    }
}

#[inline(always)]
fn matvec_body<const F: bool>(m: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    for (yi, row) in y.iter_mut().zip(m.chunks_exact(cols)) {
        *yi += dot_body::<F>(row, x);
    }
}

#[inline(always)]
fn matvec_t_body<const F: bool>(m: &[f64], cols: usize, a: &[f64], y: &mut [f64]) {
    for (ai, row) in a.iter().zip(m.chunks_exact(cols)) {
        if *ai != 0.0 {
            axpy_body::<F>(*ai, row, y);
        }
    }
}

#[inline(always)]
fn outer_body<const F: bool>(a: &[f64], x: &[f64], m: &mut [f64]) {
    for (ai, row) in a.iter().zip(m.chunks_exact_mut(x.len())) {
        if *ai != 0.0 {
            axpy_body::<F>(*ai, x, row);
        }
    }
}

/// Operand layout for [`gemm_acc`]: element `(i, p)` of `A` is `a[i·rs + p·cs]`.
#[derive(Debug, Clone, Copy)]
pub struct Strided<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

#[inline(always)]
fn gemm_body<const F: bool>(m: usize, n: usize, k: usize, a: Strided, b: &[f64], ldb: usize, c: &mut [f64], ldc: usize) {
    for i in 0..m {
        let row = &mut c[i * ldc..i * ldc + n];
        for p in 0..k {
            let aip = a.data[i * a.rs + p * a.cs];
            axpy_body::<F>(aip, &b[p * ldb..p * ldb + n], row);
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod fma {
    use std::arch::x86_64::*;

    #[inline(always)]
    unsafe fn hsum(v: __m256d) -> f64 {
        let lo = _mm256_castpd256_pd128(v);
        let hi = _mm256_extractf128_pd(v, 1);
        let s = _mm_add_pd(lo, hi);
        _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)))
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn dot(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len().min(b.len());
        let (pa, pb) = (a.as_ptr(), b.as_ptr());
        let mut acc = [_mm256_setzero_pd(); 4];
        let mut i = 0;
        while i + 16 <= n {
            for (k, acc) in acc.iter_mut().enumerate() {
                let off = i + 4 * k;
                *acc = _mm256_fmadd_pd(_mm256_loadu_pd(pa.add(off)), _mm256_loadu_pd(pb.add(off)), *acc);
            }
            i += 16;
        }
        while i + 4 <= n {
            acc[0] = _mm256_fmadd_pd(_mm256_loadu_pd(pa.add(i)), _mm256_loadu_pd(pb.add(i)), acc[0]);
            i += 4;
        }
        let mut s = hsum(_mm256_add_pd(_mm256_add_pd(acc[0], acc[1]), _mm256_add_pd(acc[2], acc[3])));
        while i < n {
            s = (*pa.add(i)).mul_add(*pb.add(i), s);
            i += 1;
        }
        s
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn matvec(m: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
        let rows = y.len();
        let px = x.as_ptr();
        let mut r = 0;
        while r + 4 <= rows {
            let base = m.as_ptr().add(r * cols);
            let mut acc = [_mm256_setzero_pd(); 4];
            let mut acc2 = [_mm256_setzero_pd(); 4];
            let mut j = 0;
            while j + 8 <= cols {
                let xv = _mm256_loadu_pd(px.add(j));
                let xw = _mm256_loadu_pd(px.add(j + 4));
                for k in 0..4 {
                    acc[k] = _mm256_fmadd_pd(_mm256_loadu_pd(base.add(k * cols + j)), xv, acc[k]);
                    acc2[k] = _mm256_fmadd_pd(_mm256_loadu_pd(base.add(k * cols + j + 4)), xw, acc2[k]);
                }
                j += 8;
            }
            while j + 4 <= cols {
                let xv = _mm256_loadu_pd(px.add(j));
                for (k, acc) in acc.iter_mut().enumerate() {
                    *acc = _mm256_fmadd_pd(_mm256_loadu_pd(base.add(k * cols + j)), xv, *acc);
                }
                j += 4;
            }
            for k in 0..4 {
                acc[k] = _mm256_add_pd(acc[k], acc2[k]);
            }
            for (k, acc) in acc.iter().enumerate() {
                let mut s = hsum(*acc);
                for jj in j..cols {
                    s = (*base.add(k * cols + jj)).mul_add(*px.add(jj), s);
                }
                y[r + k] += s;
            }
            r += 4;
        }
        for rr in r..rows {
            y[rr] += dot(&m[rr * cols..(rr + 1) * cols], x);
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
        super::axpy_body::<true>(a, x, y)
    }

    /// 4 × 8 register tiles; edges fall back to scalar fused multiply-adds.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn gemm(
        m: usize,
        n: usize,
        k: usize,
        a: super::Strided,
        b: &[f64],
        ldb: usize,
        c: &mut [f64],
        ldc: usize,
    ) {
        let (pa, pb, pc) = (a.data.as_ptr(), b.as_ptr(), c.as_mut_ptr());
        let (rs, cs) = (a.rs, a.cs);
        let full_cols = n / 8 * 8;
        let mut i = 0;
        while i + 4 <= m {
            let mut j = 0;
            while j < full_cols {
                let mut acc = [[_mm256_setzero_pd(); 2]; 4];
                for (r, acc) in acc.iter_mut().enumerate() {
                    acc[0] = _mm256_loadu_pd(pc.add((i + r) * ldc + j));
                    acc[1] = _mm256_loadu_pd(pc.add((i + r) * ldc + j + 4));
                }
                for p in 0..k {
                    let b0 = _mm256_loadu_pd(pb.add(p * ldb + j));
                    let b1 = _mm256_loadu_pd(pb.add(p * ldb + j + 4));
                    for (r, acc) in acc.iter_mut().enumerate() {
                        let av = _mm256_broadcast_sd(&*pa.add((i + r) * rs + p * cs));
                        acc[0] = _mm256_fmadd_pd(av, b0, acc[0]);
                        acc[1] = _mm256_fmadd_pd(av, b1, acc[1]);
                    }
                }
                for (r, acc) in acc.iter().enumerate() {
                    _mm256_storeu_pd(pc.add((i + r) * ldc + j), acc[0]);
                    _mm256_storeu_pd(pc.add((i + r) * ldc + j + 4), acc[1]);
                }
                j += 8;
            }
            for r in i..i + 4 {
                for j in full_cols..n {
                    let mut s = *pc.add(r * ldc + j);
                    for p in 0..k {
                        s = (*pa.add(r * rs + p * cs)).mul_add(*pb.add(p * ldb + j), s);
                    }
                    *pc.add(r * ldc + j) = s;
                }
            }
            i += 4;
        }
        for r in i..m {
            for j in 0..n {
                let mut s = *pc.add(r * ldc + j);
                for p in 0..k {
                    s = (*pa.add(r * rs + p * cs)).mul_add(*pb.add(p * ldb + j), s);
                }
                *pc.add(r * ldc + j) = s;
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn matvec_t(m: &[f64], cols: usize, a: &[f64], y: &mut [f64]) {
        super::matvec_t_body::<true>(m, cols, a, y)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn outer(a: &[f64], x: &[f64], m: &mut [f64]) {
        super::outer_body::<true>(a, x, m)
    }
}

#[inline]
fn use_fma() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

macro_rules! dispatch {
    ($name:ident, $body:ident, $($arg:expr),*) => {{
        #[cfg(target_arch = "x86_64")]
        if use_fma() {
            // SAFETY: AVX2 and FMA support was detected at runtime.
            return unsafe { fma::$name($($arg),*) };
        }
        $body::<false>($($arg),*)
    }};
}

/// Dot product with a fixed eight-way accumulation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    dispatch!(dot, dot_body, a, b)
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    dispatch!(axpy, axpy_body, a, x, y)
}

/// `y += M x` for an `rows × cols` row-major `M`.
#[inline]
pub fn matvec_acc(m: &[f64], cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(m.len(), cols * y.len());
    if cols == 0 {
        return;
    }
    dispatch!(matvec, matvec_body, m, cols, x, y)
}

/// `y += Mᵀ a` for an `rows × cols` row-major `M` (`a` has `rows` entries).
#[inline]
pub fn matvec_t_acc(m: &[f64], cols: usize, a: &[f64], y: &mut [f64]) {
    debug_assert_eq!(y.len(), cols);
    if cols == 0 {
        return;
    }
    dispatch!(matvec_t, matvec_t_body, m, cols, a, y)
}

/// `M += a xᵀ`
#[inline]
pub fn outer_acc(a: &[f64], x: &[f64], m: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    dispatch!(outer, outer_body, a, x, m)
}

/// `C += A B` for `m × k` strided `A`, `k × n` `B` (row stride `ldb`) and
/// `m × n` `C` (row stride `ldc`).
///
/// # Panics
///
/// When an operand slice is too short for the given shape.
pub fn gemm_acc(m: usize, n: usize, k: usize, a: Strided, b: &[f64], ldb: usize, c: &mut [f64], ldc: usize) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * a.rs + (k - 1) * a.cs < a.data.len(), "gemm: A too short");
    assert!((k - 1) * ldb + n <= b.len(), "gemm: B too short");
    assert!((m - 1) * ldc + n <= c.len(), "gemm: C too short");
    dispatch!(gemm, gemm_body, m, n, k, a, b, ldb, c, ldc)
}

/// Row-major transpose of an `rows × cols` matrix.
pub fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = m[i * cols + j];
        }
    }
    t
}

/// Cholesky factor of a symmetric positive-definite `n × n` matrix.
///
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L z = b` for lower-triangular `L`.
pub fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - dot(&l[i * n..i * n + i], &z[..i]);
        z[i] = s / l[i * n + i];
    }
    z
}

/// Solves `Lᵀ v = z` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &[f64], n: usize, z: &[f64]) -> Vec<f64> {
    let mut v = z.to_vec();
    for i in (0..n).rev() {
        v[i] /= l[i * n + i];
        let vi = v[i];
        for k in 0..i {
            v[k] -= l[i * n + k] * vi;
        }
    }
    v
}

/// Solves `A x = b` for symmetric positive-definite `A` given its Cholesky factor.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let z = solve_lower(l, n, b);
    solve_lower_transpose(l, n, &z)
}

/// Numerically stable `log Σ exp(xᵢ)`; `-inf` entries are ignored.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}
