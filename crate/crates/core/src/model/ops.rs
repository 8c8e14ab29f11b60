//! Dense kernels shared by the forward and backward passes.
//!
//! All matrices are row-major. Products go through `matrixmultiply`, which is
//! single-threaded here, so results are bit-reproducible for fixed inputs.

use std::fmt::Debug;
use std::iter::Sum;

/// Scalar type the model can run in: `f32` for training, `f64` for gradient checks.
pub trait Float:
    num_traits::Float + Default + Debug + Send + Sync + Sum + 'static
{
    const DTYPE: &'static str;

    fn of(x: f64) -> Self;
    fn f64(self) -> f64;

    /// `c = alpha * a·b + beta * c` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8>;
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;
}

impl Float for f32 {
    const DTYPE: &'static str = "f32";

    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

impl Float for f64 {
    const DTYPE: &'static str = "f64";

    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn to_le_bytes_vec(values: &[Self]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect()
    }
}

fn beta<T: Float>(accumulate: bool) -> T {
    if accumulate {
        T::one()
    } else {
        T::zero()
    }
}

/// `c[m,n] (+)= a[m,k] · b[k,n]`
pub fn matmul<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds asserted above; strides describe dense row-major storage.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta(accumulate),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c[k,n] (+)= a[m,k]ᵀ · b[m,n]`
pub fn matmul_tn<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
    if k == 0 || n == 0 {
        return;
    }
    // SAFETY: as above; `a` is read transposed through swapped strides.
    unsafe {
        T::gemm(
            k,
            m,
            n,
            T::one(),
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta(accumulate),
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c[m,k] (+)= a[m,n] · b[k,n]ᵀ`
pub fn matmul_nt<T: Float>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize, accumulate: bool) {
    assert!(a.len() >= m * n && b.len() >= k * n && c.len() >= m * k);
    if m == 0 || k == 0 {
        return;
    }
    // SAFETY: as above; `b` is read transposed through swapped strides.
    unsafe {
        T::gemm(
            m,
            n,
            k,
            T::one(),
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            beta(accumulate),
            c.as_mut_ptr(),
            k as isize,
            1,
        )
    }
}

/// Adds `bias` to every row of `x`.
pub fn add_bias<T: Float>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v + *b;
        }
    }
}

/// Column sums of `dy` accumulated into `db`.
pub fn bias_grad<T: Float>(dy: &[T], db: &mut [T]) {
    for row in dy.chunks_exact(db.len()) {
        for (g, d) in db.iter_mut().zip(row) {
            *g = *g + *d;
        }
    }
}

/// RMS normalization with a learned gain. Writes normalized rows into `out` and
/// the per-row inverse RMS into `inv_rms`.
pub fn rms_norm<T: Float>(x: &[T], gain: &[T], eps: T, out: &mut [T], inv_rms: &mut [T]) {
    let h = gain.len();
    let hf = T::of(h as f64);
    for ((row, o), r) in x.chunks_exact(h).zip(out.chunks_exact_mut(h)).zip(inv_rms.iter_mut()) {
        let ms = row.iter().map(|&v| v * v).sum::<T>() / hf;
        let inv = (ms + eps).sqrt().recip();
        *r = inv;
        for ((o, &v), &g) in o.iter_mut().zip(row).zip(gain) {
            *o = v * inv * g;
        }
    }
}

/// Backward of [`rms_norm`]: accumulates into `dx` and `dgain`.
pub fn rms_norm_backward<T: Float>(
    x: &[T],
    gain: &[T],
    inv_rms: &[T],
    dout: &[T],
    dx: &mut [T],
    dgain: &mut [T],
) {
    let h = gain.len();
    let hf = T::of(h as f64);
    for (((row, d), dxr), &r) in x
        .chunks_exact(h)
        .zip(dout.chunks_exact(h))
        .zip(dx.chunks_exact_mut(h))
        .zip(inv_rms)
    {
        let mut dot = T::zero();
        for j in 0..h {
            dgain[j] = dgain[j] + d[j] * row[j] * r;
            dot = dot + gain[j] * d[j] * row[j];
        }
        let coef = r * r * r * dot / hf;
        for j in 0..h {
            dxr[j] = dxr[j] + r * gain[j] * d[j] - row[j] * coef;
        }
    }
}

pub fn sigmoid<T: Float>(x: T) -> T {
    (T::one() + (-x).exp()).recip()
}

pub fn silu<T: Float>(x: T) -> T {
    x * sigmoid(x)
}

/// d silu(x) / dx
pub fn silu_grad<T: Float>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Rotary position tables: `cos[pos * half + i]`, `sin[...]` for a head of width `2 * half`.
#[derive(Debug, Clone)]
pub struct Rope<T> {
    pub half: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Float> Rope<T> {
    pub fn new(head_dim: usize, max_len: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(max_len * half);
        let mut sin = Vec::with_capacity(max_len * half);
        for pos in 0..max_len {
            for i in 0..half {
                let freq = base.powf(-2.0 * i as f64 / head_dim as f64);
                let angle = pos as f64 * freq;
                cos.push(T::of(angle.cos()));
                sin.push(T::of(angle.sin()));
            }
        }
        Rope { half, cos, sin }
    }

    /// Rotates one head vector in place at position `pos`. `inverse` applies the transpose.
    pub fn rotate(&self, v: &mut [T], pos: usize, inverse: bool) {
        let half = self.half;
        let base = pos * half;
        for i in 0..half {
            let c = self.cos[base + i];
            let s = if inverse { -self.sin[base + i] } else { self.sin[base + i] };
            let a = v[i];
            let b = v[i + half];
            v[i] = a * c - b * s;
            v[i + half] = b * c + a * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_match_naive() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        matmul(&a, &b, &mut c, m, k, n, false);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ stored as [k,m]
        let at = transpose(&a, m, k);
        let mut c2 = vec![0.0; m * n];
        matmul_tn(&at, &b, &mut c2, k, m, n, false);
        for (x, y) in c2.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let bt = transpose(&b, k, n);
        let mut c3 = vec![1.0; m * n];
        matmul_nt(&a, &bt, &mut c3, m, k, n, true);
        for (x, y) in c3.iter().zip(&want) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn rope_is_orthogonal() {
        let rope = Rope::<f64>::new(8, 16, 10000.0);
        let v: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let mut w = v.clone();
        rope.rotate(&mut w, 11, false);
        let n0: f64 = v.iter().map(|x| x * x).sum();
        let n1: f64 = w.iter().map(|x| x * x).sum();
        assert!((n0 - n1).abs() < 1e-12);
        rope.rotate(&mut w, 11, true);
        for (a, b) in v.iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn silu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
