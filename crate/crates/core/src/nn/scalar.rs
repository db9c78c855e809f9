use std::fmt::Debug;

use num_traits::Float;

/// Element type of network parameters and activations.
///
/// `f32` is the training precision and goes through an optimized GEMM; `f64`
/// is the verification precision and uses a plain loop so results are
/// reproducible bit-for-bit on any CPU.
pub trait Scalar: Float + Default + Debug + Send + Sync + std::ops::AddAssign + std::iter::Sum + 'static {
    /// `c[m x n] = a[m x k] * b[k x n] + beta * c` with arbitrary strides for
    /// `a` and `b`; `c` is dense row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], rsa: usize, csa: usize, b: &[Self], rsb: usize, csb: usize, beta: Self, c: &mut [Self]);

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

fn check_bounds(m: usize, k: usize, n: usize, a: usize, rsa: usize, csa: usize, b: usize, rsb: usize, csb: usize, c: usize) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a, "gemm: lhs out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b, "gemm: rhs out of bounds");
    assert!(m * n <= c, "gemm: output out of bounds");
}

impl Scalar for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], rsa: usize, csa: usize, b: &[f32], rsb: usize, csb: usize, beta: f32, c: &mut [f32]) {
        check_bounds(m, k, n, a.len(), rsa, csa, b.len(), rsb, csb, c.len());
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: every index touched is bounds-checked above.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, beta: f64, c: &mut [f64]) {
        check_bounds(m, k, n, a.len(), rsa, csa, b.len(), rsb, csb, c.len());
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            if beta == 0.0 {
                row.fill(0.0);
            } else if beta != 1.0 {
                row.iter_mut().for_each(|v| *v *= beta);
            }
            for p in 0..k {
                let aip = a[i * rsa + p * csa];
                if aip == 0.0 {
                    continue;
                }
                let brow = p * rsb;
                for (j, out) in row.iter_mut().enumerate() {
                    *out += aip * b[brow + j * csb];
                }
            }
        }
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}
