//! Dense kernels shared by the tape operations. All reductions run in a
//! fixed order so results are reproducible bit for bit.

use super::Real;

/// `c[m x n] += a[m x k] * b[k x n]`
pub(crate) fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m x n] += a[m x k] * b[n x k]^T`
pub(crate) fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m x n] += a[k x m]^T * b[k x n]`
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        let arow = &a[p * m..(p + 1) * m];
        for (i, &api) in arow.iter().enumerate() {
            if api == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += api * bv;
            }
        }
    }
}

/// Dot product with eight interleaved partial sums.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Spatial layout of a convolution: `D` spatial dims, cubic kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom<const D: usize> {
    pub cin: usize,
    pub input: [usize; D],
    pub output: [usize; D],
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<const D: usize> ConvGeom<D> {
    pub fn out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        (input + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
    }

    pub fn rows(&self) -> usize {
        self.cin * self.kernel.pow(D as u32)
    }

    pub fn cols(&self) -> usize {
        self.output.iter().product()
    }

    fn in_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Calls `f(row, col, input_offset)` for every in-bounds tap. Spatial
    /// axes are ordered slowest first (`[D, H, W]`).
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel;
        let taps = k.pow(D as u32);
        let cols = self.cols();
        let in_len = self.in_len();
        for c in 0..self.cin {
            for t in 0..taps {
                let row = c * taps + t;
                let mut off = [0usize; D];
                let mut rem = t;
                for a in (0..D).rev() {
                    off[a] = rem % k;
                    rem /= k;
                }
                let mut out_idx = [0usize; D];
                for col in 0..cols {
                    let mut inb = true;
                    let mut flat = 0usize;
                    for a in 0..D {
                        let pos = (out_idx[a] * self.stride + off[a]) as isize - self.pad as isize;
                        if pos < 0 || pos >= self.input[a] as isize {
                            inb = false;
                        }
                        flat = flat * self.input[a] + pos.max(0) as usize;
                    }
                    if inb {
                        f(row, col, c * in_len + flat);
                    }
                    // Advance the output multi-index (last axis fastest).
                    let mut a = D;
                    while a > 0 {
                        a -= 1;
                        out_idx[a] += 1;
                        if out_idx[a] < self.output[a] {
                            break;
                        }
                        out_idx[a] = 0;
                    }
                }
            }
        }
    }

    /// Unfolds one batch item into a `rows x cols` matrix.
    pub fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        cols.iter_mut().for_each(|v| *v = T::zero());
        let n = self.cols();
        self.for_each_tap(|row, col, src| cols[row * n + col] = x[src]);
    }

    /// Scatter-adds a `rows x cols` matrix back onto one input item.
    pub fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let n = self.cols();
        self.for_each_tap(|row, col, dst| dx[dst] += cols[row * n + col]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn gemm_variants_agree() {
        let (m, k, n) = (3, 5, 4);
        let a: alloc::vec::Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: alloc::vec::Vec<f64> = (0..k * n).map(|i| (i as f64).sqrt()).collect();
        let mut c1 = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c1);
        // b^T as n x k
        let bt: alloc::vec::Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let mut c2 = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &bt, &mut c2);
        let at: alloc::vec::Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
        let mut c3 = vec![0.0; m * n];
        gemm_tn(m, k, n, &at, &b, &mut c3);
        for i in 0..m * n {
            assert!((c1[i] - c2[i]).abs() < 1e-12 && (c1[i] - c3[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom::<2> { cin: 2, input: [5, 4], output: [3, 2], kernel: 3, stride: 2, pad: 1 };
        let x: alloc::vec::Vec<f64> = (0..40).map(|i| (i as f64 * 1.3).sin()).collect();
        let y: alloc::vec::Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        g.im2col(&x, &mut cols);
        let mut back = vec![0.0; 40];
        g.col2im(&y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
