//! Shared numeric kernels for the tape ops and the inference-only forward paths.
//!
//! Every kernel fixes its accumulation order per output element, independently of
//! how rows are batched: evaluating one row alone or inside any larger batch gives
//! bit-identical results. The losslessness contracts (zero-noise perturbation loss
//! is exactly 0, sub-batch renders match full renders) rely on this, so kernels are
//! hand-rolled instead of delegated to a BLAS with unspecified blocking.

/// `out = a (m x k) · b (k x n)`, all row-major. Per output row, the k-axis is
/// accumulated in ascending order via rank-1 updates, which keeps each output
/// element's addition sequence fixed and lets the inner loop vectorize.
pub(crate) fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

/// `da = dy (m x n) · b^T (n x k)`; `da[i][kk] = dot(dy[i,:], b[kk,:])`.
pub(crate) fn matmul_grad_lhs(dy: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(dy.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    let mut da = vec![0.0f32; m * k];
    for i in 0..m {
        let dyrow = &dy[i * n..(i + 1) * n];
        let darow = &mut da[i * k..(i + 1) * k];
        for kk in 0..k {
            darow[kk] = dot(dyrow, &b[kk * n..(kk + 1) * n]);
        }
    }
    da
}

/// `db = a^T (k x m) · dy (m x n)`, accumulated over rows of `a`/`dy` in ascending order.
pub(crate) fn matmul_grad_rhs(a: &[f32], dy: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(dy.len(), m * n);
    let mut db = vec![0.0f32; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let dyrow = &dy[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let dbrow = &mut db[kk * n..(kk + 1) * n];
            for j in 0..n {
                dbrow[j] += aik * dyrow[j];
            }
        }
    }
    db
}

/// Dot product with eight independent accumulator lanes combined in a fixed order.
/// The lane split vectorizes under strict IEEE semantics; results depend only on the
/// slice contents, never on surrounding batch structure.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 8;
    let mut acc = [0.0f32; 8];
    for c in 0..chunks {
        let ao = &a[c * 8..c * 8 + 8];
        let bo = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += ao[l] * bo[l];
        }
    }
    let mut s = 0.0f32;
    for l in 0..8 {
        s += acc[l];
    }
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Plain sequential sum; the reference accumulation order for every reduction.
#[inline]
pub(crate) fn sum(x: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for &v in x {
        s += v;
    }
    s
}

#[inline]
pub(crate) fn relu(x: f32) -> f32 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Reference: naive triple loop in (i, j, k) order with an f64 accumulator.
    fn matmul_oracle(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for kk in 0..k {
                    acc += f64::from(a[i * k + kk]) * f64::from(b[kk * n + j]);
                }
                out[i * n + j] = acc as f32;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        // Fixed pseudo-random values; shapes straddle the 8-lane boundary.
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 40) as f32 / 16777216.0 - 0.5
        };
        for &(m, k, n) in &[(3usize, 4usize, 2usize), (17, 9, 5), (1, 64, 3), (8, 1, 8)] {
            let a: Vec<f32> = (0..m * k).map(|_| next()).collect();
            let b: Vec<f32> = (0..k * n).map(|_| next()).collect();
            let got = matmul(&a, &b, m, k, n);
            let want = matmul_oracle(&a, &b, m, k, n);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-6, "matmul {m}x{k}x{n}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn matmul_row_results_do_not_depend_on_batching() {
        let m = 13;
        let k = 36;
        let n = 64;
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 2654435761) % 1000) as f32 / 997.0 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 40503) % 1000) as f32 / 991.0 - 0.5).collect();
        let full = matmul(&a, &b, m, k, n);
        for i in 0..m {
            let single = matmul(&a[i * k..(i + 1) * k], &b, 1, k, n);
            assert_eq!(
                single.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                full[i * n..(i + 1) * n].iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "row {i} differs between batched and single evaluation"
            );
        }
    }

    #[test]
    fn dot_matches_sequential_reference_closely() {
        let a: Vec<f32> = (0..100).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..100).map(|i| (i as f32 * 0.11).cos()).collect();
        let mut want = 0.0f64;
        for i in 0..100 {
            want += f64::from(a[i]) * f64::from(b[i]);
        }
        assert!((f64::from(dot(&a, &b)) - want).abs() < 1e-5);
    }
}
