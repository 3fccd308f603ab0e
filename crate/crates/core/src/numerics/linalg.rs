//! Dense row-major kernels shared by the tape and the tape-free inference path.

/// `c = op(a) · op(b) + beta · c` for row-major matrices.
///
/// `a` is `m×k` (stored `k×m` when `trans_a`), `b` is `k×n` (stored `n×k`
/// when `trans_b`), `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        } else {
            c.iter_mut().for_each(|x| *x *= beta);
        }
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b` (borrow rules).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a, false, b, false, &mut out, 0.0);
    out
}

pub fn add_row_inplace(x: &mut [f64], row: &[f64]) {
    for chunk in x.chunks_exact_mut(row.len()) {
        for (v, b) in chunk.iter_mut().zip(row) {
            *v += b;
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes one row in place into `out`; returns `(mean, rstd)`.
pub fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64], out: &mut [f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
    }
    (mean, rstd)
}

pub fn layer_norm(x: &[f64], cols: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        layer_norm_row(row, gamma, beta, o);
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// The `tanh` term shared by [`gelu`] and [`gelu_grad`].
pub fn gelu_tanh(x: f64) -> f64 {
    (GELU_C * (x + GELU_A * x * x * x)).tanh()
}

pub fn gelu(x: f64) -> f64 {
    gelu_from_tanh(x, gelu_tanh(x))
}

pub fn gelu_from_tanh(x: f64, t: f64) -> f64 {
    0.5 * x * (1.0 + t)
}

pub fn gelu_grad(x: f64) -> f64 {
    gelu_grad_from_tanh(x, gelu_tanh(x))
}

pub fn gelu_grad_from_tanh(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Max-subtracted softmax over the entries of `row` where `allowed` is true;
/// disallowed entries become exactly zero. A row with nothing allowed is all zeros.
pub fn softmax_masked_row(row: &mut [f64], allowed: impl Fn(usize) -> bool) {
    let mut max = f64::NEG_INFINITY;
    for (j, v) in row.iter().enumerate() {
        if allowed(j) && *v > max {
            max = *v;
        }
    }
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        if allowed(j) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes_agree_with_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 1.0]; // 3x2
        let c = matmul(2, 3, 2, &a, &b);
        assert_eq!(c, vec![-1.0, 7.5, -1.0, 18.0]);
        // a^T stored as 3x2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, -1.0, 0.0, 0.5, 2.0, 1.0];
        let mut c2 = vec![0.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, &mut c2, 0.0);
        assert_eq!(c, c2);
    }

    #[test]
    fn gelu_matches_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_607_477).abs() < 1e-12);
        let h = 1e-6;
        for x in [-2.0, -0.7, 0.3, 1.7] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn masked_softmax_zeroes_disallowed() {
        let mut r = [1.0, 2.0, 3.0];
        softmax_masked_row(&mut r, |j| j != 1);
        assert_eq!(r[1], 0.0);
        assert!((r[0] + r[2] - 1.0).abs() < 1e-15);
        let mut none = [1.0, 2.0];
        softmax_masked_row(&mut none, |_| false);
        assert_eq!(none, [0.0, 0.0]);
    }
}
