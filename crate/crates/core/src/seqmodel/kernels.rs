//! Dense building blocks shared by the forward and backward passes.

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// `c = beta·c + op(a)·op(b)` with `op(a)` of shape `m×k` and `op(b)` of
/// shape `k×n`. A transposed operand is stored row-major in its original
/// (untransposed) shape.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: bounds asserted above; strides describe dense row-major storage.
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

/// `out (rows×dout) = x (rows×din) · w (din×dout) + bias`.
pub fn linear(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    rows: usize,
    din: usize,
    dout: usize,
    out: &mut [f64],
) {
    for row in out[..rows * dout].chunks_exact_mut(dout) {
        row.copy_from_slice(bias);
    }
    gemm(rows, din, dout, x, false, w, false, out, 1.0);
}

/// Backward of [`linear`]: accumulates into `dw`, `db` and overwrites `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    dout_buf: &[f64],
    x: &[f64],
    w: &[f64],
    rows: usize,
    din: usize,
    dout: usize,
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    for row in dout_buf[..rows * dout].chunks_exact(dout) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
    gemm(din, rows, dout, x, true, dout_buf, false, dw, 1.0);
    if let Some(dx) = dx {
        gemm(rows, dout, din, dout_buf, false, w, true, dx, 0.0);
    }
}

/// Row-wise layer norm; stores per-row mean and reciprocal std.
pub fn layernorm(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    d: usize,
    out: &mut [f64],
    mean: &mut [f64],
    rstd: &mut [f64],
) {
    for (r, (xr, or)) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let mu = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        for i in 0..d {
            or[i] = (xr[i] - mu) * rs * gain[i] + bias[i];
        }
        mean[r] = mu;
        rstd[r] = rs;
    }
}

/// Backward of [`layernorm`]; accumulates into `dx`, `dgain`, `dbias`.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward(
    dout: &[f64],
    x: &[f64],
    gain: &[f64],
    mean: &[f64],
    rstd: &[f64],
    d: usize,
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let mut dxhat = vec![0.0; d];
    for (r, ((dor, xr), dxr)) in dout
        .chunks_exact(d)
        .zip(x.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .enumerate()
    {
        let (mu, rs) = (mean[r], rstd[r]);
        let mut sum = 0.0;
        let mut sum_xhat = 0.0;
        for i in 0..d {
            let xhat = (xr[i] - mu) * rs;
            dgain[i] += dor[i] * xhat;
            dbias[i] += dor[i];
            dxhat[i] = dor[i] * gain[i];
            sum += dxhat[i];
            sum_xhat += dxhat[i] * xhat;
        }
        let (m1, m2) = (sum / d as f64, sum_xhat / d as f64);
        for i in 0..d {
            let xhat = (xr[i] - mu) * rs;
            dxr[i] += rs * (dxhat[i] - m1 - xhat * m2);
        }
    }
}

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
