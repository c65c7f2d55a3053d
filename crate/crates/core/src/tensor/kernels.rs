// Raw buffer kernels shared by the forward and backward passes.

pub(crate) const GELU_C: f32 = 0.797_884_6;
pub(crate) const GELU_A: f32 = 0.044_715;

/// `c = alpha * a @ b + beta * c` for row-major `c` (m x n) with arbitrary
/// strides on `a` (m x k) and `b` (k x n).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the callers pass buffers whose extents cover every index
    // reachable through (m, k, n) and the given strides; `c` is exclusive.
    unsafe {
        matrixmultiply::sgemm(
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

pub(crate) fn softmax_rows(x: &[f32], cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = (xi - max).exp();
            sum += *oi;
        }
        let inv = 1.0 / sum;
        for oi in o.iter_mut() {
            *oi *= inv;
        }
    }
    out
}

pub(crate) fn log_softmax_rows(x: &[f32], cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = xi - lse;
        }
    }
    out
}

pub(crate) fn gelu(x: f32) -> f32 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

pub(crate) fn gelu_grad(x: f32) -> f32 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Source offset of every element of the patch sequence, in output order.
///
/// Patches are taken row-major over the grid; inside a patch the layout is
/// (row, column, channel), channel fastest.
pub(crate) fn patch_gather_index(image_size: usize, patch: usize) -> Vec<usize> {
    let grid = image_size / patch;
    let mut idx = Vec::with_capacity(image_size * image_size * 3);
    for gy in 0..grid {
        for gx in 0..grid {
            for py in 0..patch {
                for px in 0..patch {
                    let y = gy * patch + py;
                    let x = gx * patch + px;
                    for c in 0..3 {
                        idx.push((y * image_size + x) * 3 + c);
                    }
                }
            }
        }
    }
    idx
}
