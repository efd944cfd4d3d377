//! Raw slice kernels shared by forward and backward passes.

/// `C[m×n] = op(A) · op(B)` where `op` optionally transposes.
/// `a` is stored as `[m×k]` (or `[k×m]` when `ta`), `b` as `[k×n]` (or `[n×k]` when `tb`).
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = if ta { a[p * m + i] } else { a[i * k + p] };
            if aip == 0.0 {
                continue;
            }
            if tb {
                for (j, cij) in crow.iter_mut().enumerate() {
                    *cij += aip * b[j * k + p];
                }
            } else {
                let brow = &b[p * n..(p + 1) * n];
                for (cij, bpj) in crow.iter_mut().zip(brow) {
                    *cij += aip * bpj;
                }
            }
        }
    }
    c
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Moves `data` laid out as `shape` into the axis order given by `axes`.
pub(crate) fn permute(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let offset: usize = (0..rank).map(|d| idx[d] * in_strides[axes[d]]).sum();
        out.push(data[offset]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

/// Splits a shape around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Index of the row maximum over `row`, skipping `skip`; ties go to the lowest index.
pub(crate) fn argmax(row: &[f64], skip: Option<usize>) -> usize {
    let mut best = usize::MAX;
    for (j, &x) in row.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        if best == usize::MAX || x > row[best] {
            best = j;
        }
    }
    best
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let c = gemm(&a, &b, 2, 3, 2, false, false);
        assert_eq!(c, vec![4.0, 5.0, 10.0, 11.0]);
        // aᵀ stored as 3x2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        assert_eq!(gemm(&at, &b, 2, 3, 2, true, false), c);
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        assert_eq!(gemm(&a, &bt, 2, 3, 2, false, true), c);
    }

    #[test]
    fn permute_swaps_axes() {
        let data: Vec<f64> = (0..6).map(f64::from).collect();
        let (out, shape) = permute(&data, &[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(out, vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn argmax_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 5.0, 5.0, 2.0], None), 1);
        assert_eq!(argmax(&[9.0, 5.0, 5.0], Some(0)), 1);
    }
}
