//! Slice-level numeric kernels shared by the tape's forward and backward rules.
//!
//! Every output element is reduced in a fixed order, so results do not depend
//! on how rayon splits the work.

use rayon::prelude::*;

/// `out[m x p] = a[m x k] * b[k x p]`
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, p: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * p);
    if p == 0 {
        return;
    }
    out.par_chunks_mut(p).enumerate().for_each(|(i, row)| {
        row.iter_mut().for_each(|o| *o = 0.0);
        let ar = &a[i * k..(i + 1) * k];
        for (kk, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    });
}

/// `out[m x k] = a[m x p] * b[k x p]^T`
pub fn matmul_a_bt(a: &[f32], b: &[f32], m: usize, p: usize, k: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), k * p);
    if k == 0 {
        return;
    }
    out.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let ar = &a[i * p..(i + 1) * p];
        for (j, o) in row.iter_mut().enumerate() {
            let br = &b[j * p..(j + 1) * p];
            *o = ar.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    });
}

/// `out[k x p] = a[m x k]^T * b[m x p]`
pub fn matmul_at_b(a: &[f32], b: &[f32], m: usize, k: usize, p: usize, out: &mut [f32]) {
    let at = transpose(a, m, k);
    matmul(&at, b, k, m, p, out);
}

pub fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Row-wise nonzero structure of a sparse input matrix.
pub struct SparseRows {
    pub row_ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f32>,
}

impl SparseRows {
    pub fn from_dense(x: &[f32], rows: usize, cols: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for r in 0..rows {
            for (c, &v) in x[r * cols..(r + 1) * cols].iter().enumerate() {
                if v != 0.0 {
                    col.push(c);
                    val.push(v);
                }
            }
            row_ptr.push(col.len());
        }
        SparseRows { row_ptr, col, val }
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    /// Column-major view: for each column, the rows holding a nonzero, ascending.
    pub fn transpose(&self, cols: usize) -> SparseRows {
        let rows = self.row_ptr.len() - 1;
        let mut counts = vec![0usize; cols + 1];
        for &c in &self.col {
            counts[c + 1] += 1;
        }
        for c in 0..cols {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut col = vec![0; self.nnz()];
        let mut val = vec![0.0; self.nnz()];
        for r in 0..rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col[k];
                col[fill[c]] = r;
                val[fill[c]] = self.val[k];
                fill[c] += 1;
            }
        }
        SparseRows {
            row_ptr: counts,
            col,
            val,
        }
    }
}

/// `out[rows x p] = x * w` over the nonzeros of `x`. With `binary` set the
/// nonzeros are taken as 1 and each contributes a pure row addition.
pub fn sparse_matmul(x: &SparseRows, w: &[f32], p: usize, binary: bool, out: &mut [f32]) {
    if p == 0 {
        return;
    }
    out.par_chunks_mut(p).enumerate().for_each(|(r, row)| {
        row.iter_mut().for_each(|o| *o = 0.0);
        for k in x.row_ptr[r]..x.row_ptr[r + 1] {
            let wr = &w[x.col[k] * p..(x.col[k] + 1) * p];
            if binary {
                for (o, &wv) in row.iter_mut().zip(wr) {
                    *o += wv;
                }
            } else {
                let s = x.val[k];
                for (o, &wv) in row.iter_mut().zip(wr) {
                    *o += s * wv;
                }
            }
        }
    });
}

/// `dw[cols x p] = x^T * dy`, with `xt` the column view of `x`.
pub fn sparse_matmul_grad_w(xt: &SparseRows, dy: &[f32], p: usize, out: &mut [f32]) {
    if p == 0 {
        return;
    }
    out.par_chunks_mut(p).enumerate().for_each(|(c, row)| {
        row.iter_mut().for_each(|o| *o = 0.0);
        for k in xt.row_ptr[c]..xt.row_ptr[c + 1] {
            let r = xt.col[k];
            let s = xt.val[k];
            let src = &dy[r * p..(r + 1) * p];
            for (o, &g) in row.iter_mut().zip(src) {
                *o += s * g;
            }
        }
    });
}

pub fn softmax_row(x: &[f32], out: &mut [f32]) {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub fn log_softmax_row(x: &[f32], out: &mut [f32]) {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<f32>().ln() + max;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

pub fn leaky_relu(x: f32, slope: f32) -> f32 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_case() {
        let mut out = vec![0.0; 2];
        matmul(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2, 2, 1, &mut out);
        assert_eq!(out, vec![3.0, 7.0]);
    }

    #[test]
    fn transposed_products_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, -1.0, 2.0, 1.0, 0.5]; // 2x3
        let mut abt = vec![0.0; 4];
        matmul_a_bt(&a, &b, 2, 3, 2, &mut abt);
        let bt = transpose(&b, 2, 3);
        let mut reference = vec![0.0; 4];
        matmul(&a, &bt, 2, 3, 2, &mut reference);
        assert_eq!(abt, reference);

        let mut atb = vec![0.0; 9];
        matmul_at_b(&a, &b, 2, 3, 3, &mut atb);
        let at = transpose(&a, 2, 3);
        let mut r2 = vec![0.0; 9];
        matmul(&at, &b, 3, 2, 3, &mut r2);
        assert_eq!(atb, r2);
    }

    #[test]
    fn sparse_column_view() {
        let x = [0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let s = SparseRows::from_dense(&x, 2, 3);
        let t = s.transpose(3);
        assert_eq!(t.row_ptr, vec![0, 0, 1, 3]);
        assert_eq!(t.col, vec![0, 0, 1]);
    }
}
