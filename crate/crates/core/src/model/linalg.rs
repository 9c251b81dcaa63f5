//! Dense row-major kernels. Every reduction runs in a fixed order, so results are bit-stable.

use super::scalar::Scalar;

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// `y[n×out] += x[n×inp] · w[inp×out]`
pub(crate) fn matmul_acc<T: Scalar>(x: &[T], w: &[T], y: &mut [T], n: usize, inp: usize, out: usize) {
    for i in 0..n {
        let xr = &x[i * inp..(i + 1) * inp];
        let yr = &mut y[i * out..(i + 1) * out];
        for (k, &xv) in xr.iter().enumerate() {
            axpy(xv, &w[k * out..(k + 1) * out], yr);
        }
    }
}

/// `y = x · w + b` for `n` rows.
pub(crate) fn linear<T: Scalar>(x: &[T], w: &[T], b: &[T], n: usize, inp: usize, out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * out);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    matmul_acc(x, w, &mut y, n, inp, out);
    y
}

/// `dx[n×inp] += dy[n×out] · wᵀ`
pub(crate) fn matmul_t_acc<T: Scalar>(dy: &[T], w: &[T], dx: &mut [T], n: usize, inp: usize, out: usize) {
    for i in 0..n {
        let dyr = &dy[i * out..(i + 1) * out];
        let dxr = &mut dx[i * inp..(i + 1) * inp];
        for (k, d) in dxr.iter_mut().enumerate() {
            *d += dot(dyr, &w[k * out..(k + 1) * out]);
        }
    }
}

/// `dw[inp×out] += xᵀ · dy`
pub(crate) fn outer_acc<T: Scalar>(x: &[T], dy: &[T], dw: &mut [T], n: usize, inp: usize, out: usize) {
    for i in 0..n {
        let dyr = &dy[i * out..(i + 1) * out];
        for k in 0..inp {
            let xv = x[i * inp + k];
            if xv != T::zero() {
                axpy(xv, dyr, &mut dw[k * out..(k + 1) * out]);
            }
        }
    }
}

/// Column sums of `dy[n×out]` into `db`.
pub(crate) fn bias_acc<T: Scalar>(dy: &[T], db: &mut [T], out: usize) {
    for row in dy.chunks_exact(out) {
        for (b, &d) in db.iter_mut().zip(row) {
            *b += d;
        }
    }
}
