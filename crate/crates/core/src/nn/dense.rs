use crate::real::{rm, tr, Real};

/// `y[n, fout] = x[n, fin] W[fin, fout] + b`.
pub fn dense_forward<T: Real>(x: &[T], n: usize, fin: usize, w: &[T], b: &[T]) -> Vec<T> {
    let fout = b.len();
    assert_eq!(x.len(), n * fin);
    assert_eq!(w.len(), fin * fout);
    let mut y = vec![T::zero(); n * fout];
    T::gemm(
        n,
        fin,
        fout,
        T::one(),
        x,
        rm(fin),
        w,
        rm(fout),
        T::zero(),
        &mut y,
        rm(fout),
    );
    super::conv::add_bias(&mut y, b);
    y
}

/// Accumulates `dW`, `db`; returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    n: usize,
    fin: usize,
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let fout = db.len();
    T::gemm(
        fin,
        n,
        fout,
        T::one(),
        x,
        tr(fin),
        dy,
        rm(fout),
        T::one(),
        dw,
        rm(fout),
    );
    super::conv::bias_grad(dy, db);
    let mut dx = vec![T::zero(); n * fin];
    T::gemm(
        n,
        fout,
        fin,
        T::one(),
        dy,
        rm(fout),
        w,
        tr(fout),
        T::zero(),
        &mut dx,
        rm(fin),
    );
    dx
}
