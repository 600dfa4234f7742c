//! Small dense determinant routines shared by the kernel evaluations.

use nalgebra::DMatrix;

/// Relative threshold below which a determinant is reported as exactly zero.
pub const DET_ZERO_REL: f64 = 1e-12;

/// Determinant of a square matrix by LU factorization with partial pivoting,
/// sign tracked via permutation parity.
///
/// Values smaller in magnitude than `DET_ZERO_REL` times a Hadamard-style
/// scale (product of column maxima) are reported as exactly 0, so that the
/// "f != 0" tests of the online algorithms are meaningful in floating point.
/// The 0x0 determinant is 1 by convention.
pub fn det_clamped(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "determinant of a non-square matrix");
    if n == 0 {
        return 1.0;
    }
    let mut scale = 1.0f64;
    for j in 0..n {
        let mut cmax = 0.0f64;
        for i in 0..n {
            cmax = cmax.max(m[(i, j)].abs());
        }
        if cmax == 0.0 {
            return 0.0;
        }
        scale *= cmax;
    }

    let mut a = m.clone();
    let mut det = 1.0f64;
    for p in 0..n {
        let mut imax = p;
        let mut vmax = a[(p, p)].abs();
        for i in (p + 1)..n {
            let v = a[(i, p)].abs();
            if v > vmax {
                vmax = v;
                imax = i;
            }
        }
        if vmax == 0.0 {
            return 0.0;
        }
        if imax != p {
            a.swap_rows(imax, p);
            det = -det;
        }
        let piv = a[(p, p)];
        det *= piv;
        for i in (p + 1)..n {
            let factor = a[(i, p)] / piv;
            for j in (p + 1)..n {
                let sub = a[(p, j)] * factor;
                a[(i, j)] -= sub;
            }
        }
    }
    if det.abs() < DET_ZERO_REL * scale {
        0.0
    } else {
        det
    }
}
