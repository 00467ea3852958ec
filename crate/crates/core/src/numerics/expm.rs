//! Matrix exponential by scaling-and-squaring with a degree-13 Padé
//! approximant (Higham 2005), and the zero-order-hold block form built on it.

use crate::error::{arg_err, dim_err, Result};
use crate::numerics::Matrix;

/// Padé(13,13) numerator coefficients; the denominator uses the same values
/// with alternating signs.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the unscaled degree-13 approximant meets double
/// precision backward error.
const THETA13: f64 = 5.371920351148152;

pub fn expm(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return dim_err(format!("expm needs a square matrix, got {}x{}", m.rows(), m.cols()));
    }
    if !m.is_finite() {
        return arg_err("expm input contains non-finite entries");
    }
    let n = m.rows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }

    let norm = m.norm1();
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = m.scale(0.5f64.powi(squarings));

    let ident = Matrix::identity(n);
    let a2 = a.matmul(&a)?;
    let a4 = a2.matmul(&a2)?;
    let a6 = a4.matmul(&a2)?;
    let b = &PADE13;

    // U = A [A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I]
    let inner_u = lin_comb(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)]);
    let mut u_poly = a6.matmul(&inner_u)?;
    u_poly.add_assign(&lin_comb(&[
        (b[7], &a6),
        (b[5], &a4),
        (b[3], &a2),
        (b[1], &ident),
    ]))?;
    let u = a.matmul(&u_poly)?;

    // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    let inner_v = lin_comb(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)]);
    let mut v = a6.matmul(&inner_v)?;
    v.add_assign(&lin_comb(&[
        (b[6], &a6),
        (b[4], &a4),
        (b[2], &a2),
        (b[0], &ident),
    ]))?;

    let p = v.add(&u)?;
    let q = v.sub(&u)?;
    let mut r = q.solve(&p)?;
    for _ in 0..squarings {
        r = r.matmul(&r)?;
    }
    if !r.is_finite() {
        return arg_err("matrix exponential overflowed");
    }
    Ok(r)
}

fn lin_comb(terms: &[(f64, &Matrix)]) -> Matrix {
    let (rows, cols) = terms[0].1.shape();
    let mut out = Matrix::zeros(rows, cols);
    for (c, m) in terms {
        for (o, v) in out.data_mut().iter_mut().zip(m.data()) {
            *o += c * v;
        }
    }
    out
}

/// Zero-order-hold discretization at unit step.
///
/// Returns `(e^A, A⁻¹(e^A − I)B)`, read off the top blocks of
/// `exp([[A, B], [0, 0]])` so that `A` is never inverted.
pub fn expm_augmented(a: &Matrix, b: &Matrix) -> Result<(Matrix, Matrix)> {
    if !a.is_square() {
        return dim_err(format!("A must be square, got {}x{}", a.rows(), a.cols()));
    }
    if b.rows() != a.rows() {
        return dim_err(format!("B has {} rows, A is {}x{}", b.rows(), a.rows(), a.cols()));
    }
    let d = a.rows();
    let k = b.cols();
    let mut aug = Matrix::zeros(d + k, d + k);
    for i in 0..d {
        for j in 0..d {
            aug[(i, j)] = a[(i, j)];
        }
        for j in 0..k {
            aug[(i, d + j)] = b[(i, j)];
        }
    }
    let e = expm(&aug)?;
    Ok((e.block(0, 0, d, d)?, e.block(0, d, d, k)?))
}
