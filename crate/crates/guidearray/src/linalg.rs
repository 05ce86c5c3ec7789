// SPDX-License-Identifier: Apache-2.0

//! Dense linear-algebra kernels used by the lattice and propagation code.
//!
//! Three routines live here, each picked for the structure of the matrices
//! this crate actually produces:
//!
//! - implicit-shift QL iteration for real symmetric tridiagonal matrices
//!   (the Hermitian lattice Hamiltonians), eigenvalues in O(N^2) and
//!   optional eigenvectors,
//! - single-shift complex QR iteration for upper-Hessenberg matrices
//!   (a complex tridiagonal matrix is already Hessenberg, so the gain/loss
//!   Hamiltonians need no reduction step), eigenvalues only,
//! - scaling-and-squaring matrix exponential with the degree-13 Padé
//!   approximant, after Higham, SIAM J. Matrix Anal. Appl. 26(4), 1179.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigenvalues (ascending) of a real symmetric tridiagonal matrix, with
/// orthonormal eigenvectors in the columns of the returned matrix when
/// `want_vectors` is set.
///
/// Implicit-shift QL iteration in the EISPACK `imtql2` lineage. `offdiag`
/// holds the N-1 couplings between neighbouring rows.
pub(crate) fn tridiagonal_eigen(
    diag: &[f64],
    offdiag: &[f64],
    want_vectors: bool,
) -> Result<(Vec<f64>, Option<Array2<f64>>)> {
    let n = diag.len();
    assert!(
        n >= 1 && offdiag.len() == n - 1,
        "tridiagonal shape mismatch: {} diagonal, {} off-diagonal",
        n,
        offdiag.len()
    );

    let mut d = diag.to_vec();
    let mut e = offdiag.to_vec();
    e.push(0.0);
    let mut z = want_vectors.then(|| Array2::<f64>::eye(n));

    for l in 0..n {
        let mut iter = 0;
        loop {
            // Locate the first negligible coupling at or above row l; the
            // block l..=m is what the sweep acts on.
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::EigenNonConvergence(format!(
                    "QL iteration for eigenvalue {l} of a {n}x{n} tridiagonal matrix \
                     exceeded 50 sweeps (residual coupling {:.3e})",
                    e[l]
                )));
            }

            // Shift from the leading 2x2 of the block.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;

            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // Lost the rotation to underflow; drop the shift and retry.
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;

                if let Some(z) = z.as_mut() {
                    for k in 0..n {
                        f = z[[k, i + 1]];
                        z[[k, i + 1]] = s * z[[k, i]] + c * f;
                        z[[k, i]] = c * z[[k, i]] - s * f;
                    }
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    // Deterministic ascending order, eigenvector columns permuted alongside.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let vectors = z.map(|z| {
        let mut out = Array2::<f64>::zeros((n, n));
        for (dst, &src) in order.iter().enumerate() {
            out.column_mut(dst).assign(&z.column(src));
        }
        out
    });
    Ok((sorted, vectors))
}

/// All eigenvalues of a complex upper-Hessenberg matrix by single-shift
/// QR iteration with Wilkinson shifts, sorted ascending by real part then
/// imaginary part.
pub(crate) fn hessenberg_eigenvalues(mut h: Array2<Complex64>) -> Result<Vec<Complex64>> {
    let n = h.nrows();
    assert_eq!(n, h.ncols(), "eigenvalue solver requires a square matrix");
    if n == 0 {
        return Ok(Vec::new());
    }

    let overall = one_norm(&h).max(f64::MIN_POSITIVE);
    let mut evals: Vec<Complex64> = Vec::with_capacity(n);
    let mut hi = n;
    let mut its = 0usize;
    let mut total = 0usize;
    let budget = 60 * n.max(4);

    while hi > 0 {
        if hi == 1 {
            evals.push(h[[0, 0]]);
            break;
        }

        // Deflation scan from the bottom of the active block.
        let mut lo = 0;
        for m in (1..hi).rev() {
            let sub = h[[m, m - 1]].norm();
            let mut scale = h[[m - 1, m - 1]].norm() + h[[m, m]].norm();
            if scale == 0.0 {
                scale = overall;
            }
            if sub <= f64::EPSILON * scale {
                h[[m, m - 1]] = Complex64::new(0.0, 0.0);
                lo = m;
                break;
            }
        }
        if lo == hi - 1 {
            evals.push(h[[hi - 1, hi - 1]]);
            hi -= 1;
            its = 0;
            continue;
        }

        total += 1;
        its += 1;
        if total > budget {
            return Err(Error::EigenNonConvergence(format!(
                "complex QR exceeded {budget} sweeps on a {n}x{n} matrix \
                 (active block {lo}..{hi})"
            )));
        }

        let shift = if its % 10 == 0 {
            // Exceptional shift to break rare cycling on symmetric spectra.
            h[[hi - 1, hi - 1]] + Complex64::new(0.75 * h[[hi - 1, hi - 2]].norm(), 0.0)
        } else {
            wilkinson_shift(
                h[[hi - 2, hi - 2]],
                h[[hi - 2, hi - 1]],
                h[[hi - 1, hi - 2]],
                h[[hi - 1, hi - 1]],
            )
        };

        // Implicit single-shift sweep over the active block.
        let mut x = h[[lo, lo]] - shift;
        let mut y = h[[lo + 1, lo]];
        for k in lo..hi - 1 {
            let (c, s) = givens(x, y);
            let col_start = if k > lo { k - 1 } else { lo };
            for j in col_start..hi {
                let a = h[[k, j]];
                let b = h[[k + 1, j]];
                h[[k, j]] = a * c + s * b;
                h[[k + 1, j]] = -s.conj() * a + b * c;
            }
            if k > lo {
                // The rotation annihilates the bulge below the subdiagonal.
                h[[k + 1, k - 1]] = Complex64::new(0.0, 0.0);
            }
            let row_end = (k + 3).min(hi);
            for i in lo..row_end {
                let a = h[[i, k]];
                let b = h[[i, k + 1]];
                h[[i, k]] = a * c + s.conj() * b;
                h[[i, k + 1]] = -s * a + b * c;
            }
            if k + 2 < hi {
                x = h[[k + 1, k]];
                y = h[[k + 2, k]];
            }
        }
    }

    evals.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(evals)
}

/// Givens rotation [[c, s], [-conj(s), c]] with real c that maps (v1, v2)
/// to (r, 0).
fn givens(v1: Complex64, v2: Complex64) -> (f64, Complex64) {
    let a1 = v1.norm();
    let a2 = v2.norm();
    if a2 == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if a1 == 0.0 {
        return (0.0, v2.conj() / a2);
    }
    let scale = a1.max(a2);
    let n1 = a1 / scale;
    let n2 = a2 / scale;
    let nrm = scale * (n1 * n1 + n2 * n2).sqrt();
    let c = a1 / nrm;
    let s = (v1 / a1) * (v2.conj() / nrm);
    (c, s)
}

/// Eigenvalue of [[a, b], [c, d]] closest to d.
fn wilkinson_shift(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Complex64 {
    let tr_half = (a + d) * 0.5;
    let diff_half = (a - d) * 0.5;
    let disc = (diff_half * diff_half + b * c).sqrt();
    let l1 = tr_half + disc;
    let l2 = tr_half - disc;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Degree-13 Padé numerator/denominator coefficients (Higham, eq. 10.33;
/// the coefficients are exact integers).
const PADE13_COEFFS: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the unscaled Padé(13) approximant is
/// backward stable (Higham, Table 10.2).
const PADE13_THETA: f64 = 5.371_920_351_148_152;

/// Matrix exponential exp(A) by scaling and squaring with Padé(13).
pub(crate) fn expm(a: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    if n == 0 {
        return Ok(Array2::zeros((0, 0)));
    }
    if n == 1 {
        let mut out = Array2::zeros((1, 1));
        out[[0, 0]] = a[[0, 0]].exp();
        return Ok(out);
    }

    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(Error::Expm(format!("matrix 1-norm is {norm}")));
    }
    let squarings: u32 = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as u32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings as i32);
    let a = a.mapv(|z| z * scale);

    let eye = Array2::<Complex64>::eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let b = &PADE13_COEFFS;

    let w1 = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let w = a6.dot(&w1) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &eye * b[1];
    let u = a.dot(&w);
    let v1 = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = a6.dot(&v1) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &eye * b[0];

    let numer = &v + &u;
    let denom = &v - &u;
    let mut x = lu_solve(denom, numer)?;
    for _ in 0..squarings {
        x = x.dot(&x);
    }
    Ok(x)
}

/// Solve A X = B by LU with partial pivoting; A and B are consumed.
fn lu_solve(mut a: Array2<Complex64>, mut b: Array2<Complex64>) -> Result<Array2<Complex64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.nrows());
    let m = b.ncols();

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = a[[col, col]].norm();
        for row in col + 1..n {
            let mag = a[[row, col]].norm();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = row;
            }
        }
        if pivot_mag == 0.0 {
            return Err(Error::Expm(format!(
                "singular Padé denominator (pivot {col} of {n} vanished)"
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap([col, j], [pivot_row, j]);
            }
            for j in 0..m {
                b.swap([col, j], [pivot_row, j]);
            }
        }
        let pivot = a[[col, col]];
        for row in col + 1..n {
            let factor = a[[row, col]] / pivot;
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in col + 1..n {
                let v = a[[col, j]];
                a[[row, j]] -= factor * v;
            }
            for j in 0..m {
                let v = b[[col, j]];
                b[[row, j]] -= factor * v;
            }
        }
    }

    let mut x = Array2::<Complex64>::zeros((n, m));
    for col in (0..n).rev() {
        let pivot = a[[col, col]];
        for j in 0..m {
            let mut sum = b[[col, j]];
            for k in col + 1..n {
                sum -= a[[col, k]] * x[[k, j]];
            }
            x[[col, j]] = sum / pivot;
        }
    }
    Ok(x)
}

/// Maximum column sum of moduli.
pub(crate) fn one_norm(a: &Array2<Complex64>) -> f64 {
    let mut max = 0.0f64;
    for col in a.columns() {
        let sum: f64 = col.iter().map(|z| z.norm()).sum();
        max = max.max(sum);
    }
    max
}
