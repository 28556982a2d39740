//! Dense complex matrix helpers: operator norms, the matrix exponential, and
//! the exponential step integral used by the mild-solution integrator.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`; every symbol value and
//! propagator block in this crate is one of these. Dimensions are tiny (the
//! vector dimension of the system, typically 1 to 4), so the routines favor
//! clarity and reproducibility over asymptotic speed.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Which vector norm the operator norm is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum VectorNorm {
    /// Sum of absolute values.
    L1,
    /// Euclidean norm.
    L2,
    /// Max absolute value.
    LInf,
}

impl VectorNorm {
    pub fn from_q(q: f64) -> Result<Self> {
        if q == 1.0 {
            Ok(VectorNorm::L1)
        } else if q == 2.0 {
            Ok(VectorNorm::L2)
        } else if q.is_infinite() && q > 0.0 {
            Ok(VectorNorm::LInf)
        } else {
            Err(Error::invalid(format!("x_norm_q must be 1, 2, or inf, got {q}")))
        }
    }

    /// Norm of a complex vector given as a slice.
    pub fn vector_norm(&self, v: &[Complex64]) -> f64 {
        match self {
            VectorNorm::L1 => v.iter().map(|z| z.norm()).sum(),
            VectorNorm::L2 => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
            VectorNorm::LInf => v.iter().map(|z| z.norm()).fold(0.0, f64::max),
        }
    }

    /// Hoelder conjugate exponent, defining the dual vector norm.
    pub fn dual(&self) -> VectorNorm {
        match self {
            VectorNorm::L1 => VectorNorm::LInf,
            VectorNorm::L2 => VectorNorm::L2,
            VectorNorm::LInf => VectorNorm::L1,
        }
    }

    pub fn exponent(&self) -> f64 {
        match self {
            VectorNorm::L1 => 1.0,
            VectorNorm::L2 => 2.0,
            VectorNorm::LInf => f64::INFINITY,
        }
    }
}

/// Operator norm of `a` acting on (C^n, q-norm).
///
/// q = 1 and q = inf reduce to the max column and row sums. q = 2 is the
/// largest singular value, computed by power iteration on A* A with a
/// deterministic start vector and relative tolerance 1e-12.
pub fn operator_norm(a: &CMatrix, q: VectorNorm) -> f64 {
    match q {
        VectorNorm::L1 => (0..a.ncols())
            .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max),
        VectorNorm::LInf => (0..a.nrows())
            .map(|i| a.row(i).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max),
        VectorNorm::L2 => spectral_norm(a),
    }
}

/// Largest singular value by power iteration on the Gram matrix.
fn spectral_norm(a: &CMatrix) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    let frob = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if frob == 0.0 {
        return 0.0;
    }
    let gram = a.adjoint() * a;
    // Deterministic start with all components populated so no eigenvector is
    // exactly orthogonal to it in common cases; a basis sweep guards the rest.
    let mut v = nalgebra::DVector::<Complex64>::from_fn(n, |i, _| {
        Complex64::new(1.0 + (i as f64 + 1.0) * 0.01, 0.0)
    });
    v /= Complex64::new(v.norm(), 0.0);
    let mut sigma_sq = 0.0_f64;
    for _ in 0..500 {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        let next = norm;
        v = w / Complex64::new(norm, 0.0);
        if (next - sigma_sq).abs() <= 1e-12 * next.max(1.0) {
            sigma_sq = next;
            break;
        }
        sigma_sq = next;
    }
    // The Rayleigh quotient of the Gram matrix converges to sigma_max^2.
    let refined = (&gram * &v).dot(&v).re.max(0.0);
    refined.max(sigma_sq).sqrt().min(frob)
}

/// One-norm of a matrix (max column sum), the scaling measure for the
/// exponential.
fn one_norm(a: &CMatrix) -> f64 {
    operator_norm(a, VectorNorm::L1)
}

/// Pade-13 coefficients for the matrix exponential.
const PADE13: [f64; 14] = [
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

/// Largest one-norm for which the degree-13 Pade approximant meets unit
/// roundoff without scaling.
const THETA13: f64 = 5.371_920_351_148_152;

/// Matrix exponential by scaling and squaring with a degree-13 Pade
/// approximant.
///
/// Backward error is at unit-roundoff scale (~1e-13 relative for the sizes
/// used here). Inputs so large that exp would overflow are rejected; callers
/// rescale time instead.
pub fn matrix_exp(a: &CMatrix) -> Result<CMatrix> {
    assert_eq!(a.nrows(), a.ncols(), "matrix_exp requires a square matrix");
    let n = a.nrows();
    let norm = one_norm(a);
    if !norm.is_finite() || norm > 1.0e4 * (f64::MAX.ln()) {
        return Err(Error::numerical(format!(
            "matrix_exp norm {norm:.3e} too large; rescale the time step"
        )));
    }

    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a * Complex64::new((0.5f64).powi(squarings as i32), 0.0);

    let ident = CMatrix::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let b = |k: usize| Complex64::new(PADE13[k], 0.0);
    let u_inner = &a6 * (&a6 * b(13) + &a4 * b(11) + &a2 * b(9))
        + &a6 * b(7)
        + &a4 * b(5)
        + &a2 * b(3)
        + &ident * b(1);
    let u = &scaled * u_inner;
    let v: CMatrix = &a6 * (&a6 * b(12) + &a4 * b(10) + &a2 * b(8))
        + &a6 * b(6)
        + &a4 * b(4)
        + &a2 * b(2)
        + &ident * b(0);

    let vm_u = &v - &u;
    let vp_u = &v + &u;
    let mut exp = vm_u
        .lu()
        .solve(&vp_u)
        .ok_or_else(|| Error::numerical("Pade denominator is singular".to_string()))?;

    for _ in 0..squarings {
        exp = &exp * &exp;
    }
    Ok(exp)
}

/// Step integral J(h) = int_0^h exp(-s A) ds for the exponential integrator.
///
/// Equals A^{-1}(I - exp(-h A)) when A is invertible; that closed form is
/// used when the LU factorization is comfortably nonsingular. Otherwise the
/// series h * sum_j (-h A)^j / (j+1)! is summed to tolerance 1e-13, with
/// argument halving and the doubling identity J(2h) = (I + exp(-h A)) J(h)
/// so the series only ever runs in its fast-converging regime.
pub fn step_integral(a: &CMatrix, h: f64) -> Result<CMatrix> {
    assert_eq!(a.nrows(), a.ncols(), "step_integral requires a square matrix");
    let n = a.nrows();
    if h <= 0.0 {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let scale = one_norm(a).max(1e-300);
    let lu = a.clone().lu();
    let min_pivot = (0..n)
        .map(|i| lu.u()[(i, i)].norm())
        .fold(f64::INFINITY, f64::min);
    if min_pivot > 1e-8 * scale {
        let e = matrix_exp(&(a * Complex64::new(-h, 0.0)))?;
        let rhs = CMatrix::identity(n, n) - e;
        if let Some(x) = lu.solve(&rhs) {
            return Ok(x);
        }
    }
    step_integral_series(a, h)
}

fn step_integral_series(a: &CMatrix, h: f64) -> Result<CMatrix> {
    let n = a.nrows();
    let norm = one_norm(a);
    // Halve h until the series argument is small, then double back up.
    let mut halvings = 0u32;
    let mut hs = h;
    while hs * norm > 0.5 && halvings < 200 {
        hs *= 0.5;
        halvings += 1;
    }
    let m = a * Complex64::new(-hs, 0.0);
    let mut term = CMatrix::identity(n, n);
    let mut sum = term.clone();
    for j in 1..64 {
        term = (&term * &m) * Complex64::new(1.0 / (j as f64 + 1.0), 0.0);
        sum += &term;
        if one_norm(&term) <= 1e-13 * one_norm(&sum) {
            break;
        }
    }
    let mut j = sum * Complex64::new(hs, 0.0);
    if halvings > 0 {
        let mut e = matrix_exp(&m)?;
        for _ in 0..halvings {
            j = (CMatrix::identity(n, n) + &e) * &j;
            e = &e * &e;
        }
    }
    Ok(j)
}

/// Eigenvalues of a small complex matrix.
///
/// Coefficients of the characteristic polynomial come from the
/// Faddeev-LeVerrier recursion; roots are then polished with the
/// Durand-Kerner simultaneous iteration. Accuracy degrades near defective
/// eigenvalues, which is acceptable for the spectral screens this backs.
pub fn eigenvalues(a: &CMatrix) -> Vec<Complex64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigenvalues requires a square matrix");
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![a[(0, 0)]];
    }
    // char(z) = z^n + c[n-1] z^{n-1} + ... + c[0]
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
    let mut m = a.clone();
    for k in 1..=n {
        let trace: Complex64 = (0..n).map(|i| m[(i, i)]).sum();
        let ck = -trace / Complex64::new(k as f64, 0.0);
        coeffs[n - k] = ck;
        if k < n {
            let shifted = &m + CMatrix::identity(n, n) * ck;
            m = a * shifted;
        }
    }
    durand_kerner(&coeffs)
}

/// Roots of z^n + c[n-1] z^{n-1} + ... + c[0].
fn durand_kerner(coeffs: &[Complex64]) -> Vec<Complex64> {
    let n = coeffs.len();
    let radius = 1.0
        + coeffs
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
    let mut roots: Vec<Complex64> = (0..n)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4;
            Complex64::from_polar(radius.max(0.5) * 0.7, angle)
        })
        .collect();
    let eval = |z: Complex64| -> Complex64 {
        let mut p = Complex64::new(1.0, 0.0);
        for c in coeffs.iter().rev() {
            p = p * z + c;
        }
        p
    };
    for _ in 0..200 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() < 1e-300 {
                continue;
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-13 * radius.max(1.0) {
            break;
        }
    }
    roots
}

/// Faithful monomial-sum evaluation of exp via its Taylor series with exact
/// scaling, for use as an independent oracle in tests of diagonal cases.
pub fn exp_scalar(z: Complex64) -> Complex64 {
    z.exp()
}
