//! Spectral inequality probes: thick-set sampling ratios, the Bernstein
//! derivative bound with a concrete constant, the good/bad cube partition,
//! and a Remez-type lower bound for polynomials on subsets of an interval.
//!
//! The sampling inequality under test states that a (rho, L)-thick set E
//! captures a definite fraction of any band-limited field:
//! ||1_E f||_p >= (rho/K)^{K(d + L.lambda)} ||f||_p for some universal K.
//! The probes here measure the left side on ensembles, fit the smallest
//! admissible K, and verify the supporting machinery (Bernstein bounds,
//! cube classification, Remez ratios) with explicit constants.

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::Serialize;

use crate::bump::{gauss_legendre, plateau};
use crate::error::{Error, Result};
use crate::grid::{conjugate_exponent, Exponent, SpectralField};
use crate::linalg::VectorNorm;
use crate::thick::ThickSet;

/// Largest K the fit will consider before giving up.
const K_FIT_CAP: f64 = 1.0e6;

/// One sampling-ratio measurement against a certified thick set.
#[derive(Debug, Clone, Serialize)]
pub struct LSProbeResult {
    /// ||1_E f||_p / ||f||_p.
    pub ratio: f64,
    pub rho: f64,
    pub ell: Vec<f64>,
    pub lambda: Vec<f64>,
    pub dim: usize,
    pub lp: Exponent,
    /// Smallest K >= 1 with ratio >= bound(K).
    pub fitted_k: f64,
}

impl LSProbeResult {
    /// (rho/K)^{K(d + L.lambda)}, evaluated in log space.
    pub fn bound(&self, k: f64) -> f64 {
        let factor = self.dim as f64
            + self.ell.iter().zip(self.lambda.iter()).map(|(l, w)| l * w).sum::<f64>();
        (k * factor * (self.rho / k).ln()).exp()
    }

    fn fit_k(&self) -> f64 {
        if self.ratio >= self.bound(1.0) {
            return 1.0;
        }
        if self.ratio < self.bound(K_FIT_CAP) {
            return f64::INFINITY;
        }
        // bound(K) is strictly decreasing for K >= 1 since rho <= 1.
        let (mut lo, mut hi) = (1.0f64, K_FIT_CAP);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.ratio >= self.bound(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

/// Measures ||1_E f||_p / ||f||_p for one band-limited field.
pub fn ls_ratio(f: &SpectralField, set: &ThickSet) -> Result<LSProbeResult> {
    if set.grid() != f.grid() {
        return Err(Error::invalid("field and set live on different grids".to_string()));
    }
    let lambda = f
        .band()
        .ok_or_else(|| Error::invalid("field carries no band certificate".to_string()))?
        .to_vec();
    let cert = set
        .certified()
        .ok_or_else(|| Error::invalid("set carries no thickness certificate".to_string()))?
        .clone();
    let total = f.lp_norm();
    if total == 0.0 {
        return Err(Error::invalid("sampling ratio of the zero field is undefined".to_string()));
    }
    let masked = f.masked_lp_norm(Some(set.indicator()), f.grid().lp);
    let mut result = LSProbeResult {
        ratio: masked / total,
        rho: cert.rho,
        ell: cert.ell.clone(),
        lambda,
        dim: f.grid().dim,
        lp: Exponent(f.grid().lp),
        fitted_k: f64::NAN,
    };
    result.fitted_k = result.fit_k();
    Ok(result)
}

/// Ensemble summary over random band-limited fields.
#[derive(Debug, Clone, Serialize)]
pub struct LSEnsemble {
    pub rows: Vec<LSProbeResult>,
    pub min_ratio: f64,
    pub max_fitted_k: f64,
}

/// Runs ls_ratio over `count` random band-limited fields on the set's grid.
pub fn ls_ensemble(set: &ThickSet, lambda: &[f64], count: usize, seed: u64) -> Result<LSEnsemble> {
    if count == 0 {
        return Err(Error::invalid("ensemble needs at least one sample".to_string()));
    }
    let mut rows = Vec::with_capacity(count);
    for k in 0..count {
        let f = SpectralField::random_band_limited(*set.grid(), lambda, seed, k as u64)?;
        rows.push(ls_ratio(&f, set)?);
    }
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_fitted_k = rows.iter().map(|r| r.fitted_k).fold(0.0, f64::max);
    Ok(LSEnsemble { rows, min_ratio, max_fitted_k })
}

/// One Bernstein inequality measurement.
#[derive(Debug, Clone, Serialize)]
pub struct BernsteinRecord {
    pub alpha: Vec<usize>,
    /// ||d^alpha f||_p.
    pub lhs: f64,
    /// C_2^{|alpha|} lambda^alpha ||f||_p.
    pub rhs: f64,
    pub pass: bool,
    /// (lambda/2)^alpha ||f||_2, present for p = 2.
    pub sharp_rhs: Option<f64>,
    pub sharp_pass: Option<bool>,
}

/// Checks ||d^alpha f||_p <= C_2^{|alpha|} lambda^alpha ||f||_p, plus the
/// sharp Parseval variant with constant (lambda/2)^alpha when p = 2.
pub fn bernstein_check(f: &SpectralField, alpha: &[usize]) -> Result<BernsteinRecord> {
    let grid = *f.grid();
    if alpha.len() != grid.dim {
        return Err(Error::invalid("derivative order has wrong dimension".to_string()));
    }
    let lambda = f
        .band()
        .ok_or_else(|| Error::invalid("field carries no band certificate".to_string()))?
        .to_vec();
    let total = f.lp_norm();
    if total == 0.0 {
        return Err(Error::invalid("Bernstein check of the zero field is undefined".to_string()));
    }
    let c2 = compute_c2();
    let lhs = f.spectral_derivative(alpha)?.lp_norm();
    let order: usize = alpha.iter().sum();
    let lambda_pow: f64 = lambda
        .iter()
        .zip(alpha.iter())
        .map(|(l, &a)| l.powi(a as i32))
        .product();
    let rhs = c2.powi(order as i32) * lambda_pow * total;
    let (sharp_rhs, sharp_pass) = if grid.lp == 2.0 {
        let sharp: f64 = lambda
            .iter()
            .zip(alpha.iter())
            .map(|(l, &a)| (l / 2.0).powi(a as i32))
            .product::<f64>()
            * total;
        (Some(sharp), Some(lhs <= sharp * (1.0 + 1.0e-10)))
    } else {
        (None, None)
    };
    Ok(BernsteinRecord {
        alpha: alpha.to_vec(),
        lhs,
        rhs,
        pass: lhs <= rhs * (1.0 + 1.0e-12),
        sharp_rhs,
        sharp_pass,
    })
}

/// The Bernstein constant: the L^1 norm of the derivative of the inverse
/// transform of the fixed 1-D plateau profile. Cached after first use.
pub fn compute_c2() -> f64 {
    static C2: OnceLock<f64> = OnceLock::new();
    *C2.get_or_init(|| c2_quadrature(80, 0.05, 32, 600.0))
}

/// Quadrature for C_2 at explicit resolution, for convergence studies.
///
/// The kernel derivative is g(x) = -(1/pi) int_0^1 xi phi(xi) sin(x xi) dxi
/// (odd extension of the plateau makes this the full line transform), and
/// C_2 = 2 int_0^infty |g|. The inner integral uses a fixed composite
/// Gauss-Legendre rule; the outer integral brackets every sign change of g
/// by bisection and integrates each single-signed segment exactly.
pub fn c2_quadrature(inner_panels: usize, scan_step: f64, outer_order: usize, x_max: f64) -> f64 {
    let (nodes16, weights16) = gauss_legendre(16);
    let mut xi_nodes = Vec::with_capacity(inner_panels * 16);
    let mut xi_weights = Vec::with_capacity(inner_panels * 16);
    for panel in 0..inner_panels {
        let a = panel as f64 / inner_panels as f64;
        let b = (panel + 1) as f64 / inner_panels as f64;
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (n, w) in nodes16.iter().zip(weights16.iter()) {
            let xi = mid + half * n;
            xi_nodes.push(xi);
            xi_weights.push(w * half * xi * plateau(xi));
        }
    }
    let g = |x: f64| -> f64 {
        let mut acc = 0.0;
        for (xi, w) in xi_nodes.iter().zip(xi_weights.iter()) {
            acc += w * (x * xi).sin();
        }
        -acc / std::f64::consts::PI
    };

    let mut breakpoints = vec![0.0f64];
    let steps = (x_max / scan_step).ceil() as usize;
    let mut prev_x = 0.0f64;
    let mut prev_g = 0.0f64;
    for i in 1..=steps {
        let x = (i as f64 * scan_step).min(x_max);
        let gx = g(x);
        if prev_g != 0.0 && gx != 0.0 && prev_g.signum() != gx.signum() {
            let (mut lo, mut hi) = (prev_x, x);
            let mut glo = prev_g;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let gm = g(mid);
                if gm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if glo.signum() == gm.signum() {
                    lo = mid;
                    glo = gm;
                } else {
                    hi = mid;
                }
            }
            breakpoints.push(0.5 * (lo + hi));
        }
        prev_x = x;
        prev_g = gx;
    }
    breakpoints.push(x_max);

    let (outer_nodes, outer_weights) = gauss_legendre(outer_order);
    let mut total = 0.0;
    for seg in breakpoints.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if b <= a {
            continue;
        }
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut seg_integral = 0.0;
        for (n, w) in outer_nodes.iter().zip(outer_weights.iter()) {
            seg_integral += w * g(mid + half * n);
        }
        total += (seg_integral * half).abs();
    }
    2.0 * total
}

/// Smallest admissible cube parameter: A must exceed u/(u-1) with
/// u = (2^d + 1)^{1/d}.
pub fn cube_threshold(dim: usize) -> f64 {
    let u = ((1u64 << dim) as f64 + 1.0).powf(1.0 / dim as f64);
    u / (u - 1.0)
}

/// Good-cube mass constant: 1 - (2^{-d} [(1 - 1/A)^{-d} - 1])^{1/p} for
/// finite p, and 1 for p = infinity (the sup is attained on a good cube).
pub fn c3_constant(a: f64, dim: usize, p: f64) -> f64 {
    if p.is_infinite() {
        return 1.0;
    }
    let bracket = ((1.0 - 1.0 / a).powi(-(dim as i32)) - 1.0) / (1u64 << dim) as f64;
    1.0 - bracket.powf(1.0 / p)
}

/// Verdict for one unit cube of the torus.
#[derive(Debug, Clone, Serialize)]
pub struct CubeClassification {
    /// Per-axis cube index, one unit cube per integer point.
    pub cube: Vec<usize>,
    pub good: bool,
    /// Multi-index achieving the largest criterion ratio, with that ratio.
    pub worst_alpha: Vec<usize>,
    pub worst_ratio: f64,
    pub alpha_max: usize,
    /// True when the geometric tail over |alpha| > alpha_max provably
    /// cannot flip this cube to bad.
    pub tail_conclusive: bool,
}

/// All multi-indices in `dim` axes with 1 <= |alpha| <= max_total.
fn multi_indices(dim: usize, max_total: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = vec![vec![0usize; dim]];
    for _ in 0..max_total {
        let mut next = Vec::new();
        for alpha in &stack {
            for axis in 0..dim {
                let mut grown = alpha.clone();
                grown[axis] += 1;
                next.push(grown);
            }
        }
        next.sort();
        next.dedup();
        out.extend(next.iter().cloned());
        stack = next;
    }
    out.sort();
    out.dedup();
    out
}

struct CubePartition {
    cubes_per_axis: usize,
    cells: usize,
    /// Linear cube index for every site.
    site_cube: Vec<usize>,
}

fn cube_partition(f: &SpectralField) -> Result<CubePartition> {
    let grid = f.grid();
    let q_int = grid.period.round();
    if (grid.period - q_int).abs() > 1.0e-9 || q_int < 1.0 {
        return Err(Error::invalid(format!(
            "unit cubes require an integer torus period, got {}",
            grid.period
        )));
    }
    let q_int = q_int as usize;
    if grid.points % q_int != 0 {
        return Err(Error::invalid("grid points must be a multiple of the period".to_string()));
    }
    let ppu = grid.points / q_int;
    if ppu % 2 != 0 {
        return Err(Error::invalid(
            "unit cubes need an even number of cells per unit so cube edges fall on half-integers"
                .to_string(),
        ));
    }
    let d = grid.dim;
    let mut site_cube = vec![0usize; grid.num_sites()];
    for (site, slot) in site_cube.iter_mut().enumerate() {
        let coords = grid.decode(site);
        let mut linear = 0usize;
        for axis in 0..d {
            let k = ((coords[axis] + ppu / 2) / ppu) % q_int;
            linear = linear * q_int + k;
        }
        *slot = linear;
    }
    Ok(CubePartition { cubes_per_axis: q_int, cells: q_int.pow(d as u32), site_cube })
}

/// Per-cube L^p norms of a field under a site-to-cube assignment.
fn cube_norms(f: &SpectralField, part: &CubePartition) -> Vec<f64> {
    let grid = f.grid();
    let p = grid.lp;
    let mut acc = vec![0.0f64; part.cells];
    if p.is_infinite() {
        for site in 0..grid.num_sites() {
            let n = f.site_norm(site);
            let k = part.site_cube[site];
            if n > acc[k] {
                acc[k] = n;
            }
        }
        acc
    } else {
        let vol = grid.cell_volume();
        for site in 0..grid.num_sites() {
            acc[part.site_cube[site]] += vol * f.site_norm(site).powf(p);
        }
        acc.iter().map(|s| s.powf(1.0 / p)).collect()
    }
}

/// Classifies every unit cube as good or bad for the derivative-growth
/// criterion ||1_k d^alpha f||_p >= 2^d A^{|alpha|} (C_2 lambda)^alpha
/// ||1_k f||_p, checked for all 0 < |alpha| <= alpha_max with the remaining
/// tail bounded by the global Bernstein series.
pub fn classify_cubes(
    f: &SpectralField,
    a: f64,
    alpha_max: usize,
) -> Result<Vec<CubeClassification>> {
    let grid = *f.grid();
    let d = grid.dim;
    let threshold = cube_threshold(d);
    if !(a > threshold) {
        return Err(Error::invalid(format!(
            "cube parameter A = {a} must exceed {threshold} in dimension {d}"
        )));
    }
    if alpha_max == 0 {
        return Err(Error::invalid("alpha_max must be at least 1".to_string()));
    }
    let lambda = f
        .band()
        .ok_or_else(|| Error::invalid("field carries no band certificate".to_string()))?
        .to_vec();
    let part = cube_partition(f)?;
    let c2 = compute_c2();
    let base_mass = cube_norms(f, &part);
    let total = f.lp_norm();

    let alphas = multi_indices(d, alpha_max);
    let two_d = (1u64 << d) as f64;
    let mut worst_ratio = vec![0.0f64; part.cells];
    let mut worst_alpha = vec![vec![0usize; d]; part.cells];
    for alpha in &alphas {
        let deriv = f.spectral_derivative(alpha)?;
        let masses = cube_norms(&deriv, &part);
        let order: usize = alpha.iter().sum();
        let weight: f64 = lambda
            .iter()
            .zip(alpha.iter())
            .map(|(l, &ai)| (c2 * l).powi(ai as i32))
            .product();
        let scale = two_d * a.powi(order as i32) * weight;
        for k in 0..part.cells {
            let rhs = scale * base_mass[k];
            let ratio = if rhs > 0.0 {
                masses[k] / rhs
            } else if masses[k] > 0.0 {
                f64::INFINITY
            } else {
                // Both sides vanish; the criterion "lhs >= rhs" holds.
                f64::INFINITY
            };
            if ratio > worst_ratio[k] {
                worst_ratio[k] = ratio;
                worst_alpha[k] = alpha.clone();
            }
        }
    }

    let tail_factor = two_d * a.powi(alpha_max as i32 + 1);
    let mut out = Vec::with_capacity(part.cells);
    for k in 0..part.cells {
        let mut cube = vec![0usize; d];
        let mut rem = k;
        for axis in (0..d).rev() {
            cube[axis] = rem % part.cubes_per_axis;
            rem /= part.cubes_per_axis;
        }
        out.push(CubeClassification {
            cube,
            good: worst_ratio[k] < 1.0,
            worst_alpha: worst_alpha[k].clone(),
            worst_ratio: worst_ratio[k],
            alpha_max,
            tail_conclusive: tail_factor * base_mass[k] > total,
        });
    }
    Ok(out)
}

/// ||1_{union of good cubes} f||_p, with the verdicts from [`classify_cubes`].
pub fn good_cube_mass(
    f: &SpectralField,
    verdicts: &[CubeClassification],
    p: f64,
) -> Result<f64> {
    let part = cube_partition(f)?;
    if verdicts.len() != part.cells {
        return Err(Error::invalid(format!(
            "expected {} cube verdicts, got {}",
            part.cells,
            verdicts.len()
        )));
    }
    let good: Vec<bool> = (0..f.grid().num_sites())
        .map(|site| verdicts[part.site_cube[site]].good)
        .collect();
    Ok(f.masked_lp_norm(Some(&good), p))
}

/// Searches a good cube for a sample point satisfying the pointwise bound
/// ||d^alpha f(x)|| <= 4^d B^{|alpha|} (C_2 lambda)^alpha ||1_k f||_p for
/// all |alpha| <= alpha_max. Returns false when no grid sample qualifies.
pub fn good_cube_point_bound(
    f: &SpectralField,
    cube: &[usize],
    b: f64,
    alpha_max: usize,
) -> Result<bool> {
    let grid = *f.grid();
    let d = grid.dim;
    if cube.len() != d {
        return Err(Error::invalid("cube index has wrong dimension".to_string()));
    }
    if !(b > 0.0) {
        return Err(Error::invalid("point-bound parameter B must be positive".to_string()));
    }
    let lambda = f
        .band()
        .ok_or_else(|| Error::invalid("field carries no band certificate".to_string()))?
        .to_vec();
    let part = cube_partition(f)?;
    for (axis, &k) in cube.iter().enumerate() {
        if k >= part.cubes_per_axis {
            return Err(Error::invalid(format!(
                "cube index {k} out of range on axis {axis} (period {})",
                part.cubes_per_axis
            )));
        }
    }
    let mut linear = 0usize;
    for &k in cube {
        linear = linear * part.cubes_per_axis + k;
    }
    let c2 = compute_c2();
    let mass = cube_norms(f, &part)[linear];
    let four_d = (1u64 << (2 * d)) as f64;

    let mut alphas = vec![vec![0usize; d]];
    alphas.extend(multi_indices(d, alpha_max));
    let mut derivs = Vec::with_capacity(alphas.len());
    for alpha in &alphas {
        let order: usize = alpha.iter().sum();
        let weight: f64 = lambda
            .iter()
            .zip(alpha.iter())
            .map(|(l, &ai)| (c2 * l).powi(ai as i32))
            .product();
        let cap = four_d * b.powi(order as i32) * weight * mass;
        derivs.push((f.spectral_derivative(alpha)?, cap));
    }
    'site: for site in 0..grid.num_sites() {
        if part.site_cube[site] != linear {
            continue;
        }
        for (deriv, cap) in &derivs {
            if deriv.site_norm(site) > *cap {
                continue 'site;
            }
        }
        return Ok(true);
    }
    Ok(false)
}

/// Remez-type probe result for a polynomial restricted to [0, 1].
#[derive(Debug, Clone, Serialize)]
pub struct RemezResult {
    /// Smallest C_1 making sup_A ||f|| >= (|A|/C_1)^{ln M / ln 2} sup_I ||f||.
    pub fitted_c1: f64,
    /// sup_A ||f|| / sup_I ||f||.
    pub ratio: f64,
    /// Disc bound M = sup over |z| = 5 after normalizing sup_I to 1.
    pub m_bound: f64,
    /// |A|, the measure of the sub-union.
    pub measure: f64,
    /// ln M / ln 2.
    pub exponent: f64,
}

fn poly_eval(coeffs: &[Vec<Complex64>], z: Complex64) -> Vec<Complex64> {
    let n = coeffs[0].len();
    let mut acc = coeffs.last().unwrap().clone();
    for c in coeffs.iter().rev().skip(1) {
        for i in 0..n {
            acc[i] = acc[i] * z + c[i];
        }
    }
    acc
}

/// Fits the smallest Remez constant for one polynomial and one union of
/// subintervals A of I = [0, 1].
///
/// The disc bound comes from 4096 boundary samples of |z| = 5 and the
/// maximum principle; suprema on I and A come from dense sampling.
pub fn remez_probe(
    coeffs: &[Vec<Complex64>],
    x_norm: VectorNorm,
    a_sub: &[(f64, f64)],
) -> Result<RemezResult> {
    if coeffs.is_empty() || coeffs[0].is_empty() {
        return Err(Error::invalid("polynomial needs at least one coefficient".to_string()));
    }
    let n = coeffs[0].len();
    if coeffs.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("coefficient vectors must share one length".to_string()));
    }
    if a_sub.is_empty() {
        return Err(Error::invalid("subset A must contain an interval".to_string()));
    }
    let mut intervals: Vec<(f64, f64)> = a_sub.to_vec();
    for &(a, b) in &intervals {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || b <= a {
            return Err(Error::invalid(format!(
                "subinterval [{a}, {b}] must satisfy 0 <= a < b <= 1"
            )));
        }
    }
    intervals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut measure = 0.0;
    let mut reach = -1.0f64;
    for &(a, b) in &intervals {
        let lo = a.max(reach);
        if b > lo {
            measure += b - lo;
            reach = b;
        }
    }
    if measure <= 0.0 {
        return Err(Error::invalid("subset A has measure zero".to_string()));
    }

    let norm_at = |z: Complex64| -> f64 { x_norm.vector_norm(&poly_eval(coeffs, z)) };
    const DENSE: usize = 4096;
    let mut sup_i = 0.0f64;
    for i in 0..DENSE {
        let x = i as f64 / (DENSE - 1) as f64;
        sup_i = sup_i.max(norm_at(Complex64::new(x, 0.0)));
    }
    if sup_i == 0.0 {
        return Err(Error::invalid("polynomial vanishes identically on [0, 1]".to_string()));
    }
    let mut sup_disc = 0.0f64;
    for i in 0..DENSE {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / DENSE as f64;
        sup_disc = sup_disc.max(norm_at(Complex64::from_polar(5.0, theta)));
    }
    let mut sup_a = 0.0f64;
    for &(a, b) in &intervals {
        let count = ((b - a) * DENSE as f64).ceil().max(64.0) as usize;
        for i in 0..=count {
            let x = a + (b - a) * i as f64 / count as f64;
            sup_a = sup_a.max(norm_at(Complex64::new(x, 0.0)));
        }
    }

    let m_bound = (sup_disc / sup_i).max(1.0);
    let ratio = sup_a / sup_i;
    let exponent = m_bound.ln() / std::f64::consts::LN_2;
    let fitted_c1 = if exponent == 0.0 {
        // Constant-modulus case: the inequality holds for every C_1, and
        // C_1 = |A| already suffices.
        measure
    } else {
        measure / ratio.powf(1.0 / exponent)
    };
    Ok(RemezResult { fitted_c1, ratio, m_bound, measure, exponent })
}

/// Exposes the dual exponent alongside the probes for report plumbing.
pub fn holder_pair(p: f64) -> (f64, f64) {
    (p, conjugate_exponent(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::thick::ThickSet;
    use proptest::prelude::*;

    fn grid(points: usize, period: f64, lp: f64) -> GridSpec {
        GridSpec::new(1, points, period, 1, VectorNorm::L2, lp).unwrap()
    }

    #[test]
    fn c2_is_cached_and_dominates_sharp_constant() {
        let first = compute_c2();
        let second = compute_c2();
        assert_eq!(first.to_bits(), second.to_bits());
        assert!(first >= 0.5, "C_2 = {first} must dominate the sharp p=2 constant");
        assert!(first < 5.0, "C_2 = {first} looks implausibly large");
    }

    #[test]
    fn c2_quadrature_converges_under_doubling() {
        let base = c2_quadrature(80, 0.05, 32, 600.0);
        let fine = c2_quadrature(160, 0.025, 64, 700.0);
        let rel = (base - fine).abs() / fine;
        assert!(rel < 1.0e-6, "C_2 doubling drift {rel}");
    }

    #[test]
    fn ls_ratio_constant_field_equals_density_root() {
        let g = grid(64, 8.0, 2.0);
        let set = ThickSet::make_stripes(g, 1.0, 2.0, 0).unwrap();
        let f = SpectralField::constant(g, &[Complex64::new(3.0, 1.0)])
            .unwrap()
            .band_limit(&[2.0])
            .unwrap();
        let probe = ls_ratio(&f, &set).unwrap();
        let expected = set.density().powf(0.5);
        assert!((probe.ratio - expected).abs() <= 1.0e-12);
        assert_eq!(probe.fitted_k, 1.0);
    }

    #[test]
    fn ls_ratio_single_mode_equals_density_root() {
        for lp in [1.0, 2.0] {
            let g = grid(64, 8.0, lp);
            let set = ThickSet::make_stripes(g, 2.0, 4.0, 0).unwrap();
            let mut coeffs = vec![Complex64::new(0.0, 0.0); 64];
            coeffs[3] = Complex64::new(0.0, 2.0);
            let f = SpectralField::from_coefficients(g, coeffs)
                .unwrap()
                .band_limit(&[6.0])
                .unwrap();
            let probe = ls_ratio(&f, &set).unwrap();
            let expected = set.density().powf(1.0 / lp);
            assert!(
                (probe.ratio - expected).abs() <= 1.0e-12,
                "p = {lp}: ratio {} vs {expected}",
                probe.ratio
            );
        }
    }

    #[test]
    fn ls_ratio_modulus_constant_field_sup_norm() {
        let g = grid(64, 8.0, f64::INFINITY);
        let set = ThickSet::make_stripes(g, 1.0, 4.0, 0).unwrap();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 64];
        coeffs[2] = Complex64::new(1.5, 0.5);
        let f = SpectralField::from_coefficients(g, coeffs)
            .unwrap()
            .band_limit(&[4.0])
            .unwrap();
        let probe = ls_ratio(&f, &set).unwrap();
        assert!((probe.ratio - 1.0).abs() <= 1.0e-12);
    }

    #[test]
    fn ls_ratio_rejects_zero_field_and_missing_certificates() {
        let g = grid(64, 8.0, 2.0);
        let set = ThickSet::make_stripes(g, 1.0, 2.0, 0).unwrap();
        let zero = SpectralField::zero(g).band_limit(&[2.0]).unwrap();
        assert!(ls_ratio(&zero, &set).is_err());
        let f = SpectralField::random_band_limited(g, &[4.0], 1, 0).unwrap();
        let uncertified = ThickSet::from_indicator(g, set.indicator().to_vec()).unwrap();
        assert!(ls_ratio(&f, &uncertified).is_err());
        let no_band = SpectralField::random_rough(g, 1, 0).unwrap();
        assert!(ls_ratio(&no_band, &set).is_err());
    }

    #[test]
    fn ls_stripes_ensemble_meets_frozen_k() {
        let g = grid(64, 8.0, 2.0);
        let set = ThickSet::make_stripes(g, 1.0, 2.0, 0).unwrap();
        let cert = set.certified().unwrap();
        assert_eq!(cert.rho, 0.5);
        assert_eq!(cert.ell, vec![2.0]);
        let ensemble = ls_ensemble(&set, &[4.0], 100, 2024).unwrap();
        assert_eq!(ensemble.rows.len(), 100);
        let frozen_bound = ensemble.rows[0].bound(10.0);
        assert!(
            ensemble.min_ratio >= frozen_bound,
            "min ratio {} under frozen bound {frozen_bound}",
            ensemble.min_ratio
        );
        assert!(ensemble.max_fitted_k <= 10.0, "fitted K {}", ensemble.max_fitted_k);
    }

    #[test]
    fn bound_is_decreasing_in_k() {
        let probe = LSProbeResult {
            ratio: 0.3,
            rho: 0.5,
            ell: vec![2.0],
            lambda: vec![4.0],
            dim: 1,
            lp: Exponent(2.0),
            fitted_k: 1.0,
        };
        let mut prev = probe.bound(1.0);
        for k in [1.5, 2.0, 4.0, 10.0, 100.0] {
            let next = probe.bound(k);
            assert!(next < prev, "bound must decrease at K = {k}");
            prev = next;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn enlarging_the_set_never_decreases_the_ratio(
            seed in 0u64..500,
            extra in 1usize..30,
        ) {
            let g = grid(64, 8.0, 2.0);
            let f = SpectralField::random_band_limited(g, &[4.0], seed, 0).unwrap();
            let base = ThickSet::make_random_thick(g, 0.4, &[4.0], seed).unwrap();
            let mut grown = base.indicator().to_vec();
            let len = grown.len();
            let mut added = 0usize;
            for i in 0..len {
                let slot = (i * 17) % len;
                if !grown[slot] && added < extra {
                    grown[slot] = true;
                    added += 1;
                }
            }
            let grown = ThickSet::from_indicator(g, grown).unwrap();
            let grown = {
                let mut s = grown;
                s.certify(&[4.0]).unwrap();
                s
            };
            let r0 = ls_ratio(&f, &base).unwrap().ratio;
            let r1 = ls_ratio(&f, &grown).unwrap().ratio;
            prop_assert!(r1 >= r0 - 1e-15);
        }

        #[test]
        fn bernstein_sharp_p2_bound_has_tiny_slack(
            seed in 0u64..500,
            order in 1usize..4,
        ) {
            let g = grid(128, 16.0, 2.0);
            let f = SpectralField::random_band_limited(g, &[6.0], seed, 3).unwrap();
            let record = bernstein_check(&f, &[order]).unwrap();
            let sharp = record.sharp_rhs.unwrap();
            prop_assert!(record.lhs <= sharp * (1.0 + 1e-10),
                "sharp Bernstein violated: {} > {}", record.lhs, sharp);
            prop_assert!(record.sharp_pass.unwrap());
            prop_assert!(record.pass);
        }
    }

    #[test]
    fn bernstein_single_mode_eigenvalue() {
        let g = grid(64, 8.0, 2.0);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 64];
        coeffs[5] = Complex64::new(1.0, 1.0);
        let xi = g.xi(5);
        let f = SpectralField::from_coefficients(g, coeffs)
            .unwrap()
            .band_limit(&[2.0 * xi + 1.0])
            .unwrap();
        let record = bernstein_check(&f, &[1]).unwrap();
        let expected = xi.abs() * f.lp_norm();
        assert!((record.lhs - expected).abs() <= 1.0e-12 * expected);
    }

    #[test]
    fn bernstein_sharpness_near_band_edge() {
        let points = 256usize;
        let g = grid(points, 32.0, 2.0);
        let k = 10usize;
        let xi = g.xi(k);
        let lambda = 2.0 * xi / (1.0 - 2.0 / points as f64);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); points];
        coeffs[k] = Complex64::new(1.0, 0.0);
        let f = SpectralField::from_coefficients(g, coeffs)
            .unwrap()
            .band_limit(&[lambda])
            .unwrap();
        let record = bernstein_check(&f, &[1]).unwrap();
        assert!(
            record.lhs / f.lp_norm() >= 0.99 * lambda / 2.0,
            "edge mode is not sharp: {} vs {}",
            record.lhs / f.lp_norm(),
            lambda / 2.0
        );
    }

    #[test]
    fn bernstein_alpha_zero_is_equality() {
        let g = grid(64, 8.0, 2.0);
        let f = SpectralField::random_band_limited(g, &[4.0], 9, 0).unwrap();
        let record = bernstein_check(&f, &[0]).unwrap();
        assert_eq!(record.lhs, record.rhs);
        assert!(record.pass);
    }

    #[test]
    fn cube_threshold_floor_values() {
        assert_eq!(cube_threshold(1), 1.5);
        assert!((cube_threshold(2) - (5.0 + 5.0f64.sqrt()) / 4.0).abs() < 1.0e-12);
    }

    #[test]
    fn c3_constant_reference_values() {
        assert!((c3_constant(2.0, 1, 2.0) - (1.0 - 0.5f64.sqrt())).abs() < 1.0e-12);
        assert_eq!(c3_constant(2.0, 1, f64::INFINITY), 1.0);
        assert!(c3_constant(1.5, 1, 1.0).abs() < 1.0e-12, "C_3 vanishes at the floor");
    }

    #[test]
    fn classify_rejects_a_at_or_below_floor() {
        let g = grid(64, 8.0, 2.0);
        let f = SpectralField::random_band_limited(g, &[4.0], 11, 0).unwrap();
        assert!(classify_cubes(&f, 1.5, 6).is_err());
        assert!(classify_cubes(&f, 1.51, 6).is_ok());
    }

    #[test]
    fn classify_constant_field_all_good() {
        let g = grid(64, 8.0, 2.0);
        let f = SpectralField::constant(g, &[Complex64::new(1.0, 0.0)])
            .unwrap()
            .band_limit(&[2.0])
            .unwrap();
        let verdicts = classify_cubes(&f, 2.0, 6).unwrap();
        assert_eq!(verdicts.len(), 8);
        for v in &verdicts {
            assert!(v.good);
            assert_eq!(v.worst_ratio, 0.0);
            assert!(v.tail_conclusive);
        }
    }

    #[test]
    fn classify_scaling_invariance() {
        let g = grid(64, 8.0, 2.0);
        let f = SpectralField::random_band_limited(g, &[4.0], 13, 0).unwrap();
        let scaled = f.scale(Complex64::new(4.0, 0.0));
        let scaled = scaled.band_limit(&[4.0]).unwrap();
        let v0 = classify_cubes(&f, 2.0, 6).unwrap();
        let v1 = classify_cubes(&scaled, 2.0, 6).unwrap();
        for (a, b) in v0.iter().zip(v1.iter()) {
            assert_eq!(a.good, b.good);
            assert_eq!(a.worst_alpha, b.worst_alpha);
            assert!((a.worst_ratio - b.worst_ratio).abs() <= 1.0e-12 * a.worst_ratio.max(1.0));
        }
    }

    #[test]
    fn good_cube_mass_meets_c3_per_sample() {
        let g = grid(64, 8.0, 2.0);
        let a = 2.0;
        let c3 = c3_constant(a, 1, 2.0);
        for seed in 0..20u64 {
            let f = SpectralField::random_band_limited(g, &[4.0], seed, 1).unwrap();
            let verdicts = classify_cubes(&f, a, 6).unwrap();
            let good_mass = good_cube_mass(&f, &verdicts, 2.0).unwrap();
            assert!(
                good_mass >= c3 * f.lp_norm(),
                "seed {seed}: good mass {good_mass} below C_3 share {}",
                c3 * f.lp_norm()
            );
        }
    }

    #[test]
    fn sup_norm_is_attained_on_a_good_cube() {
        let g = GridSpec::new(1, 64, 8.0, 1, VectorNorm::L2, f64::INFINITY).unwrap();
        for seed in 0..10u64 {
            let f = SpectralField::random_band_limited(g, &[4.0], seed, 2).unwrap();
            let verdicts = classify_cubes(&f, 2.0, 6).unwrap();
            let part = cube_partition(&f).unwrap();
            let good: Vec<bool> = (0..g.num_sites())
                .map(|site| verdicts[part.site_cube[site]].good)
                .collect();
            assert_eq!(f.masked_lp_norm(Some(&good), f64::INFINITY), f.lp_norm());
        }
    }

    #[test]
    fn point_bound_constant_field() {
        let g = grid(64, 8.0, 2.0);
        let f = SpectralField::constant(g, &[Complex64::new(1.0, 0.0)])
            .unwrap()
            .band_limit(&[2.0])
            .unwrap();
        for k in 0..8 {
            assert!(good_cube_point_bound(&f, &[k], 6.0, 6).unwrap());
        }
    }

    #[test]
    fn point_bound_single_low_mode() {
        let g = grid(64, 8.0, 2.0);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 64];
        coeffs[1] = Complex64::new(1.0, 0.0);
        let f = SpectralField::from_coefficients(g, coeffs)
            .unwrap()
            .band_limit(&[2.0])
            .unwrap();
        let a = 2.0;
        let verdicts = classify_cubes(&f, a, 6).unwrap();
        for v in &verdicts {
            assert!(v.good, "low mode should make every cube good");
            assert!(good_cube_point_bound(&f, &v.cube, 3.0 * a, 6).unwrap());
        }
    }

    #[test]
    fn remez_constant_polynomial() {
        let coeffs = vec![vec![Complex64::new(1.0, 0.0)]];
        let result = remez_probe(&coeffs, VectorNorm::L2, &[(0.2, 0.5)]).unwrap();
        assert!((result.measure - 0.3).abs() < 1.0e-12);
        assert!(result.fitted_c1 <= 1.0);
        assert!((result.fitted_c1 - result.measure).abs() < 1.0e-12);
        assert_eq!(result.exponent, 0.0);
    }

    #[test]
    fn remez_linear_closed_form() {
        let coeffs = vec![
            vec![Complex64::new(0.0, 0.0)],
            vec![Complex64::new(1.0, 0.0)],
        ];
        let result = remez_probe(&coeffs, VectorNorm::L2, &[(0.5, 1.0)]).unwrap();
        assert!((result.m_bound - 5.0).abs() <= 1.0e-12);
        assert!((result.ratio - 1.0).abs() <= 1.0e-12);
        assert!((result.fitted_c1 - 0.5).abs() <= 1.0e-9, "fitted {}", result.fitted_c1);
    }

    #[test]
    fn remez_chebyshev_ensemble_is_stable() {
        // T_8(2x - 1) through the recurrence, as plain power coefficients.
        let mut t_prev = vec![1.0f64];
        let mut t_cur = vec![0.0, 1.0];
        for _ in 1..8 {
            let mut next = vec![0.0; t_cur.len() + 1];
            for (i, c) in t_cur.iter().enumerate() {
                next[i + 1] += 2.0 * c;
            }
            for (i, c) in t_prev.iter().enumerate() {
                next[i] -= c;
            }
            t_prev = t_cur;
            t_cur = next;
        }
        // Compose with w = 2x - 1 by expanding powers of w.
        let mut composed = vec![0.0f64; t_cur.len()];
        let mut w_pow = vec![1.0f64];
        for (k, c) in t_cur.iter().enumerate() {
            for (i, wc) in w_pow.iter().enumerate() {
                composed[i] += c * wc;
            }
            if k + 1 < t_cur.len() {
                let mut next = vec![0.0; w_pow.len() + 1];
                for (i, wc) in w_pow.iter().enumerate() {
                    next[i + 1] += 2.0 * wc;
                    next[i] -= wc;
                }
                w_pow = next;
            }
        }
        let coeffs: Vec<Vec<Complex64>> =
            composed.iter().map(|c| vec![Complex64::new(*c, 0.0)]).collect();

        let mut fitted = Vec::new();
        let mut rng = crate::rng::Stream::new(77, 0);
        for _ in 0..100 {
            // One 0.05-wide interval per quarter keeps |A| = 0.2 per draw.
            let a_sub: Vec<(f64, f64)> = (0..4)
                .map(|q| {
                    let start = 0.25 * q as f64 + 0.2 * rng.uniform();
                    (start, start + 0.05)
                })
                .collect();
            let result = remez_probe(&coeffs, VectorNorm::L2, &a_sub).unwrap();
            fitted.push(result.fitted_c1);
        }
        let mean = fitted.iter().sum::<f64>() / fitted.len() as f64;
        for c1 in &fitted {
            assert!(
                (c1 - mean).abs() <= 0.2 * mean,
                "fitted C_1 {c1} strays more than 20% from mean {mean}"
            );
        }
    }

    #[test]
    fn remez_rejects_degenerate_subsets() {
        let coeffs = vec![vec![Complex64::new(1.0, 0.0)]];
        assert!(remez_probe(&coeffs, VectorNorm::L2, &[]).is_err());
        assert!(remez_probe(&coeffs, VectorNorm::L2, &[(0.5, 0.5)]).is_err());
        assert!(remez_probe(&coeffs, VectorNorm::L2, &[(0.7, 0.2)]).is_err());
        assert!(remez_probe(&coeffs, VectorNorm::L2, &[(-0.1, 0.5)]).is_err());
    }

    #[test]
    fn holder_pair_roundtrip() {
        assert_eq!(holder_pair(2.0), (2.0, 2.0));
        let (_, q) = holder_pair(1.0);
        assert!(q.is_infinite());
    }
}
