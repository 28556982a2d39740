//! The fixed smooth plateau profile and small quadrature helpers.
//!
//! One bump family is used everywhere a smooth frequency window is needed:
//! the convolution of the indicator of [-3/4, 3/4] with the standard
//! mollifier exp(-1/(1-y^2)) scaled to width 1/4. The result is C-infinity,
//! equal to 1 on [-1/2, 1/2], and supported in [-1, 1]. Pinning the profile
//! pins every constant derived from it.

use std::sync::OnceLock;

/// Gauss-Legendre nodes and weights on [-1, 1].
///
/// Computed once per order by Newton iteration on the Legendre recurrence,
/// starting from Chebyshev angle estimates.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static TABLES: OnceLock<std::sync::Mutex<std::collections::BTreeMap<usize, &'static (Vec<f64>, Vec<f64>)>>> =
        OnceLock::new();
    let tables = TABLES.get_or_init(|| std::sync::Mutex::new(std::collections::BTreeMap::new()));
    let mut guard = tables.lock().unwrap();
    if let Some(t) = guard.get(&n) {
        return t;
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[k] = x;
        weights[k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    let leaked: &'static (Vec<f64>, Vec<f64>) = Box::leak(Box::new((nodes, weights)));
    guard.insert(n, leaked);
    leaked
}

/// Integral of `f` over [a, b] with `n`-point Gauss-Legendre.
pub fn gl_integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        sum += w * f(mid + half * x);
    }
    sum * half
}

/// Integral of `f` over [a, b] split into `panels` equal panels, each with
/// `n`-point Gauss-Legendre. Used for oscillatory integrands.
pub fn gl_integrate_panels(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, n: usize) -> f64 {
    let width = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * width;
        sum += gl_integrate(&f, lo, lo + width, n);
    }
    sum
}

fn mollifier_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        gl_integrate(|y| (-1.0 / (1.0 - y * y)).exp(), -1.0, 1.0, 96)
    })
}

/// The standard mollifier on (-1, 1), normalized to unit mass.
pub fn mollifier(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - y * y)).exp() / mollifier_mass()
    }
}

/// The fixed C-infinity plateau: 1 on [-1/2, 1/2], 0 outside (-1, 1),
/// strictly between in the transition bands.
///
/// plateau(x) = (indicator of [-3/4, 3/4] convolved with the width-1/4
/// mollifier)(x); the convolution reduces to one mollifier integral over the
/// overlap window.
pub fn plateau(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 0.5 {
        return 1.0;
    }
    if ax >= 1.0 {
        return 0.0;
    }
    // Substituted u = 4(x - s) over s in [-3/4, 3/4]: the remaining mass is
    // the mollifier integral over [4 ax - 3, 1].
    let lo = 4.0 * ax - 3.0;
    gl_integrate(mollifier, lo, 1.0, 64).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n-point GL is exact through degree 2n-1.
        let val = gl_integrate(|x| x * x * x * x * x * x, -1.0, 1.0, 4);
        assert!((val - 2.0 / 7.0).abs() < 1e-14);
        let shifted = gl_integrate(|x| 3.0 * x * x, 1.0, 4.0, 8);
        assert!((shifted - 63.0).abs() < 1e-12);
    }

    #[test]
    fn mollifier_has_unit_mass() {
        let mass = gl_integrate(mollifier, -1.0, 1.0, 128);
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plateau_hits_its_defining_values() {
        assert_eq!(plateau(0.0), 1.0);
        assert_eq!(plateau(0.5), 1.0);
        assert_eq!(plateau(-0.5), 1.0);
        assert_eq!(plateau(1.0), 0.0);
        assert_eq!(plateau(-1.3), 0.0);
        let mid = plateau(0.75);
        assert!(mid > 0.0 && mid < 1.0);
        assert!((mid - 0.5).abs() < 1e-12, "transition midpoint is 1/2 by symmetry, got {mid}");
    }

    #[test]
    fn plateau_is_even_and_monotone_on_transition() {
        let mut prev = 1.0;
        for k in 0..=40 {
            let x = 0.5 + 0.5 * k as f64 / 40.0;
            let v = plateau(x);
            assert!((v - plateau(-x)).abs() < 1e-15);
            assert!(v <= prev + 1e-15, "plateau must decrease on [1/2, 1]");
            prev = v;
        }
    }

    #[test]
    fn plateau_transition_is_smooth_at_joins() {
        // Values approach the plateau heights continuously at both joins.
        assert!((plateau(0.5 + 1e-6) - 1.0).abs() < 1e-9);
        assert!(plateau(1.0 - 1e-6) < 1e-9);
    }
}
