//! Periodized sampling grids and band-limited vector-valued fields.
//!
//! A grid discretizes the torus (R / Q Z)^d with N equispaced points per
//! axis. Fields take values in C^n and are stored redundantly as physical
//! samples and Fourier coefficients, kept consistent by construction.
//!
//! Conventions. The frequency lattice is xi_k = 2 pi k / Q with integer
//! k in [-N/2, N/2). Coefficients follow the Riemann-sum normalization of
//! the continuum transform: c(xi) = h^d sum_x exp(-i xi x) f(x) with cell
//! width h = Q/N, and f(x) = Q^{-d} sum_xi exp(i xi x) c(xi). With these
//! scalings Parseval reads ||f||_2^2 = Q^{-d} sum_xi ||c(xi)||_2^2.

use std::io::{Read, Write};
use std::sync::Mutex;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::VectorNorm;
use crate::rng::Stream;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Geometry and norm conventions for one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Spatial dimension d.
    pub dim: usize,
    /// Sample points per axis, a power of two.
    pub points: usize,
    /// Torus period Q, identical on every axis.
    pub period: f64,
    /// Dimension n of the value space C^n.
    pub value_dim: usize,
    /// Norm on the value space (q = 1, 2, or infinity).
    pub x_norm: VectorNorm,
    /// Lebesgue exponent p in [1, infinity] for field norms.
    pub lp: f64,
}

impl GridSpec {
    pub fn new(
        dim: usize,
        points: usize,
        period: f64,
        value_dim: usize,
        x_norm: VectorNorm,
        lp: f64,
    ) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::invalid(format!("dim must be in 1..={MAX_DIM}, got {dim}")));
        }
        if points < 2 || !points.is_power_of_two() {
            return Err(Error::invalid(format!(
                "points must be a power of two >= 2, got {points}"
            )));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::invalid(format!("period must be positive, got {period}")));
        }
        if value_dim == 0 || value_dim > 64 {
            return Err(Error::invalid(format!(
                "value_dim must be in 1..=64, got {value_dim}"
            )));
        }
        if !(lp >= 1.0) {
            return Err(Error::invalid(format!("lp_exponent must be >= 1, got {lp}")));
        }
        let spec = GridSpec { dim, points, period, value_dim, x_norm, lp };
        if spec.num_sites().checked_mul(value_dim).is_none()
            || spec.num_sites() * value_dim > 1 << 28
        {
            return Err(Error::invalid("grid too large".to_string()));
        }
        Ok(spec)
    }

    /// Cell width h = Q/N.
    pub fn h(&self) -> f64 {
        self.period / self.points as f64
    }

    /// Cell volume h^d.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Total number of sample sites N^d.
    pub fn num_sites(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    /// Largest representable frequency magnitude pi N / Q.
    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI * self.points as f64 / self.period
    }

    /// Signed integer wavenumber for storage index j on one axis.
    pub fn wavenumber(&self, j: usize) -> i64 {
        debug_assert!(j < self.points);
        if j < self.points / 2 {
            j as i64
        } else {
            j as i64 - self.points as i64
        }
    }

    /// Frequency xi = 2 pi k / Q for storage index j on one axis.
    pub fn xi(&self, j: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.wavenumber(j) as f64 / self.period
    }

    /// Decodes a flat row-major site index into per-axis indices.
    pub fn decode(&self, mut site: usize) -> [usize; MAX_DIM] {
        let mut coords = [0usize; MAX_DIM];
        for axis in (0..self.dim).rev() {
            coords[axis] = site % self.points;
            site /= self.points;
        }
        coords
    }

    /// Flat row-major site index for per-axis indices.
    pub fn encode(&self, coords: &[usize]) -> usize {
        let mut site = 0usize;
        for axis in 0..self.dim {
            site = site * self.points + (coords[axis] % self.points);
        }
        site
    }

    /// Physical coordinates of a site.
    pub fn site_x(&self, site: usize) -> [f64; MAX_DIM] {
        let coords = self.decode(site);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = coords[axis] as f64 * self.h();
        }
        x
    }

    /// Frequency vector of a site index interpreted on the frequency lattice.
    pub fn site_xi(&self, site: usize) -> [f64; MAX_DIM] {
        let coords = self.decode(site);
        let mut xi = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            xi[axis] = self.xi(coords[axis]);
        }
        xi
    }

    /// True when the frequency of storage site `site` lies in the open box
    /// (-lambda_i/2, lambda_i/2) on every axis.
    pub fn in_band(&self, site: usize, lambda: &[f64]) -> bool {
        let xi = self.site_xi(site);
        (0..self.dim).all(|axis| xi[axis].abs() < lambda[axis] / 2.0)
    }

    /// Validates a band vector against the representable frequency range.
    pub fn validate_band(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.dim {
            return Err(Error::invalid(format!(
                "band vector has {} entries, grid dimension is {}",
                lambda.len(),
                self.dim
            )));
        }
        for (axis, &l) in lambda.iter().enumerate() {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::invalid(format!(
                    "band lambda[{axis}] must be positive, got {l}"
                )));
            }
            if l / 2.0 > self.nyquist() * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "band lambda[{axis}]/2 = {} exceeds the Nyquist frequency {} on axis {axis}",
                    l / 2.0,
                    self.nyquist()
                )));
            }
        }
        Ok(())
    }
}

fn with_fft(n: usize, inverse: bool, f: impl FnOnce(&std::sync::Arc<dyn rustfft::Fft<f64>>)) {
    static PLANNER: Mutex<Option<FftPlanner<f64>>> = Mutex::new(None);
    let plan = {
        let mut guard = PLANNER.lock().unwrap();
        let planner = guard.get_or_insert_with(FftPlanner::new);
        if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        }
    };
    f(&plan);
}

/// In-place unnormalized DFT along every axis of a site-major,
/// component-minor array.
fn fft_all_axes(
    data: &mut [Complex64],
    dim: usize,
    points: usize,
    value_dim: usize,
    inverse: bool,
) {
    let num_sites = points.pow(dim as u32);
    debug_assert_eq!(data.len(), num_sites * value_dim);
    let mut line = vec![Complex64::new(0.0, 0.0); points];
    for axis in 0..dim {
        let stride_sites: usize = points.pow((dim - 1 - axis) as u32);
        let stride = stride_sites * value_dim;
        with_fft(points, inverse, |plan| {
            // Enumerate all lines along `axis`: fix the other coordinates and
            // the component, then walk the axis with the computed stride.
            let lines_before: usize = points.pow(axis as u32);
            let lines_after = stride_sites;
            for before in 0..lines_before {
                for after in 0..lines_after {
                    for comp in 0..value_dim {
                        let base = (before * points * stride_sites + after) * value_dim + comp;
                        for j in 0..points {
                            line[j] = data[base + j * stride];
                        }
                        plan.process(&mut line);
                        for j in 0..points {
                            data[base + j * stride] = line[j];
                        }
                    }
                }
            }
        });
    }
}

/// A C^n-valued field on a grid, stored as samples and coefficients.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: GridSpec,
    values: Vec<Complex64>,
    coefficients: Vec<Complex64>,
    band: Option<Vec<f64>>,
}

impl SpectralField {
    /// Builds a field from physical samples; coefficients are computed.
    ///
    /// `values` is site-major, component-minor: entry for site s, component c
    /// sits at s * value_dim + c.
    pub fn from_values(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.num_sites() * grid.value_dim {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                grid.num_sites() * grid.value_dim,
                values.len()
            )));
        }
        let mut coefficients = values.clone();
        fft_all_axes(&mut coefficients, grid.dim, grid.points, grid.value_dim, false);
        let scale = grid.cell_volume();
        for c in coefficients.iter_mut() {
            *c *= scale;
        }
        Ok(SpectralField { grid, values, coefficients, band: None })
    }

    /// Builds a field from Fourier coefficients; samples are synthesized.
    pub fn from_coefficients(grid: GridSpec, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() != grid.num_sites() * grid.value_dim {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                grid.num_sites() * grid.value_dim,
                coefficients.len()
            )));
        }
        let mut values = coefficients.clone();
        fft_all_axes(&mut values, grid.dim, grid.points, grid.value_dim, true);
        let scale = grid.period.powi(-(grid.dim as i32));
        for v in values.iter_mut() {
            *v *= scale;
        }
        Ok(SpectralField { grid, values, coefficients, band: None })
    }

    /// The zero field.
    pub fn zero(grid: GridSpec) -> Self {
        let len = grid.num_sites() * grid.value_dim;
        SpectralField {
            grid,
            values: vec![Complex64::new(0.0, 0.0); len],
            coefficients: vec![Complex64::new(0.0, 0.0); len],
            band: None,
        }
    }

    /// Constant field with the given component vector.
    pub fn constant(grid: GridSpec, value: &[Complex64]) -> Result<Self> {
        if value.len() != grid.value_dim {
            return Err(Error::invalid("constant value has wrong dimension".to_string()));
        }
        let mut values = Vec::with_capacity(grid.num_sites() * grid.value_dim);
        for _ in 0..grid.num_sites() {
            values.extend_from_slice(value);
        }
        Self::from_values(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    /// The certified band-limit box, when one is attached.
    pub fn band(&self) -> Option<&[f64]> {
        self.band.as_deref()
    }

    pub(crate) fn set_band(&mut self, band: Option<Vec<f64>>) {
        self.band = band;
    }

    /// Recomputes coefficients from the current samples.
    ///
    /// The stored pair is consistent by construction; this is the public
    /// transform whose round-trip and Parseval identities are tested.
    pub fn forward_transform(&self) -> Result<Self> {
        let mut out = Self::from_values(self.grid, self.values.clone())?;
        out.band = self.band.clone();
        Ok(out)
    }

    /// Mixed norm ||f||_{L^p(l^q)} with the grid's cell measure.
    pub fn lp_norm(&self) -> f64 {
        self.lp_norm_with(self.grid.lp)
    }

    /// Same field, different Lebesgue exponent.
    pub fn lp_norm_with(&self, p: f64) -> f64 {
        self.masked_lp_norm(None, p)
    }

    /// ||1_E f||_p for a cell mask E (site-indexed), or the full norm when
    /// no mask is given.
    pub fn masked_lp_norm(&self, mask: Option<&[bool]>, p: f64) -> f64 {
        let n = self.grid.value_dim;
        let h_d = self.grid.cell_volume();
        let site_norm = |site: usize| -> f64 {
            self.grid.x_norm.vector_norm(&self.values[site * n..(site + 1) * n])
        };
        let included = |site: usize| mask.map_or(true, |m| m[site]);
        if p.is_infinite() {
            let mut max = 0.0f64;
            for site in 0..self.grid.num_sites() {
                if included(site) {
                    max = max.max(site_norm(site));
                }
            }
            max
        } else {
            let mut sum = 0.0f64;
            for site in 0..self.grid.num_sites() {
                if included(site) {
                    sum += site_norm(site).powf(p);
                }
            }
            (h_d * sum).powf(1.0 / p)
        }
    }

    /// Projects onto the open frequency box (-lambda_i/2, lambda_i/2) and
    /// certifies the result with that band.
    ///
    /// Surviving coefficients are copied bit-exactly; everything else becomes
    /// an exact zero. Applying the same projection twice is idempotent.
    pub fn band_limit(&self, lambda: &[f64]) -> Result<Self> {
        self.grid.validate_band(lambda)?;
        let n = self.grid.value_dim;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); self.coefficients.len()];
        for site in 0..self.grid.num_sites() {
            if self.grid.in_band(site, lambda) {
                coeffs[site * n..(site + 1) * n]
                    .copy_from_slice(&self.coefficients[site * n..(site + 1) * n]);
            }
        }
        let mut out = Self::from_coefficients(self.grid, coeffs)?;
        out.band = Some(lambda.to_vec());
        Ok(out)
    }

    /// Gaussian random field with spectrum confined to the open box.
    ///
    /// In-band coefficients are i.i.d. complex Gaussians per component,
    /// scaled so the field has unit variance per sample and component in
    /// physical space; the expected squared 2-norm is then
    /// (in-band modes) * n * Q^d / N^d. Draw order is fixed by the storage
    /// layout, so a (seed, stream) pair pins the field.
    pub fn random_band_limited(
        grid: GridSpec,
        lambda: &[f64],
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        grid.validate_band(lambda)?;
        let n = grid.value_dim;
        let sigma = (grid.cell_volume() * grid.period.powi(grid.dim as i32)).sqrt();
        let mut rng = Stream::new(seed, stream);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.num_sites() * n];
        for site in 0..grid.num_sites() {
            if grid.in_band(site, lambda) {
                for comp in 0..n {
                    coeffs[site * n + comp] = rng.complex_normal() * sigma;
                }
            }
        }
        let mut out = Self::from_coefficients(grid, coeffs)?;
        out.band = Some(lambda.to_vec());
        Ok(out)
    }

    /// White-noise field: i.i.d. unit complex Gaussian at every sample and
    /// component.
    pub fn random_rough(grid: GridSpec, seed: u64, stream: u64) -> Result<Self> {
        let mut rng = Stream::new(seed, stream);
        let values: Vec<Complex64> = (0..grid.num_sites() * grid.value_dim)
            .map(|_| rng.complex_normal())
            .collect();
        Self::from_values(grid, values)
    }

    /// Exact derivative of order alpha: multiplies coefficients by
    /// (i xi)^alpha.
    pub fn spectral_derivative(&self, alpha: &[usize]) -> Result<Self> {
        if alpha.len() != self.grid.dim {
            return Err(Error::invalid(format!(
                "derivative order has {} entries, grid dimension is {}",
                alpha.len(),
                self.grid.dim
            )));
        }
        let n = self.grid.value_dim;
        let mut coeffs = self.coefficients.clone();
        for site in 0..self.grid.num_sites() {
            let xi = self.grid.site_xi(site);
            let mut factor = Complex64::new(1.0, 0.0);
            for axis in 0..self.grid.dim {
                let ix = Complex64::new(0.0, xi[axis]);
                for _ in 0..alpha[axis] {
                    factor *= ix;
                }
            }
            for comp in 0..n {
                coeffs[site * n + comp] *= factor;
            }
        }
        let mut out = Self::from_coefficients(self.grid, coeffs)?;
        out.band = self.band.clone();
        Ok(out)
    }

    /// Zeroes samples outside the mask; coefficients are recomputed.
    /// On-mask samples are copied bit-exactly.
    pub fn masked(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.grid.num_sites() {
            return Err(Error::invalid("mask length does not match grid".to_string()));
        }
        let n = self.grid.value_dim;
        let mut values = vec![Complex64::new(0.0, 0.0); self.values.len()];
        for site in 0..self.grid.num_sites() {
            if mask[site] {
                values[site * n..(site + 1) * n]
                    .copy_from_slice(&self.values[site * n..(site + 1) * n]);
            }
        }
        Self::from_values(self.grid, values)
    }

    /// Pointwise value-space norm at one site.
    pub fn site_norm(&self, site: usize) -> f64 {
        let n = self.grid.value_dim;
        self.grid.x_norm.vector_norm(&self.values[site * n..(site + 1) * n])
    }

    /// Component vector at one site.
    pub fn site_value(&self, site: usize) -> &[Complex64] {
        let n = self.grid.value_dim;
        &self.values[site * n..(site + 1) * n]
    }

    /// f + c g, preserving no band certificate unless both operands share one.
    pub fn add_scaled(&self, other: &Self, c: Complex64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::invalid("grid mismatch in field arithmetic".to_string()));
        }
        let values: Vec<Complex64> = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a + c * b)
            .collect();
        let coefficients: Vec<Complex64> = self
            .coefficients
            .iter()
            .zip(other.coefficients.iter())
            .map(|(a, b)| a + c * b)
            .collect();
        let band = match (&self.band, &other.band) {
            (Some(a), Some(b)) if a == b => Some(a.clone()),
            _ => None,
        };
        Ok(SpectralField { grid: self.grid, values, coefficients, band })
    }

    pub fn scale(&self, c: Complex64) -> Self {
        SpectralField {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
            coefficients: self.coefficients.iter().map(|v| v * c).collect(),
            band: self.band.clone(),
        }
    }

    /// Builds a new field on the same grid from replacement coefficients.
    pub fn with_coefficients(&self, coefficients: Vec<Complex64>) -> Result<Self> {
        Self::from_coefficients(self.grid, coefficients)
    }

    /// Writes the field to `path` in the binary container, with a JSON
    /// sidecar at `path + ".json"` describing the layout.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let mut header = [0u8; 64];
        header[0..8].copy_from_slice(b"SPECFLD1");
        header[8..12].copy_from_slice(&1u32.to_le_bytes());
        header[12..16].copy_from_slice(&(self.grid.dim as u32).to_le_bytes());
        header[16..24].copy_from_slice(&(self.grid.points as u64).to_le_bytes());
        header[24..28].copy_from_slice(&(self.grid.value_dim as u32).to_le_bytes());
        let q_code: u32 = match self.grid.x_norm {
            VectorNorm::L1 => 1,
            VectorNorm::L2 => 2,
            VectorNorm::LInf => 0,
        };
        header[28..32].copy_from_slice(&q_code.to_le_bytes());
        header[32..40].copy_from_slice(&self.grid.period.to_le_bytes());
        header[40..48].copy_from_slice(&self.grid.lp.to_le_bytes());
        file.write_all(&header)?;
        let mut body = Vec::with_capacity(self.values.len() * 16);
        for v in &self.values {
            body.extend_from_slice(&v.re.to_le_bytes());
            body.extend_from_slice(&v.im.to_le_bytes());
        }
        file.write_all(&body)?;

        let sidecar = serde_json::json!({
            "schema_version": 1,
            "magic": "SPECFLD1",
            "dim": self.grid.dim,
            "points": self.grid.points,
            "period": self.grid.period,
            "value_dim": self.grid.value_dim,
            "x_norm_q": exponent_to_json(self.grid.x_norm.exponent()),
            "lp_exponent": exponent_to_json(self.grid.lp),
            "band": self.band,
            "layout": "row-major sites, component-minor, complex128 little-endian re/im pairs",
            "payload_bytes": self.values.len() * 16,
        });
        std::fs::write(
            sidecar_path(path),
            serde_json::to_string_pretty(&sidecar)? + "\n",
        )?;
        Ok(())
    }

    /// Reads a field written by [`SpectralField::save`].
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut header = [0u8; 64];
        file.read_exact(&mut header)?;
        if &header[0..8] != b"SPECFLD1" {
            return Err(Error::schema("bad magic in field container".to_string()));
        }
        let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let points = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
        let value_dim = u32::from_le_bytes(header[24..28].try_into().unwrap()) as usize;
        let q_code = u32::from_le_bytes(header[28..32].try_into().unwrap());
        let period = f64::from_le_bytes(header[32..40].try_into().unwrap());
        let lp = f64::from_le_bytes(header[40..48].try_into().unwrap());
        let x_norm = match q_code {
            1 => VectorNorm::L1,
            2 => VectorNorm::L2,
            0 => VectorNorm::LInf,
            other => return Err(Error::schema(format!("bad x_norm code {other}"))),
        };
        let grid = GridSpec::new(dim, points, period, value_dim, x_norm, lp)
            .map_err(|e| Error::schema(format!("field container header: {e}")))?;
        let count = grid.num_sites() * grid.value_dim;
        let mut body = vec![0u8; count * 16];
        file.read_exact(&mut body)?;
        let mut trailing = Vec::new();
        file.read_to_end(&mut trailing)?;
        if !trailing.is_empty() {
            return Err(Error::schema("trailing bytes after field payload".to_string()));
        }
        let values: Vec<Complex64> = (0..count)
            .map(|i| {
                let re = f64::from_le_bytes(body[i * 16..i * 16 + 8].try_into().unwrap());
                let im = f64::from_le_bytes(body[i * 16 + 8..i * 16 + 16].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        let mut field = Self::from_values(grid, values)?;
        // Band certificates ride in the sidecar when present.
        if let Ok(text) = std::fs::read_to_string(sidecar_path(path)) {
            if let Ok(json) = serde_json::from_str::<serde_json::Value>(&text) {
                if let Some(band) = json.get("band").and_then(|b| b.as_array()) {
                    let lambda: Option<Vec<f64>> = band.iter().map(|v| v.as_f64()).collect();
                    if let Some(lambda) = lambda {
                        if field.grid.validate_band(&lambda).is_ok() {
                            field.band = Some(lambda);
                        }
                    }
                }
            }
        }
        Ok(field)
    }
}

fn sidecar_path(path: &std::path::Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// JSON encoding for exponents that may be infinite: a number, or "inf".
pub fn exponent_to_json(p: f64) -> serde_json::Value {
    if p.is_infinite() {
        serde_json::Value::String("inf".to_string())
    } else {
        serde_json::json!(p)
    }
}

/// Serde-friendly wrapper for exponents in [1, infinity].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponent(pub f64);

impl Serialize for Exponent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        exponent_to_json(self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let value = serde_json::Value::deserialize(d)?;
        match &value {
            serde_json::Value::Number(n) => {
                let p = n.as_f64().ok_or_else(|| D::Error::custom("bad exponent"))?;
                Ok(Exponent(p))
            }
            serde_json::Value::String(s) if s == "inf" || s == "infinity" => {
                Ok(Exponent(f64::INFINITY))
            }
            _ => Err(D::Error::custom("exponent must be a number or \"inf\"")),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpecJson {
    dim: usize,
    points: usize,
    period: f64,
    value_dim: usize,
    x_norm_q: Exponent,
    lp_exponent: Exponent,
}

impl Serialize for GridSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GridSpecJson {
            dim: self.dim,
            points: self.points,
            period: self.period,
            value_dim: self.value_dim,
            x_norm_q: Exponent(self.x_norm.exponent()),
            lp_exponent: Exponent(self.lp),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let raw = GridSpecJson::deserialize(d)?;
        let x_norm = VectorNorm::from_q(raw.x_norm_q.0).map_err(D::Error::custom)?;
        GridSpec::new(raw.dim, raw.points, raw.period, raw.value_dim, x_norm, raw.lp_exponent.0)
            .map_err(D::Error::custom)
    }
}

/// Hoelder conjugate: 1/p + 1/p' = 1, with 1 and infinity swapping.
pub fn conjugate_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(points: usize, period: f64) -> GridSpec {
        GridSpec::new(1, points, period, 1, VectorNorm::L2, 2.0).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(0, 64, 1.0, 1, VectorNorm::L2, 2.0).is_err());
        assert!(GridSpec::new(1, 63, 1.0, 1, VectorNorm::L2, 2.0).is_err());
        assert!(GridSpec::new(1, 64, -1.0, 1, VectorNorm::L2, 2.0).is_err());
        assert!(GridSpec::new(1, 64, 1.0, 0, VectorNorm::L2, 2.0).is_err());
        assert!(GridSpec::new(1, 64, 1.0, 1, VectorNorm::L2, 0.5).is_err());
    }

    #[test]
    fn wavenumbers_cover_the_signed_range() {
        let g = grid1(8, 4.0);
        let ks: Vec<i64> = (0..8).map(|j| g.wavenumber(j)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert!((g.xi(1) - std::f64::consts::PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn roundtrip_is_tight() {
        let g = GridSpec::new(2, 16, 3.0, 2, VectorNorm::L2, 2.0).unwrap();
        let f = SpectralField::random_rough(g, 9, 0).unwrap();
        let back = SpectralField::from_coefficients(g, f.coefficients().to_vec()).unwrap();
        let err: f64 = f
            .values()
            .iter()
            .zip(back.values().iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let scale: f64 = f.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err <= 1e-12 * scale, "roundtrip error {err}");
    }

    #[test]
    fn constant_field_norm_matches_closed_form() {
        // ||1||_2 over a torus of length Q is sqrt(Q).
        let g = grid1(64, 2.0 * std::f64::consts::PI);
        let f = SpectralField::constant(g, &[Complex64::new(1.0, 0.0)]).unwrap();
        assert!((f.lp_norm() - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn indicator_l1_norm_matches_closed_form() {
        // p = 1, f = indicator of half the cells times a vector with
        // ||v||_q = 2: the norm is (Q^d / 2) * 2 = Q^d.
        let g = GridSpec::new(1, 64, 5.0, 2, VectorNorm::L1, 1.0).unwrap();
        let mut values = vec![Complex64::new(0.0, 0.0); 64 * 2];
        for site in 0..32 {
            values[site * 2] = Complex64::new(1.0, 0.0);
            values[site * 2 + 1] = Complex64::new(-1.0, 0.0);
        }
        let f = SpectralField::from_values(g, values).unwrap();
        assert!((f.lp_norm() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn parseval_holds() {
        let g = GridSpec::new(2, 32, 4.0, 3, VectorNorm::L2, 2.0).unwrap();
        let f = SpectralField::random_rough(g, 4, 1).unwrap();
        let phys = f.lp_norm().powi(2);
        let freq: f64 = f.coefficients().iter().map(|c| c.norm_sqr()).sum::<f64>()
            / g.period.powi(g.dim as i32);
        assert!((phys - freq).abs() <= 1e-10 * phys.max(1.0), "parseval {phys} vs {freq}");
    }

    #[test]
    fn single_mode_has_single_coefficient() {
        // f(x) = exp(i xi_k x): c(xi_k) = Q^d within roundoff, rest zero.
        let g = grid1(32, 8.0);
        let k = 3usize;
        let xi = g.xi(k);
        let values: Vec<Complex64> = (0..32)
            .map(|j| Complex64::new(0.0, xi * j as f64 * g.h()).exp())
            .collect();
        let f = SpectralField::from_values(g, values).unwrap();
        for site in 0..32 {
            let c = f.coefficients()[site];
            if site == k {
                assert!((c - Complex64::new(8.0, 0.0)).norm() < 1e-12);
            } else {
                assert!(c.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn band_limit_is_a_bitexact_projection() {
        let g = grid1(64, 4.0);
        let f = SpectralField::random_rough(g, 11, 2).unwrap();
        let lambda = [10.0];
        let p1 = f.band_limit(&lambda).unwrap();
        let p2 = p1.band_limit(&lambda).unwrap();
        for (a, b) in p1.coefficients().iter().zip(p2.coefficients().iter()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        // Surviving modes are copied bit-exactly from the source.
        for site in 0..g.num_sites() {
            if g.in_band(site, &lambda) {
                assert_eq!(p1.coefficients()[site], f.coefficients()[site]);
            } else {
                assert_eq!(p1.coefficients()[site], Complex64::new(0.0, 0.0));
            }
        }
        assert_eq!(p1.band().unwrap(), &lambda);
    }

    #[test]
    fn band_limit_open_box_drops_boundary_mode() {
        // lambda exactly twice a lattice frequency: that mode is outside the
        // open box and must be removed.
        let g = grid1(32, 8.0);
        let k = 4usize;
        let xi = g.xi(k);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 32];
        coeffs[k] = Complex64::new(1.0, 0.0);
        let f = SpectralField::from_coefficients(g, coeffs).unwrap();
        let cut = f.band_limit(&[2.0 * xi]).unwrap();
        assert!(cut.coefficients().iter().all(|c| c.norm() == 0.0));
        let kept = f.band_limit(&[2.0 * xi * 1.01]).unwrap();
        assert_eq!(kept.coefficients()[k], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn band_limit_rejects_beyond_nyquist() {
        let g = grid1(32, 8.0);
        let err = f_err(&g);
        fn f_err(g: &GridSpec) -> Error {
            SpectralField::zero(*g).band_limit(&[100.0]).unwrap_err()
        }
        let msg = format!("{err}");
        assert!(msg.contains("Nyquist") && msg.contains("axis 0"), "{msg}");
    }

    #[test]
    fn random_band_limited_mean_energy_matches_formula() {
        // Expectation from the generator definition:
        // E ||f||_2^2 = modes * n * Q^d / N^d.
        let g = GridSpec::new(1, 64, 8.0, 2, VectorNorm::L2, 2.0).unwrap();
        let lambda = [4.0];
        let modes = (0..g.num_sites()).filter(|&s| g.in_band(s, &lambda)).count();
        let expected = modes as f64 * 2.0 * g.period / g.points as f64;
        let trials = 400;
        let mut mean = 0.0;
        for t in 0..trials {
            let f = SpectralField::random_band_limited(g, &lambda, 77, t as u64).unwrap();
            mean += f.lp_norm().powi(2);
        }
        mean /= trials as f64;
        assert!(
            (mean - expected).abs() < 0.1 * expected,
            "mean energy {mean}, expected {expected}"
        );
    }

    #[test]
    fn derivative_matches_mode_oracle_and_commutes() {
        let g = grid1(64, 16.0);
        let k = 5usize;
        let xi = g.xi(k);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 64];
        coeffs[k] = Complex64::new(2.0, 1.0);
        let f = SpectralField::from_coefficients(g, coeffs).unwrap();
        let df = f.spectral_derivative(&[1]).unwrap();
        assert!((df.coefficients()[k] - Complex64::new(0.0, xi) * f.coefficients()[k]).norm() < 1e-14);
        // Homogeneity: ||c f|| = |c| ||f|| to near machine precision.
        let c = Complex64::new(-3.0, 4.0);
        let cf = f.scale(c);
        assert!((cf.lp_norm() - 5.0 * f.lp_norm()).abs() <= 1e-12 * f.lp_norm() * 5.0);
        // Mixed partials commute exactly in exact arithmetic; here to 1e-12.
        let g2 = GridSpec::new(2, 16, 4.0, 1, VectorNorm::L2, 2.0).unwrap();
        let f2 = SpectralField::random_rough(g2, 3, 0).unwrap().band_limit(&[6.0, 6.0]).unwrap();
        let dxy = f2.spectral_derivative(&[1, 0]).unwrap().spectral_derivative(&[0, 1]).unwrap();
        let dyx = f2.spectral_derivative(&[0, 1]).unwrap().spectral_derivative(&[1, 0]).unwrap();
        let err: f64 = dxy
            .values()
            .iter()
            .zip(dyx.values().iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn save_load_roundtrip_preserves_bits_and_band() {
        let dir = std::env::temp_dir().join(format!("specfld-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.specfld");
        let g = GridSpec::new(2, 8, 2.5, 2, VectorNorm::LInf, f64::INFINITY).unwrap();
        let f = SpectralField::random_rough(g, 5, 3).unwrap().band_limit(&[9.0, 9.0]).unwrap();
        f.save(&path).unwrap();
        let loaded = SpectralField::load(&path).unwrap();
        assert_eq!(loaded.grid(), f.grid());
        assert_eq!(loaded.band().unwrap(), f.band().unwrap());
        for (a, b) in f.values().iter().zip(loaded.values().iter()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn conjugate_exponents() {
        assert_eq!(conjugate_exponent(1.0), f64::INFINITY);
        assert_eq!(conjugate_exponent(f64::INFINITY), 1.0);
        assert!((conjugate_exponent(2.0) - 2.0).abs() < 1e-15);
        assert!((conjugate_exponent(4.0) - 4.0 / 3.0).abs() < 1e-15);
    }
}
