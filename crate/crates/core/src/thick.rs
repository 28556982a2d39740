//! Thick subsets of the grid and their certification.
//!
//! A set E is (rho, L)-thick when every axis-aligned box with side lengths
//! L_1, ..., L_d, wherever it is placed, captures at least rho * prod L_i of
//! E's measure. On the periodized grid the indicator is constant on cells,
//! so restricting L to integer multiples of the cell width turns the
//! continuum quantifier over all placements into an exact finite sweep over
//! the N^d cyclic cell offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::rng::Stream;

/// Certification record attached to a verified thick set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    /// Verified thickness parameter in (0, 1].
    pub rho: f64,
    /// Box side lengths, one per axis.
    pub ell: Vec<f64>,
}

/// Result of one translate sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThicknessReport {
    /// min over translates of |E ∩ (box + x)| / prod L_i.
    pub rho_min: f64,
    /// Cell offset realizing the minimum (first in row-major order).
    pub witness: Vec<usize>,
    /// On-cells in the worst window.
    pub worst_count: u64,
    /// Total cells in one window.
    pub window_cells: u64,
}

/// A cell-indicator subset of the grid, optionally certified thick.
#[derive(Debug, Clone)]
pub struct ThickSet {
    grid: GridSpec,
    indicator: Vec<bool>,
    certified: Option<Certification>,
}

impl ThickSet {
    /// Wraps a raw indicator without certification.
    pub fn from_indicator(grid: GridSpec, indicator: Vec<bool>) -> Result<Self> {
        if indicator.len() != grid.num_sites() {
            return Err(Error::invalid(format!(
                "indicator has {} cells, grid has {}",
                indicator.len(),
                grid.num_sites()
            )));
        }
        Ok(ThickSet { grid, indicator, certified: None })
    }

    /// The full grid, certified with rho = 1 for the given L.
    pub fn full(grid: GridSpec, ell: &[f64]) -> Result<Self> {
        let mut set = Self::from_indicator(grid, vec![true; grid.num_sites()])?;
        set.certify(ell)?;
        Ok(set)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn indicator(&self) -> &[bool] {
        &self.indicator
    }

    pub fn certified(&self) -> Option<&Certification> {
        self.certified.as_ref()
    }

    /// Number of on-cells.
    pub fn count(&self) -> usize {
        self.indicator.iter().filter(|&&b| b).count()
    }

    /// |E| / Q^d, the global density.
    pub fn density(&self) -> f64 {
        self.count() as f64 / self.grid.num_sites() as f64
    }

    /// Validates one box-side vector against the grid: positive, an integer
    /// multiple of the cell width, and at most one period.
    fn window_widths(&self, ell: &[f64]) -> Result<Vec<usize>> {
        if ell.len() != self.grid.dim {
            return Err(Error::invalid(format!(
                "box vector has {} entries, grid dimension is {}",
                ell.len(),
                self.grid.dim
            )));
        }
        let h = self.grid.h();
        let mut widths = Vec::with_capacity(ell.len());
        for (axis, &l) in ell.iter().enumerate() {
            if !(l > 0.0) || l > self.grid.period * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "box side L[{axis}] = {l} must lie in (0, Q]"
                )));
            }
            let w = l / h;
            let rounded = w.round();
            if (w - rounded).abs() > 1e-9 * w.max(1.0) || rounded < 1.0 {
                return Err(Error::invalid(format!(
                    "box side L[{axis}] = {l} is not an integer multiple of the cell width {h}"
                )));
            }
            widths.push((rounded as usize).min(self.grid.points));
        }
        Ok(widths)
    }

    /// Exact translate sweep: the minimum over all cyclic cell offsets of the
    /// fraction of the window covered by E.
    pub fn verify_thickness(&self, ell: &[f64]) -> Result<f64> {
        Ok(self.thickness_report(ell)?.rho_min)
    }

    /// Like [`ThickSet::verify_thickness`] but with the worst window attached.
    pub fn thickness_report(&self, ell: &[f64]) -> Result<ThicknessReport> {
        let widths = self.window_widths(ell)?;
        let n = self.grid.points;
        let d = self.grid.dim;
        // counts[x] accumulates the number of on-cells in the box anchored at
        // cell x. Axis-by-axis cyclic sliding windows keep everything in
        // exact integer arithmetic.
        let mut counts: Vec<u64> = self.indicator.iter().map(|&b| b as u64).collect();
        for axis in 0..d {
            let stride: usize = n.pow((d - 1 - axis) as u32);
            let lines_before: usize = n.pow(axis as u32);
            let mut line = vec![0u64; n];
            for before in 0..lines_before {
                for after in 0..stride {
                    let base = before * n * stride + after;
                    for j in 0..n {
                        line[j] = counts[base + j * stride];
                    }
                    let mut acc: u64 = line.iter().take(widths[axis]).sum();
                    for j in 0..n {
                        counts[base + j * stride] = acc;
                        acc -= line[j];
                        acc += line[(j + widths[axis]) % n];
                    }
                }
            }
        }
        let window_cells: u64 = widths.iter().map(|&w| w as u64).product();
        let mut worst = u64::MAX;
        let mut witness = 0usize;
        for (cell, &c) in counts.iter().enumerate() {
            if c < worst {
                worst = c;
                witness = cell;
            }
        }
        let coords = self.grid.decode(witness);
        Ok(ThicknessReport {
            rho_min: worst as f64 / window_cells as f64,
            witness: coords[..d].to_vec(),
            worst_count: worst,
            window_cells,
        })
    }

    /// Runs the sweep and stores the result as the certification.
    /// Fails when the verified minimum is zero (nothing to certify).
    pub fn certify(&mut self, ell: &[f64]) -> Result<f64> {
        let rho = self.verify_thickness(ell)?;
        if rho <= 0.0 {
            self.certified = None;
            return Err(Error::invalid(
                "set is not thick for this box: some translate misses it entirely".to_string(),
            ));
        }
        self.certified = Some(Certification { rho, ell: ell.to_vec() });
        Ok(rho)
    }

    /// Axis-aligned periodic stripes: on where (x_axis mod period) < on_width.
    ///
    /// Auto-certified with L = (period, ..., period); the verified rho equals
    /// on_width / period exactly because every period-long window sees the
    /// same on-count along the stripe axis.
    pub fn make_stripes(
        grid: GridSpec,
        on_width: f64,
        period: f64,
        axis: usize,
    ) -> Result<Self> {
        if axis >= grid.dim {
            return Err(Error::invalid(format!(
                "stripe axis {axis} out of range for dimension {}",
                grid.dim
            )));
        }
        let h = grid.h();
        let to_cells = |value: f64, name: &str| -> Result<usize> {
            let w = value / h;
            let rounded = w.round();
            if (w - rounded).abs() > 1e-9 * w.max(1.0) {
                return Err(Error::invalid(format!(
                    "{name} = {value} is not an integer multiple of the cell width {h}"
                )));
            }
            Ok(rounded as usize)
        };
        let on_cells = to_cells(on_width, "on_width")?;
        let period_cells = to_cells(period, "period")?;
        if on_cells == 0 {
            return Err(Error::invalid("on_width must be positive".to_string()));
        }
        if on_cells > period_cells || period_cells > grid.points {
            return Err(Error::invalid(
                "need on_width <= period <= Q, all cell-aligned".to_string(),
            ));
        }
        if grid.points % period_cells != 0 {
            return Err(Error::invalid(format!(
                "period {period} must divide the torus period {} for exact periodicity",
                grid.period
            )));
        }
        let indicator: Vec<bool> = (0..grid.num_sites())
            .map(|cell| {
                let coords = grid.decode(cell);
                coords[axis] % period_cells < on_cells
            })
            .collect();
        let mut set = Self::from_indicator(grid, indicator)?;
        set.certify(&vec![period; grid.dim])?;
        Ok(set)
    }

    /// Random thick set: inside every L-block, a uniform random subset of
    /// ceil(rho_target * block_cells) cells is switched on. Certified with
    /// the verified sweep minimum, which the block structure keeps near
    /// rho_target.
    pub fn make_random_thick(
        grid: GridSpec,
        rho_target: f64,
        ell: &[f64],
        seed: u64,
    ) -> Result<Self> {
        if !(rho_target > 0.0 && rho_target <= 1.0) {
            return Err(Error::invalid(format!(
                "rho_target must lie in (0, 1], got {rho_target}"
            )));
        }
        let mut probe = Self::from_indicator(grid, vec![false; grid.num_sites()])?;
        let widths = probe.window_widths(ell)?;
        for (axis, &w) in widths.iter().enumerate() {
            if grid.points % w != 0 {
                return Err(Error::invalid(format!(
                    "block side L[{axis}] must divide the torus so blocks tile exactly"
                )));
            }
        }
        let blocks_per_axis: Vec<usize> = widths.iter().map(|&w| grid.points / w).collect();
        let num_blocks: usize = blocks_per_axis.iter().product();
        let block_cells: usize = widths.iter().product();
        let on_per_block = (rho_target * block_cells as f64).ceil() as usize;
        let on_per_block = on_per_block.clamp(1, block_cells);

        let mut indicator = vec![false; grid.num_sites()];
        for block in 0..num_blocks {
            // Decode the block index into per-axis block coordinates.
            let mut rem = block;
            let mut block_coords = vec![0usize; grid.dim];
            for axis in (0..grid.dim).rev() {
                block_coords[axis] = rem % blocks_per_axis[axis];
                rem /= blocks_per_axis[axis];
            }
            // Partial Fisher-Yates over the block's cells.
            let mut cells: Vec<usize> = (0..block_cells).collect();
            let mut rng = Stream::new(seed, block as u64);
            for i in 0..on_per_block {
                let j = i + rng.below(block_cells - i);
                cells.swap(i, j);
            }
            for &local in cells.iter().take(on_per_block) {
                let mut rem = local;
                let mut coords = vec![0usize; grid.dim];
                for axis in (0..grid.dim).rev() {
                    coords[axis] = block_coords[axis] * widths[axis] + rem % widths[axis];
                    rem /= widths[axis];
                }
                indicator[grid.encode(&coords)] = true;
            }
        }
        probe.indicator = indicator;
        probe.certify(ell)?;
        Ok(probe)
    }

    /// JSON document with run-length-encoded on-cells.
    pub fn to_json(&self) -> Result<String> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut i = 0;
        while i < self.indicator.len() {
            if self.indicator[i] {
                let start = i;
                while i < self.indicator.len() && self.indicator[i] {
                    i += 1;
                }
                runs.push((start, i - start));
            } else {
                i += 1;
            }
        }
        let doc = ThickSetJson {
            schema_version: 1,
            grid: self.grid,
            runs,
            certified: self.certified.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ThickSetJson = serde_json::from_str(text)?;
        if doc.schema_version != 1 {
            return Err(Error::schema(format!(
                "unsupported thick-set schema_version {}",
                doc.schema_version
            )));
        }
        let mut indicator = vec![false; doc.grid.num_sites()];
        for &(start, len) in &doc.runs {
            let end = start
                .checked_add(len)
                .filter(|&e| e <= indicator.len())
                .ok_or_else(|| Error::schema("run exceeds grid size".to_string()))?;
            for cell in start..end {
                indicator[cell] = true;
            }
        }
        let mut set = Self::from_indicator(doc.grid, indicator)?;
        if let Some(cert) = doc.certified {
            // Re-verify rather than trusting the stored record.
            let rho = set.verify_thickness(&cert.ell)?;
            if rho + 1e-12 < cert.rho {
                return Err(Error::schema(format!(
                    "stored certification rho = {} fails re-verification (actual {})",
                    cert.rho, rho
                )));
            }
            set.certified = Some(Certification { rho, ell: cert.ell });
        }
        Ok(set)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThickSetJson {
    schema_version: u32,
    grid: GridSpec,
    runs: Vec<(usize, usize)>,
    certified: Option<Certification>,
}
