//! Decision maps: posterior vectors and their argmax over a rectangular
//! window of the observation plane, with CSV, PGM and PPM export.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::output::{csv_bytes, fmt_f64, Outputs};

/// Allowed deviation of a cell's posterior total from 1.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// RGB colors for argmax indices 0..4.
pub const PALETTE: [[u8; 3]; 4] = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0]];

/// Window `(xmin, xmax, ymin, ymax)` and resolution of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub window: [f64; 4],
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            window: [-3.0, 3.0, -3.0, 3.0],
            nx: 201,
            ny: 201,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> LabResult<()> {
        let [x0, x1, y0, y1] = self.window;
        if !(self.window.iter().all(|v| v.is_finite()) && x0 < x1 && y0 < y1) {
            return Err(LabError::Validation(format!(
                "grid window {:?} must satisfy xmin < xmax and ymin < ymax",
                self.window
            )));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(LabError::Validation("grid resolution must be positive".into()));
        }
        Ok(())
    }

    /// Center of the cell in `row` (0 at the top, largest y) and `col`
    /// (0 at the left, smallest x).
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let [x0, x1, y0, y1] = self.window;
        let dx = (x1 - x0) / self.nx as f64;
        let dy = (y1 - y0) / self.ny as f64;
        [x0 + (col as f64 + 0.5) * dx, y1 - (row as f64 + 0.5) * dy]
    }
}

/// Posterior vectors over a grid in row-major order (top row first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionGrid {
    pub spec: GridSpec,
    pub posteriors: Vec<Vec<f64>>,
    pub argmax: Vec<usize>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

impl DecisionGrid {
    /// Evaluates `posterior` at every cell center. Rows are computed in
    /// parallel; the result does not depend on the thread count.
    pub fn evaluate<F>(spec: GridSpec, posterior: F) -> LabResult<Self>
    where
        F: Fn(&[f64]) -> LabResult<Vec<f64>> + Sync,
    {
        spec.validate()?;
        let rows: Vec<Vec<Vec<f64>>> = (0..spec.ny)
            .into_par_iter()
            .map(|r| {
                (0..spec.nx)
                    .map(|c| posterior(&spec.cell_center(r, c)))
                    .collect::<LabResult<Vec<_>>>()
            })
            .collect::<LabResult<_>>()?;
        DecisionGrid::from_posteriors(spec, rows.into_iter().flatten().collect())
    }

    /// Builds a grid from per-cell posteriors, checking normalization.
    pub fn from_posteriors(spec: GridSpec, posteriors: Vec<Vec<f64>>) -> LabResult<Self> {
        spec.validate()?;
        if posteriors.len() != spec.nx * spec.ny {
            return Err(LabError::Validation(format!(
                "grid has {} cells, expected {}",
                posteriors.len(),
                spec.nx * spec.ny
            )));
        }
        let k = posteriors.first().map_or(0, Vec::len);
        for (i, p) in posteriors.iter().enumerate() {
            let total: f64 = p.iter().sum();
            if p.len() != k || k == 0 || (total - 1.0).abs() > NORMALIZATION_TOL || p.iter().any(|v| *v < 0.0) {
                return Err(LabError::Runtime(format!(
                    "posterior at cell {i} is not a probability vector (total {total})"
                )));
            }
        }
        let argmax = posteriors.iter().map(|p| argmax_lowest(p)).collect();
        Ok(DecisionGrid {
            spec,
            posteriors,
            argmax,
        })
    }

    pub fn states(&self) -> usize {
        self.posteriors.first().map_or(0, Vec::len)
    }

    /// Fraction of cells where two grids agree on the argmax.
    pub fn agreement(&self, other: &DecisionGrid) -> f64 {
        let same = self
            .argmax
            .iter()
            .zip(&other.argmax)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.argmax.len().max(1) as f64
    }

    /// CSV rows `x, y, p0, ..., argmax`.
    pub fn csv(&self) -> LabResult<Vec<u8>> {
        let k = self.states();
        let mut header = vec!["x".to_string(), "y".to_string()];
        header.extend((0..k).map(|i| format!("p{i}")));
        header.push("argmax".into());
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let nx = self.spec.nx;
        let rows = self.posteriors.iter().zip(&self.argmax).enumerate().map(|(i, (p, a))| {
            let [x, y] = self.spec.cell_center(i / nx, i % nx);
            let mut row = vec![fmt_f64(x), fmt_f64(y)];
            row.extend(p.iter().map(|v| fmt_f64(*v)));
            row.push(a.to_string());
            row
        });
        csv_bytes(&header_refs, rows)
    }

    fn check_four_states(&self) -> LabResult<()> {
        if self.states() > PALETTE.len() {
            return Err(LabError::Validation(format!(
                "image export supports at most {} states, grid has {}",
                PALETTE.len(),
                self.states()
            )));
        }
        Ok(())
    }

    /// Binary PGM with argmax `i` drawn as gray level `85 i`.
    pub fn pgm(&self) -> LabResult<Vec<u8>> {
        self.check_four_states()?;
        let mut out = format!("P5\n{} {}\n255\n", self.spec.nx, self.spec.ny).into_bytes();
        out.extend(self.argmax.iter().map(|a| (*a as u8) * 85));
        Ok(out)
    }

    /// Binary PPM with argmax drawn in the fixed palette.
    pub fn ppm(&self) -> LabResult<Vec<u8>> {
        self.check_four_states()?;
        let mut out = format!("P6\n{} {}\n255\n", self.spec.nx, self.spec.ny).into_bytes();
        for a in &self.argmax {
            out.extend_from_slice(&PALETTE[*a]);
        }
        Ok(out)
    }

    /// Stages `<stem>.csv`, `<stem>.pgm` and `<stem>.ppm`.
    pub fn stage(&self, outputs: &mut Outputs, stem: &str) -> LabResult<()> {
        outputs.add(format!("{stem}.csv"), self.csv()?);
        outputs.add(format!("{stem}.pgm"), self.pgm()?);
        outputs.add(format!("{stem}.ppm"), self.ppm()?);
        Ok(())
    }
}

/// Writes the CSV, PGM and PPM renderings of `grid` next to each other in
/// `dir`, named after `stem`.
pub fn export_grid(grid: &DecisionGrid, dir: &Path, stem: &str) -> LabResult<()> {
    let mut outputs = Outputs::new();
    grid.stage(&mut outputs, stem)?;
    outputs.commit(dir)?;
    Ok(())
}
