//! Piecewise-constant controls `h(t) ∈ L²` on `[0, end)`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_grids, Grid, RealField};
use crate::snapshot;

/// `h(t) = values[k]` for `knots[k] ≤ t < knots[k+1]` (with `knots[M+1] = end`),
/// and `h = 0` from `end` on.
#[derive(Debug, Clone)]
pub struct ControlPath {
    knots: Vec<f64>,
    values: Vec<RealField>,
    end: f64,
}

impl ControlPath {
    pub fn new(knots: Vec<f64>, values: Vec<RealField>, end: f64) -> Result<ControlPath> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::InvalidControl(format!(
                "{} knots for {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots[0] != 0.0 {
            return Err(Error::InvalidControl("first knot must be t = 0".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidControl("knots must be strictly increasing".into()));
        }
        if !(end > *knots.last().expect("non-empty")) || !end.is_finite() {
            return Err(Error::InvalidControl(format!("end {end} must exceed the last knot")));
        }
        let grid = values[0].grid().clone();
        for v in &values {
            check_grids(v.grid(), &grid)?;
            if v.values().iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidControl("control values must be finite".into()));
            }
        }
        Ok(ControlPath { knots, values, end })
    }

    /// `m` equal intervals on `[0, end)` with values from `f(k, t_k)`.
    pub fn uniform(m: usize, end: f64, f: impl Fn(usize, f64) -> RealField) -> Result<ControlPath> {
        if m == 0 {
            return Err(Error::InvalidControl("need at least one interval".into()));
        }
        let knots: Vec<f64> = (0..m).map(|k| end * k as f64 / m as f64).collect();
        let values = knots.iter().enumerate().map(|(k, &t)| f(k, t)).collect();
        ControlPath::new(knots, values, end)
    }

    pub fn zero(grid: &Arc<Grid>, end: f64) -> Result<ControlPath> {
        ControlPath::new(vec![0.0], vec![RealField::zeros(grid)], end)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.values[0].grid()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[RealField] {
        &self.values
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    /// Length of interval `k`.
    pub fn interval(&self, k: usize) -> f64 {
        let next = self.knots.get(k + 1).copied().unwrap_or(self.end);
        next - self.knots[k]
    }

    /// Index of the interval containing `t`; `None` outside `[0, end)`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        if !(t >= 0.0 && t < self.end) {
            return None;
        }
        Some(self.knots.partition_point(|&k| k <= t) - 1)
    }

    pub fn value_at(&self, t: f64) -> Option<&RealField> {
        self.index_at(t).map(|k| &self.values[k])
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.values().iter().all(|&x| x == 0.0))
    }

    pub fn map_values(&self, f: impl Fn(&RealField) -> RealField) -> ControlPath {
        ControlPath {
            knots: self.knots.clone(),
            values: self.values.iter().map(f).collect(),
            end: self.end,
        }
    }

    pub fn scaled(&self, a: f64) -> ControlPath {
        self.map_values(|v| v.scaled(a))
    }

    /// `½ Σ_k ‖h(t_k)‖²_{L²} (t_{k+1} − t_k)`.
    pub fn energy(&self) -> f64 {
        0.5 * (0..self.knots.len())
            .map(|k| self.values[k].l2_norm().powi(2) * self.interval(k))
            .sum::<f64>()
    }

    /// Writes `<stem>.json` (knots, end, values sidecar) plus the value rows.
    pub fn save(&self, path: &Path) -> Result<Vec<PathBuf>> {
        let values_side = path.with_extension("values.json");
        let fields: Vec<_> = self.values.iter().map(|v| v.to_complex()).collect();
        let refs: Vec<_> = fields.iter().collect();
        let (side, bin) = snapshot::write_rows(&values_side, &refs, 0.0)?;
        let file = ControlFile {
            knots: self.knots.clone(),
            end: self.end,
            values: side
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(vec![path.to_path_buf(), side, bin])
    }

    pub fn load(path: &Path, grid: &Arc<Grid>) -> Result<ControlPath> {
        let file: ControlFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        let side = path.parent().unwrap_or_else(|| Path::new(".")).join(&file.values);
        let (_, rows) = snapshot::read_rows_on(&side, grid)?;
        let values = rows
            .iter()
            .map(|f| {
                if f.values().iter().any(|c| c.im != 0.0) {
                    return Err(Error::InvalidControl("control values must be real".into()));
                }
                RealField::new(grid.clone(), f.values().iter().map(|c| c.re).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        ControlPath::new(file.knots, values, file.end)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlFile {
    knots: Vec<f64>,
    end: f64,
    values: String,
}
