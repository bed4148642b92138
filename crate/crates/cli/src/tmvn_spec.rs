//! Constraint spec files for `sample-tmvn`.
//!
//! ```text
//! # positive quadrant of a standard bivariate normal
//! mean: 0 0
//! cov: 1 0 0 1
//! start: 1 1
//! -1 0 0
//! 0 -1 0
//! ```
//!
//! `mean:` and `cov:` (row-major) are required, `start:` defaults to the
//! mean. Every other non-blank line not starting with `#` is one wall
//! `f₁ … f_d g`, meaning `f·x ≤ g`.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector};

use copula_hmc::gaussian::CovarianceMatrix;
use copula_hmc::hmc::{GaussianTarget, LinearConstraintSet};

#[derive(Debug, Clone, PartialEq)]
pub struct TmvnSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub start: Option<Vec<f64>>,
    pub walls: Vec<(Vec<f64>, f64)>,
}

fn numbers(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| anyhow!("line {lineno}: '{t}' is not a number")))
        .collect()
}

impl TmvnSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let (mut mean, mut cov, mut start) = (None, None, None);
        let mut walls = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("mean:") {
                mean = Some(numbers(rest, lineno)?);
            } else if let Some(rest) = line.strip_prefix("cov:") {
                cov = Some(numbers(rest, lineno)?);
            } else if let Some(rest) = line.strip_prefix("start:") {
                start = Some(numbers(rest, lineno)?);
            } else {
                walls.push((lineno, numbers(line, lineno)?));
            }
        }
        let mean: Vec<f64> = mean.ok_or_else(|| anyhow!("missing 'mean:' line"))?;
        let d = mean.len();
        if d == 0 {
            bail!("'mean:' line is empty");
        }
        let cov = cov.ok_or_else(|| anyhow!("missing 'cov:' line"))?;
        if cov.len() != d * d {
            bail!("'cov:' has {} entries, expected {} for d = {d}", cov.len(), d * d);
        }
        if let Some(s) = &start {
            if s.len() != d {
                bail!("'start:' has {} entries, expected {d}", s.len());
            }
        }
        let walls = walls
            .into_iter()
            .map(|(lineno, mut row)| {
                if row.len() != d + 1 {
                    bail!("line {lineno}: wall has {} numbers, expected {}", row.len(), d + 1);
                }
                let g = row.pop().unwrap();
                Ok((row, g))
            })
            .collect::<Result<_>>()?;
        Ok(Self { mean, cov, start, walls })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn target(&self) -> Result<GaussianTarget> {
        let d = self.dim();
        let cov = CovarianceMatrix::new(DMatrix::from_row_slice(d, d, &self.cov))?;
        Ok(GaussianTarget::new(DVector::from_column_slice(&self.mean), cov)?)
    }

    pub fn constraints(&self) -> Result<LinearConstraintSet> {
        Ok(LinearConstraintSet::from_rows(&self.walls)?)
    }

    pub fn start_point(&self) -> DVector<f64> {
        DVector::from_column_slice(self.start.as_deref().unwrap_or(&self.mean))
    }
}
