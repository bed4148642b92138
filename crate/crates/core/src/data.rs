//! Ordinal data, per-column level partitions and the rank-order constraints
//! that define the feasible latent region.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Integer-coded `n × p` observation matrix, stored column-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrdinalDataset {
    columns: Vec<Vec<i64>>,
    n: usize,
    column_names: Option<Vec<String>>,
}

impl OrdinalDataset {
    /// Builds a dataset from columns of equal, non-zero length.
    pub fn from_columns(columns: Vec<Vec<i64>>, column_names: Option<Vec<String>>) -> Result<Self> {
        let p = columns.len();
        if p == 0 {
            return Err(Error::InvalidDataset("dataset has no columns".into()));
        }
        let n = columns[0].len();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        if let Some(j) = columns.iter().position(|c| c.len() != n) {
            return Err(Error::InvalidDataset(format!(
                "column {} has {} rows, expected {n}",
                j + 1,
                columns[j].len()
            )));
        }
        if let Some(names) = &column_names {
            if names.len() != p {
                return Err(Error::InvalidDataset(format!(
                    "{} column names for {p} columns",
                    names.len()
                )));
            }
        }
        Ok(Self {
            columns,
            n,
            column_names,
        })
    }

    /// Builds a dataset from row-major records.
    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::with_capacity(rows.len()); p];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Parse {
                    row: i + 1,
                    column: row.len().min(p) + 1,
                    message: format!("expected {p} fields, found {}", row.len()),
                });
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Self::from_columns(columns, None)
    }

    /// Parses comma-separated integer data. Row numbers in errors are 1-based
    /// line numbers of the input, header included.
    pub fn from_csv_reader<R: std::io::Read>(reader: R, has_header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);

        let column_names = if has_header {
            let headers = rdr.headers().map_err(|e| csv_error(e, 1))?;
            Some(headers.iter().map(str::to_owned).collect::<Vec<_>>())
        } else {
            None
        };
        let offset = usize::from(has_header);
        let mut width = column_names.as_ref().map(Vec::len);
        let mut columns: Vec<Vec<i64>> = Vec::new();

        for (idx, record) in rdr.records().enumerate() {
            let line = idx + 1 + offset;
            let record = record.map_err(|e| csv_error(e, line))?;
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            let expected = *width.get_or_insert(record.len());
            if columns.is_empty() {
                columns = vec![Vec::new(); expected];
            }
            if record.len() != expected {
                return Err(Error::Parse {
                    row: line,
                    column: record.len().min(expected) + 1,
                    message: format!("ragged row: expected {expected} fields, found {}", record.len()),
                });
            }
            for (j, cell) in record.iter().enumerate() {
                if cell.is_empty() {
                    return Err(Error::Parse {
                        row: line,
                        column: j + 1,
                        message: "missing value".into(),
                    });
                }
                let v = cell.parse::<i64>().map_err(|_| Error::Parse {
                    row: line,
                    column: j + 1,
                    message: format!("not an integer: {cell:?}"),
                })?;
                columns[j].push(v);
            }
        }
        if columns.is_empty() {
            return Err(Error::InvalidDataset("no data rows".into()));
        }
        Self::from_columns(columns, column_names)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[i64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<i64>] {
        &self.columns
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn value(&self, row: usize, col: usize) -> i64 {
        self.columns[col][row]
    }

    /// Level partition of every column.
    pub fn partitions(&self) -> Vec<LevelPartition> {
        self.columns.iter().map(|c| build_level_partition(c)).collect()
    }
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    Error::Parse {
        row: e.position().map_or(line, |p| p.line() as usize),
        column: 0,
        message: e.to_string(),
    }
}

/// Reads an ordinal dataset from a CSV file.
pub fn load_dataset(path: impl AsRef<Path>, has_header: bool) -> Result<OrdinalDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    OrdinalDataset::from_csv_reader(std::io::BufReader::new(file), has_header)
}

/// One observed value of a column and the rows attaining it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Level {
    pub value: i64,
    pub rows: Vec<usize>,
}

/// Rows of one column grouped by observed value, in increasing value order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelPartition {
    levels: Vec<Level>,
    level_of: Vec<usize>,
}

/// Groups the (0-based) rows of `column` by value.
pub fn build_level_partition(column: &[i64]) -> LevelPartition {
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &v) in column.iter().enumerate() {
        groups.entry(v).or_default().push(i);
    }
    let levels: Vec<Level> = groups
        .into_iter()
        .map(|(value, rows)| Level { value, rows })
        .collect();
    let mut level_of = vec![0; column.len()];
    for (k, level) in levels.iter().enumerate() {
        for &i in &level.rows {
            level_of[i] = k;
        }
    }
    LevelPartition { levels, level_of }
}

impl LevelPartition {
    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn len(&self) -> usize {
        self.level_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.level_of.is_empty()
    }

    /// Index of the level containing `row`.
    pub fn level_of(&self, row: usize) -> usize {
        self.level_of[row]
    }

    pub fn level_index(&self) -> &[usize] {
        &self.level_of
    }

    /// Rows of level `k`.
    pub fn rows(&self, k: usize) -> &[usize] {
        &self.levels[k].rows
    }

    /// `Σ_k |l_k|·|l_{k+1}|`, the number of adjacent-level order constraints.
    pub fn constraint_count(&self) -> usize {
        self.levels
            .windows(2)
            .map(|w| w[0].rows.len() * w[1].rows.len())
            .sum()
    }

    /// First adjacent-level pair `(lower, upper)` with `z[lower] >= z[upper]`,
    /// found in O(n) through per-level extrema.
    pub fn first_violation(&self, z: &[f64]) -> Option<(usize, usize)> {
        for w in self.levels.windows(2) {
            let (lo, lo_val) = argmax(&w[0].rows, z);
            let (hi, hi_val) = argmin(&w[1].rows, z);
            if lo_val.partial_cmp(&hi_val) != Some(std::cmp::Ordering::Less) {
                return Some((lo, hi));
            }
        }
        None
    }

    pub fn is_satisfied(&self, z: &[f64]) -> bool {
        self.first_violation(z).is_none()
    }
}

fn argmax(rows: &[usize], z: &[f64]) -> (usize, f64) {
    rows.iter()
        .map(|&i| (i, z[i]))
        .fold((rows[0], f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 || cur.1.is_nan() { cur } else { best })
}

fn argmin(rows: &[usize], z: &[f64]) -> (usize, f64) {
    rows.iter()
        .map(|&i| (i, z[i]))
        .fold((rows[0], f64::INFINITY), |best, cur| if cur.1 < best.1 || cur.1.is_nan() { cur } else { best })
}

/// Adjacent-level order constraints `z[lower] - z[upper] <= 0` of one column,
/// stored as sparse index pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankConstraintSet {
    pairs: Vec<(usize, usize)>,
}

/// Enumerates every `(lower, upper)` pair spanning adjacent levels.
pub fn generate_rank_constraints(partition: &LevelPartition) -> RankConstraintSet {
    let mut pairs = Vec::with_capacity(partition.constraint_count());
    for w in partition.levels().windows(2) {
        for &lo in &w[0].rows {
            for &hi in &w[1].rows {
                pairs.push((lo, hi));
            }
        }
    }
    RankConstraintSet { pairs }
}

impl RankConstraintSet {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Dense `(F, g)` with `F` of shape `m × n`: `+1` at the lower row, `-1`
    /// at the upper row, `g = 0`.
    pub fn dense(&self, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let f = self
            .pairs
            .iter()
            .map(|&(lo, hi)| {
                let mut row = vec![0.0; n];
                row[lo] = 1.0;
                row[hi] = -1.0;
                row
            })
            .collect();
        (f, vec![0.0; self.pairs.len()])
    }

    /// Whether every pair holds strictly.
    pub fn is_satisfied(&self, z: &[f64]) -> bool {
        self.pairs.iter().all(|&(lo, hi)| z[lo] < z[hi])
    }
}
