//! Ordinal datasets, missingness masks and CSV ingestion.
//!
//! Levels are stored as `u8` codes `1..=D_j`. The code `0` is reserved as
//! the sentinel for masked cells of an [`IncompleteDataset`] and never
//! appears in a valid [`OrdinalDataset`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Sentinel stored in masked cells.
pub const MISSING: u8 = 0;

/// Largest supported number of levels for a single variable.
pub const MAX_CARDINALITY: usize = u8::MAX as usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub cardinality: usize,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Result<Self> {
        let name = name.into();
        if !(2..=MAX_CARDINALITY).contains(&cardinality) {
            return Err(Error::InvalidArgument(format!(
                "variable {name}: cardinality {cardinality} outside 2..={MAX_CARDINALITY}"
            )));
        }
        Ok(VariableSpec { name, cardinality })
    }
}

fn check_variables(variables: &[VariableSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for v in variables {
        if !(2..=MAX_CARDINALITY).contains(&v.cardinality) {
            return Err(Error::InvalidArgument(format!(
                "variable {}: cardinality {} outside 2..={MAX_CARDINALITY}",
                v.name, v.cardinality
            )));
        }
        if !seen.insert(v.name.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate variable name {}", v.name)));
        }
    }
    Ok(())
}

/// A fully observed `n × p` matrix of ordinal levels, stored by column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrdinalDataset {
    variables: Vec<VariableSpec>,
    columns: Vec<Vec<u8>>,
    n: usize,
}

impl OrdinalDataset {
    /// Builds a dataset from columns, validating every level.
    pub fn new(variables: Vec<VariableSpec>, columns: Vec<Vec<u8>>) -> Result<Self> {
        let ds = Self::from_parts(variables, columns)?;
        for (j, col) in ds.columns.iter().enumerate() {
            let d = ds.variables[j].cardinality;
            if let Some(i) = col.iter().position(|&v| v == 0 || v as usize > d) {
                return Err(Error::Data(format!(
                    "row {}, column {}: level {} outside 1..={d}",
                    i + 1,
                    ds.variables[j].name,
                    col[i]
                )));
            }
        }
        Ok(ds)
    }

    /// Builds a dataset from row-major rows.
    pub fn from_rows(variables: Vec<VariableSpec>, rows: &[Vec<u8>]) -> Result<Self> {
        let p = variables.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); p];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Data(format!(
                    "row {} has {} cells, expected {p}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                columns[j].push(v);
            }
        }
        Self::new(variables, columns)
    }

    /// Shape checks only; masked sentinels allowed.
    fn from_parts(variables: Vec<VariableSpec>, columns: Vec<Vec<u8>>) -> Result<Self> {
        check_variables(&variables)?;
        if variables.len() != columns.len() {
            return Err(Error::InvalidArgument(format!(
                "{} variables but {} columns",
                variables.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidArgument("columns have unequal lengths".into()));
        }
        Ok(OrdinalDataset {
            variables,
            columns,
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn cardinality(&self, j: usize) -> usize {
        self.variables[j].cardinality
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.cardinality).collect()
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<u8>] {
        &self.columns
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.columns[j][i]
    }

    pub fn row(&self, i: usize) -> Vec<u8> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> OrdinalDataset {
        let columns = self
            .columns
            .iter()
            .map(|c| idx.iter().map(|&i| c[i]).collect())
            .collect();
        OrdinalDataset {
            variables: self.variables.clone(),
            columns,
            n: idx.len(),
        }
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, level: u8) {
        self.columns[j][i] = level;
    }

    pub(crate) fn column_mut(&mut self, j: usize) -> &mut [u8] {
        &mut self.columns[j]
    }
}

/// Missingness indicators, `true` meaning missing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    columns: Vec<Vec<bool>>,
    n: usize,
}

impl MaskMatrix {
    pub fn empty(n: usize, p: usize) -> Self {
        MaskMatrix {
            columns: vec![vec![false; n]; p],
            n,
        }
    }

    pub fn from_columns(columns: Vec<Vec<bool>>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidArgument("mask columns have unequal lengths".into()));
        }
        Ok(MaskMatrix { columns, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.columns[j][i]
    }

    pub fn column(&self, j: usize) -> &[bool] {
        &self.columns[j]
    }

    pub fn set(&mut self, i: usize, j: usize, missing: bool) {
        self.columns[j][i] = missing;
    }

    pub fn missing_count(&self, j: usize) -> usize {
        self.columns[j].iter().filter(|&&m| m).count()
    }

    pub fn total_missing(&self) -> usize {
        (0..self.p()).map(|j| self.missing_count(j)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.iter().all(|c| c.iter().all(|&m| !m))
    }

    pub fn missing_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.columns[j][i]).collect()
    }

    pub fn observed_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.columns[j][i]).collect()
    }

    /// Number of rows with no missing cell.
    pub fn complete_cases(&self) -> usize {
        (0..self.n)
            .filter(|&i| self.columns.iter().all(|c| !c[i]))
            .count()
    }
}

/// A dataset together with its missingness mask. Masked cells hold
/// [`MISSING`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncompleteDataset {
    data: OrdinalDataset,
    mask: MaskMatrix,
}

impl IncompleteDataset {
    /// Builds from columns in which `0` marks a missing cell.
    pub fn from_columns(variables: Vec<VariableSpec>, columns: Vec<Vec<u8>>) -> Result<Self> {
        let data = OrdinalDataset::from_parts(variables, columns)?;
        let mut mask = MaskMatrix::empty(data.n(), data.p());
        for j in 0..data.p() {
            let d = data.cardinality(j);
            for (i, &v) in data.column(j).iter().enumerate() {
                if v == MISSING {
                    mask.set(i, j, true);
                } else if v as usize > d {
                    return Err(Error::Data(format!(
                        "row {}, column {}: level {v} outside 1..={d}",
                        i + 1,
                        data.variables()[j].name
                    )));
                }
            }
        }
        Ok(IncompleteDataset { data, mask })
    }

    /// Masks the cells of a complete dataset.
    pub fn from_complete(complete: &OrdinalDataset, mask: MaskMatrix) -> Result<Self> {
        if mask.n() != complete.n() || mask.p() != complete.p() {
            return Err(Error::InvalidArgument(format!(
                "mask is {}x{} but data is {}x{}",
                mask.n(),
                mask.p(),
                complete.n(),
                complete.p()
            )));
        }
        let mut data = complete.clone();
        for j in 0..data.p() {
            let col = data.column_mut(j);
            for (v, &m) in col.iter_mut().zip(mask.column(j)) {
                if m {
                    *v = MISSING;
                }
            }
        }
        Ok(IncompleteDataset { data, mask })
    }

    pub fn fully_observed(complete: &OrdinalDataset) -> Self {
        IncompleteDataset {
            data: complete.clone(),
            mask: MaskMatrix::empty(complete.n(), complete.p()),
        }
    }

    /// Underlying cells; masked cells hold [`MISSING`].
    pub fn data(&self) -> &OrdinalDataset {
        &self.data
    }

    pub fn mask(&self) -> &MaskMatrix {
        &self.mask
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn variables(&self) -> &[VariableSpec] {
        self.data.variables()
    }

    pub fn cardinality(&self, j: usize) -> usize {
        self.data.cardinality(j)
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.data.cardinalities()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<u8> {
        if self.mask.is_missing(i, j) {
            None
        } else {
            Some(self.data.get(i, j))
        }
    }

    /// Observed-level counts for column `j`, indexed by `level - 1`.
    pub fn observed_counts(&self, j: usize) -> Vec<usize> {
        let mut counts = vec![0usize; self.cardinality(j)];
        for (i, &v) in self.data.column(j).iter().enumerate() {
            if !self.mask.is_missing(i, j) {
                counts[v as usize - 1] += 1;
            }
        }
        counts
    }

    /// Pmf of the observed values of column `j`.
    pub fn observed_pmf(&self, j: usize) -> Vec<f64> {
        let counts = self.observed_counts(j);
        let total: usize = counts.iter().sum();
        counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect()
    }

    /// Rejects inputs with a column that has no observed value.
    pub fn check_imputable(&self) -> Result<()> {
        for j in 0..self.p() {
            if self.mask.missing_count(j) == self.n() && self.n() > 0 {
                return Err(Error::Data(format!(
                    "column {} has no observed values",
                    self.variables()[j].name
                )));
            }
        }
        Ok(())
    }

    /// Fills masked cells from `fill(i, j)` and returns the completed data.
    pub fn complete_with(&self, mut fill: impl FnMut(usize, usize) -> u8) -> OrdinalDataset {
        let mut out = self.data.clone();
        for j in 0..self.p() {
            for i in self.mask.missing_rows(j) {
                out.set(i, j, fill(i, j));
            }
        }
        out
    }
}

/// Output of any imputation method.
#[derive(Clone, Debug)]
pub struct ImputationResult {
    pub method: String,
    pub seed: u64,
    pub completed: Vec<OrdinalDataset>,
    pub diagnostics: BTreeMap<String, f64>,
    /// Per-sweep convergence records from the mixture samplers.
    pub trace: Vec<crate::stick::SweepTrace>,
}

impl ImputationResult {
    /// Checks the observed-cell agreement and completeness invariants.
    pub fn verify(&self, input: &IncompleteDataset) -> Result<()> {
        for (l, z) in self.completed.iter().enumerate() {
            if z.n() != input.n() || z.p() != input.p() {
                return Err(Error::Numerical(format!("completed dataset {l} has wrong shape")));
            }
            for j in 0..z.p() {
                let d = z.cardinality(j);
                for i in 0..z.n() {
                    let v = z.get(i, j);
                    if v == MISSING || v as usize > d {
                        return Err(Error::Numerical(format!(
                            "completed dataset {l}: cell ({i},{j}) holds invalid level {v}"
                        )));
                    }
                    if let Some(obs) = input.get(i, j) {
                        if obs != v {
                            return Err(Error::Numerical(format!(
                                "completed dataset {l}: observed cell ({i},{j}) changed"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reads a data dictionary: one `name,cardinality` pair per line.
pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Vec<VariableSpec>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dictionary(&text)
}

pub fn parse_dictionary(text: &str) -> Result<Vec<VariableSpec>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, card) = line
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("dictionary line {}: expected name,cardinality", lineno + 1)))?;
        let (name, card) = (name.trim(), card.trim());
        if lineno == 0 && card.eq_ignore_ascii_case("cardinality") {
            continue;
        }
        let d: usize = card
            .parse()
            .map_err(|_| Error::Config(format!("dictionary line {}: bad cardinality {card:?}", lineno + 1)))?;
        out.push(VariableSpec::new(name, d).map_err(|e| Error::Config(e.to_string()))?);
    }
    check_variables(&out).map_err(|e| Error::Config(e.to_string()))?;
    Ok(out)
}

pub fn save_dictionary(variables: &[VariableSpec], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text: String = variables
        .iter()
        .map(|v| format!("{},{}\n", v.name, v.cardinality))
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn is_na(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

/// Loads a CSV whose header names the dictionary's variables. Empty cells
/// and `NA` are missing.
pub fn load_csv(path: impl AsRef<Path>, dictionary: &[VariableSpec]) -> Result<IncompleteDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, dictionary)
}

pub fn read_csv<R: std::io::Read>(reader: R, dictionary: &[VariableSpec]) -> Result<IncompleteDataset> {
    check_variables(dictionary)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let by_name: HashMap<&str, usize> = dictionary
        .iter()
        .enumerate()
        .map(|(j, v)| (v.name.as_str(), j))
        .collect();
    let mut slot = Vec::with_capacity(header.len());
    let mut seen = HashSet::new();
    for name in header.iter() {
        let name = name.trim();
        let j = *by_name
            .get(name)
            .ok_or_else(|| Error::Data(format!("unknown column {name:?}")))?;
        if !seen.insert(j) {
            return Err(Error::Data(format!("duplicate column {name:?}")));
        }
        slot.push(j);
    }
    if let Some(v) = dictionary.iter().enumerate().find(|(j, _)| !seen.contains(j)) {
        return Err(Error::Data(format!("column {:?} missing from file", v.1.name)));
    }

    let mut columns = vec![Vec::new(); dictionary.len()];
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != slot.len() {
            return Err(Error::Data(format!(
                "row {row}: {} fields, expected {}",
                record.len(),
                slot.len()
            )));
        }
        for (field, &j) in record.iter().zip(&slot) {
            let v = &dictionary[j];
            let level = if is_na(field) {
                MISSING
            } else {
                let x: i64 = field.trim().parse().map_err(|_| {
                    Error::Data(format!("row {row}, column {}: not an integer: {field:?}", v.name))
                })?;
                if x < 1 || x as usize > v.cardinality {
                    return Err(Error::Data(format!(
                        "row {row}, column {}: level {x} outside 1..={}",
                        v.name, v.cardinality
                    )));
                }
                x as u8
            };
            columns[j].push(level);
        }
    }
    IncompleteDataset::from_columns(dictionary.to_vec(), columns)
}

/// Writes an incomplete dataset; missing cells become empty fields.
pub fn save_csv(data: &IncompleteDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, file)
}

pub fn write_csv<W: std::io::Write>(data: &IncompleteDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(data.variables().iter().map(|v| v.name.as_str()))?;
    let mut buf = Vec::with_capacity(data.p());
    for i in 0..data.n() {
        buf.clear();
        for j in 0..data.p() {
            buf.push(match data.get(i, j) {
                Some(v) => v.to_string(),
                None => String::new(),
            });
        }
        w.write_record(&buf)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_complete_csv(data: &OrdinalDataset, path: impl AsRef<Path>) -> Result<()> {
    save_csv(&IncompleteDataset::fully_observed(data), path)
}

/// Simple random sample of `n_sample` rows without replacement.
pub fn draw_sample(population: &OrdinalDataset, n_sample: usize, rng_seed: u64) -> Result<OrdinalDataset> {
    if n_sample > population.n() {
        return Err(Error::InvalidArgument(format!(
            "sample size {n_sample} exceeds population size {}",
            population.n()
        )));
    }
    let mut rng = rng::from_seed(rng_seed);
    let idx = index::sample(&mut rng, population.n(), n_sample).into_vec();
    Ok(population.select_rows(&idx))
}

/// Empirical pmf of column `var`, indexed by `level - 1`.
pub fn marginal_pmf(data: &OrdinalDataset, var: usize) -> Vec<f64> {
    let mut counts = vec![0usize; data.cardinality(var)];
    for &v in data.column(var) {
        counts[v as usize - 1] += 1;
    }
    let n = data.n().max(1) as f64;
    counts.iter().map(|&c| c as f64 / n).collect()
}
