//! Domain types: datasets, principal strata and estimation targets.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MediatorKind {
    Binary,
    /// Levels `0..=m_max`.
    Categorical(u32),
    ContinuousGaussian,
}

impl MediatorKind {
    /// Number of support points for discrete mediators.
    pub fn levels(&self) -> Option<usize> {
        match *self {
            MediatorKind::Binary => Some(2),
            MediatorKind::Categorical(m_max) => Some(m_max as usize + 1),
            MediatorKind::ContinuousGaussian => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.levels().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monotonicity {
    /// D1 >= D0.
    Standard,
    /// D0 = 0 for every unit.
    Strong,
}

/// Joint potential values `U = d1 d0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Stratum {
    pub d1: u8,
    pub d0: u8,
}

impl TryFrom<String> for Stratum {
    type Error = Error;

    fn try_from(s: String) -> Result<Stratum> {
        s.parse()
    }
}

impl From<Stratum> for String {
    fn from(s: Stratum) -> String {
        s.label()
    }
}

impl Stratum {
    pub const COMPLIER: Stratum = Stratum { d1: 1, d0: 0 };
    pub const ALWAYS: Stratum = Stratum { d1: 1, d0: 1 };
    pub const NEVER: Stratum = Stratum { d1: 0, d0: 0 };

    pub fn new(d1: u8, d0: u8) -> Result<Stratum> {
        if d1 > 1 || d0 > 1 || (d1 == 0 && d0 == 1) {
            return Err(Error::InadmissibleStratum(format!("{d1}{d0}")));
        }
        Ok(Stratum { d1, d0 })
    }

    /// `k = |d1 - d0|`.
    pub fn k(&self) -> f64 {
        (self.d1 as i8 - self.d0 as i8).abs() as f64
    }

    /// Companion cell `(z*, d*)`: 11 for stratum 10, 10 for 00, 01 for 11.
    pub fn companion(&self) -> (u8, u8) {
        match (self.d1, self.d0) {
            (1, 0) => (1, 1),
            (0, 0) => (1, 0),
            (1, 1) => (0, 1),
            _ => unreachable!("defier stratum has no companion cell"),
        }
    }

    pub fn admissible(&self, mode: Monotonicity) -> bool {
        strata_for_mode(mode).contains(self)
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.d1, self.d0)
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.d1, self.d0)
    }
}

impl FromStr for Stratum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Stratum> {
        match s.trim() {
            "10" => Ok(Stratum::COMPLIER),
            "11" => Ok(Stratum::ALWAYS),
            "00" => Ok(Stratum::NEVER),
            other => Err(Error::InadmissibleStratum(other.to_string())),
        }
    }
}

/// Admissible strata, in reporting order.
pub fn strata_for_mode(mode: Monotonicity) -> Vec<Stratum> {
    match mode {
        Monotonicity::Standard => vec![Stratum::COMPLIER, Stratum::ALWAYS, Stratum::NEVER],
        Monotonicity::Strong => vec![Stratum::COMPLIER, Stratum::NEVER],
    }
}

/// Index of `theta_{d1 d0}^{(z z')}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TargetIndex {
    pub z: u8,
    pub z_prime: u8,
    pub stratum: Stratum,
}

impl TargetIndex {
    pub fn new(z: u8, z_prime: u8, stratum: Stratum) -> Result<TargetIndex> {
        if z > 1 || z_prime > 1 {
            return Err(Error::InvalidArgument("z and z' must be 0 or 1".into()));
        }
        if z == 0 && z_prime == 1 {
            return Err(Error::UnsupportedTarget { z, z_prime });
        }
        Ok(TargetIndex {
            z,
            z_prime,
            stratum,
        })
    }

    /// Treatment value `d_z` implied by the stratum.
    pub fn d_z(&self) -> u8 {
        self.d_for(self.z)
    }

    pub fn d_z_prime(&self) -> u8 {
        self.d_for(self.z_prime)
    }

    fn d_for(&self, z: u8) -> u8 {
        if z == 1 {
            self.stratum.d1
        } else {
            self.stratum.d0
        }
    }

    /// The three targets needed for effects in one stratum: (1,1), (1,0), (0,0).
    pub fn effect_targets(stratum: Stratum) -> [TargetIndex; 3] {
        [
            TargetIndex {
                z: 1,
                z_prime: 1,
                stratum,
            },
            TargetIndex {
                z: 1,
                z_prime: 0,
                stratum,
            },
            TargetIndex {
                z: 0,
                z_prime: 0,
                stratum,
            },
        ]
    }

    pub fn label(&self) -> String {
        format!("theta_{}^({}{})", self.stratum, self.z, self.z_prime)
    }
}

/// Unvalidated table of named numeric columns; `None` marks a missing cell.
#[derive(Debug, Clone, Default)]
pub struct RawTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<Option<f64>>>,
}

impl RawTable {
    pub fn from_csv<R: Read>(reader: R) -> Result<RawTable> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Io(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            if rec.len() != names.len() {
                return Err(Error::LengthMismatch(format!(
                    "row {row} has {} fields, header has {}",
                    rec.len(),
                    names.len()
                )));
            }
            for (j, field) in rec.iter().enumerate() {
                let v = if field.is_empty() || field.eq_ignore_ascii_case("na") {
                    None
                } else {
                    Some(field.parse::<f64>().map_err(|_| {
                        Error::Io(format!("row {row}, column `{}`: cannot parse `{field}`", names[j]))
                    })?)
                };
                columns[j].push(v);
            }
        }
        Ok(RawTable { names, columns })
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }
}

/// Which table columns play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub z: String,
    pub d: String,
    pub m: String,
    pub y: String,
    pub x: Vec<String>,
}

/// Counts of units per `(z, d)` cell, indexed `[z][d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CellCounts(pub [[usize; 2]; 2]);

impl CellCounts {
    pub fn get(&self, z: u8, d: u8) -> usize {
        self.0[z as usize][d as usize]
    }
}

/// Validated unit-level data. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    x: Vec<f64>,
    z: Vec<u8>,
    d: Vec<u8>,
    m: Vec<f64>,
    y: Vec<f64>,
    mediator_kind: MediatorKind,
    monotonicity: Monotonicity,
    covariate_names: Vec<String>,
    /// Exact-enumeration weights; absent for ordinary samples.
    weights: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds and validates a dataset from row-major covariates.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: Vec<f64>,
        p: usize,
        z: Vec<u8>,
        d: Vec<u8>,
        m: Vec<f64>,
        y: Vec<f64>,
        mediator_kind: MediatorKind,
        monotonicity: Monotonicity,
    ) -> Result<Dataset> {
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        let ds = Dataset {
            n: z.len(),
            p,
            x,
            z,
            d,
            m,
            y,
            mediator_kind,
            monotonicity,
            covariate_names: names,
            weights: None,
        };
        ds.check()?;
        Ok(ds)
    }

    pub(crate) fn with_weights(mut self, w: Vec<f64>) -> Result<Dataset> {
        if w.len() != self.n {
            return Err(Error::LengthMismatch("weights".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument("weights must be non-negative and not all zero".into()));
        }
        self.weights = Some(w);
        Ok(self)
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Dataset> {
        if names.len() != self.p {
            return Err(Error::LengthMismatch("covariate names".into()));
        }
        self.covariate_names = names;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        let n = self.n;
        if self.p == 0 {
            return Err(Error::NoCovariates);
        }
        if self.x.len() != n * self.p || self.d.len() != n || self.m.len() != n || self.y.len() != n {
            return Err(Error::LengthMismatch(format!("expected {n} units")));
        }
        for (row, &z) in self.z.iter().enumerate() {
            if z > 1 {
                return Err(Error::NonBinaryTreatment {
                    column: "z".into(),
                    row,
                    value: z as f64,
                });
            }
        }
        for (row, &d) in self.d.iter().enumerate() {
            if d > 1 {
                return Err(Error::NonBinaryTreatment {
                    column: "d".into(),
                    row,
                    value: d as f64,
                });
            }
        }
        for (row, &m) in self.m.iter().enumerate() {
            let ok = match self.mediator_kind.levels() {
                Some(levels) => m >= 0.0 && m.fract() == 0.0 && (m as usize) < levels,
                None => m.is_finite(),
            };
            if !ok {
                return Err(Error::InvalidMediator { row, value: m });
            }
        }
        if let Some(row) = self.x.iter().position(|v| v.is_nan()) {
            return Err(Error::MissingValue {
                column: self.covariate_names[row % self.p].clone(),
                row: row / self.p,
            });
        }
        if let Some(row) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue {
                column: "y".into(),
                row,
            });
        }
        if self.monotonicity == Monotonicity::Strong {
            if let Some(row) = (0..n).find(|&i| self.z[i] == 0 && self.d[i] == 1) {
                return Err(Error::StrongMonotonicityViolated { row });
            }
        }
        let counts = self.cell_counts();
        for (z, d) in required_cells(self.monotonicity) {
            if counts.get(z, d) == 0 {
                return Err(Error::EmptyCell { z, d });
            }
        }
        Ok(())
    }

    /// Re-runs validation; returns an identical copy on success.
    pub fn validate(&self) -> Result<Dataset> {
        self.check()?;
        Ok(self.clone())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of covariates.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn d(&self) -> &[u8] {
        &self.d
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn mediator_kind(&self) -> MediatorKind {
        self.mediator_kind
    }

    pub fn monotonicity(&self) -> Monotonicity {
        self.monotonicity
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn cell_counts(&self) -> CellCounts {
        let mut c = [[0usize; 2]; 2];
        for i in 0..self.n {
            c[self.z[i] as usize][self.d[i] as usize] += 1;
        }
        CellCounts(c)
    }

    /// Empirical mean `P_n[v]` (weighted when enumeration weights are present).
    pub fn mean(&self, v: &[f64]) -> f64 {
        match &self.weights {
            None => v.iter().sum::<f64>() / self.n as f64,
            Some(w) => {
                let num: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
                num / w.iter().sum::<f64>()
            }
        }
    }

    /// Rows selected by index (repeats allowed). The result skips validation,
    /// so resamples with an empty cell surface later as estimation errors.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let p = self.p;
        let mut x = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            x.extend_from_slice(self.x_row(i));
        }
        Dataset {
            n: rows.len(),
            p,
            x,
            z: rows.iter().map(|&i| self.z[i]).collect(),
            d: rows.iter().map(|&i| self.d[i]).collect(),
            m: rows.iter().map(|&i| self.m[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            mediator_kind: self.mediator_kind,
            monotonicity: self.monotonicity,
            covariate_names: self.covariate_names.clone(),
            weights: self
                .weights
                .as_ref()
                .map(|w| rows.iter().map(|&i| w[i]).collect()),
        }
    }

    /// Same units with a rescaled outcome.
    pub fn map_outcome(&self, f: impl Fn(f64) -> f64) -> Dataset {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v = f(*v));
        out
    }
}

/// Cells that must be non-empty under each mode.
pub fn required_cells(mode: Monotonicity) -> Vec<(u8, u8)> {
    match mode {
        Monotonicity::Standard => vec![(0, 0), (0, 1), (1, 0), (1, 1)],
        Monotonicity::Strong => vec![(0, 0), (1, 0), (1, 1)],
    }
}

fn binary_column(raw: &[Option<f64>], name: &str) -> Result<Vec<u8>> {
    raw.iter()
        .enumerate()
        .map(|(row, v)| match v {
            None => Err(Error::MissingValue {
                column: name.to_string(),
                row,
            }),
            Some(v) if *v == 0.0 => Ok(0),
            Some(v) if *v == 1.0 => Ok(1),
            Some(v) => Err(Error::NonBinaryTreatment {
                column: name.to_string(),
                row,
                value: *v,
            }),
        })
        .collect()
}

fn real_column(raw: &[Option<f64>], name: &str) -> Result<Vec<f64>> {
    raw.iter()
        .enumerate()
        .map(|(row, v)| {
            v.filter(|v| !v.is_nan()).ok_or_else(|| Error::MissingValue {
                column: name.to_string(),
                row,
            })
        })
        .collect()
}

/// Validates a raw table against a column mapping.
pub fn validate_dataset(
    raw: &RawTable,
    schema: &ColumnMap,
    mediator_kind: MediatorKind,
    monotonicity: Monotonicity,
) -> Result<Dataset> {
    if schema.x.is_empty() {
        return Err(Error::NoCovariates);
    }
    let z = binary_column(raw.column(&schema.z)?, &schema.z)?;
    let d = binary_column(raw.column(&schema.d)?, &schema.d)?;
    let m = real_column(raw.column(&schema.m)?, &schema.m)?;
    let y = real_column(raw.column(&schema.y)?, &schema.y)?;
    let xs: Vec<Vec<f64>> = schema
        .x
        .iter()
        .map(|name| real_column(raw.column(name)?, name))
        .collect::<Result<_>>()?;
    let n = z.len();
    let p = xs.len();
    let mut x = Vec::with_capacity(n * p);
    for i in 0..n {
        for col in &xs {
            x.push(col[i]);
        }
    }
    Dataset::new(x, p, z, d, m, y, mediator_kind, monotonicity)?.with_covariate_names(schema.x.clone())
}
