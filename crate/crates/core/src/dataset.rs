//! Paired experiment data.
//!
//! A [`PairedDataset`] holds `2N` units grouped into `N` pairs with exactly one
//! treated unit per pair. Within a pair the unit labels 1 and 2 follow input
//! order; the labels are arbitrary, and the sign of the imputed within-pair
//! difference depends on them while the treatment-effect estimate does not.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub pair_id: String,
    /// Within-pair label, 1 or 2.
    pub unit_index: u8,
    pub treated: bool,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    id: String,
    units: [UnitRecord; 2],
}

impl Pair {
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Units ordered by label: `units()[0]` is unit 1.
    pub fn units(&self) -> &[UnitRecord; 2] {
        &self.units
    }

    /// Pair-level assignment: true when unit 1 is the treated unit.
    pub fn first_treated(&self) -> bool {
        self.units[0].treated
    }

    pub fn treated(&self) -> &UnitRecord {
        if self.first_treated() {
            &self.units[0]
        } else {
            &self.units[1]
        }
    }

    pub fn control(&self) -> &UnitRecord {
        if self.first_treated() {
            &self.units[1]
        } else {
            &self.units[0]
        }
    }

    /// Observed treated-minus-control difference.
    pub fn observed_difference(&self) -> f64 {
        self.treated().outcome - self.control().outcome
    }
}

/// Validated paired experiment data.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pairs: Vec<Pair>,
    q: usize,
}

impl PairedDataset {
    /// Groups `units` into pairs (in order of first appearance) and validates them.
    ///
    /// Every pair id must occur exactly twice with labels {1, 2} and exactly
    /// one treated unit; all covariate vectors must share one length and all
    /// values must be finite.
    pub fn from_units(units: Vec<UnitRecord>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::NoPairs);
        }
        let q = units[0].covariates.len();
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<UnitRecord>> = HashMap::new();
        for unit in units {
            if unit.covariates.len() != q {
                return Err(Error::CovariateDimension {
                    expected: q,
                    found: unit.covariates.len(),
                });
            }
            if !unit.outcome.is_finite() {
                return Err(Error::NonFinite("outcome"));
            }
            if unit.covariates.iter().any(|z| !z.is_finite()) {
                return Err(Error::NonFinite("covariates"));
            }
            let entry = groups.entry(unit.pair_id.clone()).or_default();
            if entry.is_empty() {
                order.push(unit.pair_id.clone());
            }
            entry.push(unit);
        }

        let mut pairs = Vec::with_capacity(order.len());
        for id in order {
            let mut members = groups.remove(&id).unwrap_or_default();
            if members.len() != 2 {
                return Err(Error::PairSize {
                    pair: id,
                    count: members.len(),
                });
            }
            members.sort_by_key(|u| u.unit_index);
            let labels = [members[0].unit_index, members[1].unit_index];
            if labels != [1, 2] {
                return Err(Error::UnitLabels { pair: id, labels });
            }
            if members[0].treated == members[1].treated {
                return Err(Error::InvalidTreatmentPattern(id));
            }
            let second = members.pop().expect("two members");
            let first = members.pop().expect("two members");
            pairs.push(Pair {
                id,
                units: [first, second],
            });
        }
        Ok(Self { pairs, q })
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Covariate dimension per unit.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_treated(&self) -> usize {
        self.pairs.iter().filter(|p| p.first_treated()).count()
    }

    /// Pair-level assignments (`T_i`, true when unit 1 is treated).
    pub fn assignments(&self) -> Vec<bool> {
        self.pairs.iter().map(Pair::first_treated).collect()
    }

    /// Observed differences `W_i`.
    pub fn observed_differences(&self) -> Vec<f64> {
        self.pairs.iter().map(Pair::observed_difference).collect()
    }

    /// Copy of the dataset with unit labels 1 and 2 swapped in pair `index`.
    pub fn with_swapped_labels(&self, index: usize) -> Self {
        let mut out = self.clone();
        let pair = &mut out.pairs[index];
        pair.units.swap(0, 1);
        pair.units[0].unit_index = 1;
        pair.units[1].unit_index = 2;
        out
    }

    /// Copy of the dataset with `shift` added to every outcome.
    pub fn with_shifted_outcomes(&self, shift: f64) -> Self {
        let mut out = self.clone();
        for pair in &mut out.pairs {
            for unit in &mut pair.units {
                unit.outcome += shift;
            }
        }
        out
    }

    /// Copy of the dataset with pair `index` replaced by other outcomes and assignment.
    pub fn with_pair_replaced(&self, index: usize, outcomes: [f64; 2], first_treated: bool) -> Self {
        let mut out = self.clone();
        let pair = &mut out.pairs[index];
        pair.units[0].outcome = outcomes[0];
        pair.units[1].outcome = outcomes[1];
        pair.units[0].treated = first_treated;
        pair.units[1].treated = !first_treated;
        out
    }

    pub fn views(&self, encoding: Encoding) -> Vec<PairView> {
        pair_views(self, encoding)
    }
}

/// How the two unit covariate vectors of a pair are combined into `2q` pair features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// `(Z_first, Z_second)`.
    Concat,
    /// `((Z_first + Z_second) / 2, Z_first - Z_second)`.
    #[default]
    MeanDiff,
}

impl Encoding {
    pub fn as_str(self) -> &'static str {
        match self {
            Encoding::Concat => "concat",
            Encoding::MeanDiff => "mean_diff",
        }
    }

    /// Encodes an ordered pair of unit covariate vectors.
    pub fn encode(self, first: &[f64], second: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(first.len() * 2);
        match self {
            Encoding::Concat => {
                out.extend_from_slice(first);
                out.extend_from_slice(second);
            }
            Encoding::MeanDiff => {
                out.extend(first.iter().zip(second).map(|(a, b)| (a + b) / 2.0));
                out.extend(first.iter().zip(second).map(|(a, b)| a - b));
            }
        }
        out
    }

    /// Inverse of [`Encoding::encode`].
    pub fn decode(self, features: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = features.len() / 2;
        let (lo, hi) = features.split_at(q);
        match self {
            Encoding::Concat => (lo.to_vec(), hi.to_vec()),
            Encoding::MeanDiff => (
                lo.iter().zip(hi).map(|(m, d)| m + d / 2.0).collect(),
                lo.iter().zip(hi).map(|(m, d)| m - d / 2.0).collect(),
            ),
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Encoding::Concat),
            "mean_diff" | "mean-diff" => Ok(Encoding::MeanDiff),
            other => Err(Error::InvalidConfig(format!("unknown encoding '{other}'"))),
        }
    }
}

/// Pair-level quantities derived from a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PairView {
    pub pair_id: String,
    /// `T_i`: unit 1 treated.
    pub first_treated: bool,
    /// `W_i`: treated outcome minus control outcome.
    pub w: f64,
    /// Features in original unit order.
    pub z: Vec<f64>,
    /// Features with the treated unit first.
    pub z_a: Vec<f64>,
    /// Features with the control unit first.
    pub z_b: Vec<f64>,
    pub encoding: Encoding,
}

pub fn pair_views(ds: &PairedDataset, encoding: Encoding) -> Vec<PairView> {
    ds.pairs
        .iter()
        .map(|pair| {
            let [u1, u2] = &pair.units;
            let (t, c) = (pair.treated(), pair.control());
            PairView {
                pair_id: pair.id.clone(),
                first_treated: pair.first_treated(),
                w: pair.observed_difference(),
                z: encoding.encode(&u1.covariates, &u2.covariates),
                z_a: encoding.encode(&t.covariates, &c.covariates),
                z_b: encoding.encode(&c.covariates, &t.covariates),
                encoding,
            }
        })
        .collect()
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub pair: String,
    pub treatment: String,
    pub outcome: String,
    /// Covariate columns; `None` selects every other column.
    pub covariates: Option<Vec<String>>,
    /// Permit a dataset with no covariate columns.
    pub allow_no_covariates: bool,
}

impl CsvSchema {
    pub fn new(pair: &str, treatment: &str, outcome: &str) -> Self {
        Self {
            pair: pair.to_owned(),
            treatment: treatment.to_owned(),
            outcome: outcome.to_owned(),
            covariates: None,
            allow_no_covariates: false,
        }
    }

    /// Names of the covariate columns this schema selects from `header`.
    pub fn covariate_columns(&self, header: &[String]) -> Result<Vec<String>> {
        let cols = match &self.covariates {
            Some(cols) => {
                for c in cols {
                    if !header.contains(c) {
                        return Err(Error::MissingColumn(c.clone()));
                    }
                }
                cols.clone()
            }
            None => header
                .iter()
                .filter(|h| **h != self.pair && **h != self.treatment && **h != self.outcome)
                .cloned()
                .collect(),
        };
        if cols.is_empty() && !self.allow_no_covariates {
            return Err(Error::NoCovariates);
        }
        Ok(cols)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PairedDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Reads a header-first CSV. Unit labels follow row order within each pair.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<PairedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::NoPairs);
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let pair_col = find(&schema.pair)?;
    let treat_col = find(&schema.treatment)?;
    let outcome_col = find(&schema.outcome)?;
    let cov_cols: Vec<(usize, String)> = schema
        .covariate_columns(&header)?
        .into_iter()
        .map(|name| find(&name).map(|i| (i, name)))
        .collect::<Result<_>>()?;

    let mut seen: HashMap<String, u8> = HashMap::new();
    let mut units = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let cell = |col: usize, name: &str| -> Result<&str> {
            match record.get(col).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Cell {
                    row,
                    column: name.to_owned(),
                    message: "missing value".into(),
                }),
            }
        };
        let number = |col: usize, name: &str| -> Result<f64> {
            let raw = cell(col, name)?;
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Cell {
                    row,
                    column: name.to_owned(),
                    message: format!("not a finite number: '{raw}'"),
                }),
            }
        };

        let pair_id = cell(pair_col, &schema.pair)?.to_owned();
        let treated = match number(treat_col, &schema.treatment)? {
            1.0 => true,
            0.0 => false,
            t => {
                return Err(Error::Cell {
                    row,
                    column: schema.treatment.clone(),
                    message: format!("treatment must be 0 or 1, got {t}"),
                })
            }
        };
        let outcome = number(outcome_col, &schema.outcome)?;
        let covariates = cov_cols
            .iter()
            .map(|(c, name)| number(*c, name))
            .collect::<Result<Vec<_>>>()?;
        let count = seen.entry(pair_id.clone()).or_insert(0);
        *count += 1;
        if *count > 2 {
            return Err(Error::PairSize {
                pair: pair_id,
                count: *count as usize,
            });
        }
        units.push(UnitRecord {
            unit_index: *count,
            pair_id,
            treated,
            outcome,
            covariates,
        });
    }
    PairedDataset::from_units(units)
}

/// Fixed potential outcomes of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialUnit {
    /// Outcome under treatment.
    pub t: f64,
    /// Outcome under control.
    pub c: f64,
    pub z: Vec<f64>,
}

impl PotentialUnit {
    /// Average of the two potential outcomes.
    pub fn m(&self) -> f64 {
        (self.t + self.c) / 2.0
    }
}

/// A complete potential-outcome table, used for simulation and exact oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExperiment {
    pairs: Vec<[PotentialUnit; 2]>,
    q: usize,
}

impl SyntheticExperiment {
    pub fn new(pairs: Vec<[PotentialUnit; 2]>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::NoPairs);
        }
        let q = pairs[0][0].z.len();
        for unit in pairs.iter().flatten() {
            if unit.z.len() != q {
                return Err(Error::CovariateDimension {
                    expected: q,
                    found: unit.z.len(),
                });
            }
            if !(unit.t.is_finite() && unit.c.is_finite()) {
                return Err(Error::NonFinite("potential outcomes"));
            }
            if unit.z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("covariates"));
            }
        }
        Ok(Self { pairs, q })
    }

    pub fn pairs(&self) -> &[[PotentialUnit; 2]] {
        &self.pairs
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// `a_i = t_i1 - c_i2`, observed when unit 1 is treated.
    pub fn a(&self, i: usize) -> f64 {
        self.pairs[i][0].t - self.pairs[i][1].c
    }

    /// `b_i = t_i2 - c_i1`, observed when unit 2 is treated.
    pub fn b(&self, i: usize) -> f64 {
        self.pairs[i][1].t - self.pairs[i][0].c
    }

    pub fn d(&self, i: usize) -> f64 {
        0.5 * (self.a(i) - self.b(i))
    }

    pub fn tau(&self, i: usize) -> f64 {
        0.5 * (self.a(i) + self.b(i))
    }

    pub fn tau_bar(&self) -> f64 {
        (0..self.n_pairs()).map(|i| self.tau(i)).sum::<f64>() / self.n_pairs() as f64
    }

    /// Observed data under the pair-level assignment `first_treated`.
    pub fn realize(&self, first_treated: &[bool]) -> Result<PairedDataset> {
        if first_treated.len() != self.n_pairs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_pairs(),
                got: first_treated.len(),
            });
        }
        let mut units = Vec::with_capacity(2 * self.n_pairs());
        for (i, (pair, &t1)) in self.pairs.iter().zip(first_treated).enumerate() {
            let id = format!("p{}", i + 1);
            for (j, unit) in pair.iter().enumerate() {
                let treated = (j == 0) == t1;
                units.push(UnitRecord {
                    pair_id: id.clone(),
                    unit_index: j as u8 + 1,
                    treated,
                    outcome: if treated { unit.t } else { unit.c },
                    covariates: unit.z.clone(),
                });
            }
        }
        PairedDataset::from_units(units)
    }
}
