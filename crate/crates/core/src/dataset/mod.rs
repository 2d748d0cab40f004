//! Tabular sample ingestion, column roles and the per-group views every
//! later stage builds on.
//!
//! A [`Dataset`] starts life from [`load_csv`] with every column
//! [`ColumnRole::Ignored`]. [`assign_roles`] validates the role map, drops
//! rows with missing values in role-assigned columns and recodes the
//! treatment to 0/1 against an explicitly chosen treated level.

mod design;
mod summary;
mod trim;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use design::{design_matrix, DesignMatrix, FeatureKind, FeatureMeta};
pub use summary::{
    overlap_report, summarize, CovariateSummary, OverlapEntry, OverlapFlag, OverlapHistogram,
};
pub use trim::{apply_trim, Tail, TrimBound, TrimOutcome, TrimRule};

pub(crate) use summary::bin_counts as summary_bins;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Treatment,
    Outcome,
    ContinuousConfounder,
    BinaryConfounder,
    CategoricalConfounder,
    Ignored,
}

impl ColumnRole {
    pub fn is_confounder(self) -> bool {
        matches!(
            self,
            ColumnRole::ContinuousConfounder
                | ColumnRole::BinaryConfounder
                | ColumnRole::CategoricalConfounder
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Treated,
    Control,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Treated => f.write_str("treated"),
            Group::Control => f.write_str("control"),
        }
    }
}

/// Raw cell values of one column. `None` marks an NA token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    fn is_na(&self, i: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[i].is_none(),
            ColumnData::Text(v) => v[i].is_none(),
        }
    }

    /// Cell rendered as a level label.
    fn label(&self, i: usize) -> Option<String> {
        match self {
            ColumnData::Numeric(v) => v[i].map(format_level),
            ColumnData::Text(v) => v[i].clone(),
        }
    }

    fn select(&self, keep: &[bool]) -> ColumnData {
        fn pick<T: Clone>(v: &[T], keep: &[bool]) -> Vec<T> {
            v.iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(x, _)| x.clone())
                .collect()
        }
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(pick(v, keep)),
            ColumnData::Text(v) => ColumnData::Text(pick(v, keep)),
        }
    }
}

fn format_level(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: ColumnRole,
    pub data: ColumnData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub na_tokens: Vec<String>,
    pub delimiter: u8,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            na_tokens: vec![String::new(), "NA".to_string()],
            delimiter: b',',
        }
    }
}

/// Role map plus the level of the treatment column that counts as treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub roles: BTreeMap<String, ColumnRole>,
    pub treated_level: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConfounderValues {
    Continuous(Vec<f64>),
    /// Coded 0/1; `levels[1]` is the level coded as 1.
    Binary { values: Vec<f64>, levels: [String; 2] },
    /// `codes[i]` indexes `levels`; levels are sorted, the first is the reference.
    Categorical { levels: Vec<String>, codes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confounder {
    pub name: String,
    pub values: ConfounderValues,
}

impl Confounder {
    pub fn role(&self) -> ColumnRole {
        match self.values {
            ConfounderValues::Continuous(_) => ColumnRole::ContinuousConfounder,
            ConfounderValues::Binary { .. } => ColumnRole::BinaryConfounder,
            ConfounderValues::Categorical { .. } => ColumnRole::CategoricalConfounder,
        }
    }

    /// Numeric view used for trimming; categorical confounders have none.
    pub fn numeric(&self) -> Option<&[f64]> {
        match &self.values {
            ConfounderValues::Continuous(v) => Some(v),
            ConfounderValues::Binary { values, .. } => Some(values),
            ConfounderValues::Categorical { .. } => None,
        }
    }

    fn select(&self, keep: &[bool]) -> Confounder {
        let pick = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect()
        };
        let values = match &self.values {
            ConfounderValues::Continuous(v) => ConfounderValues::Continuous(pick(v)),
            ConfounderValues::Binary { values, levels } => ConfounderValues::Binary {
                values: pick(values),
                levels: levels.clone(),
            },
            ConfounderValues::Categorical { levels, codes } => ConfounderValues::Categorical {
                levels: levels.clone(),
                codes: codes
                    .iter()
                    .zip(keep)
                    .filter(|(_, k)| **k)
                    .map(|(c, _)| *c)
                    .collect(),
            },
        };
        Confounder {
            name: self.name.clone(),
            values,
        }
    }
}

/// One numeric balance feature: a continuous or binary confounder, or a single
/// level indicator of a categorical confounder.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceFeature {
    pub name: String,
    pub source: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Configured {
    treatment_column: String,
    outcome_column: String,
    treated_level: String,
    treatment: Vec<f64>,
    outcome: Vec<f64>,
    confounders: Vec<Confounder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: Vec<Column>,
    row_ids: Vec<u64>,
    na_rows: usize,
    dropped_na_rows: usize,
    configured: Option<Configured>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    /// Rows containing an NA token in any column at load time.
    pub fn na_rows(&self) -> usize {
        self.na_rows
    }

    /// Rows dropped by [`assign_roles`] for NA in a role-assigned column.
    pub fn dropped_na_rows(&self) -> usize {
        self.dropped_na_rows
    }

    pub fn is_configured(&self) -> bool {
        self.configured.is_some()
    }

    fn configured(&self) -> Result<&Configured> {
        self.configured.as_ref().ok_or(Error::RolesMissing)
    }

    pub fn treatment(&self) -> Result<&[f64]> {
        Ok(&self.configured()?.treatment)
    }

    pub fn outcome(&self) -> Result<&[f64]> {
        Ok(&self.configured()?.outcome)
    }

    pub fn confounders(&self) -> Result<&[Confounder]> {
        Ok(&self.configured()?.confounders)
    }

    pub fn treatment_column(&self) -> Result<&str> {
        Ok(&self.configured()?.treatment_column)
    }

    pub fn outcome_column(&self) -> Result<&str> {
        Ok(&self.configured()?.outcome_column)
    }

    pub fn treated_level(&self) -> Result<&str> {
        Ok(&self.configured()?.treated_level)
    }

    pub fn group_sizes(&self) -> Result<(usize, usize)> {
        let t = self.treatment()?;
        let n1 = t.iter().filter(|v| **v == 1.0).count();
        Ok((n1, t.len() - n1))
    }

    /// Numeric balance features in confounder order, categorical confounders
    /// expanded to one indicator per level.
    pub fn balance_features(&self) -> Result<Vec<BalanceFeature>> {
        let mut out = Vec::new();
        for c in self.confounders()? {
            match &c.values {
                ConfounderValues::Continuous(v) => out.push(BalanceFeature {
                    name: c.name.clone(),
                    source: c.name.clone(),
                    values: v.clone(),
                }),
                ConfounderValues::Binary { values, levels } => out.push(BalanceFeature {
                    name: binary_feature_name(&c.name, &levels[1]),
                    source: c.name.clone(),
                    values: values.clone(),
                }),
                ConfounderValues::Categorical { levels, codes } => {
                    for (l, level) in levels.iter().enumerate() {
                        out.push(BalanceFeature {
                            name: level_feature_name(&c.name, level),
                            source: c.name.clone(),
                            values: codes.iter().map(|&k| f64::from(u8::from(k == l))).collect(),
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Row subset; `keep[i]` selects row `i`.
    pub fn select_rows(&self, keep: &[bool]) -> Dataset {
        assert_eq!(keep.len(), self.n_rows(), "row mask length mismatch");
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                role: c.role,
                data: c.data.select(keep),
            })
            .collect();
        let row_ids = self
            .row_ids
            .iter()
            .zip(keep)
            .filter(|(_, k)| **k)
            .map(|(r, _)| *r)
            .collect();
        let pick = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect()
        };
        let configured = self.configured.as_ref().map(|c| Configured {
            treatment_column: c.treatment_column.clone(),
            outcome_column: c.outcome_column.clone(),
            treated_level: c.treated_level.clone(),
            treatment: pick(&c.treatment),
            outcome: pick(&c.outcome),
            confounders: c.confounders.iter().map(|x| x.select(keep)).collect(),
        });
        Dataset {
            columns,
            row_ids,
            na_rows: self.na_rows,
            dropped_na_rows: self.dropped_na_rows,
            configured,
        }
    }

    /// Copy of a configured dataset with one extra continuous confounder
    /// appended (used for hypothetical-confounder refits).
    pub fn with_continuous_confounder(&self, name: &str, values: Vec<f64>) -> Result<Dataset> {
        let cfg = self.configured()?;
        if values.len() != self.n_rows() {
            return Err(Error::Data(format!(
                "confounder `{name}` has {} values, dataset has {} rows",
                values.len(),
                self.n_rows()
            )));
        }
        if cfg.confounders.iter().any(|c| c.name == name) {
            return Err(Error::Data(format!("duplicate confounder `{name}`")));
        }
        let mut out = self.clone();
        out.columns.push(Column {
            name: name.to_string(),
            role: ColumnRole::ContinuousConfounder,
            data: ColumnData::Numeric(values.iter().map(|v| Some(*v)).collect()),
        });
        if let Some(c) = out.configured.as_mut() {
            c.confounders.push(Confounder {
                name: name.to_string(),
                values: ConfounderValues::Continuous(values),
            });
        }
        Ok(out)
    }

    /// Builds a configured dataset directly from in-memory vectors.
    pub fn from_parts(
        treatment: Vec<f64>,
        outcome: Vec<f64>,
        confounders: Vec<Confounder>,
    ) -> Result<Dataset> {
        let n = treatment.len();
        let mut columns = vec![
            Column {
                name: "treatment".into(),
                role: ColumnRole::Treatment,
                data: ColumnData::Numeric(treatment.iter().map(|v| Some(*v)).collect()),
            },
            Column {
                name: "outcome".into(),
                role: ColumnRole::Outcome,
                data: ColumnData::Numeric(outcome.iter().map(|v| Some(*v)).collect()),
            },
        ];
        for c in &confounders {
            let data = match &c.values {
                ConfounderValues::Continuous(v) => {
                    ColumnData::Numeric(v.iter().map(|x| Some(*x)).collect())
                }
                ConfounderValues::Binary { values, .. } => {
                    ColumnData::Numeric(values.iter().map(|x| Some(*x)).collect())
                }
                ConfounderValues::Categorical { levels, codes } => {
                    ColumnData::Text(codes.iter().map(|k| Some(levels[*k].clone())).collect())
                }
            };
            columns.push(Column {
                name: c.name.clone(),
                role: c.role(),
                data,
            });
        }
        let raw = Dataset {
            columns,
            row_ids: (1..=n as u64).collect(),
            na_rows: 0,
            dropped_na_rows: 0,
            configured: None,
        };
        let roles = raw
            .columns
            .iter()
            .map(|c| (c.name.clone(), c.role))
            .collect();
        assign_roles(
            &raw,
            &RoleAssignment {
                roles,
                treated_level: "1".into(),
            },
        )
    }
}

pub(crate) fn binary_feature_name(name: &str, level: &str) -> String {
    if level == "1" {
        name.to_string()
    } else {
        format!("{name}:{level}")
    }
}

pub(crate) fn level_feature_name(name: &str, level: &str) -> String {
    format!("{name}:{level}")
}

/// Parses a CSV byte stream with a mandatory header row.
///
/// A column is numeric when its first non-NA token parses as a number; any
/// later non-numeric token in that column is an error. Other columns are text.
pub fn load_csv(bytes: &[u8], options: &ParseOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .delimiter(options.delimiter)
        .trim(csv::Trim::All)
        .from_reader(bytes);

    let headers = reader
        .headers()
        .map_err(|e| csv_error(&e))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Data("empty file".into()));
    }
    let mut seen = HashSet::new();
    for h in &headers {
        if h.is_empty() {
            return Err(Error::Data("empty column name in header".into()));
        }
        if !seen.insert(h.as_str()) {
            return Err(Error::Data(format!("duplicate column name `{h}`")));
        }
    }

    let is_na = |tok: &str| options.na_tokens.iter().any(|na| na == tok);
    let mut raw: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        for (j, tok) in record.iter().enumerate() {
            raw[j].push(if is_na(tok) { None } else { Some(tok.to_string()) });
        }
    }
    let n = raw[0].len();
    if n == 0 {
        return Err(Error::Data("file has a header but no data rows".into()));
    }

    let mut columns = Vec::with_capacity(headers.len());
    for (name, cells) in headers.into_iter().zip(raw) {
        let numeric = cells
            .iter()
            .flatten()
            .next()
            .is_some_and(|tok| tok.parse::<f64>().is_ok());
        let data = if numeric {
            let mut values = Vec::with_capacity(n);
            for (i, cell) in cells.iter().enumerate() {
                values.push(match cell {
                    None => None,
                    Some(tok) => Some(tok.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(
                        || Error::Cell {
                            column: name.clone(),
                            row: i as u64 + 1,
                            message: format!("non-numeric token `{tok}` in numeric column"),
                        },
                    )?),
                });
            }
            ColumnData::Numeric(values)
        } else {
            ColumnData::Text(cells)
        };
        columns.push(Column {
            name,
            role: ColumnRole::Ignored,
            data,
        });
    }
    let na_rows = (0..n)
        .filter(|&i| columns.iter().any(|c| c.data.is_na(i)))
        .count();
    Ok(Dataset {
        columns,
        row_ids: (1..=n as u64).collect(),
        na_rows,
        dropped_na_rows: 0,
        configured: None,
    })
}

fn csv_error(e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let message = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("expected {expected_len} fields, found {len}"),
        csv::ErrorKind::Utf8 { .. } => "invalid UTF-8".to_string(),
        _ => e.to_string(),
    };
    Error::Parse { line, message }
}

/// Validates a role map and returns the configured dataset.
pub fn assign_roles(d: &Dataset, assignment: &RoleAssignment) -> Result<Dataset> {
    for name in assignment.roles.keys() {
        if d.column(name).is_none() {
            return Err(Error::Data(format!("unknown column `{name}`")));
        }
    }
    let role_of = |name: &str| {
        assignment
            .roles
            .get(name)
            .copied()
            .unwrap_or(ColumnRole::Ignored)
    };
    let with_role = |r: ColumnRole| -> Vec<&Column> {
        d.columns.iter().filter(|c| role_of(&c.name) == r).collect()
    };
    let treatment_cols = with_role(ColumnRole::Treatment);
    let outcome_cols = with_role(ColumnRole::Outcome);
    if treatment_cols.len() != 1 {
        return Err(Error::Data(format!(
            "exactly one treatment column required, found {}",
            treatment_cols.len()
        )));
    }
    if outcome_cols.len() != 1 {
        return Err(Error::Data(format!(
            "exactly one outcome column required, found {}",
            outcome_cols.len()
        )));
    }
    if !d.columns.iter().any(|c| role_of(&c.name).is_confounder()) {
        return Err(Error::Data("at least one confounder is required".into()));
    }

    // Drop rows with NA in any role-assigned column.
    let keep: Vec<bool> = (0..d.n_rows())
        .map(|i| {
            d.columns
                .iter()
                .filter(|c| role_of(&c.name) != ColumnRole::Ignored)
                .all(|c| !c.data.is_na(i))
        })
        .collect();
    let dropped = keep.iter().filter(|k| !**k).count();
    let mut base = d.select_rows(&keep);
    base.configured = None;
    for c in &mut base.columns {
        c.role = role_of(&c.name);
    }

    let tcol = base
        .columns
        .iter()
        .find(|c| c.role == ColumnRole::Treatment)
        .expect("checked above");
    let levels: BTreeSet<String> = (0..base.n_rows()).filter_map(|i| tcol.data.label(i)).collect();
    if levels.len() < 2 {
        return Err(Error::Data(format!(
            "treatment column `{}` is constant: one group empty",
            tcol.name
        )));
    }
    if levels.len() > 2 {
        return Err(Error::Data(format!(
            "treatment column `{}` has {} distinct values, expected 2",
            tcol.name,
            levels.len()
        )));
    }
    let treated_level = normalize_level(&tcol.data, &assignment.treated_level);
    if !levels.contains(&treated_level) {
        return Err(Error::Data(format!(
            "treated level `{}` not found in treatment column `{}`",
            assignment.treated_level, tcol.name
        )));
    }
    let treatment: Vec<f64> = (0..base.n_rows())
        .map(|i| {
            if tcol.data.label(i).as_deref() == Some(treated_level.as_str()) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let n1 = treatment.iter().filter(|t| **t == 1.0).count();
    let n0 = treatment.len() - n1;
    if n1 < 2 || n0 < 2 {
        return Err(Error::Data(format!(
            "each treatment group needs at least 2 complete rows (treated {n1}, control {n0})"
        )));
    }

    let ocol = base
        .columns
        .iter()
        .find(|c| c.role == ColumnRole::Outcome)
        .expect("checked above");
    let outcome = numeric_values(ocol)?;

    let mut confounders = Vec::new();
    for c in base.columns.iter().filter(|c| c.role.is_confounder()) {
        let values = match c.role {
            ColumnRole::ContinuousConfounder => ConfounderValues::Continuous(numeric_values(c)?),
            ColumnRole::BinaryConfounder => binary_values(c)?,
            ColumnRole::CategoricalConfounder => categorical_values(c)?,
            _ => unreachable!(),
        };
        confounders.push(Confounder {
            name: c.name.clone(),
            values,
        });
    }

    base.dropped_na_rows = dropped;
    base.configured = Some(Configured {
        treatment_column: tcol.name.clone(),
        outcome_column: ocol.name.clone(),
        treated_level,
        treatment,
        outcome,
        confounders,
    });
    Ok(base)
}

/// Matches the user's treated-level string against numeric labels ("1.0" -> "1").
fn normalize_level(data: &ColumnData, level: &str) -> String {
    match data {
        ColumnData::Numeric(_) => level
            .trim()
            .parse::<f64>()
            .map(format_level)
            .unwrap_or_else(|_| level.to_string()),
        ColumnData::Text(_) => level.to_string(),
    }
}

fn numeric_values(c: &Column) -> Result<Vec<f64>> {
    match &c.data {
        ColumnData::Numeric(v) => Ok(v.iter().map(|x| x.expect("NA rows dropped")).collect()),
        ColumnData::Text(_) => Err(Error::Data(format!(
            "column `{}` must be numeric for role {:?}",
            c.name, c.role
        ))),
    }
}

fn sorted_levels(c: &Column) -> Vec<String> {
    let n = c.data.len();
    match &c.data {
        ColumnData::Numeric(v) => {
            let mut vals: Vec<f64> = v.iter().flatten().copied().collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            vals.into_iter().map(format_level).collect()
        }
        ColumnData::Text(_) => (0..n)
            .filter_map(|i| c.data.label(i))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    }
}

fn binary_values(c: &Column) -> Result<ConfounderValues> {
    let levels = sorted_levels(c);
    match levels.len() {
        0 | 1 => Err(Error::Data(format!("binary column `{}` has no variation", c.name))),
        2 => {
            let values = (0..c.data.len())
                .map(|i| f64::from(u8::from(c.data.label(i).as_deref() == Some(&levels[1]))))
                .collect();
            Ok(ConfounderValues::Binary {
                values,
                levels: [levels[0].clone(), levels[1].clone()],
            })
        }
        k => Err(Error::Data(format!(
            "binary column `{}` has {k} distinct values",
            c.name
        ))),
    }
}

fn categorical_values(c: &Column) -> Result<ConfounderValues> {
    let levels = sorted_levels(c);
    if levels.len() < 2 {
        return Err(Error::Data(format!(
            "categorical column `{}` has no variation",
            c.name
        )));
    }
    let codes = (0..c.data.len())
        .map(|i| {
            let l = c.data.label(i).expect("NA rows dropped");
            levels.iter().position(|x| *x == l).expect("level present")
        })
        .collect();
    Ok(ConfounderValues::Categorical { levels, codes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(pairs: &[(&str, ColumnRole)], treated: &str) -> RoleAssignment {
        RoleAssignment {
            roles: pairs.iter().map(|(n, r)| (n.to_string(), *r)).collect(),
            treated_level: treated.to_string(),
        }
    }

    #[test]
    fn parses_three_rows() {
        let d = load_csv(b"t,y,x\n1,2.5,3\n0,1,4\n1,0,5\n", &ParseOptions::default()).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.columns().len(), 3);
        assert!(d.columns().iter().all(|c| c.role == ColumnRole::Ignored));
    }

    #[test]
    fn non_numeric_token_names_column_and_row() {
        let err = load_csv(b"t,y,x\n1,2,3\n0,abc,4\n", &ParseOptions::default()).unwrap_err();
        match err {
            Error::Cell { column, row, .. } => {
                assert_eq!(column, "y");
                assert_eq!(row, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_header_rejected() {
        assert!(matches!(
            load_csv(b"t,x,x\n1,2,3\n", &ParseOptions::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(load_csv(b"", &ParseOptions::default()).is_err());
        assert!(load_csv(b"a,b\n", &ParseOptions::default()).is_err());
    }

    #[test]
    fn ragged_row_reports_line() {
        match load_csv(b"a,b\n1,2\n3\n", &ParseOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn na_rows_counted_and_dropped_at_configuration() {
        let d = load_csv(
            b"t,y,x,z\n1,1,1,\n0,2,NA,1\n1,3,3,1\n0,4,4,1\n1,5,5,1\n0,6,6,\n",
            &ParseOptions::default(),
        )
        .unwrap();
        assert_eq!(d.na_rows(), 3);
        let r = roles(
            &[
                ("t", ColumnRole::Treatment),
                ("y", ColumnRole::Outcome),
                ("x", ColumnRole::ContinuousConfounder),
            ],
            "1",
        );
        let c = assign_roles(&d, &r).unwrap();
        assert_eq!(c.dropped_na_rows(), 1);
        assert_eq!(c.n_rows(), 5);
        assert_eq!(c.row_ids(), &[1, 3, 4, 5, 6]);
    }

    #[test]
    fn valid_roles_configure() {
        let d = load_csv(b"t,y,x\n1,1,1\n0,2,2\n1,3,3\n0,4,5\n", &ParseOptions::default()).unwrap();
        let r = roles(
            &[
                ("t", ColumnRole::Treatment),
                ("y", ColumnRole::Outcome),
                ("x", ColumnRole::ContinuousConfounder),
            ],
            "1",
        );
        let c = assign_roles(&d, &r).unwrap();
        assert_eq!(c.treatment().unwrap(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(c.group_sizes().unwrap(), (2, 2));
    }

    #[test]
    fn text_treatment_uses_explicit_level() {
        let d = load_csv(
            b"arm,y,x\nacra,1,1\nmet,2,2\nacra,3,3\nmet,4,5\n",
            &ParseOptions::default(),
        )
        .unwrap();
        let mk = |lvl| {
            roles(
                &[
                    ("arm", ColumnRole::Treatment),
                    ("y", ColumnRole::Outcome),
                    ("x", ColumnRole::ContinuousConfounder),
                ],
                lvl,
            )
        };
        let a = assign_roles(&d, &mk("met")).unwrap();
        assert_eq!(a.treatment().unwrap(), &[0.0, 1.0, 0.0, 1.0]);
        assert!(assign_roles(&d, &mk("other")).is_err());
    }

    #[test]
    fn constant_treatment_is_one_group_empty() {
        let d = load_csv(b"t,y,x\n1,1,1\n1,2,2\n1,3,3\n", &ParseOptions::default()).unwrap();
        let r = roles(
            &[
                ("t", ColumnRole::Treatment),
                ("y", ColumnRole::Outcome),
                ("x", ColumnRole::ContinuousConfounder),
            ],
            "1",
        );
        let msg = assign_roles(&d, &r).unwrap_err().to_string();
        assert!(msg.contains("one group empty"), "{msg}");
    }

    #[test]
    fn single_level_categorical_has_no_variation() {
        let d = load_csv(
            b"t,y,c\n1,1,a\n0,2,a\n1,3,a\n0,4,a\n",
            &ParseOptions::default(),
        )
        .unwrap();
        let r = roles(
            &[
                ("t", ColumnRole::Treatment),
                ("y", ColumnRole::Outcome),
                ("c", ColumnRole::CategoricalConfounder),
            ],
            "1",
        );
        let msg = assign_roles(&d, &r).unwrap_err().to_string();
        assert!(msg.contains("no variation"), "{msg}");
    }

    #[test]
    fn zero_confounders_rejected() {
        let d = load_csv(b"t,y\n1,1\n0,2\n1,3\n0,4\n", &ParseOptions::default()).unwrap();
        let r = roles(
            &[("t", ColumnRole::Treatment), ("y", ColumnRole::Outcome)],
            "1",
        );
        assert!(assign_roles(&d, &r).is_err());
    }

    #[test]
    fn categorical_expands_to_level_features() {
        let d = load_csv(
            b"t,y,race\n1,1,White\n0,2,Hispanic\n1,3,African American\n0,4,other\n1,5,White\n0,6,other\n",
            &ParseOptions::default(),
        )
        .unwrap();
        let r = roles(
            &[
                ("t", ColumnRole::Treatment),
                ("y", ColumnRole::Outcome),
                ("race", ColumnRole::CategoricalConfounder),
            ],
            "1",
        );
        let c = assign_roles(&d, &r).unwrap();
        let f = c.balance_features().unwrap();
        assert_eq!(f.len(), 4);
        for i in 0..c.n_rows() {
            let s: f64 = f.iter().map(|x| x.values[i]).sum();
            assert_eq!(s, 1.0);
        }
    }
}
