//! Longitudinal datasets: one block of `T_iv x p` observations per
//! (subject, visit), each carrying a covariate vector of length `q`.
//!
//! Observations and covariates are read from two CSV files:
//!
//! ```text
//! subject_id,visit,y1,...,yp      one row per time point, rows of a visit contiguous
//! subject_id,visit,x1,...,xq      exactly one row per (subject, visit)
//! ```

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{LcapError, Result};

/// Relative column-variance threshold under which a column is reported as
/// near-constant.
const NEAR_CONSTANT_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct VisitBlock {
    pub subject_id: String,
    pub visit: i64,
    /// Rows are time points.
    pub observations: DMatrix<f64>,
    pub covariates: DVector<f64>,
    /// Set once the column means have been removed.
    pub centered: bool,
}

impl VisitBlock {
    pub fn new(
        subject_id: impl Into<String>,
        visit: i64,
        observations: DMatrix<f64>,
        covariates: DVector<f64>,
    ) -> Self {
        VisitBlock {
            subject_id: subject_id.into(),
            visit,
            observations,
            covariates,
            centered: false,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.observations.nrows()
    }

    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }

    /// Subtracts the column means in place.
    pub fn center(&mut self) {
        let t = self.observations.nrows();
        if t > 0 {
            for mut col in self.observations.column_iter_mut() {
                let mean = col.sum() / t as f64;
                col.add_scalar_mut(-mean);
            }
        }
        self.centered = true;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Sorted by visit index.
    pub visits: Vec<VisitBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    pub subjects: Vec<Subject>,
    pub p: usize,
    pub q: usize,
    pub centered: bool,
}

/// Location of a block inside a dataset, used in validation messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLocator {
    pub subject_id: String,
    pub visit: i64,
}

impl std::fmt::Display for BlockLocator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "subject {} visit {}", self.subject_id, self.visit)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub errors: Vec<(Option<BlockLocator>, String)>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_result(self) -> Result<Vec<String>> {
        if self.errors.is_empty() {
            return Ok(self.warnings);
        }
        let msg = self
            .errors
            .iter()
            .map(|(loc, m)| match loc {
                Some(loc) => format!("{loc}: {m}"),
                None => m.clone(),
            })
            .collect::<Vec<_>>()
            .join("; ");
        Err(LcapError::Invalid(msg))
    }
}

impl LongitudinalDataset {
    /// Groups blocks by subject (in order of first appearance) and sorts each
    /// subject's visits. Structural invariants beyond grouping are checked by
    /// [`validate_dataset`].
    pub fn from_blocks(blocks: Vec<VisitBlock>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| LcapError::Invalid("dataset has no blocks".into()))?;
        let p = first.dim();
        let q = first.covariates.len();

        let mut order: Vec<String> = Vec::new();
        let mut by_subject: HashMap<String, Vec<VisitBlock>> = HashMap::new();
        let mut seen = HashSet::new();
        for block in blocks {
            if !seen.insert((block.subject_id.clone(), block.visit)) {
                return Err(LcapError::Invalid(format!(
                    "duplicate (subject, visit) pair ({}, {})",
                    block.subject_id, block.visit
                )));
            }
            if !by_subject.contains_key(&block.subject_id) {
                order.push(block.subject_id.clone());
            }
            by_subject
                .entry(block.subject_id.clone())
                .or_default()
                .push(block);
        }
        let subjects: Vec<Subject> = order
            .into_iter()
            .map(|id| {
                let mut visits = by_subject.remove(&id).unwrap_or_default();
                visits.sort_by_key(|b| b.visit);
                Subject { id, visits }
            })
            .collect();
        let centered = subjects
            .iter()
            .flat_map(|s| s.visits.iter())
            .all(|b| b.centered);
        Ok(LongitudinalDataset {
            subjects,
            p,
            q,
            centered,
        })
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.subjects.iter().map(|s| s.visits.len()).sum()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &VisitBlock> {
        self.subjects.iter().flat_map(|s| s.visits.iter())
    }

    /// Total number of observation rows, `N = sum_i sum_v T_iv`.
    pub fn total_rows(&self) -> usize {
        self.blocks().map(VisitBlock::n_rows).sum()
    }
}

/// Removes per-block column means. Idempotent up to rounding.
pub fn center_dataset(mut ds: LongitudinalDataset) -> LongitudinalDataset {
    for subject in &mut ds.subjects {
        for block in &mut subject.visits {
            block.center();
        }
    }
    ds.centered = true;
    ds
}

pub fn validate_dataset(ds: &LongitudinalDataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    if ds.subjects.is_empty() {
        report.errors.push((None, "dataset has no subjects".into()));
        return report;
    }

    let mut ids = HashSet::new();
    let mut min_t = usize::MAX;
    for subject in &ds.subjects {
        if !ids.insert(subject.id.as_str()) {
            report
                .errors
                .push((None, format!("duplicate subject id {}", subject.id)));
        }
        if subject.visits.is_empty() {
            report
                .errors
                .push((None, format!("subject {} has no visits", subject.id)));
        }
        let mut visits = HashSet::new();
        for block in &subject.visits {
            let loc = || {
                Some(BlockLocator {
                    subject_id: block.subject_id.clone(),
                    visit: block.visit,
                })
            };
            if block.subject_id != subject.id {
                report
                    .errors
                    .push((loc(), "block filed under the wrong subject".into()));
            }
            if !visits.insert(block.visit) {
                report.errors.push((loc(), "duplicate visit index".into()));
            }
            if block.visit < 1 {
                report
                    .errors
                    .push((loc(), "visit index must be >= 1".into()));
            }
            let t = block.n_rows();
            min_t = min_t.min(t);
            if t < 2 {
                report.errors.push((loc(), "T_iv >= 2 required".into()));
            }
            if block.dim() != ds.p {
                report.errors.push((
                    loc(),
                    format!(
                        "outcome dimension {} differs from p = {}",
                        block.dim(),
                        ds.p
                    ),
                ));
            }
            if block.covariates.len() != ds.q {
                report.errors.push((
                    loc(),
                    format!(
                        "covariate length {} differs from q = {}",
                        block.covariates.len(),
                        ds.q
                    ),
                ));
            }
            if let Some(pos) = block.observations.iter().position(|v| !v.is_finite()) {
                let nrows = block.n_rows().max(1);
                report.errors.push((
                    loc(),
                    format!("non-finite observation at row {}", pos % nrows + 1),
                ));
            }
            if block.covariates.iter().any(|v| !v.is_finite()) {
                report.errors.push((loc(), "non-finite covariate".into()));
            }
            if t >= 2 && block.dim() == ds.p {
                for (j, col) in block.observations.column_iter().enumerate() {
                    let mean = col.sum() / t as f64;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
                    let scale = col.iter().map(|v| v * v).sum::<f64>() / t as f64;
                    if var <= NEAR_CONSTANT_REL * scale.max(f64::MIN_POSITIVE) {
                        report.warnings.push(format!(
                            "subject {} visit {}: column y{} is near-constant",
                            block.subject_id,
                            block.visit,
                            j + 1
                        ));
                    }
                }
            }
        }
    }
    if ds.total_rows() == 0 {
        report.errors.push((None, "no observations".into()));
    }
    if min_t != usize::MAX && ds.p > min_t {
        report.warnings.push(format!(
            "high-dimensional regime: shrinkage estimator required (p = {} > min T_iv = {min_t})",
            ds.p
        ));
    }
    report
}

fn parse_f64(path: &Path, line: u64, field: &str, name: &str) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| {
        LcapError::parse(
            path,
            line,
            format!("column {name}: cannot parse {field:?} as a number"),
        )
    })?;
    if !value.is_finite() {
        return Err(LcapError::parse(
            path,
            line,
            format!("column {name}: non-finite value {field:?}"),
        ));
    }
    Ok(value)
}

fn parse_visit(path: &Path, line: u64, field: &str) -> Result<i64> {
    field
        .trim()
        .parse()
        .map_err(|_| LcapError::parse(path, line, format!("visit {field:?} is not an integer")))
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| LcapError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(path: &Path, headers: &csv::StringRecord, prefix: char) -> Result<usize> {
    if headers.len() < 3 || &headers[0] != "subject_id" || &headers[1] != "visit" {
        return Err(LcapError::parse(
            path,
            1,
            format!("header must be subject_id,visit,{prefix}1,..."),
        ));
    }
    for (k, name) in headers.iter().skip(2).enumerate() {
        if name != format!("{prefix}{}", k + 1) {
            return Err(LcapError::parse(
                path,
                1,
                format!("expected column {prefix}{}, found {name:?}", k + 1),
            ));
        }
    }
    Ok(headers.len() - 2)
}

struct RawBlock {
    subject: String,
    visit: i64,
    rows: Vec<f64>,
    n_rows: usize,
}

/// Reads the observation and covariate CSV files into a dataset. Visits are
/// sorted per subject; the result is not centered.
pub fn load_dataset(data_path: &Path, covariate_path: &Path) -> Result<LongitudinalDataset> {
    let mut rdr = open_csv(data_path)?;
    let headers = rdr
        .headers()
        .map_err(|e| LcapError::parse(data_path, 1, e.to_string()))?
        .clone();
    let p = check_header(data_path, &headers, 'y')?;

    let mut raw: Vec<RawBlock> = Vec::new();
    let mut finished: HashSet<(String, i64)> = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            LcapError::parse(data_path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != p + 2 {
            return Err(LcapError::parse(
                data_path,
                line,
                format!("expected {} fields, found {}", p + 2, rec.len()),
            ));
        }
        let subject = rec[0].to_string();
        let visit = parse_visit(data_path, line, &rec[1])?;
        let same_block = raw
            .last()
            .is_some_and(|b| b.subject == subject && b.visit == visit);
        if !same_block {
            if let Some(prev) = raw.last() {
                finished.insert((prev.subject.clone(), prev.visit));
            }
            if finished.contains(&(subject.clone(), visit)) {
                return Err(LcapError::parse(
                    data_path,
                    line,
                    format!("duplicate (subject, visit) pair ({subject}, {visit}): rows are not contiguous"),
                ));
            }
            raw.push(RawBlock {
                subject: subject.clone(),
                visit,
                rows: Vec::new(),
                n_rows: 0,
            });
        }
        let block = raw.last_mut().expect("block pushed above");
        for (k, field) in rec.iter().skip(2).enumerate() {
            block
                .rows
                .push(parse_f64(data_path, line, field, &format!("y{}", k + 1))?);
        }
        block.n_rows += 1;
    }
    if raw.is_empty() {
        return Err(LcapError::parse(data_path, 1, "no observation rows"));
    }

    let mut rdr = open_csv(covariate_path)?;
    let headers = rdr
        .headers()
        .map_err(|e| LcapError::parse(covariate_path, 1, e.to_string()))?
        .clone();
    let q = check_header(covariate_path, &headers, 'x')?;
    let known_subjects: HashSet<&str> = raw.iter().map(|b| b.subject.as_str()).collect();
    let known_pairs: HashSet<(&str, i64)> =
        raw.iter().map(|b| (b.subject.as_str(), b.visit)).collect();
    let mut covariates: HashMap<(String, i64), DVector<f64>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            LcapError::parse(covariate_path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != q + 2 {
            return Err(LcapError::parse(
                covariate_path,
                line,
                format!("expected {} fields, found {}", q + 2, rec.len()),
            ));
        }
        let subject = rec[0].to_string();
        let visit = parse_visit(covariate_path, line, &rec[1])?;
        if !known_subjects.contains(subject.as_str()) {
            return Err(LcapError::parse(
                covariate_path,
                line,
                format!("unknown subject {subject}"),
            ));
        }
        if !known_pairs.contains(&(subject.as_str(), visit)) {
            return Err(LcapError::parse(
                covariate_path,
                line,
                format!("no observations for (subject, visit) pair ({subject}, {visit})"),
            ));
        }
        let mut x = Vec::with_capacity(q);
        for (k, field) in rec.iter().skip(2).enumerate() {
            x.push(parse_f64(
                covariate_path,
                line,
                field,
                &format!("x{}", k + 1),
            )?);
        }
        if covariates
            .insert((subject.clone(), visit), DVector::from_vec(x))
            .is_some()
        {
            return Err(LcapError::parse(
                covariate_path,
                line,
                format!("duplicate (subject, visit) pair ({subject}, {visit})"),
            ));
        }
    }

    let mut blocks = Vec::with_capacity(raw.len());
    for b in raw {
        let x = covariates
            .remove(&(b.subject.clone(), b.visit))
            .ok_or_else(|| {
                LcapError::parse(
                    covariate_path,
                    0,
                    format!(
                        "missing covariates for (subject, visit) pair ({}, {})",
                        b.subject, b.visit
                    ),
                )
            })?;
        let obs = DMatrix::from_row_slice(b.n_rows, p, &b.rows);
        blocks.push(VisitBlock::new(b.subject, b.visit, obs, x));
    }
    LongitudinalDataset::from_blocks(blocks)
}

/// Writes the dataset in the two-file CSV layout read by [`load_dataset`].
/// Values use the shortest representation that parses back to the same bits.
pub fn save_dataset(
    ds: &LongitudinalDataset,
    data_path: &Path,
    covariate_path: &Path,
) -> Result<()> {
    let create = |path: &Path| -> Result<BufWriter<File>> {
        Ok(BufWriter::new(
            File::create(path).map_err(|e| LcapError::io(path, e))?,
        ))
    };
    let mut out = create(data_path)?;
    let io = |e| LcapError::io(data_path, e);
    write!(out, "subject_id,visit").map_err(io)?;
    for j in 1..=ds.p {
        write!(out, ",y{j}").map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    for block in ds.blocks() {
        for row in block.observations.row_iter() {
            write!(out, "{},{}", block.subject_id, block.visit).map_err(io)?;
            for v in row.iter() {
                write!(out, ",{v}").map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
    }
    out.flush().map_err(io)?;

    let mut out = create(covariate_path)?;
    let io = |e| LcapError::io(covariate_path, e);
    write!(out, "subject_id,visit").map_err(io)?;
    for k in 1..=ds.q {
        write!(out, ",x{k}").map_err(io)?;
    }
    writeln!(out).map_err(io)?;
    for block in ds.blocks() {
        write!(out, "{},{}", block.subject_id, block.visit).map_err(io)?;
        for v in block.covariates.iter() {
            write!(out, ",{v}").map_err(io)?;
        }
        writeln!(out).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(s: &str, v: i64, rows: &[&[f64]], x: &[f64]) -> VisitBlock {
        let p = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        VisitBlock::new(
            s,
            v,
            DMatrix::from_row_slice(rows.len(), p, &flat),
            DVector::from_row_slice(x),
        )
    }

    #[test]
    fn center_removes_means() {
        let ds = LongitudinalDataset::from_blocks(vec![block(
            "a",
            1,
            &[&[1.0, 2.0], &[3.0, 4.0]],
            &[0.0],
        )])
        .unwrap();
        let c = center_dataset(ds);
        assert!(c.centered);
        let b = &c.subjects[0].visits[0];
        assert_eq!(
            b.observations,
            DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, 1.0])
        );
    }

    #[test]
    fn center_two_row_minimum() {
        let ds = LongitudinalDataset::from_blocks(vec![block(
            "a",
            1,
            &[&[0.0, 0.0], &[2.0, 2.0]],
            &[0.0],
        )])
        .unwrap();
        let c = center_dataset(ds);
        assert_eq!(
            c.subjects[0].visits[0].observations,
            DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 1.0, 1.0])
        );
    }

    #[test]
    fn center_is_idempotent() {
        let ds = LongitudinalDataset::from_blocks(vec![block(
            "a",
            1,
            &[&[0.3, 2.0], &[1.7, -4.0], &[9.1, 0.25]],
            &[0.0],
        )])
        .unwrap();
        let once = center_dataset(ds);
        let twice = center_dataset(once.clone());
        let a = &once.subjects[0].visits[0].observations;
        let b = &twice.subjects[0].visits[0].observations;
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn visits_sorted_and_grouped() {
        let ds = LongitudinalDataset::from_blocks(vec![
            block("b", 3, &[&[1.0], &[2.0]], &[0.0]),
            block("a", 2, &[&[1.0], &[2.0]], &[0.0]),
            block("b", 1, &[&[1.0], &[2.0]], &[0.0]),
        ])
        .unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.subjects[0].id, "b");
        let visits: Vec<i64> = ds.subjects[0].visits.iter().map(|b| b.visit).collect();
        assert_eq!(visits, vec![1, 3]);
    }

    #[test]
    fn duplicate_pair_rejected() {
        let err = LongitudinalDataset::from_blocks(vec![
            block("a", 1, &[&[1.0], &[2.0]], &[0.0]),
            block("a", 1, &[&[1.0], &[2.0]], &[0.0]),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn validate_flags_short_block() {
        let ds =
            LongitudinalDataset::from_blocks(vec![block("a", 1, &[&[1.0, 2.0]], &[0.0])]).unwrap();
        let report = validate_dataset(&ds);
        assert!(report
            .errors
            .iter()
            .any(|(_, m)| m.contains("T_iv >= 2 required")));
    }

    #[test]
    fn validate_warns_high_dimensional() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|t| (0..100).map(|j| ((t * 7 + j * 3) % 11) as f64).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let ds = LongitudinalDataset::from_blocks(vec![block("a", 1, &refs, &[1.0])]).unwrap();
        let report = validate_dataset(&ds);
        assert!(report.errors.is_empty(), "{:?}", report.errors);
        assert!(report
            .warnings
            .iter()
            .any(|w| w.contains("high-dimensional regime: shrinkage estimator required")));
    }

    #[test]
    fn validate_accepts_well_formed() {
        let ds = LongitudinalDataset::from_blocks(vec![
            block("a", 1, &[&[1.0, 0.0], &[0.0, 2.0], &[3.0, 1.0]], &[0.5]),
            block("b", 1, &[&[1.0, 5.0], &[2.0, 2.0], &[0.0, 1.0]], &[1.5]),
        ])
        .unwrap();
        let report = validate_dataset(&ds);
        assert!(report.is_ok());
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn validate_flags_non_finite_and_bad_covariates() {
        let ds = LongitudinalDataset::from_blocks(vec![
            block("a", 1, &[&[1.0, f64::NAN], &[0.0, 2.0]], &[0.5]),
            block("b", 1, &[&[1.0, 5.0], &[2.0, 2.0]], &[1.5, 2.0]),
        ])
        .unwrap();
        let report = validate_dataset(&ds);
        assert!(report.errors.iter().any(|(_, m)| m.contains("non-finite")));
        assert!(report
            .errors
            .iter()
            .any(|(_, m)| m.contains("covariate length")));
    }
}
