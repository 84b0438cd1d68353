//! Per-block sufficient statistics used by every fitting routine.
//!
//! Under the mean-zero Gaussian model the likelihood depends on a visit block
//! only through `T_iv`, its covariates and its sample covariance, so the
//! estimators work on a [`Panel`] rather than on raw observation rows.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::covariance::{sample_covariance, CovarianceSet};
use crate::data::{validate_dataset, LongitudinalDataset};
use crate::error::{LcapError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDesign {
    /// Index into [`Design::subject_ids`].
    pub subject: usize,
    pub visit: i64,
    pub t: usize,
    pub x: DVector<f64>,
}

/// Subject grouping, visit sizes and covariates. Blocks of one subject are
/// contiguous and ordered by visit.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub blocks: Vec<BlockDesign>,
    pub subject_ids: Vec<String>,
    pub subject_ranges: Vec<Range<usize>>,
    pub q: usize,
}

impl Design {
    /// Builds the grouping from blocks that are already sorted by subject.
    pub fn new(blocks: Vec<BlockDesign>, subject_ids: Vec<String>, q: usize) -> Result<Self> {
        let n = subject_ids.len();
        let mut ranges: Vec<Range<usize>> = Vec::with_capacity(n);
        let mut start = 0;
        for (i, id) in subject_ids.iter().enumerate() {
            let mut end = start;
            while end < blocks.len() && blocks[end].subject == i {
                end += 1;
            }
            if end == start {
                return Err(LcapError::Invalid(format!(
                    "subject {} has no visits or blocks are not grouped by subject",
                    id
                )));
            }
            ranges.push(start..end);
            start = end;
        }
        if start != blocks.len() {
            return Err(LcapError::Invalid(
                "blocks are not grouped by subject index".into(),
            ));
        }
        if let Some(b) = blocks.iter().find(|b| b.x.len() != q) {
            return Err(LcapError::Invalid(format!(
                "covariate length {} differs from q = {q}",
                b.x.len()
            )));
        }
        Ok(Design {
            blocks,
            subject_ids,
            subject_ranges: ranges,
            q,
        })
    }

    pub fn n(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_visits(&self, subject: usize) -> usize {
        self.subject_ranges[subject].len()
    }

    pub fn total_t(&self) -> f64 {
        self.blocks.iter().map(|b| b.t as f64).sum()
    }

    /// Pooling weight `1 / (n V_i)` of each block.
    pub fn pooling_weights(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.blocks
            .iter()
            .map(|b| 1.0 / (n * self.n_visits(b.subject) as f64))
            .collect()
    }
}

/// A design together with the per-block sample covariances.
#[derive(Debug, Clone)]
pub struct Panel {
    pub design: Design,
    pub sample: CovarianceSet,
}

impl Panel {
    pub fn new(design: Design, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.len() != design.n_blocks() {
            return Err(LcapError::Invalid(format!(
                "{} covariance matrices for {} blocks",
                matrices.len(),
                design.n_blocks()
            )));
        }
        let weights: Vec<f64> = design.blocks.iter().map(|b| b.t as f64).collect();
        let sample = CovarianceSet::sample(matrices, weights)?;
        Ok(Panel { design, sample })
    }

    /// Validates the dataset and computes the sample covariance of every
    /// block. The dataset must be centered.
    pub fn from_dataset(ds: &LongitudinalDataset) -> Result<Self> {
        validate_dataset(ds).into_result()?;
        if !ds.centered {
            return Err(LcapError::Precondition(
                "dataset must be centered before computing covariances".into(),
            ));
        }
        let mut blocks = Vec::with_capacity(ds.n_blocks());
        let mut matrices = Vec::with_capacity(ds.n_blocks());
        let mut ids = Vec::with_capacity(ds.n());
        for (i, subject) in ds.subjects.iter().enumerate() {
            ids.push(subject.id.clone());
            for block in &subject.visits {
                matrices.push(sample_covariance(block)?);
                blocks.push(BlockDesign {
                    subject: i,
                    visit: block.visit,
                    t: block.n_rows(),
                    x: block.covariates.clone(),
                });
            }
        }
        let design = Design::new(blocks, ids, ds.q)?;
        Panel::new(design, matrices)
    }

    pub fn p(&self) -> usize {
        self.sample.dim()
    }

    /// Panel built from the listed subjects, in the listed order. Repeated
    /// indices become distinct subjects.
    pub fn resample(&self, subjects: &[usize]) -> Result<Panel> {
        let mut blocks = Vec::new();
        let mut matrices = Vec::new();
        let mut ids = Vec::with_capacity(subjects.len());
        for (new_i, &old_i) in subjects.iter().enumerate() {
            let range =
                self.design.subject_ranges.get(old_i).ok_or_else(|| {
                    LcapError::Invalid(format!("subject index {old_i} out of range"))
                })?;
            ids.push(format!("{}#{new_i}", self.design.subject_ids[old_i]));
            for k in range.clone() {
                let mut b = self.design.blocks[k].clone();
                b.subject = new_i;
                blocks.push(b);
                matrices.push(self.sample.base(k).clone());
            }
        }
        Panel::new(Design::new(blocks, ids, self.design.q)?, matrices)
    }

    /// Keeps only the blocks with visit index `visit`; every subject must have
    /// one.
    pub fn single_visit(&self, visit: i64) -> Result<Panel> {
        let mut blocks = Vec::new();
        let mut matrices = Vec::new();
        for (i, range) in self.design.subject_ranges.iter().enumerate() {
            let k = range
                .clone()
                .find(|&k| self.design.blocks[k].visit == visit)
                .ok_or_else(|| {
                    LcapError::Invalid(format!(
                        "subject {} has no visit {visit}",
                        self.design.subject_ids[i]
                    ))
                })?;
            blocks.push(self.design.blocks[k].clone());
            matrices.push(self.sample.base(k).clone());
        }
        Panel::new(
            Design::new(blocks, self.design.subject_ids.clone(), self.design.q)?,
            matrices,
        )
    }

    /// Keeps each subject's earliest visit.
    pub fn first_visits(&self) -> Result<Panel> {
        let ks: Vec<usize> = self.design.subject_ranges.iter().map(|r| r.start).collect();
        let blocks = ks.iter().map(|&k| self.design.blocks[k].clone()).collect();
        let matrices = ks.iter().map(|&k| self.sample.base(k).clone()).collect();
        Panel::new(
            Design::new(blocks, self.design.subject_ids.clone(), self.design.q)?,
            matrices,
        )
    }
}
