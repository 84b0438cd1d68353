//! Synthetic longitudinal covariance data.
//!
//! Every block has covariance `Sigma_iv = Pi Lambda_iv Pi'` with
//!
//! ```text
//! log lambda_iv,j = beta0_j + u_ij + x_iv' beta^(j),   u_ij ~ N(0, sigma2),
//! ```
//!
//! two covariates per visit (`x1 ~ Bernoulli(0.5)`, `x2 ~ N(0, 0.5^2)`) and
//! covariate effects on a few chosen dimensions.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LongitudinalDataset, VisitBlock};
use crate::error::{LcapError, Result};
use crate::panel::{BlockDesign, Design, Panel};

/// Number of covariates produced by the generator.
pub const N_COVARIATES: usize = 2;

const STREAM_BASIS: u64 = 0;
const STREAM_SUBJECTS: u64 = 1;
const STREAM_BLOCKS: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Beta0Profile {
    /// `beta0_j = to + (from - to) (e^{-rate (j-1)} - e^{-rate (p-1)}) / (1 - e^{-rate (p-1)})`:
    /// exponential decay pinned at `from` for `j = 1` and `to` for `j = p`.
    Exponential {
        from: f64,
        to: f64,
        rate: f64,
    },
    Constant {
        value: f64,
    },
    Custom {
        values: Vec<f64>,
    },
}

impl Beta0Profile {
    pub fn values(&self, p: usize) -> Result<DVector<f64>> {
        match self {
            Beta0Profile::Exponential { from, to, rate } => {
                if p == 1 {
                    return Ok(DVector::from_element(1, *from));
                }
                let last = (-rate * (p - 1) as f64).exp();
                Ok(DVector::from_fn(p, |j, _| {
                    let e = (-rate * j as f64).exp();
                    to + (from - to) * (e - last) / (1.0 - last)
                }))
            }
            Beta0Profile::Constant { value } => Ok(DVector::from_element(p, *value)),
            Beta0Profile::Custom { values } => {
                if values.len() != p {
                    return Err(LcapError::Invalid(format!(
                        "beta0.values: {} entries, expected p = {p}",
                        values.len()
                    )));
                }
                Ok(DVector::from_column_slice(values))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSpec {
    /// Haar-distributed orthogonal matrix drawn from the seed.
    Random,
    Identity,
}

/// Covariate effects on one (1-based) dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimEffect {
    pub dim: usize,
    pub beta: [f64; N_COVARIATES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub p: usize,
    pub n: usize,
    pub v: usize,
    pub t: usize,
    pub basis: BasisSpec,
    pub beta0: Beta0Profile,
    pub effects: Vec<DimEffect>,
    pub sigma2: f64,
    /// Dimension used when scoring estimates.
    pub target_dim: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            p: 20,
            n: 50,
            v: 5,
            t: 50,
            basis: BasisSpec::Random,
            beta0: Beta0Profile::Exponential {
                from: 3.0,
                to: -3.0,
                rate: 0.5,
            },
            effects: vec![
                DimEffect {
                    dim: 2,
                    beta: [-0.5, 0.5],
                },
                DimEffect {
                    dim: 4,
                    beta: [0.5, -0.25],
                },
            ],
            sigma2: 0.01,
            target_dim: 4,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(LcapError::Invalid(format!("{field}: {msg}")));
        if self.p < 1 {
            return bad("p", "must be >= 1");
        }
        if self.n < 1 {
            return bad("n", "must be >= 1");
        }
        if self.v < 1 {
            return bad("v", "must be >= 1");
        }
        if self.t < 2 {
            return bad("t", "must be >= 2");
        }
        if !(self.sigma2 >= 0.0) {
            return bad("sigma2", "must be >= 0");
        }
        if self.target_dim < 1 || self.target_dim > self.p {
            return bad("target_dim", "must lie in 1..=p");
        }
        for (k, e) in self.effects.iter().enumerate() {
            if e.dim < 1 || e.dim > self.p {
                return bad(&format!("effects[{k}].dim"), "must lie in 1..=p");
            }
        }
        self.beta0.values(self.p).map(|_| ())
    }

    /// `p x 2` matrix of covariate effects per dimension.
    pub fn effect_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p, N_COVARIATES);
        for e in &self.effects {
            for c in 0..N_COVARIATES {
                m[(e.dim - 1, c)] = e.beta[c];
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub pi: DMatrix<f64>,
    pub beta0: DVector<f64>,
    /// Row `j` holds the covariate effects of dimension `j + 1`.
    pub beta: DMatrix<f64>,
    pub sigma2: f64,
    /// `n x p` random intercept deviations.
    pub u: DMatrix<f64>,
    pub design: Design,
    /// `log lambda_iv` per block.
    pub log_lambda: Vec<DVector<f64>>,
    pub target_dim: usize,
}

impl SimTruth {
    pub fn covariance(&self, k: usize) -> DMatrix<f64> {
        let lambda = self.log_lambda[k].map(f64::exp);
        let scaled = DMatrix::from_fn(self.pi.nrows(), self.pi.ncols(), |r, c| {
            self.pi[(r, c)] * lambda[c]
        });
        scaled * self.pi.transpose()
    }

    /// Unit direction of dimension `dim` (1-based).
    pub fn direction(&self, dim: usize) -> DVector<f64> {
        self.pi.column(dim - 1).into_owned()
    }

    /// True covariate effects on dimension `dim` (1-based).
    pub fn effects(&self, dim: usize) -> DVector<f64> {
        self.beta.row(dim - 1).transpose()
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Haar orthogonal matrix: QR of a Gaussian matrix with the signs of
/// `diag(R)` moved into `Q`.
pub fn random_orthogonal(p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Draws the basis, the random effects, the covariates and the eigenvalues.
pub fn generate_truth(cfg: &SimConfig, seed: u64) -> Result<SimTruth> {
    cfg.validate()?;
    let p = cfg.p;
    let pi = match cfg.basis {
        BasisSpec::Identity => DMatrix::identity(p, p),
        BasisSpec::Random => random_orthogonal(p, &mut rng_for(seed, STREAM_BASIS)),
    };
    let beta0 = cfg.beta0.values(p)?;
    let beta = cfg.effect_matrix();

    let mut rng = rng_for(seed, STREAM_SUBJECTS);
    let sd = cfg.sigma2.sqrt();
    let u = DMatrix::from_fn(cfg.n, p, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        sd * z
    });
    let x2 = Normal::new(0.0, 0.5).expect("valid normal");
    let mut blocks = Vec::with_capacity(cfg.n * cfg.v);
    let mut log_lambda = Vec::with_capacity(cfg.n * cfg.v);
    for i in 0..cfg.n {
        for v in 0..cfg.v {
            let x = DVector::from_vec(vec![
                if rng.gen_bool(0.5) { 1.0 } else { 0.0 },
                x2.sample(&mut rng),
            ]);
            let ll = DVector::from_fn(p, |j, _| {
                beta0[j] + u[(i, j)] + beta.row(j).dot(&x.transpose())
            });
            log_lambda.push(ll);
            blocks.push(BlockDesign {
                subject: i,
                visit: v as i64 + 1,
                t: cfg.t,
                x,
            });
        }
    }
    let ids = (0..cfg.n).map(|i| format!("s{:04}", i + 1)).collect();
    let design = Design::new(blocks, ids, N_COVARIATES)?;
    Ok(SimTruth {
        pi,
        beta0,
        beta,
        sigma2: cfg.sigma2,
        u,
        design,
        log_lambda,
        target_dim: cfg.target_dim,
    })
}

/// `Pi Lambda^{1/2}`, so that `y = L z` has covariance `Sigma_iv`.
fn root_factor(truth: &SimTruth, k: usize) -> DMatrix<f64> {
    let half = truth.log_lambda[k].map(|l| (0.5 * l).exp());
    DMatrix::from_fn(truth.pi.nrows(), truth.pi.ncols(), |r, c| {
        truth.pi[(r, c)] * half[c]
    })
}

/// Full dataset with `T` Gaussian rows per block (not centered).
pub fn generate_dataset(cfg: &SimConfig, seed: u64) -> Result<(LongitudinalDataset, SimTruth)> {
    let truth = generate_truth(cfg, seed)?;
    let blocks: Vec<VisitBlock> = (0..truth.design.n_blocks())
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed, STREAM_BLOCKS + k as u64);
            let z = DMatrix::<f64>::from_fn(cfg.t, cfg.p, |_, _| StandardNormal.sample(&mut rng));
            let y = z * root_factor(&truth, k).transpose();
            let b = &truth.design.blocks[k];
            VisitBlock::new(
                truth.design.subject_ids[b.subject].clone(),
                b.visit,
                y,
                b.x.clone(),
            )
        })
        .collect();
    Ok((LongitudinalDataset::from_blocks(blocks)?, truth))
}

/// Sample covariance of `T` centered Gaussian rows drawn directly from its
/// distribution, `(1/T) L W L'` with `W ~ Wishart(T - 1, I)`.
///
/// Uses the Bartlett decomposition when `T - 1 >= p` and explicit Gaussian
/// rows otherwise.
fn centered_sample_covariance(l: &DMatrix<f64>, t: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let p = l.nrows();
    let df = t - 1;
    let m = if df >= p {
        let mut a = DMatrix::zeros(p, p);
        for j in 0..p {
            let chi = ChiSquared::new((df - j) as f64).expect("positive degrees of freedom");
            a[(j, j)] = chi.sample(rng).sqrt();
            for c in 0..j {
                a[(j, c)] = StandardNormal.sample(rng);
            }
        }
        l * a
    } else {
        let z = DMatrix::from_fn(p, df, |_, _| StandardNormal.sample(rng));
        l * z
    };
    let mut s = &m * m.transpose() / t as f64;
    for r in 0..p {
        for c in 0..r {
            s[(c, r)] = s[(r, c)];
        }
    }
    s
}

/// Panel of sample covariances with the same distribution as centering and
/// summarizing [`generate_dataset`] output, without materializing rows.
pub fn generate_panel(cfg: &SimConfig, seed: u64) -> Result<(Panel, SimTruth)> {
    let truth = generate_truth(cfg, seed)?;
    let matrices: Vec<DMatrix<f64>> = (0..truth.design.n_blocks())
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed, STREAM_BLOCKS + k as u64);
            centered_sample_covariance(&root_factor(&truth, k), cfg.t, &mut rng)
        })
        .collect();
    let panel = Panel::new(truth.design.clone(), matrices)?;
    Ok((panel, truth))
}

/// Panel whose "sample" covariances are the true `Sigma_iv`.
pub fn population_panel(truth: &SimTruth) -> Result<Panel> {
    let matrices = (0..truth.design.n_blocks())
        .map(|k| truth.covariance(k))
        .collect();
    Panel::new(truth.design.clone(), matrices)
}
