#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lcap::panel::{BlockDesign, Design, Panel};
use lcap::simulation::SimConfig;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(n: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `A A' / p + ridge I` for Gaussian `A`.
pub fn random_spd(p: usize, ridge: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = normal_matrix(p, p, rng);
    let mut m = &a * a.transpose() / p as f64;
    for j in 0..p {
        m[(j, j)] += ridge;
    }
    (&m + m.transpose()) * 0.5
}

/// Design with the given visit counts, random covariates and `T_iv = t`.
pub fn random_design(visits: &[usize], t: usize, q: usize, rng: &mut impl Rng) -> Design {
    let mut blocks = Vec::new();
    for (i, &v) in visits.iter().enumerate() {
        for visit in 0..v {
            blocks.push(BlockDesign {
                subject: i,
                visit: visit as i64 + 1,
                t: t + rng.gen_range(0..3),
                x: normal_vector(q, rng) * 0.5,
            });
        }
    }
    let ids = (0..visits.len()).map(|i| format!("s{i}")).collect();
    Design::new(blocks, ids, q).unwrap()
}

/// Panel of random positive definite matrices on a random design.
pub fn random_panel(visits: &[usize], t: usize, p: usize, q: usize, seed: u64) -> Panel {
    let mut r = rng(seed);
    let design = random_design(visits, t, q, &mut r);
    let mats = (0..design.n_blocks())
        .map(|_| random_spd(p, 0.2, &mut r))
        .collect();
    Panel::new(design, mats).unwrap()
}

pub fn sim_config(p: usize, n: usize, v: usize, t: usize) -> SimConfig {
    SimConfig {
        p,
        n,
        v,
        t,
        ..SimConfig::default()
    }
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(f64::total_cmp);
    v
}
