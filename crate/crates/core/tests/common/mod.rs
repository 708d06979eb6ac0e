#![allow(dead_code)]

use std::ops::RangeInclusive;

use bltree::{BeliefSpec, BeliefTree, Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// A tree generated as a linear process: each child is `A parent + b + L z`.
/// `factors[i]` carries every node's quantities as a linear map of the
/// independent driving noise, so samples are consistent with the moments
/// even when variances are singular.
pub struct RandomTree {
    pub tree: BeliefTree,
    pub names: Vec<String>,
    means: Vec<Vector>,
    factors: Vec<Matrix>,
}

impl RandomTree {
    /// One joint draw of every node's quantities.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<Vector> {
        let width = self.factors.first().map_or(0, |f| f.ncols());
        let z = gaussian_vector(rng, width);
        self.means.iter().zip(&self.factors).map(|(m, f)| m + f * &z).collect()
    }
}

/// Random tree with `nodes` nodes whose sizes are drawn from `dims`. A
/// quarter of the noise factors are rank deficient. With `chain` set every
/// node hangs off its predecessor.
pub fn random_tree(rng: &mut ChaCha8Rng, nodes: usize, dims: RangeInclusive<usize>, chain: bool) -> RandomTree {
    let mut tree = BeliefTree::new();
    let mut names: Vec<String> = Vec::new();
    let mut means: Vec<Vector> = Vec::new();
    let mut factors: Vec<Matrix> = Vec::new();
    let mut width = 0;
    for i in 0..nodes {
        let dim = rng.random_range(dims.clone());
        let rank = if rng.random_bool(0.25) {
            rng.random_range(0..dim.max(1))
        } else {
            dim
        };
        let noise = gaussian_matrix(rng, dim, rank) * rng.random_range(0.3..1.5);
        let offset = gaussian_vector(rng, dim) * 3.0;
        let (mean, factor, parent) = if i == 0 {
            let mut f = Matrix::zeros(dim, rank);
            f.columns_mut(0, rank).copy_from(&noise);
            (offset, f, None)
        } else {
            let p = if chain { i - 1 } else { rng.random_range(0..i) };
            let pdim = means[p].len();
            // Keeps the gain near unit spectral norm so long chains stay bounded.
            let a = gaussian_matrix(rng, dim, pdim) * (0.9 / ((dim as f64).sqrt() + (pdim as f64).sqrt()));
            let mut f = Matrix::zeros(dim, width + rank);
            let pf = &factors[p];
            f.columns_mut(0, pf.ncols()).copy_from(&(&a * pf));
            f.columns_mut(width, rank).copy_from(&noise);
            (&a * &means[p] + offset, f, Some(p))
        };
        width += rank;
        let name = format!("n{i}");
        let labels: Vec<String> = (0..dim).map(|j| format!("n{i}.{j}")).collect();
        let var = &factor * factor.transpose();
        let var = (&var + var.transpose()) * 0.5;
        tree.add_node_unchecked(name.as_str(), labels, BeliefSpec::new(mean.clone(), var).unwrap())
            .unwrap();
        if let Some(p) = parent {
            let pf = &factors[p];
            let cov = pf * factor.columns(0, pf.ncols()).transpose();
            tree.connect(&names[p], &name, cov).unwrap();
        }
        names.push(name);
        means.push(mean);
        factors.push(factor);
    }
    // Pad earlier factors so every factor spans the full noise vector.
    let factors = factors
        .into_iter()
        .map(|f| {
            let mut g = Matrix::zeros(f.nrows(), width);
            g.columns_mut(0, f.ncols()).copy_from(&f);
            g
        })
        .collect();
    RandomTree {
        tree,
        names,
        means,
        factors,
    }
}

/// Largest absolute entry, floored at one, used to scale tolerances.
pub fn scale(m: &Matrix) -> f64 {
    m.amax().max(1.0)
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
