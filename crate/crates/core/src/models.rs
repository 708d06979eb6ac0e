//! Builders compiling two structured model classes into belief trees:
//! dynamic linear models and n-step exchangeable collections.

use serde::{Deserialize, Serialize};

use crate::belief::BeliefSpec;
use crate::error::{Error, Result};
use crate::kernel::{self, Matrix, Tolerances, Vector};
use crate::tree::BeliefTree;

/// Where the state noise enters the evolution equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseTiming {
    /// `theta_t = G (theta_{t-1} + omega_t)`, so
    /// `Var(theta_t) = G (Var(theta_{t-1}) + W) G^T`.
    #[default]
    BeforeTransition,
    /// `theta_t = G theta_{t-1} + omega_t`, so
    /// `Var(theta_t) = G Var(theta_{t-1}) G^T + W`.
    AfterTransition,
}

/// `X_t = F theta_t + nu_t` with the state evolving through `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct DlmSpec {
    pub horizon: usize,
    pub obs_map: Matrix,
    pub state_transition: Matrix,
    pub state1_expectation: Vector,
    pub state1_variance: Matrix,
    pub obs_noise_variance: Matrix,
    pub state_noise_variance: Matrix,
    pub noise_timing: NoiseTiming,
}

impl DlmSpec {
    /// Linear growth model with level/slope state, observing the level:
    /// `F = (1, 0)`, `G = [[1, 1], [0, 1]]`, `E theta_1 = (20, 0)`,
    /// `Var theta_1 = diag(400, 9)`, `Var nu = 171`, `Var omega = diag(4.75, 0.36)`.
    pub fn linear_growth_example(horizon: usize) -> Self {
        DlmSpec {
            horizon,
            obs_map: Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            state_transition: Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            state1_expectation: Vector::from_column_slice(&[20.0, 0.0]),
            state1_variance: Matrix::from_diagonal(&Vector::from_column_slice(&[400.0, 9.0])),
            obs_noise_variance: Matrix::from_element(1, 1, 171.0),
            state_noise_variance: Matrix::from_diagonal(&Vector::from_column_slice(&[4.75, 0.36])),
            noise_timing: NoiseTiming::BeforeTransition,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_transition.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_map.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.state_dim();
        let m = self.obs_dim();
        let bad = |what: &str| Err(Error::InvalidSpec(what.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if p == 0 || m == 0 {
            return bad("state and observation dimensions must be positive");
        }
        if self.state_transition.shape() != (p, p) {
            return bad("state transition must be square");
        }
        if self.obs_map.ncols() != p {
            return bad("observation map must have one column per state component");
        }
        if self.state1_expectation.len() != p || self.state1_variance.shape() != (p, p) {
            return bad("initial state moments do not match the state dimension");
        }
        if self.state_noise_variance.shape() != (p, p) {
            return bad("state noise variance does not match the state dimension");
        }
        if self.obs_noise_variance.shape() != (m, m) {
            return bad("observation noise variance does not match the observation dimension");
        }
        for m in [
            &self.obs_map,
            &self.state_transition,
            &self.state1_variance,
            &self.obs_noise_variance,
            &self.state_noise_variance,
        ] {
            kernel::check_finite(m)?;
        }
        kernel::check_finite_vector(&self.state1_expectation)?;
        let tol = Tolerances::default();
        for (name, v) in [
            ("initial state variance", &self.state1_variance),
            ("observation noise variance", &self.obs_noise_variance),
            ("state noise variance", &self.state_noise_variance),
        ] {
            kernel::check_psd(v, &tol).map_err(|e| Error::InvalidSpec(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

pub fn state_node(t: usize) -> String {
    format!("theta{t}")
}

pub fn obs_node(t: usize) -> String {
    format!("X{t}")
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (0..n).map(|i| format!("{prefix}.{i}")).collect()
    }
}

/// Chain `theta_1 - ... - theta_T` with a leaf `X_t` on each `theta_t`.
///
/// `cov(X_t, theta_t) = F Var(theta_t)` is stored with `X_t` as the row
/// block; `cov(theta_{t-1}, theta_t) = Var(theta_{t-1}) G^T` with the
/// earlier state as the row block.
pub fn build_dlm(spec: &DlmSpec) -> Result<BeliefTree> {
    spec.validate()?;
    let g = &spec.state_transition;
    let f = &spec.obs_map;
    let mut tree = BeliefTree::new();
    let mut e = spec.state1_expectation.clone();
    let mut v = kernel::symmetrize(&spec.state1_variance)?;
    for t in 1..=spec.horizon {
        if t > 1 {
            let prev_v = v.clone();
            e = g * &e;
            v = match spec.noise_timing {
                NoiseTiming::BeforeTransition => g * (&prev_v + &spec.state_noise_variance) * g.transpose(),
                NoiseTiming::AfterTransition => g * &prev_v * g.transpose() + &spec.state_noise_variance,
            };
            v = kernel::symmetrize(&v)?;
            tree.add_node(
                state_node(t),
                labels(&state_node(t), spec.state_dim()),
                BeliefSpec::new(e.clone(), v.clone())?,
            )?;
            tree.connect(&state_node(t - 1), &state_node(t), prev_v * g.transpose())?;
        } else {
            tree.add_node(
                state_node(t),
                labels(&state_node(t), spec.state_dim()),
                BeliefSpec::new(e.clone(), v.clone())?,
            )?;
        }
        let xe = f * &e;
        let xv = kernel::symmetrize(&(f * &v * f.transpose() + &spec.obs_noise_variance))?;
        tree.add_node(
            obs_node(t),
            labels(&obs_node(t), spec.obs_dim()),
            BeliefSpec::new(xe, xv)?,
        )?;
        tree.connect(&obs_node(t), &state_node(t), f * &v)?;
    }
    Ok(tree)
}

/// `X_i = M + R_i` with `cov(R_i, R_{i+k}) = residual_covariances[k]` for
/// `k < n` and zero beyond.
#[derive(Debug, Clone, PartialEq)]
pub struct NStepSpec {
    pub n: usize,
    pub series_count: usize,
    pub observables: usize,
    pub mean_expectation: Vector,
    pub mean_variance: Matrix,
    pub residual_covariances: Vec<Matrix>,
}

impl NStepSpec {
    /// Unit-variance mean per series and residual covariances
    /// `(n - k) / n * I` at lag `k` (a moving-sum kernel, so PSD).
    pub fn triangular(n: usize, observables: usize, series_count: usize) -> Self {
        let s = series_count;
        NStepSpec {
            n,
            series_count: s,
            observables,
            mean_expectation: Vector::zeros(s),
            mean_variance: Matrix::identity(s, s),
            residual_covariances: (0..n)
                .map(|k| Matrix::identity(s, s) * ((n - k) as f64 / n as f64))
                .collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.observables + 2 - self.n
    }

    fn cov(&self, a: Quantity, b: Quantity) -> Matrix {
        match (a, b) {
            (Quantity::Mean, _) | (_, Quantity::Mean) => self.mean_variance.clone(),
            (Quantity::Obs(i), Quantity::Obs(j)) => {
                let lag = i.abs_diff(j);
                let mut c = self.mean_variance.clone();
                if lag < self.n {
                    let r = &self.residual_covariances[lag];
                    c += if i <= j { r.clone() } else { r.transpose() };
                }
                c
            }
        }
    }

    fn block(&self, rows: &[Quantity], cols: &[Quantity]) -> Matrix {
        let s = self.series_count;
        let mut out = Matrix::zeros(rows.len() * s, cols.len() * s);
        for (a, &qa) in rows.iter().enumerate() {
            for (b, &qb) in cols.iter().enumerate() {
                out.view_mut((a * s, b * s), (s, s)).copy_from(&self.cov(qa, qb));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidSpec(what));
        let s = self.series_count;
        if self.n == 0 || s == 0 {
            return bad("n and series count must be positive".into());
        }
        if self.observables < self.n {
            return bad(format!(
                "need at least n = {} observables, got {}",
                self.n, self.observables
            ));
        }
        if self.mean_expectation.len() != s || self.mean_variance.shape() != (s, s) {
            return bad("mean moments do not match the series count".into());
        }
        if self.residual_covariances.len() != self.n {
            return bad(format!(
                "expected {} residual covariance lags, got {}",
                self.n,
                self.residual_covariances.len()
            ));
        }
        if self.residual_covariances.iter().any(|r| r.shape() != (s, s)) {
            return bad("residual covariances must be series_count x series_count".into());
        }
        for r in &self.residual_covariances {
            kernel::check_finite(r)?;
        }
        kernel::check_finite(&self.mean_variance)?;
        kernel::check_finite_vector(&self.mean_expectation)?;
        let window: Vec<Quantity> = std::iter::once(Quantity::Mean)
            .chain((1..=self.n.min(self.observables)).map(Quantity::Obs))
            .collect();
        let joint = kernel::symmetrize(&self.block(&window, &window))?;
        kernel::check_psd(&joint, &Tolerances::default())
            .map_err(|e| Error::InvalidSpec(format!("window covariance: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quantity {
    Mean,
    Obs(usize),
}

impl Quantity {
    fn labels(self, series: usize) -> Vec<String> {
        match self {
            Quantity::Mean => labels("M", series),
            Quantity::Obs(i) => labels(&format!("X{i}"), series),
        }
    }
}

pub fn nstep_node(k: usize) -> String {
    format!("node{k}")
}

/// Chain of `N - n + 2` nodes. For `n >= 2` node `k` holds the mean and the
/// observables `X_k .. X_{k+n-2}`; neighbouring nodes share the mean and
/// `n - 2` observables under the same labels. For `n = 1` the mean sits in
/// its own node `mean` with one leaf per observable.
pub fn build_nstep_chain(spec: &NStepSpec) -> Result<BeliefTree> {
    spec.validate()?;
    let s = spec.series_count;
    let mut tree = BeliefTree::new();
    let add = |tree: &mut BeliefTree, name: &str, qs: &[Quantity]| -> Result<()> {
        let labels: Vec<String> = qs.iter().flat_map(|q| q.labels(s)).collect();
        let mean: Vec<f64> = qs.iter().flat_map(|_| spec.mean_expectation.iter().copied()).collect();
        let v = kernel::symmetrize(&spec.block(qs, qs))?;
        tree.add_node(name, labels, BeliefSpec::new(Vector::from_vec(mean), v)?)
    };

    if spec.n == 1 {
        add(&mut tree, "mean", &[Quantity::Mean])?;
        for i in 1..=spec.observables {
            let name = nstep_node(i);
            add(&mut tree, &name, &[Quantity::Obs(i)])?;
            tree.connect(&name, "mean", spec.block(&[Quantity::Obs(i)], &[Quantity::Mean]))?;
        }
        return Ok(tree);
    }

    let window = |k: usize| -> Vec<Quantity> {
        std::iter::once(Quantity::Mean)
            .chain((k..k + spec.n - 1).map(Quantity::Obs))
            .collect()
    };
    for k in 1..=spec.node_count() {
        add(&mut tree, &nstep_node(k), &window(k))?;
        if k > 1 {
            tree.connect(
                &nstep_node(k - 1),
                &nstep_node(k),
                spec.block(&window(k - 1), &window(k)),
            )?;
        }
    }
    Ok(tree)
}
