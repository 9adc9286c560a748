//! The networked plant: coupled linear dynamics with block-diagonal
//! actuation, quadratic stage cost, and a randomized benchmark generator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::lqr::{self, ClosureProbabilities, RiccatiOptions};
use crate::textfmt::MatrixFile;

/// Per-subsystem acknowledgment flags: `true` when subsystem `i` received
/// its control packet this step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SuccessMask(pub Vec<bool>);

impl SuccessMask {
    pub fn all(n: usize, value: bool) -> Self {
        Self(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b_blocks: Vec<DMatrix<f64>>,
    w: DMatrix<f64>,
    r: DMatrix<f64>,
    noise_cov: Vec<DMatrix<f64>>,
    state_offsets: Vec<usize>,
    input_offsets: Vec<usize>,
    b: DMatrix<f64>,
    noise_sqrt: Vec<DMatrix<f64>>,
}

impl PlantModel {
    pub fn new(
        a: DMatrix<f64>,
        b_blocks: Vec<DMatrix<f64>>,
        w: DMatrix<f64>,
        r: DMatrix<f64>,
        noise_cov: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if b_blocks.is_empty() {
            return Err(Error::Config("plant needs at least one subsystem".into()));
        }
        check_len("noise covariance count", b_blocks.len(), noise_cov.len())?;
        let state_dims: Vec<usize> = b_blocks.iter().map(|b| b.nrows()).collect();
        let input_dims: Vec<usize> = b_blocks.iter().map(|b| b.ncols()).collect();
        let state_offsets = linalg::offsets(&state_dims);
        let input_offsets = linalg::offsets(&input_dims);
        let n = *state_offsets.last().unwrap();
        let m = *input_offsets.last().unwrap();
        check_len("A rows", n, a.nrows())?;
        check_len("A cols", n, a.ncols())?;
        check_len("W rows", n, w.nrows())?;
        check_len("W cols", n, w.ncols())?;
        check_len("R rows", m, r.nrows())?;
        check_len("R cols", m, r.ncols())?;
        for (cov, &ni) in noise_cov.iter().zip(&state_dims) {
            check_len("noise covariance rows", ni, cov.nrows())?;
            check_len("noise covariance cols", ni, cov.ncols())?;
        }

        let psd_tol = |m: &DMatrix<f64>| -1e-10 * linalg::max_abs(m).max(1.0);
        if !linalg::is_symmetric(&w, 1e-10) || linalg::min_symmetric_eigenvalue(&w) < psd_tol(&w) {
            return Err(Error::Config("W must be symmetric positive semi-definite".into()));
        }
        if !linalg::is_symmetric(&r, 1e-10) || linalg::min_symmetric_eigenvalue(&r) <= 0.0 {
            return Err(Error::Config("R must be symmetric positive definite".into()));
        }
        for cov in &noise_cov {
            if !linalg::is_symmetric(cov, 1e-10)
                || linalg::min_symmetric_eigenvalue(cov) < psd_tol(cov)
            {
                return Err(Error::Config(
                    "noise covariances must be symmetric positive semi-definite".into(),
                ));
            }
        }

        let b = linalg::block_diagonal(&b_blocks);
        let noise_sqrt = noise_cov.iter().map(linalg::psd_sqrt).collect();
        Ok(Self {
            a,
            b_blocks,
            w,
            r,
            noise_cov,
            state_offsets,
            input_offsets,
            b,
            noise_sqrt,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// The assembled block-diagonal input matrix.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn b_blocks(&self) -> &[DMatrix<f64>] {
        &self.b_blocks
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn noise_cov(&self) -> &[DMatrix<f64>] {
        &self.noise_cov
    }

    pub fn subsystems(&self) -> usize {
        self.b_blocks.len()
    }

    pub fn state_dim(&self) -> usize {
        *self.state_offsets.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        *self.input_offsets.last().unwrap()
    }

    pub fn state_range(&self, i: usize) -> std::ops::Range<usize> {
        self.state_offsets[i]..self.state_offsets[i + 1]
    }

    pub fn input_range(&self, i: usize) -> std::ops::Range<usize> {
        self.input_offsets[i]..self.input_offsets[i + 1]
    }

    pub fn state_dims(&self) -> Vec<usize> {
        self.b_blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.b_blocks.iter().map(|b| b.ncols()).collect()
    }

    /// Diagonal block `A_ii` of subsystem `i`.
    pub fn a_block(&self, i: usize) -> DMatrix<f64> {
        let r = self.state_range(i);
        self.a.view((r.start, r.start), (r.len(), r.len())).into_owned()
    }

    /// Full noise covariance (block diagonal).
    pub fn noise_cov_full(&self) -> DMatrix<f64> {
        linalg::block_diagonal(&self.noise_cov)
    }

    /// `x' = A x + B u + w`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("state", self.state_dim(), x.len())?;
        check_len("input", self.input_dim(), u.len())?;
        check_len("noise", self.state_dim(), w.len())?;
        Ok(&self.a * x + &self.b * u + w)
    }

    /// `g(x, u) = x'Wx + u'Ru`.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        check_len("state", self.state_dim(), x.len())?;
        check_len("input", self.input_dim(), u.len())?;
        Ok(x.dot(&(&self.w * x)) + u.dot(&(&self.r * u)))
    }

    /// Zero-input rule: subsystem slices whose packet was lost are zeroed.
    pub fn apply_dropouts(&self, candidate: &DVector<f64>, mask: &SuccessMask) -> Result<DVector<f64>> {
        check_len("input", self.input_dim(), candidate.len())?;
        check_len("success mask", self.subsystems(), mask.len())?;
        let mut u = candidate.clone();
        for i in 0..self.subsystems() {
            if !mask.get(i) {
                u.rows_mut(self.input_offsets[i], self.input_range(i).len()).fill(0.0);
            }
        }
        Ok(u)
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut w = DVector::zeros(self.state_dim());
        for (i, sq) in self.noise_sqrt.iter().enumerate() {
            let z = DVector::from_fn(sq.ncols(), |_, _| StandardNormal.sample(rng));
            w.rows_mut(self.state_offsets[i], sq.nrows()).copy_from(&(sq * z));
        }
        w
    }

    pub fn is_controllable(&self) -> bool {
        check_controllability(&self.a, &self.b)
    }

    pub fn is_observable(&self) -> bool {
        check_observability(&self.a, &self.w)
    }

    /// Returns a copy with `W` and `R` multiplied by `factor`.
    pub fn with_cost_scale(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b_blocks.clone(),
            &self.w * factor,
            &self.r * factor,
            self.noise_cov.clone(),
        )
    }

    pub fn to_matrix_file(&self) -> MatrixFile {
        let mut f = MatrixFile::new();
        let dims: Vec<f64> = self.state_dims().iter().map(|&d| d as f64).collect();
        let idims: Vec<f64> = self.input_dims().iter().map(|&d| d as f64).collect();
        f.push_row("state_dims", &dims);
        f.push_row("input_dims", &idims);
        f.push("A", self.a.clone());
        for (i, b) in self.b_blocks.iter().enumerate() {
            f.push(format!("B_{}", i + 1), b.clone());
        }
        f.push("W", self.w.clone());
        f.push("R", self.r.clone());
        for (i, c) in self.noise_cov.iter().enumerate() {
            f.push(format!("noise_cov_{}", i + 1), c.clone());
        }
        f
    }

    pub fn from_matrix_file(f: &MatrixFile) -> Result<Self> {
        let n_sub = f.require_row("state_dims")?.len();
        let mut b_blocks = Vec::with_capacity(n_sub);
        let mut noise = Vec::with_capacity(n_sub);
        for i in 1..=n_sub {
            b_blocks.push(f.require(&format!("B_{i}"))?.clone());
            noise.push(f.require(&format!("noise_cov_{i}"))?.clone());
        }
        Self::new(
            f.require("A")?.clone(),
            b_blocks,
            f.require("W")?.clone(),
            f.require("R")?.clone(),
            noise,
        )
    }
}

/// Kalman rank test on `[B, AB, ..., A^{n-1}B]`.
pub fn check_controllability(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if n == 0 {
        return true;
    }
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    linalg::numerical_rank(&ctrb) == n
}

/// Observability of `[A, W^{1/2}]`, by duality with controllability.
pub fn check_observability(a: &DMatrix<f64>, w: &DMatrix<f64>) -> bool {
    let c = linalg::psd_sqrt(w);
    check_controllability(&a.transpose(), &c.transpose())
}

/// Parameters of the randomized benchmark generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    /// Set from the experiment's system size, not read from the config file.
    #[serde(skip)]
    pub subsystems: usize,
    /// Probability of a directed coupling edge between two subsystems.
    pub edge_probability: f64,
    /// Coupling entries are uniform in `(-coupling_strength, coupling_strength)`.
    pub coupling_strength: f64,
    pub stable_radius: (f64, f64),
    pub unstable_radius: (f64, f64),
    /// How many of an unstable block's two eigenvalues lie in
    /// `unstable_radius` (1 or 2); with 1 the other is stable.
    pub unstable_eigenvalues: usize,
    pub input_gain: (f64, f64),
    pub noise_std: f64,
    /// Target perfect-communication LQR stage cost per subsystem; `None`
    /// leaves `W = I`, `R = I`.
    pub cost_per_subsystem: Option<f64>,
    pub max_attempts: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            subsystems: 4,
            edge_probability: 0.25,
            coupling_strength: 0.05,
            stable_radius: (0.4, 0.95),
            unstable_radius: (1.0, 1.5),
            unstable_eigenvalues: 1,
            input_gain: (0.5, 1.5),
            noise_std: 0.1,
            cost_per_subsystem: Some(1.0),
            max_attempts: 100,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.subsystems == 0 {
            return bad("generation.subsystems must be positive");
        }
        if !(0.0..=1.0).contains(&self.edge_probability) {
            return bad("generation.edge_probability must be in [0, 1]");
        }
        if self.coupling_strength < 0.0 || self.noise_std < 0.0 {
            return bad("generation.coupling_strength and noise_std must be nonnegative");
        }
        let (lo, hi) = self.stable_radius;
        if !(0.0 <= lo && lo < hi && hi < 1.0) {
            return bad("generation.stable_radius must satisfy 0 <= lo < hi < 1");
        }
        let (lo, hi) = self.unstable_radius;
        if !(1.0 <= lo && lo < hi) {
            return bad("generation.unstable_radius must satisfy 1 <= lo < hi");
        }
        if !(1..=2).contains(&self.unstable_eigenvalues) {
            return bad("generation.unstable_eigenvalues must be 1 or 2");
        }
        let (lo, hi) = self.input_gain;
        if !(0.0 < lo && lo < hi) {
            return bad("generation.input_gain must satisfy 0 < lo < hi");
        }
        if matches!(self.cost_per_subsystem, Some(c) if c <= 0.0) {
            return bad("generation.cost_per_subsystem must be positive");
        }
        if self.max_attempts == 0 {
            return bad("generation.max_attempts must be positive");
        }
        Ok(())
    }

    /// Number of open-loop stable subsystems: `ceil(N / 2)`.
    pub fn stable_count(&self) -> usize {
        self.subsystems.div_ceil(2)
    }
}

fn rotation(theta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
}

fn stable_block<R: Rng + ?Sized>(cfg: &GenerationConfig, rng: &mut R) -> DMatrix<f64> {
    let (lo, hi) = cfg.stable_radius;
    let radius = rng.random_range(lo..hi);
    rotation(rng.random_range(0.0..std::f64::consts::PI)) * radius
}

fn unstable_eigenvalue<R: Rng + ?Sized>(cfg: &GenerationConfig, rng: &mut R) -> f64 {
    let (lo, hi) = cfg.unstable_radius;
    let mut v = rng.random_range(lo..hi);
    while v <= lo {
        v = rng.random_range(lo..hi);
    }
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Real eigenvalues, one or both with modulus in the unstable range (the
/// other stable), mixed by a random orthogonal similarity.
fn unstable_block<R: Rng + ?Sized>(cfg: &GenerationConfig, rng: &mut R) -> DMatrix<f64> {
    let big = unstable_eigenvalue(cfg, rng);
    let second = if cfg.unstable_eigenvalues == 2 {
        unstable_eigenvalue(cfg, rng)
    } else {
        rng.random_range(-cfg.stable_radius.1..cfg.stable_radius.1)
    };
    let d = DMatrix::from_row_slice(2, 2, &[big, 0.0, 0.0, second]);
    let q = rotation(rng.random_range(0.0..std::f64::consts::PI));
    &q * d * q.transpose()
}

/// Draws a random networked plant of second-order subsystems: `ceil(N/2)`
/// open-loop stable blocks, the rest with one eigenvalue outside the unit
/// circle, weak random coupling, one input per subsystem. Candidates that
/// fail the controllability/observability test are redrawn.
pub fn generate_random_ncs<R: Rng + ?Sized>(cfg: &GenerationConfig, rng: &mut R) -> Result<PlantModel> {
    cfg.validate()?;
    let n_sub = cfg.subsystems;
    let mut last_reason = String::new();

    for _ in 0..cfg.max_attempts {
        let mut stable = vec![false; n_sub];
        stable[..cfg.stable_count()].iter_mut().for_each(|s| *s = true);
        // Fisher-Yates so stable/unstable positions are mixed
        for i in (1..n_sub).rev() {
            let j = rng.random_range(0..=i);
            stable.swap(i, j);
        }

        let n = 2 * n_sub;
        let mut a = DMatrix::zeros(n, n);
        for (i, &is_stable) in stable.iter().enumerate() {
            let block = if is_stable {
                stable_block(cfg, rng)
            } else {
                unstable_block(cfg, rng)
            };
            a.view_mut((2 * i, 2 * i), (2, 2)).copy_from(&block);
        }
        for i in 0..n_sub {
            for j in 0..n_sub {
                if i == j || !rng.random_bool(cfg.edge_probability) {
                    continue;
                }
                for r in 0..2 {
                    for c in 0..2 {
                        a[(2 * i + r, 2 * j + c)] = if cfg.coupling_strength > 0.0 {
                            rng.random_range(-cfg.coupling_strength..cfg.coupling_strength)
                        } else {
                            0.0
                        };
                    }
                }
            }
        }

        let (glo, ghi) = cfg.input_gain;
        let b_blocks: Vec<DMatrix<f64>> = (0..n_sub)
            .map(|_| DMatrix::from_fn(2, 1, |_, _| rng.random_range(glo..ghi)))
            .collect();
        let noise = (0..n_sub)
            .map(|_| DMatrix::identity(2, 2) * cfg.noise_std.powi(2))
            .collect();
        let plant = PlantModel::new(a, b_blocks, DMatrix::identity(n, n), DMatrix::identity(n_sub, n_sub), noise)?;

        if !plant.is_controllable() {
            last_reason = "candidate not controllable".into();
            continue;
        }
        if !plant.is_observable() {
            last_reason = "candidate not observable".into();
            continue;
        }
        let Some(target) = cfg.cost_per_subsystem else {
            return Ok(plant);
        };
        match perfect_comm_cost(&plant) {
            Ok(cost) if cost > 0.0 => return plant.with_cost_scale(target * n_sub as f64 / cost),
            Ok(_) => last_reason = "zero steady-state cost; cannot normalize".into(),
            Err(e) => last_reason = format!("perfect-communication Riccati solve failed: {e}"),
        }
    }
    Err(Error::Generation {
        attempts: cfg.max_attempts,
        reason: last_reason,
    })
}

/// Steady-state average stage cost of the perfect-communication LQR,
/// `tr(K Sigma_w)`.
pub fn perfect_comm_cost(plant: &PlantModel) -> Result<f64> {
    let q = ClosureProbabilities::uniform(plant.subsystems(), 1.0);
    let sol = lqr::solve_steady_state(plant, &q, &RiccatiOptions::default())
        .map_err(Error::NoSteadyState)?;
    Ok((&sol.k * plant.noise_cov_full()).trace())
}
