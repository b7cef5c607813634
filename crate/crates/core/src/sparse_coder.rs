//! Semantic-aware sparse coding of a target's global feature over the
//! codebook, solved by proximal gradient with backtracking.
//!
//! The objective is
//!
//! ```text
//! E(a) = 1/2 ||F - B a||^2 + beta ||a||_1 + 1/2 gamma a' Lambda a
//! ```
//!
//! with every reconstruction and majorisation norm squared.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantics::ConstraintMatrix;

/// Upper bound on Lipschitz doublings within one iteration.
const MAX_BACKTRACKS: usize = 200;
/// Relative rounding slack in the sufficient-decrease test.
const MAJORIZATION_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeInit {
    Zero,
    /// Uniform in [-1, 1] from a fixed seed.
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoderConfig {
    /// L1 weight.
    pub beta: f64,
    /// Weight of the semantic quadratic term.
    pub gamma: f64,
    /// Stop once the iterate moves less than this (L2).
    pub sigma: f64,
    pub max_iters: usize,
    pub initial_lipschitz: f64,
    pub lipschitz_growth: f64,
    /// Relaxation factor applied to each proximal step, in (0, 1].
    pub step_factor: f64,
    pub init: CodeInit,
}

impl Default for CoderConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            gamma: 0.2,
            sigma: 1e-5,
            max_iters: 1000,
            initial_lipschitz: 1.0,
            lipschitz_growth: 2.0,
            step_factor: 1.0,
            init: CodeInit::Zero,
        }
    }
}

impl CoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be nonnegative");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be nonnegative");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.initial_lipschitz > 0.0 && self.initial_lipschitz.is_finite()) {
            return bad("initial Lipschitz estimate must be positive");
        }
        if !(self.lipschitz_growth > 1.0) {
            return bad("Lipschitz growth factor must exceed 1");
        }
        if !(self.step_factor > 0.0 && self.step_factor <= 1.0) {
            return bad("step factor must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCode {
    pub alpha: DVector<f64>,
    /// Objective value at the start point followed by one entry per iteration.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    /// False when `max_iters` was hit before the step fell below `sigma`.
    pub converged: bool,
}

impl SemanticCode {
    pub fn final_energy(&self) -> f64 {
        *self.energy_trace.last().expect("trace holds the initial energy")
    }
}

fn check_dims(alpha_len: usize, feature: &DVector<f64>, codebook: &DMatrix<f64>, constraint: &ConstraintMatrix) -> Result<()> {
    if codebook.nrows() != feature.len() {
        return Err(Error::dims(format!("{} feature rows", codebook.nrows()), feature.len()));
    }
    let n = codebook.ncols();
    if alpha_len != n {
        return Err(Error::dims(format!("{n} coefficients"), alpha_len));
    }
    if constraint.matrix.shape() != (n, n) {
        return Err(Error::dims(
            format!("{n}x{n} constraint"),
            format!("{}x{}", constraint.matrix.nrows(), constraint.matrix.ncols()),
        ));
    }
    Ok(())
}

/// Evaluates the retrieval objective directly from its definition.
pub fn energy_alpha(
    alpha: &DVector<f64>,
    feature: &DVector<f64>,
    codebook: &DMatrix<f64>,
    constraint: &ConstraintMatrix,
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    check_dims(alpha.len(), feature, codebook, constraint)?;
    let residual = feature - codebook * alpha;
    Ok(0.5 * residual.norm_squared() + beta * alpha.lp_norm(1) + 0.5 * gamma * constraint.quadratic_form(alpha))
}

/// Soft thresholding: `sign(v) * max(|v| - t, 0)` per component.
pub fn prox_l1(v: &DVector<f64>, t: f64) -> DVector<f64> {
    v.map(|x| x.signum() * (x.abs() - t).max(0.0))
}

/// Smooth part `g` of the objective in precomputed quadratic form:
/// `g(a) = 1/2 F'F - a' B'F + 1/2 a' Q a` with `Q = B'B + gamma Lambda`.
struct SmoothPart {
    q: DMatrix<f64>,
    btf: DVector<f64>,
    ftf: f64,
}

impl SmoothPart {
    fn new(feature: &DVector<f64>, codebook: &DMatrix<f64>, constraint: &ConstraintMatrix, gamma: f64) -> Self {
        let mut q = codebook.tr_mul(codebook);
        if gamma != 0.0 {
            q += &constraint.matrix * gamma;
        }
        Self {
            q,
            btf: codebook.tr_mul(feature),
            ftf: feature.norm_squared(),
        }
    }

    /// Returns `(g(a), Q a)`.
    fn value(&self, alpha: &DVector<f64>) -> (f64, DVector<f64>) {
        let qa = &self.q * alpha;
        let g = 0.5 * self.ftf - alpha.dot(&self.btf) + 0.5 * alpha.dot(&qa);
        (g, qa)
    }
}

pub fn solve_code(
    feature: &DVector<f64>,
    codebook: &DMatrix<f64>,
    constraint: &ConstraintMatrix,
    cfg: &CoderConfig,
) -> Result<SemanticCode> {
    cfg.validate()?;
    let n = codebook.ncols();
    check_dims(n, feature, codebook, constraint)?;
    let smooth = SmoothPart::new(feature, codebook, constraint, cfg.gamma);

    let mut alpha = match cfg.init {
        CodeInit::Zero => DVector::zeros(n),
        CodeInit::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
        }
    };
    let (mut g, mut qa) = smooth.value(&alpha);
    let objective = |g: f64, a: &DVector<f64>| g + cfg.beta * a.lp_norm(1);
    let mut energy_trace = vec![objective(g, &alpha)];
    if !energy_trace[0].is_finite() {
        return Err(Error::NonFiniteEnergy { iteration: 0 });
    }

    let mut lipschitz = cfg.initial_lipschitz;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let grad = &qa - &smooth.btf;
        let mut backtracks = 0;
        let (z, gz, qz) = loop {
            let z = prox_l1(&(&alpha - &grad / lipschitz), cfg.beta / lipschitz);
            let (gz, qz) = smooth.value(&z);
            let step = &z - &alpha;
            let model = g + grad.dot(&step) + 0.5 * lipschitz * step.norm_squared();
            if !gz.is_finite() || !model.is_finite() {
                return Err(Error::NonFiniteEnergy { iteration: iterations });
            }
            if gz <= model + MAJORIZATION_SLACK * (1.0 + model.abs()) {
                break (z, gz, qz);
            }
            lipschitz *= cfg.lipschitz_growth;
            backtracks += 1;
            if backtracks > MAX_BACKTRACKS {
                return Err(Error::NonFiniteEnergy { iteration: iterations });
            }
        };

        let (next, g_next, q_next) = if cfg.step_factor == 1.0 {
            (z, gz, qz)
        } else {
            let next = &alpha + (&z - &alpha) * cfg.step_factor;
            let (gn, qn) = smooth.value(&next);
            (next, gn, qn)
        };
        let moved = (&next - &alpha).norm();
        alpha = next;
        g = g_next;
        qa = q_next;
        let e = objective(g, &alpha);
        if !e.is_finite() {
            return Err(Error::NonFiniteEnergy { iteration: iterations });
        }
        energy_trace.push(e);
        if moved <= cfg.sigma {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("sparse coder stopped at max_iters={} without reaching sigma", cfg.max_iters);
    }
    Ok(SemanticCode {
        alpha,
        energy_trace,
        iterations,
        converged,
    })
}

/// Retrieved exemplars: indices into the database with their coefficients,
/// strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// Coefficient vector with every non-selected entry set to zero.
    pub masked: DVector<f64>,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Keeps the at most `p` largest coefficients exceeding `threshold`.
pub fn select_references(alpha: &DVector<f64>, p: usize, threshold: f64) -> Result<ReferenceSet> {
    if p == 0 {
        return Err(Error::InvalidArgument("p must be positive".into()));
    }
    let mut order: Vec<usize> = (0..alpha.len())
        .filter(|&k| alpha[k] > threshold.max(0.0))
        .collect();
    if order.is_empty() {
        return Err(Error::NoReferences);
    }
    order.sort_by(|&a, &b| alpha[b].total_cmp(&alpha[a]).then(a.cmp(&b)));
    order.truncate(p);
    let mut masked = DVector::zeros(alpha.len());
    for &k in &order {
        masked[k] = alpha[k];
    }
    Ok(ReferenceSet {
        weights: order.iter().map(|&k| alpha[k]).collect(),
        indices: order,
        masked,
    })
}
