//! Independent numerical oracles used by the test suites.
//!
//! Everything here is deliberately implemented by a route different from the
//! code it checks: central finite differences for analytic gradients, a
//! simplex grid search for the information-projection closed form, the
//! precision-form conjugate Gaussian update for the sequential variational
//! recursion, and normal equations for trained linear models.

use crate::tensor::Tensor;
use crate::util;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("function evaluated to a non-finite value at a probe point")]
    NonFinite,
    #[error("distribution does not normalize: sum = {sum}")]
    NotNormalized { sum: f64 },
    #[error("negative probability at index {index}")]
    NegativeProbability { index: usize },
    #[error("family support and distribution support are disjoint")]
    DisjointSupport,
    #[error("singular precision: {0}")]
    SingularPrecision(String),
}

/// Central finite-difference gradient of a scalar function.
pub fn finite_diff_grad(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>, OracleError> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(OracleError::NonFinite);
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Discrete distributions and information projection

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, OracleError> {
        for (i, &p) in probs.iter().enumerate() {
            if p < 0.0 {
                return Err(OracleError::NegativeProbability { index: i });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(OracleError::NotNormalized { sum });
        }
        Ok(DiscreteDistribution { probs })
    }

    pub fn uniform_on(outcomes: usize, support: &[usize]) -> Self {
        let mut probs = vec![0.0; outcomes];
        for &i in support {
            probs[i] = 1.0 / support.len() as f64;
        }
        DiscreteDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// KL(p || q) for discrete distributions; infinite when p puts mass where q
/// has none.
pub fn kl_discrete(p: &DiscreteDistribution, q: &DiscreteDistribution) -> f64 {
    p.probs
        .iter()
        .zip(&q.probs)
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                0.0
            } else if qi == 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}

/// Information projection of `q` onto the family of all distributions with
/// support inside `family_support`: argmin_p KL(p || q).
///
/// The minimizer is `q` restricted to the overlap and renormalized; its
/// support therefore lies in the intersection of the family support and
/// supp(q).
pub fn info_projection(
    q: &DiscreteDistribution,
    family_support: &[usize],
) -> Result<DiscreteDistribution, OracleError> {
    let mut probs = vec![0.0; q.probs.len()];
    let mut mass = 0.0;
    for &i in family_support {
        probs[i] = q.probs[i];
        mass += q.probs[i];
    }
    if mass == 0.0 {
        return Err(OracleError::DisjointSupport);
    }
    for p in probs.iter_mut() {
        *p /= mass;
    }
    Ok(DiscreteDistribution { probs })
}

/// Brute-force projection: search the probability simplex restricted to
/// `family_support` on a grid with the given resolution (1/resolution must be
/// an integer number of grid steps). Returns the best grid point and its KL.
pub fn brute_force_projection(
    q: &DiscreteDistribution,
    family_support: &[usize],
    resolution: f64,
) -> Result<(DiscreteDistribution, f64), OracleError> {
    let steps = (1.0 / resolution).round() as usize;
    let k = family_support.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut counts = vec![0usize; k];
    enumerate_compositions(steps, k, 0, &mut counts, &mut |counts| {
        let mut probs = vec![0.0; q.probs.len()];
        for (slot, &i) in family_support.iter().enumerate() {
            probs[i] = counts[slot] as f64 * resolution;
        }
        let p = DiscreteDistribution { probs };
        let kl = kl_discrete(&p, q);
        if best.as_ref().map_or(true, |(_, b)| kl < *b) {
            best = Some((p.probs.clone(), kl));
        }
    });
    let (probs, kl) = best.ok_or(OracleError::DisjointSupport)?;
    if !kl.is_finite() {
        return Err(OracleError::DisjointSupport);
    }
    Ok((DiscreteDistribution { probs }, kl))
}

fn enumerate_compositions(
    remaining: usize,
    slots: usize,
    slot: usize,
    counts: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if slot == slots - 1 {
        counts[slot] = remaining;
        visit(counts);
        return;
    }
    for c in 0..=remaining {
        counts[slot] = c;
        enumerate_compositions(remaining - c, slots, slot + 1, counts, visit);
    }
}

/// A random projection test case: a distribution over `outcomes` points with
/// a random support, and a random family support that overlaps it.
pub fn random_projection_case(
    rng: &mut ChaCha8Rng,
    outcomes: usize,
) -> (DiscreteDistribution, Vec<usize>) {
    loop {
        let mut probs: Vec<f64> = (0..outcomes)
            .map(|_| if rng.gen_bool(0.75) { rng.gen_range(0.05..1.0) } else { 0.0 })
            .collect();
        let sum: f64 = probs.iter().sum();
        if sum == 0.0 {
            continue;
        }
        for p in probs.iter_mut() {
            *p /= sum;
        }
        let q = DiscreteDistribution { probs };
        let family: Vec<usize> = (0..outcomes).filter(|_| rng.gen_bool(0.6)).collect();
        if family.is_empty() {
            continue;
        }
        if family.iter().any(|&i| q.probs[i] > 0.0) {
            return (q, family);
        }
    }
}

// ---------------------------------------------------------------------------
// Conjugate diagonal-Gaussian posterior

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn standard(dim: usize) -> Self {
        DiagGaussian { mean: vec![0.0; dim], var: vec![1.0; dim] }
    }
}

/// A direct noisy observation of one coordinate: y = theta[coord] + noise.
#[derive(Debug, Clone, Copy)]
pub struct CoordObservation {
    pub coord: usize,
    pub value: f64,
    pub noise_var: f64,
}

/// Closed-form Gaussian posterior under coordinate observations with known
/// noise: precisions add, means combine precision-weighted.
pub fn conjugate_posterior(
    prior: &DiagGaussian,
    observations: &[CoordObservation],
) -> Result<DiagGaussian, OracleError> {
    let mut precision: Vec<f64> = prior
        .var
        .iter()
        .map(|&v| if v > 0.0 { 1.0 / v } else { f64::INFINITY })
        .collect();
    if precision.iter().any(|p| !p.is_finite()) {
        return Err(OracleError::SingularPrecision("prior variance must be positive".into()));
    }
    let mut weighted: Vec<f64> = prior
        .mean
        .iter()
        .zip(&precision)
        .map(|(&m, &p)| m * p)
        .collect();
    for obs in observations {
        if obs.noise_var <= 0.0 {
            return Err(OracleError::SingularPrecision(format!(
                "observation noise variance must be positive, got {}",
                obs.noise_var
            )));
        }
        precision[obs.coord] += 1.0 / obs.noise_var;
        weighted[obs.coord] += obs.value / obs.noise_var;
    }
    let var: Vec<f64> = precision.iter().map(|&p| 1.0 / p).collect();
    let mean: Vec<f64> = weighted.iter().zip(&var).map(|(&w, &v)| w * v).collect();
    Ok(DiagGaussian { mean, var })
}

// ---------------------------------------------------------------------------
// Least squares

#[derive(Debug, Clone)]
pub struct OlsSolution {
    /// Coefficients, [d x m] for X [n x d], Y [n x m].
    pub coef: Tensor,
    /// True when the normal equations were regularized to solve.
    pub ridge_fallback: bool,
}

/// Ordinary least squares by normal equations, with a 1e-8 ridge fallback
/// when X^T X is numerically singular.
pub fn ols_solve(x: &Tensor, y: &Tensor) -> OlsSolution {
    let xtx = x.t_matmul(x).expect("X^T X");
    let xty = x.t_matmul(y).expect("X^T Y");
    match solve_spd(&xtx, &xty) {
        Some(coef) => OlsSolution { coef, ridge_fallback: false },
        None => {
            let d = xtx.rows();
            let mut reg = xtx.clone();
            for i in 0..d {
                reg.data_mut()[i * d + i] += 1e-8;
            }
            let coef = solve_spd(&reg, &xty).expect("ridge-regularized system is solvable");
            OlsSolution { coef, ridge_fallback: true }
        }
    }
}

/// Gaussian elimination with partial pivoting for A X = B; None when a pivot
/// collapses.
fn solve_spd(a: &Tensor, b: &Tensor) -> Option<Tensor> {
    let n = a.rows();
    let m = b.cols();
    let mut aug: Vec<f64> = Vec::with_capacity(n * (n + m));
    for i in 0..n {
        aug.extend_from_slice(&a.data()[i * n..(i + 1) * n]);
        aug.extend_from_slice(&b.data()[i * m..(i + 1) * m]);
    }
    let w = n + m;
    let scale = a.linf_norm().max(1.0);
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, aug[r * w + col].abs()))
            .fold((col, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if pivot_val <= 1e-12 * scale {
            return None;
        }
        if pivot_row != col {
            for j in 0..w {
                aug.swap(col * w + j, pivot_row * w + j);
            }
        }
        let pivot = aug[col * w + col];
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = aug[r * w + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..w {
                aug[r * w + j] -= factor * aug[col * w + j];
            }
        }
    }
    let mut coef = vec![0.0; n * m];
    for i in 0..n {
        let pivot = aug[i * w + i];
        for j in 0..m {
            coef[i * m + j] = aug[i * w + n + j] / pivot;
        }
    }
    Tensor::new(vec![n, m], coef).ok()
}

// ---------------------------------------------------------------------------
// Self-check suite (exposed to the CLI `validate` subcommand)

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn run_validation_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(Check { name: name.to_string(), passed, detail });
    };

    // Finite differences on known derivatives.
    let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-4).unwrap();
    push("finite_diff_square", (g[0] - 6.0).abs() < 1e-6, format!("d/dx x^2 at 3 = {:.8}", g[0]));
    let g = finite_diff_grad(|x| x[0].sin(), &[0.0], 1e-4).unwrap();
    push("finite_diff_sin", (g[0] - 1.0).abs() < 1e-8, format!("d/dx sin at 0 = {:.10}", g[0]));
    let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0], 1e-4).unwrap();
    push("finite_diff_constant", g.iter().all(|&v| v == 0.0), format!("{g:?}"));

    // Information projection: closed form vs brute force on random cases.
    let mut rng = util::rng(0x1f2e_3d4c);
    let mut worst = 0.0_f64;
    let mut ok = true;
    for _ in 0..50 {
        let outcomes = rng.gen_range(3..=5usize);
        let resolution = if outcomes <= 4 { 0.01 } else { 0.05 };
        let (q, family) = random_projection_case(&mut rng, outcomes);
        let closed = info_projection(&q, &family).unwrap();
        let (grid, grid_kl) = brute_force_projection(&q, &family, resolution).unwrap();
        let closed_kl = kl_discrete(&closed, &q);
        // The closed form can only be better; the grid gets within resolution.
        if closed_kl > grid_kl + 1e-12 {
            ok = false;
        }
        let gap = grid_kl - closed_kl;
        worst = worst.max(gap);
        if gap > 0.05 {
            ok = false;
        }
        let sup_p = closed.support();
        let q_sup = q.support();
        if !sup_p.iter().all(|i| family.contains(i) && q_sup.contains(i)) {
            ok = false;
        }
        let _ = grid;
    }
    push("info_projection_grid_agreement", ok, format!("worst KL gap {worst:.4}"));

    // Conjugate chain: batch equals sequential.
    let mut rng = util::rng(0xbead_cafe);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let dim = 3;
        let prior = DiagGaussian::standard(dim);
        let all: Vec<CoordObservation> = (0..10)
            .map(|_| CoordObservation {
                coord: rng.gen_range(0..dim),
                value: rng.gen_range(-2.0..2.0),
                noise_var: rng.gen_range(0.2..3.0),
            })
            .collect();
        let batch = conjugate_posterior(&prior, &all).unwrap();
        let mut seq = prior.clone();
        for chunk in all.chunks(2) {
            seq = conjugate_posterior(&seq, chunk).unwrap();
        }
        for i in 0..dim {
            worst = worst.max((batch.mean[i] - seq.mean[i]).abs());
            worst = worst.max((batch.var[i] - seq.var[i]).abs());
        }
    }
    push("conjugate_batch_vs_sequential", worst < 1e-12, format!("max deviation {worst:.2e}"));

    // OLS hand fixture.
    let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
    let y = Tensor::new(vec![2, 1], vec![1.0, 4.0]).unwrap();
    let sol = ols_solve(&x, &y);
    let ok = (sol.coef.data()[0] - 1.0).abs() < 1e-10 && (sol.coef.data()[1] - 2.0).abs() < 1e-10;
    push("ols_hand_fixture", ok && !sol.ridge_fallback, format!("coef = {:?}", sol.coef.data()));

    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(|x| x[0].sin(), &[0.0], 1e-4).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 1.0, &[0.5], 1e-4).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn projection_uniform_example() {
        // q uniform on {1,2,3}, family supported on {2,3,4}.
        let q = DiscreteDistribution::uniform_on(5, &[1, 2, 3]);
        let p = info_projection(&q, &[2, 3, 4]).unwrap();
        assert_eq!(p.support(), vec![2, 3]);
        assert!((p.probs()[2] - 0.5).abs() < 1e-12);
        assert!((p.probs()[3] - 0.5).abs() < 1e-12);
        let (grid, _) = brute_force_projection(&q, &[2, 3, 4], 0.01).unwrap();
        for i in 0..5 {
            assert!((grid.probs()[i] - p.probs()[i]).abs() <= 0.011, "index {i}");
        }
    }

    #[test]
    fn projection_feasible_q_is_identity() {
        let q = DiscreteDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let p = info_projection(&q, &[0, 1, 2]).unwrap();
        assert_eq!(p.probs(), q.probs());
        assert_eq!(kl_discrete(&p, &q), 0.0);
    }

    #[test]
    fn projection_disjoint_support_errors() {
        let q = DiscreteDistribution::uniform_on(4, &[0, 1]);
        assert!(matches!(info_projection(&q, &[2, 3]), Err(OracleError::DisjointSupport)));
    }

    #[test]
    fn sequential_projection_shrinks_support() {
        // Uniform over {0,1,2,3}, projected through {0,1,2}, {1,2}, {2,3}.
        let q = DiscreteDistribution::uniform_on(4, &[0, 1, 2, 3]);
        let p1 = info_projection(&q, &[0, 1, 2]).unwrap();
        let p2 = info_projection(&p1, &[1, 2]).unwrap();
        let p3 = info_projection(&p2, &[2, 3]).unwrap();
        assert_eq!(p3.support(), vec![2]);
        assert!((p3.probs()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conjugate_single_observation() {
        let prior = DiagGaussian::standard(1);
        let post = conjugate_posterior(
            &prior,
            &[CoordObservation { coord: 0, value: 1.0, noise_var: 1.0 }],
        )
        .unwrap();
        assert!((post.mean[0] - 0.5).abs() < 1e-14);
        assert!((post.var[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn conjugate_no_observations_is_prior() {
        let prior = DiagGaussian { mean: vec![0.3, -1.0], var: vec![2.0, 0.5] };
        let post = conjugate_posterior(&prior, &[]).unwrap();
        assert_eq!(post, prior);
    }

    #[test]
    fn ols_orthonormal_recovery() {
        let x = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let c = Tensor::new(vec![3, 1], vec![2.0, -1.0, 0.5]).unwrap();
        let y = x.matmul(&c).unwrap();
        let sol = ols_solve(&x, &y);
        for (a, b) in sol.coef.data().iter().zip(c.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ols_singular_uses_ridge() {
        // Duplicate column makes X^T X singular.
        let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]);
        let y = Tensor::new(vec![3, 1], vec![2.0, 4.0, 6.0]).unwrap();
        let sol = ols_solve(&x, &y);
        assert!(sol.ridge_fallback);
        let pred = x.matmul(&sol.coef).unwrap();
        for (p, t) in pred.data().iter().zip(y.data()) {
            assert!((p - t).abs() < 1e-4);
        }
    }

    #[test]
    fn validation_suite_passes() {
        let checks = run_validation_suite();
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
