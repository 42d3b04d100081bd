//! Simplex projections, first-order residuals and second-order certificates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::policy_gradient;
use crate::game::GameSpec;
use crate::policy::{PolicyProfile, PolicyShape};

/// Points whose entries are nonnegative and sum to one within this slack
/// are returned unchanged by [`project_simplex`].
const IDENTITY_SLACK: f64 = 1e-14;
/// Cap on vertices enumerated by [`vertex_drift_margin`].
pub const VERTEX_CAP: u128 = 1_000_000;

/// Solution of `min_{x ∈ Δ} ‖y − x‖²` with its KKT multipliers:
/// `y_a = x_a + mu − nu_a`, `nu ≥ 0`, `x_a nu_a = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionCertificate {
    pub x: Vec<f64>,
    pub mu: f64,
    pub nu: Vec<f64>,
}

impl ProjectionCertificate {
    /// Largest violation of the KKT system against the input `y`.
    pub fn violation(&self, y: &[f64]) -> f64 {
        let mut worst: f64 = (self.x.iter().sum::<f64>() - 1.0).abs();
        for ((&ya, &xa), &na) in y.iter().zip(&self.x).zip(&self.nu) {
            worst = worst
                .max((ya - (xa + self.mu - na)).abs())
                .max(-na)
                .max(-xa)
                .max((xa * na).abs());
        }
        worst
    }
}

/// Euclidean projection onto the probability simplex by sorting and
/// thresholding. A single-element support is returned as an exact vertex.
pub fn project_simplex(y: &[f64]) -> Result<ProjectionCertificate> {
    if y.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if y.iter().all(|v| *v >= 0.0) && (y.iter().sum::<f64>() - 1.0).abs() <= IDENTITY_SLACK {
        return Ok(ProjectionCertificate {
            x: y.to_vec(),
            mu: 0.0,
            nu: vec![0.0; y.len()],
        });
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = sorted[0] - 1.0;
    let mut support = 1;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
            support = k + 1;
        }
    }
    let x: Vec<f64> = if support == 1 {
        // first index wins among ties at the maximum
        let top = y
            .iter()
            .enumerate()
            .fold(0, |best, (a, v)| if *v > y[best] { a } else { best });
        theta = y[top] - 1.0;
        (0..y.len()).map(|a| if a == top { 1.0 } else { 0.0 }).collect()
    } else {
        y.iter().map(|v| (v - theta).max(0.0)).collect()
    };
    let nu = y
        .iter()
        .zip(&x)
        .map(|(&ya, &xa)| if xa > 0.0 { 0.0 } else { (theta - ya).max(0.0) })
        .collect();
    Ok(ProjectionCertificate { x, mu: theta, nu })
}

/// Blockwise projection of a flat score vector onto the product of simplices.
pub fn project_policy(y: &[f64], shape: &PolicyShape) -> Result<PolicyProfile> {
    project_policy_certified(y, shape).map(|(pi, _)| pi)
}

/// [`project_policy`] that also returns one certificate per block, in
/// [`PolicyShape::blocks`] order.
pub fn project_policy_certified(
    y: &[f64],
    shape: &PolicyShape,
) -> Result<(PolicyProfile, Vec<ProjectionCertificate>)> {
    if y.len() != shape.dim() {
        return Err(Error::DimensionMismatch {
            expected: shape.dim(),
            got: y.len(),
        });
    }
    let mut probs = Vec::with_capacity(shape.dim());
    let mut certs = Vec::with_capacity(shape.n_blocks());
    for (i, s) in shape.blocks() {
        let cert = project_simplex(&y[shape.block_range(i, s)])?;
        probs.extend_from_slice(&cert.x);
        certs.push(cert);
    }
    Ok((PolicyProfile::from_parts_unchecked(shape, probs), certs))
}

/// First-order stationarity residual
/// `R(π) = max_{π' ∈ Π} ⟨v(π), π' − π⟩ = Σ_{i,s} (max_a v_{(i,s,a)} − ⟨v_{(i,s,·)}, π_i(·|s)⟩)`.
pub fn fos_residual(game: &GameSpec, pi: &PolicyProfile) -> Result<f64> {
    let v = policy_gradient(game, pi)?;
    Ok(fos_residual_from(&v, pi))
}

pub fn fos_residual_from(v: &[f64], pi: &PolicyProfile) -> f64 {
    let shape = pi.shape();
    shape
        .blocks()
        .map(|(i, s)| {
            let block = &v[shape.block_range(i, s)];
            let best = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let inner: f64 = block.iter().zip(pi.row(i, s)).map(|(g, p)| g * p).sum();
            (best - inner).max(0.0)
        })
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct SosOptions {
    /// Random cone directions tested on top of the generators.
    pub n_dirs: usize,
    pub seed: u64,
}

impl Default for SosOptions {
    fn default() -> Self {
        SosOptions { n_dirs: 512, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SosCertificate {
    /// Largest `zᵀ J z` over the tested unit tangent directions.
    pub max_quad: f64,
    /// `−max_quad` when negative, else zero.
    pub mu_hat: f64,
    pub n_tested: usize,
}

/// Generators `e_a − e_b` (b in the support of its block, a ≠ b) of the
/// tangent cone of the policy space at `pi`.
fn cone_generators(pi: &PolicyProfile) -> Vec<(usize, usize)> {
    let shape = pi.shape();
    let mut gens = Vec::new();
    for (i, s) in shape.blocks() {
        let range = shape.block_range(i, s);
        for b in range.clone().filter(|&b| pi.as_slice()[b] > 0.0) {
            for a in range.clone().filter(|&a| a != b) {
                gens.push((a, b));
            }
        }
    }
    gens
}

/// One-sided test of the second-order condition `zᵀ J z < 0` over unit
/// tangent directions at `pi_star`: every normalised generator `e_a − e_b`
/// plus `n_dirs` random nonnegative combinations of generators. A positive
/// `max_quad` refutes the condition; a negative one supports it.
pub fn sos_certificate(
    j: &DMatrix<f64>,
    pi_star: &PolicyProfile,
    opts: SosOptions,
) -> Result<SosCertificate> {
    let dim = pi_star.shape().dim();
    if j.nrows() != dim || j.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: if j.nrows() != dim { j.nrows() } else { j.ncols() },
        });
    }
    let gens = cone_generators(pi_star);
    let quad = |z: &DVector<f64>| -> f64 {
        let norm = z.norm();
        if norm == 0.0 {
            return f64::NEG_INFINITY;
        }
        let u = z / norm;
        u.dot(&(j * &u))
    };
    let mut max_quad = f64::NEG_INFINITY;
    let mut n_tested = 0;
    for &(a, b) in &gens {
        let mut z = DVector::zeros(dim);
        z[a] = 1.0;
        z[b] = -1.0;
        max_quad = max_quad.max(quad(&z));
        n_tested += 1;
    }
    if !gens.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for _ in 0..opts.n_dirs {
            let mut z = DVector::zeros(dim);
            for &(a, b) in &gens {
                let w: f64 = rng.random();
                z[a] += w;
                z[b] -= w;
            }
            let q = quad(&z);
            if q.is_finite() {
                max_quad = max_quad.max(q);
                n_tested += 1;
            }
        }
    }
    if n_tested == 0 {
        max_quad = 0.0;
    }
    Ok(SosCertificate {
        max_quad,
        mu_hat: (-max_quad).max(0.0),
        n_tested,
    })
}

/// `min_{π vertex, π ≠ π*} −⟨v(π*), π − π*⟩ / ‖π − π*‖`, positive exactly
/// when the variational inequality holds strictly at every other vertex.
pub fn vertex_drift_margin(game: &GameSpec, pi_star: &PolicyProfile) -> Result<f64> {
    let shape = game.shape();
    let count = shape.deterministic_count().unwrap_or(u128::MAX);
    if count > VERTEX_CAP {
        return Err(Error::TooLarge {
            count,
            cap: VERTEX_CAP,
        });
    }
    let v = policy_gradient(game, pi_star)?;
    let star = pi_star.as_slice();
    let mut margin = f64::INFINITY;
    for k in 0..count {
        let vertex = PolicyProfile::deterministic(shape, &shape.deterministic_choices(k))?;
        let dist = vertex.dist_sq(pi_star).sqrt();
        if dist == 0.0 {
            continue;
        }
        let inner: f64 = v
            .iter()
            .zip(vertex.as_slice().iter().zip(star))
            .map(|(g, (p, q))| g * (p - q))
            .sum();
        margin = margin.min(-inner / dist);
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_on_simplex() {
        let y = [0.2, 0.3, 0.5];
        let c = project_simplex(&y).unwrap();
        assert_eq!(c.x, y);
        assert!(c.nu.iter().all(|n| *n == 0.0));
    }

    #[test]
    fn symmetric_input() {
        let c = project_simplex(&[0.8, 0.8]).unwrap();
        assert!((c.x[0] - 0.5).abs() < 1e-15 && (c.x[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clipped_example_multipliers() {
        let y = [1.2, -0.3];
        let c = project_simplex(&y).unwrap();
        assert_eq!(c.x, vec![1.0, 0.0]);
        assert!((c.mu - 0.2).abs() < 1e-12);
        assert!(c.nu[0].abs() < 1e-12 && (c.nu[1] - 0.5).abs() < 1e-12);
        assert!(c.violation(&y) < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(project_simplex(&[f64::NAN, 1.0]).unwrap_err().code(), "NON_FINITE_INPUT");
    }

    #[test]
    fn zeros_project_to_uniform() {
        let shape = PolicyShape::new(2, vec![2, 3]);
        let pi = project_policy(&vec![0.0; shape.dim()], &shape).unwrap();
        assert!(pi.dist_sq(&PolicyProfile::uniform(&shape)) < 1e-30);
    }

    #[test]
    fn definite_forms() {
        let pi = PolicyProfile::uniform(&PolicyShape::new(1, vec![3]));
        let neg = -DMatrix::<f64>::identity(3, 3);
        let c = sos_certificate(&neg, &pi, SosOptions::default()).unwrap();
        assert!((c.max_quad + 1.0).abs() < 1e-12 && (c.mu_hat - 1.0).abs() < 1e-12);
        let zero = DMatrix::<f64>::zeros(3, 3);
        let c = sos_certificate(&zero, &pi, SosOptions::default()).unwrap();
        assert_eq!(c.max_quad, 0.0);
        assert_eq!(c.mu_hat, 0.0);
        let wrong = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(
            sos_certificate(&wrong, &pi, SosOptions::default()).unwrap_err().code(),
            "DIMENSION_MISMATCH"
        );
    }
}
