//! Closed-form facts about the joint loss and numeric cross-checks: the
//! Hessian at a stationary point, its spectrum and conditioning, LL/SM
//! coupled losses, and the negative-correlation-learning gradient.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::DistributionFamily;
use crate::jointtrain::loss::{joint_loss_grad_logits, BatchPredictions, JointLossConfig};

/// Step for second differences.
pub const HESSIAN_STEP: f64 = 1e-4;
/// Step for first differences.
pub const GRADIENT_STEP: f64 = 1e-5;

/// Scalar-output ensemble at a stationary point. λ may exceed 1 here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryHessianSpec {
    members: usize,
    lambda: f64,
    c: f64,
}

impl StationaryHessianSpec {
    /// `c` is the inverse-link derivative at the stationary point.
    pub fn new(members: usize, lambda: f64, c: f64) -> Result<Self> {
        if members < 2 {
            return Err(Error::InvalidConfig(format!("need M >= 2, got {members}")));
        }
        if !lambda.is_finite() {
            return Err(Error::InvalidConfig("lambda must be finite".into()));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidConfig(format!("c must be positive, got {c}")));
        }
        Ok(StationaryHessianSpec { members, lambda, c })
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Diagonal entry.
    pub fn q(&self) -> f64 {
        let m = self.members as f64;
        (1.0 / m) * (1.0 - self.lambda * (1.0 - 1.0 / m)) * self.c
    }

    /// Off-diagonal entry.
    pub fn r(&self) -> f64 {
        let m = self.members as f64;
        self.lambda / (m * m) * self.c
    }
}

pub fn stationary_hessian(spec: &StationaryHessianSpec) -> DMatrix<f64> {
    let (q, r) = (spec.q(), spec.r());
    DMatrix::from_fn(spec.members, spec.members, |i, j| if i == j { q } else { r })
}

/// `(ω₁, ω₂)`: ω₁ = c/M once (the all-ones direction), ω₂ = (c/M)(1−λ)
/// with multiplicity M−1.
pub fn hessian_eigenvalues(spec: &StationaryHessianSpec) -> (f64, f64) {
    let base = spec.c / spec.members as f64;
    (base, base * (1.0 - spec.lambda))
}

/// The closed-form spectrum as a sorted list of M values.
pub fn closed_form_spectrum(spec: &StationaryHessianSpec) -> Vec<f64> {
    let (w1, w2) = hessian_eigenvalues(spec);
    let mut v = vec![w2; spec.members - 1];
    v.push(w1);
    v.sort_by(f64::total_cmp);
    v
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn numeric_eigenvalues(h: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// κ(H) = ω₁/ω₂ = 1/(1−λ) on [0,1); infinite at λ = 1.
pub fn condition_number(lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!(
            "condition number defined for lambda in [0,1], got {lambda}"
        )));
    }
    if lambda == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (1.0 - lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurvatureKind {
    Minimum,
    Degenerate,
    Saddle,
    Maximum,
}

pub fn classify(eigenvalues: &[f64], tol: f64) -> CurvatureKind {
    let pos = eigenvalues.iter().any(|&w| w > tol);
    let neg = eigenvalues.iter().any(|&w| w < -tol);
    match (pos, neg) {
        (true, true) => CurvatureKind::Saddle,
        (false, true) => CurvatureKind::Maximum,
        (true, false) if eigenvalues.iter().all(|&w| w > tol) => CurvatureKind::Minimum,
        _ => CurvatureKind::Degenerate,
    }
}

/// Joint loss of scalar Gaussian members for any real λ, evaluated through
/// the library's divergence terms.
pub fn gaussian_joint_loss(member_etas: &[f64], target: f64, lambda: f64) -> Result<f64> {
    if member_etas.is_empty() {
        return Err(Error::Empty("member parameters"));
    }
    let logits: Vec<Array2<f64>> = member_etas.iter().map(|&e| Array2::from_elem((1, 1), e)).collect();
    let targets = Array2::from_elem((1, 1), target);
    let terms = BatchPredictions::new(DistributionFamily::GaussianUnitVariance, &logits)?
        .loss_terms(targets.view())?;
    Ok(terms.convex_form(lambda))
}

/// Central second differences of [`gaussian_joint_loss`] over the member
/// parameters, step [`HESSIAN_STEP`].
pub fn numeric_hessian_of_joint_loss(member_etas: &[f64], target: f64, lambda: f64) -> Result<DMatrix<f64>> {
    let m = member_etas.len();
    let h = HESSIAN_STEP;
    let f = |shift: &[(usize, f64)]| -> Result<f64> {
        let mut eta = member_etas.to_vec();
        for &(i, d) in shift {
            eta[i] += d;
        }
        gaussian_joint_loss(&eta, target, lambda)
    };
    let f0 = f(&[])?;
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        out[(i, i)] = (f(&[(i, h)])? - 2.0 * f0 + f(&[(i, -h)])?) / (h * h);
        for j in 0..i {
            let v = (f(&[(i, h), (j, h)])? - f(&[(i, h), (j, -h)])? - f(&[(i, -h), (j, h)])?
                + f(&[(i, -h), (j, -h)])?)
                / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Central-difference gradient of `f` at `x`.
pub fn central_gradient<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn check_log_probs(member_log_probs: &[Vec<f64>], target: &[f64]) -> Result<()> {
    if member_log_probs.is_empty() {
        return Err(Error::Empty("member log-probabilities"));
    }
    for lp in member_log_probs {
        if lp.len() != target.len() {
            return Err(Error::LengthMismatch {
                expected: target.len(),
                found: lp.len(),
            });
        }
    }
    Ok(())
}

/// Mean over members of the cross-entropy −Σ_k p_k log q_jk.
pub fn ll_loss(member_log_probs: &[Vec<f64>], target: &[f64]) -> Result<f64> {
    check_log_probs(member_log_probs, target)?;
    let m = member_log_probs.len() as f64;
    let total: f64 = member_log_probs
        .iter()
        .map(|lp| -lp.iter().zip(target).map(|(l, p)| p * l).sum::<f64>())
        .sum();
    Ok(total / m)
}

/// Cross-entropy of the unnormalized geometric mean exp((1/M) Σ_j log q_j).
pub fn sm_loss(member_log_probs: &[Vec<f64>], target: &[f64]) -> Result<f64> {
    check_log_probs(member_log_probs, target)?;
    let m = member_log_probs.len() as f64;
    let unnormalized: Vec<f64> = (0..target.len())
        .map(|k| (member_log_probs.iter().map(|lp| lp[k]).sum::<f64>() / m).exp())
        .collect();
    Ok(-unnormalized
        .iter()
        .zip(target)
        .map(|(s, p)| p * s.ln())
        .sum::<f64>())
}

/// Per-member gradient of negative correlation learning:
/// (1/M)((ŷ_j − y) − λ(ŷ_j − ȳ)).
pub fn ncl_gradient(member_means: &[f64], target: f64, lambda: f64) -> Result<Vec<f64>> {
    if member_means.is_empty() {
        return Err(Error::Empty("member predictions"));
    }
    let m = member_means.len() as f64;
    let ybar = member_means.iter().sum::<f64>() / m;
    Ok(member_means
        .iter()
        .map(|&y| ((y - target) - lambda * (y - ybar)) / m)
        .collect())
}

/// Max absolute difference between [`ncl_gradient`] and the Gaussian joint
/// gradient for one example.
pub fn verify_ncl_equivalence(member_means: &[f64], target: f64, lambda: f64) -> Result<f64> {
    let ncl = ncl_gradient(member_means, target, lambda)?;
    let logits: Vec<Array2<f64>> = member_means.iter().map(|&e| Array2::from_elem((1, 1), e)).collect();
    let targets = Array2::from_elem((1, 1), target);
    let cfg = JointLossConfig::new(lambda, member_means.len())?;
    let joint = joint_loss_grad_logits(DistributionFamily::GaussianUnitVariance, targets.view(), &logits, &cfg)?;
    Ok(ncl
        .iter()
        .zip(&joint)
        .map(|(a, g)| (a - g[[0, 0]]).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hessian_entries() {
        let s = StationaryHessianSpec::new(4, 0.5, 1.0).unwrap();
        assert!((s.q() - 0.15625).abs() < 1e-15);
        assert!((s.r() - 0.03125).abs() < 1e-15);
        let h = stationary_hessian(&s);
        assert_eq!(h, h.transpose());
        assert_eq!(hessian_eigenvalues(&s), (0.25, 0.125));
    }

    #[test]
    fn lambda_zero_is_diagonal() {
        let s = StationaryHessianSpec::new(3, 0.0, 2.0).unwrap();
        let h = stationary_hessian(&s);
        assert_eq!(h, DMatrix::from_diagonal_element(3, 3, 2.0 / 3.0));
    }

    #[test]
    fn spec_validation() {
        assert!(StationaryHessianSpec::new(1, 0.5, 1.0).is_err());
        assert!(StationaryHessianSpec::new(2, 0.5, 0.0).is_err());
        assert!(StationaryHessianSpec::new(2, 1.5, 1.0).is_ok());
    }

    #[test]
    fn kappa() {
        assert_eq!(condition_number(0.0).unwrap(), 1.0);
        assert_eq!(condition_number(0.5).unwrap(), 2.0);
        assert!(condition_number(1.0).unwrap().is_infinite());
        assert!(condition_number(1.5).is_err());
    }

    #[test]
    fn saddle_above_one() {
        let s = StationaryHessianSpec::new(4, 1.5, 1.0).unwrap();
        let (w1, w2) = hessian_eigenvalues(&s);
        assert!(w2 < 0.0 && w1 > 0.0);
        assert_eq!(classify(&numeric_eigenvalues(&stationary_hessian(&s)), 1e-12), CurvatureKind::Saddle);
    }

    #[test]
    fn ncl_endpoints() {
        let g = ncl_gradient(&[1.0, 3.0], 1.0, 0.0).unwrap();
        assert_eq!(g, vec![0.0, 1.0]);
        let g = ncl_gradient(&[1.0, 3.0, 2.0], 2.0, 1.0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_member_ll_sm() {
        let lp = vec![vec![(0.2f64).ln(), (0.8f64).ln()]];
        let p = [0.0, 1.0];
        assert!((ll_loss(&lp, &p).unwrap() + (0.8f64).ln()).abs() < 1e-15);
        assert!((sm_loss(&lp, &p).unwrap() + (0.8f64).ln()).abs() < 1e-15);
    }
}
