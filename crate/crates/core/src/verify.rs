//! Randomized identity suite over the loss, combiner, gradient and the
//! closed-form curvature results. Each check reports its worst residual.

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    central_gradient, classify, closed_form_spectrum, condition_number, ll_loss, numeric_eigenvalues,
    numeric_hessian_of_joint_loss, sm_loss, stationary_hessian, verify_ncl_equivalence, CurvatureKind,
    StationaryHessianSpec, GRADIENT_STEP,
};
use crate::error::Result;
use crate::expfam::{
    ambiguity_decompose, combine_logits, geometric_mean_combine, softmax_into, DistributionFamily,
    LogitVector, ProbVector,
};
use crate::jointtrain::loss::{joint_loss, joint_loss_ambiguity, joint_loss_grad_logits, JointLossConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub cases: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(name: &str, cases: usize, max_residual: f64, tolerance: f64) -> Self {
        IdentityCheck {
            name: name.to_string(),
            cases,
            max_residual,
            tolerance,
            passed: max_residual < tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub checks: Vec<IdentityCheck>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "identity suite (seed {})", self.seed)?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<6} {:<34} cases={:<6} max_residual={:.3e} tol={:.0e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.cases,
                c.max_residual,
                c.tolerance
            )?;
        }
        write!(f, "{}", if self.all_passed() { "all identities hold" } else { "some identities FAILED" })
    }
}

/// Random logits, scale a few units.
pub fn random_logits(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random targets: one-hot or soft rows for categorical, normal reals for
/// Gaussian.
pub fn random_targets(rng: &mut impl Rng, family: DistributionFamily, rows: usize) -> Array2<f64> {
    match family {
        DistributionFamily::Categorical { classes } => {
            let mut t = Array2::zeros((rows, classes));
            for mut row in t.rows_mut() {
                if rng.gen_bool(0.5) {
                    row[rng.gen_range(0..classes)] = 1.0;
                } else {
                    let eta: Vec<f64> = (0..classes).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
                    softmax_into(&eta, row.as_slice_mut().expect("standard layout"));
                }
            }
            t
        }
        DistributionFamily::GaussianUnitVariance => random_logits(rng, rows, 1, 2.0),
    }
}

fn random_family(rng: &mut impl Rng) -> DistributionFamily {
    if rng.gen_bool(0.5) {
        DistributionFamily::Categorical { classes: rng.gen_range(2..=10) }
    } else {
        DistributionFamily::GaussianUnitVariance
    }
}

const MEMBER_GRID: [usize; 4] = [1, 2, 8, 16];
const LAMBDA_GRID: [f64; 4] = [0.0, 0.3, 0.95, 1.0];

/// ‖a − b‖ / (‖a‖ + ‖b‖), 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn loss_forms(rng: &mut ChaCha8Rng, cases: usize) -> Result<IdentityCheck> {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let family = random_family(rng);
        let m = MEMBER_GRID[i % 4];
        let lambda = LAMBDA_GRID[(i / 4) % 4];
        let rows = rng.gen_range(1..=4);
        let logits: Vec<_> = (0..m).map(|_| random_logits(rng, rows, family.arity(), 3.0)).collect();
        let targets = random_targets(rng, family, rows);
        let cfg = JointLossConfig::new(lambda, m)?;
        let a = joint_loss(family, targets.view(), &logits, &cfg)?;
        let b = joint_loss_ambiguity(family, targets.view(), &logits, &cfg)?;
        worst = worst.max((a - b).abs());
    }
    Ok(IdentityCheck::new("loss forms agree", cases, worst, 1e-10))
}

fn combiner(rng: &mut ChaCha8Rng, cases: usize) -> Result<IdentityCheck> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let k = rng.gen_range(2..=10);
        let m = rng.gen_range(1..=16);
        let mut logits = Vec::with_capacity(m);
        let mut probs = Vec::with_capacity(m);
        for _ in 0..m {
            let eta: Vec<f64> = (0..k).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut q = vec![0.0; k];
            softmax_into(&eta, &mut q);
            probs.push(ProbVector::new(q)?);
            logits.push(LogitVector::new(eta)?);
        }
        let eta = combine_logits(&logits)?;
        let mut via_logits = vec![0.0; k];
        softmax_into(eta.as_slice(), &mut via_logits);
        let via_probs = geometric_mean_combine(&probs)?;
        for (a, b) in via_logits.iter().zip(via_probs.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(IdentityCheck::new("softmax of mean logits = PoE", cases, worst, 1e-12))
}

fn ambiguity(rng: &mut ChaCha8Rng, cases: usize) -> Result<(IdentityCheck, IdentityCheck)> {
    let mut residual = 0.0f64;
    let mut negative = 0.0f64;
    for _ in 0..cases {
        let family = random_family(rng);
        let m = rng.gen_range(1..=16);
        let members: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let eta = random_logits(rng, 1, family.arity(), 3.0).into_raw_vec_and_offset().0;
                let mut q = vec![0.0; eta.len()];
                family.inverse_link_into(&eta, &mut q);
                q
            })
            .collect();
        let target = random_targets(rng, family, 1).into_raw_vec_and_offset().0;
        let d = ambiguity_decompose(family, &target, &members)?;
        residual = residual.max(d.residual());
        negative = negative.max(-d.diversity);
    }
    Ok((
        IdentityCheck::new("ensemble = average - diversity", cases, residual, 1e-10),
        IdentityCheck::new("diversity non-negative", cases, negative, 1e-12),
    ))
}

fn gradient(rng: &mut ChaCha8Rng, cases: usize) -> Result<IdentityCheck> {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let family = random_family(rng);
        let m = rng.gen_range(1..=5);
        let lambda = LAMBDA_GRID[i % 4];
        let rows = rng.gen_range(1..=3);
        let k = family.arity();
        let logits: Vec<_> = (0..m).map(|_| random_logits(rng, rows, k, 2.0)).collect();
        let targets = random_targets(rng, family, rows);
        let cfg = JointLossConfig::new(lambda, m)?;
        let analytic: Vec<f64> = joint_loss_grad_logits(family, targets.view(), &logits, &cfg)?
            .iter()
            .flat_map(|g| g.iter().copied().collect::<Vec<_>>())
            .collect();
        let flat: Vec<f64> = logits.iter().flat_map(|l| l.iter().copied().collect::<Vec<_>>()).collect();
        let loss = |x: &[f64]| {
            let ls: Vec<Array2<f64>> = x
                .chunks(rows * k)
                .map(|c| Array2::from_shape_vec((rows, k), c.to_vec()).expect("shape"))
                .collect();
            joint_loss(family, targets.view(), &ls, &cfg).expect("valid instance")
        };
        let numeric = central_gradient(loss, &flat, GRADIENT_STEP);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(IdentityCheck::new("logit gradient vs differences", cases, worst, 1e-6))
}

fn eigen_grid() -> Result<IdentityCheck> {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for m in [2, 4, 8, 16] {
        for lambda in [0.0, 0.5, 0.9, 0.99, 1.0, 1.5] {
            for c in [0.25, 1.0, 4.0] {
                let spec = StationaryHessianSpec::new(m, lambda, c)?;
                let numeric = numeric_eigenvalues(&stationary_hessian(&spec));
                for (a, b) in numeric.iter().zip(closed_form_spectrum(&spec)) {
                    worst = worst.max((a - b).abs());
                }
                cases += 1;
            }
        }
    }
    Ok(IdentityCheck::new("closed-form Hessian spectrum", cases, worst, 1e-10))
}

fn kappa() -> Result<IdentityCheck> {
    let worst = (condition_number(0.9)? - 10.0).abs().max((condition_number(0.5)? - 2.0).abs());
    Ok(IdentityCheck::new("condition number 1/(1-lambda)", 2, worst, 1e-12))
}

fn stationary_numeric(rng: &mut ChaCha8Rng) -> Result<(IdentityCheck, IdentityCheck)> {
    let mut worst = 0.0f64;
    let mut cases = 0;
    let mut saddle_misses = 0.0;
    for m in [2, 3, 5, 8] {
        for lambda in [0.0, 0.3, 0.7, 1.0, 1.5] {
            let y: f64 = rng.sample(StandardNormal);
            let numeric = numeric_hessian_of_joint_loss(&vec![y; m], y, lambda)?;
            let closed = stationary_hessian(&StationaryHessianSpec::new(m, lambda, 1.0)?);
            worst = worst.max((numeric - closed).abs().max());
            if lambda > 1.0 {
                let eig = numeric_eigenvalues(&numeric_hessian_of_joint_loss(&vec![y; m], y, lambda)?);
                if classify(&eig, 1e-6) != CurvatureKind::Saddle {
                    saddle_misses += 1.0;
                }
            }
            cases += 1;
        }
    }
    Ok((
        IdentityCheck::new("numeric Hessian at stationary point", cases, worst, 1e-6),
        IdentityCheck::new("lambda > 1 gives a saddle", 4, saddle_misses, 0.5),
    ))
}

fn log_softmax(eta: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; eta.len()];
    softmax_into(eta, &mut q);
    q.iter().map(|v| v.ln()).collect()
}

fn ll_sm(rng: &mut ChaCha8Rng, cases: usize) -> Result<(IdentityCheck, IdentityCheck)> {
    let mut value = 0.0f64;
    let mut grad = 0.0f64;
    for i in 0..cases {
        let k = [2, 10][i % 2];
        let m = [2, 8][(i / 2) % 2];
        let target = random_targets(rng, DistributionFamily::Categorical { classes: k }, 1)
            .into_raw_vec_and_offset()
            .0;
        let etas: Vec<f64> = (0..m * k).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let log_probs = |x: &[f64]| -> Vec<Vec<f64>> { x.chunks(k).map(log_softmax).collect() };
        let lp = log_probs(&etas);
        value = value.max((ll_loss(&lp, &target)? - sm_loss(&lp, &target)?).abs());
        // (1/M)(q_j − p): the independent cross-entropy gradient, scaled.
        let expected: Vec<f64> = etas
            .chunks(k)
            .flat_map(|eta| {
                let mut q = vec![0.0; k];
                softmax_into(eta, &mut q);
                q.iter().zip(&target).map(|(q, p)| (q - p) / m as f64).collect::<Vec<_>>()
            })
            .collect();
        for f in [ll_loss, sm_loss] {
            let numeric = central_gradient(|x| f(&log_probs(x), &target).expect("valid"), &etas, GRADIENT_STEP);
            grad = grad.max(relative_error(&numeric, &expected));
        }
    }
    Ok((
        IdentityCheck::new("LL loss = SM loss", cases, value, 1e-12),
        IdentityCheck::new("LL/SM gradient = independent / M", cases, grad, 1e-6),
    ))
}

fn ncl(rng: &mut ChaCha8Rng, cases: usize) -> Result<IdentityCheck> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let m = rng.gen_range(1..=16);
        let lambda: f64 = rng.gen_range(0.0..=1.0);
        let means: Vec<f64> = (0..m).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let y: f64 = rng.sample(StandardNormal);
        worst = worst.max(verify_ncl_equivalence(&means, y, lambda)?);
    }
    Ok(IdentityCheck::new("NCL gradient = Gaussian joint gradient", cases, worst, 1e-14))
}

/// Runs every identity with `cases` random instances per randomized check.
pub fn run_identity_suite(seed: u64, cases: usize) -> Result<VerificationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = vec![loss_forms(&mut rng, cases)?, combiner(&mut rng, cases)?];
    let (res, div) = ambiguity(&mut rng, cases)?;
    checks.extend([res, div]);
    checks.push(gradient(&mut rng, cases.min(100))?);
    checks.push(eigen_grid()?);
    checks.push(kappa()?);
    let (hess, saddle) = stationary_numeric(&mut rng)?;
    checks.extend([hess, saddle]);
    let (llv, llg) = ll_sm(&mut rng, cases.min(100))?;
    checks.extend([llv, llg]);
    checks.push(ncl(&mut rng, cases)?);
    Ok(VerificationReport { seed, checks })
}
