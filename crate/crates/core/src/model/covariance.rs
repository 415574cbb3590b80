//! Per-response covariance Σ_r and the joint covariance C built with the
//! generalized Kronecker product.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::predictor::{build_omega, MatrixPredictor};
use super::variance::VarianceFunction;
use super::ResponseSpec;
use crate::error::{McglmError, Result};

/// Σ_b(ρ): unit diagonal, ρ filling the upper triangle row by row
/// ((1,2), (1,3), …, (2,3), …) and mirrored below.
pub fn sigma_b(n_responses: usize, rho: &[f64]) -> Result<DMatrix<f64>> {
    let expected = n_responses * n_responses.saturating_sub(1) / 2;
    if rho.len() != expected {
        return Err(McglmError::Shape(format!(
            "{n_responses} responses need {expected} correlation parameters, got {}",
            rho.len()
        )));
    }
    let mut m = DMatrix::identity(n_responses, n_responses);
    let mut k = 0;
    for r in 0..n_responses {
        for s in (r + 1)..n_responses {
            m[(r, s)] = rho[k];
            m[(s, r)] = rho[k];
            k += 1;
        }
    }
    Ok(m)
}

/// Index of ρ for the pair (r, s), r < s, in the ordering used by [`sigma_b`].
pub fn rho_index(n_responses: usize, r: usize, s: usize) -> usize {
    debug_assert!(r < s && s < n_responses);
    r * n_responses - r * (r + 1) / 2 + (s - r - 1)
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// Σ_r = V^{1/2} Ω V^{1/2}, plus diag(μ) for count responses. `sqrt_v`
/// holds the diagonal of V^{1/2}.
pub(crate) fn sigma_from_parts(
    omega: &DMatrix<f64>,
    sqrt_v: &DVector<f64>,
    mu: &DVector<f64>,
    count: bool,
) -> DMatrix<f64> {
    let n = omega.nrows();
    let mut sigma = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            sigma[(i, j)] = sqrt_v[i] * omega[(i, j)] * sqrt_v[j];
        }
        if count {
            sigma[(j, j)] += mu[j];
        }
    }
    sigma
}

/// Diagonal of V(μ; p)^{1/2}, checking the variance function's domain.
pub(crate) fn sqrt_variance(varfun: &VarianceFunction, mu: &DVector<f64>, p: f64) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(mu.len());
    for (i, &m) in mu.iter().enumerate() {
        varfun.check_domain(m, p).map_err(|message| McglmError::Domain { index: i, message })?;
        let v = varfun.value(m, p);
        if !(v >= 0.0) || !v.is_finite() {
            return Err(McglmError::InvalidDispersion(format!(
                "variance function value {v} at index {i} is invalid"
            )));
        }
        out[i] = v.sqrt();
    }
    Ok(out)
}

/// Σ_r for one response at mean `mu`, dispersion `tau` and power `p`.
pub fn build_sigma_r(
    spec: &ResponseSpec,
    mp: &MatrixPredictor,
    mu: &DVector<f64>,
    tau: &DVector<f64>,
    p: f64,
) -> Result<DMatrix<f64>> {
    if mu.len() != mp.dim() {
        return Err(McglmError::Shape(format!(
            "mu has length {} but the matrix predictor is {}x{1}",
            mu.len(),
            mp.dim()
        )));
    }
    let omega = build_omega(mp, tau)?;
    let s = sqrt_variance(&spec.variance, mu, p)?;
    let sigma = sigma_from_parts(&omega, &s, mu, spec.variance.is_count());
    if cholesky(&sigma).is_none() {
        return Err(McglmError::NotPositiveDefinite {
            context: format!("Sigma for response '{}'", spec.name),
            tau: tau.iter().copied().collect(),
        });
    }
    Ok(sigma)
}

/// The joint covariance C together with the Cholesky factors it was built from.
#[derive(Debug, Clone)]
pub struct JointCovariance {
    pub c: DMatrix<f64>,
    /// Lower Cholesky factor of each Σ_r.
    pub sigma_factors: Vec<DMatrix<f64>>,
    /// Lower Cholesky factor of C.
    pub c_factor: DMatrix<f64>,
}

/// C = Bdiag(Σ̃₁,…,Σ̃_R)(Σ_b ⊗ I)Bdiag(Σ̃₁ᵀ,…,Σ̃_Rᵀ). Block (r, s) is
/// Σ_b[r,s]·Σ̃_r Σ̃_sᵀ; diagonal blocks are Σ_r exactly.
pub fn build_joint_c(sigmas: &[DMatrix<f64>], sigma_b: &DMatrix<f64>) -> Result<JointCovariance> {
    let factors = sigma_factors(sigmas)?;
    let c = assemble_joint(sigmas, &factors, sigma_b)?;
    let c_factor = cholesky(&c).ok_or_else(|| McglmError::not_pd("joint covariance C"))?.l();
    Ok(JointCovariance { c, sigma_factors: factors, c_factor })
}

pub(crate) fn sigma_factors(sigmas: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    sigmas
        .iter()
        .enumerate()
        .map(|(r, s)| {
            cholesky(s)
                .map(|c| c.l())
                .ok_or_else(|| McglmError::not_pd(format!("Sigma of response {r}")))
        })
        .collect()
}

pub(crate) fn check_sigma_b(sigma_b: &DMatrix<f64>, n_responses: usize) -> Result<()> {
    if sigma_b.nrows() != n_responses || sigma_b.ncols() != n_responses {
        return Err(McglmError::Shape(format!("Sigma_b must be {n_responses}x{n_responses}")));
    }
    for r in 0..n_responses {
        if sigma_b[(r, r)] != 1.0 {
            return Err(McglmError::Shape("Sigma_b must have unit diagonal".into()));
        }
    }
    if sigma_b != &sigma_b.transpose() {
        return Err(McglmError::Shape("Sigma_b must be symmetric".into()));
    }
    if n_responses > 1 && cholesky(sigma_b).is_none() {
        return Err(McglmError::not_pd("between-response correlation Sigma_b"));
    }
    Ok(())
}

pub(crate) fn assemble_joint(
    sigmas: &[DMatrix<f64>],
    factors: &[DMatrix<f64>],
    sigma_b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n_resp = sigmas.len();
    check_sigma_b(sigma_b, n_resp)?;
    let n = sigmas.first().map(|s| s.nrows()).unwrap_or(0);
    if sigmas.iter().any(|s| s.nrows() != n || s.ncols() != n) {
        return Err(McglmError::Shape("all Sigma_r must share the same dimension".into()));
    }
    let mut c = DMatrix::zeros(n * n_resp, n * n_resp);
    for r in 0..n_resp {
        c.view_mut((r * n, r * n), (n, n)).copy_from(&sigmas[r]);
        for s in (r + 1)..n_resp {
            let rho = sigma_b[(r, s)];
            if rho == 0.0 {
                continue;
            }
            let block = &factors[r] * factors[s].transpose() * rho;
            c.view_mut((r * n, s * n), (n, n)).copy_from(&block);
            c.view_mut((s * n, r * n), (n, n)).copy_from(&block.transpose());
        }
    }
    Ok(c)
}

/// Forward-mode derivative of the Cholesky recurrence: given A = L Lᵀ and a
/// symmetric perturbation dA, returns dL with A + t·dA = (L + t·dL)(L + t·dL)ᵀ + O(t²).
pub fn dchol(l: &DMatrix<f64>, da: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut dl = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut acc = da[(j, j)];
        for k in 0..j {
            acc -= 2.0 * l[(j, k)] * dl[(j, k)];
        }
        let ljj = l[(j, j)];
        let dljj = acc / (2.0 * ljj);
        dl[(j, j)] = dljj;
        for i in (j + 1)..n {
            let mut acc = da[(i, j)];
            for k in 0..j {
                acc -= dl[(i, k)] * l[(j, k)] + l[(i, k)] * dl[(j, k)];
            }
            acc -= l[(i, j)] * dljj;
            dl[(i, j)] = acc / ljj;
        }
    }
    dl
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinkFunction, PowerPolicy, ResponseSpec};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn spec(variance: VarianceFunction, n: usize) -> ResponseSpec {
        ResponseSpec::new("y", LinkFunction::Identity, variance, DMatrix::from_element(n, 1, 1.0), PowerPolicy::Fixed(1.0))
    }

    #[test]
    fn constant_variance_identity_dispersion() {
        let s = spec(VarianceFunction::Power, 3);
        let mp = MatrixPredictor::independent(3);
        let mu = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let sigma = build_sigma_r(&s, &mp, &mu, &DVector::from_vec(vec![1.0]), 0.0).unwrap();
        assert_eq!(sigma, DMatrix::identity(3, 3));
    }

    #[test]
    fn count_response_formula() {
        let s = spec(VarianceFunction::PoissonTweedie, 2);
        let mp = MatrixPredictor::independent(2);
        let mu = DVector::from_vec(vec![2.0, 4.0]);
        let sigma = build_sigma_r(&s, &mp, &mu, &DVector::from_vec(vec![1.0]), 1.0).unwrap();
        // scalar oracle: mu_i + sqrt(mu_i) * 1 * sqrt(mu_i)
        for i in 0..2 {
            let oracle = mu[i] + mu[i].sqrt() * 1.0 * mu[i].sqrt();
            assert_relative_eq!(sigma[(i, i)], oracle, epsilon = 1e-14);
        }
        assert_relative_eq!(sigma, dmatrix![4.0, 0.0; 0.0, 8.0], epsilon = 1e-14);
    }

    #[test]
    fn count_minus_continuous_is_diag_mu() {
        let ones = crate::model::ZMatrix::dense(DMatrix::from_element(3, 3, 1.0)).unwrap();
        let mp = MatrixPredictor::new(vec![crate::model::ZMatrix::Identity(3), ones]).unwrap();
        let mu = DVector::from_vec(vec![1.5, 2.5, 7.0]);
        let tau = DVector::from_vec(vec![0.8, 0.1]);
        let count = build_sigma_r(&spec(VarianceFunction::PoissonTweedie, 3), &mp, &mu, &tau, 1.3).unwrap();
        let cont = build_sigma_r(&spec(VarianceFunction::Power, 3), &mp, &mu, &tau, 1.3).unwrap();
        assert_relative_eq!(count - cont, DMatrix::from_diagonal(&mu), epsilon = 1e-12);
    }

    #[test]
    fn binomial_sigma() {
        let s = spec(VarianceFunction::binomial(), 2);
        let mp = MatrixPredictor::independent(2);
        let mu = DVector::from_vec(vec![0.5, 0.5]);
        let sigma = build_sigma_r(&s, &mp, &mu, &DVector::from_vec(vec![2.0]), 1.0).unwrap();
        assert_eq!(sigma, dmatrix![0.5, 0.0; 0.0, 0.5]);
    }

    #[test]
    fn infeasible_tau_reports_not_pd() {
        let s = spec(VarianceFunction::Power, 2);
        let mp = MatrixPredictor::independent(2);
        let err = build_sigma_r(&s, &mp, &DVector::from_vec(vec![1.0, 1.0]), &DVector::from_vec(vec![-1.0]), 0.0);
        match err {
            Err(McglmError::NotPositiveDefinite { tau, .. }) => assert_eq!(tau, vec![-1.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_response_degenerates() {
        let s1 = dmatrix![2.0, 0.3; 0.3, 1.0];
        let jc = build_joint_c(&[s1.clone()], &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(jc.c, s1);
    }

    #[test]
    fn identity_sigmas_give_kronecker() {
        let sb = sigma_b(3, &[0.75, 0.5, 0.25]).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        let jc = build_joint_c(&[eye.clone(), eye.clone(), eye.clone()], &sb).unwrap();
        assert_eq!(jc.c, sb.kronecker(&eye));
    }

    #[test]
    fn independent_gives_block_diagonal() {
        let s1 = dmatrix![2.0, 0.3; 0.3, 1.0];
        let s2 = dmatrix![1.0, -0.2; -0.2, 3.0];
        let jc = build_joint_c(&[s1.clone(), s2.clone()], &DMatrix::identity(2, 2)).unwrap();
        let mut expected = DMatrix::zeros(4, 4);
        expected.view_mut((0, 0), (2, 2)).copy_from(&s1);
        expected.view_mut((2, 2), (2, 2)).copy_from(&s2);
        assert_eq!(jc.c, expected);
    }

    #[test]
    fn joint_matches_dense_triple_product() {
        let s1 = dmatrix![1.0, 0.0; 0.0, 4.0];
        let s2 = DMatrix::<f64>::identity(2, 2);
        let sb = sigma_b(2, &[0.5]).unwrap();
        let jc = build_joint_c(&[s1.clone(), s2.clone()], &sb).unwrap();
        // oracle: explicit 4x4 factors multiplied densely
        let mut bd = DMatrix::zeros(4, 4);
        bd.view_mut((0, 0), (2, 2)).copy_from(&dmatrix![1.0, 0.0; 0.0, 2.0]);
        bd.view_mut((2, 2), (2, 2)).copy_from(&s2);
        let oracle = &bd * sb.kronecker(&DMatrix::<f64>::identity(2, 2)) * bd.transpose();
        assert!((jc.c - oracle).amax() < 1e-12);
    }

    #[test]
    fn rho_index_matches_sigma_b_order() {
        let rho: Vec<f64> = (0..6).map(|k| k as f64 / 10.0).collect();
        let sb = sigma_b(4, &rho).unwrap();
        for r in 0..4 {
            for s in (r + 1)..4 {
                assert_eq!(sb[(r, s)], rho[rho_index(4, r, s)]);
            }
        }
    }

    #[test]
    fn dchol_matches_finite_differences() {
        let a = dmatrix![4.0, 1.0, 0.5; 1.0, 3.0, 0.2; 0.5, 0.2, 2.0];
        let da = dmatrix![0.3, -0.1, 0.2; -0.1, 0.5, 0.05; 0.2, 0.05, -0.4];
        let l = cholesky(&a).unwrap().l();
        let dl = dchol(&l, &da);
        let h = 1e-6;
        let lp = cholesky(&(&a + &da * h)).unwrap().l();
        let lm = cholesky(&(&a - &da * h)).unwrap().l();
        let fd = (lp - lm) / (2.0 * h);
        assert!((dl - fd).amax() < 1e-8);
    }

    #[test]
    fn sigma_b_rejects_non_pd() {
        let sb = sigma_b(3, &[0.99, -0.99, 0.99]).unwrap();
        let eye = DMatrix::<f64>::identity(1, 1);
        assert!(build_joint_c(&[eye.clone(), eye.clone(), eye], &sb).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]
        #[test]
        fn diagonal_blocks_equal_sigmas(seed in proptest::prelude::any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            let mut sigmas = Vec::new();
            for _ in 0..3 {
                let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                sigmas.push(&a * a.transpose() + DMatrix::identity(n, n) * 0.5);
            }
            let rho = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
            let sb = sigma_b(3, &rho).unwrap();
            let jc = build_joint_c(&sigmas, &sb).unwrap();
            for r in 0..3 {
                let block = jc.c.view((r * n, r * n), (n, n)).clone_owned();
                proptest::prop_assert!((block - &sigmas[r]).amax() < 1e-10);
            }
        }
    }
}
