//! Evaluation of the estimating functions and their sensitivity and
//! variability matrices.
//!
//! C is block diagonal over clusters of observations that no Z_d links, so
//! every quantity is a sum of per-cluster terms computed on small dense
//! blocks. A single cluster holding every observation gives the dense
//! computation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{McglmError, Result};
use crate::model::{
    assemble_joint, cholesky, dchol, sigma_b, sigma_from_parts, sqrt_variance, McglmModel, ParamKind, Params,
};

/// Observation clusters and each Z_d restricted to them.
#[derive(Debug, Clone)]
pub(crate) struct Clusters {
    pub members: Vec<Vec<usize>>,
    /// `z[r][c][d]`: component d of response r on cluster c.
    z: Vec<Vec<Vec<DMatrix<f64>>>>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl Clusters {
    pub fn new(model: &McglmModel) -> Self {
        let n = model.n_obs();
        let mut parent: Vec<usize> = (0..n).collect();
        for mp in model.predictors() {
            for z in mp.components() {
                z.for_each_offdiag(|i, j| {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                });
            }
        }
        let mut slot = vec![usize::MAX; n];
        let mut members: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            if slot[root] == usize::MAX {
                slot[root] = members.len();
                members.push(Vec::new());
            }
            members[slot[root]].push(i);
        }
        Self::with_members(model, members)
    }

    pub fn single(model: &McglmModel) -> Self {
        Self::with_members(model, vec![(0..model.n_obs()).collect()])
    }

    fn with_members(model: &McglmModel, members: Vec<Vec<usize>>) -> Self {
        let n = model.n_obs();
        let mut cluster_of = vec![0; n];
        let mut local_of = vec![0; n];
        for (c, rows) in members.iter().enumerate() {
            for (a, &i) in rows.iter().enumerate() {
                cluster_of[i] = c;
                local_of[i] = a;
            }
        }
        let z = model
            .predictors()
            .iter()
            .map(|mp| {
                let per_d: Vec<Vec<DMatrix<f64>>> =
                    mp.components().iter().map(|z| z.split(&members, &cluster_of, &local_of)).collect();
                (0..members.len())
                    .map(|c| per_d.iter().map(|v| v[c].clone()).collect())
                    .collect()
            })
            .collect();
        Clusters { members, z }
    }
}

/// Mean-level quantities at θ.
pub(crate) struct Point {
    pub params: Params,
    pub mu: Vec<DVector<f64>>,
    pub dmu: Vec<DVector<f64>>,
    pub resid: Vec<DVector<f64>>,
    pub sigma_b: DMatrix<f64>,
}

impl Point {
    pub fn new(model: &McglmModel, theta: &DVector<f64>, y: &[DVector<f64>]) -> Result<Self> {
        let params = Params::unpack(model, theta)?;
        let mut mu = Vec::new();
        let mut dmu = Vec::new();
        let mut resid = Vec::new();
        for (r, spec) in model.responses().iter().enumerate() {
            let eta = &spec.x * &params.beta[r];
            let m = spec.link.inverse_vec(&eta)?;
            resid.push(&y[r] - &m);
            dmu.push(spec.link.mu_eta_vec(&eta)?);
            mu.push(m);
        }
        let sigma_b = sigma_b(model.n_responses(), &params.rho)?;
        if model.n_responses() > 1 && cholesky(&sigma_b).is_none() {
            return Err(McglmError::not_pd("between-response correlation Sigma_b"));
        }
        Ok(Point { params, mu, dmu, resid, sigma_b })
    }
}

/// Covariance pieces of one cluster.
pub(crate) struct Block<'a> {
    model: &'a McglmModel,
    point: &'a Point,
    pub idx: &'a [usize],
    z: Vec<&'a [DMatrix<f64>]>,
    mu: Vec<DVector<f64>>,
    s: Vec<DVector<f64>>,
    omega: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
}

impl<'a> Block<'a> {
    pub fn new(model: &'a McglmModel, point: &'a Point, clusters: &'a Clusters, c: usize) -> Result<Self> {
        let idx = clusters.members[c].as_slice();
        let m = idx.len();
        let n_resp = model.n_responses();
        let mut mus = Vec::with_capacity(n_resp);
        let mut ss = Vec::with_capacity(n_resp);
        let mut omegas = Vec::with_capacity(n_resp);
        let mut sigmas = Vec::with_capacity(n_resp);
        let mut zs = Vec::with_capacity(n_resp);
        for (r, spec) in model.responses().iter().enumerate() {
            let mu = DVector::from_iterator(m, idx.iter().map(|&i| point.mu[r][i]));
            let s = sqrt_variance(&spec.variance, &mu, point.params.power[r]).map_err(|e| match e {
                McglmError::Domain { index, message } => McglmError::Domain { index: idx[index], message },
                other => other,
            })?;
            let z = clusters.z[r][c].as_slice();
            let mut omega = DMatrix::zeros(m, m);
            for (zd, &t) in z.iter().zip(point.params.tau[r].iter()) {
                omega += zd * t;
            }
            sigmas.push(sigma_from_parts(&omega, &s, &mu, spec.variance.is_count()));
            mus.push(mu);
            ss.push(s);
            omegas.push(omega);
            zs.push(z);
        }
        let mut factors = Vec::with_capacity(n_resp);
        for (r, sigma) in sigmas.iter().enumerate() {
            let l = cholesky(sigma).ok_or_else(|| McglmError::NotPositiveDefinite {
                context: format!("Sigma for response '{}'", model.responses()[r].name),
                tau: point.params.tau[r].iter().copied().collect(),
            })?;
            factors.push(l.l());
        }
        let c = assemble_joint(&sigmas, &factors, &point.sigma_b)?;
        Ok(Block { model, point, idx, z: zs, mu: mus, s: ss, omega: omegas, factors, c })
    }

    fn m(&self) -> usize {
        self.idx.len()
    }

    /// ∂C for a perturbation dΣ_r of response r alone.
    fn response_perturbation(&self, r: usize, dsigma: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.m();
        let n_resp = self.model.n_responses();
        let mut dc = DMatrix::zeros(m * n_resp, m * n_resp);
        dc.view_mut((r * m, r * m), (m, m)).copy_from(dsigma);
        if (0..n_resp).any(|s| s != r && self.point.sigma_b[(r, s)] != 0.0) {
            let dl = dchol(&self.factors[r], dsigma);
            for s in (0..n_resp).filter(|&s| s != r) {
                let rho = self.point.sigma_b[(r, s)];
                if rho == 0.0 {
                    continue;
                }
                let blk = &dl * self.factors[s].transpose() * rho;
                dc.view_mut((r * m, s * m), (m, m)).copy_from(&blk);
                dc.view_mut((s * m, r * m), (m, m)).copy_from(&blk.transpose());
            }
        }
        dc
    }

    /// ∂C/∂λ_q, q indexing λ within θ (after the β block).
    pub fn d_lambda(&self, kind: ParamKind) -> DMatrix<f64> {
        let m = self.m();
        match kind {
            ParamKind::Rho { first, second } => {
                let n_resp = self.model.n_responses();
                let mut dc = DMatrix::zeros(m * n_resp, m * n_resp);
                let blk = &self.factors[first] * self.factors[second].transpose();
                dc.view_mut((first * m, second * m), (m, m)).copy_from(&blk);
                dc.view_mut((second * m, first * m), (m, m)).copy_from(&blk.transpose());
                dc
            }
            ParamKind::Tau { response, index } => {
                let s = &self.s[response];
                let z = &self.z[response][index];
                let ds = DMatrix::from_fn(m, m, |a, b| s[a] * z[(a, b)] * s[b]);
                self.response_perturbation(response, &ds)
            }
            ParamKind::Power { response } => {
                let spec = &self.model.responses()[response];
                let s = &self.s[response];
                let om = &self.omega[response];
                let dsv = DVector::from_fn(m, |a, _| 0.5 * s[a] * spec.variance.dlog_dp(self.mu[response][a]));
                let ds = DMatrix::from_fn(m, m, |a, b| om[(a, b)] * (dsv[a] * s[b] + s[a] * dsv[b]));
                self.response_perturbation(response, &ds)
            }
            ParamKind::Beta { .. } => panic!("d_lambda called with a regression parameter"),
        }
    }

    /// ∂C/∂β for column `column` of response `response`, through μ. Returns
    /// None when the derivative vanishes.
    pub fn d_beta(&self, response: usize, column: usize) -> Option<DMatrix<f64>> {
        let m = self.m();
        let spec = &self.model.responses()[response];
        let p = self.point.params.power[response];
        let dmu = DVector::from_fn(m, |a, _| {
            let i = self.idx[a];
            self.point.dmu[response][i] * spec.x[(i, column)]
        });
        let s = &self.s[response];
        let dsv = DVector::from_fn(m, |a, _| {
            if s[a] == 0.0 {
                0.0
            } else {
                0.5 * spec.variance.derivative_mu(self.mu[response][a], p) / s[a] * dmu[a]
            }
        });
        let count = spec.variance.is_count();
        if dsv.iter().all(|&v| v == 0.0) && (!count || dmu.iter().all(|&v| v == 0.0)) {
            return None;
        }
        let om = &self.omega[response];
        let mut ds = DMatrix::from_fn(m, m, |a, b| om[(a, b)] * (dsv[a] * s[b] + s[a] * dsv[b]));
        if count {
            for a in 0..m {
                ds[(a, a)] += dmu[a];
            }
        }
        Some(self.response_perturbation(response, &ds))
    }

    /// Stacked residual r = y − μ over the block, response-major.
    pub fn residual(&self) -> DVector<f64> {
        let m = self.m();
        DVector::from_fn(m * self.model.n_responses(), |k, _| self.point.resid[k / m][self.idx[k % m]])
    }

    /// D = ∂μ/∂β over the block, response-major rows.
    pub fn d_matrix(&self) -> DMatrix<f64> {
        let m = self.m();
        let layout = self.model.layout();
        let mut d = DMatrix::zeros(m * self.model.n_responses(), layout.n_beta());
        for (r, spec) in self.model.responses().iter().enumerate() {
            for (j, g) in layout.beta_range(r).enumerate() {
                for (a, &i) in self.idx.iter().enumerate() {
                    d[(r * m + a, g)] = spec.x[(i, j)] * self.point.dmu[r][i];
                }
            }
        }
        d
    }

    pub fn factor(&self) -> Result<Cholesky<f64, Dyn>> {
        cholesky(&self.c).ok_or_else(|| McglmError::not_pd("joint covariance C"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Level {
    /// ψ_β, V_β, ψ_λ and S_λ.
    Scores,
    /// Everything needed for the Godambe information.
    Full,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub psi_beta: DVector<f64>,
    pub v_beta: DMatrix<f64>,
    pub psi_lambda: DVector<f64>,
    pub s_lambda: DMatrix<f64>,
    pub v_lambda: DMatrix<f64>,
    pub s_lambda_beta: DMatrix<f64>,
    pub v_lambda_beta: DMatrix<f64>,
    /// Diagonal of C per response.
    pub c_diag: Vec<DVector<f64>>,
    pub residuals: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
}

impl Evaluation {
    pub fn max_norm(&self) -> f64 {
        self.psi_beta.amax().max(if self.psi_lambda.is_empty() { 0.0 } else { self.psi_lambda.amax() })
    }

    pub fn lambda_norm(&self) -> f64 {
        if self.psi_lambda.is_empty() {
            0.0
        } else {
            self.psi_lambda.amax()
        }
    }
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut t = 0.0;
    for i in 0..n {
        for k in 0..n {
            t += a[(i, k)] * b[(k, i)];
        }
    }
    t
}

pub(crate) fn evaluate(
    model: &McglmModel,
    clusters: &Clusters,
    theta: &DVector<f64>,
    y: &[DVector<f64>],
    level: Level,
) -> Result<Evaluation> {
    let point = Point::new(model, theta, y)?;
    let layout = model.layout();
    let k = layout.n_beta();
    let q = layout.n_lambda();
    let kinds: Vec<ParamKind> = layout.params()[k..].iter().map(|p| p.kind).collect();
    let n = model.n_obs();
    let n_resp = model.n_responses();

    let mut ev = Evaluation {
        psi_beta: DVector::zeros(k),
        v_beta: DMatrix::zeros(k, k),
        psi_lambda: DVector::zeros(q),
        s_lambda: DMatrix::zeros(q, q),
        v_lambda: DMatrix::zeros(q, q),
        s_lambda_beta: DMatrix::zeros(q, k),
        v_lambda_beta: DMatrix::zeros(q, k),
        c_diag: vec![DVector::zeros(n); n_resp],
        residuals: Vec::new(),
        mu: Vec::new(),
    };

    for c in 0..clusters.members.len() {
        let block = Block::new(model, &point, clusters, c)?;
        let chol = block.factor()?;
        let m = block.m();
        let r = block.residual();
        let d = block.d_matrix();
        let u = chol.solve(&r);
        let cid = chol.solve(&d);
        ev.psi_beta += d.tr_mul(&u);
        ev.v_beta += d.tr_mul(&cid);

        let dcs: Vec<DMatrix<f64>> = kinds.iter().map(|&kd| block.d_lambda(kd)).collect();
        let a: Vec<DMatrix<f64>> = dcs.iter().map(|dc| chol.solve(dc)).collect();
        for i in 0..q {
            ev.psi_lambda[i] += u.dot(&(&dcs[i] * &u)) - a[i].trace();
            for j in 0..=i {
                let t = trace_product(&a[i], &a[j]);
                ev.s_lambda[(i, j)] -= t;
                if level == Level::Full {
                    ev.v_lambda[(i, j)] += 2.0 * t;
                }
            }
        }

        for (rr, diag) in ev.c_diag.iter_mut().enumerate() {
            for (a_, &i) in block.idx.iter().enumerate() {
                diag[i] = block.c[(rr * m + a_, rr * m + a_)];
            }
        }

        if level == Level::Full {
            let cinv = chol.inverse();
            let dim = m * n_resp;
            // diagonals of W_i = C⁻¹ ∂C_i C⁻¹
            let w: Vec<DVector<f64>> = a
                .iter()
                .map(|ai| DVector::from_fn(dim, |l, _| (0..dim).map(|b| ai[(l, b)] * cinv[(b, l)]).sum()))
                .collect();
            let k4 = DVector::from_fn(dim, |l, _| r[l].powi(4) - 3.0 * block.c[(l, l)].powi(2));
            for i in 0..q {
                for j in 0..=i {
                    ev.v_lambda[(i, j)] += (0..dim).map(|l| k4[l] * w[i][l] * w[j][l]).sum::<f64>();
                }
                for g in 0..k {
                    ev.v_lambda_beta[(i, g)] += (0..dim).map(|l| r[l].powi(3) * w[i][l] * cid[(l, g)]).sum::<f64>();
                }
            }
            for (rr, _) in model.responses().iter().enumerate() {
                for (j, g) in layout.beta_range(rr).enumerate() {
                    if let Some(dcb) = block.d_beta(rr, j) {
                        let b = chol.solve(&dcb);
                        for i in 0..q {
                            ev.s_lambda_beta[(i, g)] -= trace_product(&a[i], &b);
                        }
                    }
                }
            }
        }
    }

    for i in 0..q {
        for j in 0..i {
            ev.s_lambda[(j, i)] = ev.s_lambda[(i, j)];
            ev.v_lambda[(j, i)] = ev.v_lambda[(i, j)];
        }
    }
    ev.residuals = point.resid;
    ev.mu = point.mu;
    Ok(ev)
}

/// C and its derivatives with respect to every λ and β component, evaluated
/// densely over all observations.
pub(crate) fn dense_derivatives(
    model: &McglmModel,
    theta: &DVector<f64>,
    y: &[DVector<f64>],
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let point = Point::new(model, theta, y)?;
    let clusters = Clusters::single(model);
    let block = Block::new(model, &point, &clusters, 0)?;
    let layout = model.layout();
    let dim = block.c.nrows();
    let d_lambda = layout.params()[layout.n_beta()..].iter().map(|p| block.d_lambda(p.kind)).collect();
    let mut d_beta = Vec::with_capacity(layout.n_beta());
    for r in 0..model.n_responses() {
        for j in 0..layout.beta_range(r).len() {
            d_beta.push(block.d_beta(r, j).unwrap_or_else(|| DMatrix::zeros(dim, dim)));
        }
    }
    Ok((block.c.clone(), block.residual(), d_lambda, d_beta))
}
