//! Matrix linear predictor h{Ω(τ)} = τ₀Z₀ + … + τ_D Z_D.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{McglmError, Result};

/// A known symmetric N×N matrix of the matrix linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub enum ZMatrix {
    Identity(usize),
    /// Symmetric triplets; both (i, j) and (j, i) are stored.
    Sparse {
        n: usize,
        entries: Vec<(usize, usize, f64)>,
    },
    Dense(DMatrix<f64>),
}

impl ZMatrix {
    /// Builds a sparse matrix from triplets, summing duplicates.
    pub fn sparse(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(McglmError::Shape(format!("entry ({i}, {j}) outside {n}x{n}")));
            }
            *map.entry((i, j)).or_insert(0.0) += v;
        }
        for (&(i, j), &v) in &map {
            let t = map.get(&(j, i)).copied().unwrap_or(0.0);
            if t != v {
                return Err(McglmError::Shape(format!(
                    "Z matrix is not symmetric at ({i}, {j}): {v} vs {t}"
                )));
            }
        }
        let entries = map.into_iter().filter(|&(_, v)| v != 0.0).map(|((i, j), v)| (i, j, v)).collect();
        Ok(ZMatrix::Sparse { n, entries })
    }

    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(McglmError::Shape("Z matrix must be square".into()));
        }
        let z = ZMatrix::Dense(m);
        if !z.is_symmetric() {
            return Err(McglmError::Shape("Z matrix is not symmetric".into()));
        }
        Ok(z)
    }

    /// Same-group indicator: entry (i, j) is 1 iff rows i and j share a group.
    pub fn group_blocks<T: Eq + Hash>(groups: &[T]) -> Self {
        let mut members: HashMap<&T, Vec<usize>> = HashMap::new();
        let mut order = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            let e = members.entry(g).or_default();
            if e.is_empty() {
                order.push(g);
            }
            e.push(i);
        }
        let mut entries = Vec::new();
        for g in order {
            let rows = &members[g];
            for &i in rows {
                for &j in rows {
                    entries.push((i, j, 1.0));
                }
            }
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));
        ZMatrix::Sparse { n: groups.len(), entries }
    }

    pub fn dim(&self) -> usize {
        match self {
            ZMatrix::Identity(n) => *n,
            ZMatrix::Sparse { n, .. } => *n,
            ZMatrix::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            ZMatrix::Identity(n) => DMatrix::identity(*n, *n),
            ZMatrix::Sparse { n, entries } => {
                let mut m = DMatrix::zeros(*n, *n);
                for &(i, j, v) in entries {
                    m[(i, j)] += v;
                }
                m
            }
            ZMatrix::Dense(m) => m.clone(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self {
            ZMatrix::Identity(_) => true,
            ZMatrix::Sparse { .. } => {
                let d = self.to_dense();
                d == d.transpose()
            }
            ZMatrix::Dense(m) => m == &m.transpose(),
        }
    }

    /// Calls `f(i, j)` for every structurally nonzero off-diagonal entry.
    pub(crate) fn for_each_offdiag(&self, mut f: impl FnMut(usize, usize)) {
        match self {
            ZMatrix::Identity(_) => {}
            ZMatrix::Sparse { entries, .. } => {
                for &(i, j, _) in entries {
                    if i != j {
                        f(i, j);
                    }
                }
            }
            ZMatrix::Dense(m) => {
                for j in 0..m.ncols() {
                    for i in 0..m.nrows() {
                        if i != j && m[(i, j)] != 0.0 {
                            f(i, j);
                        }
                    }
                }
            }
        }
    }

    /// Restricts the matrix to each cluster of observations. `cluster_of[i]`
    /// and `local_of[i]` give the cluster and position of row i; entries
    /// linking different clusters must not exist.
    pub(crate) fn split(
        &self,
        clusters: &[Vec<usize>],
        cluster_of: &[usize],
        local_of: &[usize],
    ) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> =
            clusters.iter().map(|c| DMatrix::zeros(c.len(), c.len())).collect();
        match self {
            ZMatrix::Identity(_) => {
                for m in out.iter_mut() {
                    m.fill_with_identity();
                }
            }
            ZMatrix::Sparse { entries, .. } => {
                for &(i, j, v) in entries {
                    let c = cluster_of[i];
                    debug_assert_eq!(c, cluster_of[j]);
                    out[c][(local_of[i], local_of[j])] += v;
                }
            }
            ZMatrix::Dense(m) => {
                for (c, rows) in clusters.iter().enumerate() {
                    for (a, &i) in rows.iter().enumerate() {
                        for (b, &j) in rows.iter().enumerate() {
                            out[c][(a, b)] = m[(i, j)];
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceLink {
    #[default]
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPredictor {
    components: Vec<ZMatrix>,
    link: CovarianceLink,
}

impl MatrixPredictor {
    pub fn new(components: Vec<ZMatrix>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| McglmError::Shape("matrix predictor needs at least Z0".into()))?;
        let n = first.dim();
        for (d, z) in components.iter().enumerate() {
            if z.dim() != n {
                return Err(McglmError::Shape(format!("Z{d} is {}x{0}, expected {n}x{n}", z.dim())));
            }
            if !z.is_symmetric() {
                return Err(McglmError::Shape(format!("Z{d} is not symmetric")));
            }
        }
        Ok(MatrixPredictor { components, link: CovarianceLink::Identity })
    }

    /// Z₀ = I only: independent observations.
    pub fn independent(n: usize) -> Self {
        MatrixPredictor { components: vec![ZMatrix::Identity(n)], link: CovarianceLink::Identity }
    }

    pub fn components(&self) -> &[ZMatrix] {
        &self.components
    }

    pub fn link(&self) -> CovarianceLink {
        self.link
    }

    /// D + 1.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }
}

/// Ω(τ) = Σ_d τ_d Z_d under the identity covariance link.
pub fn build_omega(mp: &MatrixPredictor, tau: &DVector<f64>) -> Result<DMatrix<f64>> {
    if tau.len() != mp.len() {
        return Err(McglmError::Shape(format!(
            "tau has {} entries but the predictor has {} matrices",
            tau.len(),
            mp.len()
        )));
    }
    let n = mp.dim();
    let mut omega = DMatrix::zeros(n, n);
    for (z, &t) in mp.components.iter().zip(tau.iter()) {
        match z {
            ZMatrix::Identity(_) => {
                for i in 0..n {
                    omega[(i, i)] += t;
                }
            }
            ZMatrix::Sparse { entries, .. } => {
                for &(i, j, v) in entries {
                    omega[(i, j)] += t * v;
                }
            }
            ZMatrix::Dense(m) => omega += m * t,
        }
    }
    Ok(omega)
}
