//! Data frames, model formulas and design matrices with treatment contrasts.
//!
//! A formula is an ordered list of terms. Each term is a set of variables; a
//! factor variable contributes one dummy column per non-reference level (the
//! first level is the reference) and a numeric variable contributes itself.
//! Interaction columns are products, with the first variable varying fastest.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{McglmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Variable {
    Numeric(Vec<f64>),
    Factor { levels: Vec<String>, codes: Vec<usize> },
}

impl Variable {
    pub fn len(&self) -> usize {
        match self {
            Variable::Numeric(v) => v.len(),
            Variable::Factor { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A factor with the given level order; unknown values are an error.
    pub fn factor_with_levels(values: &[impl AsRef<str>], levels: Vec<String>) -> Result<Self> {
        let lookup: HashMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let codes = values
            .iter()
            .map(|v| {
                lookup.get(v.as_ref()).copied().ok_or_else(|| {
                    McglmError::Term(format!("value '{}' is not a declared level", v.as_ref()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Variable::Factor { levels, codes })
    }

    /// A factor whose levels are the sorted distinct values.
    pub fn factor(values: &[impl AsRef<str>]) -> Self {
        let mut levels: Vec<String> = values.iter().map(|v| v.as_ref().to_string()).collect();
        levels.sort();
        levels.dedup();
        Self::factor_with_levels(values, levels).expect("levels cover all values")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    names: Vec<String>,
    vars: Vec<Variable>,
}

impl Frame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, var: Variable) -> Result<()> {
        let name = name.into();
        if let Some(first) = self.vars.first() {
            if first.len() != var.len() {
                return Err(McglmError::Shape(format!(
                    "column '{name}' has {} rows, expected {}",
                    var.len(),
                    first.len()
                )));
            }
        }
        if self.names.contains(&name) {
            return Err(McglmError::Shape(format!("duplicate column '{name}'")));
        }
        self.names.push(name);
        self.vars.push(var);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Variable> {
        self.names.iter().position(|n| n == name).map(|i| &self.vars[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nrows(&self) -> usize {
        self.vars.first().map(|v| v.len()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formula {
    pub intercept: bool,
    /// Terms in declaration order; each term is a list of variable names.
    pub terms: Vec<Vec<String>>,
}

impl Formula {
    /// Parses term strings. `a*b` adds `a`, `b` (if not already present) and
    /// their interaction; `a:b` adds only the interaction.
    pub fn parse(intercept: bool, entries: &[impl AsRef<str>]) -> Result<Self> {
        let mut terms: Vec<Vec<String>> = Vec::new();
        let add = |t: Vec<String>, terms: &mut Vec<Vec<String>>| {
            let mut key = t.clone();
            key.sort();
            if !terms.iter().any(|u| {
                let mut k = u.clone();
                k.sort();
                k == key
            }) {
                terms.push(t);
            }
        };
        for entry in entries {
            let e = entry.as_ref().trim();
            if e.is_empty() {
                return Err(McglmError::Term("empty term".into()));
            }
            if e.contains('*') {
                let vars: Vec<String> = e.split('*').map(|s| s.trim().to_string()).collect();
                if vars.len() != 2 || vars.iter().any(|v| v.is_empty()) {
                    return Err(McglmError::Term(format!(
                        "'{e}': only pairwise interactions are supported"
                    )));
                }
                add(vec![vars[0].clone()], &mut terms);
                add(vec![vars[1].clone()], &mut terms);
                add(vars, &mut terms);
            } else if e.contains(':') {
                let vars: Vec<String> = e.split(':').map(|s| s.trim().to_string()).collect();
                if vars.iter().any(|v| v.is_empty()) {
                    return Err(McglmError::Term(format!("malformed term '{e}'")));
                }
                add(vars, &mut terms);
            } else {
                add(vec![e.to_string()], &mut terms);
            }
        }
        Ok(Formula { intercept, terms })
    }

    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.terms {
            for v in t {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermInfo {
    pub label: String,
    /// Variables of the term; empty for the intercept.
    pub factors: Vec<String>,
    /// Columns of X_r owned by the term.
    pub columns: Vec<usize>,
}

impl TermInfo {
    pub fn is_intercept(&self) -> bool {
        self.factors.is_empty()
    }
}

/// Terms of one response's linear predictor and the β indices each owns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermMap {
    pub terms: Vec<TermInfo>,
}

impl TermMap {
    /// One term per column, with no containment.
    pub fn per_column(names: &[String]) -> Self {
        TermMap {
            terms: names
                .iter()
                .enumerate()
                .map(|(j, n)| TermInfo {
                    label: n.clone(),
                    factors: if n == "(Intercept)" { vec![] } else { vec![n.clone()] },
                    columns: vec![j],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn find(&self, label: &str) -> Result<usize> {
        self.terms
            .iter()
            .position(|t| t.label == label)
            .ok_or_else(|| McglmError::Term(format!("unknown term '{label}'")))
    }

    /// True when term `outer` strictly contains term `inner`. The intercept
    /// is never contained in anything.
    pub fn contains(&self, outer: usize, inner: usize) -> bool {
        let (o, i) = (&self.terms[outer], &self.terms[inner]);
        if i.is_intercept() || outer == inner || o.factors.len() <= i.factors.len() {
            return false;
        }
        i.factors.iter().all(|f| o.factors.contains(f))
    }

    pub fn has_containment(&self) -> bool {
        (0..self.len()).any(|a| (0..self.len()).any(|b| self.contains(a, b)))
    }

    /// Structural equality used to decide whether responses share a predictor.
    pub fn same_structure(&self, other: &TermMap) -> bool {
        self.terms.len() == other.terms.len()
            && self
                .terms
                .iter()
                .zip(&other.terms)
                .all(|(a, b)| a.label == b.label && a.columns == b.columns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VariableMeta {
    Numeric { mean: f64 },
    Factor { levels: Vec<String> },
}

/// A single variable value used when encoding an arbitrary design row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarValue {
    Numeric(f64),
    Level(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignInfo {
    pub column_names: Vec<String>,
    pub term_map: TermMap,
    pub formula: Formula,
    pub variables: Vec<(String, VariableMeta)>,
}

impl DesignInfo {
    pub fn variable(&self, name: &str) -> Option<&VariableMeta> {
        self.variables.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Factor variables of the formula, in first-appearance order.
    pub fn factor_names(&self) -> Vec<String> {
        self.variables
            .iter()
            .filter(|(_, m)| matches!(m, VariableMeta::Factor { .. }))
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Encodes one design row from per-variable values.
    pub fn encode(&self, values: &HashMap<String, VarValue>) -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(self.column_names.len());
        if self.formula.intercept {
            row.push(1.0);
        }
        for term in &self.formula.terms {
            let mut cols = vec![1.0];
            for var in term {
                let meta = self
                    .variable(var)
                    .ok_or_else(|| McglmError::Term(format!("unknown variable '{var}'")))?;
                let value = values
                    .get(var)
                    .ok_or_else(|| McglmError::Term(format!("no value given for '{var}'")))?;
                let contrib = variable_columns(meta, *value)?;
                cols = cartesian(&cols, &contrib);
            }
            row.extend(cols);
        }
        Ok(row)
    }
}

fn variable_columns(meta: &VariableMeta, value: VarValue) -> Result<Vec<f64>> {
    match (meta, value) {
        (VariableMeta::Numeric { .. }, VarValue::Numeric(x)) => Ok(vec![x]),
        (VariableMeta::Factor { levels }, VarValue::Level(l)) => {
            if l >= levels.len() {
                return Err(McglmError::Index(format!("level {l} of {}", levels.len())));
            }
            Ok((1..levels.len()).map(|k| if k == l { 1.0 } else { 0.0 }).collect())
        }
        _ => Err(McglmError::Term("variable value does not match its type".into())),
    }
}

/// Products with the existing columns varying fastest.
fn cartesian(prev: &[f64], next: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(prev.len() * next.len());
    for b in next {
        for a in prev {
            out.push(a * b);
        }
    }
    out
}

fn cartesian_names(prev: &[String], next: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for b in next {
        for a in prev {
            out.push(if a.is_empty() { b.clone() } else { format!("{a}:{b}") });
        }
    }
    out
}

/// Builds X and its term structure from a frame.
pub fn build_design(frame: &Frame, formula: &Formula) -> Result<(DMatrix<f64>, DesignInfo)> {
    let n = frame.nrows();
    let mut variables = Vec::new();
    for name in formula.variables() {
        let var = frame
            .get(&name)
            .ok_or_else(|| McglmError::Term(format!("variable '{name}' is not in the data")))?;
        let meta = match var {
            Variable::Numeric(v) => VariableMeta::Numeric { mean: v.iter().sum::<f64>() / v.len().max(1) as f64 },
            Variable::Factor { levels, .. } => {
                if levels.len() < 2 {
                    return Err(McglmError::Term(format!("factor '{name}' has fewer than two levels")));
                }
                VariableMeta::Factor { levels: levels.clone() }
            }
        };
        variables.push((name, meta));
    }

    let mut column_names = Vec::new();
    let mut terms = Vec::new();
    if formula.intercept {
        column_names.push("(Intercept)".to_string());
        terms.push(TermInfo { label: "Intercept".into(), factors: vec![], columns: vec![0] });
    }
    for term in &formula.terms {
        let mut names = vec![String::new()];
        for var in term {
            let meta = &variables.iter().find(|(n, _)| n == var).expect("collected above").1;
            let var_names: Vec<String> = match meta {
                VariableMeta::Numeric { .. } => vec![var.clone()],
                VariableMeta::Factor { levels } => levels[1..].iter().map(|l| format!("{var}{l}")).collect(),
            };
            names = cartesian_names(&names, &var_names);
        }
        let start = column_names.len();
        let columns: Vec<usize> = (start..start + names.len()).collect();
        column_names.extend(names);
        terms.push(TermInfo { label: term.join("*"), factors: term.clone(), columns });
    }

    let info = DesignInfo {
        column_names,
        term_map: TermMap { terms },
        formula: formula.clone(),
        variables,
    };

    let k = info.column_names.len();
    if k == 0 {
        return Err(McglmError::Term("formula produces no columns".into()));
    }
    let mut x = DMatrix::zeros(n, k);
    let mut values = HashMap::new();
    for i in 0..n {
        for (name, _) in &info.variables {
            let v = match frame.get(name).expect("checked") {
                Variable::Numeric(v) => VarValue::Numeric(v[i]),
                Variable::Factor { codes, .. } => VarValue::Level(codes[i]),
            };
            values.insert(name.clone(), v);
        }
        let row = info.encode(&values)?;
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok((x, info))
}
