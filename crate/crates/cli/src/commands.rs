use std::path::{Path, PathBuf};

use mcglm::anova::{anova_table, dispersion_anova, manova_table, AnovaType, TestTable};
use mcglm::estimation::{fit, McglmFit};
use mcglm::model::ParamKind;
use mcglm::multcomp::{build_k0, build_k1, pairwise_tests, BonferroniCount, ComparisonScope, ContrastSelection};
use mcglm::simulate::run_power_study;
use mcglm::wald::{chi2_sf, kronecker_hypothesis, wald_test, Hypothesis, ParamBlock};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{read_json, BlockName, HypothesisConfig, ModelConfig, StudyFile};
use crate::data::{build_inputs, ingest_csv, ModelInputs};
use crate::error::{CliError, CliResult};
use crate::output::{write_tables, Cell, Table};

pub struct Fitted {
    pub fit: McglmFit,
    pub inputs: ModelInputs,
}

pub fn load_and_fit(config: &Path, data: &Path) -> CliResult<Fitted> {
    let config: ModelConfig = read_json(config)?;
    config.validate()?;
    let dataset = ingest_csv(data, &config)?;
    let inputs = build_inputs(&config, &dataset)?;
    log::info!("fitting {} responses on {} rows", inputs.model.n_responses(), inputs.model.n_obs());
    let fit = fit(&inputs.model, &inputs.y, &config.options)?;
    Ok(Fitted { fit, inputs })
}

fn require_converged(f: &McglmFit) -> CliResult<()> {
    if f.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged { iterations: f.iterations })
    }
}

fn emit(tables: &[Table], output: Option<&Path>) -> CliResult<()> {
    for t in tables {
        println!("{}", t.render());
    }
    if let Some(path) = output {
        write_tables(path, tables)?;
    }
    Ok(())
}

pub fn estimates_table(f: &McglmFit, level: f64) -> CliResult<Table> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::Config(format!("confidence level {level} outside (0, 1)")));
    }
    let q = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let pct = format!("{}", level * 100.0);
    let lower = format!("lower_{pct}");
    let upper = format!("upper_{pct}");
    let mut t = Table::new(
        format!("Estimates ({} iterations, {})", f.iterations, if f.converged { "converged" } else { "NOT converged" }),
        &["parameter", "estimate", "std_error", &lower, &upper, "z", "p_value"],
    );
    let se = f.std_errors();
    for (i, info) in f.layout().params().iter().enumerate() {
        let (est, s) = (f.theta[i], se[i]);
        let test = if matches!(info.kind, ParamKind::Rho { .. }) {
            [Cell::Empty, Cell::Empty]
        } else {
            let z = est / s;
            [Cell::Num(z), Cell::P(chi2_sf(z * z, 1)?)]
        };
        let [z, p] = test;
        t.push(vec![
            Cell::Text(info.name.clone()),
            Cell::Num(est),
            Cell::Num(s),
            Cell::Num(est - q * s),
            Cell::Num(est + q * s),
            z,
            p,
        ]);
    }
    Ok(t)
}

pub fn residuals_table(f: &McglmFit) -> Table {
    let names: Vec<String> = f.model.responses().iter().map(|r| r.name.clone()).collect();
    let mut cols = vec!["row".to_string()];
    for n in &names {
        cols.push(format!("{n}_fitted"));
        cols.push(format!("{n}_pearson"));
    }
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new("Pearson residuals", &col_refs);
    for i in 0..f.model.n_obs() {
        let mut row = vec![Cell::Int(i + 1)];
        for r in 0..names.len() {
            row.push(Cell::Num(f.fitted[r][i]));
            row.push(Cell::Num(f.pearson_residuals[r][i]));
        }
        t.push(row);
    }
    t
}

pub fn cmd_fit(config: &Path, data: &Path, output: Option<&Path>, residuals: Option<&Path>, level: f64) -> CliResult<()> {
    let Fitted { fit, .. } = load_and_fit(config, data)?;
    emit(&[estimates_table(&fit, level)?], output)?;
    if let Some(path) = residuals {
        write_tables(path, &[residuals_table(&fit)])?;
    }
    require_converged(&fit)
}

fn matrix(rows: &[Vec<f64>], name: &str) -> CliResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn hypothesis_from_config(f: &McglmFit, h: &HypothesisConfig) -> CliResult<Hypothesis> {
    let layout = f.layout();
    match h {
        HypothesisConfig::Explicit { parameters, l, c } => {
            let scope = parameters
                .iter()
                .map(|p| layout.index_of(p).ok_or_else(|| CliError::Config(format!("unknown parameter '{p}'"))))
                .collect::<CliResult<Vec<_>>>()?;
            let l = matrix(l, "L")?;
            let c = DVector::from_vec(c.clone().unwrap_or_else(|| vec![0.0; l.nrows()]));
            Ok(Hypothesis::new(scope, l, c)?)
        }
        HypothesisConfig::Kronecker { block, g, f: fm, c } => {
            let block = match block {
                BlockName::Beta => ParamBlock::Beta,
                BlockName::Tau => ParamBlock::Tau,
            };
            let c = c.clone().map(DVector::from_vec);
            Ok(kronecker_hypothesis(&f.model, block, &matrix(g, "G")?, &matrix(fm, "F")?, c)?)
        }
    }
}

pub fn cmd_wald(config: &Path, data: &Path, hypothesis: &Path, output: Option<&Path>) -> CliResult<()> {
    let Fitted { fit, .. } = load_and_fit(config, data)?;
    require_converged(&fit)?;
    let spec: HypothesisConfig = read_json(hypothesis)?;
    let res = wald_test(&fit, &hypothesis_from_config(&fit, &spec)?)?;
    let mut t = Table::new("Wald test", &["statistic", "df", "p_value"]);
    t.push(vec![Cell::Num(res.statistic), Cell::Int(res.df), Cell::P(res.p_value)]);
    emit(&[t], output)
}

fn test_table(title: String, first: &str, table: &TestTable) -> Table {
    let adjusted = table.rows.iter().any(|r| r.adjusted_p.is_some());
    let cols: Vec<&str> = if adjusted {
        vec![first, "df", "chi_square", "p_value", "p_adjusted"]
    } else {
        vec![first, "df", "chi_square", "p_value"]
    };
    let mut t = Table::new(title, &cols);
    for r in &table.rows {
        let mut row = vec![Cell::Text(r.label.clone()), Cell::Int(r.df), Cell::Num(r.statistic), Cell::P(r.p_value)];
        if adjusted {
            row.push(r.adjusted_p.map_or(Cell::Empty, Cell::P));
        }
        t.push(row);
    }
    t
}

fn response_index(f: &McglmFit, name: &str) -> CliResult<usize> {
    f.model
        .responses()
        .iter()
        .position(|r| r.name == name)
        .ok_or_else(|| CliError::Config(format!("unknown response '{name}'")))
}

pub fn cmd_anova(
    config: &Path,
    data: &Path,
    kind: AnovaType,
    response: Option<&str>,
    dispersion: bool,
    output: Option<&Path>,
) -> CliResult<()> {
    let Fitted { fit, .. } = load_and_fit(config, data)?;
    require_converged(&fit)?;
    let targets: Vec<usize> = match response {
        Some(name) => vec![response_index(&fit, name)?],
        None => (0..fit.model.n_responses()).collect(),
    };
    let mut tables = Vec::new();
    for r in targets {
        let name = &fit.model.responses()[r].name;
        if dispersion {
            let t = dispersion_anova(&fit, Some(r))?;
            tables.push(test_table(format!("Dispersion parameters: {name}"), "parameter", &t));
        } else {
            let t = anova_table(&fit, r, kind)?;
            tables.push(test_table(format!("Type {kind} analysis of variance: {name}"), "term", &t));
        }
    }
    emit(&tables, output)
}

pub fn cmd_manova(config: &Path, data: &Path, kind: AnovaType, dispersion: bool, output: Option<&Path>) -> CliResult<()> {
    let Fitted { fit, .. } = load_and_fit(config, data)?;
    require_converged(&fit)?;
    let table = if dispersion {
        test_table("Dispersion parameters: all responses".into(), "parameter", &dispersion_anova(&fit, None)?)
    } else {
        test_table(format!("Type {kind} multivariate analysis of variance"), "term", &manova_table(&fit, kind)?)
    };
    emit(&[table], output)
}

pub struct MultcompArgs<'a> {
    pub factors: &'a [String],
    pub within: Option<&'a str>,
    pub contrasts: &'a [String],
    pub response: Option<&'a str>,
    pub count: BonferroniCount,
}

pub fn cmd_multcomp(config: &Path, data: &Path, args: &MultcompArgs<'_>, output: Option<&Path>) -> CliResult<()> {
    let Fitted { fit, inputs } = load_and_fit(config, data)?;
    require_converged(&fit)?;
    let factors: Vec<&str> = args.factors.iter().map(String::as_str).collect();
    let k1 = build_k1(&build_k0(&inputs.design, &factors)?)?;
    let selection = match (args.within, args.contrasts.is_empty()) {
        (Some(_), false) => return Err(CliError::Config("give either --within or --contrasts, not both".into())),
        (Some(f), true) => ContrastSelection::WithinFactor(f.to_string()),
        (None, false) => ContrastSelection::Labels(args.contrasts.to_vec()),
        (None, true) => ContrastSelection::All,
    };
    let (scope, who) = match args.response {
        Some(name) => (ComparisonScope::Response(response_index(&fit, name)?), name.to_string()),
        None => (ComparisonScope::Joint, "all responses".to_string()),
    };
    let table = pairwise_tests(&fit, &k1, &selection, scope, args.count)?;
    emit(&[test_table(format!("Pairwise comparisons of {}: {who}", factors.join(":")), "contrast", &table)], output)
}

pub fn cmd_simulate(study: &Path, seed: u64, output: &PathBuf) -> CliResult<()> {
    let file: StudyFile = read_json(study)?;
    let config = file.into_config(seed);
    log::info!("running {} replicates per sample size with seed {seed}", config.replicates);
    let curve = run_power_study(&config)?;
    let mut t = Table::new(
        format!("Rejection rates ({} {}, alpha {})", config.scenario, config.distribution, config.alpha),
        &["scenario", "distribution", "n", "hypothesis_index", "distance", "rejection_rate", "mc_se", "failures"],
    );
    for r in &curve.rows {
        t.push(vec![
            Cell::Text(r.scenario.to_string()),
            Cell::Text(r.distribution.to_string()),
            Cell::Int(r.n),
            Cell::Int(r.hypothesis_index),
            Cell::Num(r.distance),
            Cell::Num(r.rejection_rate),
            Cell::Num(r.mc_se),
            Cell::Int(r.failures),
        ]);
    }
    emit(&[t], Some(output))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asset(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
    }

    #[test]
    fn machine_tables_round_trip() {
        let f = load_and_fit(&asset("model.json"), &asset("scores.csv")).unwrap();
        assert_eq!(f.inputs.model.n_obs(), 184);
        let table = estimates_table(&f.fit, 0.95).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let mut reader = csv::Reader::from_reader(buf.as_slice());
        let se = f.fit.std_errors();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.unwrap();
            assert_eq!(&rec[0], f.fit.layout().params()[i].name);
            assert!((rec[1].parse::<f64>().unwrap() - f.fit.theta[i]).abs() <= 1e-12);
            assert!((rec[2].parse::<f64>().unwrap() - se[i]).abs() <= 1e-12);
        }
        let manova = manova_table(&f.fit, AnovaType::II).unwrap();
        let json = test_table("m".into(), "term", &manova).to_json();
        for (k, row) in manova.rows.iter().enumerate() {
            assert_eq!(json["rows"][k]["chi_square"].as_f64().unwrap(), row.statistic);
            assert_eq!(json["rows"][k]["df"].as_u64().unwrap() as usize, row.df);
        }
    }

    #[test]
    fn intervals_use_the_normal_quantile() {
        let f = load_and_fit(&asset("model.json"), &asset("scores.csv")).unwrap();
        let t = estimates_table(&f.fit, 0.95).unwrap();
        let (Cell::Num(est), Cell::Num(se), Cell::Num(lo)) = (&t.rows[0][1], &t.rows[0][2], &t.rows[0][3]) else {
            panic!("unexpected cells");
        };
        assert!((lo - (est - 1.959_963_984_540_054 * se)).abs() < 1e-12);
        assert!(estimates_table(&f.fit, 1.5).is_err());
    }

    #[test]
    fn explicit_hypothesis_by_parameter_name() {
        let f = load_and_fit(&asset("model.json"), &asset("scores.csv")).unwrap();
        let h = HypothesisConfig::Explicit {
            parameters: vec!["YFAS:groupprobiotic".into(), "BES:groupprobiotic".into()],
            l: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            c: None,
        };
        let explicit = wald_test(&f.fit, &hypothesis_from_config(&f.fit, &h).unwrap()).unwrap();
        let kron: HypothesisConfig = read_json(&asset("group_effect.json")).unwrap();
        let k = wald_test(&f.fit, &hypothesis_from_config(&f.fit, &kron).unwrap()).unwrap();
        assert!((explicit.statistic - k.statistic).abs() < 1e-10 * k.statistic);
        let bad = HypothesisConfig::Explicit { parameters: vec!["nope".into()], l: vec![vec![1.0]], c: None };
        assert!(matches!(hypothesis_from_config(&f.fit, &bad), Err(CliError::Config(_))));
    }
}
