//! CSV ingestion and model assembly.

use std::path::Path;

use mcglm::design::{build_design, DesignInfo, Formula, Frame, Variable};
use mcglm::model::{McglmModel, MatrixPredictor, ResponseSpec, ZMatrix};
use nalgebra::DVector;

use crate::config::ModelConfig;
use crate::error::{io_error, CliError, CliResult};

/// Rows that survived missing-value removal, kept as text.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Source line of each retained row.
    pub lines: Vec<u64>,
    pub dropped: usize,
}

pub fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA"
}

impl Dataset {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("column '{name}' is not in the data")))
    }

    pub fn column(&self, name: &str) -> CliResult<Vec<&str>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j].trim()).collect())
    }

    pub fn numeric_column(&self, name: &str) -> CliResult<Vec<f64>> {
        let j = self.column_index(name)?;
        self.rows
            .iter()
            .zip(&self.lines)
            .map(|(r, line)| {
                r[j].trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::Data(format!("line {line}: column '{name}' value '{}' is not a finite number", r[j])))
            })
            .collect()
    }
}

/// Columns the model reads: responses, formula variables and the grouping column.
pub fn modeled_columns(config: &ModelConfig) -> CliResult<Vec<String>> {
    let mut cols: Vec<String> = config.responses.iter().map(|r| r.name.clone()).collect();
    let formula = Formula::parse(config.intercept, &config.terms)?;
    cols.extend(formula.variables());
    cols.extend(config.group_column.clone());
    let mut seen = std::collections::HashSet::new();
    cols.retain(|c| seen.insert(c.clone()));
    Ok(cols)
}

/// Reads a headed CSV file and drops rows with a missing modeled value.
pub fn ingest_csv(path: &Path, config: &ModelConfig) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(io_error(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse_error = |e: csv::Error| {
        let line = e.position().map(|p| p.line()).unwrap_or(1);
        CliError::Data(format!("{} line {line}: {e}", path.display()))
    };
    let headers: Vec<String> = reader.headers().map_err(parse_error)?.iter().map(|h| h.trim().to_string()).collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(CliError::Data(format!("{}: empty file or missing header row", path.display())));
    }
    let mut data = Dataset { headers, rows: Vec::new(), lines: Vec::new(), dropped: 0 };
    let needed: Vec<usize> =
        modeled_columns(config)?.iter().map(|c| data.column_index(c)).collect::<CliResult<_>>()?;
    for record in reader.records() {
        let record = record.map_err(parse_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: Vec<String> = record.iter().map(str::to_string).collect();
        if needed.iter().any(|&j| is_missing(&row[j])) {
            data.dropped += 1;
            continue;
        }
        data.rows.push(row);
        data.lines.push(line);
    }
    if data.dropped > 0 {
        log::info!("dropped {} of {} rows with missing values", data.dropped, data.dropped + data.nrows());
    }
    if data.rows.is_empty() {
        return Err(CliError::Data(format!("{}: no complete rows", path.display())));
    }
    Ok(data)
}

/// Z₁ with (Z₁)_ij = 1 iff rows i and j share a value of `column`.
pub fn build_group_block_z(data: &Dataset, column: &str) -> CliResult<ZMatrix> {
    Ok(ZMatrix::group_blocks(&data.column(column)?))
}

pub struct ModelInputs {
    pub model: McglmModel,
    pub y: Vec<DVector<f64>>,
    pub design: DesignInfo,
}

fn variable(data: &Dataset, config: &ModelConfig, name: &str) -> CliResult<Variable> {
    let values = data.column(name)?;
    if let Some(levels) = config.levels.get(name) {
        return Ok(Variable::factor_with_levels(&values, levels.clone())?);
    }
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite())).collect();
    match numeric {
        Some(v) if !config.factors.iter().any(|f| f == name) => Ok(Variable::Numeric(v)),
        _ => Ok(Variable::factor(&values)),
    }
}

pub fn build_inputs(config: &ModelConfig, data: &Dataset) -> CliResult<ModelInputs> {
    config.validate()?;
    let formula = Formula::parse(config.intercept, &config.terms)?;
    let mut frame = Frame::new();
    for name in formula.variables() {
        frame.push(name.clone(), variable(data, config, &name)?)?;
    }
    let (x, design) = build_design(&frame, &formula)?;
    let n = data.nrows();
    let mut components = vec![ZMatrix::Identity(n)];
    if let Some(g) = &config.group_column {
        components.push(build_group_block_z(data, g)?);
    }
    let mp = MatrixPredictor::new(components)?;
    let specs = config
        .responses
        .iter()
        .map(|r| ResponseSpec::new(&r.name, r.link.into(), r.variance.into(), x.clone(), r.power.into()).with_design(design.clone()))
        .collect();
    let model = McglmModel::with_shared_predictor(specs, mp, config.correlation)?;
    let y = config
        .responses
        .iter()
        .map(|r| data.numeric_column(&r.name).map(DVector::from_vec))
        .collect::<CliResult<_>>()?;
    Ok(ModelInputs { model, y, design })
}
