//! File formats: model and scenario JSON, result documents, and CSV exports.
//! Schemas are documented in docs/formats.md; explicit index fields in files
//! are 1-based, matrices are row-major nested arrays.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::calibration::CalibrationOutput;
use crate::design::{DesignResult, Direction, OptimizerSettings, ScenarioSpec};
use crate::dynamics::{Status, Trajectory};
use crate::error::{Error, Result};
use crate::fixedpoint::{AffineSolve, FixedPointBounds};
use crate::model::{AssumptionReport, MultilayerModel};
use crate::rule::{CatalogRule, CustomEntry, MismatchWeights, SourceRule};
use crate::stacked::StackedState;

// ---------------------------------------------------------------------------
// numeric formatting
// ---------------------------------------------------------------------------

/// Rounds to 10 significant digits, the precision carried by JSON artifacts.
pub fn round_sig10(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.9e}").parse().unwrap_or(v)
}

/// Formats with 4 significant digits for human-readable tables.
pub fn format_sig4(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.3e}").parse().unwrap_or(v);
    format!("{rounded}")
}

/// Walks a JSON value rounding every number to 10 significant digits, so that
/// artifacts are byte-stable across runs.
pub fn round_json(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.is_f64() {
                    if let Some(rounded) = serde_json::Number::from_f64(round_sig10(f)) {
                        *value = Value::Number(rounded);
                    }
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Serializes a JSON document with rounded numbers and a trailing newline.
pub fn to_artifact_string(mut value: Value) -> String {
    round_json(&mut value);
    let mut text = serde_json::to_string_pretty(&value).expect("valid JSON document");
    text.push('\n');
    text
}

// ---------------------------------------------------------------------------
// model files
// ---------------------------------------------------------------------------

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Data(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Data(format!(
                "{what}: row {} has {} entries, expected {ncols}",
                i + 1,
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SourceRuleFile {
    Affine {
        omega: Vec<Vec<Vec<f64>>>,
        gamma: Vec<Vec<Vec<f64>>>,
        c: Vec<Vec<Vec<Vec<f64>>>>,
    },
    BoundedConfidence {
        p: Vec<Vec<Vec<f64>>>,
        eps: Vec<f64>,
        c: Vec<Vec<Vec<Vec<f64>>>>,
    },
    CustomBounded {
        evaluators: Vec<CustomEntryFile>,
        phi_lower: Vec<Vec<Vec<f64>>>,
        phi_upper: Vec<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu: Option<Vec<Vec<Vec<f64>>>>,
        c: Vec<Vec<Vec<Vec<f64>>>>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct CustomEntryFile {
    /// 1-based layer.
    layer: usize,
    /// 1-based agent.
    agent: usize,
    /// 1-based source.
    source: usize,
    rule: CatalogRule,
}

/// On-disk model document.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    n: usize,
    m: usize,
    q: usize,
    w: Vec<Vec<Vec<f64>>>,
    alpha: Vec<Vec<f64>>,
    lambda: Vec<Vec<Vec<f64>>>,
    s: Vec<f64>,
    y: Vec<f64>,
    source_rule: SourceRuleFile,
}

fn family_to_file(mats: &[DMatrix<f64>]) -> Vec<Vec<Vec<f64>>> {
    mats.iter().map(matrix_to_rows).collect()
}

fn family_from_file(rows: &[Vec<Vec<f64>>], what: &str) -> Result<Vec<DMatrix<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(l, r)| rows_to_matrix(r, &format!("{what} layer {}", l + 1)))
        .collect()
}

fn rule_to_file(rule: &SourceRule) -> SourceRuleFile {
    match rule {
        SourceRule::Affine { omega, gamma, c } => SourceRuleFile::Affine {
            omega: family_to_file(omega),
            gamma: family_to_file(gamma),
            c: c.to_nested(),
        },
        SourceRule::BoundedConfidence { p, eps, c } => SourceRuleFile::BoundedConfidence {
            p: family_to_file(p),
            eps: eps.iter().copied().collect(),
            c: c.to_nested(),
        },
        SourceRule::CustomBounded {
            entries,
            phi_lower,
            phi_upper,
            mu,
            c,
        } => SourceRuleFile::CustomBounded {
            evaluators: entries
                .iter()
                .map(|e| CustomEntryFile {
                    layer: e.layer + 1,
                    agent: e.agent + 1,
                    source: e.source + 1,
                    rule: e.rule.clone(),
                })
                .collect(),
            phi_lower: family_to_file(phi_lower),
            phi_upper: family_to_file(phi_upper),
            mu: mu.as_ref().map(|m| family_to_file(m)),
            c: c.to_nested(),
        },
    }
}

fn rule_from_file(file: SourceRuleFile, n: usize, m: usize, q: usize) -> Result<SourceRule> {
    Ok(match file {
        SourceRuleFile::Affine { omega, gamma, c } => SourceRule::Affine {
            omega: family_from_file(&omega, "omega")?,
            gamma: family_from_file(&gamma, "gamma")?,
            c: MismatchWeights::new(c, n, m, q)?,
        },
        SourceRuleFile::BoundedConfidence { p, eps, c } => SourceRule::BoundedConfidence {
            p: family_from_file(&p, "p")?,
            eps: DVector::from_vec(eps),
            c: MismatchWeights::new(c, n, m, q)?,
        },
        SourceRuleFile::CustomBounded {
            evaluators,
            phi_lower,
            phi_upper,
            mu,
            c,
        } => {
            let entries = evaluators
                .into_iter()
                .map(|e| {
                    if e.layer == 0 || e.agent == 0 || e.source == 0 {
                        return Err(Error::Data(
                            "custom evaluator indices are 1-based and must be positive".into(),
                        ));
                    }
                    Ok(CustomEntry {
                        layer: e.layer - 1,
                        agent: e.agent - 1,
                        source: e.source - 1,
                        rule: e.rule,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            SourceRule::CustomBounded {
                entries,
                phi_lower: family_from_file(&phi_lower, "phi_lower")?,
                phi_upper: family_from_file(&phi_upper, "phi_upper")?,
                mu: mu.map(|m| family_from_file(&m, "mu")).transpose()?,
                c: MismatchWeights::new(c, n, m, q)?,
            }
        }
    })
}

pub fn model_to_json(model: &MultilayerModel, description: Option<&str>) -> Value {
    let q = model.q();
    let file = ModelFile {
        description: description.map(str::to_string),
        n: model.n(),
        m: model.m(),
        q,
        w: (0..q).map(|l| matrix_to_rows(model.w(l))).collect(),
        alpha: (0..q).map(|l| model.alpha(l).iter().copied().collect()).collect(),
        lambda: (0..q)
            .map(|l| {
                (0..q)
                    .map(|j| model.lambda(l, j).iter().copied().collect())
                    .collect()
            })
            .collect(),
        s: model.s().iter().copied().collect(),
        y: model.y().iter().copied().collect(),
        source_rule: rule_to_file(model.rule()),
    };
    serde_json::to_value(file).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<MultilayerModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    let (n, m, q) = (file.n, file.m, file.q);
    let w = family_from_file(&file.w, "w")?;
    if file.alpha.len() != q {
        return Err(Error::Data(format!(
            "alpha lists {} layers, expected {q}",
            file.alpha.len()
        )));
    }
    let alpha = file
        .alpha
        .into_iter()
        .map(DVector::from_vec)
        .collect::<Vec<_>>();
    let lambda = file
        .lambda
        .into_iter()
        .map(|per_l| per_l.into_iter().map(DVector::from_vec).collect())
        .collect::<Vec<Vec<_>>>();
    let s = DVector::from_vec(file.s);
    let y = DVector::from_vec(file.y);
    let rule = rule_from_file(file.source_rule, n, m, q)?;
    let model = MultilayerModel::new(w, alpha, lambda, s, y, rule)?;
    if model.n() != n || model.m() != m || model.q() != q {
        return Err(Error::Data(format!(
            "declared dimensions (n={n}, m={m}, q={q}) disagree with matrices (n={}, m={}, q={})",
            model.n(),
            model.m(),
            model.q()
        )));
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<MultilayerModel> {
    let text = std::fs::read_to_string(path)?;
    model_from_json(&text)
}

pub fn save_model(model: &MultilayerModel, description: Option<&str>, path: &Path) -> Result<()> {
    std::fs::write(path, to_artifact_string(model_to_json(model, description)))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// scenario files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerFile {
    #[serde(default = "default_starts")]
    starts: usize,
    #[serde(default = "default_step_tol")]
    step_tol: f64,
    #[serde(default = "default_max_evals")]
    max_evals_per_start: usize,
    #[serde(default = "default_true")]
    grid_verify: bool,
}

fn default_starts() -> usize {
    8
}
fn default_step_tol() -> f64 {
    1e-4
}
fn default_max_evals() -> usize {
    600
}
fn default_true() -> bool {
    true
}

impl Default for OptimizerFile {
    fn default() -> Self {
        Self {
            starts: default_starts(),
            step_tol: default_step_tol(),
            max_evals_per_start: default_max_evals(),
            grid_verify: true,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    /// 0/1 per agent.
    access: Vec<u8>,
    /// 0/1 per agent.
    bias: Vec<u8>,
    /// Per-layer [lo, hi]; defaults to the unit box.
    #[serde(default)]
    r#box: Option<Vec<[f64; 2]>>,
    /// 1-based objective layer.
    objective_layer: usize,
    #[serde(default = "default_direction")]
    direction: String,
    #[serde(default = "default_omega_factor")]
    omega_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subset_k: Option<usize>,
    #[serde(default)]
    optimizer: OptimizerFile,
}

fn default_direction() -> String {
    "minimize".into()
}
fn default_omega_factor() -> f64 {
    0.9
}

pub fn scenario_from_json(text: &str, q: usize, seed: u64) -> Result<ScenarioSpec> {
    let file: ScenarioFile = serde_json::from_str(text)?;
    let direction = match file.direction.as_str() {
        "minimize" => Direction::Minimize,
        "maximize" => Direction::Maximize,
        other => {
            return Err(Error::Data(format!(
                "direction must be 'minimize' or 'maximize', got '{other}'"
            )))
        }
    };
    if file.objective_layer == 0 {
        return Err(Error::Data("objective_layer is 1-based".into()));
    }
    Ok(ScenarioSpec {
        access: file.access.iter().map(|&v| v != 0).collect(),
        bias: file.bias.iter().map(|&v| v != 0).collect(),
        box_bounds: file.r#box.unwrap_or_else(|| vec![[0.0, 1.0]; q]),
        objective_layer: file.objective_layer - 1,
        direction,
        omega_factor: file.omega_factor,
        subset_k: file.subset_k,
        optimizer: OptimizerSettings {
            starts: file.optimizer.starts,
            step_tol: file.optimizer.step_tol,
            max_evals_per_start: file.optimizer.max_evals_per_start,
            grid_verify: file.optimizer.grid_verify,
            seed,
        },
    })
}

pub fn load_scenario(path: &Path, q: usize, seed: u64) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path)?;
    scenario_from_json(&text, q, seed)
}

// ---------------------------------------------------------------------------
// result documents
// ---------------------------------------------------------------------------

fn state_values(state: &StackedState) -> Vec<f64> {
    state.values().iter().copied().collect()
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn report_to_json(report: &AssumptionReport) -> Value {
    json!({
        "row_stochastic_ok": report.row_stochastic_ok,
        "lambda_rows_ok": report.lambda_rows_ok,
        "sub_stochastic_ok": report.sub_stochastic_ok,
        "kappa": finite_or_null(report.kappa),
        "lipschitz": report.kappa.is_finite(),
        "kappa_estimated": report.kappa_estimated,
        "kappa_aff": report.kappa_aff.map(finite_or_null),
        "max_alpha": report.max_alpha,
        "contraction_certified": report.contraction_certified(),
        "margins": report.margins.iter().map(|m| json!({
            "layer": m.layer,
            "agent": m.agent,
            "margin": m.margin,
        })).collect::<Vec<_>>(),
    })
}

pub fn trajectory_summary(traj: &Trajectory) -> Value {
    let mut doc = json!({
        "status": traj.status.as_str(),
        "iterations": traj.iterations,
        "final_residual": traj.final_residual,
        "fixed_point": state_values(traj.final_state()),
    });
    if let Status::Cycle { period } = traj.status {
        doc["period"] = json!(period);
    }
    doc
}

/// Trajectory CSV: columns t, layer, agent, value (1-based layer/agent).
/// Requires a recorded history.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    writeln!(out, "t,layer,agent,value")?;
    for (t, state) in traj.states.iter().enumerate() {
        for l in 0..state.q() {
            for i in 0..state.n() {
                writeln!(out, "{t},{},{},{}", l + 1, i + 1, round_sig10(state.get(l, i)))?;
            }
        }
    }
    Ok(())
}

pub fn bounds_to_json(bounds: &FixedPointBounds) -> Value {
    json!({
        "lower": state_values(&bounds.lower),
        "upper": state_values(&bounds.upper),
    })
}

pub fn solve_to_json(solve: &AffineSolve) -> Value {
    json!({
        "fixed_point": state_values(&solve.state),
        "method": solve.method.as_str(),
        "bounds": bounds_to_json(&solve.bounds),
        "regimes_tested": solve.regimes_tested,
        "locked_fraction": solve.locked_fraction,
    })
}

pub fn design_to_json(result: &DesignResult) -> Value {
    let mut doc = json!({
        "y_star": result.y_star,
        "j_star": result.j_star,
        "delta_percent": result.delta_percent,
        "evaluations": result.evaluations,
        "subset": result.subset.as_ref().map(|s| {
            s.iter().map(|&i| i + 1).collect::<Vec<_>>()
        }),
    });
    if let Some(trace) = &result.trace {
        doc["trace"] = trace
            .iter()
            .map(|(y, j)| json!({"y": y, "j": j}))
            .collect();
    }
    doc
}

pub fn calibration_to_json(out: &CalibrationOutput, description: Option<&str>) -> Value {
    model_to_json(&out.model, description)
}

/// Scenario-table CSV: one row per scenario with the optimized strategy, the
/// objective-layer percentage change, and the objective value (4 significant
/// digits, strategy coordinates joined by ';').
pub fn scenario_table_csv(rows: &[(String, DesignResult, usize)]) -> String {
    let mut out = String::from("scenario,y_star,delta_percent,j\n");
    for (name, result, objective_layer) in rows {
        let y = match &result.y_star {
            Some(y) => y.iter().map(|v| format_sig4(*v)).collect::<Vec<_>>().join(";"),
            None => "-".into(),
        };
        let delta = match result.delta_percent.get(*objective_layer) {
            Some(Some(d)) => format_sig4(*d),
            _ => "undefined".into(),
        };
        out.push_str(&format!(
            "{name},{y},{delta},{}\n",
            format_sig4(result.j_star)
        ));
    }
    out
}

pub fn scenario_table_json(rows: &[(String, DesignResult, usize)]) -> Value {
    rows.iter()
        .map(|(name, result, objective_layer)| {
            json!({
                "scenario": name,
                "y_star": result.y_star,
                "delta_percent": result.delta_percent.get(*objective_layer).copied().flatten(),
                "j": result.j_star,
                "subset": result.subset.as_ref().map(|s| {
                    s.iter().map(|&i| i + 1).collect::<Vec<_>>()
                }),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::MismatchWeights;

    fn sample_model() -> MultilayerModel {
        MultilayerModel::new(
            vec![DMatrix::from_element(2, 2, 0.5); 2],
            vec![DVector::from_column_slice(&[0.4, 0.6]); 2],
            vec![
                vec![
                    DVector::from_column_slice(&[0.7, 0.5]),
                    DVector::from_column_slice(&[0.3, 0.5]),
                ],
                vec![
                    DVector::from_column_slice(&[0.3, 0.5]),
                    DVector::from_column_slice(&[0.7, 0.5]),
                ],
            ],
            DVector::from_column_slice(&[0.1, 0.9, 0.25, 0.75]),
            DVector::from_column_slice(&[1.0, 0.5]),
            SourceRule::Affine {
                omega: vec![DMatrix::from_column_slice(2, 1, &[0.2, 0.0]); 2],
                gamma: vec![DMatrix::from_column_slice(2, 1, &[0.1, 0.0]); 2],
                c: MismatchWeights::new(
                    vec![
                        vec![vec![vec![0.6, 0.4]], vec![vec![1.0, 0.0]]],
                        vec![vec![vec![0.2, 0.8]], vec![vec![0.0, 1.0]]],
                    ],
                    2,
                    1,
                    2,
                )
                .unwrap(),
            },
        )
        .unwrap()
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let model = sample_model();
        let text = to_artifact_string(model_to_json(&model, Some("round trip")));
        let back = model_from_json(&text).unwrap();
        assert_eq!(back.s(), model.s());
        assert_eq!(back.y(), model.y());
        for l in 0..model.q() {
            assert_eq!(back.w(l), model.w(l));
            assert_eq!(back.alpha(l), model.alpha(l));
        }
        assert_eq!(back.rule(), model.rule());
        // serializing again is byte-identical
        let text2 = to_artifact_string(model_to_json(&back, Some("round trip")));
        assert_eq!(text, text2);
    }

    #[test]
    fn sig_digit_rounding() {
        assert_eq!(round_sig10(1.0 / 3.0), 0.3333333333);
        assert_eq!(format_sig4(0.111_23), "0.1112");
        assert_eq!(format_sig4(-39.949), "-39.95");
    }

    #[test]
    fn scenario_defaults_fill_in() {
        let text = r#"{"access": [1, 0], "bias": [1, 0], "objective_layer": 2}"#;
        let scenario = scenario_from_json(text, 3, 42).unwrap();
        assert_eq!(scenario.objective_layer, 1);
        assert_eq!(scenario.box_bounds, vec![[0.0, 1.0]; 3]);
        assert_eq!(scenario.optimizer.starts, 8);
        assert_eq!(scenario.optimizer.seed, 42);
        assert!(matches!(scenario.direction, Direction::Minimize));
    }
}
