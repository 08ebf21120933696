//! Model parameters from longitudinal wave data: susceptibilities from
//! opinion volatility and in-degree, cross-topic coupling from projected
//! empirical covariance, and social weights from a row-normalized adjacency
//! graph.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MultilayerModel;
use crate::rule::{MismatchWeights, SourceRule};
use crate::stacked::stacked_index;

/// Longitudinal snapshots plus the friendship graph.
///
/// Waves are n x q matrices with entries in [0,1]; `NaN` marks a missing
/// observation. Adjacency matrices are binary with `g[(i, j)] = 1` meaning a
/// directed edge i -> j (agent i names j, so row i of the social matrix is
/// built from i's nominations and j gains in-degree).
#[derive(Debug, Clone)]
pub struct WaveData {
    waves: Vec<DMatrix<f64>>,
    adjacency: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationWarning {
    /// Missing entries for (agent, layer) were imputed with the mean over
    /// present waves. 1-based indices.
    ImputedMissing {
        agent: usize,
        layer: usize,
        missing: usize,
    },
}

impl std::fmt::Display for CalibrationWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CalibrationWarning::ImputedMissing {
                agent,
                layer,
                missing,
            } => write!(
                f,
                "agent {agent}, layer {layer}: {missing} missing wave value(s) imputed with the present-wave mean"
            ),
        }
    }
}

impl WaveData {
    /// Requires at least two waves, consistent dimensions, and binary
    /// adjacency (one matrix shared by all layers, or one per layer).
    pub fn new(waves: Vec<DMatrix<f64>>, adjacency: Vec<DMatrix<f64>>) -> Result<Self> {
        if waves.len() < 2 {
            return Err(Error::EmptyWaves);
        }
        let n = waves[0].nrows();
        let q = waves[0].ncols();
        if n == 0 || q == 0 {
            return Err(Error::EmptyWaves);
        }
        for (p, w) in waves.iter().enumerate() {
            if w.nrows() != n || w.ncols() != q {
                return Err(Error::DimensionMismatch {
                    what: format!("wave {}", p + 1),
                    expected: n * q,
                    actual: w.nrows() * w.ncols(),
                });
            }
            for i in 0..n {
                for l in 0..q {
                    let v = w[(i, l)];
                    if !v.is_nan() && !(0.0..=1.0).contains(&v) {
                        return Err(Error::OutOfUnitInterval {
                            what: format!("wave {}", p + 1),
                            index: i * q + l + 1,
                            value: v,
                        });
                    }
                }
            }
        }
        if adjacency.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "adjacency".into(),
                expected: 1,
                actual: 0,
            });
        }
        if adjacency.len() != 1 && adjacency.len() != q {
            return Err(Error::DimensionMismatch {
                what: "adjacency matrices (1 shared or q per-layer)".into(),
                expected: q,
                actual: adjacency.len(),
            });
        }
        for (idx, g) in adjacency.iter().enumerate() {
            if g.nrows() != n || g.ncols() != n {
                return Err(Error::DimensionMismatch {
                    what: format!("adjacency {}", idx + 1),
                    expected: n * n,
                    actual: g.nrows() * g.ncols(),
                });
            }
            for i in 0..n {
                for j in 0..n {
                    let v = g[(i, j)];
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Data(format!(
                            "adjacency {} entry ({}, {}) = {v} is not binary",
                            idx + 1,
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
        }
        Ok(Self { waves, adjacency })
    }

    pub fn wave_count(&self) -> usize {
        self.waves.len()
    }

    pub fn n(&self) -> usize {
        self.waves[0].nrows()
    }

    pub fn q(&self) -> usize {
        self.waves[0].ncols()
    }

    pub fn wave(&self, p: usize) -> &DMatrix<f64> {
        &self.waves[p]
    }

    pub fn adjacency_for_layer(&self, l: usize) -> &DMatrix<f64> {
        if self.adjacency.len() == 1 {
            &self.adjacency[0]
        } else {
            &self.adjacency[l]
        }
    }

    /// In-degree of each agent in layer `l` (edges entering the vertex, i.e.
    /// column sums).
    pub fn in_degrees(&self, l: usize) -> DVector<f64> {
        let g = self.adjacency_for_layer(l);
        let n = self.n();
        DVector::from_fn(n, |i, _| (0..n).map(|j| g[(j, i)]).sum())
    }

    /// Waves with missing entries replaced by the per-(agent, layer) mean of
    /// present waves, plus the warnings describing what was filled.
    pub fn imputed_waves(&self) -> Result<(Vec<DMatrix<f64>>, Vec<CalibrationWarning>)> {
        let (n, q, cnt) = (self.n(), self.q(), self.wave_count());
        let mut out = self.waves.clone();
        let mut warnings = Vec::new();
        for i in 0..n {
            for l in 0..q {
                let present: Vec<f64> = (0..cnt)
                    .map(|p| self.waves[p][(i, l)])
                    .filter(|v| !v.is_nan())
                    .collect();
                if present.is_empty() {
                    return Err(Error::AllWavesMissing {
                        agent: i + 1,
                        layer: l + 1,
                    });
                }
                let missing = cnt - present.len();
                if missing > 0 {
                    let mean = present.iter().sum::<f64>() / present.len() as f64;
                    for p in 0..cnt {
                        if out[p][(i, l)].is_nan() {
                            out[p][(i, l)] = mean;
                        }
                    }
                    warnings.push(CalibrationWarning::ImputedMissing {
                        agent: i + 1,
                        layer: l + 1,
                        missing,
                    });
                }
            }
        }
        Ok((out, warnings))
    }
}

/// Susceptibilities from opinion volatility and in-degree:
/// alpha_l(i) = 1 - 1 / (1 + (1/P) zeta_i sqrt(sum_p (x_i^p(l) - mean)^2)),
/// with P the number of waves observed for that (agent, layer) pair.
///
/// Always strictly below 1, and exactly 0 for isolated agents or constant
/// opinions.
pub fn alpha_from_waves(data: &WaveData) -> Result<Vec<DVector<f64>>> {
    let (n, q, cnt) = (data.n(), data.q(), data.wave_count());
    let mut out = vec![DVector::zeros(n); q];
    for l in 0..q {
        let zeta = data.in_degrees(l);
        for i in 0..n {
            let present: Vec<f64> = (0..cnt)
                .map(|p| data.wave(p)[(i, l)])
                .filter(|v| !v.is_nan())
                .collect();
            if present.is_empty() {
                return Err(Error::AllWavesMissing {
                    agent: i + 1,
                    layer: l + 1,
                });
            }
            let mean = present.iter().sum::<f64>() / present.len() as f64;
            let dev_sq: f64 = present.iter().map(|v| (v - mean).powi(2)).sum();
            let volatility = dev_sq.sqrt();
            let scaled = zeta[i] * volatility / present.len() as f64;
            out[l][i] = 1.0 - 1.0 / (1.0 + scaled);
        }
    }
    Ok(out)
}

/// Cross-topic coupling: the empirical covariance of wave deviations,
/// projected onto the nonnegative orthant and row-normalized. Returned as the
/// q x q matrix C; the model expands it as Lambda_{l,j} = C(l,j) I.
pub fn lambda_from_covariance(data: &WaveData) -> Result<DMatrix<f64>> {
    let (n, q, cnt) = (data.n(), data.q(), data.wave_count());
    let (waves, _) = data.imputed_waves()?;
    let mut cov = DMatrix::zeros(q, q);
    for wave in &waves {
        // population mean of this wave per layer
        let mean = DVector::from_fn(q, |l, _| (0..n).map(|i| wave[(i, l)]).sum::<f64>() / n as f64);
        for i in 0..n {
            for l in 0..q {
                let dl = wave[(i, l)] - mean[l];
                for j in 0..q {
                    cov[(l, j)] += dl * (wave[(i, j)] - mean[j]);
                }
            }
        }
    }
    cov /= (cnt * n) as f64;
    // project onto the nonnegative orthant
    let projected = cov.map(|v| v.max(0.0));
    let mut out = projected.clone();
    for l in 0..q {
        let row_sum: f64 = (0..q).map(|j| projected[(l, j)]).sum();
        if row_sum <= 0.0 {
            return Err(Error::ZeroCovarianceRow { layer: l + 1 });
        }
        for j in 0..q {
            out[(l, j)] /= row_sum;
        }
    }
    Ok(out)
}

/// Row-normalizes a binary adjacency matrix; rows without any neighbor get a
/// unit self-loop so the result stays row-stochastic.
pub fn normalize_adjacency(adjacency: &DMatrix<f64>) -> DMatrix<f64> {
    let n = adjacency.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let degree: f64 = (0..n).map(|j| adjacency[(i, j)]).sum();
        if degree > 0.0 {
            for j in 0..n {
                out[(i, j)] = adjacency[(i, j)] / degree;
            }
        } else {
            out[(i, i)] = 1.0;
        }
    }
    out
}

/// Fully calibrated model plus the coupling matrix it was built from.
#[derive(Debug, Clone)]
pub struct CalibrationOutput {
    pub model: MultilayerModel,
    /// The row-normalized coupling matrix C.
    pub coupling: DMatrix<f64>,
    pub warnings: Vec<CalibrationWarning>,
}

/// Runs the full pipeline: W from the graph, alpha from volatility, Lambda
/// from covariance, s from the first wave. The produced model has one source
/// with neutral opinions and zero influence; scenario machinery fills those
/// in later. Mismatch weights follow the coupling rows: c_{l,i,1} = C(l,:).
pub fn calibrate(data: &WaveData) -> Result<CalibrationOutput> {
    let (n, q) = (data.n(), data.q());
    let alpha = alpha_from_waves(data)?;
    let coupling = lambda_from_covariance(data)?;
    let (waves, warnings) = data.imputed_waves()?;

    let w: Vec<DMatrix<f64>> = (0..q)
        .map(|l| normalize_adjacency(data.adjacency_for_layer(l)))
        .collect();
    let lambda: Vec<Vec<DVector<f64>>> = (0..q)
        .map(|l| {
            (0..q)
                .map(|j| DVector::from_element(n, coupling[(l, j)]))
                .collect()
        })
        .collect();

    let mut s = DVector::zeros(n * q);
    for l in 0..q {
        for i in 0..n {
            s[stacked_index(n, l, i)] = waves[0][(i, l)];
        }
    }

    let c = MismatchWeights::new(
        (0..q)
            .map(|l| {
                (0..n)
                    .map(|_| vec![(0..q).map(|j| coupling[(l, j)]).collect()])
                    .collect()
            })
            .collect(),
        n,
        1,
        q,
    )?;
    let rule = SourceRule::Affine {
        omega: vec![DMatrix::zeros(n, 1); q],
        gamma: vec![DMatrix::zeros(n, 1); q],
        c,
    };

    let model = MultilayerModel::new(w, alpha, lambda, s, DVector::zeros(q), rule)?;
    Ok(CalibrationOutput {
        model,
        coupling,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// CSV / manifest ingestion
// ---------------------------------------------------------------------------

/// Maps raw categorical codes to [0,1] values per layer and fixes the edge
/// orientation convention. Rescaling raw survey codes is dataset-specific,
/// so it lives in configuration rather than code.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    /// Treat edges as undirected (each link counts for both endpoints).
    #[serde(default)]
    pub undirected: bool,
    /// Per layer-name: raw code -> normalized value.
    #[serde(default)]
    pub codes: HashMap<String, HashMap<String, f64>>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Parsed wave table: agent ids in row order plus the value matrix.
#[derive(Debug, Clone)]
pub struct WaveTable {
    pub agent_ids: Vec<String>,
    pub layer_names: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Reads one wave CSV. Layout: header `agent,<layer>,<layer>,...`, one row
/// per agent. Cells are looked up in the manifest code map for their layer
/// when one exists, otherwise parsed as numbers. Empty cells and `NA` are
/// missing values.
pub fn load_wave_csv(path: &Path, manifest: &Manifest) -> Result<WaveTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need an agent column plus at least one layer column",
            path.display()
        )));
    }
    let layer_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut agent_ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                rows.len() + 2,
                record.len(),
                headers.len()
            )));
        }
        agent_ids.push(record[0].to_string());
        let mut row = Vec::with_capacity(layer_names.len());
        for (idx, name) in layer_names.iter().enumerate() {
            let cell = record[idx + 1].trim();
            let value = if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                f64::NAN
            } else if let Some(map) = manifest.codes.get(name) {
                match map.get(cell) {
                    Some(&v) => v,
                    None => cell.parse::<f64>().map_err(|_| {
                        Error::Data(format!(
                            "{}: no code mapping or numeric value for '{cell}' in layer {name}",
                            path.display()
                        ))
                    })?,
                }
            } else {
                cell.parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "{}: cannot parse '{cell}' in layer {name}",
                        path.display()
                    ))
                })?
            };
            if !value.is_nan() && !(0.0..=1.0).contains(&value) {
                return Err(Error::Data(format!(
                    "{}: value {value} for agent {} layer {name} lies outside [0,1]; \
                     add a code mapping to the manifest",
                    path.display(),
                    record[0].to_string()
                )));
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no agent rows", path.display())));
    }
    let n = rows.len();
    let q = layer_names.len();
    let values = DMatrix::from_fn(n, q, |i, l| rows[i][l]);
    Ok(WaveTable {
        agent_ids,
        layer_names,
        values,
    })
}

/// Reads an edge-list CSV with header `from,to`, resolving endpoints against
/// the wave agent ids. Unknown ids are errors; self-loops are kept as given.
pub fn load_edge_csv(path: &Path, agent_ids: &[String], undirected: bool) -> Result<DMatrix<f64>> {
    let index: HashMap<&str, usize> = agent_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let n = agent_ids.len();
    let mut g = DMatrix::zeros(n, n);
    for record in reader.records() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::Data(format!(
                "{}: edge rows need 'from,to'",
                path.display()
            )));
        }
        let from = *index.get(&record[0]).ok_or_else(|| {
            Error::Data(format!("{}: unknown agent id '{}'", path.display(), &record[0]))
        })?;
        let to = *index.get(&record[1]).ok_or_else(|| {
            Error::Data(format!("{}: unknown agent id '{}'", path.display(), &record[1]))
        })?;
        g[(from, to)] = 1.0;
        if undirected {
            g[(to, from)] = 1.0;
        }
    }
    Ok(g)
}

/// Loads waves plus edge lists (one shared graph or one per layer) and
/// assembles the WaveData. Wave files must agree on agent ids and layers;
/// rows are matched by agent id.
pub fn load_wave_data(
    wave_paths: &[std::path::PathBuf],
    edge_paths: &[std::path::PathBuf],
    manifest: &Manifest,
) -> Result<(WaveData, WaveTable)> {
    if wave_paths.len() < 2 {
        return Err(Error::EmptyWaves);
    }
    let first = load_wave_csv(&wave_paths[0], manifest)?;
    let mut waves = vec![first.values.clone()];
    for path in &wave_paths[1..] {
        let table = load_wave_csv(path, manifest)?;
        if table.layer_names != first.layer_names {
            return Err(Error::Data(format!(
                "{}: layer columns differ from {}",
                path.display(),
                wave_paths[0].display()
            )));
        }
        // match rows by id so waves may list agents in any order
        let index: HashMap<&str, usize> = table
            .agent_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let n = first.agent_ids.len();
        let q = first.layer_names.len();
        let mut values = DMatrix::zeros(n, q);
        for (i, id) in first.agent_ids.iter().enumerate() {
            let &row = index.get(id.as_str()).ok_or_else(|| {
                Error::Data(format!(
                    "{}: agent id '{id}' missing from this wave",
                    path.display()
                ))
            })?;
            for l in 0..q {
                values[(i, l)] = table.values[(row, l)];
            }
        }
        waves.push(values);
    }
    let adjacency = edge_paths
        .iter()
        .map(|p| load_edge_csv(p, &first.agent_ids, manifest.undirected))
        .collect::<Result<Vec<_>>>()?;
    let data = WaveData::new(waves, adjacency)?;
    Ok((data, first))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn three_wave_fixture() -> WaveData {
        // 3 agents, 1 layer; agent 0 swings, others constant.
        let w1 = DMatrix::from_row_slice(3, 1, &[0.8, 0.4, 0.2]);
        let w2 = DMatrix::from_row_slice(3, 1, &[0.5, 0.4, 0.2]);
        let w3 = DMatrix::from_row_slice(3, 1, &[0.2, 0.4, 0.2]);
        // agent 0 receives edges from 1 and 2, agent 1 from 2, agent 2 none
        let g = DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, //
                1.0, 1.0, 0.0,
            ],
        );
        WaveData::new(vec![w1, w2, w3], vec![g]).unwrap()
    }

    #[test]
    fn alpha_formula_hand_value() {
        // zeta = 3, deviations (0.3, 0, -0.3): alpha = 1 - 1/(1 + sqrt(0.18))
        let w1 = DMatrix::from_row_slice(1, 1, &[0.8]);
        let w2 = DMatrix::from_row_slice(1, 1, &[0.5]);
        let w3 = DMatrix::from_row_slice(1, 1, &[0.2]);
        let g = DMatrix::from_row_slice(1, 1, &[1.0]); // self-loop: in-degree 1
        // in-degree must be 3: use 3 copies of the single agent? Not possible;
        // instead scale: zeta = 1 here, so check the zeta = 1 value and the
        // 3-agent fixture covers zeta = 2.
        let data = WaveData::new(vec![w1, w2, w3], vec![g]).unwrap();
        let alpha = alpha_from_waves(&data).unwrap();
        let expected = 1.0 - 1.0 / (1.0 + (1.0 / 3.0) * 0.18f64.sqrt());
        assert_relative_eq!(alpha[0][0], expected, epsilon = 1e-12);

        let fixture = three_wave_fixture();
        let alpha = alpha_from_waves(&fixture).unwrap();
        // agent 0: zeta = 2, same deviations
        let expected0 = 1.0 - 1.0 / (1.0 + (2.0 / 3.0) * 0.18f64.sqrt());
        assert_relative_eq!(alpha[0][0], expected0, epsilon = 1e-12);
        // constant opinions give zero volatility
        assert_eq!(alpha[0][1], 0.0);
        // no in-edges give zero susceptibility regardless of volatility
        assert_eq!(alpha[0][2], 0.0);
        assert!(alpha[0].iter().all(|&a| a < 1.0));
    }

    #[test]
    fn single_layer_coupling_is_identity() {
        let c = lambda_from_covariance(&three_wave_fixture()).unwrap();
        assert_eq!(c.nrows(), 1);
        assert_relative_eq!(c[(0, 0)], 1.0);
    }

    #[test]
    fn anticorrelated_layers_decouple() {
        // layer 2 mirrors layer 1: covariance is negative off-diagonal, which
        // the projection removes entirely.
        let w1 = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let w2 = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.2, 0.8]);
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let data = WaveData::new(vec![w1, w2], vec![g]).unwrap();
        let c = lambda_from_covariance(&data).unwrap();
        assert_relative_eq!(c[(0, 1)], 0.0);
        assert_relative_eq!(c[(1, 0)], 0.0);
        assert_relative_eq!(c[(0, 0)], 1.0);
        assert_relative_eq!(c[(1, 1)], 1.0);
    }

    #[test]
    fn adjacency_normalization_cases() {
        // complete graph on 3 nodes: off-diagonal 1/2
        let complete = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0],
        );
        let w = normalize_adjacency(&complete);
        assert_relative_eq!(w[(0, 1)], 0.5);
        assert_relative_eq!(w[(0, 0)], 0.0);

        // isolated node gets a self-loop
        let isolated = DMatrix::zeros(2, 2);
        let w = normalize_adjacency(&isolated);
        assert_relative_eq!(w[(0, 0)], 1.0);
        assert_relative_eq!(w[(1, 1)], 1.0);

        // star: hub row splits over 4 leaves
        let mut star = DMatrix::zeros(5, 5);
        for leaf in 1..5 {
            star[(0, leaf)] = 1.0;
            star[(leaf, 0)] = 1.0;
        }
        let w = normalize_adjacency(&star);
        for leaf in 1..5 {
            assert_relative_eq!(w[(0, leaf)], 0.25);
            assert_relative_eq!(w[(leaf, 0)], 1.0);
        }
    }

    #[test]
    fn calibrated_model_validates() {
        let out = calibrate(&three_wave_fixture()).unwrap();
        let report = crate::model::validate(&out.model);
        assert!(report.all_structural_ok());
        assert!(report.kappa.is_finite());
        assert!(report.max_alpha < 1.0);
        // s is the first wave
        assert_relative_eq!(out.model.s()[0], 0.8);
    }

    #[test]
    fn missing_entries_imputed_with_warning() {
        let w1 = DMatrix::from_row_slice(2, 1, &[0.4, f64::NAN]);
        let w2 = DMatrix::from_row_slice(2, 1, &[0.6, 0.3]);
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let data = WaveData::new(vec![w1, w2], vec![g]).unwrap();
        let (waves, warnings) = data.imputed_waves().unwrap();
        assert_eq!(warnings.len(), 1);
        assert_relative_eq!(waves[0][(1, 0)], 0.3);
        // alpha for the imputed agent treats the single present wave as
        // constant: zero volatility
        let alpha = alpha_from_waves(&data).unwrap();
        assert_eq!(alpha[0][1], 0.0);
    }
}
