//! Source-influence rules: how strongly each information source sways each
//! agent as a function of their opinion mismatch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mismatch weight vectors c_{l,i,k}: for each (layer, agent, source) a
/// nonnegative q-vector summing to 1 that scores per-layer opinion gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchWeights {
    n: usize,
    m: usize,
    q: usize,
    // flattened as ((l*n + i)*m + k)*q + r
    data: Vec<f64>,
}

impl MismatchWeights {
    /// Builds from nested vectors `c[l][i][k]` (each a q-vector).
    pub fn new(c: Vec<Vec<Vec<Vec<f64>>>>, n: usize, m: usize, q: usize) -> Result<Self> {
        if c.len() != q {
            return Err(Error::DimensionMismatch {
                what: "mismatch weights: layer count".into(),
                expected: q,
                actual: c.len(),
            });
        }
        let mut data = Vec::with_capacity(n * m * q * q);
        for (l, per_layer) in c.iter().enumerate() {
            if per_layer.len() != n {
                return Err(Error::DimensionMismatch {
                    what: format!("mismatch weights: agents in layer {}", l + 1),
                    expected: n,
                    actual: per_layer.len(),
                });
            }
            for (i, per_agent) in per_layer.iter().enumerate() {
                if per_agent.len() != m {
                    return Err(Error::DimensionMismatch {
                        what: format!("mismatch weights: sources at layer {}, agent {}", l + 1, i + 1),
                        expected: m,
                        actual: per_agent.len(),
                    });
                }
                for (k, vec) in per_agent.iter().enumerate() {
                    if vec.len() != q {
                        return Err(Error::DimensionMismatch {
                            what: format!(
                                "mismatch weight vector at layer {}, agent {}, source {}",
                                l + 1,
                                i + 1,
                                k + 1
                            ),
                            expected: q,
                            actual: vec.len(),
                        });
                    }
                    let sum: f64 = vec.iter().sum();
                    if vec.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::MismatchWeightInvalid {
                            layer: l + 1,
                            agent: i + 1,
                            source_index: k + 1,
                            sum,
                        });
                    }
                    data.extend_from_slice(vec);
                }
            }
        }
        Ok(Self { n, m, q, data })
    }

    /// Layer-local weights: c_{l,i,k} = e_l for every (i, k).
    pub fn layer_local(n: usize, m: usize, q: usize) -> Self {
        let mut data = vec![0.0; n * m * q * q];
        for l in 0..q {
            for i in 0..n {
                for k in 0..m {
                    data[((l * n + i) * m + k) * q + l] = 1.0;
                }
            }
        }
        Self { n, m, q, data }
    }

    #[inline]
    pub fn get(&self, l: usize, i: usize, k: usize) -> &[f64] {
        let base = ((l * self.n + i) * self.m + k) * self.q;
        &self.data[base..base + self.q]
    }

    /// Nested-vector view matching the file layout.
    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        (0..self.q)
            .map(|l| {
                (0..self.n)
                    .map(|i| {
                        (0..self.m)
                            .map(|k| self.get(l, i, k).to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// A catalog rule mapping a mismatch score beta in [0,1] to a source weight.
/// Custom rules are restricted to this registered catalog; model files select
/// them by name and parameters, never by loading code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum CatalogRule {
    /// `scale * ln(offset - beta)`; requires `offset > 1` so the log stays finite.
    Log { scale: f64, offset: f64 },
    /// `base - scale * sin(beta)`.
    Sine { base: f64, scale: f64 },
    /// Constant weight, independent of mismatch.
    Constant { value: f64 },
}

impl CatalogRule {
    pub fn eval(&self, beta: f64) -> f64 {
        match *self {
            CatalogRule::Log { scale, offset } => scale * (offset - beta).ln(),
            CatalogRule::Sine { base, scale } => base - scale * beta.sin(),
            CatalogRule::Constant { value } => value,
        }
    }

    fn check(&self) -> Result<()> {
        match *self {
            CatalogRule::Log { scale, offset } => {
                if offset <= 1.0 || scale < 0.0 {
                    return Err(Error::Data(format!(
                        "log rule needs offset > 1 and scale >= 0 (got offset {offset}, scale {scale})"
                    )));
                }
            }
            CatalogRule::Sine { base, scale } => {
                if base < 0.0 || scale < 0.0 {
                    return Err(Error::Data(format!(
                        "sine rule needs nonnegative base and scale (got base {base}, scale {scale})"
                    )));
                }
            }
            CatalogRule::Constant { value } => {
                if value < 0.0 {
                    return Err(Error::Data(format!("constant rule must be nonnegative (got {value})")));
                }
            }
        }
        Ok(())
    }
}

/// One custom-rule entry; (layer, agent, source) triples not listed get weight 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomEntry {
    pub layer: usize,
    pub agent: usize,
    pub source: usize,
    pub rule: CatalogRule,
}

/// The state-dependent source-influence specification B_l(x).
#[derive(Debug, Clone, PartialEq)]
pub enum SourceRule {
    /// Affine confirmation bias: b = Omega - Gamma * beta.
    Affine {
        omega: Vec<DMatrix<f64>>,
        gamma: Vec<DMatrix<f64>>,
        c: MismatchWeights,
    },
    /// Bounded confidence: b = P when beta <= eps_i, else 0.
    BoundedConfidence {
        p: Vec<DMatrix<f64>>,
        eps: DVector<f64>,
        c: MismatchWeights,
    },
    /// Named catalog rules of beta, boxed by declared bounds
    /// phi_lower <= B(x) <= phi_upper.
    CustomBounded {
        entries: Vec<CustomEntry>,
        phi_lower: Vec<DMatrix<f64>>,
        phi_upper: Vec<DMatrix<f64>>,
        /// Optional declared Lipschitz constants per (l, i, k); when absent the
        /// validator estimates them by sampling.
        mu: Option<Vec<DMatrix<f64>>>,
        c: MismatchWeights,
    },
}

fn check_matrix_family(
    what: &str,
    mats: &[DMatrix<f64>],
    n: usize,
    m: usize,
    q: usize,
) -> Result<()> {
    if mats.len() != q {
        return Err(Error::DimensionMismatch {
            what: format!("{what}: layer count"),
            expected: q,
            actual: mats.len(),
        });
    }
    for (l, mat) in mats.iter().enumerate() {
        if mat.nrows() != n || mat.ncols() != m {
            return Err(Error::DimensionMismatch {
                what: format!("{what} layer {}", l + 1),
                expected: n * m,
                actual: mat.nrows() * mat.ncols(),
            });
        }
        for i in 0..n {
            for k in 0..m {
                let v = mat[(i, k)];
                if v < 0.0 {
                    return Err(Error::NegativeEntry {
                        what: format!("{what} layer {}", l + 1),
                        row: i + 1,
                        col: k + 1,
                        value: v,
                    });
                }
            }
        }
    }
    Ok(())
}

impl SourceRule {
    pub fn mismatch_weights(&self) -> &MismatchWeights {
        match self {
            SourceRule::Affine { c, .. }
            | SourceRule::BoundedConfidence { c, .. }
            | SourceRule::CustomBounded { c, .. } => c,
        }
    }

    /// Structural and sign checks for the given dimensions.
    pub(crate) fn check(&self, n: usize, m: usize, q: usize) -> Result<()> {
        match self {
            SourceRule::Affine { omega, gamma, .. } => {
                check_matrix_family("omega", omega, n, m, q)?;
                check_matrix_family("gamma", gamma, n, m, q)?;
                for l in 0..q {
                    for i in 0..n {
                        for k in 0..m {
                            let (o, g) = (omega[l][(i, k)], gamma[l][(i, k)]);
                            if g > o {
                                return Err(Error::GammaExceedsOmega {
                                    layer: l + 1,
                                    agent: i + 1,
                                    source_index: k + 1,
                                    gamma: g,
                                    omega: o,
                                });
                            }
                        }
                    }
                }
            }
            SourceRule::BoundedConfidence { p, eps, .. } => {
                check_matrix_family("p", p, n, m, q)?;
                if eps.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "eps".into(),
                        expected: n,
                        actual: eps.len(),
                    });
                }
                // Zero thresholds are accepted: the worked examples use eps = 0
                // even though the formal statement asks for eps > 0.
                for (i, &e) in eps.iter().enumerate() {
                    if e < 0.0 {
                        return Err(Error::NegativeThreshold {
                            agent: i + 1,
                            value: e,
                        });
                    }
                }
            }
            SourceRule::CustomBounded {
                entries,
                phi_lower,
                phi_upper,
                mu,
                ..
            } => {
                check_matrix_family("phi_lower", phi_lower, n, m, q)?;
                check_matrix_family("phi_upper", phi_upper, n, m, q)?;
                if let Some(mu) = mu {
                    check_matrix_family("mu", mu, n, m, q)?;
                }
                for l in 0..q {
                    for i in 0..n {
                        for k in 0..m {
                            if phi_lower[l][(i, k)] > phi_upper[l][(i, k)] {
                                return Err(Error::BoundsInverted {
                                    layer: l + 1,
                                    agent: i + 1,
                                    source_index: k + 1,
                                });
                            }
                        }
                    }
                }
                for e in entries {
                    e.rule.check()?;
                    if e.layer >= q || e.agent >= n || e.source >= m {
                        return Err(Error::IndexOutOfRange {
                            what: "custom rule entry",
                            index: e.layer.max(e.agent).max(e.source),
                            limit: q.max(n).max(m),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Worst-case (largest) source-influence matrix for layer `l`, used for
    /// sub-stochasticity certification and upper fixed-point bounds.
    pub fn upper_envelope(&self, l: usize) -> DMatrix<f64> {
        match self {
            SourceRule::Affine { omega, .. } => omega[l].clone(),
            SourceRule::BoundedConfidence { p, .. } => p[l].clone(),
            SourceRule::CustomBounded { phi_upper, .. } => phi_upper[l].clone(),
        }
    }

    /// Smallest source-influence matrix for layer `l` (beta = 1 worst case for
    /// the affine rule, 0 for bounded confidence, declared bound otherwise).
    pub fn lower_envelope(&self, l: usize) -> DMatrix<f64> {
        match self {
            SourceRule::Affine { omega, gamma, .. } => &omega[l] - &gamma[l],
            SourceRule::BoundedConfidence { p, .. } => {
                DMatrix::zeros(p[l].nrows(), p[l].ncols())
            }
            SourceRule::CustomBounded { phi_lower, .. } => phi_lower[l].clone(),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, SourceRule::Affine { .. })
    }

    pub(crate) fn custom_rule_at(&self, l: usize, i: usize, k: usize) -> Option<&CatalogRule> {
        match self {
            SourceRule::CustomBounded { entries, .. } => entries
                .iter()
                .find(|e| e.layer == l && e.agent == i && e.source == k)
                .map(|e| &e.rule),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_must_sum_to_one() {
        let bad = vec![
            vec![vec![vec![0.5, 0.4]]],
            vec![vec![vec![0.0, 1.0]]],
        ];
        assert!(matches!(
            MismatchWeights::new(bad, 1, 1, 2).unwrap_err(),
            Error::MismatchWeightInvalid { .. }
        ));
        let good = vec![
            vec![vec![vec![0.5, 0.5]]],
            vec![vec![vec![0.0, 1.0]]],
        ];
        assert!(MismatchWeights::new(good, 1, 1, 2).is_ok());
    }

    #[test]
    fn layer_local_weights_are_unit_vectors() {
        let c = MismatchWeights::layer_local(2, 1, 3);
        assert_eq!(c.get(0, 1, 0), &[1.0, 0.0, 0.0]);
        assert_eq!(c.get(2, 0, 0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn gamma_above_omega_rejected() {
        let omega = vec![DMatrix::from_element(1, 1, 0.2)];
        let gamma = vec![DMatrix::from_element(1, 1, 0.3)];
        let rule = SourceRule::Affine {
            omega,
            gamma,
            c: MismatchWeights::layer_local(1, 1, 1),
        };
        assert!(matches!(
            rule.check(1, 1, 1).unwrap_err(),
            Error::GammaExceedsOmega { .. }
        ));
    }

    #[test]
    fn log_rule_catalog_values() {
        let log = CatalogRule::Log {
            scale: 0.55,
            offset: 2.0,
        };
        assert!((log.eval(0.0) - 0.55 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(log.eval(1.0), 0.0);
        let sine = CatalogRule::Sine {
            base: 0.25,
            scale: 0.25,
        };
        assert!((sine.eval(1.0) - (0.25 - 0.25 * 1f64.sin())).abs() < 1e-15);
    }
}
