//! The multilayer opinion model: static parameters, assumption validation,
//! mismatch scores, source weights, and the stacked supra-operators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rule::SourceRule;
use crate::stacked::{stacked_index, StackedState};

/// Row sums within this tolerance of 1 pass untouched.
const ROW_SUM_STRICT: f64 = 1e-9;
/// Row sums off by at most this much are renormalized with a warning;
/// anything worse is an error. Data-derived matrices carry rounding noise.
const ROW_SUM_RENORM: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelWarning {
    /// A row of W (or a lambda row) was renormalized to sum exactly to 1.
    RenormalizedRow {
        what: &'static str,
        layer: usize,
        row: usize,
        original_sum: f64,
    },
}

impl std::fmt::Display for ModelWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelWarning::RenormalizedRow {
                what,
                layer,
                row,
                original_sum,
            } => write!(
                f,
                "renormalized {what} row {row} in layer {layer} (sum was {original_sum})"
            ),
        }
    }
}

/// All static parameters of the topic-layered model.
///
/// Immutable after construction; every operation below is a pure function of
/// the model and its arguments, so models are safe to share across threads.
#[derive(Debug, Clone)]
pub struct MultilayerModel {
    n: usize,
    m: usize,
    q: usize,
    w: Vec<DMatrix<f64>>,
    alpha: Vec<DVector<f64>>,
    lambda: Vec<Vec<DVector<f64>>>,
    s: DVector<f64>,
    y: DVector<f64>,
    rule: SourceRule,
    warnings: Vec<ModelWarning>,
}

impl MultilayerModel {
    /// Builds and structurally validates a model.
    ///
    /// `w[l]` are the per-layer social weight matrices (rows renormalized when
    /// off by at most 1e-6), `alpha[l]` the susceptibility diagonals,
    /// `lambda[l][j]` the cross-topic coupling diagonals (sum over `j` must be
    /// 1 per agent), `s` the stacked innate opinions, `y` the stacked source
    /// opinions. Merely non-contractive models construct fine; contraction is
    /// reported by [`MultilayerModel::validate`], not enforced here.
    pub fn new(
        w: Vec<DMatrix<f64>>,
        alpha: Vec<DVector<f64>>,
        lambda: Vec<Vec<DVector<f64>>>,
        s: DVector<f64>,
        y: DVector<f64>,
        rule: SourceRule,
    ) -> Result<Self> {
        let q = w.len();
        if q == 0 {
            return Err(Error::DimensionMismatch {
                what: "layer count".into(),
                expected: 1,
                actual: 0,
            });
        }
        let n = w[0].nrows();
        if n == 0 {
            return Err(Error::DimensionMismatch {
                what: "agent count".into(),
                expected: 1,
                actual: 0,
            });
        }
        if s.len() != n * q {
            return Err(Error::DimensionMismatch {
                what: "innate opinions s".into(),
                expected: n * q,
                actual: s.len(),
            });
        }
        if y.len() % q != 0 {
            return Err(Error::DimensionMismatch {
                what: "source opinions y (length must be m*q)".into(),
                expected: q,
                actual: y.len(),
            });
        }
        let m = y.len() / q;
        if m == 0 {
            return Err(Error::DimensionMismatch {
                what: "source count".into(),
                expected: 1,
                actual: 0,
            });
        }

        let mut warnings = Vec::new();
        let mut w = w;
        for (l, mat) in w.iter_mut().enumerate() {
            if mat.nrows() != n || mat.ncols() != n {
                return Err(Error::DimensionMismatch {
                    what: format!("w layer {}", l + 1),
                    expected: n * n,
                    actual: mat.nrows() * mat.ncols(),
                });
            }
            for i in 0..n {
                let mut sum = 0.0;
                for a in 0..n {
                    let v = mat[(i, a)];
                    if v < 0.0 {
                        return Err(Error::NegativeEntry {
                            what: format!("w layer {}", l + 1),
                            row: i + 1,
                            col: a + 1,
                            value: v,
                        });
                    }
                    sum += v;
                }
                let err = (sum - 1.0).abs();
                if err > ROW_SUM_STRICT {
                    if err <= ROW_SUM_RENORM {
                        for a in 0..n {
                            mat[(i, a)] /= sum;
                        }
                        warnings.push(ModelWarning::RenormalizedRow {
                            what: "w",
                            layer: l + 1,
                            row: i + 1,
                            original_sum: sum,
                        });
                    } else {
                        return Err(Error::RowSumInvalid {
                            what: "w".into(),
                            layer: l + 1,
                            row: i + 1,
                            sum,
                        });
                    }
                }
            }
        }

        if alpha.len() != q {
            return Err(Error::DimensionMismatch {
                what: "alpha: layer count".into(),
                expected: q,
                actual: alpha.len(),
            });
        }
        for (l, a) in alpha.iter().enumerate() {
            if a.len() != n {
                return Err(Error::DimensionMismatch {
                    what: format!("alpha layer {}", l + 1),
                    expected: n,
                    actual: a.len(),
                });
            }
            for (i, &v) in a.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::OutOfUnitInterval {
                        what: format!("alpha layer {}", l + 1),
                        index: i + 1,
                        value: v,
                    });
                }
            }
        }

        if lambda.len() != q {
            return Err(Error::DimensionMismatch {
                what: "lambda: layer count".into(),
                expected: q,
                actual: lambda.len(),
            });
        }
        let mut lambda = lambda;
        for (l, per_l) in lambda.iter_mut().enumerate() {
            if per_l.len() != q {
                return Err(Error::DimensionMismatch {
                    what: format!("lambda[{}]: target layer count", l + 1),
                    expected: q,
                    actual: per_l.len(),
                });
            }
            for (j, v) in per_l.iter().enumerate() {
                if v.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: format!("lambda[{}][{}]", l + 1, j + 1),
                        expected: n,
                        actual: v.len(),
                    });
                }
                for (i, &e) in v.iter().enumerate() {
                    if !(0.0..=1.0).contains(&e) {
                        return Err(Error::OutOfUnitInterval {
                            what: format!("lambda[{}][{}]", l + 1, j + 1),
                            index: i + 1,
                            value: e,
                        });
                    }
                }
            }
            for i in 0..n {
                let sum: f64 = (0..q).map(|j| per_l[j][i]).sum();
                let err = (sum - 1.0).abs();
                if err > ROW_SUM_STRICT {
                    if err <= ROW_SUM_RENORM {
                        for j in 0..q {
                            per_l[j][i] /= sum;
                        }
                        warnings.push(ModelWarning::RenormalizedRow {
                            what: "lambda",
                            layer: l + 1,
                            row: i + 1,
                            original_sum: sum,
                        });
                    } else {
                        return Err(Error::RowSumInvalid {
                            what: "lambda".into(),
                            layer: l + 1,
                            row: i + 1,
                            sum,
                        });
                    }
                }
            }
        }

        for (idx, &v) in s.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfUnitInterval {
                    what: "s".into(),
                    index: idx + 1,
                    value: v,
                });
            }
        }
        for (idx, &v) in y.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfUnitInterval {
                    what: "y".into(),
                    index: idx + 1,
                    value: v,
                });
            }
        }

        rule.check(n, m, q)?;

        Ok(Self {
            n,
            m,
            q,
            w,
            alpha,
            lambda,
            s,
            y,
            rule,
            warnings,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn w(&self, l: usize) -> &DMatrix<f64> {
        &self.w[l]
    }

    pub fn alpha(&self, l: usize) -> &DVector<f64> {
        &self.alpha[l]
    }

    #[inline]
    pub fn alpha_of(&self, l: usize, i: usize) -> f64 {
        self.alpha[l][i]
    }

    pub fn lambda(&self, l: usize, j: usize) -> &DVector<f64> {
        &self.lambda[l][j]
    }

    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    #[inline]
    pub fn s_of(&self, l: usize, i: usize) -> f64 {
        self.s[stacked_index(self.n, l, i)]
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    #[inline]
    pub fn y_of(&self, l: usize, k: usize) -> f64 {
        self.y[stacked_index(self.m, l, k)]
    }

    pub fn rule(&self) -> &SourceRule {
        &self.rule
    }

    /// Non-fatal adjustments made at construction time.
    pub fn warnings(&self) -> &[ModelWarning] {
        &self.warnings
    }

    /// The innate opinions as a state (the conventional x[0]).
    pub fn innate_state(&self) -> StackedState {
        StackedState::from_unchecked(self.s.clone(), self.n, self.q)
    }

    /// Returns a copy with different source opinions.
    pub fn with_source_opinions(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.m * self.q {
            return Err(Error::DimensionMismatch {
                what: "source opinions y".into(),
                expected: self.m * self.q,
                actual: y.len(),
            });
        }
        for (idx, &v) in y.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfUnitInterval {
                    what: "y".into(),
                    index: idx + 1,
                    value: v,
                });
            }
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    /// Returns a copy with a different source rule (dimensions rechecked).
    pub fn with_rule(&self, rule: SourceRule) -> Result<Self> {
        rule.check(self.n, self.m, self.q)?;
        let mut out = self.clone();
        out.rule = rule;
        Ok(out)
    }

    fn check_indices(&self, l: usize, i: usize, k: usize) -> Result<()> {
        if l >= self.q {
            return Err(Error::IndexOutOfRange {
                what: "layer",
                index: l,
                limit: self.q,
            });
        }
        if i >= self.n {
            return Err(Error::IndexOutOfRange {
                what: "agent",
                index: i,
                limit: self.n,
            });
        }
        if k >= self.m {
            return Err(Error::IndexOutOfRange {
                what: "source",
                index: k,
                limit: self.m,
            });
        }
        Ok(())
    }

    /// Mismatch score beta_l(i,k) = c_{l,i,k}^T |H_i x - T_k y|, in [0,1].
    pub fn mismatch(&self, x: &StackedState, l: usize, i: usize, k: usize) -> Result<f64> {
        self.check_indices(l, i, k)?;
        self.check_state(x)?;
        Ok(self.mismatch_at(x.values(), l, i, k))
    }

    #[inline]
    pub(crate) fn mismatch_at(&self, x: &DVector<f64>, l: usize, i: usize, k: usize) -> f64 {
        let c = self.rule.mismatch_weights().get(l, i, k);
        let mut score = 0.0;
        for (r, &cr) in c.iter().enumerate() {
            if cr != 0.0 {
                let xv = x[stacked_index(self.n, r, i)];
                let yv = self.y[stacked_index(self.m, r, k)];
                score += cr * (xv - yv).abs();
            }
        }
        score
    }

    /// State-dependent source weight b_{l,i,k}(x).
    ///
    /// Affine: Omega - Gamma * beta (nonnegative whenever Gamma <= Omega, which
    /// construction enforces). Bounded confidence: P if beta <= eps_i (boundary
    /// included, compared exactly), else 0. Custom: catalog evaluator clamped
    /// into [phi_lower, phi_upper], with a warning logged when clamping occurs.
    pub fn source_weight(&self, x: &StackedState, l: usize, i: usize, k: usize) -> Result<f64> {
        self.check_indices(l, i, k)?;
        self.check_state(x)?;
        Ok(self.weight_at(x.values(), l, i, k))
    }

    #[inline]
    pub(crate) fn weight_at(&self, x: &DVector<f64>, l: usize, i: usize, k: usize) -> f64 {
        match &self.rule {
            SourceRule::Affine { omega, gamma, .. } => {
                let g = gamma[l][(i, k)];
                let o = omega[l][(i, k)];
                if o == 0.0 && g == 0.0 {
                    return 0.0;
                }
                o - g * self.mismatch_at(x, l, i, k)
            }
            SourceRule::BoundedConfidence { p, eps, .. } => {
                let pv = p[l][(i, k)];
                if pv == 0.0 {
                    return 0.0;
                }
                if self.mismatch_at(x, l, i, k) <= eps[i] {
                    pv
                } else {
                    0.0
                }
            }
            SourceRule::CustomBounded {
                phi_lower,
                phi_upper,
                ..
            } => {
                let raw = match self.rule.custom_rule_at(l, i, k) {
                    Some(rule) => rule.eval(self.mismatch_at(x, l, i, k)),
                    None => 0.0,
                };
                let (lo, hi) = (phi_lower[l][(i, k)], phi_upper[l][(i, k)]);
                if raw < lo || raw > hi {
                    log::warn!(
                        "custom weight {raw} at layer {}, agent {}, source {} clamped into [{lo}, {hi}]",
                        l + 1,
                        i + 1,
                        k + 1
                    );
                    raw.clamp(lo, hi)
                } else {
                    raw
                }
            }
        }
    }

    pub(crate) fn check_state(&self, x: &StackedState) -> Result<()> {
        if x.n() != self.n || x.q() != self.q {
            return Err(Error::DimensionMismatch {
                what: "state".into(),
                expected: self.n * self.q,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// The supra-social operator AW: block (l, j) equals A_l Lambda_{l,j} W_j.
    pub fn supra_social(&self) -> DMatrix<f64> {
        let nq = self.n * self.q;
        let mut out = DMatrix::zeros(nq, nq);
        for l in 0..self.q {
            for j in 0..self.q {
                for i in 0..self.n {
                    let scale = self.alpha[l][i] * self.lambda[l][j][i];
                    if scale == 0.0 {
                        continue;
                    }
                    let row = stacked_index(self.n, l, i);
                    for a in 0..self.n {
                        out[(row, stacked_index(self.n, j, a))] = scale * self.w[j][(i, a)];
                    }
                }
            }
        }
        out
    }

    /// The stacked block-diagonal source matrix B(x) (nq x mq).
    pub fn supra_source(&self, x: &StackedState) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        let mut out = DMatrix::zeros(self.n * self.q, self.m * self.q);
        for l in 0..self.q {
            for i in 0..self.n {
                for k in 0..self.m {
                    out[(
                        stacked_index(self.n, l, i),
                        stacked_index(self.m, l, k),
                    )] = self.weight_at(x.values(), l, i, k);
                }
            }
        }
        Ok(out)
    }
}

/// Per-(layer, agent) slack in the convexity condition
/// alpha (1 + sum_k b_worst) <= 1.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SubStochasticMargin {
    /// 1-based layer.
    pub layer: usize,
    /// 1-based agent.
    pub agent: usize,
    /// 1 - alpha (1 + worst-case row sum of B); negative means violated.
    pub margin: f64,
}

/// Outcome of assumption validation. Non-contractive models are flagged, never
/// rejected.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// Per layer: W_l row-stochastic within tolerance.
    pub row_stochastic_ok: Vec<bool>,
    /// Per-agent lambda sums equal 1 within tolerance.
    pub lambda_rows_ok: bool,
    /// A(I + Sigma_B) row-sub-stochastic under the worst-case envelope.
    pub sub_stochastic_ok: bool,
    /// Contraction factor kappa; +inf when the rule is not Lipschitz.
    pub kappa: f64,
    /// True when kappa rests on sampled Lipschitz estimates.
    pub kappa_estimated: bool,
    /// The affine-regime factor (affine rules only).
    pub kappa_aff: Option<f64>,
    /// Largest susceptibility entry; must stay below 1 for the resolvent.
    pub max_alpha: f64,
    /// Convexity slack for every (layer, agent).
    pub margins: Vec<SubStochasticMargin>,
}

impl AssumptionReport {
    /// True when a unique global fixed point is certified.
    pub fn contraction_certified(&self) -> bool {
        self.kappa < 1.0
    }

    pub fn all_structural_ok(&self) -> bool {
        self.row_stochastic_ok.iter().all(|&b| b) && self.lambda_rows_ok && self.sub_stochastic_ok
    }
}

/// Options for [`validate_with`]; sampling is used only for custom rules
/// without declared Lipschitz constants.
#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub lipschitz_samples: usize,
    pub seed: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            lipschitz_samples: 10_000,
            seed: 0,
        }
    }
}

/// Validates the model assumptions and computes the contraction factors.
pub fn validate(model: &MultilayerModel) -> AssumptionReport {
    validate_with(model, &ValidateOptions::default())
}

pub fn validate_with(model: &MultilayerModel, opts: &ValidateOptions) -> AssumptionReport {
    let (n, m, q) = (model.n(), model.m(), model.q());

    let row_stochastic_ok = (0..q)
        .map(|l| {
            (0..n).all(|i| {
                let sum: f64 = (0..n).map(|a| model.w[l][(i, a)]).sum();
                (sum - 1.0).abs() <= ROW_SUM_STRICT
            })
        })
        .collect();
    let lambda_rows_ok = (0..q).all(|l| {
        (0..n).all(|i| {
            let sum: f64 = (0..q).map(|j| model.lambda[l][j][i]).sum();
            (sum - 1.0).abs() <= ROW_SUM_STRICT
        })
    });

    let mut margins = Vec::with_capacity(n * q);
    let mut sub_stochastic_ok = true;
    for l in 0..q {
        let upper = model.rule.upper_envelope(l);
        for i in 0..n {
            let row_sum: f64 = (0..m).map(|k| upper[(i, k)]).sum();
            let margin = 1.0 - model.alpha_of(l, i) * (1.0 + row_sum);
            if margin < -1e-12 {
                sub_stochastic_ok = false;
            }
            margins.push(SubStochasticMargin {
                layer: l + 1,
                agent: i + 1,
                margin,
            });
        }
    }

    let (mu, kappa_estimated) = lipschitz_constants(model, opts);
    let mut kappa: f64 = 0.0;
    for l in 0..q {
        for i in 0..n {
            let mut sum = 0.0;
            for k in 0..m {
                sum += mu[l][(i, k)] * (model.y_of(l, k) - model.s_of(l, i)).abs();
            }
            kappa = kappa.max(model.alpha_of(l, i) * (1.0 + sum));
        }
    }

    let kappa_aff = match &model.rule {
        SourceRule::Affine { gamma, .. } => {
            let mut k_aff: f64 = 0.0;
            for l in 0..q {
                for i in 0..n {
                    let sum: f64 = (0..m)
                        .map(|k| gamma[l][(i, k)] * (model.y_of(l, k) - model.s_of(l, i)).abs())
                        .sum();
                    k_aff = k_aff.max(model.alpha_of(l, i) * (1.0 + sum));
                }
            }
            Some(k_aff)
        }
        _ => None,
    };

    let mut max_alpha: f64 = 0.0;
    for l in 0..q {
        for i in 0..n {
            max_alpha = max_alpha.max(model.alpha_of(l, i));
        }
    }

    AssumptionReport {
        row_stochastic_ok,
        lambda_rows_ok,
        sub_stochastic_ok,
        kappa,
        kappa_estimated,
        kappa_aff,
        max_alpha,
        margins,
    }
}

/// Per-entry Lipschitz constants of b_{l,i,k} in the max norm.
///
/// Affine: Gamma. Bounded confidence: 0 when the entry is constant (P = 0, or
/// eps_i >= 1 so the threshold is never crossed), +inf otherwise — the jump is
/// not Lipschitz. Custom: declared constants, else sampled estimates.
fn lipschitz_constants(
    model: &MultilayerModel,
    opts: &ValidateOptions,
) -> (Vec<DMatrix<f64>>, bool) {
    let (n, m, q) = (model.n(), model.m(), model.q());
    match &model.rule {
        SourceRule::Affine { gamma, .. } => (gamma.clone(), false),
        SourceRule::BoundedConfidence { p, eps, .. } => {
            let mats = (0..q)
                .map(|l| {
                    DMatrix::from_fn(n, m, |i, k| {
                        if p[l][(i, k)] == 0.0 || eps[i] >= 1.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    })
                })
                .collect();
            (mats, false)
        }
        SourceRule::CustomBounded { mu, .. } => {
            if let Some(mu) = mu {
                (mu.clone(), false)
            } else {
                (estimate_lipschitz(model, opts), true)
            }
        }
    }
}

/// Samples random state pairs and takes the largest observed difference
/// quotient per (l, i, k). Deterministic for a fixed seed.
fn estimate_lipschitz(model: &MultilayerModel, opts: &ValidateOptions) -> Vec<DMatrix<f64>> {
    let (n, m, q) = (model.n(), model.m(), model.q());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut mats = vec![DMatrix::zeros(n, m); q];
    let dim = n * q;
    for _ in 0..opts.lipschitz_samples {
        let a = DVector::from_fn(dim, |_, _| rng.random_range(0.0..=1.0));
        let b = DVector::from_fn(dim, |_, _| rng.random_range(0.0..=1.0));
        let dist = (&a - &b).amax();
        if dist < 1e-12 {
            continue;
        }
        for l in 0..q {
            for i in 0..n {
                for k in 0..m {
                    let quot =
                        (model.weight_at(&a, l, i, k) - model.weight_at(&b, l, i, k)).abs() / dist;
                    if quot > mats[l][(i, k)] {
                        mats[l][(i, k)] = quot;
                    }
                }
            }
        }
    }
    mats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::MismatchWeights;
    use approx::assert_relative_eq;

    fn tiny_affine(omega: f64, gamma: f64, alpha: f64) -> MultilayerModel {
        MultilayerModel::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::from_element(1, alpha)],
            vec![vec![DVector::from_element(1, 1.0)]],
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 1.0),
            SourceRule::Affine {
                omega: vec![DMatrix::from_element(1, 1, omega)],
                gamma: vec![DMatrix::from_element(1, 1, gamma)],
                c: MismatchWeights::layer_local(1, 1, 1),
            },
        )
        .unwrap()
    }

    #[test]
    fn rows_renormalized_within_tolerance() {
        let w = DMatrix::from_row_slice(2, 2, &[0.5 + 3e-7, 0.5, 0.25, 0.75]);
        let model = MultilayerModel::new(
            vec![w],
            vec![DVector::from_element(2, 0.5)],
            vec![vec![DVector::from_element(2, 1.0)]],
            DVector::from_element(2, 0.5),
            DVector::from_element(1, 1.0),
            SourceRule::Affine {
                omega: vec![DMatrix::zeros(2, 1)],
                gamma: vec![DMatrix::zeros(2, 1)],
                c: MismatchWeights::layer_local(2, 1, 1),
            },
        )
        .unwrap();
        assert_eq!(model.warnings().len(), 1);
        let sum: f64 = (0..2).map(|a| model.w(0)[(0, a)]).sum();
        assert_relative_eq!(sum, 1.0, epsilon = 1e-15);

        let bad = DMatrix::from_row_slice(2, 2, &[0.6, 0.5, 0.25, 0.75]);
        let err = MultilayerModel::new(
            vec![bad],
            vec![DVector::from_element(2, 0.5)],
            vec![vec![DVector::from_element(2, 1.0)]],
            DVector::from_element(2, 0.5),
            DVector::from_element(1, 1.0),
            SourceRule::Affine {
                omega: vec![DMatrix::zeros(2, 1)],
                gamma: vec![DMatrix::zeros(2, 1)],
                c: MismatchWeights::layer_local(2, 1, 1),
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::RowSumInvalid { .. }));
    }

    #[test]
    fn kappa_without_source_term_is_max_alpha() {
        // Gamma = 0 and uniform alpha = a gives kappa = a.
        let model = tiny_affine(0.3, 0.0, 0.45);
        let report = validate(&model);
        assert_relative_eq!(report.kappa, 0.45, epsilon = 1e-15);
        assert_eq!(report.kappa_aff, Some(0.45));
        assert!(report.sub_stochastic_ok);
        assert!(!report.kappa_estimated);
    }

    #[test]
    fn mismatch_basic_values() {
        let model = tiny_affine(0.25, 0.1, 0.5);
        // x = y gives zero mismatch.
        let at_y = StackedState::from_slice(&[1.0], 1, 1).unwrap();
        assert_relative_eq!(model.mismatch(&at_y, 0, 0, 0).unwrap(), 0.0);
        // single-coordinate weight picks up the plain distance
        let x = StackedState::from_slice(&[0.7], 1, 1).unwrap();
        assert_relative_eq!(model.mismatch(&x, 0, 0, 0).unwrap(), 0.3, epsilon = 1e-15);
        assert!(model.mismatch(&x, 1, 0, 0).is_err());
    }

    #[test]
    fn affine_weight_at_zero_mismatch_is_omega() {
        let model = tiny_affine(0.25, 0.1, 0.5);
        let at_y = StackedState::from_slice(&[1.0], 1, 1).unwrap();
        assert_relative_eq!(model.source_weight(&at_y, 0, 0, 0).unwrap(), 0.25);
    }

    #[test]
    fn bounded_confidence_boundary_included() {
        let model = MultilayerModel::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::from_element(1, 0.4)],
            vec![vec![DVector::from_element(1, 1.0)]],
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 1.0),
            SourceRule::BoundedConfidence {
                p: vec![DMatrix::from_element(1, 1, 0.3)],
                eps: DVector::from_element(1, 0.25),
                c: MismatchWeights::layer_local(1, 1, 1),
            },
        )
        .unwrap();
        // beta = |0.75 - 1.0| = 0.25 = eps exactly: weight granted.
        let x = StackedState::from_slice(&[0.75], 1, 1).unwrap();
        assert_eq!(model.source_weight(&x, 0, 0, 0).unwrap(), 0.3);
        // just past the threshold: zero.
        let x = StackedState::from_slice(&[0.749], 1, 1).unwrap();
        assert_eq!(model.source_weight(&x, 0, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn bc_kappa_infinite_unless_vacuous() {
        let mk = |eps: f64, p: f64| {
            MultilayerModel::new(
                vec![DMatrix::from_element(1, 1, 1.0)],
                vec![DVector::from_element(1, 0.4)],
                vec![vec![DVector::from_element(1, 1.0)]],
                DVector::from_element(1, 0.5),
                DVector::from_element(1, 1.0),
                SourceRule::BoundedConfidence {
                    p: vec![DMatrix::from_element(1, 1, p)],
                    eps: DVector::from_element(1, eps),
                    c: MismatchWeights::layer_local(1, 1, 1),
                },
            )
            .unwrap()
        };
        assert!(validate(&mk(0.25, 0.3)).kappa.is_infinite());
        // threshold never crossed -> effectively constant -> Lipschitz 0
        assert!(validate(&mk(1.0, 0.3)).kappa < 1.0);
        assert!(validate(&mk(0.25, 0.0)).kappa < 1.0);
    }

    #[test]
    fn alpha_zero_gives_zero_supra_rows() {
        let mut model = tiny_affine(0.25, 0.1, 0.5);
        model = MultilayerModel::new(
            vec![model.w(0).clone()],
            vec![DVector::from_element(1, 0.0)],
            vec![vec![DVector::from_element(1, 1.0)]],
            model.s().clone(),
            model.y().clone(),
            model.rule().clone(),
        )
        .unwrap();
        assert_eq!(model.supra_social(), DMatrix::zeros(1, 1));
    }
}
