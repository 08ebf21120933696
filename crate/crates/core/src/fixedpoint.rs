//! Steady-state computation: the resolvent, componentwise fixed-point bounds,
//! sign locking, affine regime assembly, and the pruned sign-consistency
//! search for the exact affine fixed point.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{simulate, SimOptions, Status};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{validate, MultilayerModel};
use crate::rule::SourceRule;
use crate::stacked::{stacked_index, StackedState};

/// Identity-residual target for the resolvent and regime solves.
const SOLVE_RESIDUAL: f64 = 1e-10;
/// Coordinates this close to the source are accepted under either sign
/// during consistency checks; the absolute value is sign-agnostic at zero.
const SIGN_ZERO_TOL: f64 = 1e-10;
/// Hard cap on enumerated candidates (2^20) before falling back to iteration.
const MAX_FREE_COORDS: usize = 20;

/// Componentwise envelopes on the fixed point, both in [0,1]^(n*q).
#[derive(Debug, Clone)]
pub struct FixedPointBounds {
    pub lower: StackedState,
    pub upper: StackedState,
}

/// Sign slot of one (agent, source, layer) coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignSlot {
    /// Fixed by the bound intervals (+1 or -1).
    Locked(i8),
    /// Ambiguous; enumerated by the consistency search.
    Free,
    /// No dynamic contribution (zero gamma, weight, or innate-source gap);
    /// the sign never enters the regime matrices.
    Irrelevant,
}

/// Sign data for one active (agent, source) pair.
#[derive(Debug, Clone)]
pub struct ActivePair {
    /// 0-based agent index.
    pub agent: usize,
    /// 0-based source index.
    pub source: usize,
    /// One slot per layer.
    pub slots: Vec<SignSlot>,
}

/// Sign pattern over all active (agent, source) pairs. Active pairs are those
/// with some omega or gamma entry positive; others carry no source term.
#[derive(Debug, Clone, Default)]
pub struct SignPattern {
    pub pairs: Vec<ActivePair>,
}

impl SignPattern {
    pub fn free_count(&self) -> usize {
        self.pairs
            .iter()
            .flat_map(|p| &p.slots)
            .filter(|s| matches!(s, SignSlot::Free))
            .count()
    }

    pub fn locked_count(&self) -> usize {
        self.pairs
            .iter()
            .flat_map(|p| &p.slots)
            .filter(|s| matches!(s, SignSlot::Locked(_)))
            .count()
    }

    /// Fraction of relevant coordinates fixed in advance (1 when nothing is
    /// ambiguous, including the no-relevant-coordinates case).
    pub fn locked_fraction(&self) -> f64 {
        let locked = self.locked_count();
        let total = locked + self.free_count();
        if total == 0 {
            1.0
        } else {
            locked as f64 / total as f64
        }
    }

    /// The (agent, source, layer) triples left free, 0-based.
    pub fn free_coords(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for pair in &self.pairs {
            for (l, slot) in pair.slots.iter().enumerate() {
                if matches!(slot, SignSlot::Free) {
                    out.push((pair.agent, pair.source, l));
                }
            }
        }
        out
    }

    /// Concrete assignment when nothing is free; irrelevant slots get +1.
    pub fn to_assignment(&self) -> Option<SignAssignment> {
        if self.free_count() > 0 {
            return None;
        }
        Some(self.assignment_with(&[]))
    }

    /// Concrete assignment filling free slots from `free_signs` in pattern
    /// order (must match `free_count`).
    pub fn assignment_with(&self, free_signs: &[i8]) -> SignAssignment {
        let mut it = free_signs.iter();
        let pairs = self
            .pairs
            .iter()
            .map(|p| {
                let signs = p
                    .slots
                    .iter()
                    .map(|slot| match slot {
                        SignSlot::Locked(v) => (*v, true),
                        SignSlot::Irrelevant => (1, false),
                        SignSlot::Free => (*it.next().expect("free sign supplied"), true),
                    })
                    .collect();
                AssignedPair {
                    agent: p.agent,
                    source: p.source,
                    signs,
                }
            })
            .collect();
        SignAssignment { pairs }
    }
}

/// One pair with concrete signs; the flag marks coordinates that take part in
/// consistency checks (locked or enumerated, as opposed to irrelevant).
#[derive(Debug, Clone)]
pub struct AssignedPair {
    pub agent: usize,
    pub source: usize,
    pub signs: Vec<(i8, bool)>,
}

/// A complete sign choice indexing one affine regime.
#[derive(Debug, Clone)]
pub struct SignAssignment {
    pub pairs: Vec<AssignedPair>,
}

/// The affine system induced by one sign pattern:
/// x[t+1] = A_a s + B_a y + W_a x[t].
#[derive(Debug, Clone)]
pub struct AffineRegime {
    pub w_a: DMatrix<f64>,
    pub b_a: DMatrix<f64>,
    pub a_a: DMatrix<f64>,
    pub assignment: SignAssignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    ClosedForm,
    SignSearch,
    Iterative,
}

impl SolveMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveMethod::ClosedForm => "closed_form",
            SolveMethod::SignSearch => "sign_search",
            SolveMethod::Iterative => "iterative",
        }
    }
}

/// Result of the exact affine solve.
#[derive(Debug, Clone)]
pub struct AffineSolve {
    pub state: StackedState,
    pub method: SolveMethod,
    pub bounds: FixedPointBounds,
    /// Candidates solved before the consistent one (1 for a locked pattern).
    pub regimes_tested: usize,
    pub locked_fraction: f64,
}

/// Outcome of the closed-form specialization.
#[derive(Debug, Clone)]
pub enum ClosedFormOutcome {
    Applicable(AffineSolve),
    /// Some coordinates stayed ambiguous; the triples are (agent, source,
    /// layer), 0-based.
    NotApplicable { free_coords: Vec<(usize, usize, usize)> },
}

fn max_alpha_check(model: &MultilayerModel) -> Result<()> {
    for l in 0..model.q() {
        for i in 0..model.n() {
            if model.alpha_of(l, i) >= 1.0 {
                return Err(Error::AlphaNotBelowOne {
                    layer: l + 1,
                    agent: i + 1,
                    value: model.alpha_of(l, i),
                });
            }
        }
    }
    Ok(())
}

fn matrix_inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// The resolvent Z = (I - AW)^{-1}, entrywise nonnegative, with
/// ||Z(I - AW) - I||_max <= 1e-10 enforced by iterative refinement.
///
/// Requires every susceptibility strictly below 1, which makes the row sums
/// of AW strictly sub-stochastic and I - AW nonsingular.
pub fn resolvent(model: &MultilayerModel) -> Result<DMatrix<f64>> {
    max_alpha_check(model)?;
    let nq = model.n() * model.q();
    let aw = model.supra_social();
    let m = DMatrix::identity(nq, nq) - &aw;
    let mut z = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("I - AW".into()))?;
    // Newton refinement: Z <- Z (2I - M Z) squares the residual each pass.
    for _ in 0..3 {
        let res = DMatrix::identity(nq, nq) - &m * &z;
        if matrix_inf_norm(&res) <= SOLVE_RESIDUAL {
            break;
        }
        z = &z * (DMatrix::identity(nq, nq) + res);
    }
    Ok(z)
}

/// Stacked block-diagonal expansion of per-layer n x m matrices.
fn blkdiag(mats: &[DMatrix<f64>], n: usize, m: usize, q: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n * q, m * q);
    for (l, mat) in mats.iter().enumerate() {
        for i in 0..n {
            for k in 0..m {
                out[(l * n + i, l * m + k)] = mat[(i, k)];
            }
        }
    }
    out
}

/// diag(alpha) as a stacked vector.
fn alpha_stacked(model: &MultilayerModel) -> DVector<f64> {
    let (n, q) = (model.n(), model.q());
    DVector::from_fn(n * q, |idx, _| model.alpha_of(idx / n, idx % n))
}

/// Row sums of a stacked block-diagonal envelope, as a diagonal vector.
fn sigma_of(mats: &[DMatrix<f64>], n: usize, m: usize, q: usize) -> DVector<f64> {
    DVector::from_fn(n * q, |idx, _| {
        let (l, i) = (idx / n, idx % n);
        (0..m).map(|k| mats[l][(i, k)]).sum()
    })
}

/// Componentwise fixed-point bounds from the envelope matrices
/// phi_lower <= B(x) <= phi_upper:
///
/// lower = max{ Z((I-A)s + A phi_lower y - A Sigma_upper s), 0 }
/// upper = min{ Z((I-A)s + A phi_upper y - A Sigma_lower s), 1 }
pub fn bounds(model: &MultilayerModel) -> Result<FixedPointBounds> {
    let (n, m, q) = (model.n(), model.m(), model.q());
    let lower_mats: Vec<_> = (0..q).map(|l| model.rule().lower_envelope(l)).collect();
    let upper_mats: Vec<_> = (0..q).map(|l| model.rule().upper_envelope(l)).collect();
    for l in 0..q {
        for i in 0..n {
            for k in 0..m {
                if lower_mats[l][(i, k)] > upper_mats[l][(i, k)] + 1e-15 {
                    return Err(Error::BoundsInverted {
                        layer: l + 1,
                        agent: i + 1,
                        source_index: k + 1,
                    });
                }
            }
        }
    }

    let z = resolvent(model)?;
    let alpha = alpha_stacked(model);
    let s = model.s();
    let y = model.y();

    let phi_l = blkdiag(&lower_mats, n, m, q);
    let phi_u = blkdiag(&upper_mats, n, m, q);
    let sigma_l = sigma_of(&lower_mats, n, m, q);
    let sigma_u = sigma_of(&upper_mats, n, m, q);

    let base = DVector::from_fn(n * q, |idx, _| (1.0 - alpha[idx]) * s[idx]);
    let lo_rhs = &base
        + DVector::from_fn(n * q, |idx, _| {
            alpha[idx] * ((&phi_l * y)[idx] - sigma_u[idx] * s[idx])
        });
    let hi_rhs = &base
        + DVector::from_fn(n * q, |idx, _| {
            alpha[idx] * ((&phi_u * y)[idx] - sigma_l[idx] * s[idx])
        });

    let lower = (&z * lo_rhs).map(|v| v.max(0.0));
    let upper = (&z * hi_rhs).map(|v| v.min(1.0));
    Ok(FixedPointBounds {
        lower: StackedState::new(lower, n, q)?,
        upper: StackedState::new(upper, n, q)?,
    })
}

/// Whether coordinate (i, k, layer r) contributes to any regime row: some
/// layer l must combine a positive gamma, a positive mismatch weight on r,
/// and a nonzero innate-source gap.
fn coord_relevant(model: &MultilayerModel, i: usize, k: usize, r: usize) -> bool {
    if let SourceRule::Affine { gamma, c, .. } = model.rule() {
        for l in 0..model.q() {
            let g = gamma[l][(i, k)];
            if g > 0.0
                && c.get(l, i, k)[r] > 0.0
                && (model.s_of(l, i) - model.y_of(l, k)).abs() > 0.0
            {
                return true;
            }
        }
    }
    false
}

/// Locks sign coordinates using the bound intervals: y above the upper bound
/// forces -1, y below the lower bound forces +1; anything else stays free
/// unless the coordinate never enters the dynamics.
pub fn fix_signs(model: &MultilayerModel, b: &FixedPointBounds) -> SignPattern {
    let (n, m, q) = (model.n(), model.m(), model.q());
    let (omega, gamma) = match model.rule() {
        SourceRule::Affine { omega, gamma, .. } => (omega, gamma),
        _ => return SignPattern::default(),
    };
    let mut pairs = Vec::new();
    for i in 0..n {
        for k in 0..m {
            let active =
                (0..q).any(|l| omega[l][(i, k)] > 0.0 || gamma[l][(i, k)] > 0.0);
            if !active {
                continue;
            }
            let slots = (0..q)
                .map(|r| {
                    if !coord_relevant(model, i, k, r) {
                        return SignSlot::Irrelevant;
                    }
                    let yv = model.y_of(r, k);
                    let xu = b.upper.get(r, i);
                    let xl = b.lower.get(r, i);
                    if yv > xu {
                        SignSlot::Locked(-1)
                    } else if yv < xl {
                        SignSlot::Locked(1)
                    } else {
                        SignSlot::Free
                    }
                })
                .collect();
            pairs.push(ActivePair {
                agent: i,
                source: k,
                slots,
            });
        }
    }
    SignPattern { pairs }
}

/// Assembles the affine regime for a complete sign assignment:
/// W_a = A(W + R^x), B_a = A(Omega + R^y), A_a = I - A - A Sigma_Omega,
/// with the regime rows built from Theta_{i,k} = diag(theta_{i,k}).
pub fn build_regime(model: &MultilayerModel, assignment: &SignAssignment) -> Result<AffineRegime> {
    let (omega, gamma, c) = match model.rule() {
        SourceRule::Affine { omega, gamma, c } => (omega, gamma, c),
        _ => {
            return Err(Error::AffineRuleRequired {
                op: "build_regime",
            })
        }
    };
    let (n, m, q) = (model.n(), model.m(), model.q());
    let report_kappa = affine_kappa(model, gamma);
    if report_kappa >= 1.0 {
        return Err(Error::NotContractive {
            kappa_aff: report_kappa,
        });
    }

    let nq = n * q;
    let mq = m * q;
    let mut rx = DMatrix::zeros(nq, nq);
    let mut ry = DMatrix::zeros(nq, mq);
    for pair in &assignment.pairs {
        let (i, k) = (pair.agent, pair.source);
        for l in 0..q {
            let g = gamma[l][(i, k)];
            if g == 0.0 {
                continue;
            }
            let gap = model.s_of(l, i) - model.y_of(l, k);
            if gap == 0.0 {
                continue;
            }
            let row = stacked_index(n, l, i);
            let weights = c.get(l, i, k);
            for r in 0..q {
                let theta = pair.signs[r].0 as f64;
                let coeff = weights[r] * theta;
                if coeff == 0.0 {
                    continue;
                }
                rx[(row, stacked_index(n, r, i))] += g * gap * coeff;
                ry[(row, stacked_index(m, r, k))] += g * (-gap) * coeff;
            }
        }
    }

    let alpha = alpha_stacked(model);
    let w = {
        // Supra-social W (without A): block (l, j) = Lambda_{l,j} W_j.
        let mut out = DMatrix::zeros(nq, nq);
        for l in 0..q {
            for j in 0..q {
                for i in 0..n {
                    let coupling = model.lambda(l, j)[i];
                    if coupling == 0.0 {
                        continue;
                    }
                    for a in 0..n {
                        out[(stacked_index(n, l, i), stacked_index(n, j, a))] =
                            coupling * model.w(j)[(i, a)];
                    }
                }
            }
        }
        out
    };

    let mut w_a = w + rx;
    let omega_blk = blkdiag(omega, n, m, q);
    let mut b_a = omega_blk + ry;
    for r in 0..nq {
        let a = alpha[r];
        for cidx in 0..nq {
            w_a[(r, cidx)] *= a;
        }
        for cidx in 0..mq {
            b_a[(r, cidx)] *= a;
        }
    }

    let sigma_omega = sigma_of(omega, n, m, q);
    let mut a_a = DMatrix::zeros(nq, nq);
    for r in 0..nq {
        a_a[(r, r)] = 1.0 - alpha[r] * (1.0 + sigma_omega[r]);
    }

    debug_assert!(
        matrix_inf_norm(&w_a) <= report_kappa + 1e-9,
        "regime row sums exceeded kappa_aff"
    );

    Ok(AffineRegime {
        w_a,
        b_a,
        a_a,
        assignment: assignment.clone(),
    })
}

impl AffineRegime {
    /// Solves (I - W_a) x = A_a s + B_a y with iterative refinement.
    pub fn solve(&self, model: &MultilayerModel) -> Result<StackedState> {
        let nq = model.n() * model.q();
        let m = DMatrix::identity(nq, nq) - &self.w_a;
        let rhs = &self.a_a * model.s() + &self.b_a * model.y();
        let lu = m.clone().lu();
        let mut x = lu
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem("I - W_a".into()))?;
        for _ in 0..3 {
            let res = &rhs - &m * &x;
            if res.amax() <= SOLVE_RESIDUAL {
                break;
            }
            if let Some(dx) = lu.solve(&res) {
                x += dx;
            } else {
                break;
            }
        }
        // Regime solutions for the true pattern live in [0,1]; stray
        // candidates may poke out, so clamp before wrapping (the consistency
        // check runs on the raw values).
        let clamped = x.map(|v| v.clamp(0.0, 1.0));
        StackedState::new(clamped, model.n(), model.q())
    }

    pub fn inf_norm_w(&self) -> f64 {
        matrix_inf_norm(&self.w_a)
    }

    fn solve_raw(&self, model: &MultilayerModel) -> Result<DVector<f64>> {
        let nq = model.n() * model.q();
        let m = DMatrix::identity(nq, nq) - &self.w_a;
        let rhs = &self.a_a * model.s() + &self.b_a * model.y();
        let lu = m.clone().lu();
        let mut x = lu
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem("I - W_a".into()))?;
        for _ in 0..3 {
            let res = &rhs - &m * &x;
            if res.amax() <= SOLVE_RESIDUAL {
                break;
            }
            if let Some(dx) = lu.solve(&res) {
                x += dx;
            } else {
                break;
            }
        }
        Ok(x)
    }
}

fn affine_kappa(model: &MultilayerModel, gamma: &[DMatrix<f64>]) -> f64 {
    let mut k: f64 = 0.0;
    for l in 0..model.q() {
        for i in 0..model.n() {
            let sum: f64 = (0..model.m())
                .map(|kk| gamma[l][(i, kk)] * (model.y_of(l, kk) - model.s_of(l, i)).abs())
                .sum();
            k = k.max(model.alpha_of(l, i) * (1.0 + sum));
        }
    }
    k
}

/// Signs realized by `x` versus the assignment; returns the count of checked
/// coordinates that disagree (near-zero gaps satisfy either sign).
fn count_sign_mismatches(
    model: &MultilayerModel,
    assignment: &SignAssignment,
    x: &DVector<f64>,
) -> usize {
    let (n, m) = (model.n(), model.m());
    let mut mismatches = 0;
    for pair in &assignment.pairs {
        for (r, &(sign, checked)) in pair.signs.iter().enumerate() {
            if !checked {
                continue;
            }
            let diff =
                x[stacked_index(n, r, pair.agent)] - model.y()[stacked_index(m, r, pair.source)];
            if diff.abs() < SIGN_ZERO_TOL {
                continue;
            }
            if (diff > 0.0) != (sign > 0) {
                mismatches += 1;
            }
        }
    }
    mismatches
}

/// Exact affine fixed point by bound-pruned sign-consistency search.
///
/// Locks what the bounds decide, enumerates {-1,+1} over the remaining
/// ambiguous coordinates (most ambiguous flipped first, starting from the
/// interval-midpoint heuristic), and returns the candidate whose realized
/// signs match its pattern. Beyond 2^20 candidates the iterative fixed point
/// is returned instead, tagged accordingly.
pub fn solve_affine_exact(model: &MultilayerModel) -> Result<AffineSolve> {
    let gamma = match model.rule() {
        SourceRule::Affine { gamma, .. } => gamma,
        _ => {
            return Err(Error::AffineRuleRequired {
                op: "solve_affine_exact",
            })
        }
    };
    let kappa_aff = affine_kappa(model, gamma);
    if kappa_aff >= 1.0 {
        return Err(Error::NotContractive { kappa_aff });
    }

    let b = bounds(model)?;
    let pattern = fix_signs(model, &b);
    let locked_fraction = pattern.locked_fraction();
    let free = pattern.free_coords();

    if free.is_empty() {
        let assignment = pattern.to_assignment().expect("no free coordinates");
        let regime = build_regime(model, &assignment)?;
        let x = regime.solve_raw(model)?;
        if count_sign_mismatches(model, &assignment, &x) > 0 {
            return Err(Error::NoConsistentPattern {
                details: "locked pattern failed its own consistency check; \
                          bounds may sit on a sign boundary"
                    .into(),
            });
        }
        return Ok(AffineSolve {
            state: StackedState::new(x.map(|v| v.clamp(0.0, 1.0)), model.n(), model.q())?,
            method: SolveMethod::ClosedForm,
            bounds: b,
            regimes_tested: 1,
            locked_fraction,
        });
    }

    if free.len() > MAX_FREE_COORDS {
        let traj = simulate(
            model,
            &model.innate_state(),
            &SimOptions {
                tol: 1e-11,
                max_iter: 1_000_000,
                detect_cycles: false,
                record_history: false,
            },
        )?;
        if traj.status != Status::Converged {
            return Err(Error::NoConsistentPattern {
                details: format!(
                    "search dimension {} exceeds the enumeration cap and iteration did not converge",
                    free.len()
                ),
            });
        }
        return Ok(AffineSolve {
            state: traj.final_state().clone(),
            method: SolveMethod::Iterative,
            bounds: b,
            regimes_tested: 0,
            locked_fraction,
        });
    }

    // Heuristic sign per free coordinate from the bound-interval midpoint;
    // coordinates where y sits closest to the midpoint are least trustworthy
    // and get flipped first.
    let mut order: Vec<(usize, f64, i8)> = free
        .iter()
        .enumerate()
        .map(|(slot, &(i, k, r))| {
            let mid = 0.5 * (b.lower.get(r, i) + b.upper.get(r, i));
            let yv = model.y_of(r, k);
            let heuristic: i8 = if mid - yv >= 0.0 { 1 } else { -1 };
            (slot, (yv - mid).abs(), heuristic)
        })
        .collect();
    order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));

    let d = free.len();
    let total: usize = 1 << d;
    let search = |mask: usize| -> Option<Result<(usize, DVector<f64>, SignAssignment)>> {
        let mut signs = vec![0i8; d];
        for (bit, &(slot, _, heuristic)) in order.iter().enumerate() {
            let flip = (mask >> bit) & 1 == 1;
            signs[slot] = if flip { -heuristic } else { heuristic };
        }
        let assignment = pattern.assignment_with(&signs);
        let regime = match build_regime(model, &assignment) {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        let x = match regime.solve_raw(model) {
            Ok(x) => x,
            Err(e) => return Some(Err(e)),
        };
        if count_sign_mismatches(model, &assignment, &x) == 0 {
            Some(Ok((mask, x, assignment)))
        } else {
            None
        }
    };

    match exec::find_map_first(total, search) {
        Some(Ok((mask, x, _assignment))) => Ok(AffineSolve {
            state: StackedState::new(x.map(|v| v.clamp(0.0, 1.0)), model.n(), model.q())?,
            method: SolveMethod::SignSearch,
            bounds: b,
            regimes_tested: mask + 1,
            locked_fraction,
        }),
        Some(Err(e)) => Err(e),
        None => {
            // Cold path: rank all candidates by how badly they missed.
            let mut misses: Vec<(usize, usize)> = (0..total)
                .map(|mask| {
                    let mut signs = vec![0i8; d];
                    for (bit, &(slot, _, heuristic)) in order.iter().enumerate() {
                        let flip = (mask >> bit) & 1 == 1;
                        signs[slot] = if flip { -heuristic } else { heuristic };
                    }
                    let assignment = pattern.assignment_with(&signs);
                    let count = build_regime(model, &assignment)
                        .and_then(|r| r.solve_raw(model))
                        .map(|x| count_sign_mismatches(model, &assignment, &x))
                        .unwrap_or(usize::MAX);
                    (mask, count)
                })
                .collect();
            misses.sort_by_key(|&(_, c)| c);
            let detail = misses
                .iter()
                .take(2)
                .map(|(mask, c)| format!("mask {mask:#b} with {c} sign mismatches"))
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::NoConsistentPattern { details: detail })
        }
    }
}

/// The closed-form specialization: applicable exactly when the bounds lock
/// every relevant coordinate (a single candidate remains).
pub fn closed_form(model: &MultilayerModel) -> Result<ClosedFormOutcome> {
    if !model.rule().is_affine() {
        return Err(Error::AffineRuleRequired { op: "closed_form" });
    }
    let report = validate(model);
    if let Some(kappa_aff) = report.kappa_aff {
        if kappa_aff >= 1.0 {
            return Err(Error::NotContractive { kappa_aff });
        }
    }
    let b = bounds(model)?;
    let pattern = fix_signs(model, &b);
    let free = pattern.free_coords();
    if !free.is_empty() {
        return Ok(ClosedFormOutcome::NotApplicable { free_coords: free });
    }
    let assignment = pattern.to_assignment().expect("fully locked");
    let regime = build_regime(model, &assignment)?;
    let state = regime.solve(model)?;
    Ok(ClosedFormOutcome::Applicable(AffineSolve {
        state,
        method: SolveMethod::ClosedForm,
        bounds: b,
        regimes_tested: 1,
        locked_fraction: 1.0,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule::MismatchWeights;
    use approx::assert_relative_eq;

    fn scalar_model(alpha: f64, omega: f64, gamma: f64) -> MultilayerModel {
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
    fn scalar_resolvent_is_geometric_series() {
        let model = scalar_model(0.5, 0.0, 0.0);
        let z = resolvent(&model).unwrap();
        assert_relative_eq!(z[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn resolvent_identity_when_alpha_zero() {
        let model = scalar_model(0.0, 0.0, 0.0);
        let z = resolvent(&model).unwrap();
        assert_relative_eq!(z[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn resolvent_refuses_alpha_one() {
        let model = scalar_model(1.0, 0.0, 0.0);
        assert!(matches!(
            resolvent(&model).unwrap_err(),
            Error::AlphaNotBelowOne { .. }
        ));
    }

    #[test]
    fn state_independent_rule_gives_tight_bounds() {
        // Gamma = 0 makes the envelopes coincide: bounds pin the fixed point.
        let model = scalar_model(0.5, 0.4, 0.0);
        let b = bounds(&model).unwrap();
        assert_relative_eq!(b.lower.get(0, 0), b.upper.get(0, 0), epsilon = 1e-12);
        let solve = solve_affine_exact(&model).unwrap();
        assert_relative_eq!(solve.state.get(0, 0), b.lower.get(0, 0), epsilon = 1e-10);
        assert_eq!(solve.method, SolveMethod::ClosedForm);
    }

    #[test]
    fn closed_form_reports_free_coordinates() {
        // y inside the bound interval leaves the sign ambiguous.
        let model = MultilayerModel::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::from_element(1, 0.5)],
            vec![vec![DVector::from_element(1, 1.0)]],
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 0.5),
            SourceRule::Affine {
                omega: vec![DMatrix::from_element(1, 1, 0.4)],
                gamma: vec![DMatrix::from_element(1, 1, 0.4)],
                c: MismatchWeights::layer_local(1, 1, 1),
            },
        )
        .unwrap();
        // s = y makes every coordinate irrelevant instead: gap is zero.
        match closed_form(&model).unwrap() {
            ClosedFormOutcome::Applicable(sol) => {
                assert_relative_eq!(sol.state.get(0, 0), 0.5, epsilon = 1e-10);
            }
            ClosedFormOutcome::NotApplicable { .. } => panic!("expected applicable"),
        }

        let model2 = model
            .with_source_opinions(DVector::from_element(1, 0.6))
            .unwrap();
        match closed_form(&model2).unwrap() {
            ClosedFormOutcome::NotApplicable { free_coords } => {
                assert_eq!(free_coords, vec![(0, 0, 0)]);
            }
            ClosedFormOutcome::Applicable(_) => panic!("expected ambiguous sign"),
        }
    }

    #[test]
    fn sign_search_crosses_ambiguous_coordinate() {
        // Same model: the search must still find the unique fixed point.
        let model = MultilayerModel::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::from_element(1, 0.5)],
            vec![vec![DVector::from_element(1, 1.0)]],
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 0.6),
            SourceRule::Affine {
                omega: vec![DMatrix::from_element(1, 1, 0.4)],
                gamma: vec![DMatrix::from_element(1, 1, 0.4)],
                c: MismatchWeights::layer_local(1, 1, 1),
            },
        )
        .unwrap();
        let solve = solve_affine_exact(&model).unwrap();
        assert_eq!(solve.method, SolveMethod::SignSearch);
        let res = crate::dynamics::residual(&model, &solve.state).unwrap();
        assert!(res < 1e-9, "residual {res}");
    }

    #[test]
    fn non_affine_rules_are_refused() {
        let model = MultilayerModel::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::from_element(1, 0.5)],
            vec![vec![DVector::from_element(1, 1.0)]],
            DVector::from_element(1, 0.5),
            DVector::from_element(1, 1.0),
            SourceRule::BoundedConfidence {
                p: vec![DMatrix::from_element(1, 1, 0.3)],
                eps: DVector::from_element(1, 0.5),
                c: MismatchWeights::layer_local(1, 1, 1),
            },
        )
        .unwrap();
        assert!(matches!(
            solve_affine_exact(&model).unwrap_err(),
            Error::AffineRuleRequired { .. }
        ));
    }
}
