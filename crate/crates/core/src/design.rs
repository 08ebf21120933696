//! Source-strategy evaluation and optimization: the steady-state objective,
//! percentage-change summaries, scenario construction from access/bias
//! indicators, box-constrained pattern search, and k-agent access subsets.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{simulate, SimOptions, Status};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::MultilayerModel;
use crate::rule::{MismatchWeights, SourceRule};
use crate::stacked::{stacked_index, StackedState};

/// Above this many subsets the search switches from exhaustive enumeration to
/// greedy construction plus pairwise swap improvement.
const EXHAUSTIVE_SUBSET_CAP: usize = 50_000;
/// Grid verification is skipped when the 5-per-axis grid would exceed this.
const GRID_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone)]
pub struct OptimizerSettings {
    /// Pattern-search starts drawn from a low-discrepancy sequence.
    pub starts: usize,
    /// Per-coordinate step below which a search terminates.
    pub step_tol: f64,
    /// Objective-evaluation budget per start.
    pub max_evals_per_start: usize,
    /// Audit the result against a 5-per-axis grid and polish if beaten.
    pub grid_verify: bool,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            starts: 8,
            step_tol: 1e-4,
            max_evals_per_start: 600,
            grid_verify: true,
            seed: 0,
        }
    }
}

/// One source-design experiment: who hears the source, who filters it through
/// confirmation bias, the admissible strategy box, and what to optimize.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    /// Access indicators, one per agent.
    pub access: Vec<bool>,
    /// Bias indicators; bias without access is meaningless and rejected.
    pub bias: Vec<bool>,
    /// Per-layer strategy bounds, a box inside [0,1]^q.
    pub box_bounds: Vec<[f64; 2]>,
    /// 0-based layer whose population mean is the objective.
    pub objective_layer: usize,
    pub direction: Direction,
    /// Safety factor in the access-to-influence mapping (0.9 unless
    /// configured otherwise).
    pub omega_factor: f64,
    /// When set, access is chosen by a k-agent subset search instead of the
    /// access vector.
    pub subset_k: Option<usize>,
    pub optimizer: OptimizerSettings,
}

impl ScenarioSpec {
    /// Uniform scenario over all agents with the default box and optimizer.
    pub fn uniform(n: usize, q: usize, access: bool, bias: bool, objective_layer: usize) -> Self {
        Self {
            access: vec![access; n],
            bias: vec![bias && access; n],
            box_bounds: vec![[0.0, 1.0]; q],
            objective_layer,
            direction: Direction::Minimize,
            omega_factor: 0.9,
            subset_k: None,
            optimizer: OptimizerSettings::default(),
        }
    }

    pub fn check(&self, model: &MultilayerModel) -> Result<()> {
        let (n, q) = (model.n(), model.q());
        if self.access.len() != n || self.bias.len() != n {
            return Err(Error::ScenarioInvalid(format!(
                "access/bias must list every agent (expected {n})"
            )));
        }
        for i in 0..n {
            if self.bias[i] && !self.access[i] {
                return Err(Error::ScenarioInvalid(format!(
                    "agent {} has bias without access",
                    i + 1
                )));
            }
        }
        if self.box_bounds.len() != q {
            return Err(Error::ScenarioInvalid(format!(
                "box must bound every layer (expected {q})"
            )));
        }
        for (l, b) in self.box_bounds.iter().enumerate() {
            if !(0.0..=1.0).contains(&b[0]) || !(0.0..=1.0).contains(&b[1]) || b[0] > b[1] {
                return Err(Error::ScenarioInvalid(format!(
                    "layer {} box [{}, {}] is not inside [0,1]",
                    l + 1,
                    b[0],
                    b[1]
                )));
            }
        }
        if self.objective_layer >= q {
            return Err(Error::ScenarioInvalid(format!(
                "objective layer {} out of range (q = {q})",
                self.objective_layer + 1
            )));
        }
        if let Some(k) = self.subset_k {
            if k == 0 || k > n {
                return Err(Error::ScenarioInvalid(format!(
                    "subset size {k} out of range (n = {n})"
                )));
            }
        }
        if self.omega_factor < 0.0 {
            return Err(Error::ScenarioInvalid(
                "omega_factor must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn lower_corner(&self) -> Vec<f64> {
        self.box_bounds.iter().map(|b| b[0]).collect()
    }
}

/// Outcome of one design run.
#[derive(Debug, Clone)]
pub struct DesignResult {
    /// Optimized strategy; `None` when the objective ignores the source.
    pub y_star: Option<Vec<f64>>,
    pub j_star: f64,
    /// Per-layer percentage change of the steady-state mean against the
    /// innate mean; `None` where the innate mean is zero.
    pub delta_percent: Vec<Option<f64>>,
    /// Objective evaluations spent.
    pub evaluations: usize,
    /// Access subset (0-based agents) when a subset search ran.
    pub subset: Option<Vec<usize>>,
    /// Every evaluated (y, J) pair when tracing was requested.
    pub trace: Option<Vec<(Vec<f64>, f64)>>,
}

/// Builds the single-source scenario model for strategy `y`:
/// omega_l(i) = factor * access_i * (1 - alpha_l(i)) / alpha_l(i) (zero when
/// alpha is zero), gamma = bias ∘ omega, and mismatch weights from the
/// model's own cross-topic coupling rows.
pub fn scenario_model(
    base: &MultilayerModel,
    scenario: &ScenarioSpec,
    access: &[bool],
    bias: &[bool],
    y: &[f64],
) -> Result<MultilayerModel> {
    let (n, q) = (base.n(), base.q());
    if y.len() != q {
        return Err(Error::DimensionMismatch {
            what: "strategy y".into(),
            expected: q,
            actual: y.len(),
        });
    }
    let mut omega = vec![DMatrix::zeros(n, 1); q];
    let mut gamma = vec![DMatrix::zeros(n, 1); q];
    for l in 0..q {
        for i in 0..n {
            let a = base.alpha_of(l, i);
            if access[i] && a != 0.0 {
                let w = scenario.omega_factor * (1.0 - a) / a;
                omega[l][(i, 0)] = w;
                if bias[i] {
                    gamma[l][(i, 0)] = w;
                }
            }
        }
    }
    let c = MismatchWeights::new(
        (0..q)
            .map(|l| {
                (0..n)
                    .map(|i| vec![(0..q).map(|j| base.lambda(l, j)[i]).collect()])
                    .collect()
            })
            .collect(),
        n,
        1,
        q,
    )?;
    let rule = SourceRule::Affine { omega, gamma, c };
    let w = (0..q).map(|l| base.w(l).clone()).collect();
    let alpha = (0..q).map(|l| base.alpha(l).clone()).collect();
    let lambda = (0..q)
        .map(|l| (0..q).map(|j| base.lambda(l, j).clone()).collect())
        .collect();
    MultilayerModel::new(
        w,
        alpha,
        lambda,
        base.s().clone(),
        DVector::from_column_slice(y),
        rule,
    )
}

/// Checks that the scenario's induced parameters stay contractive for every
/// strategy in the box. The affine factor alpha (1 + sum gamma) does not
/// depend on y, so one scan suffices.
pub fn contraction_preaudit(
    base: &MultilayerModel,
    scenario: &ScenarioSpec,
    access: &[bool],
    bias: &[bool],
) -> Result<()> {
    let (n, q) = (base.n(), base.q());
    let mut worst: f64 = 0.0;
    for l in 0..q {
        for i in 0..n {
            let a = base.alpha_of(l, i);
            if a == 0.0 {
                continue;
            }
            let omega = if access[i] {
                scenario.omega_factor * (1.0 - a) / a
            } else {
                0.0
            };
            let gamma = if bias[i] { omega } else { 0.0 };
            // sub-stochasticity: a (1 + omega) <= 1
            if a * (1.0 + omega) > 1.0 + 1e-12 {
                return Err(Error::SubStochasticityViolated {
                    layer: l + 1,
                    agent: i + 1,
                    value: a * (1.0 + omega),
                });
            }
            worst = worst.max(a * (1.0 + gamma));
        }
    }
    if worst >= 1.0 {
        return Err(Error::NotContractive { kappa_aff: worst });
    }
    Ok(())
}

fn mean_of_layer(x: &StackedState, layer: usize) -> f64 {
    let n = x.n();
    (0..n).map(|i| x.get(layer, i)).sum::<f64>() / n as f64
}

/// Fixed point of the scenario model at strategy `y` (iterated to 1e-8).
pub fn fixed_point_for(
    base: &MultilayerModel,
    scenario: &ScenarioSpec,
    access: &[bool],
    bias: &[bool],
    y: &[f64],
) -> Result<StackedState> {
    let model = scenario_model(base, scenario, access, bias, y)?;
    let traj = simulate(
        &model,
        &model.innate_state(),
        &SimOptions {
            tol: 1e-8,
            max_iter: 100_000,
            detect_cycles: false,
            record_history: false,
        },
    )?;
    if traj.status != Status::Converged {
        return Err(Error::NotContractive { kappa_aff: f64::NAN });
    }
    Ok(traj.final_state().clone())
}

/// Steady-state population mean of the objective layer at strategy `y`.
pub fn objective(base: &MultilayerModel, scenario: &ScenarioSpec, y: &[f64]) -> Result<f64> {
    scenario.check(base)?;
    contraction_preaudit(base, scenario, &scenario.access, &scenario.bias)?;
    let x = fixed_point_for(base, scenario, &scenario.access, &scenario.bias, y)?;
    Ok(mean_of_layer(&x, scenario.objective_layer))
}

/// Percentage relative steady-state change per layer:
/// 100 (mean(x*, l) - mean(s, l)) / mean(s, l), undefined when the innate
/// mean vanishes.
pub fn delta_percent(x_star: &StackedState, s: &DVector<f64>) -> Vec<Option<f64>> {
    let (n, q) = (x_star.n(), x_star.q());
    (0..q)
        .map(|l| {
            let s_mean = (0..n).map(|i| s[stacked_index(n, l, i)]).sum::<f64>() / n as f64;
            if s_mean == 0.0 {
                None
            } else {
                let x_mean = mean_of_layer(x_star, l);
                Some(100.0 * (x_mean - s_mean) / s_mean)
            }
        })
        .collect()
}

fn halton(index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn halton_point(index: usize, box_bounds: &[[f64; 2]]) -> Vec<f64> {
    box_bounds
        .iter()
        .enumerate()
        .map(|(dim, b)| {
            let u = halton(index, PRIMES[dim % PRIMES.len()]);
            b[0] + u * (b[1] - b[0])
        })
        .collect()
}

struct Objective<'a> {
    base: &'a MultilayerModel,
    scenario: &'a ScenarioSpec,
    access: &'a [bool],
    bias: &'a [bool],
    sign: f64,
    evals: AtomicUsize,
    trace: Option<Mutex<Vec<(Vec<f64>, f64)>>>,
}

impl Objective<'_> {
    /// Signed objective (maximization runs as minimization of -J).
    fn eval(&self, y: &[f64]) -> Result<f64> {
        let x = fixed_point_for(self.base, self.scenario, self.access, self.bias, y)?;
        let j = mean_of_layer(&x, self.scenario.objective_layer);
        self.evals.fetch_add(1, Ordering::Relaxed);
        if let Some(trace) = &self.trace {
            trace.lock().unwrap().push((y.to_vec(), j));
        }
        Ok(self.sign * j)
    }
}

/// Compass pattern search with box projection: polls +-h along every
/// coordinate, moves to the best strict improvement (expanding that step),
/// halves all steps on failure, and stops once every step drops below the
/// tolerance or the budget runs out.
fn pattern_search(
    f: &Objective<'_>,
    start: Vec<f64>,
    box_bounds: &[[f64; 2]],
    step_tol: f64,
    max_evals: usize,
) -> Result<(Vec<f64>, f64)> {
    let dims = start.len();
    let mut x = start;
    let mut fx = f.eval(&x)?;
    let mut steps: Vec<f64> = box_bounds.iter().map(|b| (b[1] - b[0]) / 4.0).collect();
    let mut used = 1usize;

    loop {
        if steps
            .iter()
            .zip(box_bounds)
            .all(|(h, b)| *h < step_tol || b[1] == b[0])
        {
            return Ok((x, fx));
        }
        if used >= max_evals {
            return Ok((x, fx));
        }
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for dim in 0..dims {
            let (lo, hi) = (box_bounds[dim][0], box_bounds[dim][1]);
            if hi == lo || steps[dim] < step_tol {
                continue;
            }
            for sign in [1.0, -1.0] {
                let cand_coord = (x[dim] + sign * steps[dim]).clamp(lo, hi);
                if (cand_coord - x[dim]).abs() < 1e-15 {
                    continue;
                }
                let mut cand = x.clone();
                cand[dim] = cand_coord;
                let fc = f.eval(&cand)?;
                used += 1;
                if fc < fx && best.as_ref().map_or(true, |(_, _, fb)| fc < *fb) {
                    best = Some((dim, cand, fc));
                }
                if used >= max_evals {
                    break;
                }
            }
            if used >= max_evals {
                break;
            }
        }
        match best {
            Some((dim, cand, fc)) => {
                x = cand;
                fx = fc;
                let width = box_bounds[dim][1] - box_bounds[dim][0];
                steps[dim] = (steps[dim] * 2.0).min(width / 2.0);
            }
            None => {
                for h in steps.iter_mut() {
                    *h *= 0.5;
                }
            }
        }
    }
}

fn run_optimizer(
    base: &MultilayerModel,
    scenario: &ScenarioSpec,
    access: &[bool],
    bias: &[bool],
    settings: &OptimizerSettings,
    want_trace: bool,
) -> Result<(Vec<f64>, f64, usize, Option<Vec<(Vec<f64>, f64)>>)> {
    contraction_preaudit(base, scenario, access, bias)?;
    let q = base.q();
    let sign = match scenario.direction {
        Direction::Minimize => 1.0,
        Direction::Maximize => -1.0,
    };
    let obj = Objective {
        base,
        scenario,
        access,
        bias,
        sign,
        evals: AtomicUsize::new(0),
        trace: want_trace.then(|| Mutex::new(Vec::new())),
    };

    // Flat objective: nobody hears the source, one evaluation settles it.
    if access.iter().all(|&a| !a) {
        let corner = scenario.lower_corner();
        let j = obj.eval(&corner)?;
        let trace = obj.trace.map(|m| m.into_inner().unwrap());
        return Ok((corner, sign * j, 1, trace));
    }

    let starts: Vec<Vec<f64>> = (1..=settings.starts.max(1))
        .map(|i| halton_point(i, &scenario.box_bounds))
        .collect();
    let results = exec::try_map_indexed(starts.len(), |idx| {
        pattern_search(
            &obj,
            starts[idx].clone(),
            &scenario.box_bounds,
            settings.step_tol,
            settings.max_evals_per_start,
        )
    })?;
    let (mut best_y, mut best_f) = results
        .into_iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("at least one start");

    if settings.grid_verify {
        let per_axis = 5usize;
        let total = per_axis.checked_pow(q as u32).unwrap_or(usize::MAX);
        if total <= GRID_CAP {
            let grid_results = exec::try_map_indexed(total, |flat| {
                let mut idx = flat;
                let y: Vec<f64> = scenario
                    .box_bounds
                    .iter()
                    .map(|b| {
                        let t = idx % per_axis;
                        idx /= per_axis;
                        b[0] + (b[1] - b[0]) * t as f64 / (per_axis - 1) as f64
                    })
                    .collect();
                obj.eval(&y).map(|f| (y, f))
            })?;
            let (grid_y, grid_f) = grid_results
                .into_iter()
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .expect("grid nonempty");
            if grid_f < best_f {
                let (py, pf) = pattern_search(
                    &obj,
                    grid_y,
                    &scenario.box_bounds,
                    settings.step_tol,
                    settings.max_evals_per_start,
                )?;
                if pf < best_f {
                    best_y = py;
                    best_f = pf;
                }
            }
        }
    }

    let evaluations = obj.evals.load(Ordering::Relaxed);
    let trace = obj.trace.map(|m| m.into_inner().unwrap());
    Ok((best_y, sign * best_f, evaluations, trace))
}

fn finish_result(
    base: &MultilayerModel,
    scenario: &ScenarioSpec,
    access: &[bool],
    bias: &[bool],
    y_star: Option<Vec<f64>>,
    j_star: f64,
    evaluations: usize,
    subset: Option<Vec<usize>>,
    trace: Option<Vec<(Vec<f64>, f64)>>,
) -> Result<DesignResult> {
    let y_eval = y_star.clone().unwrap_or_else(|| scenario.lower_corner());
    let x = fixed_point_for(base, scenario, access, bias, &y_eval)?;
    Ok(DesignResult {
        y_star,
        j_star,
        delta_percent: delta_percent(&x, base.s()),
        evaluations,
        subset,
        trace,
    })
}

/// Box-constrained strategy optimization with multi-start pattern search and
/// a grid audit. Deterministic for fixed settings.
pub fn optimize(base: &MultilayerModel, scenario: &ScenarioSpec) -> Result<DesignResult> {
    optimize_traced(base, scenario, false)
}

pub fn optimize_traced(
    base: &MultilayerModel,
    scenario: &ScenarioSpec,
    want_trace: bool,
) -> Result<DesignResult> {
    scenario.check(base)?;
    let no_access = scenario.access.iter().all(|&a| !a);
    let (y, j, evals, trace) = run_optimizer(
        base,
        scenario,
        &scenario.access,
        &scenario.bias,
        &scenario.optimizer,
        want_trace,
    )?;
    let y_star = if no_access { None } else { Some(y) };
    finish_result(
        base,
        scenario,
        &scenario.access,
        &scenario.bias,
        y_star,
        j,
        evals,
        None,
        trace,
    )
}

fn better(direction: Direction, a: f64, b: f64) -> bool {
    match direction {
        Direction::Minimize => a < b,
        Direction::Maximize => a > b,
    }
}

/// Optimizes over k-agent access subsets: exhaustive when the count is
/// manageable, otherwise greedy construction plus pairwise swap improvement
/// with seeded restarts. The result is a heuristic, not a global optimum.
pub fn subset_search(base: &MultilayerModel, scenario: &ScenarioSpec, k: usize) -> Result<DesignResult> {
    scenario.check(base)?;
    let n = base.n();
    if k > n {
        return Err(Error::ScenarioInvalid(format!(
            "subset size {k} exceeds agent count {n}"
        )));
    }
    let inner = OptimizerSettings {
        grid_verify: false,
        ..scenario.optimizer.clone()
    };
    let total_evals = AtomicUsize::new(0);

    // Subset members get access, with the scenario's bias flags; everyone
    // else gets neither.
    let eval_subset = |subset: &[usize]| -> Result<(Vec<f64>, f64)> {
        let mut access = vec![false; n];
        for &i in subset {
            access[i] = true;
        }
        let bias: Vec<bool> = (0..n).map(|i| access[i] && scenario.bias[i]).collect();
        let (y, j, evals, _) = run_optimizer(base, scenario, &access, &bias, &inner, false)?;
        total_evals.fetch_add(evals, Ordering::Relaxed);
        Ok((y, j))
    };

    if k == n {
        let all: Vec<usize> = (0..n).collect();
        let (y, j) = eval_subset(&all)?;
        let bias: Vec<bool> = scenario.bias.clone();
        let access = vec![true; n];
        return finish_result(
            base,
            scenario,
            &access,
            &bias,
            Some(y),
            j,
            total_evals.load(Ordering::Relaxed),
            Some(all),
            None,
        );
    }

    let n_choose_k: usize = {
        let mut acc = 1usize;
        for i in 0..k {
            acc = acc.saturating_mul(n - i) / (i + 1);
        }
        acc
    };

    let best = if n_choose_k <= EXHAUSTIVE_SUBSET_CAP {
        let subsets: Vec<Vec<usize>> = (0..n).combinations(k).collect();
        let outcomes = exec::try_map_indexed(subsets.len(), |idx| {
            eval_subset(&subsets[idx]).map(|(y, j)| (idx, y, j))
        })?;
        outcomes
            .into_iter()
            .min_by(|a, b| {
                a.2.partial_cmp(&b.2)
                    .unwrap()
                    .then(a.0.cmp(&b.0))
            })
            .map(|(idx, y, j)| (subsets[idx].clone(), y, j))
            .expect("at least one subset")
    } else {
        let mut best: Option<(Vec<usize>, Vec<f64>, f64)> = None;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.optimizer.seed);
        for restart in 0..3 {
            let mut subset: Vec<usize> = if restart == 0 {
                // greedy construction
                let mut chosen: Vec<usize> = Vec::new();
                while chosen.len() < k {
                    let candidates: Vec<usize> =
                        (0..n).filter(|i| !chosen.contains(i)).collect();
                    let scored = exec::try_map_indexed(candidates.len(), |idx| {
                        let mut trial = chosen.clone();
                        trial.push(candidates[idx]);
                        trial.sort_unstable();
                        eval_subset(&trial).map(|(_, j)| (candidates[idx], j))
                    })?;
                    let (winner, _) = scored
                        .into_iter()
                        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                        .expect("candidates remain");
                    chosen.push(winner);
                    chosen.sort_unstable();
                }
                chosen
            } else {
                let mut pool: Vec<usize> = (0..n).collect();
                pool.shuffle(&mut rng);
                let mut s = pool[..k].to_vec();
                s.sort_unstable();
                s
            };

            let (mut y, mut j) = eval_subset(&subset)?;
            // pairwise swap improvement
            loop {
                let outside: Vec<usize> = (0..n).filter(|i| !subset.contains(i)).collect();
                let swaps: Vec<(usize, usize)> = subset
                    .iter()
                    .copied()
                    .flat_map(|a| outside.iter().copied().map(move |b| (a, b)))
                    .collect();
                let scored = exec::try_map_indexed(swaps.len(), |idx| {
                    let (out_agent, in_agent) = swaps[idx];
                    let mut trial: Vec<usize> = subset
                        .iter()
                        .copied()
                        .filter(|&a| a != out_agent)
                        .chain(std::iter::once(in_agent))
                        .collect();
                    trial.sort_unstable();
                    eval_subset(&trial).map(|(ty, tj)| (idx, trial, ty, tj))
                })?;
                let improving = scored
                    .into_iter()
                    .filter(|(_, _, _, tj)| *tj < j - 1e-12)
                    .min_by(|a, b| a.3.partial_cmp(&b.3).unwrap().then(a.0.cmp(&b.0)));
                match improving {
                    Some((_, trial, ty, tj)) => {
                        subset = trial;
                        y = ty;
                        j = tj;
                    }
                    None => break,
                }
            }
            if best
                .as_ref()
                .map_or(true, |(_, _, bj)| better(Direction::Minimize, j, *bj))
            {
                best = Some((subset, y, j));
            }
        }
        best.expect("restarts produced a subset")
    };

    let (subset, y, j) = best;
    let mut access = vec![false; n];
    for &i in &subset {
        access[i] = true;
    }
    let bias: Vec<bool> = (0..n).map(|i| access[i] && scenario.bias[i]).collect();
    finish_result(
        base,
        scenario,
        &access,
        &bias,
        Some(y),
        j,
        total_evals.load(Ordering::Relaxed),
        Some(subset),
        None,
    )
}

/// Dispatches a scenario: flat evaluation without access, subset search when
/// `subset_k` is set, full optimization otherwise.
pub fn run_scenario(base: &MultilayerModel, scenario: &ScenarioSpec) -> Result<DesignResult> {
    match scenario.subset_k {
        Some(k) => subset_search(base, scenario, k),
        None => optimize(base, scenario),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Single agent, self-loop peers, no bias: the fixed point is the convex
    /// combination x = ((1 - a - a w) s + a w y) / (1 - a), monotone in y.
    fn single_agent_base(alpha: f64) -> MultilayerModel {
        MultilayerModel::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::from_element(1, alpha)],
            vec![vec![DVector::from_element(1, 1.0)]],
            DVector::from_element(1, 0.8),
            DVector::zeros(1),
            SourceRule::Affine {
                omega: vec![DMatrix::zeros(1, 1)],
                gamma: vec![DMatrix::zeros(1, 1)],
                c: MismatchWeights::layer_local(1, 1, 1),
            },
        )
        .unwrap()
    }

    #[test]
    fn objective_matches_scalar_closed_form() {
        let alpha = 0.5;
        let base = single_agent_base(alpha);
        let scenario = ScenarioSpec::uniform(1, 1, true, false, 0);
        let w = scenario.omega_factor * (1.0 - alpha) / alpha; // omega entry
        let s = 0.8;
        for y in [0.0, 0.25, 0.9] {
            let expected = ((1.0 - alpha - alpha * w) * s + alpha * w * y) / (1.0 - alpha);
            let j = objective(&base, &scenario, &[y]).unwrap();
            assert_relative_eq!(j, expected, epsilon = 1e-6);
        }
        // monotone: larger y raises J
        let j0 = objective(&base, &scenario, &[0.0]).unwrap();
        let j1 = objective(&base, &scenario, &[1.0]).unwrap();
        assert!(j1 > j0);
    }

    #[test]
    fn objective_is_deterministic() {
        let base = single_agent_base(0.5);
        let scenario = ScenarioSpec::uniform(1, 1, true, true, 0);
        let a = objective(&base, &scenario, &[0.37]).unwrap();
        let b = objective(&base, &scenario, &[0.37]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn no_access_scenario_is_flat() {
        let base = single_agent_base(0.5);
        let scenario = ScenarioSpec::uniform(1, 1, false, false, 0);
        let result = optimize(&base, &scenario).unwrap();
        assert!(result.y_star.is_none());
        assert_eq!(result.evaluations, 1);
        let j_any = objective(&base, &scenario, &[0.7]).unwrap();
        assert_relative_eq!(result.j_star, j_any, epsilon = 1e-12);
    }

    #[test]
    fn monotone_objective_optimizes_to_lower_corner() {
        let base = single_agent_base(0.5);
        let scenario = ScenarioSpec::uniform(1, 1, true, false, 0);
        let result = optimize(&base, &scenario).unwrap();
        let y = result.y_star.unwrap();
        assert!(y[0] < 1e-3, "expected lower corner, got {}", y[0]);
    }

    #[test]
    fn bias_without_access_rejected() {
        let base = single_agent_base(0.5);
        let mut scenario = ScenarioSpec::uniform(1, 1, false, false, 0);
        scenario.bias = vec![true];
        assert!(matches!(
            optimize(&base, &scenario).unwrap_err(),
            Error::ScenarioInvalid(_)
        ));
    }

    #[test]
    fn delta_percent_basics() {
        let x = StackedState::from_slice(&[0.6, 0.6, 0.3, 0.3], 2, 2).unwrap();
        let s = DVector::from_column_slice(&[0.5, 0.5, 0.0, 0.0]);
        let d = delta_percent(&x, &s);
        assert_relative_eq!(d[0].unwrap(), 20.0, epsilon = 1e-12);
        assert!(d[1].is_none());
        // x = s gives zero everywhere defined
        let x = StackedState::from_slice(&[0.5, 0.5, 0.0, 0.0], 2, 2).unwrap();
        let d = delta_percent(&x, &s);
        assert_relative_eq!(d[0].unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn halton_covers_unit_interval() {
        let points: Vec<f64> = (1..=8).map(|i| halton(i, 2)).collect();
        assert!(points.iter().all(|&p| (0.0..1.0).contains(&p)));
        // distinct
        for (a, b) in points.iter().tuple_combinations() {
            assert!((a - b).abs() > 1e-9);
        }
    }
}
