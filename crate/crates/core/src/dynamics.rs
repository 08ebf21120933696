//! The synchronous update map, trajectory simulation, convergence and cycle
//! detection.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::exec;
use crate::model::MultilayerModel;
use crate::stacked::{stacked_index, StackedState};

/// Permitted numerical excursion outside [0,1] before a step is treated as an
/// internal error rather than rounding noise.
const EXCURSION_TOL: f64 = 1e-12;

/// States kept for cycle matching.
const CYCLE_WINDOW: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIter,
    Cycle { period: usize },
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIter => "max_iter",
            Status::Cycle { .. } => "cycle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Full path x[0..=T] when history was requested, otherwise just the
    /// final state.
    pub states: Vec<StackedState>,
    pub status: Status,
    pub iterations: usize,
    /// max-norm of the last step taken.
    pub final_residual: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &StackedState {
        self.states.last().expect("trajectory holds at least one state")
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub detect_cycles: bool,
    pub record_history: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
            detect_cycles: true,
            record_history: false,
        }
    }
}

/// One synchronous update of every (layer, agent) coordinate.
///
/// Computes V(x)s + A(Wx + B(x)y) coordinatewise; under the structural
/// assumptions each output coordinate is a convex combination of values in
/// [0,1]. Custom rules can break row-sub-stochasticity at runtime, which is
/// reported as an error naming the offending coordinate.
pub fn step(model: &MultilayerModel, x: &StackedState) -> Result<StackedState> {
    model.check_state(x)?;
    let out = step_vec(model, x.values())?;
    Ok(StackedState::new(out, model.n(), model.q())?)
}

fn step_vec(model: &MultilayerModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, m, q) = (model.n(), model.m(), model.q());
    let mut out = DVector::zeros(n * q);
    for l in 0..q {
        for i in 0..n {
            let alpha = model.alpha_of(l, i);
            let mut weight_sum = 0.0;
            let mut source_term = 0.0;
            if alpha != 0.0 {
                for k in 0..m {
                    let b = model.weight_at(x, l, i, k);
                    weight_sum += b;
                    source_term += b * model.y_of(l, k);
                }
            }
            let innate_coeff = 1.0 - alpha * (1.0 + weight_sum);
            if innate_coeff < -EXCURSION_TOL {
                return Err(Error::SubStochasticityViolated {
                    layer: l + 1,
                    agent: i + 1,
                    value: alpha * (1.0 + weight_sum),
                });
            }
            let mut social = 0.0;
            if alpha != 0.0 {
                for j in 0..q {
                    let coupling = model.lambda(l, j)[i];
                    if coupling == 0.0 {
                        continue;
                    }
                    let w = model.w(j);
                    let mut acc = 0.0;
                    for a in 0..n {
                        acc += w[(i, a)] * x[stacked_index(n, j, a)];
                    }
                    social += coupling * acc;
                }
            }
            let v = innate_coeff * model.s_of(l, i) + alpha * (social + source_term);
            if v < -EXCURSION_TOL || v > 1.0 + EXCURSION_TOL {
                let excess = if v < 0.0 { -v } else { v - 1.0 };
                return Err(Error::StateExcursion {
                    layer: l + 1,
                    agent: i + 1,
                    excess,
                });
            }
            out[stacked_index(n, l, i)] = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// max-norm residual of the fixed-point equation at `x`.
pub fn residual(model: &MultilayerModel, x: &StackedState) -> Result<f64> {
    model.check_state(x)?;
    let fx = step_vec(model, x.values())?;
    Ok((fx - x.values()).amax())
}

/// Iterates the update map until the step shrinks below `tol`, `max_iter` is
/// reached, or (when enabled) a state from the recent window recurs, which is
/// reported as a cycle after confirmation over one further period.
pub fn simulate(
    model: &MultilayerModel,
    x0: &StackedState,
    opts: &SimOptions,
) -> Result<Trajectory> {
    model.check_state(x0)?;
    assert!(opts.tol > 0.0, "tolerance must be positive");
    assert!(opts.max_iter >= 1, "max_iter must be at least 1");
    let (n, q) = (model.n(), model.q());

    let mut history = Vec::new();
    if opts.record_history {
        history.push(x0.clone());
    }

    // Ring buffer of recent states, newest last.
    let mut window: Vec<DVector<f64>> = Vec::with_capacity(CYCLE_WINDOW);
    window.push(x0.values().clone());

    let mut current = x0.values().clone();
    // A candidate period under confirmation: (period, steps still to check).
    let mut pending: Option<(usize, usize)> = None;

    for t in 1..=opts.max_iter {
        let next = step_vec(model, &current)?;
        let residual = (&next - &current).amax();

        if opts.record_history {
            history.push(StackedState::from_unchecked(next.clone(), n, q));
        }

        if residual < opts.tol {
            let final_state = StackedState::from_unchecked(next, n, q);
            let states = if opts.record_history {
                history
            } else {
                vec![final_state]
            };
            return Ok(Trajectory {
                states,
                status: Status::Converged,
                iterations: t,
                final_residual: residual,
            });
        }

        if opts.detect_cycles {
            // window[last] is x[t-1]; window[len-1-p] is x[t-p].
            if let Some((period, remaining)) = pending {
                let len = window.len();
                if len >= period && (&next - &window[len - period]).amax() < opts.tol {
                    if remaining == 1 {
                        let final_state = StackedState::from_unchecked(next, n, q);
                        let states = if opts.record_history {
                            history
                        } else {
                            vec![final_state]
                        };
                        return Ok(Trajectory {
                            states,
                            status: Status::Cycle { period },
                            iterations: t,
                            final_residual: residual,
                        });
                    }
                    pending = Some((period, remaining - 1));
                } else {
                    pending = None;
                }
            }
            if pending.is_none() {
                let len = window.len();
                for period in 2..=len.min(CYCLE_WINDOW - 1) {
                    if (&next - &window[len - period]).amax() < opts.tol {
                        pending = Some((period, period));
                        break;
                    }
                }
            }
        }

        window.push(next.clone());
        if window.len() > CYCLE_WINDOW {
            window.remove(0);
        }
        current = next;
    }

    let final_residual = if window.len() >= 2 {
        (&window[window.len() - 1] - &window[window.len() - 2]).amax()
    } else {
        f64::INFINITY
    };
    let final_state = StackedState::from_unchecked(current, n, q);
    let states = if opts.record_history {
        history
    } else {
        vec![final_state]
    };
    Ok(Trajectory {
        states,
        status: Status::MaxIter,
        iterations: opts.max_iter,
        final_residual,
    })
}

/// Simulates independent trajectories, in parallel when available.
pub fn simulate_ensemble(
    model: &MultilayerModel,
    starts: &[StackedState],
    opts: &SimOptions,
) -> Result<Vec<Trajectory>> {
    exec::try_map_indexed(starts.len(), |idx| simulate(model, &starts[idx], opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MultilayerModel;
    use crate::rule::{MismatchWeights, SourceRule};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn no_source_rule(n: usize, m: usize, q: usize) -> SourceRule {
        SourceRule::Affine {
            omega: vec![DMatrix::zeros(n, m); q],
            gamma: vec![DMatrix::zeros(n, m); q],
            c: MismatchWeights::layer_local(n, m, q),
        }
    }

    #[test]
    fn zero_alpha_returns_innate() {
        // B = 0 and alpha = 0: the update lands on s from anywhere.
        let model = MultilayerModel::new(
            vec![DMatrix::from_element(2, 2, 0.5); 2],
            vec![DVector::zeros(2); 2],
            vec![
                vec![DVector::from_element(2, 1.0), DVector::zeros(2)],
                vec![DVector::zeros(2), DVector::from_element(2, 1.0)],
            ],
            DVector::from_column_slice(&[0.1, 0.6, 0.3, 0.9]),
            DVector::from_column_slice(&[1.0, 1.0]),
            no_source_rule(2, 1, 2),
        )
        .unwrap();
        let x = StackedState::from_slice(&[0.7, 0.2, 0.5, 0.4], 2, 2).unwrap();
        let next = step(&model, &x).unwrap();
        assert_eq!(next.values(), model.s());
        assert_relative_eq!(residual(&model, &model.innate_state()).unwrap(), 0.0);
    }

    #[test]
    fn consensus_state_is_fixed_under_averaging() {
        // B = 0, s = x, constant state: one application returns the state.
        let model = MultilayerModel::new(
            vec![DMatrix::from_element(3, 3, 1.0 / 3.0); 2],
            vec![DVector::from_element(3, 0.7); 2],
            vec![
                vec![DVector::from_element(3, 0.5), DVector::from_element(3, 0.5)],
                vec![DVector::from_element(3, 0.5), DVector::from_element(3, 0.5)],
            ],
            DVector::from_element(6, 0.4),
            DVector::from_element(2, 1.0),
            no_source_rule(3, 1, 2),
        )
        .unwrap();
        let x = StackedState::constant(0.4, 3, 2).unwrap();
        let next = step(&model, &x).unwrap();
        assert_relative_eq!((next.values() - x.values()).amax(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn detects_period_two_orbit() {
        // alpha = 1 with a swap matrix is a pure permutation: x' = Wx.
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let model = MultilayerModel::new(
            vec![w],
            vec![DVector::from_element(2, 1.0)],
            vec![vec![DVector::from_element(2, 1.0)]],
            DVector::from_column_slice(&[0.5, 0.5]),
            DVector::from_element(1, 0.0),
            no_source_rule(2, 1, 1),
        )
        .unwrap();
        let x0 = StackedState::from_slice(&[0.2, 0.7], 2, 1).unwrap();
        let traj = simulate(&model, &x0, &SimOptions::default()).unwrap();
        assert_eq!(traj.status, Status::Cycle { period: 2 });
        // without detection the run exhausts the budget
        let opts = SimOptions {
            detect_cycles: false,
            max_iter: 500,
            ..SimOptions::default()
        };
        let traj = simulate(&model, &x0, &opts).unwrap();
        assert_eq!(traj.status, Status::MaxIter);
    }

    #[test]
    fn detects_longer_cycles_with_confirmation() {
        // 5-cycle permutation: rotate agents.
        let n = 5;
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            w[(i, (i + 1) % n)] = 1.0;
        }
        let model = MultilayerModel::new(
            vec![w],
            vec![DVector::from_element(n, 1.0)],
            vec![vec![DVector::from_element(n, 1.0)]],
            DVector::from_element(n, 0.0),
            DVector::from_element(1, 0.0),
            no_source_rule(n, 1, 1),
        )
        .unwrap();
        let x0 = StackedState::from_slice(&[0.1, 0.3, 0.5, 0.7, 0.9], n, 1).unwrap();
        let traj = simulate(&model, &x0, &SimOptions::default()).unwrap();
        assert_eq!(traj.status, Status::Cycle { period: 5 });
    }

    #[test]
    fn history_recorded_when_requested() {
        let model = MultilayerModel::new(
            vec![DMatrix::from_element(2, 2, 0.5)],
            vec![DVector::from_element(2, 0.5)],
            vec![vec![DVector::from_element(2, 1.0)]],
            DVector::from_column_slice(&[0.2, 0.8]),
            DVector::from_element(1, 1.0),
            no_source_rule(2, 1, 1),
        )
        .unwrap();
        let opts = SimOptions {
            record_history: true,
            ..SimOptions::default()
        };
        let traj = simulate(&model, &model.innate_state(), &opts).unwrap();
        assert_eq!(traj.states.len(), traj.iterations + 1);
        assert_eq!(traj.states[0], model.innate_state());
    }
}
