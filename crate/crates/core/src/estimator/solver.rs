//! Levenberg-Marquardt over keyframe states and landmarks, with the
//! landmarks eliminated through the Schur complement.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::factors::{
    gnss_jacobian, gnss_residual, inertial_residual_and_jacobians, retract_pose, robust_kernel,
    visual_residual_and_jacobians, Matrix3x6, NavState,
};

use super::problem::{visual_information, SlidingWindowProblem, StateRole};

type Matrix6x3 = SMatrix<f64, 6, 3>;

/// Cost at which the problem counts as solved exactly.
const ZERO_COST: f64 = 1e-12;
/// Consecutive rejections tolerated before giving up on an iteration.
const MAX_REJECTIONS: usize = 12;
/// Floor on the diagonal entries scaled by the damping.
const MIN_DIAGONAL: f64 = 1e-6;
/// Robust-cost surrogate for an observation that projects behind the camera.
const INVALID_PROJECTION_S: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub step_tolerance: f64,
    /// Initial damping as a fraction of the largest Hessian diagonal entry.
    pub initial_damping: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 15,
            relative_tolerance: 1e-6,
            step_tolerance: 1e-8,
            initial_damping: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("cost is not finite ({0})")]
    NonFiniteCost(f64),
    #[error("damped system is not positive definite (damping {damping:e})")]
    NotPositiveDefinite { damping: f64 },
}

/// Robust cost per factor family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub inertial: f64,
    pub bias: f64,
    pub visual: f64,
    pub gnss: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.inertial + self.bias + self.visual + self.gnss
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ZeroCost,
    RelativeDecrease,
    SmallStep,
    NoImprovement,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub initial: CostBreakdown,
    pub last: CostBreakdown,
    pub iterations: usize,
    /// Total cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub termination: Termination,
}

impl SolveReport {
    pub fn initial_cost(&self) -> f64 {
        self.initial.total()
    }

    pub fn final_cost(&self) -> f64 {
        self.last.total()
    }
}

/// Offsets of each keyframe's pose (6) and motion (velocity, accel bias,
/// gyro bias: 9) blocks in the state vector.
struct Layout {
    pose: Vec<Option<usize>>,
    motion: Vec<Option<usize>>,
    dim: usize,
}

impl Layout {
    fn new(problem: &SlidingWindowProblem) -> Self {
        let mut dim = 0;
        let mut pose = Vec::with_capacity(problem.keyframes.len());
        let mut motion = Vec::with_capacity(problem.keyframes.len());
        for kf in &problem.keyframes {
            let (p, m) = match kf.role {
                StateRole::Free => (true, true),
                StateRole::PoseFixed => (false, true),
                StateRole::Fixed => (false, false),
            };
            pose.push(p.then(|| {
                dim += 6;
                dim - 6
            }));
            motion.push(m.then(|| {
                dim += 9;
                dim - 9
            }));
        }
        Self { pose, motion, dim }
    }
}

struct LandmarkBlock {
    hessian: Matrix3<f64>,
    gradient: Vector3<f64>,
    /// (pose offset, d2/dpose dlandmark)
    cross: Vec<(usize, Matrix6x3)>,
}

struct Linearization {
    h: DMatrix<f64>,
    g: DVector<f64>,
    landmarks: Vec<LandmarkBlock>,
}

fn add_block<const R: usize, const C: usize>(
    h: &mut DMatrix<f64>,
    row: usize,
    col: usize,
    m: &SMatrix<f64, R, C>,
) {
    let mut view = h.fixed_view_mut::<R, C>(row, col);
    view += m;
}

/// Accumulates `J^T W J` and `J^T W r` for a factor whose Jacobian is split
/// into column blocks at given state offsets.
fn accumulate<const R: usize>(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    blocks: &[(Option<usize>, DMatrix<f64>)],
    weight: &SMatrix<f64, R, R>,
    residual: &SVector<R>,
) {
    let w = DMatrix::from_column_slice(R, R, weight.as_slice());
    let r = DVector::from_column_slice(residual.as_slice());
    for (oa, ja) in blocks {
        let Some(a) = *oa else { continue };
        let jtw = ja.transpose() * &w;
        let ga = &jtw * &r;
        let mut gv = g.rows_mut(a, ja.ncols());
        gv += ga;
        for (ob, jb) in blocks {
            let Some(b) = *ob else { continue };
            let hab = &jtw * jb;
            let mut hv = h.view_mut((a, b), (ja.ncols(), jb.ncols()));
            hv += hab;
        }
    }
}

type SVector<const R: usize> = SMatrix<f64, R, 1>;

fn dyn_of<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

fn visual_cost(problem: &SlidingWindowProblem, states: &[NavState], lms: &[Vector3<f64>]) -> f64 {
    let info = 1.0 / (problem.pixel_sigma * problem.pixel_sigma);
    let delta = problem.visual_delta;
    problem
        .visual
        .iter()
        .map(|f| {
            match visual_residual_and_jacobians(
                &states[f.keyframe].pose,
                &lms[f.landmark],
                &f.observation,
                &problem.camera,
            ) {
                Ok((r, _, _)) => robust_kernel(r.norm_squared() * info, delta).0,
                Err(_) => robust_kernel(INVALID_PROJECTION_S * INVALID_PROJECTION_S, delta).0,
            }
        })
        .sum()
}

/// Robust cost of every factor family at the given states and landmarks.
fn evaluate(
    problem: &SlidingWindowProblem,
    states: &[NavState],
    lms: &[Vector3<f64>],
) -> CostBreakdown {
    let mut cost = CostBreakdown::default();
    for f in &problem.inertial {
        let (prev, curr) = (&states[f.prev], &states[f.curr]);
        let (r, _) =
            inertial_residual_and_jacobians(prev, curr, &f.preintegration, &problem.gravity);
        cost.inertial += (r.transpose() * f.information * r)[0];
        cost.bias += (curr.bias.accel - prev.bias.accel).norm_squared() * f.accel_walk_information
            + (curr.bias.gyro - prev.bias.gyro).norm_squared() * f.gyro_walk_information;
    }
    for p in &problem.bias_priors {
        let b = &states[p.keyframe].bias;
        cost.bias += (b.accel - p.mean.accel).norm_squared() / (p.accel_sigma * p.accel_sigma)
            + (b.gyro - p.mean.gyro).norm_squared() / (p.gyro_sigma * p.gyro_sigma);
    }
    cost.visual = visual_cost(problem, states, lms);
    for f in &problem.gnss {
        let r = gnss_residual(&states[f.keyframe], &f.data);
        let s2 = (r.transpose() * f.data.information() * r)[0];
        cost.gnss += robust_kernel(s2, problem.gnss_delta).0;
    }
    cost
}

fn linearize(
    problem: &SlidingWindowProblem,
    layout: &Layout,
    states: &[NavState],
    lms: &[Vector3<f64>],
) -> Linearization {
    let mut h = DMatrix::zeros(layout.dim, layout.dim);
    let mut g = DVector::zeros(layout.dim);

    for f in &problem.inertial {
        let (prev, curr) = (&states[f.prev], &states[f.curr]);
        let (r, j) =
            inertial_residual_and_jacobians(prev, curr, &f.preintegration, &problem.gravity);
        let mut prev_motion = DMatrix::zeros(9, 9);
        prev_motion
            .view_mut((0, 0), (9, 3))
            .copy_from(&j.prev_velocity);
        prev_motion
            .view_mut((0, 3), (9, 3))
            .copy_from(&j.prev_accel_bias);
        prev_motion
            .view_mut((0, 6), (9, 3))
            .copy_from(&j.prev_gyro_bias);
        let mut curr_motion = DMatrix::zeros(9, 9);
        curr_motion
            .view_mut((0, 0), (9, 3))
            .copy_from(&j.curr_velocity);
        let blocks = [
            (layout.pose[f.prev], dyn_of(&j.prev_pose)),
            (layout.motion[f.prev], prev_motion),
            (layout.pose[f.curr], dyn_of(&j.curr_pose)),
            (layout.motion[f.curr], curr_motion),
        ];
        accumulate::<9>(&mut h, &mut g, &blocks, &f.information, &r);

        // bias random walk: r = b_curr - b_prev
        let mut walk = SMatrix::<f64, 6, 6>::zeros();
        walk.fixed_view_mut::<3, 3>(0, 0)
            .fill_diagonal(f.accel_walk_information);
        walk.fixed_view_mut::<3, 3>(3, 3)
            .fill_diagonal(f.gyro_walk_information);
        let mut rw = SVector::<6>::zeros();
        rw.fixed_rows_mut::<3>(0)
            .copy_from(&(curr.bias.accel - prev.bias.accel));
        rw.fixed_rows_mut::<3>(3)
            .copy_from(&(curr.bias.gyro - prev.bias.gyro));
        let mut jc = DMatrix::zeros(6, 9);
        jc.view_mut((0, 3), (6, 6)).fill_with_identity();
        let jp = -jc.clone();
        let blocks = [(layout.motion[f.prev], jp), (layout.motion[f.curr], jc)];
        accumulate::<6>(&mut h, &mut g, &blocks, &walk, &rw);
    }

    for p in &problem.bias_priors {
        let b = &states[p.keyframe].bias;
        let mut w = SMatrix::<f64, 6, 6>::zeros();
        w.fixed_view_mut::<3, 3>(0, 0)
            .fill_diagonal(1.0 / (p.accel_sigma * p.accel_sigma));
        w.fixed_view_mut::<3, 3>(3, 3)
            .fill_diagonal(1.0 / (p.gyro_sigma * p.gyro_sigma));
        let mut r = SVector::<6>::zeros();
        r.fixed_rows_mut::<3>(0)
            .copy_from(&(b.accel - p.mean.accel));
        r.fixed_rows_mut::<3>(3).copy_from(&(b.gyro - p.mean.gyro));
        let mut j = DMatrix::zeros(6, 9);
        j.view_mut((0, 3), (6, 6)).fill_with_identity();
        accumulate::<6>(&mut h, &mut g, &[(layout.motion[p.keyframe], j)], &w, &r);
    }

    for f in &problem.gnss {
        let state = &states[f.keyframe];
        let r = gnss_residual(state, &f.data);
        let info = f.data.information();
        let s2 = (r.transpose() * info * r)[0];
        let (_, weight) = robust_kernel(s2, problem.gnss_delta);
        let j: Matrix3x6 = gnss_jacobian(state, &f.data);
        accumulate::<3>(
            &mut h,
            &mut g,
            &[(layout.pose[f.keyframe], dyn_of(&j))],
            &(info * weight),
            &r,
        );
    }

    let info = visual_information(problem.pixel_sigma);
    let mut landmarks: Vec<LandmarkBlock> = (0..lms.len())
        .map(|_| LandmarkBlock {
            hessian: Matrix3::zeros(),
            gradient: Vector3::zeros(),
            cross: Vec::new(),
        })
        .collect();
    for f in &problem.visual {
        let Ok((r, jp, jl)) = visual_residual_and_jacobians(
            &states[f.keyframe].pose,
            &lms[f.landmark],
            &f.observation,
            &problem.camera,
        ) else {
            continue;
        };
        let s2 = (r.transpose() * info * r)[0];
        let (_, weight) = robust_kernel(s2, problem.visual_delta);
        let w = info * weight;
        let block = &mut landmarks[f.landmark];
        let jlt_w = jl.transpose() * w;
        block.hessian += jlt_w * jl;
        block.gradient += jlt_w * r;
        if let Some(a) = layout.pose[f.keyframe] {
            let jpt_w = jp.transpose() * w;
            add_block(&mut h, a, a, &(jpt_w * jp));
            let mut gv = g.fixed_rows_mut::<6>(a);
            gv += jpt_w * r;
            block.cross.push((a, jpt_w * jl));
        }
    }

    Linearization { h, g, landmarks }
}

/// Solves the damped normal equations. Returns the state step and the
/// landmark steps, or `None` when the damped system is not positive
/// definite.
fn damped_step(lin: &Linearization, lambda: f64) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
    let dim = lin.g.len();
    let mut s = lin.h.clone();
    for i in 0..dim {
        s[(i, i)] += lambda * lin.h[(i, i)].max(MIN_DIAGONAL);
    }
    let mut b = lin.g.clone();
    let mut inverses = Vec::with_capacity(lin.landmarks.len());
    for block in &lin.landmarks {
        let mut damped = block.hessian;
        for i in 0..3 {
            damped[(i, i)] += lambda * block.hessian[(i, i)].max(MIN_DIAGONAL);
        }
        let inv = damped.try_inverse()?;
        for &(a, ca) in &block.cross {
            let ca_inv = ca * inv;
            let mut bv = b.fixed_rows_mut::<6>(a);
            bv -= ca_inv * block.gradient;
            for &(c, cc) in &block.cross {
                let mut sv = s.fixed_view_mut::<6, 6>(a, c);
                sv -= ca_inv * cc.transpose();
            }
        }
        inverses.push(inv);
    }
    let dx = if dim > 0 {
        s.cholesky()?.solve(&(-b))
    } else {
        DVector::zeros(0)
    };
    let dl = lin
        .landmarks
        .iter()
        .zip(&inverses)
        .map(|(block, inv)| {
            let mut rhs = block.gradient;
            for &(a, ca) in &block.cross {
                rhs += ca.transpose() * dx.fixed_rows::<6>(a);
            }
            -(inv * rhs)
        })
        .collect();
    Some((dx, dl))
}

fn apply_step(
    problem: &SlidingWindowProblem,
    layout: &Layout,
    states: &[NavState],
    lms: &[Vector3<f64>],
    dx: &DVector<f64>,
    dl: &[Vector3<f64>],
) -> (Vec<NavState>, Vec<Vector3<f64>>) {
    let mut new_states = states.to_vec();
    for (k, state) in new_states.iter_mut().enumerate() {
        if let Some(a) = layout.pose[k] {
            let dtheta = dx.fixed_rows::<3>(a).into_owned();
            let dp = dx.fixed_rows::<3>(a + 3).into_owned();
            state.pose = retract_pose(&state.pose, &dtheta, &dp);
        }
        if let Some(a) = layout.motion[k] {
            state.velocity += dx.fixed_rows::<3>(a);
            state.bias.accel += dx.fixed_rows::<3>(a + 3);
            state.bias.gyro += dx.fixed_rows::<3>(a + 6);
        }
    }
    debug_assert_eq!(new_states.len(), problem.keyframes.len());
    let new_lms = lms.iter().zip(dl).map(|(l, d)| l + d).collect();
    (new_states, new_lms)
}

/// Minimizes the robust cost in place. Held states are never written.
pub fn solve(problem: &mut SlidingWindowProblem) -> Result<SolveReport, SolverError> {
    let settings = problem.settings;
    let layout = Layout::new(problem);
    let mut states: Vec<NavState> = problem.keyframes.iter().map(|k| k.state).collect();
    let mut lms = problem.landmarks.clone();

    let initial = evaluate(problem, &states, &lms);
    if !initial.total().is_finite() {
        return Err(SolverError::NonFiniteCost(initial.total()));
    }
    let mut current = initial;
    let mut history = vec![initial.total()];
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut lambda: Option<f64> = None;

    if initial.total() < ZERO_COST {
        termination = Termination::ZeroCost;
    } else {
        'outer: while iterations < settings.max_iterations {
            let lin = linearize(problem, &layout, &states, &lms);
            let lam = lambda.get_or_insert(settings.initial_damping);
            let mut rejections = 0;
            loop {
                let Some((dx, dl)) = damped_step(&lin, *lam) else {
                    *lam *= 10.0;
                    rejections += 1;
                    if rejections > MAX_REJECTIONS {
                        return Err(SolverError::NotPositiveDefinite { damping: *lam });
                    }
                    continue;
                };
                let step_norm =
                    (dx.norm_squared() + dl.iter().map(|d| d.norm_squared()).sum::<f64>()).sqrt();
                if step_norm < settings.step_tolerance {
                    termination = Termination::SmallStep;
                    break 'outer;
                }
                let (cand_states, cand_lms) = apply_step(problem, &layout, &states, &lms, &dx, &dl);
                let cand = evaluate(problem, &cand_states, &cand_lms);
                if cand.total().is_finite() && cand.total() < current.total() {
                    let decrease = (current.total() - cand.total()) / current.total();
                    states = cand_states;
                    lms = cand_lms;
                    current = cand;
                    history.push(cand.total());
                    iterations += 1;
                    *lam = (*lam / 10.0).max(1e-15);
                    if current.total() < ZERO_COST {
                        termination = Termination::ZeroCost;
                        break 'outer;
                    }
                    if decrease < settings.relative_tolerance {
                        termination = Termination::RelativeDecrease;
                        break 'outer;
                    }
                    break;
                }
                *lam *= 10.0;
                rejections += 1;
                if rejections > MAX_REJECTIONS {
                    termination = Termination::NoImprovement;
                    break 'outer;
                }
            }
        }
    }

    for (kf, state) in problem.keyframes.iter_mut().zip(&states) {
        if kf.role != StateRole::Fixed {
            kf.state = *state;
        }
    }
    problem.landmarks = lms;
    Ok(SolveReport {
        initial,
        last: current,
        iterations,
        cost_history: history,
        termination,
    })
}
