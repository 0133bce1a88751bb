//! Box-constrained convex QP used to allocate thrust rates and joint velocities.
//!
//! The allocation problem
//!
//! ```text
//! min  λ_m|δ + A u₁ + B u₂|² + λ_p|u₂ − p|² + λ_s|u₂|² + λ_T|u₁|²
//! s.t. lb₁ ≤ u₁ ≤ ub₁,  lb₂ ≤ u₂ ≤ ub₂
//! ```
//!
//! is rewritten as `min ½xᵀHx + gᵀx + c` over `x = (u₁, u₂)` and solved with a
//! primal active-set method. Bounds may be infinite.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix6x4, Vector4, Vector6};
use thiserror::Error;

pub const MAX_ITERATIONS: usize = 200;
pub const KKT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("weights must be positive and finite (λ_m={0}, λ_p={1}, λ_s={2}, λ_T={3})")]
    Weights(f64, f64, f64, f64),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("lower bound exceeds upper bound at variable {0}")]
    Bounds(usize),
    #[error("equality-constrained allocation violates bound at variable {0}")]
    BoundViolated(usize),
    #[error("condition matrix is rank deficient")]
    RankDeficient,
}

/// `(λ_m, λ_p, λ_s, λ_T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub momentum: f64,
    pub postural: f64,
    pub joint_regularization: f64,
    pub thrust_regularization: f64,
}

impl Weights {
    pub const DEFAULT: Weights = Weights {
        momentum: 50.0,
        postural: 1.0,
        joint_regularization: 50.0,
        thrust_regularization: 1.0,
    };

    pub fn scaled(&self, k: f64) -> Weights {
        Weights {
            momentum: self.momentum * k,
            postural: self.postural * k,
            joint_regularization: self.joint_regularization * k,
            thrust_regularization: self.thrust_regularization * k,
        }
    }

    fn validate(&self) -> Result<(), QpError> {
        let w = [self.momentum, self.postural, self.joint_regularization, self.thrust_regularization];
        // λ_p or λ_s alone may vanish as long as their sum keeps H definite
        let ok = w.iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.momentum > 0.0
            && self.thrust_regularization > 0.0
            && self.postural + self.joint_regularization > 0.0;
        if ok {
            Ok(())
        } else {
            Err(QpError::Weights(w[0], w[1], w[2], w[3]))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Bounds {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    /// Symmetric bounds `|u₁| ≤ thrust_rate`, `|u₂| ≤ joint_rate`.
    pub fn symmetric(n_joints: usize, thrust_rate: f64, joint_rate: f64) -> Self {
        let upper = DVector::from_fn(4 + n_joints, |i, _| if i < 4 { thrust_rate } else { joint_rate });
        Bounds { lower: -&upper, upper }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    fn validate(&self, n: usize) -> Result<(), QpError> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Dimension(format!(
                "bounds have {} / {} entries, expected {n}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for i in 0..n {
            if !(self.lower[i] <= self.upper[i]) {
                return Err(QpError::Bounds(i));
            }
        }
        Ok(())
    }
}

/// Standard-form QP `½xᵀHx + gᵀx + c` with box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
    pub bounds: Bounds,
}

impl BoxQp {
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>, bounds: Bounds) -> Result<Self, QpError> {
        let n = gradient.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(QpError::Dimension(format!(
                "Hessian is {}x{}, gradient has {n} entries",
                hessian.nrows(),
                hessian.ncols()
            )));
        }
        bounds.validate(n)?;
        if hessian.clone().cholesky().is_none() {
            return Err(QpError::NotPositiveDefinite);
        }
        Ok(BoxQp {
            hessian,
            gradient,
            constant: 0.0,
            bounds,
        })
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x) + self.constant
    }

    /// Infinity norm of the projected gradient, the KKT residual for box bounds.
    pub fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        let grad = &self.hessian * x + &self.gradient;
        let mut r: f64 = 0.0;
        for i in 0..x.len() {
            let at_lower = x[i] <= self.bounds.lower[i];
            let at_upper = x[i] >= self.bounds.upper[i];
            let gi = grad[i];
            let v = if at_lower && at_upper {
                0.0
            } else if at_lower {
                (-gi).max(0.0)
            } else if at_upper {
                gi.max(0.0)
            } else {
                gi.abs()
            };
            r = r.max(v);
        }
        r
    }

    /// Text dump: dims, H, g, bounds.
    pub fn dump(&self) -> String {
        let n = self.dim();
        let mut out = format!("dim {n}\nH\n");
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{:e}", self.hessian[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        let line = |v: &DVector<f64>| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "g\n{}", line(&self.gradient));
        let _ = writeln!(out, "lb\n{}", line(&self.bounds.lower));
        let _ = writeln!(out, "ub\n{}", line(&self.bounds.upper));
        out
    }
}

/// Bound status of one variable at a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Active {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub active: Vec<Active>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every iteration, starting with the initial point.
    pub objective_trace: Vec<f64>,
}

/// Primal active-set solver with warm start from the previous active set.
#[derive(Debug, Clone, Default)]
pub struct ActiveSetSolver {
    warm: Option<Vec<Active>>,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl ActiveSetSolver {
    pub fn new() -> Self {
        ActiveSetSolver {
            warm: None,
            max_iterations: MAX_ITERATIONS,
            tolerance: KKT_TOLERANCE,
        }
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn solve(&mut self, qp: &BoxQp) -> QpSolution {
        let n = qp.dim();
        let lb = &qp.bounds.lower;
        let ub = &qp.bounds.upper;
        let mut active = match &self.warm {
            Some(w) if w.len() == n => w.clone(),
            _ => vec![Active::Free; n],
        };
        for i in 0..n {
            active[i] = match active[i] {
                Active::Lower if lb[i].is_finite() => Active::Lower,
                Active::Upper if ub[i].is_finite() => Active::Upper,
                _ => Active::Free,
            };
        }
        // feasible start: fixed variables on their bounds, free ones at the clamped origin
        let mut x = DVector::from_fn(n, |i, _| match active[i] {
            Active::Lower => lb[i],
            Active::Upper => ub[i],
            Active::Free => 0.0f64.clamp(lb[i], ub[i]),
        });
        let scale = 1.0 + qp.hessian.amax() + qp.gradient.amax();
        let tol = self.tolerance * scale;
        let mut trace = vec![qp.objective(&x)];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iterations {
            iterations += 1;
            let free: Vec<usize> = (0..n).filter(|&i| active[i] == Active::Free).collect();
            let target = solve_subspace(qp, &x, &free);
            let step: DVector<f64> = &target - &x;
            if step.amax() <= tol * (1.0 + x.amax()) {
                x = target;
                // multipliers of the fixed variables
                let grad = &qp.hessian * &x + &qp.gradient;
                let mut worst: Option<(usize, f64)> = None;
                for i in 0..n {
                    let mu = match active[i] {
                        Active::Lower => grad[i],
                        Active::Upper => -grad[i],
                        Active::Free => continue,
                    };
                    if mu < -tol && worst.is_none_or(|(_, w)| mu < w) {
                        worst = Some((i, mu));
                    }
                }
                trace.push(qp.objective(&x));
                match worst {
                    None => {
                        converged = true;
                        break;
                    }
                    Some((i, _)) => active[i] = Active::Free,
                }
                continue;
            }
            let mut alpha = 1.0;
            let mut blocking: Option<(usize, Active)> = None;
            for &i in &free {
                let (limit, kind) = if step[i] < 0.0 {
                    (lb[i], Active::Lower)
                } else if step[i] > 0.0 {
                    (ub[i], Active::Upper)
                } else {
                    continue;
                };
                if !limit.is_finite() {
                    continue;
                }
                let a = ((limit - x[i]) / step[i]).max(0.0);
                // strict comparison keeps the lowest index on ties
                if a < alpha {
                    alpha = a;
                    blocking = Some((i, kind));
                }
            }
            x += &step * alpha;
            if let Some((i, kind)) = blocking {
                active[i] = kind;
                x[i] = if kind == Active::Lower { lb[i] } else { ub[i] };
            }
            trace.push(qp.objective(&x));
        }
        for i in 0..n {
            x[i] = x[i].clamp(lb[i], ub[i]);
        }
        let status = (0..n)
            .map(|i| {
                if active[i] == Active::Free {
                    Active::Free
                } else if x[i] <= lb[i] {
                    Active::Lower
                } else {
                    Active::Upper
                }
            })
            .collect::<Vec<_>>();
        self.warm = Some(status.clone());
        QpSolution {
            objective: qp.objective(&x),
            kkt_residual: qp.kkt_residual(&x),
            x,
            active: status,
            iterations,
            converged,
            objective_trace: trace,
        }
    }
}

/// Minimizer over the free variables with the others held at their current values.
fn solve_subspace(qp: &BoxQp, x: &DVector<f64>, free: &[usize]) -> DVector<f64> {
    let mut out = x.clone();
    if free.is_empty() {
        return out;
    }
    let k = free.len();
    let hff = DMatrix::from_fn(k, k, |a, b| qp.hessian[(free[a], free[b])]);
    let mut fixed = x.clone();
    for &i in free {
        fixed[i] = 0.0;
    }
    let hx = &qp.hessian * &fixed;
    let rhs = DVector::from_fn(k, |a, _| -(qp.gradient[free[a]] + hx[free[a]]));
    let chol = hff.clone().cholesky().expect("principal submatrix of a PD matrix");
    let mut sol = chol.solve(&rhs);
    // one step of iterative refinement
    let resid = &rhs - &hff * &sol;
    sol += chol.solve(&resid);
    for (a, &i) in free.iter().enumerate() {
        out[i] = sol[a];
    }
    out
}

/// The allocation problem in its original terms.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub delta: Vector6<f64>,
    pub a: Matrix6x4<f64>,
    pub b: DMatrix<f64>,
    pub postural: DVector<f64>,
    pub weights: Weights,
    pub bounds: Bounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSolution {
    pub u1: Vector4<f64>,
    pub u2: DVector<f64>,
    pub objective: f64,
    pub active: Vec<Active>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `|δ + A u₁ + B u₂|`.
    pub condition_residual: f64,
}

impl AllocationProblem {
    pub fn assemble(
        delta: Vector6<f64>,
        a: Matrix6x4<f64>,
        b: DMatrix<f64>,
        postural: DVector<f64>,
        weights: Weights,
        bounds: Bounds,
    ) -> Result<Self, QpError> {
        let n = b.ncols();
        if b.nrows() != 6 {
            return Err(QpError::Dimension(format!("B has {} rows, expected 6", b.nrows())));
        }
        if postural.len() != n {
            return Err(QpError::Dimension(format!("p has {} entries, expected {n}", postural.len())));
        }
        weights.validate()?;
        bounds.validate(4 + n)?;
        Ok(AllocationProblem {
            delta,
            a,
            b,
            postural,
            weights,
            bounds,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.b.ncols()
    }

    /// `G = (A B)`.
    pub fn condition_matrix(&self) -> DMatrix<f64> {
        let n = self.n_joints();
        let mut g = DMatrix::zeros(6, 4 + n);
        g.view_mut((0, 0), (6, 4)).copy_from(&self.a);
        g.view_mut((0, 4), (6, n)).copy_from(&self.b);
        g
    }

    /// Equivalent standard-form QP.
    pub fn to_standard(&self) -> Result<BoxQp, QpError> {
        let n = self.n_joints();
        let w = &self.weights;
        let g = self.condition_matrix();
        let mut h = g.transpose() * &g * w.momentum;
        for i in 0..4 {
            h[(i, i)] += w.thrust_regularization;
        }
        for i in 4..4 + n {
            h[(i, i)] += w.postural + w.joint_regularization;
        }
        h *= 2.0;
        let mut grad = g.transpose() * self.delta * w.momentum;
        for j in 0..n {
            grad[4 + j] -= w.postural * self.postural[j];
        }
        grad *= 2.0;
        let mut qp = BoxQp::new(h, grad, self.bounds.clone())?;
        qp.constant = w.momentum * self.delta.norm_squared() + w.postural * self.postural.norm_squared();
        Ok(qp)
    }

    pub fn objective(&self, u1: &Vector4<f64>, u2: &DVector<f64>) -> f64 {
        let w = &self.weights;
        let r = self.delta + self.a * u1 + &self.b * u2;
        w.momentum * r.norm_squared()
            + w.postural * (u2 - &self.postural).norm_squared()
            + w.joint_regularization * u2.norm_squared()
            + w.thrust_regularization * u1.norm_squared()
    }

    pub fn condition_residual(&self, u1: &Vector4<f64>, u2: &DVector<f64>) -> f64 {
        (self.delta + self.a * u1 + &self.b * u2).norm()
    }

    pub fn solve(&self, solver: &mut ActiveSetSolver) -> Result<AllocationSolution, QpError> {
        let qp = self.to_standard()?;
        let sol = solver.solve(&qp);
        Ok(self.split(&sol.x, sol.objective, sol.active, sol.kkt_residual, sol.iterations, sol.converged))
    }

    fn split(
        &self,
        x: &DVector<f64>,
        objective: f64,
        active: Vec<Active>,
        kkt_residual: f64,
        iterations: usize,
        converged: bool,
    ) -> AllocationSolution {
        let n = self.n_joints();
        let u1 = Vector4::from_iterator(x.rows(0, 4).iter().copied());
        let u2 = x.rows(4, n).into_owned();
        AllocationSolution {
            condition_residual: self.condition_residual(&u1, &u2),
            u1,
            u2,
            objective,
            active,
            kkt_residual,
            iterations,
            converged,
        }
    }

    /// Limit `λ_m → ∞`: enforce `δ + A u₁ + B u₂ = 0` exactly and minimize the
    /// remaining terms. Bounds are checked, not enforced.
    pub fn solve_exact(&self) -> Result<AllocationSolution, QpError> {
        let n = self.n_joints();
        let w = &self.weights;
        let g = self.condition_matrix();
        // min ½xᵀDx − cᵀx  s.t.  Gx = −δ,  D diagonal
        let d = DVector::from_fn(4 + n, |i, _| {
            2.0 * if i < 4 {
                w.thrust_regularization
            } else {
                w.postural + w.joint_regularization
            }
        });
        let c = DVector::from_fn(4 + n, |i, _| if i < 4 { 0.0 } else { 2.0 * w.postural * self.postural[i - 4] });
        let dinv = d.map(|v| 1.0 / v);
        let gd = DMatrix::from_fn(6, 4 + n, |r, k| g[(r, k)] * dinv[k]);
        let schur = &gd * g.transpose();
        let chol = schur.cholesky().ok_or(QpError::RankDeficient)?;
        // x = D⁻¹(c + Gᵀμ) with G D⁻¹ (c + Gᵀμ) = −δ
        let rhs = -(self.delta) - &gd * &c;
        let mu = chol.solve(&DVector::from_iterator(6, rhs.iter().copied()));
        let mut x = (&c + g.transpose() * &mu).component_mul(&dinv);
        // refine against the equality constraint
        let r = DVector::from_iterator(6, self.delta.iter().copied()) + &g * &x;
        let corr = chol.solve(&r);
        x -= (g.transpose() * corr).component_mul(&dinv);
        for i in 0..4 + n {
            if x[i] < self.bounds.lower[i] || x[i] > self.bounds.upper[i] {
                return Err(QpError::BoundViolated(i));
            }
        }
        let u1 = Vector4::from_iterator(x.rows(0, 4).iter().copied());
        let u2 = x.rows(4, n).into_owned();
        let objective = self.objective(&u1, &u2);
        Ok(self.split(&x, objective, vec![Active::Free; 4 + n], 0.0, 1, true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn unconstrained_matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..12 {
            let h = random_spd(n, &mut rng);
            let g = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
            let qp = BoxQp::new(h.clone(), g.clone(), Bounds::unbounded(n)).unwrap();
            let sol = ActiveSetSolver::new().solve(&qp);
            let expected = h.cholesky().unwrap().solve(&(-g));
            assert!((&sol.x - expected).amax() < 1e-10);
            assert!(sol.converged);
        }
    }

    #[test]
    fn one_active_bound_toy() {
        // min (x-2)² + (y-1)² + xy, x ≤ 1
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let g = DVector::from_vec(vec![-4.0, -2.0]);
        let bounds = Bounds {
            lower: DVector::from_vec(vec![f64::NEG_INFINITY, f64::NEG_INFINITY]),
            upper: DVector::from_vec(vec![1.0, f64::INFINITY]),
        };
        let qp = BoxQp::new(h, g, bounds).unwrap();
        let sol = ActiveSetSolver::new().solve(&qp);
        // x = 1 fixed: 2y + 1 − 2 = 0 → y = 0.5
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 0.5).abs() < 1e-12);
        assert_eq!(sol.active, vec![Active::Upper, Active::Free]);
        // grid search agrees at 1e-4 resolution
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            for j in 0..=400 {
                let (x, y) = (-1.0 + i as f64 * 0.005, -1.0 + j as f64 * 0.005);
                if x > 1.0 {
                    continue;
                }
                let f = qp.objective(&DVector::from_vec(vec![x, y]));
                if f < best.0 {
                    best = (f, x, y);
                }
            }
        }
        assert!((best.1 - 1.0).abs() < 1e-4 && (best.2 - 0.5).abs() < 5e-3);
    }

    #[test]
    fn rejects_degenerate_weights() {
        let w = Weights {
            momentum: 1.0,
            postural: 0.0,
            joint_regularization: 0.0,
            thrust_regularization: 0.0,
        };
        let r = AllocationProblem::assemble(
            Vector6::zeros(),
            Matrix6x4::zeros(),
            DMatrix::zeros(6, 3),
            DVector::zeros(3),
            w,
            Bounds::unbounded(7),
        );
        assert!(matches!(r, Err(QpError::Weights(..))));
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let r = AllocationProblem::assemble(
            Vector6::zeros(),
            Matrix6x4::zeros(),
            DMatrix::zeros(6, 3),
            DVector::zeros(2),
            Weights::DEFAULT,
            Bounds::unbounded(7),
        );
        assert!(matches!(r, Err(QpError::Dimension(_))));
    }

    #[test]
    fn no_joints_reduces_to_regularized_ls() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = Matrix6x4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let delta = Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let p = AllocationProblem::assemble(delta, a, DMatrix::zeros(6, 0), DVector::zeros(0), Weights::DEFAULT, Bounds::unbounded(4))
            .unwrap();
        let sol = p.solve(&mut ActiveSetSolver::new()).unwrap();
        let lhs = a.transpose() * a * 50.0 + nalgebra::Matrix4::identity();
        let expected = lhs.cholesky().unwrap().solve(&(-a.transpose() * delta * 50.0));
        assert!((sol.u1 - expected).amax() < 1e-10);
        assert_eq!(sol.u2.len(), 0);
    }

    #[test]
    fn hessian_factorizes_for_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let n = rng.gen_range(0..26);
            let p = AllocationProblem::assemble(
                Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
                Matrix6x4::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
                DMatrix::from_fn(6, n, |_, _| rng.gen_range(-1.0..1.0)),
                DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
                Weights::DEFAULT,
                Bounds::unbounded(4 + n),
            )
            .unwrap();
            assert!(p.to_standard().unwrap().hessian.cholesky().is_some());
        }
    }

    #[test]
    fn standard_form_objective_matches_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 5;
        let p = AllocationProblem::assemble(
            Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            Matrix6x4::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(6, n, |_, _| rng.gen_range(-1.0..1.0)),
            DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
            Weights::DEFAULT,
            Bounds::unbounded(4 + n),
        )
        .unwrap();
        let qp = p.to_standard().unwrap();
        let x = DVector::from_fn(4 + n, |_, _| rng.gen_range(-1.0..1.0));
        let u1 = Vector4::from_iterator(x.rows(0, 4).iter().copied());
        let u2 = x.rows(4, n).into_owned();
        assert!((qp.objective(&x) - p.objective(&u1, &u2)).abs() < 1e-10);
    }

    #[test]
    fn exact_mode_satisfies_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 8;
        let p = AllocationProblem::assemble(
            Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            Matrix6x4::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
            DMatrix::from_fn(6, n, |_, _| rng.gen_range(-1.0..1.0)),
            DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
            Weights::DEFAULT,
            Bounds::unbounded(4 + n),
        )
        .unwrap();
        let exact = p.solve_exact().unwrap();
        assert!(exact.condition_residual < 1e-12);
        // the weighted solution approaches it as λ_m grows
        let mut last = f64::INFINITY;
        for lm in [50.0, 500.0, 5000.0] {
            let mut q = p.clone();
            q.weights.momentum = lm;
            let r = q.solve(&mut ActiveSetSolver::new()).unwrap().condition_residual;
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn warm_start_gives_same_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut solver = ActiveSetSolver::new();
        for _ in 0..20 {
            let n = 10;
            let h = random_spd(n, &mut rng);
            let g = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
            let qp = BoxQp::new(h, g, Bounds {
                lower: DVector::from_element(n, -0.5),
                upper: DVector::from_element(n, 0.5),
            })
            .unwrap();
            let warm = solver.solve(&qp);
            let cold = ActiveSetSolver::new().solve(&qp);
            assert!((warm.x - cold.x).amax() < 1e-9);
        }
    }

    #[test]
    fn dump_lists_sections() {
        let qp = BoxQp::new(DMatrix::identity(2, 2), DVector::zeros(2), Bounds::unbounded(2)).unwrap();
        let text = qp.dump();
        for key in ["dim 2", "H", "g", "lb", "ub"] {
            assert!(text.contains(key));
        }
    }
}
