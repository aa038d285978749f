//! Dense convex QP solver used by the speed-profile refinement and the
//! tracking MPC:
//!
//!     minimize    0.5 x' P x + q' x
//!     subject to  l <= A x <= u
//!
//! Projected splitting iterations (ADMM) with a terminal KKT polish that
//! re-solves the detected active set exactly, so equality constraints come
//! out at linear-solve precision. Everything runs a fixed, deterministic
//! schedule: no randomness, no wall-clock dependence.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    /// Residuals did not reach tolerance within the iteration budget.
    MaxIterations,
    /// Inconsistent bounds (l > u).
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub rho: f64,
    pub rho_equality_scale: f64,
    pub sigma: f64,
    pub over_relaxation: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            max_iterations: 4000,
            tolerance: 1e-6,
            rho: 1.0,
            rho_equality_scale: 1e3,
            sigma: 1e-6,
            over_relaxation: 1.6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
}

pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.p * x)[(0, 0)] + self.q.dot(x)
    }

    fn clamp(&self, z: &mut DVector<f64>) {
        for i in 0..z.len() {
            z[i] = z[i].clamp(self.l[i], self.u[i]);
        }
    }
}

pub fn solve(prob: &QpProblem, settings: &QpSettings) -> QpSolution {
    let n = prob.p.nrows();
    let m = prob.a.nrows();
    assert_eq!(prob.q.len(), n);
    if m > 0 {
        assert_eq!(prob.a.ncols(), n);
    }
    for i in 0..m {
        if prob.l[i] > prob.u[i] + 1e-12 {
            return QpSolution {
                x: DVector::zeros(n),
                objective: f64::INFINITY,
                status: QpStatus::Infeasible,
                iterations: 0,
            };
        }
    }
    if m == 0 {
        // Unconstrained: single regularized solve.
        let reg = &prob.p + DMatrix::identity(n, n) * settings.sigma;
        let x = reg
            .cholesky()
            .map(|c| c.solve(&(-&prob.q)))
            .unwrap_or_else(|| DVector::zeros(n));
        let obj = prob.objective(&x);
        return QpSolution {
            x,
            objective: obj,
            status: QpStatus::Solved,
            iterations: 1,
        };
    }

    // Row equilibration: normalize each constraint row to unit inf-norm so
    // mixed-scale rows (position vs acceleration) converge together.
    let mut scale = DVector::from_element(m, 1.0);
    let mut a_s = prob.a.clone();
    let mut l_s = prob.l.clone();
    let mut u_s = prob.u.clone();
    for i in 0..m {
        let norm = prob.a.row(i).amax();
        if norm > 1e-12 {
            scale[i] = 1.0 / norm;
            for c in 0..n {
                a_s[(i, c)] *= scale[i];
            }
            if l_s[i].is_finite() {
                l_s[i] *= scale[i];
            }
            if u_s[i].is_finite() {
                u_s[i] *= scale[i];
            }
        }
    }
    let scaled = QpProblem {
        p: prob.p.clone(),
        q: prob.q.clone(),
        a: a_s,
        l: l_s,
        u: u_s,
    };
    let prob_orig = prob;
    let prob = &scaled;

    // Per-row penalty: equalities get a stiffer rho. `rho_base` adapts to
    // the primal/dual residual ratio on a fixed schedule.
    let mut rho_base = settings.rho;
    let build_rho = |base: f64| {
        let mut rho = DVector::from_element(m, base);
        for i in 0..m {
            if (prob.u[i] - prob.l[i]).abs() < 1e-12 {
                rho[i] *= settings.rho_equality_scale;
            }
        }
        rho
    };
    // KKT matrix for the x-update: P + sigma I + A' diag(rho) A.
    let factorize = |rho: &DVector<f64>| {
        let mut kkt = prob.p.clone() + DMatrix::identity(n, n) * settings.sigma;
        for i in 0..m {
            let row = prob.a.row(i);
            for r in 0..n {
                for c in 0..n {
                    kkt[(r, c)] += rho[i] * row[r] * row[c];
                }
            }
        }
        kkt.cholesky()
    };
    let mut rho = build_rho(rho_base);
    let mut chol = match factorize(&rho) {
        Some(c) => c,
        None => {
            return QpSolution {
                x: DVector::zeros(n),
                objective: f64::INFINITY,
                status: QpStatus::Infeasible,
                iterations: 0,
            }
        }
    };

    let mut x: DVector<f64> = DVector::zeros(n);
    let mut z: DVector<f64> = DVector::zeros(m);
    prob.clamp(&mut z);
    let mut y: DVector<f64> = DVector::zeros(m);
    let alpha = settings.over_relaxation;
    let mut status = QpStatus::MaxIterations;
    let mut iterations = settings.max_iterations;

    for it in 0..settings.max_iterations {
        // x-update.
        let mut rhs = -&prob.q + &x * settings.sigma;
        for i in 0..m {
            let w = rho[i] * z[i] - y[i];
            for c in 0..n {
                rhs[c] += prob.a[(i, c)] * w;
            }
        }
        let x_tilde = chol.solve(&rhs);
        let ax_tilde = &prob.a * &x_tilde;

        // Over-relaxed z / y updates.
        let mut z_new: DVector<f64> = DVector::zeros(m);
        for i in 0..m {
            let v = alpha * ax_tilde[i] + (1.0 - alpha) * z[i];
            z_new[i] = (v + y[i] / rho[i]).clamp(prob.l[i], prob.u[i]);
            y[i] += rho[i] * (v - z_new[i]);
        }
        x = &x_tilde * alpha + &x * (1.0 - alpha);
        z = z_new;

        if it % 25 == 24 || it == settings.max_iterations - 1 {
            let ax = &prob.a * &x;
            let r_prim = (0..m)
                .map(|i| (ax[i] - z[i]).abs())
                .fold(0.0, f64::max);
            let grad = &prob.p * &x + &prob.q + prob.a.transpose() * &y;
            let r_dual = grad.amax();
            if r_prim < settings.tolerance && r_dual < settings.tolerance {
                status = QpStatus::Solved;
                iterations = it + 1;
                break;
            }
            // Residual balancing: scale rho toward the primal/dual ratio.
            let norm_ax = ax.amax().max(z.amax()).max(1e-10);
            let norm_grad = (&prob.p * &x)
                .amax()
                .max(prob.q.amax())
                .max((prob.a.transpose() * &y).amax())
                .max(1e-10);
            let ratio = ((r_prim / norm_ax) / (r_dual / norm_grad).max(1e-16)).sqrt();
            if ratio > 5.0 || ratio < 0.2 {
                rho_base = (rho_base * ratio.clamp(1e-3, 1e3)).clamp(1e-6, 1e6);
                rho = build_rho(rho_base);
                if let Some(c) = factorize(&rho) {
                    chol = c;
                }
            }
        }
    }

    // Polish: exact KKT solve on the detected active set (in the original
    // problem scaling, so equality residuals come out exact).
    if let Some((px, pobj)) = polish(prob_orig, prob, &x, &z, &y, settings) {
        return QpSolution {
            x: px,
            objective: pobj,
            status,
            iterations,
        };
    }
    let objective = prob_orig.objective(&x);
    QpSolution {
        x,
        objective,
        status,
        iterations,
    }
}

fn polish(
    prob: &QpProblem,
    scaled: &QpProblem,
    x: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
    settings: &QpSettings,
) -> Option<(DVector<f64>, f64)> {
    let n = prob.p.nrows();
    let m = prob.a.nrows();
    let act_tol = 1e-5;
    // Detect the active set on the scaled problem (where z/y live); build
    // the KKT system from the original rows.
    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        let eq = (prob.u[i] - prob.l[i]).abs() < 1e-12;
        if eq {
            active.push((i, prob.l[i]));
        } else if z[i] - scaled.l[i] < act_tol && y[i] < -settings.tolerance {
            active.push((i, prob.l[i]));
        } else if scaled.u[i] - z[i] < act_tol && y[i] > settings.tolerance {
            active.push((i, prob.u[i]));
        }
    }
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    for r in 0..n {
        kkt[(r, r)] += 1e-12;
    }
    for (j, (i, _)) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + j, c)] = prob.a[(*i, c)];
            kkt[(c, n + j)] = prob.a[(*i, c)];
        }
    }
    let mut rhs = DVector::zeros(n + k);
    for c in 0..n {
        rhs[c] = -prob.q[c];
    }
    for (j, (_, b)) in active.iter().enumerate() {
        rhs[n + j] = *b;
    }
    let sol = kkt.lu().solve(&rhs)?;
    let px = sol.rows(0, n).into_owned();
    // Accept the polish only if it stays feasible on the inactive rows.
    let ax = &prob.a * &px;
    for i in 0..m {
        if ax[i] < prob.l[i] - 1e-6 || ax[i] > prob.u[i] + 1e-6 {
            return None;
        }
    }
    let obj = prob.objective(&px);
    if obj <= prob.objective(x) + 1e-9 {
        Some((px, obj))
    } else {
        None
    }
}
