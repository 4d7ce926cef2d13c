//! Solver for the per-iteration surrogate problems over positions p (box), covariances
//! Q_i (PSD, shared trace budget) with concave quadratic rate and spacing constraints.
//!
//! Every surrogate is an isotropic concave quadratic, so for fixed multipliers the
//! Lagrangian maximizer has a closed form: a clamped vertex per position coordinate and
//! a water-filled eigenvalue shrinkage per covariance. The dual is minimized by
//! accelerated projected gradient with adaptive step and restarts.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};
use crate::rate::CovarianceSet;
use crate::surrogate::QuadraticSurrogate;

/// Relative margin added to the squared minimum distance in spacing constraints.
pub const DISTANCE_MARGIN: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    /// Maximize the sum of surrogates subject to every surrogate reaching `rate_min`.
    Objective,
    /// Maximize the common slack alpha of `f_k >= rate_min + alpha`.
    Feasibility,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub max_iterations: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        SolverTolerances { stationarity: 1e-6, primal: 1e-8, complementarity: 1e-6, max_iterations: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateProblem {
    pub surrogates: Vec<QuadraticSurrogate>,
    /// Anchor positions, layout [(x_1, y_1), ...].
    pub anchor_pos: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Antenna index pairs that must keep the minimum distance.
    pub pairs: Vec<(usize, usize)>,
    pub tau_h: f64,
    pub min_distance: f64,
    pub power: f64,
    pub rate_min: f64,
    pub mode: SolveMode,
    pub tol: SolverTolerances,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Multipliers {
    pub rate: Vec<f64>,
    /// For the spacing constraints scaled by 1/D^2.
    pub distance: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    MaxIter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverReport {
    pub mode: SolveMode,
    pub pos: Vec<f64>,
    pub q: CovarianceSet,
    /// Common slack in feasibility mode.
    pub alpha: Option<f64>,
    pub objective: f64,
    pub multipliers: Multipliers,
    pub residuals: KktResiduals,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: SolverStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveOutcome {
    Solved(SolverReport),
    /// The feasibility problem certified a negative slack; carries its solution.
    Infeasible(SolverReport),
}

impl SurrogateProblem {
    pub fn n_users(&self) -> usize {
        self.surrogates.len()
    }

    pub fn dim(&self) -> usize {
        self.surrogates.first().and_then(|s| s.lin_q.first()).map_or(0, |m| m.nrows())
    }

    fn d_sq(&self) -> f64 {
        self.min_distance * self.min_distance
    }

    pub fn validate(&self) -> Result<()> {
        let n_pos = self.anchor_pos.len();
        if self.surrogates.is_empty() {
            return Err(Error::Contract("surrogate problem needs at least one user".into()));
        }
        if self.lower.len() != n_pos || self.upper.len() != n_pos || !n_pos.is_multiple_of(2) {
            return Err(Error::Contract("position bounds do not match the anchor".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Contract("empty position box".into()));
        }
        let k = self.n_users();
        for s in &self.surrogates {
            if s.lin_pos.len() != n_pos || s.curv_pos.len() != n_pos || s.lin_q.len() != k || s.curv_q.len() != k {
                return Err(Error::Contract("surrogate dimensions do not match the problem".into()));
            }
            if s.curv_pos.iter().any(|t| *t > 0.0) || s.curv_q.iter().any(|t| !(*t < 0.0)) {
                return Err(Error::Contract("surrogates must be concave with negative covariance curvature".into()));
            }
        }
        if !self.pairs.is_empty() && !(self.tau_h < 0.0 && self.min_distance > 0.0) {
            return Err(Error::Contract("spacing constraints need tau_h < 0 and a positive distance".into()));
        }
        if self.pairs.iter().any(|(i, j)| i == j || 2 * i.max(j) + 1 >= n_pos) {
            return Err(Error::Contract("invalid antenna pair".into()));
        }
        if !(self.power > 0.0) {
            return Err(Error::Contract("power budget must be positive".into()));
        }
        Ok(())
    }

    /// Surrogate values f_k at a point.
    pub fn surrogate_values(&self, pos: &[f64], q: &[CMat]) -> Vec<f64> {
        self.surrogates.iter().map(|s| s.value(pos, q)).collect()
    }

    /// Spacing constraints `(h_e(p) - D^2 (1 + margin)) / D^2 >= 0`.
    pub fn distance_constraints(&self, pos: &[f64]) -> Vec<f64> {
        let d_sq = self.d_sq();
        let a = &self.anchor_pos;
        self.pairs
            .iter()
            .map(|&(i, j)| {
                let (dx, dy) = (a[2 * i] - a[2 * j], a[2 * i + 1] - a[2 * j + 1]);
                let prox = (pos[2 * i] - a[2 * i]).powi(2)
                    + (pos[2 * i + 1] - a[2 * i + 1]).powi(2)
                    + (pos[2 * j] - a[2 * j]).powi(2)
                    + (pos[2 * j + 1] - a[2 * j + 1]).powi(2);
                let h = self.tau_h * prox + 2.0 * (dx * (pos[2 * i] - pos[2 * j]) + dy * (pos[2 * i + 1] - pos[2 * j + 1]))
                    - (dx * dx + dy * dy);
                (h - d_sq * (1.0 + DISTANCE_MARGIN)) / d_sq
            })
            .collect()
    }

    fn distance_gradient(&self, pos: &[f64], mu: &[f64], out: &mut [f64]) {
        let d_sq = self.d_sq();
        let a = &self.anchor_pos;
        for (&(i, j), m) in self.pairs.iter().zip(mu) {
            if *m == 0.0 {
                continue;
            }
            let s = m / d_sq;
            for ax in 0..2 {
                let d = a[2 * i + ax] - a[2 * j + ax];
                out[2 * i + ax] += s * (2.0 * self.tau_h * (pos[2 * i + ax] - a[2 * i + ax]) + 2.0 * d);
                out[2 * j + ax] += s * (2.0 * self.tau_h * (pos[2 * j + ax] - a[2 * j + ax]) - 2.0 * d);
            }
        }
    }

    fn weights(&self, lambda: &[f64]) -> Vec<f64> {
        match self.mode {
            SolveMode::Objective => lambda.iter().map(|l| 1.0 + l).collect(),
            SolveMode::Feasibility => lambda.to_vec(),
        }
    }

    /// Objective of the active mode at a point: sum of surrogates, or the best slack.
    pub fn objective_value(&self, pos: &[f64], q: &[CMat]) -> f64 {
        let f = self.surrogate_values(pos, q);
        match self.mode {
            SolveMode::Objective => f.iter().sum(),
            SolveMode::Feasibility => f.iter().fold(f64::INFINITY, |m, v| m.min(v - self.rate_min)),
        }
    }
}

/// Nearest PSD matrix in Frobenius norm.
pub fn project_psd(a: &CMat) -> CMat {
    linalg::project_psd(a)
}

/// Stationarity (natural residual of the Lagrangian over the simple sets), maximal
/// constraint violation and maximal complementarity product.
pub fn kkt_residuals(
    problem: &SurrogateProblem,
    pos: &[f64],
    q: &[CMat],
    alpha: Option<f64>,
    mult: &Multipliers,
) -> KktResiduals {
    let k = problem.n_users();
    let lambda: Vec<f64> = (0..k).map(|i| mult.rate.get(i).copied().unwrap_or(0.0)).collect();
    let mu: Vec<f64> = (0..problem.pairs.len()).map(|i| mult.distance.get(i).copied().unwrap_or(0.0)).collect();
    let w = problem.weights(&lambda);
    let f = problem.surrogate_values(pos, q);
    let slack = match problem.mode {
        SolveMode::Objective => 0.0,
        SolveMode::Feasibility => alpha.unwrap_or_else(|| problem.objective_value(pos, q)),
    };

    let mut gp = vec![0.0; pos.len()];
    let n = problem.dim();
    let mut gq = vec![CMat::zeros(n, n); k];
    for (s, wk) in problem.surrogates.iter().zip(&w) {
        let (a, b) = s.gradient(pos, q);
        for (x, y) in gp.iter_mut().zip(a) {
            *x += wk * y;
        }
        for (x, y) in gq.iter_mut().zip(b) {
            *x += y * c(*wk);
        }
    }
    problem.distance_gradient(pos, &mu, &mut gp);
    let mut stat = 0.0;
    for (i, p) in pos.iter().enumerate() {
        let moved = (p + gp[i]).clamp(problem.lower[i], problem.upper[i]);
        stat += (p - moved).powi(2);
    }
    let shifted: Vec<CMat> = q.iter().zip(&gq).map(|(a, b)| a + b).collect();
    for (a, b) in q.iter().zip(linalg::project_psd_budget(&shifted, problem.power)) {
        stat += linalg::frob_sq(&(a - b));
    }
    if problem.mode == SolveMode::Feasibility {
        stat += (1.0 - lambda.iter().sum::<f64>()).powi(2);
    }

    let rate_c: Vec<f64> = f.iter().map(|v| v - problem.rate_min - slack).collect();
    let dist_c = problem.distance_constraints(pos);
    let mut primal = 0.0f64;
    for v in rate_c.iter().chain(&dist_c) {
        primal = primal.max(-v);
    }
    for (i, p) in pos.iter().enumerate() {
        primal = primal.max(problem.lower[i] - p).max(p - problem.upper[i]);
    }
    let tr: f64 = q.iter().map(linalg::trace_re).sum();
    primal = primal.max(tr - problem.power);
    for m in q {
        primal = primal.max(-linalg::min_eig(m));
    }
    let mut compl = 0.0f64;
    for (l, v) in lambda.iter().zip(&rate_c) {
        compl = compl.max((l * v).abs());
    }
    for (m, v) in mu.iter().zip(&dist_c) {
        compl = compl.max((m * v).abs());
    }
    KktResiduals { stationarity: stat.sqrt(), primal: primal.max(0.0), complementarity: compl }
}

struct Primal {
    pos: Vec<f64>,
    q: Vec<CMat>,
}

type EigCache = Option<(Vec<f64>, Vec<(Vec<f64>, CMat)>, Vec<f64>)>;

struct Dual<'a> {
    p: &'a SurrogateProblem,
    k: usize,
    cache: RefCell<EigCache>,
    evaluations: usize,
}

impl<'a> Dual<'a> {
    fn new(p: &'a SurrogateProblem) -> Self {
        Dual { p, k: p.n_users(), cache: RefCell::new(None), evaluations: 0 }
    }

    fn project(&self, y: &mut [f64]) {
        let (lam, mu) = y.split_at_mut(self.k);
        match self.p.mode {
            SolveMode::Objective => lam.iter_mut().for_each(|v| *v = v.max(0.0)),
            SolveMode::Feasibility => project_simplex(lam),
        }
        mu.iter_mut().for_each(|v| *v = v.max(0.0));
    }

    fn argmax(&self, y: &[f64]) -> Primal {
        let p = self.p;
        let (lam, mu) = y.split_at(self.k);
        let w = p.weights(lam);
        let n_pos = p.anchor_pos.len();

        let mut quad = vec![0.0; n_pos];
        let mut lin = vec![0.0; n_pos];
        for (s, wk) in p.surrogates.iter().zip(&w) {
            for i in 0..n_pos {
                quad[i] += wk * s.curv_pos[i];
                lin[i] += wk * s.lin_pos[i];
            }
        }
        let d_sq = p.d_sq();
        let a = &p.anchor_pos;
        for (&(i, j), m) in p.pairs.iter().zip(mu) {
            if *m == 0.0 {
                continue;
            }
            let s = m / d_sq;
            for ax in 0..2 {
                let (ci, cj) = (2 * i + ax, 2 * j + ax);
                let d = a[ci] - a[cj];
                quad[ci] += s * p.tau_h;
                quad[cj] += s * p.tau_h;
                lin[ci] += s * (-2.0 * p.tau_h * a[ci] + 2.0 * d);
                lin[cj] += s * (-2.0 * p.tau_h * a[cj] - 2.0 * d);
            }
        }
        let scale = quad.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        let pos = (0..n_pos)
            .map(|i| {
                let (lo, hi) = (p.lower[i], p.upper[i]);
                let qd = quad[i].min(-1e-9 * scale);
                (-lin[i] / (2.0 * qd)).clamp(lo, hi)
            })
            .collect();

        let mut cache = self.cache.borrow_mut();
        let stale = cache.as_ref().is_none_or(|(cw, _, _)| *cw != w);
        if stale {
            let n = p.dim();
            let mut eigs = Vec::with_capacity(self.k);
            let mut curv = Vec::with_capacity(self.k);
            for i in 0..self.k {
                let mut m = CMat::zeros(n, n);
                let mut s = 0.0;
                for (sk, wk) in p.surrogates.iter().zip(&w) {
                    m += &sk.lin_q[i] * c(*wk);
                    s += wk * sk.curv_q[i];
                }
                eigs.push(linalg::eigh(&m));
                curv.push(s);
            }
            *cache = Some((w.clone(), eigs, curv));
        }
        let (_, eigs, curv) = cache.as_ref().expect("filled above");
        let cscale = curv.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        let gains: Vec<f64> = curv.iter().map(|s| 1.0 / (2.0 * s.abs().max(1e-9 * cscale))).collect();
        let groups: Vec<(&[f64], f64)> = eigs.iter().zip(&gains).map(|((e, _), g)| (e.as_slice(), *g)).collect();
        let nu = linalg::water_level(&groups, p.power);
        let q = eigs
            .iter()
            .zip(&gains)
            .map(|((e, u), g)| {
                let vals: Vec<f64> = e.iter().map(|v| g * (v - nu).max(0.0)).collect();
                linalg::from_eig(&vals, u)
            })
            .collect();
        Primal { pos, q }
    }

    /// Dual value, its gradient and the Lagrangian maximizer.
    fn eval(&mut self, y: &[f64]) -> (f64, Vec<f64>, Primal) {
        self.evaluations += 1;
        let x = self.argmax(y);
        let p = self.p;
        let f = p.surrogate_values(&x.pos, &x.q);
        let dist = p.distance_constraints(&x.pos);
        let (lam, mu) = y.split_at(self.k);
        let mut grad: Vec<f64> = f.iter().map(|v| v - p.rate_min).collect();
        let mut val: f64 = lam.iter().zip(&grad).map(|(l, g)| l * g).sum();
        if p.mode == SolveMode::Objective {
            val += f.iter().sum::<f64>();
        }
        val += mu.iter().zip(&dist).map(|(m, d)| m * d).sum::<f64>();
        grad.extend(dist);
        (val, grad, x)
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn report(
    p: &SurrogateProblem,
    x: Primal,
    y: &[f64],
    iterations: usize,
    evaluations: usize,
    status: SolverStatus,
) -> SolverReport {
    let k = p.n_users();
    let mult = Multipliers { rate: y[..k].to_vec(), distance: y[k..].to_vec() };
    let alpha = (p.mode == SolveMode::Feasibility).then(|| p.objective_value(&x.pos, &x.q));
    let residuals = kkt_residuals(p, &x.pos, &x.q, alpha, &mult);
    SolverReport {
        mode: p.mode,
        objective: p.objective_value(&x.pos, &x.q),
        pos: x.pos,
        q: CovarianceSet::new(x.q),
        alpha,
        multipliers: mult,
        residuals,
        iterations,
        evaluations,
        status,
    }
}

/// Slack, constraint violation and complementarity over the coupling constraints only;
/// the simple sets hold by construction of the Lagrangian maximizer.
fn quick_residuals(p: &SurrogateProblem, x: &Primal, y: &[f64]) -> (Option<f64>, f64, f64) {
    let k = p.n_users();
    let f = p.surrogate_values(&x.pos, &x.q);
    let alpha = (p.mode == SolveMode::Feasibility).then(|| f.iter().fold(f64::INFINITY, |m, v| m.min(v - p.rate_min)));
    let slack = alpha.unwrap_or(0.0);
    let dist = p.distance_constraints(&x.pos);
    let mut primal = 0.0f64;
    let mut compl = 0.0f64;
    for (l, v) in y[..k].iter().zip(f.iter().map(|v| v - p.rate_min - slack)) {
        primal = primal.max(-v);
        compl = compl.max((l * v).abs());
    }
    for (m, v) in y[k..].iter().zip(&dist) {
        primal = primal.max(-v);
        compl = compl.max((m * v).abs());
    }
    (alpha, primal, compl)
}

fn converged(p: &SurrogateProblem, r: &KktResiduals) -> bool {
    r.primal <= p.tol.primal && r.stationarity <= p.tol.stationarity && r.complementarity <= p.tol.complementarity
}

/// Accelerated projected gradient on the dual. With `stop_when_feasible`, a feasibility
/// solve returns as soon as it holds a spacing-feasible point with nonnegative slack.
fn solve_dual(p: &SurrogateProblem, y0: Option<&[f64]>, stop_when_feasible: bool) -> Result<SolverReport> {
    p.validate()?;
    let k = p.n_users();
    let dim = k + p.pairs.len();
    let mut dual = Dual::new(p);
    let mut y = match y0 {
        Some(v) if v.len() == dim => v.to_vec(),
        _ => {
            let mut v = vec![0.0; dim];
            if p.mode == SolveMode::Feasibility {
                v[..k].iter_mut().for_each(|x| *x = 1.0 / k as f64);
            }
            v
        }
    };
    dual.project(&mut y);
    let (mut dy, _, mut xy) = dual.eval(&y);
    let mut z = y.clone();
    let (mut dz, mut gz, _) = dual.eval(&z);
    let mut t = 1.0f64;
    let mut lip = 1.0f64;
    let mut best: Option<(f64, Vec<f64>)> = None;

    for it in 0..p.tol.max_iterations {
        let (alpha, primal, compl) = quick_residuals(p, &xy, &y);
        if primal <= p.tol.primal && compl <= p.tol.complementarity {
            let mult = Multipliers { rate: y[..k].to_vec(), distance: y[k..].to_vec() };
            if converged(p, &kkt_residuals(p, &xy.pos, &xy.q, alpha, &mult)) {
                return Ok(report(p, xy, &y, it, dual.evaluations, SolverStatus::Converged));
            }
        }
        if stop_when_feasible && primal <= p.tol.primal && alpha.is_some_and(|a| a >= 0.0) {
            return Ok(report(p, xy, &y, it, dual.evaluations, SolverStatus::Converged));
        }
        let merit = primal + compl;
        if best.as_ref().is_none_or(|(m, _)| merit < *m) {
            best = Some((merit, y.clone()));
        }

        let (yn, dn, xn) = loop {
            let mut cand: Vec<f64> = z.iter().zip(&gz).map(|(a, g)| a - g / lip).collect();
            dual.project(&mut cand);
            let (dc, _, xc) = dual.eval(&cand);
            let diff: Vec<f64> = cand.iter().zip(&z).map(|(a, b)| a - b).collect();
            let bound = dz + dot(&gz, &diff) + 0.5 * lip * dot(&diff, &diff);
            if dc <= bound + 1e-13 * (1.0 + dz.abs()) || lip > 1e30 {
                break (cand, dc, xc);
            }
            lip *= 2.0;
        };
        let step: Vec<f64> = yn.iter().zip(&y).map(|(a, b)| a - b).collect();
        if dn > dy {
            t = 1.0;
            z = yn.clone();
        } else {
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / tn;
            z = yn.iter().zip(&step).map(|(a, s)| a + beta * s).collect();
            dual.project(&mut z);
            t = tn;
        }
        y = yn;
        dy = dn;
        xy = xn;
        let (a, b, _) = dual.eval(&z);
        dz = a;
        gz = b;
        lip *= 0.8;
    }
    let y_best = best.map_or(y, |(_, v)| v);
    let x_best = dual.argmax(&y_best);
    log::debug!("surrogate solver hit its iteration cap ({:?})", p.mode);
    Ok(report(p, x_best, &y_best, p.tol.max_iterations, dual.evaluations, SolverStatus::MaxIter))
}

/// Maximizes the common slack alpha; always returns a point.
pub fn solve_feasibility(problem: &SurrogateProblem) -> Result<SolverReport> {
    let p = SurrogateProblem { mode: SolveMode::Feasibility, ..problem.clone() };
    solve_dual(&p, None, false)
}

/// Slack below which the objective problem is declared infeasible.
pub const FEASIBILITY_THRESHOLD: f64 = -1e-8;

/// Decides feasibility through the slack problem, then maximizes the sum of surrogates.
pub fn solve_objective(problem: &SurrogateProblem) -> Result<ObjectiveOutcome> {
    let fp = SurrogateProblem { mode: SolveMode::Feasibility, ..problem.clone() };
    let feas = solve_dual(&fp, None, true)?;
    let alpha = feas.alpha.unwrap_or(f64::NEG_INFINITY);
    if alpha < FEASIBILITY_THRESHOLD {
        // The early exit never triggers with a negative slack, so this is a full solve.
        return Ok(ObjectiveOutcome::Infeasible(feas));
    }
    let op = SurrogateProblem { mode: SolveMode::Objective, ..problem.clone() };
    let k = op.n_users() as f64;
    let mut y0 = vec![0.0; op.n_users()];
    y0.extend(feas.multipliers.distance.iter().map(|m| m * k));
    Ok(ObjectiveOutcome::Solved(solve_dual(&op, Some(&y0), false)?))
}
