//! Recursive quadratic surrogates for the long-term problem, step-size sequences and
//! the convex-combination variable update.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSample, Point};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, c, CMat};
use crate::rate::{rate_gradients, CovarianceSet, Link};

/// rho_l = (l+1)^-a and gamma_l = (l+1)^-b with a zero-based iteration counter l.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSequences {
    pub rho_exponent: f64,
    pub gamma_exponent: f64,
}

impl Default for StepSequences {
    fn default() -> Self {
        StepSequences { rho_exponent: 0.9, gamma_exponent: 1.0 }
    }
}

impl StepSequences {
    pub fn rho(&self, iteration: usize) -> f64 {
        (iteration as f64 + 1.0).powf(-self.rho_exponent)
    }

    pub fn gamma(&self, iteration: usize) -> f64 {
        (iteration as f64 + 1.0).powf(-self.gamma_exponent)
    }
}

/// Concave quadratic over (p, Q_1..Q_K) stored in absolute coordinates:
/// `c + lin_pos.p + sum_j curv_pos_j p_j^2 + sum_i (<lin_q_i, Q_i> + curv_q_i |Q_i|_F^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticSurrogate {
    pub constant: f64,
    pub lin_pos: Vec<f64>,
    pub curv_pos: Vec<f64>,
    pub lin_q: Vec<CMat>,
    pub curv_q: Vec<f64>,
}

impl QuadraticSurrogate {
    pub fn zero(n_pos: usize, k: usize, n: usize) -> Self {
        QuadraticSurrogate {
            constant: 0.0,
            lin_pos: vec![0.0; n_pos],
            curv_pos: vec![0.0; n_pos],
            lin_q: vec![CMat::zeros(n, n); k],
            curv_q: vec![0.0; k],
        }
    }

    /// `value + grad.(x - a) + curv |x - a|^2` about the anchor `a`, rewritten in absolute form.
    pub fn expand(
        value: f64,
        grad_pos: &[f64],
        curv_pos: &[f64],
        grad_q: &[CMat],
        curv_q: &[f64],
        anchor_pos: &[f64],
        anchor_q: &CovarianceSet,
    ) -> Self {
        let mut constant = value;
        let mut lin_pos = Vec::with_capacity(grad_pos.len());
        for ((g, t), a) in grad_pos.iter().zip(curv_pos).zip(anchor_pos) {
            lin_pos.push(g - 2.0 * t * a);
            constant += -g * a + t * a * a;
        }
        let mut lin_q = Vec::with_capacity(grad_q.len());
        for ((g, t), a) in grad_q.iter().zip(curv_q).zip(&anchor_q.mats) {
            lin_q.push(linalg::hermitize(&(g - a * c(2.0 * t))));
            constant += -linalg::inner(g, a) + t * linalg::frob_sq(a);
        }
        QuadraticSurrogate { constant, lin_pos, curv_pos: curv_pos.to_vec(), lin_q, curv_q: curv_q.to_vec() }
    }

    pub fn value(&self, pos: &[f64], q: &[CMat]) -> f64 {
        let mut v = self.constant;
        for ((l, t), p) in self.lin_pos.iter().zip(&self.curv_pos).zip(pos) {
            v += l * p + t * p * p;
        }
        for ((l, t), m) in self.lin_q.iter().zip(&self.curv_q).zip(q) {
            v += linalg::inner(l, m) + t * linalg::frob_sq(m);
        }
        v
    }

    pub fn gradient(&self, pos: &[f64], q: &[CMat]) -> (Vec<f64>, Vec<CMat>) {
        let gp = self.lin_pos.iter().zip(&self.curv_pos).zip(pos).map(|((l, t), p)| l + 2.0 * t * p).collect();
        let gq = self.lin_q.iter().zip(&self.curv_q).zip(q).map(|((l, t), m)| l + m * c(2.0 * t)).collect();
        (gp, gq)
    }

    /// `(1 - rho) self + rho other`.
    pub fn mix(&mut self, other: &QuadraticSurrogate, rho: f64) {
        let a = 1.0 - rho;
        self.constant = a * self.constant + rho * other.constant;
        for (x, y) in self.lin_pos.iter_mut().zip(&other.lin_pos) {
            *x = a * *x + rho * y;
        }
        for (x, y) in self.curv_pos.iter_mut().zip(&other.curv_pos) {
            *x = a * *x + rho * y;
        }
        for (x, y) in self.lin_q.iter_mut().zip(&other.lin_q) {
            *x = linalg::hermitize(&(&*x * c(a) + y * c(rho)));
        }
        for (x, y) in self.curv_q.iter_mut().zip(&other.curv_q) {
            *x = a * *x + rho * y;
        }
    }
}

/// One recursive surrogate per user plus the number of updates absorbed so far.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateState {
    pub users: Vec<QuadraticSurrogate>,
    pub updates: usize,
}

impl SurrogateState {
    pub fn new(k: usize, n_pos: usize, n: usize) -> Self {
        SurrogateState { users: vec![QuadraticSurrogate::zero(n_pos, k, n); k], updates: 0 }
    }

    pub fn values(&self, pos: &[f64], q: &[CMat]) -> Vec<f64> {
        self.users.iter().map(|u| u.value(pos, q)).collect()
    }
}

/// Mini-batch means for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserBatchGradient {
    pub rate: f64,
    pub grad_t: Vec<f64>,
    /// Gradient in the user's own receive APV; empty unless requested.
    pub grad_r: Vec<f64>,
    pub grad_q: Vec<CMat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients {
    pub users: Vec<UserBatchGradient>,
}

/// Batch means of rates and gradients; `receive[b][k]` is user k's APV for sample b.
/// Sensitivities of the short-term optimizer output to (t, Q) are not included.
pub fn mini_batch_gradients(
    tx: &[Point],
    covs: &CovarianceSet,
    samples: &[ChannelSample],
    receive: &[Vec<Vec<Point>>],
    wavelength: f64,
    noise: f64,
    with_receive: bool,
) -> Result<BatchGradients> {
    if samples.is_empty() {
        return Err(Error::Contract("mini-batch must hold at least one sample".into()));
    }
    if samples.len() != receive.len() {
        return Err(Error::Contract("one receive APV set per sample is required".into()));
    }
    let k_users = covs.len();
    let n = covs.dim();
    let b = samples.len() as f64;
    let mut users: Vec<UserBatchGradient> = (0..k_users)
        .map(|_| UserBatchGradient {
            rate: 0.0,
            grad_t: vec![0.0; 2 * tx.len()],
            grad_r: Vec::new(),
            grad_q: vec![CMat::zeros(n, n); k_users],
        })
        .collect();
    for (sample, apvs) in samples.iter().zip(receive) {
        for (k, acc) in users.iter_mut().enumerate() {
            let link = Link::new(&sample.users[k], wavelength, noise);
            let g = rate_gradients(&link, tx, &apvs[k], covs, k, with_receive)?;
            acc.rate += g.rate / b;
            for (x, y) in acc.grad_t.iter_mut().zip(&g.grad_t) {
                *x += y / b;
            }
            if with_receive {
                if acc.grad_r.is_empty() {
                    acc.grad_r = vec![0.0; g.grad_r.len()];
                }
                for (x, y) in acc.grad_r.iter_mut().zip(&g.grad_r) {
                    *x += y / b;
                }
            }
            for (x, y) in acc.grad_q.iter_mut().zip(&g.grad_q) {
                *x += y * c(1.0 / b);
            }
        }
    }
    for u in &mut users {
        for g in &mut u.grad_q {
            *g = linalg::hermitize(g);
        }
    }
    Ok(BatchGradients { users })
}

/// Mixes the per-user sample quadratics into the state with weight `rho`.
pub fn surrogate_update(state: &mut SurrogateState, samples: &[QuadraticSurrogate], rho: f64) -> Result<()> {
    if samples.len() != state.users.len() {
        return Err(Error::Contract("one sample quadratic per user is required".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Contract(format!("mixing weight {rho} outside (0, 1]")));
    }
    for (u, s) in state.users.iter().zip(samples) {
        check_dim("surrogate positions", u.lin_pos.len(), s.lin_pos.len())?;
        check_dim("surrogate covariances", u.lin_q.len(), s.lin_q.len())?;
        if let (Some(a), Some(b)) = (u.lin_q.first(), s.lin_q.first()) {
            check_dim("surrogate covariance size", a.nrows(), b.nrows())?;
        }
    }
    for (u, s) in state.users.iter_mut().zip(samples) {
        u.mix(s, rho);
    }
    state.updates += 1;
    Ok(())
}

/// Concave minorant of |t_i - t_j|^2 that is tight at the anchors.
pub fn distance_surrogate(anchor_i: Point, anchor_j: Point, ti: Point, tj: Point, tau_h: f64) -> f64 {
    let (dx, dy) = (anchor_i.x - anchor_j.x, anchor_i.y - anchor_j.y);
    tau_h * (ti.dist_sq(anchor_i) + tj.dist_sq(anchor_j)) + 2.0 * (dx * (ti.x - tj.x) + dy * (ti.y - tj.y))
        - (dx * dx + dy * dy)
}

/// `(1 - gamma) current + gamma solution` for positions and covariances.
pub fn blend_variables(
    pos: &[f64],
    q: &CovarianceSet,
    sol_pos: &[f64],
    sol_q: &CovarianceSet,
    gamma: f64,
) -> (Vec<f64>, CovarianceSet) {
    let p = pos.iter().zip(sol_pos).map(|(a, b)| (1.0 - gamma) * a + gamma * b).collect();
    let mats = q
        .mats
        .iter()
        .zip(&sol_q.mats)
        .map(|(a, b)| linalg::hermitize(&(a * c(1.0 - gamma) + b * c(gamma))))
        .collect();
    (p, CovarianceSet::new(mats))
}

pub fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

pub fn unflatten(v: &[f64]) -> Vec<Point> {
    v.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect()
}
