#![allow(dead_code)]

use ma_tts::channel::{PathAngle, PathAngles, Point, UserSample};
use ma_tts::linalg::CMat;
use ma_tts::rate::{CovarianceSet, Link};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LAMBDA: f64 = 0.06;
pub const NOISE: f64 = 1e-11;
pub const POWER: f64 = 0.1;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cgauss(rng: &mut impl Rng, var: f64) -> Complex64 {
    // Box-Muller keeps the helpers independent of the library's sampler.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    let r = (-u1.ln()).sqrt() * var.sqrt();
    Complex64::from_polar(r, 2.0 * std::f64::consts::PI * u2)
}

pub fn angles(rng: &mut impl Rng, l: usize) -> PathAngles {
    PathAngles::new(
        (0..l)
            .map(|_| PathAngle::new(rng.random::<f64>() * std::f64::consts::PI, rng.random::<f64>() * std::f64::consts::PI))
            .collect(),
    )
}

pub fn diag_sample(rng: &mut impl Rng, l: usize, gain: f64) -> UserSample {
    let mut s = CMat::zeros(l, l);
    for i in 0..l {
        s[(i, i)] = cgauss(rng, gain / l as f64);
    }
    UserSample { tx_paths: angles(rng, l), rx_paths: angles(rng, l), path_response: s }
}

pub fn points(rng: &mut impl Rng, n: usize, side: f64) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.random::<f64>() * side, rng.random::<f64>() * side)).collect()
}

pub fn random_psd(rng: &mut impl Rng, n: usize, trace: f64) -> CMat {
    let a = CMat::from_fn(n, n, |_, _| cgauss(rng, 1.0));
    let q = &a * a.adjoint();
    let t: f64 = (0..n).map(|i| q[(i, i)].re).sum();
    q * Complex64::new(trace / t, 0.0)
}

pub fn random_covs(rng: &mut impl Rng, k: usize, n: usize, power: f64) -> CovarianceSet {
    let shares: Vec<f64> = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = shares.iter().sum();
    CovarianceSet::new(shares.iter().map(|s| random_psd(rng, n, power * s / total)).collect())
}

/// A random single-user link with its geometry and covariances.
pub struct Instance {
    pub user: UserSample,
    pub tx: Vec<Point>,
    pub rx: Vec<Point>,
    pub covs: CovarianceSet,
    pub k: usize,
}

impl Instance {
    pub fn random(rng: &mut impl Rng, n: usize, m: usize, k_users: usize, l: usize) -> Self {
        let gain = 10f64.powf(-9.5 + rng.random::<f64>());
        Instance {
            user: diag_sample(rng, l, gain),
            tx: points(rng, n, 3.0 * LAMBDA),
            rx: points(rng, m, 3.0 * LAMBDA),
            covs: random_covs(rng, k_users, n, POWER),
            k: rng.random_range(0..k_users),
        }
    }

    pub fn link(&self) -> Link<'_> {
        Link::new(&self.user, LAMBDA, NOISE)
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    num / den
}

/// Central differences of `f` over every coordinate of an APV, layout [(x, y), ...].
pub fn fd_positions(pts: &[Point], h: f64, mut f: impl FnMut(&[Point]) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..pts.len() {
        for axis in 0..2 {
            let mut p = pts.to_vec();
            let mut q = pts.to_vec();
            if axis == 0 {
                p[i].x += h;
                q[i].x -= h;
            } else {
                p[i].y += h;
                q[i].y -= h;
            }
            out.push((f(&p) - f(&q)) / (2.0 * h));
        }
    }
    out
}

/// Hermitian basis direction: real symmetric (a, b) or imaginary antisymmetric pair.
pub fn hermitian_basis(n: usize, a: usize, b: usize, imag: bool) -> CMat {
    let mut e = CMat::zeros(n, n);
    if a == b {
        e[(a, a)] = Complex64::new(1.0, 0.0);
    } else if imag {
        e[(a, b)] = Complex64::new(0.0, 1.0);
        e[(b, a)] = Complex64::new(0.0, -1.0);
    } else {
        e[(a, b)] = Complex64::new(1.0, 0.0);
        e[(b, a)] = Complex64::new(1.0, 0.0);
    }
    e
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

use ma_tts::convex_solver::{SolveMode, SolverTolerances, SurrogateProblem};
use ma_tts::surrogate::QuadraticSurrogate;

pub fn random_hermitian(rng: &mut impl Rng, n: usize, scale: f64) -> CMat {
    let a = CMat::from_fn(n, n, |_, _| cgauss(rng, scale * scale));
    (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// A surrogate problem shaped like a long-term iteration: N transmit antennas on a UPA
/// anchor inside a box, K users, pairwise spacing constraints.
pub fn random_problem(rng: &mut impl Rng, n: usize, k: usize, rate_min: f64) -> SurrogateProblem {
    let d = LAMBDA / 2.0;
    let (w, h) = (7.0 * d, 3.0 * d);
    let anchor_pts = ma_tts::channel::upa(n, 1.5 * d, Point::new(w / 2.0, h / 2.0));
    let anchor: Vec<f64> = anchor_pts.iter().flat_map(|p| [p.x, p.y]).collect();
    let q0 = CovarianceSet::uniform(k, n, POWER);
    let surrogates = (0..k)
        .map(|_| {
            let rate = 3.0 + 4.0 * rng.random::<f64>();
            let gp: Vec<f64> = (0..2 * n).map(|_| 200.0 * (rng.random::<f64>() - 0.5)).collect();
            let gq: Vec<CMat> = (0..k)
                .map(|_| {
                    let a = random_hermitian(rng, n, 10.0);
                    let b = CMat::from_fn(n, n, |_, _| cgauss(rng, 1.0));
                    &b * b.adjoint() * Complex64::new(20.0, 0.0) + a
                })
                .collect();
            QuadraticSurrogate::expand(
                rate,
                &gp,
                &vec![-1.0; 2 * n],
                &gq,
                &vec![-1.0 / (POWER * POWER); k],
                &anchor,
                &q0,
            )
        })
        .collect();
    let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    SurrogateProblem {
        surrogates,
        lower: [0.0, 0.0].repeat(n),
        upper: [w, h].repeat(n),
        anchor_pos: anchor,
        pairs,
        tau_h: -1.0,
        min_distance: d,
        power: POWER,
        rate_min,
        mode: SolveMode::Objective,
        tol: SolverTolerances::default(),
    }
}

// Convex solver oracles.

use ma_tts::convex_solver::{ObjectiveOutcome, SolverReport};

pub fn solved(out: ObjectiveOutcome) -> SolverReport {
    match out {
        ObjectiveOutcome::Solved(s) => s,
        ObjectiveOutcome::Infeasible(_) => panic!("unexpected infeasibility"),
    }
}

pub fn scalar(v: f64) -> CMat {
    CMat::from_element(1, 1, Complex64::new(v, 0.0))
}

/// One transmit antenna in [0, 0.1]^2 and scalar covariances: at most four real unknowns.
pub fn tiny(users: &[(f64, [f64; 2], Vec<f64>)], power: f64, rate_min: f64) -> SurrogateProblem {
    let k = users.len();
    let surrogates = users
        .iter()
        .map(|(c0, lp, lq)| QuadraticSurrogate {
            constant: *c0,
            lin_pos: lp.to_vec(),
            curv_pos: vec![-1.0, -1.0],
            lin_q: lq.iter().map(|v| scalar(*v)).collect(),
            curv_q: vec![-1.0 / (power * power); k],
        })
        .collect();
    SurrogateProblem {
        surrogates,
        anchor_pos: vec![0.05, 0.05],
        lower: vec![0.0, 0.0],
        upper: vec![0.1, 0.1],
        pairs: vec![],
        tau_h: -1.0,
        min_distance: 0.03,
        power,
        rate_min,
        mode: SolveMode::Objective,
        tol: SolverTolerances::default(),
    }
}

pub fn eval_tiny(p: &SurrogateProblem, t: [f64; 2], q: &[f64]) -> Vec<f64> {
    let qs: Vec<CMat> = q.iter().map(|v| scalar(*v)).collect();
    p.surrogate_values(&t, &qs)
}

/// Zooming grid search over (x, y, q_1[, q_2]) for max of `score`, returning the best score.
pub fn grid_search(p: &SurrogateProblem, score: impl Fn(&[f64]) -> f64) -> f64 {
    let k = p.n_users();
    let dims = 2 + k;
    let mut lo = vec![0.0, 0.0];
    let mut hi = vec![0.1, 0.1];
    lo.extend(vec![0.0; k]);
    hi.extend(vec![p.power; k]);
    let res: usize = if dims == 3 { 100 } else { 30 };
    let mut best = (f64::NEG_INFINITY, vec![0.0; dims]);
    for _round in 0..5 {
        let total = res.pow(dims as u32);
        for idx in 0..total {
            let mut x = vec![0.0; dims];
            let mut r = idx;
            for d in 0..dims {
                let i = r % res;
                r /= res;
                x[d] = lo[d] + (hi[d] - lo[d]) * i as f64 / (res - 1) as f64;
            }
            let qs = &x[2..];
            if qs.iter().sum::<f64>() > p.power {
                continue;
            }
            let v = eval_tiny(p, [x[0], x[1]], qs);
            let s = score(&v);
            if s > best.0 {
                best = (s, x);
            }
        }
        for d in 0..dims {
            let width = (hi[d] - lo[d]) / 6.0;
            let cap = if d < 2 { 0.1 } else { p.power };
            lo[d] = (best.1[d] - width).max(0.0);
            hi[d] = (best.1[d] + width).min(cap);
        }
    }
    best.0
}

// Short-term oracles.

use ma_tts::channel::{Rect, RegionKind, RegionSpec};
use ma_tts::rate::ReceiveObjective;

pub fn grid_max(inst: &Instance, rect: &Rect, res: usize) -> f64 {
    let obj = ReceiveObjective::new(&inst.link(), &inst.tx, &inst.covs, inst.k).unwrap();
    let mut best = f64::NEG_INFINITY;
    for i in 0..res {
        for j in 0..res {
            let p = Point::new(
                rect.x_min + rect.width() * i as f64 / (res - 1) as f64,
                rect.y_min + rect.height() * j as f64 / (res - 1) as f64,
            );
            best = best.max(obj.rate(&[p]).unwrap());
        }
    }
    best
}

pub fn small_instance(r: &mut impl Rng, side: f64) -> (Instance, RegionSpec) {
    let n = r.random_range(2..=4);
    let k = r.random_range(1..=2);
    let mut inst = Instance::random(r, n, 1, k, 2);
    let rect = Rect::new(0.0, side, 0.0, side);
    inst.rx = vec![rect.center()];
    (inst, RegionSpec::shared(RegionKind::ReceiveGmm, rect, LAMBDA / 2.0))
}

// Surrogate oracles.

pub struct Anchored {
    pub value: f64,
    pub grad_pos: Vec<f64>,
    pub grad_q: Vec<CMat>,
    pub tau_t: f64,
    pub tau_q: f64,
    pub anchor_pos: Vec<f64>,
    pub anchor_q: CovarianceSet,
}

impl Anchored {
    pub fn random(r: &mut impl Rng, n_pos: usize, k: usize, n: usize) -> Self {
        Anchored {
            value: 5.0 * r.random::<f64>(),
            grad_pos: (0..n_pos).map(|_| 100.0 * (r.random::<f64>() - 0.5)).collect(),
            grad_q: (0..k).map(|_| random_hermitian(r, n, 50.0)).collect(),
            tau_t: -1.0,
            tau_q: -100.0,
            anchor_pos: (0..n_pos).map(|_| 0.2 * r.random::<f64>()).collect(),
            anchor_q: random_covs(r, k, n, POWER),
        }
    }

    /// Direct evaluation in the anchored (non-expanded) form.
    pub fn eval(&self, pos: &[f64], q: &[CMat]) -> f64 {
        let mut v = self.value;
        for ((g, x), a) in self.grad_pos.iter().zip(pos).zip(&self.anchor_pos) {
            v += g * (x - a) + self.tau_t * (x - a) * (x - a);
        }
        for ((g, x), a) in self.grad_q.iter().zip(q).zip(&self.anchor_q.mats) {
            let d = x - a;
            let tr: f64 = (g.adjoint() * &d).trace().re;
            v += tr + self.tau_q * d.norm_squared();
        }
        v
    }

    pub fn compact(&self) -> QuadraticSurrogate {
        let np = self.grad_pos.len();
        let k = self.grad_q.len();
        QuadraticSurrogate::expand(
            self.value,
            &self.grad_pos,
            &vec![self.tau_t; np],
            &self.grad_q,
            &vec![self.tau_q; k],
            &self.anchor_pos,
            &self.anchor_q,
        )
    }
}

