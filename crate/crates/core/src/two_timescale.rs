//! Long-term loops: transmit positions and covariances driven by recursive surrogates
//! built from mini-batches of short-term receive solutions, plus the benchmark schemes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    draw_channel_sample, min_pairwise_distance, stream_rng, upa, upa_shape, ChannelSample, Point, Rect, RegionSpec,
    StatisticalState,
};
pub use crate::config::SchemeId;
use crate::config::SystemParams;
use crate::convex_solver::{solve_objective, ObjectiveOutcome, SolveMode, SolverReport, SolverStatus, SurrogateProblem};
use crate::error::{Error, Result};
use crate::rate::{CovarianceSet, Link};
use crate::short_term::{ga_optimize, gp_optimize, ShortTermOutcome};
use crate::surrogate::{blend_variables, mini_batch_gradients, surrogate_update, QuadraticSurrogate, SurrogateState};

/// How many times the blending weight may be halved to keep the spacing.
const MAX_GAMMA_HALVINGS: usize = 40;

/// Bookkeeping for one long-term iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Sum over users of the updated surrogates at the current anchor.
    pub surrogate_sum: f64,
    /// Mini-batch mean rate per user at the anchor.
    pub batch_rates: Vec<f64>,
    /// min_k f_k - R_min at the solver output.
    pub alpha: f64,
    /// The objective problem was feasible this iteration.
    pub feasible: bool,
    pub solver_status: SolverStatus,
    pub solver_iterations: usize,
    /// Blending weight actually applied.
    pub gamma: f64,
    /// Invariants of the next iterate.
    pub min_tx_distance: f64,
    pub min_rx_distance: f64,
    pub total_trace: f64,
    pub min_eigenvalue: f64,
}

impl IterationRecord {
    pub fn batch_sum_rate(&self) -> f64 {
        self.batch_rates.iter().sum()
    }
}

/// One long-term iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub tx: Vec<Point>,
    pub covs: CovarianceSet,
    pub rx_fixed: Option<Vec<Vec<Point>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongTermSolution {
    pub scheme: SchemeId,
    pub tx: Vec<Point>,
    pub covs: CovarianceSet,
    /// Receive APVs chosen on statistics only (S-CSIT schemes).
    pub rx_fixed: Option<Vec<Vec<Point>>>,
    /// Starting point of the short-term optimizer for every channel sample.
    pub rx_init: Vec<Point>,
    pub trace: Vec<IterationRecord>,
    /// The initial point followed by the iterate after every iteration.
    pub iterates: Vec<Iterate>,
}

impl LongTermSolution {
    /// Receive APVs of every user for one channel sample under the scheme's own policy.
    pub fn receive_apvs(&self, sample: &ChannelSample, sys: &SystemParams) -> Result<Vec<Vec<Point>>> {
        let it = Iterate { tx: self.tx.clone(), covs: self.covs.clone(), rx_fixed: self.rx_fixed.clone() };
        self.receive_apvs_at(&it, sample, sys)
    }

    /// As [`LongTermSolution::receive_apvs`] for an arbitrary iterate of this scheme.
    pub fn receive_apvs_at(&self, it: &Iterate, sample: &ChannelSample, sys: &SystemParams) -> Result<Vec<Vec<Point>>> {
        if let Some(r) = &it.rx_fixed {
            return Ok(r.clone());
        }
        (0..sample.users.len())
            .map(|k| short_term(self.scheme, sample, k, &it.tx, &it.covs, &self.rx_init, sys).map(|o| o.apv))
            .collect()
    }
}

fn points(flat: &[f64]) -> Vec<Point> {
    flat.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect()
}

fn flat(pts: &[Point]) -> Vec<f64> {
    pts.iter().flat_map(|p| [p.x, p.y]).collect()
}

/// UPA centered in `rect` with the preferred spacing, shrunk to fit when needed.
fn fitted_upa(n: usize, preferred: f64, rect: &Rect, d: f64) -> Result<Vec<Point>> {
    let (cols, rows) = upa_shape(n);
    let mut s = preferred;
    if cols > 1 {
        s = s.min(rect.width() / (cols - 1) as f64);
    }
    if rows > 1 {
        s = s.min(rect.height() / (rows - 1) as f64);
    }
    if n > 1 && s < d {
        return Err(Error::Contract(format!("{n} antennas at spacing {d:.3e} m do not fit the region")));
    }
    Ok(upa(n, s, rect.center()))
}

/// UPA whose first antenna sits at the region's lower-left corner.
fn corner_upa(n: usize, spacing: f64, region: &RegionSpec) -> Result<Vec<Point>> {
    let (cols, rows) = upa_shape(n);
    let r = region.rect(0);
    let center = Point::new(
        r.x_min + 0.5 * spacing * (cols as f64 - 1.0),
        r.y_min + 0.5 * spacing * (rows as f64 - 1.0),
    );
    let apv = upa(n, spacing, center);
    region.check_apv(&apv)?;
    Ok(apv)
}

/// Initial transmit APV of a scheme.
pub fn initial_tx(scheme: SchemeId, sys: &SystemParams) -> Result<Vec<Point>> {
    match scheme {
        SchemeId::ScsitUpa => corner_upa(sys.n_tx, sys.upa_spacing, &sys.tx_region),
        _ => fitted_upa(sys.n_tx, sys.min_distance + 0.5 * sys.x_t, sys.tx_region.rect(0), sys.min_distance),
    }
}

/// Initial receive APV of a scheme (same for every user).
pub fn initial_rx(scheme: SchemeId, sys: &SystemParams) -> Result<Vec<Point>> {
    match scheme {
        SchemeId::ProposedPmm => Ok(sys.rx_region_pmm.rects.iter().map(Rect::center).collect()),
        SchemeId::ScsitUpa => corner_upa(sys.m_rx, sys.upa_spacing, &sys.rx_region_gmm),
        _ => fitted_upa(sys.m_rx, sys.min_distance + 0.5 * sys.x_r, sys.rx_region_gmm.rect(0), sys.min_distance),
    }
}

/// Receive region the scheme's antennas live in.
pub fn receive_region(scheme: SchemeId, sys: &SystemParams) -> &RegionSpec {
    match scheme {
        SchemeId::ProposedPmm => &sys.rx_region_pmm,
        _ => &sys.rx_region_gmm,
    }
}

/// Short-term receive optimization of user `k` on one sample.
pub fn short_term(
    scheme: SchemeId,
    sample: &ChannelSample,
    k: usize,
    tx: &[Point],
    covs: &CovarianceSet,
    rx_init: &[Point],
    sys: &SystemParams,
) -> Result<ShortTermOutcome> {
    let link = Link::new(&sample.users[k], sys.wavelength, sys.noise);
    match scheme {
        SchemeId::ProposedPmm => gp_optimize(&link, tx, covs, k, rx_init, &sys.rx_region_pmm, &sys.short_term),
        _ => ga_optimize(&link, tx, covs, k, rx_init, &sys.rx_region_gmm, &sys.short_term),
    }
}

/// Variable layout of the long-term problem for one scheme.
struct Layout {
    scheme: SchemeId,
    n_tx: usize,
    m_rx: usize,
    k: usize,
    /// Transmit APV when it is not a variable.
    tx_fixed: Option<Vec<Point>>,
    rx_fixed: Option<Vec<Vec<Point>>>,
    rx_init: Vec<Point>,
}

impl Layout {
    fn new(scheme: SchemeId, sys: &SystemParams) -> Result<Self> {
        let rx_init = initial_rx(scheme, sys)?;
        let k = sys.n_users();
        let (tx_fixed, rx_fixed) = match scheme {
            SchemeId::ScsitUpa => (Some(initial_tx(scheme, sys)?), Some(vec![rx_init.clone(); k])),
            _ => (None, None),
        };
        Ok(Layout { scheme, n_tx: sys.n_tx, m_rx: sys.m_rx, k, tx_fixed, rx_fixed, rx_init })
    }

    fn receive_variables(&self) -> bool {
        self.scheme == SchemeId::ScsitGmm
    }

    fn n_pos(&self) -> usize {
        match (self.tx_fixed.is_some(), self.receive_variables()) {
            (true, _) => 0,
            (false, true) => 2 * (self.n_tx + self.k * self.m_rx),
            (false, false) => 2 * self.n_tx,
        }
    }

    fn initial_pos(&self, sys: &SystemParams) -> Result<Vec<f64>> {
        if self.tx_fixed.is_some() {
            return Ok(Vec::new());
        }
        let mut p = flat(&initial_tx(self.scheme, sys)?);
        if self.receive_variables() {
            for _ in 0..self.k {
                p.extend(flat(&self.rx_init));
            }
        }
        Ok(p)
    }

    fn tx(&self, pos: &[f64]) -> Vec<Point> {
        match &self.tx_fixed {
            Some(t) => t.clone(),
            None => points(&pos[..2 * self.n_tx]),
        }
    }

    fn rx_long_term(&self, pos: &[f64]) -> Option<Vec<Vec<Point>>> {
        if let Some(r) = &self.rx_fixed {
            return Some(r.clone());
        }
        if !self.receive_variables() {
            return None;
        }
        let off = 2 * self.n_tx;
        Some((0..self.k).map(|k| points(&pos[off + 2 * k * self.m_rx..off + 2 * (k + 1) * self.m_rx])).collect())
    }

    fn bounds(&self, sys: &SystemParams) -> (Vec<f64>, Vec<f64>) {
        let mut lo = Vec::with_capacity(self.n_pos());
        let mut hi = Vec::with_capacity(self.n_pos());
        if self.n_pos() == 0 {
            return (lo, hi);
        }
        let mut push = |r: &Rect, count: usize| {
            for _ in 0..count {
                lo.extend([r.x_min, r.y_min]);
                hi.extend([r.x_max, r.y_max]);
            }
        };
        push(sys.tx_region.rect(0), self.n_tx);
        if self.receive_variables() {
            push(sys.rx_region_gmm.rect(0), self.k * self.m_rx);
        }
        (lo, hi)
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if self.n_pos() == 0 {
            return out;
        }
        let mut group = |start: usize, n: usize| {
            for i in start..start + n {
                for j in i + 1..start + n {
                    out.push((i, j));
                }
            }
        };
        group(0, self.n_tx);
        if self.receive_variables() {
            for k in 0..self.k {
                group(self.n_tx + k * self.m_rx, self.m_rx);
            }
        }
        out
    }

    fn spacing_ok(&self, pos: &[f64], d: f64) -> bool {
        let d = d * (1.0 - 1e-12);
        if self.n_pos() == 0 {
            return true;
        }
        if min_pairwise_distance(&self.tx(pos)) < d {
            return false;
        }
        self.rx_long_term(pos).is_none_or(|r| r.iter().all(|apv| min_pairwise_distance(apv) >= d))
    }

    /// Receive APVs used to build the sample surrogates: `[b][k]`.
    fn batch_receive(
        &self,
        samples: &[ChannelSample],
        tx: &[Point],
        covs: &CovarianceSet,
        pos: &[f64],
        sys: &SystemParams,
    ) -> Result<Vec<Vec<Vec<Point>>>> {
        if let Some(r) = self.rx_long_term(pos) {
            return Ok(vec![r; samples.len()]);
        }
        if self.scheme == SchemeId::DecoupledGmm {
            return Ok(vec![vec![self.rx_init.clone(); self.k]; samples.len()]);
        }
        let jobs: Vec<(usize, usize)> = (0..samples.len()).flat_map(|b| (0..self.k).map(move |k| (b, k))).collect();
        let solved = jobs
            .par_iter()
            .map(|&(b, k)| short_term(self.scheme, &samples[b], k, tx, covs, &self.rx_init, sys).map(|o| o.apv))
            .collect::<Result<Vec<_>>>()?;
        Ok(solved.chunks(self.k).map(|c| c.to_vec()).collect())
    }

    /// Per-user sample quadratic about the anchor.
    fn sample_quadratics(
        &self,
        samples: &[ChannelSample],
        receive: &[Vec<Vec<Point>>],
        pos: &[f64],
        covs: &CovarianceSet,
        sys: &SystemParams,
    ) -> Result<(Vec<QuadraticSurrogate>, Vec<f64>)> {
        let tx = self.tx(pos);
        let with_rx = self.receive_variables();
        let grads = mini_batch_gradients(&tx, covs, samples, receive, sys.wavelength, sys.noise, with_rx)?;
        let n_pos = self.n_pos();
        let mut curv_pos = vec![sys.tau_t; n_pos.min(2 * self.n_tx)];
        curv_pos.resize(n_pos, sys.tau_r);
        let curv_q = vec![sys.tau_q; self.k];
        let mut quads = Vec::with_capacity(self.k);
        let mut rates = Vec::with_capacity(self.k);
        for (k, g) in grads.users.iter().enumerate() {
            let mut grad_pos = Vec::with_capacity(n_pos);
            if n_pos > 0 {
                grad_pos.extend_from_slice(&g.grad_t);
                grad_pos.resize(n_pos, 0.0);
                if with_rx {
                    let off = 2 * (self.n_tx + k * self.m_rx);
                    grad_pos[off..off + 2 * self.m_rx].copy_from_slice(&g.grad_r);
                }
            }
            quads.push(QuadraticSurrogate::expand(g.rate, &grad_pos, &curv_pos, &g.grad_q, &curv_q, pos, covs));
            rates.push(g.rate);
        }
        Ok((quads, rates))
    }
}

/// Runs the long-term loop of `scheme`. Training samples of iteration l come from
/// `stream_rng(train_seed, [l])`, so schemes sharing a seed see the same samples.
pub fn run_scheme(
    scheme: SchemeId,
    stat: &StatisticalState,
    sys: &SystemParams,
    train_seed: u64,
) -> Result<LongTermSolution> {
    if stat.users.len() != sys.n_users() {
        return Err(Error::Contract("statistical state and system disagree on the user count".into()));
    }
    let layout = Layout::new(scheme, sys)?;
    let k = layout.k;
    let mut pos = layout.initial_pos(sys)?;
    let mut covs = CovarianceSet::uniform(k, sys.n_tx, sys.power);
    let init_tx = layout.tx(&pos);
    sys.tx_region.check_apv(&init_tx)?;
    receive_region(scheme, sys).check_apv(&layout.rx_init)?;

    let mut state = SurrogateState::new(k, layout.n_pos(), sys.n_tx);
    let (lower, upper) = layout.bounds(sys);
    let pairs = layout.pairs();
    let mut trace = Vec::with_capacity(sys.iterations);
    let mut iterates = Vec::with_capacity(sys.iterations + 1);
    iterates.push(Iterate { tx: init_tx, covs: covs.clone(), rx_fixed: layout.rx_long_term(&pos) });

    for l in 0..sys.iterations {
        let mut rng = stream_rng(train_seed, &[l as u64]);
        let samples: Vec<ChannelSample> =
            (0..sys.batch_size).map(|_| draw_channel_sample(stat, false, &mut rng)).collect();
        let tx = layout.tx(&pos);
        let receive = layout.batch_receive(&samples, &tx, &covs, &pos, sys)?;
        let (quads, batch_rates) = layout.sample_quadratics(&samples, &receive, &pos, &covs, sys)?;
        surrogate_update(&mut state, &quads, sys.steps.rho(l))?;
        let surrogate_sum = state.values(&pos, &covs.mats).iter().sum();

        let problem = SurrogateProblem {
            surrogates: state.users.clone(),
            anchor_pos: pos.clone(),
            lower: lower.clone(),
            upper: upper.clone(),
            pairs: pairs.clone(),
            tau_h: sys.tau_h,
            min_distance: sys.min_distance,
            power: sys.power,
            rate_min: sys.rate_min,
            mode: SolveMode::Objective,
            tol: sys.solver,
        };
        let (report, feasible) = match solve_objective(&problem)? {
            ObjectiveOutcome::Solved(r) => (r, true),
            ObjectiveOutcome::Infeasible(r) => (r, false),
        };
        if report.status == SolverStatus::MaxIter {
            log::debug!("{scheme} iteration {l}: surrogate solver stopped at its cap");
        }
        let alpha = slack(&problem, &report);

        let mut gamma = sys.steps.gamma(l);
        // A convex combination stays in the box up to rounding; clamp away the last ulp.
        let blend = |gamma: f64| {
            let (mut p, q) = blend_variables(&pos, &covs, &report.pos, &report.q, gamma);
            for ((v, lo), hi) in p.iter_mut().zip(&lower).zip(&upper) {
                *v = v.clamp(*lo, *hi);
            }
            (p, q)
        };
        let mut next = blend(gamma);
        let mut halvings = 0;
        while !layout.spacing_ok(&next.0, sys.min_distance) {
            halvings += 1;
            if halvings > MAX_GAMMA_HALVINGS {
                gamma = 0.0;
                next = (pos.clone(), covs.clone());
                break;
            }
            gamma *= 0.5;
            next = blend(gamma);
        }
        if halvings > 0 {
            log::debug!("{scheme} iteration {l}: blending weight reduced to {gamma:.3e}");
        }
        (pos, covs) = next;

        let rx = layout.rx_long_term(&pos);
        iterates.push(Iterate { tx: layout.tx(&pos), covs: covs.clone(), rx_fixed: rx.clone() });
        trace.push(IterationRecord {
            iteration: l,
            surrogate_sum,
            batch_rates,
            alpha,
            feasible,
            solver_status: report.status,
            solver_iterations: report.iterations,
            gamma,
            min_tx_distance: min_pairwise_distance(&layout.tx(&pos)),
            min_rx_distance: rx
                .as_ref()
                .map_or(f64::INFINITY, |r| r.iter().map(|a| min_pairwise_distance(a)).fold(f64::INFINITY, f64::min)),
            total_trace: covs.total_trace(),
            min_eigenvalue: covs.min_eigenvalue(),
        });
    }

    Ok(LongTermSolution {
        scheme,
        tx: layout.tx(&pos),
        rx_fixed: layout.rx_long_term(&pos),
        covs,
        rx_init: layout.rx_init,
        trace,
        iterates,
    })
}

fn slack(problem: &SurrogateProblem, report: &SolverReport) -> f64 {
    problem
        .surrogate_values(&report.pos, &report.q.mats)
        .into_iter()
        .fold(f64::INFINITY, |m, v| m.min(v - problem.rate_min))
}

/// Proposed scheme with a shared receive region.
pub fn cssca_gmm(stat: &StatisticalState, sys: &SystemParams, train_seed: u64) -> Result<LongTermSolution> {
    run_scheme(SchemeId::ProposedGmm, stat, sys, train_seed)
}

/// Proposed scheme with one receive square per antenna.
pub fn pdd_ssca_pmm(stat: &StatisticalState, sys: &SystemParams, train_seed: u64) -> Result<LongTermSolution> {
    run_scheme(SchemeId::ProposedPmm, stat, sys, train_seed)
}
