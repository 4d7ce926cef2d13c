//! Per-sample receive APV optimizers: sequential per-antenna gradient ascent for a
//! shared region and whole-vector gradient projection for per-antenna regions.

use serde::{Deserialize, Serialize};

use crate::channel::{Point, RegionSpec};
use crate::error::{check_dim, Error, Result};
use crate::rate::{grad_r_single, inv_update, CovarianceSet, InverseCache, Link, ReceiveObjective};

/// Sufficient-increase test used by the backtracking line search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmijoRule {
    /// `R(new) >= R(old) + xi * grad . (new - old)`; identical to `Literal` when no
    /// coordinate is clamped.
    Projected,
    /// `R(new) >= R(old) + xi * step * |grad|^2` regardless of projection.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktrackParams {
    pub initial_step: f64,
    pub shrink: f64,
    pub xi: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub max_backtracks: usize,
    pub rule: ArmijoRule,
    /// Lets gradient projection stop early once the per-iteration gain drops below epsilon.
    pub early_exit: bool,
}

impl Default for BacktrackParams {
    fn default() -> Self {
        BacktrackParams {
            initial_step: 10.0,
            shrink: 0.5,
            xi: 0.6,
            epsilon: 1e-6,
            max_iterations: 30,
            max_backtracks: 60,
            rule: ArmijoRule::Projected,
            early_exit: false,
        }
    }
}

impl BacktrackParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_step > 0.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.xi > 0.0
            && self.xi < 1.0
            && self.epsilon > 0.0
            && self.max_backtracks > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("invalid backtracking parameters {self:?}")))
        }
    }

    fn accepts(&self, old: f64, new: f64, step: f64, grad_sq: f64, grad_dot_move: f64) -> bool {
        let gain = match self.rule {
            ArmijoRule::Projected => grad_dot_move,
            ArmijoRule::Literal => step * grad_sq,
        };
        new >= old + self.xi * gain
    }
}

/// Coordinates (layout [(x_1, y_1), ...]) whose last pre-projection update stayed inside the region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveMask {
    pub entries: Vec<u8>,
}

impl ActiveMask {
    pub fn ones(m: usize) -> Self {
        ActiveMask { entries: vec![1; 2 * m] }
    }
}

/// One accepted line-search step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Moved antenna for per-antenna sweeps; `None` for whole-vector steps.
    pub antenna: Option<usize>,
    pub step: f64,
    pub rate_before: f64,
    pub rate_after: f64,
    pub grad_norm_sq: f64,
    pub grad_dot_move: f64,
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShortTermOutcome {
    pub apv: Vec<Point>,
    /// Rate at the initial point followed by the rate after every sweep/iteration.
    pub rate_trace: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// Line searches that hit the backtracking cap.
    pub exhausted: usize,
    pub mask: ActiveMask,
    pub iterations: usize,
}

impl ShortTermOutcome {
    pub fn initial_rate(&self) -> f64 {
        self.rate_trace[0]
    }

    pub fn final_rate(&self) -> f64 {
        *self.rate_trace.last().expect("trace holds the initial rate")
    }
}

pub fn project_region(apv: &[Point], region: &RegionSpec) -> Vec<Point> {
    region.project(apv)
}

pub fn active_mask(pre_projection: &[Point], region: &RegionSpec) -> ActiveMask {
    let mut entries = Vec::with_capacity(2 * pre_projection.len());
    for (m, p) in pre_projection.iter().enumerate() {
        let r = region.rect(m);
        entries.push(u8::from(p.x >= r.x_min && p.x <= r.x_max));
        entries.push(u8::from(p.y >= r.y_min && p.y <= r.y_max));
    }
    ActiveMask { entries }
}

fn dot2(g: [f64; 2], a: Point, b: Point) -> f64 {
    g[0] * (b.x - a.x) + g[1] * (b.y - a.y)
}

fn spaced(apv: &[Point], m: usize, cand: Point, d_sq: f64) -> bool {
    apv.iter().enumerate().all(|(i, p)| i == m || p.dist_sq(cand) >= d_sq)
}

/// Sequential per-antenna gradient ascent with backtracking; steps must keep every
/// pairwise distance at least the region's minimum distance.
pub fn ga_optimize(
    link: &Link,
    tx: &[Point],
    covs: &CovarianceSet,
    k: usize,
    init: &[Point],
    region: &RegionSpec,
    params: &BacktrackParams,
) -> Result<ShortTermOutcome> {
    params.validate()?;
    region.check_apv(init)?;
    let m_count = init.len();
    let obj = ReceiveObjective::new(link, tx, covs, k)?;
    let mut r = init.to_vec();
    let mut rate = obj.rate(&r)?;
    let mut out = ShortTermOutcome {
        apv: Vec::new(),
        rate_trace: vec![rate],
        steps: Vec::new(),
        exhausted: 0,
        mask: ActiveMask::ones(m_count),
        iterations: 0,
    };
    if obj.is_zero() {
        out.apv = r;
        return Ok(out);
    }
    let mut cache = if m_count > 2 { Some(InverseCache::new(link, tx, &r, covs, k)?) } else { None };
    let d_sq = region.min_distance * region.min_distance;
    for _ in 0..params.max_iterations {
        let sweep_start = rate;
        for m in 0..m_count {
            let g = match cache.as_ref() {
                Some(c) => grad_r_single(c, &r, m)?,
                None => {
                    let (_, full) = obj.rate_and_grad(&r)?;
                    [full[2 * m], full[2 * m + 1]]
                }
            };
            let grad_sq = g[0] * g[0] + g[1] * g[1];
            if grad_sq == 0.0 {
                continue;
            }
            let old = r[m];
            let mut step = params.initial_step;
            let mut accepted = None;
            let mut exhausted = true;
            for _ in 0..params.max_backtracks {
                let pre = Point::new(old.x + step * g[0], old.y + step * g[1]);
                let cand = region.rect(m).clamp(pre);
                let gd = dot2(g, old, cand);
                if !(gd > 0.0) {
                    exhausted = false;
                    break;
                }
                if spaced(&r, m, cand, d_sq) {
                    r[m] = cand;
                    let new_rate = obj.rate(&r)?;
                    r[m] = old;
                    if params.accepts(rate, new_rate, step, grad_sq, gd) {
                        accepted = Some((cand, new_rate, gd, pre != cand));
                        break;
                    }
                }
                step *= params.shrink;
            }
            match accepted {
                Some((cand, new_rate, gd, clamped)) => {
                    out.steps.push(StepRecord {
                        antenna: Some(m),
                        step,
                        rate_before: rate,
                        rate_after: new_rate,
                        grad_norm_sq: grad_sq,
                        grad_dot_move: gd,
                        clamped,
                    });
                    r[m] = cand;
                    rate = new_rate;
                    if let Some(c) = cache.as_mut() {
                        inv_update(c, m, old, cand)?;
                    }
                }
                None if exhausted => {
                    out.exhausted += 1;
                    log::debug!("backtracking cap reached for antenna {m}; position kept");
                }
                None => {}
            }
        }
        out.iterations += 1;
        out.rate_trace.push(rate);
        if rate - sweep_start < params.epsilon {
            break;
        }
    }
    out.apv = r;
    Ok(out)
}

/// Whole-vector gradient projection with backtracking over per-antenna rectangles.
/// Runs exactly `max_iterations` iterations unless `early_exit` is set.
pub fn gp_optimize(
    link: &Link,
    tx: &[Point],
    covs: &CovarianceSet,
    k: usize,
    init: &[Point],
    region: &RegionSpec,
    params: &BacktrackParams,
) -> Result<ShortTermOutcome> {
    params.validate()?;
    if !region.per_antenna() && init.len() > 1 {
        return Err(Error::Contract(
            "gradient projection needs per-antenna regions when there are several antennas".into(),
        ));
    }
    region.check_apv(init)?;
    let m_count = init.len();
    let obj = ReceiveObjective::new(link, tx, covs, k)?;
    let mut r = init.to_vec();
    let mut rate = obj.rate(&r)?;
    let mut out = ShortTermOutcome {
        apv: Vec::new(),
        rate_trace: vec![rate],
        steps: Vec::new(),
        exhausted: 0,
        mask: ActiveMask::ones(m_count),
        iterations: 0,
    };
    for _ in 0..params.max_iterations {
        let before = rate;
        let (_, g) = obj.rate_and_grad(&r)?;
        let grad_sq: f64 = g.iter().map(|v| v * v).sum();
        let mut mask = ActiveMask::ones(m_count);
        if grad_sq > 0.0 {
            let mut step = params.initial_step;
            let mut done = false;
            for _ in 0..params.max_backtracks {
                let pre: Vec<Point> =
                    r.iter().enumerate().map(|(m, p)| Point::new(p.x + step * g[2 * m], p.y + step * g[2 * m + 1])).collect();
                let cand = region.project(&pre);
                mask = active_mask(&pre, region);
                let gd: f64 = (0..m_count).map(|m| dot2([g[2 * m], g[2 * m + 1]], r[m], cand[m])).sum();
                if !(gd > 0.0) {
                    done = true;
                    break;
                }
                let new_rate = obj.rate(&cand)?;
                if params.accepts(rate, new_rate, step, grad_sq, gd) {
                    out.steps.push(StepRecord {
                        antenna: None,
                        step,
                        rate_before: rate,
                        rate_after: new_rate,
                        grad_norm_sq: grad_sq,
                        grad_dot_move: gd,
                        clamped: pre != cand,
                    });
                    r = cand;
                    rate = new_rate;
                    done = true;
                    break;
                }
                step *= params.shrink;
            }
            if !done {
                out.exhausted += 1;
                log::debug!("backtracking cap reached in gradient projection; zero step");
            }
        }
        out.mask = mask;
        out.iterations += 1;
        out.rate_trace.push(rate);
        if params.early_exit && rate - before < params.epsilon {
            break;
        }
    }
    out.apv = r;
    Ok(out)
}

/// Norm of the masked receive gradient at the final APV.
pub fn kkt_residual_short(
    link: &Link,
    tx: &[Point],
    covs: &CovarianceSet,
    k: usize,
    r_final: &[Point],
    mask: &ActiveMask,
) -> Result<f64> {
    check_dim("active mask", 2 * r_final.len(), mask.entries.len())?;
    let obj = ReceiveObjective::new(link, tx, covs, k)?;
    let (_, g) = obj.rate_and_grad(r_final)?;
    Ok(g.iter().zip(&mask.entries).map(|(v, b)| if *b == 1 { v * v } else { 0.0 }).sum::<f64>().sqrt())
}
