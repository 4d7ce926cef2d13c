//! Quick self-checks behind the `check` CLI verb: gradient and identity oracles on
//! random instances plus long-term invariants on one small realization.

use rand::Rng;

use crate::channel::{draw_channel_sample, stream_rng, Point};
use crate::config::{ExperimentConfig, Preset, SchemeId};
use crate::convex_solver::DISTANCE_MARGIN;
use crate::error::Result;
use crate::linalg::{self, c, CMat};
use crate::rate::{
    achievable_rate, grad_q, grad_r_full, grad_r_single, grad_t, inv_update, rate_reformulated, CovarianceSet,
    InverseCache, Link,
};
use crate::short_term::ga_optimize;
use crate::sim::realization_statistics;
use crate::two_timescale::{initial_rx, initial_tx, run_scheme};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, worst: f64, limit: f64) -> CheckResult {
    CheckResult { name, passed: worst <= limit, detail: format!("worst {worst:.3e} (limit {limit:.0e})") }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
    num / den
}

fn random_covs(rng: &mut impl Rng, k: usize, n: usize, power: f64) -> CovarianceSet {
    let mats: Vec<CMat> = (0..k)
        .map(|_| {
            let a = CMat::from_fn(n, n, |_, _| num_complex::Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            &a * a.adjoint()
        })
        .collect();
    let total: f64 = mats.iter().map(|m| m.trace().re).sum();
    CovarianceSet::new(mats.into_iter().map(|m| m * c(power / total)).collect())
}

struct Instance {
    cfg: ExperimentConfig,
    tx: Vec<Point>,
    rx: Vec<Point>,
    covs: CovarianceSet,
    sample: crate::channel::ChannelSample,
}

fn instances(seed: u64, count: usize) -> Vec<Instance> {
    let cfg = ExperimentConfig::preset(Preset::Desk);
    let sys = cfg.system();
    (0..count)
        .map(|i| {
            let mut rng = stream_rng(seed, &[i as u64, 99]);
            let stat = realization_statistics(&sys, seed, i);
            let jitter = |p: &Point, rng: &mut rand_chacha::ChaCha8Rng| {
                Point::new(p.x + 1e-3 * (rng.random::<f64>() - 0.5), p.y + 1e-3 * (rng.random::<f64>() - 0.5))
            };
            let tx: Vec<Point> =
                initial_tx(SchemeId::ProposedGmm, &sys).unwrap_or_default().iter().map(|p| jitter(p, &mut rng)).collect();
            let rx: Vec<Point> =
                initial_rx(SchemeId::ProposedGmm, &sys).unwrap_or_default().iter().map(|p| jitter(p, &mut rng)).collect();
            let covs = random_covs(&mut rng, sys.n_users(), sys.n_tx, sys.power);
            let sample = draw_channel_sample(&stat, false, &mut rng);
            Instance { cfg: cfg.clone(), tx, rx, covs, sample }
        })
        .collect()
}

fn fd_positions(pts: &[Point], h: f64, f: impl Fn(&[Point]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * pts.len());
    for i in 0..2 * pts.len() {
        let shifted = |s: f64| {
            let mut p = pts.to_vec();
            if i % 2 == 0 {
                p[i / 2].x += s;
            } else {
                p[i / 2].y += s;
            }
            p
        };
        out.push((f(&shifted(h))? - f(&shifted(-h))?) / (2.0 * h));
    }
    Ok(out)
}

fn gradients(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for inst in instances(seed, 10) {
        let sys = inst.cfg.system();
        for k in 0..inst.covs.len() {
            let link = Link::new(&inst.sample.users[k], sys.wavelength, sys.noise);
            let rate = |t: &[Point], r: &[Point]| achievable_rate(&link, t, r, &inst.covs, k);
            let h = 1e-7;
            let ft = fd_positions(&inst.tx, h, |t| rate(t, &inst.rx))?;
            worst = worst.max(rel(&grad_t(&link, &inst.tx, &inst.rx, &inst.covs, k)?, &ft));
            let fr = fd_positions(&inst.rx, h, |r| rate(&inst.tx, r))?;
            worst = worst.max(rel(&grad_r_full(&link, &inst.tx, &inst.rx, &inst.covs, k)?, &fr));
            let cache = InverseCache::new(&link, &inst.tx, &inst.rx, &inst.covs, k)?;
            let single: Vec<f64> =
                (0..inst.rx.len()).map(|m| grad_r_single(&cache, &inst.rx, m)).collect::<Result<Vec<_>>>()?.concat();
            worst = worst.max(rel(&single, &fr));
            for i in 0..inst.covs.len() {
                let g = grad_q(&link, &inst.tx, &inst.rx, &inst.covs, k, i)?;
                let mut rng = stream_rng(seed, &[k as u64, i as u64, 7]);
                let n = inst.covs.dim();
                let e = CMat::from_fn(n, n, |_, _| num_complex::Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
                let e = linalg::hermitize(&e) * c(sys.power / n as f64);
                let hq = 1e-6;
                let shifted = |s: f64| {
                    let mut q = inst.covs.clone();
                    q.mats[i] += &e * c(s);
                    achievable_rate(&link, &inst.tx, &inst.rx, &q, k)
                };
                let fd = (shifted(hq)? - shifted(-hq)?) / (2.0 * hq);
                let an = linalg::inner(&g, &e);
                worst = worst.max((fd - an).abs() / an.abs().max(1e-9));
            }
        }
    }
    Ok(result("gradients match finite differences", worst, 1e-4))
}

fn rate_identity(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for inst in instances(seed, 20) {
        let sys = inst.cfg.system();
        for k in 0..inst.covs.len() {
            let link = Link::new(&inst.sample.users[k], sys.wavelength, sys.noise);
            let a = achievable_rate(&link, &inst.tx, &inst.rx, &inst.covs, k)?;
            let b = rate_reformulated(&link, &inst.tx, &inst.rx, &inst.covs, k)?;
            worst = worst.max((a - b).abs());
        }
    }
    Ok(result("rate forms agree", worst, 1e-9))
}

fn inverse_updates(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for inst in instances(seed, 5) {
        let sys = inst.cfg.system();
        let link = Link::new(&inst.sample.users[0], sys.wavelength, sys.noise);
        let mut cache = InverseCache::new(&link, &inst.tx, &inst.rx, &inst.covs, 0)?;
        let mut rx = inst.rx.clone();
        let mut rng = stream_rng(seed, &[11]);
        for step in 0..30 {
            let m = step % rx.len();
            let new = Point::new(rx[m].x + 2e-3 * (rng.random::<f64>() - 0.5), rx[m].y + 2e-3 * (rng.random::<f64>() - 0.5));
            inv_update(&mut cache, m, rx[m], new)?;
            rx[m] = new;
        }
        let (ap, am) = cache.assembled();
        let (ip, im) = cache.inverses();
        for (a, inv) in [(ap, ip), (am, im)] {
            let direct = linalg::inv_hpd(&a)?;
            worst = worst.max((inv - &direct).norm() / direct.norm());
        }
    }
    Ok(result("chained inverse updates match direct inversion", worst, 1e-6))
}

fn ga_monotone(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for inst in instances(seed, 10) {
        let sys = inst.cfg.system();
        for k in 0..inst.covs.len() {
            let link = Link::new(&inst.sample.users[k], sys.wavelength, sys.noise);
            let rx = initial_rx(SchemeId::ProposedGmm, &sys)?;
            let out = ga_optimize(&link, &inst.tx, &inst.covs, k, &rx, &sys.rx_region_gmm, &sys.short_term)?;
            for w in out.rate_trace.windows(2) {
                worst = worst.max(w[0] - w[1]);
            }
        }
    }
    Ok(result("short-term rate trace never decreases", worst, 0.0))
}

fn long_term_invariants(seed: u64) -> Result<CheckResult> {
    let mut cfg = ExperimentConfig::preset(Preset::Desk);
    cfg.iterations = 10;
    let sys = cfg.system();
    let stat = realization_statistics(&sys, seed, 0);
    let mut worst: f64 = 0.0;
    for scheme in SchemeId::ALL {
        let sol = run_scheme(scheme, &stat, &sys, seed)?;
        for it in &sol.trace {
            let d = sys.min_distance;
            worst = worst
                .max((d - it.min_tx_distance) / d)
                .max((d - it.min_rx_distance) / d)
                .max(it.total_trace - sys.power)
                .max(-it.min_eigenvalue);
        }
    }
    Ok(CheckResult {
        name: "long-term iterates keep spacing, power budget and PSD",
        passed: worst <= 1e-9 + DISTANCE_MARGIN,
        detail: format!("worst violation {worst:.3e}"),
    })
}

/// Runs every self-check with the given seed.
pub fn run_checks(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![gradients(seed)?, rate_identity(seed)?, inverse_updates(seed)?, ga_monotone(seed)?, long_term_invariants(seed)?])
}
