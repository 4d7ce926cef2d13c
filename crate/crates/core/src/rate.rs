//! Achievable rate, its rank-one reformulation, analytic gradients and the
//! two-column inverse update used by the per-antenna receive optimizer.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::channel::{field_matrix, wavenumber, Point, UserSample};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, c, CMat, CVec, J};

/// Transmit covariances Q_1..Q_K.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSet {
    pub mats: Vec<CMat>,
}

impl CovarianceSet {
    pub fn new(mats: Vec<CMat>) -> Self {
        CovarianceSet { mats }
    }

    /// Equal power on every diagonal entry: each Q_i = P / (K N) I.
    pub fn uniform(k: usize, n: usize, power: f64) -> Self {
        let v = power / (k * n) as f64;
        CovarianceSet { mats: vec![CMat::identity(n, n) * c(v); k] }
    }

    pub fn zeros(k: usize, n: usize) -> Self {
        CovarianceSet { mats: vec![CMat::zeros(n, n); k] }
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mats.first().map_or(0, |m| m.nrows())
    }

    pub fn total_trace(&self) -> f64 {
        self.mats.iter().map(linalg::trace_re).sum()
    }

    pub fn sum_all(&self) -> CMat {
        let n = self.dim();
        self.mats.iter().fold(CMat::zeros(n, n), |acc, q| acc + q)
    }

    pub fn sum_except(&self, k: usize) -> CMat {
        let n = self.dim();
        self.mats
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .fold(CMat::zeros(n, n), |acc, (_, q)| acc + q)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.mats.iter().map(linalg::min_eig).fold(f64::INFINITY, f64::min)
    }

    /// Hermitian, PSD within `1e-9` and total trace within `power + 1e-9`.
    pub fn validate(&self, power: f64) -> Result<()> {
        for (i, q) in self.mats.iter().enumerate() {
            let asym = (q - q.adjoint()).norm();
            if asym > 1e-9 * (1.0 + q.norm()) {
                return Err(Error::Contract(format!("Q_{i} is not Hermitian")));
            }
            if linalg::min_eig(q) < -1e-9 {
                return Err(Error::Contract(format!("Q_{i} is not PSD")));
            }
        }
        if self.total_trace() > power + 1e-9 {
            return Err(Error::Contract("covariance trace budget exceeded".into()));
        }
        Ok(())
    }
}

/// One user's channel together with the constants needed to evaluate rates.
#[derive(Clone, Copy, Debug)]
pub struct Link<'a> {
    pub user: &'a UserSample,
    pub wavelength: f64,
    pub noise: f64,
}

impl<'a> Link<'a> {
    pub fn new(user: &'a UserSample, wavelength: f64, noise: f64) -> Self {
        Link { user, wavelength, noise }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateGradients {
    pub rate: f64,
    /// Layout [(x_1, y_1), ..., (x_N, y_N)].
    pub grad_t: Vec<f64>,
    /// Same layout over receive antennas; empty when not requested.
    pub grad_r: Vec<f64>,
    /// One Hermitian matrix per covariance Q_i.
    pub grad_q: Vec<CMat>,
}

fn check_inputs(link: &Link, covs: &CovarianceSet, k: usize) -> Result<()> {
    if k >= covs.len() {
        return Err(Error::Contract(format!("user index {k} out of range for {} covariances", covs.len())));
    }
    if !(link.noise > 0.0) {
        return Err(Error::Contract("noise power must be positive".into()));
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("non-finite {what}")))
    }
}

/// Quantities shared by the rate and all of its gradients at one point.
struct Point0 {
    fh: CMat,
    sigma_g: CMat,
    h: CMat,
    s_plus: CMat,
    s_minus: CMat,
    c_plus_inv: CMat,
    c_minus_inv: CMat,
    rate: f64,
}

fn evaluate(link: &Link, tx: &[Point], rx: &[Point], covs: &CovarianceSet, k: usize) -> Result<Point0> {
    check_inputs(link, covs, k)?;
    let u = link.user;
    check_dim("path response rows", u.rx_paths.len(), u.path_response.nrows())?;
    check_dim("path response columns", u.tx_paths.len(), u.path_response.ncols())?;
    check_dim("covariance size", tx.len(), covs.dim())?;
    let g = field_matrix(tx, &u.tx_paths, link.wavelength);
    let fh = field_matrix(rx, &u.rx_paths, link.wavelength).adjoint();
    let sigma_g = &u.path_response * g;
    let h = &fh * &sigma_g;
    let s_plus = covs.sum_all();
    let s_minus = covs.sum_except(k);
    let m = rx.len();
    let noise = CMat::identity(m, m) * c(link.noise);
    let cp = &noise + &h * &s_plus * h.adjoint();
    let cm = &noise + &h * &s_minus * h.adjoint();
    let rate = (linalg::logdet_hpd(&cp)? - linalg::logdet_hpd(&cm)?) / LN_2;
    let rate = finite(rate, "achievable rate")?;
    Ok(Point0 {
        c_plus_inv: linalg::inv_hpd(&cp)?,
        c_minus_inv: linalg::inv_hpd(&cm)?,
        fh,
        sigma_g,
        h,
        s_plus,
        s_minus,
        rate,
    })
}

impl Point0 {
    /// D = A_1 - A_2 with A_1 = (2/ln2) S H^H C_+^{-1}, A_2 the interference analogue (N x M).
    fn d_matrix(&self) -> CMat {
        let hh = self.h.adjoint();
        (&self.s_plus * &hh * &self.c_plus_inv - &self.s_minus * &hh * &self.c_minus_inv) * c(2.0 / LN_2)
    }

    fn grad_q(&self, k: usize, i: usize) -> CMat {
        let hh = self.h.adjoint();
        let mut g = &hh * &self.c_plus_inv * &self.h;
        if i != k {
            g -= &hh * &self.c_minus_inv * &self.h;
        }
        linalg::hermitize(&(g * c(1.0 / LN_2)))
    }

    fn grad_t(&self, d: &CMat, link: &Link, tx: &[Point]) -> Vec<f64> {
        let kw = wavenumber(link.wavelength);
        let dirs = link.user.tx_paths.directions();
        let g = field_matrix(tx, &link.user.tx_paths, link.wavelength);
        let fs = &self.fh * &link.user.path_response;
        let mut out = vec![0.0; 2 * tx.len()];
        for (axis, slot) in [0usize, 1].into_iter().enumerate() {
            let delta_g = CMat::from_fn(g.nrows(), g.ncols(), |l, n| {
                let u = if axis == 0 { dirs[l].0 } else { dirs[l].1 };
                J * kw * u * g[(l, n)]
            });
            let b = &fs * delta_g;
            let db = d * b;
            for n in 0..tx.len() {
                out[2 * n + slot] = db[(n, n)].re;
            }
        }
        out
    }

    fn grad_r(&self, d: &CMat, link: &Link) -> Vec<f64> {
        let kw = wavenumber(link.wavelength);
        let dirs = link.user.rx_paths.directions();
        let m = self.fh.nrows();
        let mut out = vec![0.0; 2 * m];
        for (axis, slot) in [0usize, 1].into_iter().enumerate() {
            let delta_fh = CMat::from_fn(m, self.fh.ncols(), |mm, l| {
                let u = if axis == 0 { dirs[l].0 } else { dirs[l].1 };
                -J * kw * u * self.fh[(mm, l)]
            });
            let b = delta_fh * &self.sigma_g;
            let bd = b * d;
            for mm in 0..m {
                out[2 * mm + slot] = bd[(mm, mm)].re;
            }
        }
        out
    }
}

/// R_k = log2 det(I + H Q_k H^H (noise I + H sum_{i != k} Q_i H^H)^{-1}).
pub fn achievable_rate(link: &Link, tx: &[Point], rx: &[Point], covs: &CovarianceSet, k: usize) -> Result<f64> {
    Ok(evaluate(link, tx, rx, covs, k)?.rate.max(0.0))
}

/// Same rate through N x N determinants assembled from M rank-one terms.
pub fn rate_reformulated(link: &Link, tx: &[Point], rx: &[Point], covs: &CovarianceSet, k: usize) -> Result<f64> {
    let p = evaluate(link, tx, rx, covs, k)?;
    let n = tx.len();
    let assemble = |s: &CMat| -> Result<f64> {
        let root = linalg::sqrt_psd(s);
        let mut a = CMat::identity(n, n) * c(link.noise);
        for m in 0..rx.len() {
            let w: CVec = &root * p.h.row(m).adjoint();
            a += &w * w.adjoint();
        }
        linalg::logdet_hpd(&a)
    };
    let r = (assemble(&p.s_plus)? - assemble(&p.s_minus)?) / LN_2;
    Ok(finite(r, "reformulated rate")?.max(0.0))
}

pub fn grad_q(link: &Link, tx: &[Point], rx: &[Point], covs: &CovarianceSet, k: usize, i: usize) -> Result<CMat> {
    if i >= covs.len() {
        return Err(Error::Contract(format!("covariance index {i} out of range")));
    }
    Ok(evaluate(link, tx, rx, covs, k)?.grad_q(k, i))
}

pub fn grad_t(link: &Link, tx: &[Point], rx: &[Point], covs: &CovarianceSet, k: usize) -> Result<Vec<f64>> {
    let p = evaluate(link, tx, rx, covs, k)?;
    Ok(p.grad_t(&p.d_matrix(), link, tx))
}

pub fn grad_r_full(link: &Link, tx: &[Point], rx: &[Point], covs: &CovarianceSet, k: usize) -> Result<Vec<f64>> {
    let p = evaluate(link, tx, rx, covs, k)?;
    Ok(p.grad_r(&p.d_matrix(), link))
}

/// Rate plus gradients in t and every Q_i, and in r when `with_receive` is set.
pub fn rate_gradients(
    link: &Link,
    tx: &[Point],
    rx: &[Point],
    covs: &CovarianceSet,
    k: usize,
    with_receive: bool,
) -> Result<RateGradients> {
    let p = evaluate(link, tx, rx, covs, k)?;
    let d = p.d_matrix();
    Ok(RateGradients {
        rate: p.rate.max(0.0),
        grad_t: p.grad_t(&d, link, tx),
        grad_r: if with_receive { p.grad_r(&d, link) } else { Vec::new() },
        grad_q: (0..covs.len()).map(|i| p.grad_q(k, i)).collect(),
    })
}

/// Rate as a function of the receive APV only, with everything else precomputed.
#[derive(Clone, Debug)]
pub struct ReceiveObjective {
    sigma_g: CMat,
    s_plus: CMat,
    s_minus: CMat,
    dirs: Vec<(f64, f64)>,
    kw: f64,
    noise: f64,
    zero: bool,
}

impl ReceiveObjective {
    pub fn new(link: &Link, tx: &[Point], covs: &CovarianceSet, k: usize) -> Result<Self> {
        check_inputs(link, covs, k)?;
        check_dim("covariance size", tx.len(), covs.dim())?;
        let u = link.user;
        let g = field_matrix(tx, &u.tx_paths, link.wavelength);
        let sigma_g = &u.path_response * g;
        Ok(ReceiveObjective {
            zero: sigma_g.iter().all(|z| *z == Complex64::new(0.0, 0.0)),
            sigma_g,
            s_plus: covs.sum_all(),
            s_minus: covs.sum_except(k),
            dirs: u.rx_paths.directions(),
            kw: wavenumber(link.wavelength),
            noise: link.noise,
        })
    }

    /// True when the channel vanishes identically, so the rate is flat in r.
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    fn fh(&self, rx: &[Point]) -> CMat {
        CMat::from_fn(rx.len(), self.dirs.len(), |m, l| {
            let (ux, uy) = self.dirs[l];
            Complex64::from_polar(1.0, -self.kw * (rx[m].x * ux + rx[m].y * uy))
        })
    }

    fn covariances(&self, h: &CMat) -> (CMat, CMat) {
        let m = h.nrows();
        let noise = CMat::identity(m, m) * c(self.noise);
        let hh = h.adjoint();
        (&noise + h * &self.s_plus * &hh, &noise + h * &self.s_minus * &hh)
    }

    pub fn rate(&self, rx: &[Point]) -> Result<f64> {
        let h = self.fh(rx) * &self.sigma_g;
        let (cp, cm) = self.covariances(&h);
        let r = (linalg::logdet_hpd(&cp)? - linalg::logdet_hpd(&cm)?) / LN_2;
        Ok(finite(r, "achievable rate")?.max(0.0))
    }

    /// Rate and the full receive gradient.
    pub fn rate_and_grad(&self, rx: &[Point]) -> Result<(f64, Vec<f64>)> {
        let fh = self.fh(rx);
        let h = &fh * &self.sigma_g;
        let (cp, cm) = self.covariances(&h);
        let r = (linalg::logdet_hpd(&cp)? - linalg::logdet_hpd(&cm)?) / LN_2;
        let r = finite(r, "achievable rate")?.max(0.0);
        let hh = h.adjoint();
        let d = (&self.s_plus * &hh * linalg::inv_hpd(&cp)? - &self.s_minus * &hh * linalg::inv_hpd(&cm)?)
            * c(2.0 / LN_2);
        let mut out = vec![0.0; 2 * rx.len()];
        for (axis, slot) in [0usize, 1].into_iter().enumerate() {
            let delta_fh = CMat::from_fn(fh.nrows(), fh.ncols(), |m, l| {
                let u = if axis == 0 { self.dirs[l].0 } else { self.dirs[l].1 };
                -J * self.kw * u * fh[(m, l)]
            });
            let bd = delta_fh * &self.sigma_g * &d;
            for m in 0..rx.len() {
                out[2 * m + slot] = bd[(m, m)].re;
            }
        }
        Ok((r, out))
    }
}

/// Cached inverses of the N x N rank-one sums for one user, valid for one receive APV.
#[derive(Clone, Debug)]
pub struct InverseCache {
    positions: Vec<Point>,
    proj_plus: CMat,
    proj_minus: CMat,
    w_plus: Vec<CVec>,
    w_minus: Vec<CVec>,
    inv_plus: CMat,
    inv_minus: CMat,
    dirs: Vec<(f64, f64)>,
    kw: f64,
    noise: f64,
    updates: usize,
    fallbacks: usize,
}

impl InverseCache {
    pub fn new(link: &Link, tx: &[Point], rx: &[Point], covs: &CovarianceSet, k: usize) -> Result<Self> {
        check_inputs(link, covs, k)?;
        check_dim("covariance size", tx.len(), covs.dim())?;
        let u = link.user;
        let g = field_matrix(tx, &u.tx_paths, link.wavelength);
        let sigma_g_h = (&u.path_response * g).adjoint();
        let proj_plus = linalg::sqrt_psd(&covs.sum_all()) * &sigma_g_h;
        let proj_minus = linalg::sqrt_psd(&covs.sum_except(k)) * &sigma_g_h;
        let f = field_matrix(rx, &u.rx_paths, link.wavelength);
        let w_plus: Vec<CVec> = (0..rx.len()).map(|m| &proj_plus * f.column(m)).collect();
        let w_minus: Vec<CVec> = (0..rx.len()).map(|m| &proj_minus * f.column(m)).collect();
        let mut cache = InverseCache {
            positions: rx.to_vec(),
            inv_plus: CMat::zeros(0, 0),
            inv_minus: CMat::zeros(0, 0),
            proj_plus,
            proj_minus,
            w_plus,
            w_minus,
            dirs: u.rx_paths.directions(),
            kw: wavenumber(link.wavelength),
            noise: link.noise,
            updates: 0,
            fallbacks: 0,
        };
        cache.refresh_direct()?;
        Ok(cache)
    }

    fn response(&self, p: Point) -> CVec {
        CVec::from_iterator(
            self.dirs.len(),
            self.dirs.iter().map(|(ux, uy)| Complex64::from_polar(1.0, self.kw * (p.x * ux + p.y * uy))),
        )
    }

    fn assemble(&self, ws: &[CVec]) -> CMat {
        let n = self.proj_plus.nrows();
        ws.iter().fold(CMat::identity(n, n) * c(self.noise), |acc, w| acc + w * w.adjoint())
    }

    /// The matrices noise I + sum_m w_m w_m^H assembled from scratch (with and without user k).
    pub fn assembled(&self) -> (CMat, CMat) {
        (self.assemble(&self.w_plus), self.assemble(&self.w_minus))
    }

    pub fn inverses(&self) -> (&CMat, &CMat) {
        (&self.inv_plus, &self.inv_minus)
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Number of updates that fell back to direct inversion.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Rate from the cached factors (log-determinants recomputed directly).
    pub fn rate(&self) -> Result<f64> {
        let (ap, am) = self.assembled();
        let r = (linalg::logdet_hpd(&ap)? - linalg::logdet_hpd(&am)?) / LN_2;
        Ok(finite(r, "achievable rate")?.max(0.0))
    }

    pub fn refresh_direct(&mut self) -> Result<()> {
        let (ap, am) = self.assembled();
        self.inv_plus = linalg::inv_hpd(&ap)?;
        self.inv_minus = linalg::inv_hpd(&am)?;
        Ok(())
    }
}

/// Receive gradient of antenna `m` from cached inverses; `rx` must be the APV the cache tracks.
pub fn grad_r_single(cache: &InverseCache, rx: &[Point], m: usize) -> Result<[f64; 2]> {
    if rx != cache.positions.as_slice() {
        return Err(Error::Contract("inverse cache is stale for the given receive APV".into()));
    }
    if m >= rx.len() {
        return Err(Error::Contract(format!("antenna index {m} out of range")));
    }
    let f = cache.response(rx[m]);
    let b_plus = (cache.w_plus[m].adjoint() * &cache.inv_plus * &cache.proj_plus) * c(2.0 / LN_2);
    let b_minus = (cache.w_minus[m].adjoint() * &cache.inv_minus * &cache.proj_minus) * c(2.0 / LN_2);
    let b = b_plus - b_minus;
    let mut out = [0.0; 2];
    for (slot, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (l, (ux, uy)) in cache.dirs.iter().enumerate() {
            let u = if slot == 0 { *ux } else { *uy };
            acc += b[(0, l)] * J * cache.kw * u * f[l];
        }
        *o = acc.re;
    }
    Ok(out)
}

fn woodbury(inv: &CMat, w_new: &CVec, w_old: &CVec) -> Option<CMat> {
    let n = inv.nrows();
    let mut z1 = CMat::zeros(n, 2);
    let mut z2 = CMat::zeros(n, 2);
    z1.set_column(0, w_new);
    z1.set_column(1, w_old);
    z2.set_column(0, w_new);
    z2.set_column(1, &(-w_old));
    let inv_z1 = inv * &z1;
    let core = CMat::identity(2, 2) + z2.adjoint() * &inv_z1;
    let core_inv = linalg::inv2(&core)?;
    Some(inv - inv_z1 * core_inv * z2.adjoint() * inv)
}

/// Moves antenna `m` from `old_pos` to `new_pos` and updates both cached inverses with a
/// two-column inversion-lemma step. Returns true if direct inversion had to be used.
pub fn inv_update(cache: &mut InverseCache, m: usize, old_pos: Point, new_pos: Point) -> Result<bool> {
    if m >= cache.positions.len() || cache.positions[m] != old_pos {
        return Err(Error::Contract("inverse cache does not hold the stated old position".into()));
    }
    let f = cache.response(new_pos);
    let wp = &cache.proj_plus * &f;
    let wm = &cache.proj_minus * &f;
    let up = woodbury(&cache.inv_plus, &wp, &cache.w_plus[m]);
    let um = woodbury(&cache.inv_minus, &wm, &cache.w_minus[m]);
    cache.positions[m] = new_pos;
    cache.w_plus[m] = wp;
    cache.w_minus[m] = wm;
    cache.updates += 1;
    match (up, um) {
        (Some(p), Some(q)) => {
            cache.inv_plus = linalg::hermitize(&p);
            cache.inv_minus = linalg::hermitize(&q);
            Ok(false)
        }
        _ => {
            log::debug!("singular 2x2 core in inverse update; using direct inversion");
            cache.fallbacks += 1;
            cache.refresh_direct()?;
            Ok(true)
        }
    }
}
