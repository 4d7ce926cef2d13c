//! Field-response channel model: geometry, random channel statistics and channel matrices.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{CMat, CVec, J};
use num_complex::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist_sq(self, o: Point) -> f64 {
        (self.x - o.x).powi(2) + (self.y - o.y).powi(2)
    }

    pub fn dist(self, o: Point) -> f64 {
        self.dist_sq(o).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Rect { x_min, x_max, y_min, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.x_min, self.x_max), p.y.clamp(self.y_min, self.y_max))
    }

    /// Euclidean distance between two rectangles (0 when they overlap).
    pub fn gap(&self, o: &Rect) -> f64 {
        let dx = (o.x_min - self.x_max).max(self.x_min - o.x_max).max(0.0);
        let dy = (o.y_min - self.y_max).max(self.y_min - o.y_max).max(0.0);
        dx.hypot(dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    TransmitGmm,
    ReceiveGmm,
    ReceivePmm,
}

/// Movement region: one shared rectangle (GMM) or one rectangle per antenna (PMM).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub rects: Vec<Rect>,
    pub min_distance: f64,
}

impl RegionSpec {
    pub fn transmit_gmm(x_t: f64, d: f64) -> Self {
        RegionSpec {
            kind: RegionKind::TransmitGmm,
            rects: vec![Rect::new(0.0, 4.0 * x_t + 3.0 * d, 0.0, 2.0 * x_t + d)],
            min_distance: d,
        }
    }

    pub fn receive_gmm(x_r: f64, d: f64) -> Self {
        RegionSpec {
            kind: RegionKind::ReceiveGmm,
            rects: vec![Rect::new(0.0, 2.0 * x_r + d, 0.0, x_r)],
            min_distance: d,
        }
    }

    /// `m` squares of side `x_r` in a row, separated by `d`, sharing one origin.
    pub fn receive_pmm(x_r: f64, d: f64, m: usize) -> Self {
        let rects = (0..m)
            .map(|i| {
                let x0 = i as f64 * (x_r + d);
                Rect::new(x0, x0 + x_r, 0.0, x_r)
            })
            .collect();
        RegionSpec { kind: RegionKind::ReceivePmm, rects, min_distance: d }
    }

    /// A single shared rectangle with an explicit kind.
    pub fn shared(kind: RegionKind, rect: Rect, d: f64) -> Self {
        RegionSpec { kind, rects: vec![rect], min_distance: d }
    }

    pub fn per_antenna(&self) -> bool {
        self.kind == RegionKind::ReceivePmm
    }

    /// Rectangle assigned to antenna `m`.
    pub fn rect(&self, m: usize) -> &Rect {
        if self.per_antenna() {
            &self.rects[m]
        } else {
            &self.rects[0]
        }
    }

    /// The smallest rectangle covering every assigned rectangle.
    pub fn bounding_rect(&self) -> Rect {
        self.rects.iter().skip(1).fold(self.rects[0], |acc, r| {
            Rect::new(
                acc.x_min.min(r.x_min),
                acc.x_max.max(r.x_max),
                acc.y_min.min(r.y_min),
                acc.y_max.max(r.y_max),
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rects.is_empty() {
            return Err(Error::Contract("region has no rectangles".into()));
        }
        for r in &self.rects {
            if !(r.x_max > r.x_min && r.y_max > r.y_min) {
                return Err(Error::Contract(format!("degenerate rectangle {r:?}")));
            }
        }
        if self.per_antenna() {
            for i in 0..self.rects.len() {
                for j in i + 1..self.rects.len() {
                    if self.rects[i].gap(&self.rects[j]) < self.min_distance * (1.0 - 1e-12) {
                        return Err(Error::Contract(format!(
                            "rectangles {i} and {j} closer than the minimum distance"
                        )));
                    }
                }
            }
        } else if self.rects.len() != 1 {
            return Err(Error::Contract("shared region must have exactly one rectangle".into()));
        }
        Ok(())
    }

    /// Checks region membership for every antenna and, for shared regions, pairwise spacing.
    pub fn check_apv(&self, apv: &[Point]) -> Result<()> {
        if self.per_antenna() {
            check_dim("per-antenna region", self.rects.len(), apv.len())?;
        }
        for (m, p) in apv.iter().enumerate() {
            if !self.rect(m).contains(*p) {
                return Err(Error::Contract(format!("antenna {m} at {p:?} lies outside its region")));
            }
        }
        if let Some((i, j, d)) = closest_pair(apv) {
            if d < self.min_distance * (1.0 - 1e-12) {
                return Err(Error::Contract(format!(
                    "antennas {i} and {j} are {d:.3e} m apart, below the minimum {:.3e} m",
                    self.min_distance
                )));
            }
        }
        Ok(())
    }

    pub fn project(&self, apv: &[Point]) -> Vec<Point> {
        apv.iter().enumerate().map(|(m, p)| self.rect(m).clamp(*p)).collect()
    }
}

/// Closest pair of points as (i, j, distance).
pub fn closest_pair(apv: &[Point]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..apv.len() {
        for j in i + 1..apv.len() {
            let d = apv[i].dist(apv[j]);
            if best.is_none_or(|b| d < b.2) {
                best = Some((i, j, d));
            }
        }
    }
    best
}

pub fn min_pairwise_distance(apv: &[Point]) -> f64 {
    closest_pair(apv).map_or(f64::INFINITY, |b| b.2)
}

/// Rows x columns of the uniform planar array used for `n` antennas.
pub fn upa_shape(n: usize) -> (usize, usize) {
    if n >= 4 && n.is_multiple_of(2) {
        (n / 2, 2)
    } else {
        (n, 1)
    }
}

/// Uniform planar array with the given spacing centered on `center`; x varies fastest.
pub fn upa(n: usize, spacing: f64, center: Point) -> Vec<Point> {
    let (cols, rows) = upa_shape(n);
    let x0 = center.x - 0.5 * spacing * (cols as f64 - 1.0);
    let y0 = center.y - 0.5 * spacing * (rows as f64 - 1.0);
    (0..n)
        .map(|i| Point::new(x0 + spacing * (i % cols) as f64, y0 + spacing * (i / cols) as f64))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathAngle {
    pub elevation: f64,
    pub azimuth: f64,
}

impl PathAngle {
    pub fn new(elevation: f64, azimuth: f64) -> Self {
        PathAngle { elevation, azimuth }
    }

    /// Coefficients of x and y in the propagation difference.
    pub fn direction(&self) -> (f64, f64) {
        (self.elevation.sin() * self.azimuth.cos(), self.elevation.cos())
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PathAngles {
    pub paths: Vec<PathAngle>,
}

impl PathAngles {
    pub fn new(paths: Vec<PathAngle>) -> Self {
        PathAngles { paths }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn directions(&self) -> Vec<(f64, f64)> {
        self.paths.iter().map(PathAngle::direction).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| (0.0..=PI).contains(&a);
        if self.paths.iter().all(|p| ok(p.elevation) && ok(p.azimuth)) {
            Ok(())
        } else {
            Err(Error::Contract("path angle outside [0, pi]".into()))
        }
    }
}

/// Long-term channel law parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelLaw {
    pub n_users: usize,
    pub n_paths: usize,
    /// Path loss at the reference distance, linear.
    pub c0: f64,
    pub alpha0: f64,
    pub distance_min_m: f64,
    pub distance_max_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserStatistics {
    pub distance: f64,
    pub gain: f64,
    pub tx_paths: PathAngles,
    pub rx_paths: PathAngles,
}

impl UserStatistics {
    pub fn path_variance(&self) -> f64 {
        self.gain / self.rx_paths.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticalState {
    pub users: Vec<UserStatistics>,
}

/// One user's instantaneous channel: path responses plus the angles they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct UserSample {
    pub tx_paths: PathAngles,
    pub rx_paths: PathAngles,
    /// L_r x L_t path-response matrix.
    pub path_response: CMat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    pub users: Vec<UserSample>,
}

/// Transmit APV and one receive APV per user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApvState {
    pub tx: Vec<Point>,
    pub rx: Vec<Vec<Point>>,
}

pub fn propagation_delta(pos: Point, angle: &PathAngle) -> f64 {
    let (ux, uy) = angle.direction();
    pos.x * ux + pos.y * uy
}

pub fn wavenumber(wavelength: f64) -> f64 {
    2.0 * PI / wavelength
}

pub fn field_response(pos: Point, angles: &PathAngles, wavelength: f64) -> CVec {
    let k = wavenumber(wavelength);
    CVec::from_iterator(
        angles.len(),
        angles.paths.iter().map(|a| (J * (k * propagation_delta(pos, a))).exp()),
    )
}

/// L x n matrix whose columns are the field responses of `positions`.
pub fn field_matrix(positions: &[Point], angles: &PathAngles, wavelength: f64) -> CMat {
    let k = wavenumber(wavelength);
    let dirs = angles.directions();
    CMat::from_fn(angles.len(), positions.len(), |l, n| {
        let (ux, uy) = dirs[l];
        Complex64::from_polar(1.0, k * (positions[n].x * ux + positions[n].y * uy))
    })
}

/// H = F^H(r) Sigma G(t), an M x N matrix.
pub fn channel_matrix(tx: &[Point], rx: &[Point], user: &UserSample, wavelength: f64) -> Result<CMat> {
    check_dim("path response rows", user.rx_paths.len(), user.path_response.nrows())?;
    check_dim("path response columns", user.tx_paths.len(), user.path_response.ncols())?;
    let g = field_matrix(tx, &user.tx_paths, wavelength);
    let f = field_matrix(rx, &user.rx_paths, wavelength);
    Ok(f.adjoint() * &user.path_response * g)
}

fn draw_angles<R: Rng + ?Sized>(n: usize, rng: &mut R) -> PathAngles {
    PathAngles::new(
        (0..n)
            .map(|_| {
                let theta = rng.random::<f64>() * PI;
                let phi = azimuth_from_uniform(rng.random::<f64>());
                PathAngle::new(theta, phi)
            })
            .collect(),
    )
}

/// Inverse CDF of the density sin(phi)/2 on [0, pi].
pub fn azimuth_from_uniform(u: f64) -> f64 {
    (1.0 - 2.0 * u).clamp(-1.0, 1.0).acos()
}

pub fn draw_statistical_state<R: Rng + ?Sized>(law: &ChannelLaw, rng: &mut R) -> StatisticalState {
    let users = (0..law.n_users)
        .map(|_| {
            let distance = law.distance_min_m + (law.distance_max_m - law.distance_min_m) * rng.random::<f64>();
            let tx_paths = draw_angles(law.n_paths, rng);
            let rx_paths = draw_angles(law.n_paths, rng);
            UserStatistics { distance, gain: law.c0 * distance.powf(-law.alpha0), tx_paths, rx_paths }
        })
        .collect();
    StatisticalState { users }
}

/// Circularly symmetric complex Gaussian with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Draws diagonal path responses; angles are reused unless `redraw_angles` is set.
pub fn draw_channel_sample<R: Rng + ?Sized>(
    stat: &StatisticalState,
    redraw_angles: bool,
    rng: &mut R,
) -> ChannelSample {
    let users = stat
        .users
        .iter()
        .map(|u| {
            let (tx_paths, rx_paths) = if redraw_angles {
                let t = draw_angles(u.tx_paths.len(), rng);
                let r = draw_angles(u.rx_paths.len(), rng);
                (t, r)
            } else {
                (u.tx_paths.clone(), u.rx_paths.clone())
            };
            let l = rx_paths.len();
            let var = u.path_variance();
            let mut sigma = CMat::zeros(l, tx_paths.len());
            for i in 0..l.min(tx_paths.len()) {
                sigma[(i, i)] = complex_gaussian(var, rng);
            }
            UserSample { tx_paths, rx_paths, path_response: sigma }
        })
        .collect();
    ChannelSample { users }
}

pub fn dbm_to_watt(p_dbm: f64) -> f64 {
    10f64.powf((p_dbm - 30.0) / 10.0)
}

pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

/// Generator for one labelled stream, e.g. `(seed, [realization, purpose, index])`.
/// Distinct label tuples give independent streams; equal tuples give equal streams.
pub fn stream_rng(seed: u64, labels: &[u64]) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut key = [0u8; 32];
    let mut h = seed;
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        h = splitmix(h ^ (i as u64).wrapping_mul(0xA24B_AED4_963E_E407));
        for l in labels {
            h = splitmix(h ^ l);
        }
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    rand_chacha::ChaCha8Rng::from_seed(key)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
