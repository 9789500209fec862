//! Seeded synthetic trajectories for three modes.
//!
//! Each segment draws a latent point on one of three interleaved spiral
//! arms in a 2-D regime plane; the arm index is the mode. Arms are separated by a gap, so the classes are
//! perfectly separable given the latent point, but the boundary winds
//! around the plane and a handful of labels per arm does not pin it down.
//! The first axis sets the log cruise speed. The second sets how much the
//! motion weaves: the heading and the speed swing periodically (random
//! phase) with amplitudes that grow together along it. A small heading
//! drift and Gaussian position noise are added on top. Segments start
//! heading along +x unless `heading_spread` randomizes the start.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Segment, TrackPoint};
use crate::mode::Mode;

pub const SYNTHETIC_MODES: [Mode; 3] = [Mode::Walk, Mode::Bike, Mode::Car];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub per_class: usize,
    pub users: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub dt_seconds: f64,
    pub gps_noise_m: f64,
    /// Full turns each spiral arm makes.
    pub turns: f64,
    /// Radius at which the arms start, in units of the outer radius.
    pub inner_radius: f64,
    /// Std of the Gaussian blur applied to the latent point.
    pub latent_noise: f64,
    /// Cruise speed range in m/s spanned by the first latent axis.
    pub speed_range: (f64, f64),
    /// Heading swing amplitude range in radians spanned by the second axis.
    pub weave_range: (f64, f64),
    /// Relative speed swing range, also spanned by the second axis.
    pub surge_range: (f64, f64),
    pub weave_period_steps: f64,
    /// Std of the per-step heading drift, radians.
    pub heading_noise: f64,
    /// Initial headings are uniform in `[0, heading_spread)`, radians.
    pub heading_spread: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            per_class: 300,
            users: 10,
            min_len: 64,
            max_len: 80,
            dt_seconds: 2.0,
            gps_noise_m: 0.05,
            turns: 0.4,
            inner_radius: 0.25,
            latent_noise: 0.02,
            speed_range: (2.0, 20.0),
            weave_range: (0.05, 1.2),
            surge_range: (0.0, 0.5),
            weave_period_steps: 12.0,
            heading_noise: 0.01,
            heading_spread: 0.0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.per_class == 0 || self.users == 0 {
            return bad("per_class and users must be positive");
        }
        if self.min_len < 3 || self.max_len < self.min_len {
            return bad("need 3 <= min_len <= max_len");
        }
        if !(self.dt_seconds > 0.0)
            || self.gps_noise_m < 0.0
            || self.latent_noise < 0.0
            || self.heading_noise < 0.0
            || self.heading_spread < 0.0
        {
            return bad("dt must be positive and noise levels nonnegative");
        }
        if !(self.speed_range.0 > 0.0 && self.speed_range.1 >= self.speed_range.0) {
            return bad("speed_range must be positive and ordered");
        }
        if !(self.weave_range.0 > 0.0 && self.weave_range.1 >= self.weave_range.0) {
            return bad("weave_range must be positive and ordered");
        }
        if !(self.surge_range.0 >= 0.0 && self.surge_range.1 >= self.surge_range.0 && self.surge_range.1 < 1.0) {
            return bad("surge_range must be ordered within [0, 1)");
        }
        if !(self.weave_period_steps > 0.0) {
            return bad("weave_period_steps must be positive");
        }
        Ok(())
    }
}

/// Latent regime point of arm `class` at arc parameter `s` in `[0, 1]`.
pub fn spiral_point(class: usize, s: f64, config: &SyntheticConfig) -> (f64, f64) {
    let arms = SYNTHETIC_MODES.len() as f64;
    let r = config.inner_radius + (1.0 - config.inner_radius) * s;
    let phi = 2.0 * PI * (config.turns * s + class as f64 / arms);
    (r * phi.cos(), r * phi.sin())
}

fn log_lerp(range: (f64, f64), u: f64) -> f64 {
    let u = ((u + 1.0) / 2.0).clamp(0.0, 1.0);
    (range.0.ln() + u * (range.1.ln() - range.0.ln())).exp()
}

/// Motion regime of one segment.
#[derive(Clone, Copy, Debug)]
struct Regime {
    speed: f64,
    /// Amplitude of the periodic heading swing, radians.
    weave: f64,
    /// Relative amplitude of the periodic speed swing.
    surge: f64,
}

fn simulate<R: Rng>(rng: &mut R, n: usize, r: Regime, t0: f64, cfg: &SyntheticConfig) -> Vec<TrackPoint> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let base = rng.random::<f64>() * cfg.heading_spread;
    let phase = rng.random_range(0.0..2.0 * PI);
    let w = 2.0 * PI / cfg.weave_period_steps;
    let (mut x, mut y) = (0.0, 0.0);
    let mut drift = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(TrackPoint {
            x: x + cfg.gps_noise_m * unit.sample(rng),
            y: y + cfg.gps_noise_m * unit.sample(rng),
            t: t0 + i as f64 * cfg.dt_seconds,
        });
        let s = w * i as f64 + phase;
        drift += cfg.heading_noise * unit.sample(rng);
        let heading = base + drift + r.weave * s.sin();
        let step = r.speed * (1.0 + r.surge * s.cos()) * cfg.dt_seconds;
        x += step * heading.cos();
        y += step * heading.sin();
    }
    out
}

/// `per_class` segments for each of the three modes, users assigned
/// round-robin over a shuffled order. Deterministic in `seed`.
pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<Vec<Segment>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blur = Normal::new(0.0, config.latent_noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let total = config.per_class * SYNTHETIC_MODES.len();
    let mut users: Vec<usize> = (0..total).map(|i| i % config.users).collect();
    users.shuffle(&mut rng);
    let mut segs = Vec::with_capacity(total);
    for (c, mode) in SYNTHETIC_MODES.iter().enumerate() {
        for i in 0..config.per_class {
            let s = rng.random_range(0.0..1.0);
            let (a, b) = spiral_point(c, s, config);
            let a = a + blur.sample(&mut rng);
            let b = b + blur.sample(&mut rng);
            let speed = log_lerp(config.speed_range, a);
            let u = ((b + 1.0) / 2.0).clamp(0.0, 1.0);
            let regime = Regime {
                speed,
                weave: log_lerp(config.weave_range, b),
                surge: config.surge_range.0 + u * (config.surge_range.1 - config.surge_range.0),
            };
            let n = rng.random_range(config.min_len..=config.max_len);
            let idx = c * config.per_class + i;
            let t0 = 1.2e9 + idx as f64 * 1e4;
            let user = format!("{:03}", users[idx]);
            segs.push(Segment {
                points: simulate(&mut rng, n, regime, t0, config),
                label: Some(*mode),
                segment_id: format!("synth/{user}/{}/{i}", mode.name()),
                user_id: user,
            });
        }
    }
    Ok(segs)
}
