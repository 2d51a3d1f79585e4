//! Simulated rat trajectories in a square arena.
//!
//! Speeds are Rayleigh distributed, heading performs a Gaussian random walk in
//! angular velocity, and a wall-avoidance rule turns and slows the agent near
//! the boundary. Positions are the exact discrete integral of velocities.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain, StreamRng};

/// The single m → cm conversion factor. Motion parameters are stated in m/s,
/// the arena and trajectories in cm.
pub const CM_PER_M: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArenaConfig {
    /// Side of the square arena (cm).
    pub side_length: f64,
    /// Rate-map bin size (cm).
    pub bin_size: f64,
    /// Simulation step (s).
    pub dt: f64,
    /// Distance from a wall below which the avoidance rule may trigger (cm).
    pub boundary_margin: f64,
    /// Speed multiplier applied on the step after avoidance triggers.
    pub boundary_slowdown: f64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            side_length: 220.0,
            bin_size: 4.4,
            dt: 0.02,
            boundary_margin: 3.0,
            boundary_slowdown: 0.25,
        }
    }
}

impl ArenaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.side_length > 0.0 && self.side_length.is_finite()) {
            return Err(Error::config("arena side_length must be positive"));
        }
        if !(self.bin_size > 0.0 && self.bin_size.is_finite()) {
            return Err(Error::config("arena bin_size must be positive"));
        }
        let ratio = self.side_length / self.bin_size;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::config(format!(
                "side_length / bin_size = {ratio} is not an integer bin count"
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt must be positive"));
        }
        if !(self.boundary_margin > 0.0 && self.boundary_margin < self.side_length / 2.0) {
            return Err(Error::config(
                "boundary_margin must lie in (0, side_length / 2)",
            ));
        }
        if !(self.boundary_slowdown > 0.0 && self.boundary_slowdown <= 1.0) {
            return Err(Error::config("boundary_slowdown must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Bins per side.
    pub fn n_bins(&self) -> usize {
        (self.side_length / self.bin_size).round() as usize
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0.0..=self.side_length).contains(&p[0]) && (0.0..=self.side_length).contains(&p[1])
    }

    /// Bin of a position inside the arena; the far walls fold into the last bin.
    pub fn bin_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let n = self.n_bins();
        let ix = ((p[0] / self.bin_size) as usize).min(n - 1);
        let iy = ((p[1] / self.bin_size) as usize).min(n - 1);
        Some((ix, iy))
    }

    /// Centre of bin `(ix, iy)` in cm.
    pub fn bin_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            (ix as f64 + 0.5) * self.bin_size,
            (iy as f64 + 0.5) * self.bin_size,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Rayleigh scale of the forward speed (m/s).
    pub rayleigh_scale: f64,
    /// Standard deviation of the angular velocity (rad/s).
    pub angular_sigma: f64,
    /// Mean angular velocity (rad/s).
    pub angular_mean: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            rayleigh_scale: 0.13 * TAU,
            angular_sigma: 5.76 * 2.0,
            angular_mean: 0.0,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rayleigh_scale > 0.0 && self.rayleigh_scale.is_finite()) {
            return Err(Error::config("rayleigh_scale must be positive"));
        }
        if !(self.angular_sigma > 0.0 && self.angular_sigma.is_finite()) {
            return Err(Error::config("angular_sigma must be positive"));
        }
        if !self.angular_mean.is_finite() {
            return Err(Error::config("angular_mean must be finite"));
        }
        Ok(())
    }
}

/// One simulated run of `T` steps.
///
/// `positions` and `headings` hold `T + 1` samples (index 0 is the initial
/// state); the per-step quantities hold `T`. For every step `t`:
/// `velocities[t] = speeds[t] * (cos headings[t], sin headings[t])`,
/// `positions[t+1] = positions[t] + velocities[t] * dt` and
/// `headings[t+1] = headings[t] + turn_corrections[t] + angular_velocities[t] * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub positions: Vec<[f64; 2]>,
    pub headings: Vec<f64>,
    /// Forward speed per step (cm/s).
    pub speeds: Vec<f64>,
    /// Velocity per step (cm/s).
    pub velocities: Vec<[f64; 2]>,
    pub angular_velocities: Vec<f64>,
    pub turn_corrections: Vec<f64>,
}

impl Trajectory {
    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    /// Writes the trajectory as CSV with columns `t,x,y,theta,vx,vy,delta`.
    /// The final row carries the end position and heading only.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# units: t=step index, x,y=cm, theta=rad, vx,vy=cm/s, delta=rad, dt={} s",
            self.dt
        )?;
        writeln!(w, "t,x,y,theta,vx,vy,delta")?;
        for t in 0..self.positions.len() {
            let [x, y] = self.positions[t];
            if t < self.len() {
                let [vx, vy] = self.velocities[t];
                writeln!(
                    w,
                    "{t},{x},{y},{},{vx},{vy},{}",
                    self.headings[t], self.turn_corrections[t]
                )?;
            } else {
                writeln!(w, "{t},{x},{y},{},,,", self.headings[t])?;
            }
        }
        Ok(())
    }
}

/// Rayleigh quantile function `scale * sqrt(-2 ln(1 - q))`.
pub fn rayleigh_quantile(scale: f64, q: f64) -> f64 {
    scale * (-2.0 * (-q).ln_1p()).sqrt()
}

/// Draws a forward speed in m/s.
pub fn sample_speed<R: Rng + ?Sized>(motion: &MotionConfig, rng: &mut R) -> f64 {
    rayleigh_quantile(motion.rayleigh_scale, rng.random::<f64>())
}

/// Draws an angular velocity in rad/s.
pub fn sample_angular_velocity<R: Rng + ?Sized>(motion: &MotionConfig, rng: &mut R) -> f64 {
    Normal::new(motion.angular_mean, motion.angular_sigma)
        .expect("validated sigma")
        .sample(rng)
}

fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Wall-avoidance turn `δ` and speed factor for an agent at `position` heading
/// along `heading`.
///
/// Walls closer than `boundary_margin` are active. If the heading points into
/// any active wall, it is rotated by the smallest angle that removes every
/// wall-ward component (counter-clockwise on ties) and the speed factor is
/// `boundary_slowdown`. Otherwise the result is `(0, 1)`.
pub fn boundary_correction(position: [f64; 2], heading: f64, arena: &ArenaConfig) -> (f64, f64) {
    let [x, y] = position;
    let l = arena.side_length;
    // (distance, outward normal angle)
    let walls = [(l - x, 0.0), (y, 3.0 * FRAC_PI_2), (x, PI), (l - y, FRAC_PI_2)];
    let active: Vec<f64> = walls
        .iter()
        .filter(|(d, _)| *d < arena.boundary_margin)
        .map(|&(_, normal)| normal)
        .collect();
    let toward = |h: f64, normal: f64| (h - normal).cos();
    if active.iter().all(|&n| toward(heading, n) <= 0.0) {
        return (0.0, 1.0);
    }
    let mut best: Option<f64> = None;
    for &normal in &active {
        for c in [normal + FRAC_PI_2, normal - FRAC_PI_2] {
            let delta = wrap_pi(c - heading);
            if active.iter().any(|&n| toward(heading + delta, n) > 1e-12) {
                continue;
            }
            best = match best {
                Some(b) if b.abs() < delta.abs() || (b.abs() == delta.abs() && b > 0.0) => Some(b),
                _ => Some(delta),
            };
        }
    }
    // Two adjacent active walls always leave a feasible quarter turn.
    (best.unwrap_or(PI), arena.boundary_slowdown)
}

/// Largest speed not exceeding `speed` whose step stays inside the arena.
fn contained_speed(arena: &ArenaConfig, p: [f64; 2], dir: [f64; 2], speed: f64) -> f64 {
    let step = |s: f64| [p[0] + s * dir[0] * arena.dt, p[1] + s * dir[1] * arena.dt];
    if arena.contains(step(speed)) {
        return speed;
    }
    let mut reach = f64::INFINITY;
    for k in 0..2 {
        if dir[k] > 0.0 {
            reach = reach.min((arena.side_length - p[k]) / dir[k]);
        } else if dir[k] < 0.0 {
            reach = reach.min(-p[k] / dir[k]);
        }
    }
    let mut s = (reach / arena.dt).clamp(0.0, speed);
    for _ in 0..64 {
        if arena.contains(step(s)) {
            return s;
        }
        s *= 0.5;
    }
    0.0
}

/// Generates a `steps`-step trajectory from the stream keyed by `seed`.
pub fn generate_trajectory(
    arena: &ArenaConfig,
    motion: &MotionConfig,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = rng::stream(seed, &[domain::TRAJECTORY]);
    generate_trajectory_with_rng(arena, motion, steps, &mut rng)
}

/// Trajectory `index` of a batch; each index owns an independent stream.
pub fn generate_indexed(
    arena: &ArenaConfig,
    motion: &MotionConfig,
    steps: usize,
    seed: u64,
    keys: &[u64],
) -> Result<Trajectory> {
    let mut full = vec![domain::TRAJECTORY];
    full.extend_from_slice(keys);
    let mut rng = rng::stream(seed, &full);
    generate_trajectory_with_rng(arena, motion, steps, &mut rng)
}

pub fn generate_trajectory_with_rng(
    arena: &ArenaConfig,
    motion: &MotionConfig,
    steps: usize,
    rng: &mut StreamRng,
) -> Result<Trajectory> {
    arena.validate()?;
    motion.validate()?;
    if steps == 0 {
        return Err(Error::config("trajectory needs at least one step"));
    }
    let angular = Normal::new(motion.angular_mean, motion.angular_sigma)
        .map_err(|e| Error::config(e.to_string()))?;
    let l = arena.side_length;

    let mut positions = Vec::with_capacity(steps + 1);
    let mut headings = Vec::with_capacity(steps + 1);
    let mut speeds = Vec::with_capacity(steps);
    let mut velocities = Vec::with_capacity(steps);
    let mut angular_velocities = Vec::with_capacity(steps);
    let mut turn_corrections = Vec::with_capacity(steps);

    positions.push([rng.random::<f64>() * l, rng.random::<f64>() * l]);
    headings.push(rng.random::<f64>() * TAU);
    let mut factor = 1.0;

    for t in 0..steps {
        let p = positions[t];
        let theta = headings[t];
        let dir = [theta.cos(), theta.sin()];
        let drawn = sample_speed(motion, rng) * CM_PER_M * factor;
        let speed = contained_speed(arena, p, dir, drawn);
        let v = [speed * dir[0], speed * dir[1]];
        let next = [p[0] + v[0] * arena.dt, p[1] + v[1] * arena.dt];

        let omega = angular.sample(rng);
        let provisional = theta + omega * arena.dt;
        let (delta, f) = boundary_correction(next, provisional, arena);

        speeds.push(speed);
        velocities.push(v);
        angular_velocities.push(omega);
        turn_corrections.push(delta);
        positions.push(next);
        headings.push(provisional + delta);
        factor = f;
    }

    Ok(Trajectory {
        dt: arena.dt,
        positions,
        headings,
        speeds,
        velocities,
        angular_velocities,
        turn_corrections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn arena() -> ArenaConfig {
        ArenaConfig::default()
    }

    #[test]
    fn default_arena_has_fifty_bins() {
        assert_eq!(arena().n_bins(), 50);
        arena().validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let mut a = arena();
        a.dt = 0.0;
        assert!(matches!(a.validate(), Err(Error::Config(_))));
        let mut a = arena();
        a.boundary_margin = 110.0;
        assert!(a.validate().is_err());
        let mut a = arena();
        a.bin_size = 4.3;
        assert!(a.validate().is_err());
        let mut m = MotionConfig::default();
        m.rayleigh_scale = 0.0;
        assert!(m.validate().is_err());
        assert!(generate_trajectory(&arena(), &MotionConfig::default(), 0, 1).is_err());
    }

    #[test]
    fn twenty_steps_stay_in_arena() {
        for seed in 0..50 {
            let t = generate_trajectory(&arena(), &MotionConfig::default(), 20, seed).unwrap();
            assert_eq!(t.positions.len(), 21);
            assert!(t.positions.iter().all(|&p| arena().contains(p)));
        }
    }

    #[test]
    fn kinematics_hold_per_step() {
        let a = arena();
        let t = generate_trajectory(&a, &MotionConfig::default(), 2000, 3).unwrap();
        for s in 0..t.len() {
            let [x0, y0] = t.positions[s];
            let [x1, y1] = t.positions[s + 1];
            let [vx, vy] = t.velocities[s];
            assert!((x1 - (x0 + vx * a.dt)).abs() < 1e-9);
            assert!((y1 - (y0 + vy * a.dt)).abs() < 1e-9);
            assert!((vx - t.speeds[s] * t.headings[s].cos()).abs() < 1e-9);
            assert!((vy - t.speeds[s] * t.headings[s].sin()).abs() < 1e-9);
            let expected =
                t.headings[s] + t.turn_corrections[s] + t.angular_velocities[s] * a.dt;
            assert!((t.headings[s + 1] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn vanishing_speed_scale_barely_moves() {
        let motion = MotionConfig {
            rayleigh_scale: 1e-9,
            ..Default::default()
        };
        let t = generate_trajectory(&arena(), &motion, 100, 5).unwrap();
        for w in t.positions.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            assert!(d < 1e-6);
        }
    }

    #[test]
    fn quantile_zero_is_zero() {
        assert_eq!(rayleigh_quantile(0.817, 0.0), 0.0);
    }

    #[test]
    fn default_speed_scale_and_sigma() {
        let m = MotionConfig::default();
        assert_eq!(m.rayleigh_scale, 0.13 * 2.0 * PI);
        assert_eq!(m.angular_sigma, 11.52);
        assert_eq!(m.angular_mean, 0.0);
    }

    #[test]
    fn speed_mean_matches_rayleigh_mean() {
        let m = MotionConfig::default();
        let mut rng = StreamRng::seed_from_u64(11);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_speed(&m, &mut rng)).sum::<f64>() / n as f64;
        let expected = m.rayleigh_scale * (PI / 2.0).sqrt();
        assert!((mean - expected).abs() / expected < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn trajectory_speeds_are_converted_to_cm() {
        // Far from walls the first drawn speed is used as-is, scaled by CM_PER_M.
        let a = ArenaConfig {
            side_length: 1e7,
            bin_size: 1e5,
            ..arena()
        };
        let m = MotionConfig::default();
        let seed = 21;
        let t = generate_trajectory(&a, &m, 1, seed).unwrap();
        let mut rng = rng::stream(seed, &[domain::TRAJECTORY]);
        let _: f64 = rng.random();
        let _: f64 = rng.random();
        let _: f64 = rng.random();
        let raw = sample_speed(&m, &mut rng);
        assert_eq!(t.speeds[0], raw * CM_PER_M);
    }

    #[test]
    fn centre_needs_no_correction() {
        for k in 0..16 {
            let h = k as f64 * TAU / 16.0;
            assert_eq!(boundary_correction([110.0, 110.0], h, &arena()), (0.0, 1.0));
        }
    }

    #[test]
    fn east_wall_turns_agent_away() {
        let a = arena();
        let (delta, factor) = boundary_correction([219.0, 110.0], 0.0, &a);
        assert!(delta != 0.0);
        assert_eq!(factor, a.boundary_slowdown);
        // post-turn heading has no component into the east wall
        assert!((0.0 + delta).cos() <= 1e-12);
        // heading away from the wall: untouched
        assert_eq!(boundary_correction([219.0, 110.0], PI, &a), (0.0, 1.0));
    }

    #[test]
    fn corner_turn_clears_both_walls() {
        let a = arena();
        let h = PI / 4.0; // into the north-east corner
        let (delta, _) = boundary_correction([219.5, 219.5], h, &a);
        let nh = h + delta;
        assert!(nh.cos() <= 1e-12 && nh.sin() <= 1e-12);
    }

    #[test]
    fn long_rollout_never_crosses_a_wall() {
        let a = arena();
        let t = generate_trajectory(&a, &MotionConfig::default(), 10_000, 9).unwrap();
        assert!(t.positions.iter().all(|&p| a.contains(p)));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let a = generate_trajectory(&arena(), &MotionConfig::default(), 300, 77).unwrap();
        let b = generate_trajectory(&arena(), &MotionConfig::default(), 300, 77).unwrap();
        assert_eq!(a, b);
        let c = generate_trajectory(&arena(), &MotionConfig::default(), 300, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let t = generate_trajectory(&arena(), &MotionConfig::default(), 3, 1).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert!(lines[0].starts_with("# units"));
        assert_eq!(lines[1], "t,x,y,theta,vx,vy,delta");
        assert_eq!(lines.len(), 2 + 4);
        assert_eq!(lines[2].split(',').count(), 7);
        assert!(lines[5].ends_with(",,,"));
    }
}
