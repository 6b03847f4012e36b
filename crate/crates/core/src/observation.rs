//! Angle-of-arrival measurement model.
//!
//! The sensor is a uniform linear array whose axis points along the robot
//! heading. Such an array cannot tell mirror images across its axis apart,
//! so bearings are folded into `[0, 180]` degrees: 0 and 180 are endfire,
//! 90 is broadside. A measurement is a bin of a uniform grid over that range
//! whose probability is the mass of a Gaussian over the bin. Mean and
//! standard deviation of the Gaussian come from a table over
//! (distance, folded AoA), interpolated bilinearly.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::kinematics::{wrap_angle, WorldState};

/// Floor applied to every likelihood value.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Header line of the observation-table CSV format.
pub const TABLE_HEADER: &str = "distance_m,aoa_deg,mu_deg,sigma_deg";

/// Uniform grid of folded AoA bin centers from 0 to 180 degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct AoaGrid {
    resolution: f64,
    bins: Vec<f64>,
}

impl AoaGrid {
    pub fn new(resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution <= 180.0) {
            return Err(Error::config(
                "observation.resolution",
                format!("must be in (0, 180], got {resolution}"),
            ));
        }
        let steps = 180.0 / resolution;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::config(
                "observation.resolution",
                format!("180 must be an integer multiple of the resolution, got {resolution}"),
            ));
        }
        let n = steps.round() as usize;
        let bins = (0..=n).map(|k| k as f64 * resolution).collect();
        Ok(AoaGrid { resolution, bins })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn observation(&self, bin_index: usize) -> Observation {
        Observation {
            bin_index,
            value: self.bins[bin_index],
        }
    }

    /// Bin whose interval contains `aoa` (upper edges belong to the next bin).
    pub fn bin_of(&self, aoa: f64) -> usize {
        let k = ((aoa + 0.5 * self.resolution) / self.resolution).floor();
        (k.max(0.0) as usize).min(self.bins.len() - 1)
    }
}

/// A quantized AoA measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub bin_index: usize,
    /// Bin center in degrees.
    pub value: f64,
}

/// Euclidean robot-to-source distance and folded AoA in `[0, 180]`.
pub fn relative_geometry(w: &WorldState) -> Result<(f64, f64)> {
    let dx = w.source.x - w.robot.x;
    let dy = w.source.y - w.robot.y;
    let distance = dx.hypot(dy);
    if distance == 0.0 {
        return Err(Error::DegenerateGeometry);
    }
    let bearing = wrap_angle(dy.atan2(dx).to_degrees() - w.robot.theta);
    Ok((distance, bearing.abs()))
}

/// Gridded measurement mean and standard deviation over (distance, folded AoA).
///
/// Matrices are stored distance-major: entry `(i, j)` lives at
/// `i * aoa_knots.len() + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    distance_knots: Vec<f64>,
    aoa_knots: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl ObservationTable {
    pub fn new(
        distance_knots: Vec<f64>,
        aoa_knots: Vec<f64>,
        mu: Vec<f64>,
        sigma: Vec<f64>,
    ) -> Result<Self> {
        check_knots("distance", &distance_knots)?;
        check_knots("aoa", &aoa_knots)?;
        if aoa_knots[0] < 0.0 || aoa_knots[aoa_knots.len() - 1] > 180.0 {
            return Err(Error::Table("aoa knots must lie in [0, 180]".into()));
        }
        let cells = distance_knots.len() * aoa_knots.len();
        if mu.len() != cells || sigma.len() != cells {
            return Err(Error::Table(format!(
                "expected {cells} entries, got {} means and {} deviations",
                mu.len(),
                sigma.len()
            )));
        }
        if let Some(m) = mu.iter().find(|m| !(0.0..=180.0).contains(*m)) {
            return Err(Error::Table(format!("mean {m} outside [0, 180]")));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Table(format!("standard deviation {s} is not positive")));
        }
        Ok(ObservationTable {
            distance_knots,
            aoa_knots,
            mu,
            sigma,
        })
    }

    pub fn distance_knots(&self) -> &[f64] {
        &self.distance_knots
    }

    pub fn aoa_knots(&self) -> &[f64] {
        &self.aoa_knots
    }

    /// `(mu, sigma)` stored at knot `(i, j)`.
    pub fn knot(&self, i: usize, j: usize) -> (f64, f64) {
        let k = i * self.aoa_knots.len() + j;
        (self.mu[k], self.sigma[k])
    }

    /// Bilinear interpolation, clamping queries to the knot range.
    pub fn interpolate(&self, distance: f64, folded_aoa: f64) -> (f64, f64) {
        let (i, s) = bracket(&self.distance_knots, distance);
        let (j, t) = bracket(&self.aoa_knots, folded_aoa);
        let i1 = (i + 1).min(self.distance_knots.len() - 1);
        let j1 = (j + 1).min(self.aoa_knots.len() - 1);
        let lerp2 = |m: &[f64]| {
            let n = self.aoa_knots.len();
            let top = m[i * n + j] * (1.0 - t) + m[i * n + j1] * t;
            let bottom = m[i1 * n + j] * (1.0 - t) + m[i1 * n + j1] * t;
            top * (1.0 - s) + bottom * s
        };
        (lerp2(&self.mu), lerp2(&self.sigma))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * self.mu.len() + TABLE_HEADER.len());
        out.push_str(TABLE_HEADER);
        out.push('\n');
        for (i, d) in self.distance_knots.iter().enumerate() {
            for (j, a) in self.aoa_knots.iter().enumerate() {
                let (m, s) = self.knot(i, j);
                // `{}` prints the shortest representation that parses back exactly.
                writeln!(out, "{d},{a},{m},{s}").expect("writing to a String");
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end_matches('\r') == TABLE_HEADER => {}
            other => {
                return Err(Error::Table(format!(
                    "expected header `{TABLE_HEADER}`, found {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Table(format!("line {}: expected 4 fields", n + 2)));
            }
            let mut row = [0.0; 4];
            for (slot, field) in row.iter_mut().zip(&fields) {
                *slot = field.trim().parse().map_err(|_| {
                    Error::Table(format!("line {}: cannot parse `{field}`", n + 2))
                })?;
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Table("no rows".into()));
        }

        let mut distance_knots = vec![rows[0][0]];
        for r in &rows {
            if r[0] != *distance_knots.last().unwrap() {
                distance_knots.push(r[0]);
            }
        }
        let n_aoa = rows.len() / distance_knots.len();
        if n_aoa * distance_knots.len() != rows.len() {
            return Err(Error::Table("incomplete grid".into()));
        }
        let aoa_knots: Vec<f64> = rows[..n_aoa].iter().map(|r| r[1]).collect();
        for (k, r) in rows.iter().enumerate() {
            let (i, j) = (k / n_aoa, k % n_aoa);
            if r[0] != distance_knots[i] || r[1] != aoa_knots[j] {
                return Err(Error::Table(format!(
                    "row {} is ({}, {}), expected ({}, {}) in distance-major order",
                    k + 2,
                    r[0],
                    r[1],
                    distance_knots[i],
                    aoa_knots[j]
                )));
            }
        }
        let mu = rows.iter().map(|r| r[2]).collect();
        let sigma = rows.iter().map(|r| r[3]).collect();
        ObservationTable::new(distance_knots, aoa_knots, mu, sigma)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ObservationTable::from_csv(&text)
    }
}

fn check_knots(name: &str, knots: &[f64]) -> Result<()> {
    if knots.is_empty() {
        return Err(Error::Table(format!("no {name} knots")));
    }
    if knots.iter().any(|k| !k.is_finite()) {
        return Err(Error::Table(format!("non-finite {name} knot")));
    }
    if knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Table(format!("{name} knots must be strictly ascending")));
    }
    Ok(())
}

/// Lower knot index and fractional offset towards the next knot, clamped.
fn bracket(knots: &[f64], q: f64) -> (usize, f64) {
    let last = knots.len() - 1;
    if last == 0 || q <= knots[0] {
        return (0, 0.0);
    }
    if q >= knots[last] {
        return (last, 0.0);
    }
    let i = knots.partition_point(|&k| k <= q) - 1;
    (i, (q - knots[i]) / (knots[i + 1] - knots[i]))
}

/// Settings of the synthetic table generator.
///
/// `sigma(d, phi) = (sigma0 + sigma_per_meter * d) * (1 + kappa * |cos phi|)`
/// and `mu(d, phi) = phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTableParams {
    pub sigma0: f64,
    pub sigma_per_meter: f64,
    pub kappa: f64,
    pub max_distance: f64,
    pub distance_step: f64,
    pub aoa_step: f64,
}

impl Default for SyntheticTableParams {
    fn default() -> Self {
        SyntheticTableParams {
            sigma0: 2.0,
            sigma_per_meter: 1.5,
            kappa: 2.0,
            max_distance: 9.0,
            distance_step: 0.5,
            aoa_step: 5.0,
        }
    }
}

impl SyntheticTableParams {
    pub fn sigma_at(&self, distance: f64, aoa: f64) -> f64 {
        (self.sigma0 + self.sigma_per_meter * distance) * (1.0 + self.kappa * aoa.to_radians().cos().abs())
    }
}

pub fn build_synthetic_table(params: &SyntheticTableParams) -> Result<ObservationTable> {
    if !(params.sigma0 > 0.0) {
        return Err(Error::config(
            "observation.sigma0",
            format!("must be > 0, got {}", params.sigma0),
        ));
    }
    if !(params.sigma_per_meter >= 0.0) {
        return Err(Error::config("observation.sigma_per_meter", "must be >= 0"));
    }
    if !(params.kappa >= 0.0) {
        return Err(Error::config("observation.kappa", "must be >= 0"));
    }
    if !(params.distance_step > 0.0 && params.max_distance > 0.0) {
        return Err(Error::config(
            "observation.distance_step",
            "distance step and maximum distance must be > 0",
        ));
    }
    let aoa = AoaGrid::new(params.aoa_step)
        .map_err(|_| Error::config("observation.aoa_step", "must divide 180"))?;
    let n_dist = (params.max_distance / params.distance_step).ceil() as usize;
    let distance_knots: Vec<f64> = (0..=n_dist).map(|k| k as f64 * params.distance_step).collect();
    let aoa_knots = aoa.bins().to_vec();
    let mut mu = Vec::with_capacity(distance_knots.len() * aoa_knots.len());
    let mut sigma = Vec::with_capacity(mu.capacity());
    for &d in &distance_knots {
        for &a in &aoa_knots {
            mu.push(a);
            sigma.push(params.sigma_at(d, a));
        }
    }
    ObservationTable::new(distance_knots, aoa_knots, mu, sigma)
}

/// Standard normal upper tail `1 - Phi(x)`.
fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// `Phi(b) - Phi(a)` for `a <= b`, evaluated on the tail that avoids cancellation.
fn band_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        upper_tail(-b) - upper_tail(-a)
    } else {
        1.0 - upper_tail(b) - upper_tail(-a)
    }
}

/// Quantized Gaussian over an [`AoaGrid`] for fixed `(mu, sigma)`.
#[derive(Debug, Clone, Copy)]
struct QuantizedGaussian {
    mu: f64,
    sigma: f64,
    half_width: f64,
    /// Mass of the whole grid span, used to renormalize.
    total: f64,
}

impl QuantizedGaussian {
    fn new(grid: &AoaGrid, mu: f64, sigma: f64) -> Self {
        let half_width = 0.5 * grid.resolution;
        let lo = (grid.bins[0] - half_width - mu) / sigma;
        let hi = (grid.bins[grid.bins.len() - 1] + half_width - mu) / sigma;
        QuantizedGaussian {
            mu,
            sigma,
            half_width,
            total: band_mass(lo, hi),
        }
    }

    #[inline]
    fn mass(&self, center: f64) -> f64 {
        let a = (center - self.half_width - self.mu) / self.sigma;
        let b = (center + self.half_width - self.mu) / self.sigma;
        band_mass(a, b) / self.total
    }
}

/// Measurement model: a parameter table together with the AoA grid.
#[derive(Debug, Clone)]
pub struct SensorModel {
    table: Arc<ObservationTable>,
    grid: AoaGrid,
}

impl SensorModel {
    pub fn new(table: Arc<ObservationTable>, grid: AoaGrid) -> Self {
        SensorModel { table, grid }
    }

    pub fn table(&self) -> &ObservationTable {
        &self.table
    }

    pub fn grid(&self) -> &AoaGrid {
        &self.grid
    }

    pub fn params(&self, w: &WorldState) -> Result<(f64, f64)> {
        let (d, aoa) = relative_geometry(w)?;
        Ok(self.table.interpolate(d, aoa))
    }

    /// Probability of every grid bin for the world state `w`.
    pub fn observation_pmf(&self, w: &WorldState) -> Result<Vec<f64>> {
        let (mu, sigma) = self.params(w)?;
        Ok(pmf_for(&self.grid, mu, sigma))
    }

    /// Probability of bin `z` in state `w`, floored at [`LIKELIHOOD_FLOOR`].
    pub fn likelihood(&self, w: &WorldState, z: &Observation) -> Result<f64> {
        let (mu, sigma) = self.params(w)?;
        let q = QuantizedGaussian::new(&self.grid, mu, sigma);
        Ok(q.mass(self.grid.bins[z.bin_index]).max(LIKELIHOOD_FLOOR))
    }
}

/// Renormalized quantized-Gaussian probabilities of all bins of `grid`.
pub fn pmf_for(grid: &AoaGrid, mu: f64, sigma: f64) -> Vec<f64> {
    let q = QuantizedGaussian::new(grid, mu, sigma);
    grid.bins.iter().map(|&c| q.mass(c)).collect()
}

/// Inverse-CDF draw from a categorical distribution over grid bins.
pub fn sample_observation<R: Rng + ?Sized>(pmf: &[f64], grid: &AoaGrid, rng: &mut R) -> Observation {
    debug_assert_eq!(pmf.len(), grid.len());
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (k, &p) in pmf.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
        }
        cumulative += p;
        if u < cumulative {
            return grid.observation(k);
        }
    }
    // Rounding left the cumulative sum just below u.
    grid.observation(last_positive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::AgentState;
    use crate::Rng as StreamRng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use statrs::function::erf::erf;

    fn world(robot: (f64, f64, f64), source: (f64, f64)) -> WorldState {
        WorldState {
            robot: AgentState::new(robot.0, robot.1, robot.2, 0.3),
            source: AgentState::new(source.0, source.1, 0.0, 0.3),
        }
    }

    fn phi(x: f64) -> f64 {
        0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
    }

    fn grid5() -> AoaGrid {
        AoaGrid::new(5.0).unwrap()
    }

    #[test]
    fn grid_layout() {
        let g = grid5();
        assert_eq!(g.len(), 37);
        assert_eq!(g.bins()[0], 0.0);
        assert_eq!(g.bins()[36], 180.0);
        assert_eq!(g.bin_of(92.4), 18);
        assert_eq!(g.bin_of(92.5), 19);
        assert_eq!(g.bin_of(-1.0), 0);
        assert!(AoaGrid::new(7.0).is_err());
        assert!(AoaGrid::new(0.0).is_err());
    }

    #[test]
    fn geometry_examples() {
        let (d, a) = relative_geometry(&world((0.0, 0.0, 0.0), (1.0, 0.0))).unwrap();
        assert_eq!((d, a), (1.0, 0.0));
        let (d, a) = relative_geometry(&world((0.0, 0.0, 0.0), (0.0, 2.0))).unwrap();
        assert!((d - 2.0).abs() < 1e-12 && (a - 90.0).abs() < 1e-12);
        let (d, a) = relative_geometry(&world((0.0, 0.0, 90.0), (1.0, 1.0))).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-12 && (a - 45.0).abs() < 1e-12);
        let (_, a) = relative_geometry(&world((0.0, 0.0, 0.0), (-1.0, 0.0))).unwrap();
        assert_eq!(a, 180.0);
        assert!(matches!(
            relative_geometry(&world((1.0, 1.0, 0.0), (1.0, 1.0))),
            Err(Error::DegenerateGeometry)
        ));
    }

    fn small_table() -> ObservationTable {
        ObservationTable::new(
            vec![0.0, 0.5, 1.0],
            vec![0.0, 90.0, 180.0],
            vec![0.0, 90.0, 180.0, 2.0, 88.0, 178.0, 4.0, 86.0, 176.0],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap()
    }

    #[test]
    fn interpolation_examples() {
        let t = small_table();
        assert_eq!(t.interpolate(0.5, 90.0), (88.0, 5.0));
        let (m, s) = t.interpolate(0.25, 90.0);
        assert!((m - 89.0).abs() < 1e-12 && (s - 3.5).abs() < 1e-12);
        assert_eq!(t.interpolate(-3.0, 0.0), t.knot(0, 0));
        assert_eq!(t.interpolate(10.0, 400.0), t.knot(2, 2));
        let (m, s) = t.interpolate(0.25, 45.0);
        assert!((m - 0.25 * (0.0 + 90.0 + 2.0 + 88.0)).abs() < 1e-12);
        assert!((s - 0.25 * (1.0 + 2.0 + 4.0 + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn table_validation() {
        assert!(ObservationTable::new(vec![0.0, 0.0], vec![0.0], vec![0.0; 2], vec![1.0; 2]).is_err());
        assert!(ObservationTable::new(vec![0.0], vec![0.0], vec![0.0], vec![0.0]).is_err());
        assert!(ObservationTable::new(vec![0.0], vec![0.0], vec![190.0], vec![1.0]).is_err());
        assert!(ObservationTable::new(vec![0.0], vec![0.0, 5.0], vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn quantized_gaussian_mass_at_mean() {
        let pmf = pmf_for(&grid5(), 90.0, 10.0);
        let raw = phi(0.25) - phi(-0.25);
        assert!((raw - 0.1974).abs() < 1e-4);
        assert!((pmf[18] - raw).abs() < 1e-6, "{} vs {raw}", pmf[18]);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn narrow_gaussian_is_one_hot() {
        let pmf = pmf_for(&grid5(), 61.0, 0.01);
        assert!((pmf[12] - 1.0).abs() < 1e-12);
        assert!(pmf.iter().enumerate().all(|(k, &p)| k == 12 || p < 1e-12));
    }

    proptest! {
        #[test]
        fn pmf_is_normalized(mu in 0f64..=180.0, sigma in 0.01f64..200.0) {
            let pmf = pmf_for(&grid5(), mu, sigma);
            prop_assert!(pmf.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let peak = grid5().bin_of(mu);
            let max = pmf.iter().cloned().fold(0.0, f64::max);
            prop_assert_eq!(pmf[peak], max);
        }

        #[test]
        fn mirrored_sources_share_pmf(x in 0.5f64..6.5, y in 0.1f64..4.5, theta in -180f64..180.0) {
            let table = Arc::new(build_synthetic_table(&SyntheticTableParams::default()).unwrap());
            let sensor = SensorModel::new(table, grid5());
            let robot = AgentState::new(3.0, 2.5, theta, 0.3);
            // Mirror the source across the line through the robot along its heading.
            let (s, c) = theta.to_radians().sin_cos();
            let (dx, dy) = (x - robot.x, y - robot.y);
            let along = dx * c + dy * s;
            let across = -dx * s + dy * c;
            let mirrored = (robot.x + along * c + across * s, robot.y + along * s - across * c);
            prop_assume!(dx.hypot(dy) > 1e-6);
            let a = sensor.observation_pmf(&WorldState { robot, source: AgentState::new(x, y, 0.0, 0.3) }).unwrap();
            let b = sensor.observation_pmf(&WorldState { robot, source: AgentState::new(mirrored.0, mirrored.1, 0.0, 0.3) }).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn interpolation_is_lipschitz(d in 0f64..9.0, a in 0f64..180.0) {
            let table = build_synthetic_table(&SyntheticTableParams::default()).unwrap();
            let h = 1e-4;
            let (m0, s0) = table.interpolate(d, a);
            let (m1, s1) = table.interpolate(d + h, a);
            let (m2, s2) = table.interpolate(d, a + h);
            // Largest knot-to-knot slope of the default table.
            let slope_d = 1.5 * 3.0 / 1.0;
            let slope_a = (2.0 + 1.5 * 9.0) * 2.0 * (5f64.to_radians().sin()) / 5.0 + 1e-9;
            prop_assert!((m1 - m0).abs() <= 1e-12 && (s1 - s0).abs() <= slope_d * h * 1.0001);
            prop_assert!((m2 - m0).abs() <= h * 1.0001 && (s2 - s0).abs() <= slope_a * h * 1.0001);
        }
    }

    #[test]
    fn likelihood_matches_pmf_and_floors() {
        let table = Arc::new(build_synthetic_table(&SyntheticTableParams::default()).unwrap());
        let sensor = SensorModel::new(table, grid5());
        let w = world((1.0, 1.0, 0.0), (1.0, 3.0));
        let pmf = sensor.observation_pmf(&w).unwrap();
        for k in 0..pmf.len() {
            let l = sensor.likelihood(&w, &sensor.grid().observation(k)).unwrap();
            if pmf[k] >= LIKELIHOOD_FLOOR {
                assert_eq!(l.to_bits(), pmf[k].to_bits());
            } else {
                assert_eq!(l, LIKELIHOOD_FLOOR);
            }
        }
        // Broadside at 2 m: sigma = 5 degrees, so bin 0 is 18 sigma away.
        let far = sensor.likelihood(&w, &sensor.grid().observation(0)).unwrap();
        assert_eq!(far, LIKELIHOOD_FLOOR);
    }

    #[test]
    fn synthetic_table_examples() {
        let p = SyntheticTableParams::default();
        let t = build_synthetic_table(&p).unwrap();
        let (m, s) = t.interpolate(1.0, 90.0);
        assert_eq!(m, 90.0);
        assert!((s - 3.5).abs() < 1e-12);
        assert_eq!(t.distance_knots()[1], 0.5);
        assert_eq!(t.aoa_knots()[1], 5.0);

        let flat = build_synthetic_table(&SyntheticTableParams { kappa: 0.0, ..p }).unwrap();
        let (_, s1) = flat.interpolate(2.0, 10.0);
        let (_, s2) = flat.interpolate(2.0, 95.0);
        assert!((s1 - s2).abs() < 1e-12);

        assert!(build_synthetic_table(&SyntheticTableParams { sigma0: 0.0, ..p }).is_err());
    }

    #[test]
    fn table_file_round_trip() {
        let t = build_synthetic_table(&SyntheticTableParams {
            sigma_per_meter: 1.0 / 3.0,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        t.save(&path).unwrap();
        let back = ObservationTable::load(&path).unwrap();
        assert_eq!(t, back);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("distance_m,aoa_deg,mu_deg,sigma_deg\n0,0,0,"));
    }

    #[test]
    fn loader_rejects_bad_files() {
        assert!(ObservationTable::from_csv("d,a,m,s\n0,0,0,1\n").is_err());
        let missing = format!("{TABLE_HEADER}\n0,0,0,1\n0,5,5,1\n1,0,0,1\n");
        assert!(ObservationTable::from_csv(&missing).is_err());
        let unordered = format!("{TABLE_HEADER}\n0,5,5,1\n0,0,0,1\n");
        assert!(ObservationTable::from_csv(&unordered).is_err());
        let ok = format!("{TABLE_HEADER}\n0,0,0,1\n0,5,5,1\n1,0,0,2\n1,5,5,2\n");
        assert!(ObservationTable::from_csv(&ok).is_ok());
    }

    #[test]
    fn sampling_examples() {
        let g = grid5();
        let mut one_hot = vec![0.0; g.len()];
        one_hot[7] = 1.0;
        let mut rng = StreamRng::seed_from_u64(5);
        assert!((0..1000).all(|_| sample_observation(&one_hot, &g, &mut rng).bin_index == 7));

        let uniform = vec![1.0 / 37.0; 37];
        let n = 100_000;
        let mut counts = [0usize; 37];
        for _ in 0..n {
            counts[sample_observation(&uniform, &g, &mut rng).bin_index] += 1;
        }
        let p = 1.0 / 37.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd + 1.0, "count {c}");
        }

        let draw = |seed| {
            let mut rng = StreamRng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_observation(&uniform, &g, &mut rng).bin_index)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }
}
