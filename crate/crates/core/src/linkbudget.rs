//! Downlink budget: Bessel antenna pattern, path loss, received power,
//! thermal noise and per-beam SINR under reuse-3 frequency coloring.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BeamLayout, GroundPosition, SatelliteState, UvCoordinate, UvFrame};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;
pub const BOLTZMANN_J_K: f64 = 1.380_649e-23;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowFadingBucket {
    /// Lower elevation edge of the bucket, degrees.
    pub min_elevation_deg: f64,
    pub sigma_db: f64,
}

/// Radio parameters shared by every link of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkParams {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub reuse: u32,
    pub aperture_m: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub noise_figure_db: f64,
    pub antenna_temp_k: f64,
    pub atmospheric_loss_db: f64,
    pub scintillation_loss_db: f64,
    /// Receiver noise bandwidth; `None` means the positioning signal bandwidth.
    pub noise_bandwidth_hz: Option<f64>,
    /// Elevation-bucketed log-normal shadowing; empty means no shadowing.
    pub shadow_fading: Vec<ShadowFadingBucket>,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            carrier_hz: 2e9,
            bandwidth_hz: 30e6,
            reuse: 3,
            aperture_m: 0.5,
            tx_gain_dbi: 30.0,
            rx_gain_dbi: 0.0,
            noise_figure_db: 7.0,
            antenna_temp_k: 290.0,
            atmospheric_loss_db: 0.1,
            scintillation_loss_db: 2.2,
            noise_bandwidth_hz: None,
            shadow_fading: Vec::new(),
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz > 0.0) {
            return Err(Error::param("link.carrier_hz", "must be > 0"));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::param("link.bandwidth_hz", "must be > 0"));
        }
        if self.reuse < 1 {
            return Err(Error::param("link.reuse", "must be >= 1"));
        }
        if !(self.aperture_m > 0.0) {
            return Err(Error::param("link.aperture_m", "must be > 0"));
        }
        if !(self.antenna_temp_k > 0.0) {
            return Err(Error::param("link.antenna_temp_k", "must be > 0"));
        }
        if let Some(bw) = self.noise_bandwidth_hz {
            if !(bw > 0.0) {
                return Err(Error::param("link.noise_bandwidth_hz", "must be > 0"));
            }
        }
        for b in &self.shadow_fading {
            if !(b.sigma_db >= 0.0) {
                return Err(Error::param("link.shadow_fading.sigma_db", "must be >= 0"));
            }
        }
        Ok(())
    }

    /// Shadow-fading standard deviation for a link at `elevation_deg`.
    pub fn shadow_sigma_db(&self, elevation_deg: f64) -> f64 {
        self.shadow_fading
            .iter()
            .filter(|b| b.min_elevation_deg <= elevation_deg)
            .max_by(|a, b| a.min_elevation_deg.total_cmp(&b.min_elevation_deg))
            .map_or(0.0, |b| b.sigma_db)
    }
}

/// Which beams of the serving satellite count as interferers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterferenceMode {
    /// Active beams sharing the serving beam's reuse color.
    #[default]
    CoChannel,
    /// Every other active beam of the satellite.
    Literal,
}

/// Normalized aperture pattern `(2 J₁(x)/x)²`, `x = 2π f₀ a sinθ / c`.
pub fn antenna_gain(theta_rad: f64, aperture_m: f64, carrier_hz: f64) -> f64 {
    let x = 2.0 * PI * carrier_hz * aperture_m * theta_rad.sin().abs() / SPEED_OF_LIGHT_M_S;
    if x == 0.0 {
        return 1.0;
    }
    let ratio = 2.0 * puruspe::Jn(1, x) / x;
    (ratio * ratio).min(1.0)
}

pub fn antenna_gain_db(theta_rad: f64, aperture_m: f64, carrier_hz: f64) -> f64 {
    10.0 * antenna_gain(theta_rad, aperture_m, carrier_hz).log10()
}

/// sin of the off-boresight angle where the pattern is 3 dB below peak.
pub fn half_power_beam_radius_uv(aperture_m: f64, carrier_hz: f64) -> f64 {
    let pattern = |x: f64| {
        let r = 2.0 * puruspe::Jn(1, x) / x;
        r * r
    };
    // the main lobe is monotone on (0, first zero of J₁)
    let (mut lo, mut hi) = (1e-6, 3.8317);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pattern(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) * SPEED_OF_LIGHT_M_S / (2.0 * PI * carrier_hz * aperture_m)
}

/// Path loss with f in MHz and d in km, plus shadowing and atmospheric terms.
pub fn path_loss_db(distance_km: f64, carrier_hz: f64, shadow_db: f64, atmospheric_db: f64, scintillation_db: f64) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(Error::param("distance_km", "must be > 0"));
    }
    let f_mhz = carrier_hz / 1e6;
    Ok(32.45 + 20.0 * (f_mhz * distance_km).log10() + shadow_db + atmospheric_db + scintillation_db)
}

/// Power received from one beam, dBW.
///
/// The beam power is radiated over its `W/ρ` sub-band, so the EIRP-density
/// term reduces to `P[dBW] + G_T − 10log₁₀ρ`. A switched-off beam returns −∞.
pub fn received_power_dbw(
    beam_power_w: f64,
    tx_gain_dbi: f64,
    pattern_gain: f64,
    rx_gain_dbi: f64,
    path_loss_db: f64,
    reuse: u32,
) -> f64 {
    if beam_power_w <= 0.0 || pattern_gain <= 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * beam_power_w.log10() + tx_gain_dbi - 10.0 * (reuse as f64).log10()
        + 10.0 * pattern_gain.log10()
        + rx_gain_dbi
        - path_loss_db
}

/// Thermal noise `kTB` plus noise figure, dBW.
pub fn noise_power_dbw(noise_figure_db: f64, temperature_k: f64, bandwidth_hz: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0) {
        return Err(Error::param("bandwidth_hz", "must be > 0"));
    }
    Ok(10.0 * (BOLTZMANN_J_K * temperature_k * bandwidth_hz).log10() + noise_figure_db)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Reuse-3 coloring of a hexagonal lattice: color = (q − r) mod 3 in axial coordinates.
pub fn reuse3_coloring(layout: &BeamLayout) -> Vec<u8> {
    layout
        .axial
        .iter()
        .map(|&(q, r)| (q - r).rem_euclid(3) as u8)
        .collect()
}

/// Per-beam transmit powers, watts, indexed `[satellite][beam]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerAllocation {
    pub watts: Vec<Vec<f64>>,
}

impl PowerAllocation {
    pub fn new(watts: Vec<Vec<f64>>) -> Self {
        Self { watts }
    }

    pub fn total(&self, sat: usize) -> f64 {
        self.watts[sat].iter().sum()
    }

    /// Checks `0 ≤ P ≤ per_beam` and the per-satellite sum, with slack `tol` (relative).
    pub fn satisfies_budgets(&self, per_beam_w: f64, per_sat_w: f64, tol: f64) -> bool {
        self.watts.iter().all(|beams| {
            beams.iter().all(|&p| p >= 0.0 && p <= per_beam_w * (1.0 + tol))
                && beams.iter().sum::<f64>() <= per_sat_w * (1.0 + tol)
        })
    }
}

/// Links of one user towards every beam of one satellite.
#[derive(Debug, Clone)]
pub struct UserSatLinks {
    pub user: usize,
    pub sat: usize,
    pub distance_km: f64,
    pub elevation_deg: f64,
    pub shadow_db: f64,
    pub path_loss_db: f64,
    /// Off-boresight angle per beam, radians.
    pub theta_rad: Vec<f64>,
    /// Received watts per transmitted watt, per beam.
    pub coupling: Vec<f64>,
}

impl UserSatLinks {
    /// SINR of every beam under `mode`; zero for beams without power.
    pub fn sinr_all(&self, powers: &[f64], colors: &[u8], mode: InterferenceMode, noise_w: f64) -> Vec<f64> {
        let rx: Vec<f64> = self.coupling.iter().zip(powers).map(|(g, p)| g * p).collect();
        let mut by_color = [0.0f64; 256];
        let mut total = 0.0;
        for (r, &c) in rx.iter().zip(colors) {
            by_color[c as usize] += r;
            total += r;
        }
        rx.iter()
            .zip(colors)
            .map(|(&own, &c)| {
                if own <= 0.0 {
                    return 0.0;
                }
                let pool = match mode {
                    InterferenceMode::CoChannel => by_color[c as usize],
                    InterferenceMode::Literal => total,
                };
                own / ((pool - own).max(0.0) + noise_w)
            })
            .collect()
    }

    /// Interference-free SNR of one beam.
    pub fn snr(&self, beam: usize, power_w: f64, noise_w: f64) -> f64 {
        self.coupling[beam] * power_w / noise_w
    }
}

/// Link geometry and coupling for every (user, satellite) pair of interest.
#[derive(Debug, Clone)]
pub struct LinkTable {
    pub links: Vec<UserSatLinks>,
    pub noise_dbw: f64,
    pub noise_w: f64,
    index: HashMap<(usize, usize), usize>,
}

impl LinkTable {
    /// Builds the table for the listed `(user, sat)` pairs.
    ///
    /// `beams[sat]` holds the UV centers of satellite `sat`'s beams. Shadow
    /// fading is drawn from `rng` once per pair, in pair order, and only for
    /// buckets with positive sigma.
    pub fn build<R: Rng + ?Sized>(
        params: &LinkParams,
        noise_bandwidth_hz: f64,
        sats: &[SatelliteState],
        beams: &[Vec<UvCoordinate>],
        users: &[GroundPosition],
        pairs: &[(usize, usize)],
        rng: &mut R,
    ) -> Result<Self> {
        let noise_dbw = noise_power_dbw(params.noise_figure_db, params.antenna_temp_k, noise_bandwidth_hz)?;
        let fixed_gain_db = params.tx_gain_dbi - 10.0 * (params.reuse as f64).log10() + params.rx_gain_dbi;
        let mut links = Vec::with_capacity(pairs.len());
        let mut index = HashMap::with_capacity(pairs.len());
        for &(user, sat) in pairs {
            let s = sats
                .get(sat)
                .ok_or_else(|| Error::Lookup(format!("satellite {sat} not in scenario")))?;
            let ue = users
                .get(user)
                .ok_or_else(|| Error::Lookup(format!("user {user} not in scenario")))?;
            let elevation_deg = geometry::elevation_angle(s, ue);
            if elevation_deg < -1e-9 {
                return Err(Error::NotVisible {
                    sat_id: s.sat_id,
                    elevation_deg,
                });
            }
            let distance_km = geometry::slant_distance(s, ue);
            let sigma = params.shadow_sigma_db(elevation_deg);
            let shadow_db = if sigma > 0.0 {
                Normal::new(0.0, sigma)
                    .map_err(|e| Error::param("shadow sigma", e.to_string()))?
                    .sample(rng)
            } else {
                0.0
            };
            let path_loss_db = path_loss_db(
                distance_km,
                params.carrier_hz,
                shadow_db,
                params.atmospheric_loss_db,
                params.scintillation_loss_db,
            )?;
            let frame = UvFrame::of(s);
            let los: Vector3<f64> = ue.ecef - s.position;
            let theta_rad: Vec<f64> = beams[sat]
                .iter()
                .map(|c| geometry::angle_between(&frame.to_direction(c), &los))
                .collect();
            let coupling = theta_rad
                .iter()
                .map(|&t| {
                    let g = antenna_gain(t, params.aperture_m, params.carrier_hz);
                    g * db_to_linear(fixed_gain_db - path_loss_db)
                })
                .collect();
            index.insert((user, sat), links.len());
            links.push(UserSatLinks {
                user,
                sat,
                distance_km,
                elevation_deg,
                shadow_db,
                path_loss_db,
                theta_rad,
                coupling,
            });
        }
        Ok(Self {
            links,
            noise_dbw,
            noise_w: db_to_linear(noise_dbw),
            index,
        })
    }

    pub fn get(&self, user: usize, sat: usize) -> Result<&UserSatLinks> {
        self.index
            .get(&(user, sat))
            .map(|&i| &self.links[i])
            .ok_or_else(|| Error::Lookup(format!("no link for user {user}, satellite {sat}")))
    }

    /// SINR (linear) of user `user` on beam `beam` of satellite `sat`.
    pub fn sinr(
        &self,
        user: usize,
        sat: usize,
        beam: usize,
        powers: &PowerAllocation,
        colors: &[Vec<u8>],
        mode: InterferenceMode,
    ) -> Result<f64> {
        let link = self.get(user, sat)?;
        let p = powers
            .watts
            .get(sat)
            .ok_or_else(|| Error::Lookup(format!("no powers for satellite {sat}")))?;
        if beam >= link.coupling.len() || beam >= p.len() {
            return Err(Error::Lookup(format!("satellite {sat} has no beam {beam}")));
        }
        Ok(link.sinr_all(p, &colors[sat], mode, self.noise_w)[beam])
    }

    /// Writes one row per (user, satellite, beam) for debugging.
    pub fn write_csv(
        &self,
        path: &Path,
        powers: &PowerAllocation,
        colors: &[Vec<u8>],
        mode: InterferenceMode,
    ) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["user", "sat", "beam", "theta_deg", "dist_km", "rx_dBW", "sinr_dB"])
            .map_err(csv_err)?;
        for link in &self.links {
            let p = &powers.watts[link.sat];
            let sinr = link.sinr_all(p, &colors[link.sat], mode, self.noise_w);
            for (b, (&theta, &g)) in link.theta_rad.iter().zip(&link.coupling).enumerate() {
                let rx = g * p[b];
                let rx_dbw = if rx > 0.0 { linear_to_db(rx) } else { f64::NEG_INFINITY };
                let sinr_db = if sinr[b] > 0.0 { linear_to_db(sinr[b]) } else { f64::NEG_INFINITY };
                w.write_record(&[
                    link.user.to_string(),
                    link.sat.to_string(),
                    b.to_string(),
                    format!("{:.6}", theta.to_degrees()),
                    format!("{:.6}", link.distance_km),
                    format!("{rx_dbw:.6}"),
                    format!("{sinr_db:.6}"),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
