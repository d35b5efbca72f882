//! Constellation construction, circular-orbit propagation, and the
//! geodetic / ECEF / UV coordinate transforms used for beam steering.
//!
//! All positions are ECEF kilometres on a spherical Earth. The UV frame of a
//! satellite has its third axis along the nadir direction, its first axis
//! along the velocity projected onto the plane perpendicular to the
//! satellite-Earth line, and its second axis completing a right-handed frame.
//! A unit direction `d` leaving the satellite maps to `(u, v) = (d·x, d·y)`,
//! i.e. `(sinθ cosφ, sinθ sinφ)` with θ measured from nadir.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkbudget;

/// Standard gravitational parameter of the Earth, km³/s².
pub const MU_EARTH_KM3_S2: f64 = 398_600.4418;
/// Mean spherical Earth radius, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Sidereal rotation rate, rad/s.
pub const EARTH_ROTATION_RAD_S: f64 = 7.292_115_9e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarthModel {
    pub radius_km: f64,
    pub rotation_rate_rad_s: f64,
}

impl Default for EarthModel {
    fn default() -> Self {
        Self {
            radius_km: EARTH_RADIUS_KM,
            rotation_rate_rad_s: EARTH_ROTATION_RAD_S,
        }
    }
}

impl EarthModel {
    /// Earth model without rotation, used for periodicity checks.
    pub fn inertial() -> Self {
        Self {
            rotation_rate_rad_s: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_km > 0.0) {
            return Err(Error::param("earth.radius_km", "must be > 0"));
        }
        if !(self.rotation_rate_rad_s >= 0.0) {
            return Err(Error::param("earth.rotation_rate_rad_s", "must be >= 0"));
        }
        Ok(())
    }
}

/// Walker-style constellation description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstellationParams {
    pub num_planes: usize,
    pub sats_per_plane: usize,
    pub inclination_deg: f64,
    pub altitude_km: f64,
    pub phasing_factor: usize,
    pub raan_spread_deg: f64,
}

impl Default for ConstellationParams {
    fn default() -> Self {
        Self {
            num_planes: 40,
            sats_per_plane: 60,
            inclination_deg: 87.5,
            altitude_km: 1200.0,
            phasing_factor: 1,
            raan_spread_deg: 360.0,
        }
    }
}

impl ConstellationParams {
    pub fn total(&self) -> usize {
        self.num_planes * self.sats_per_plane
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_planes < 1 {
            return Err(Error::param("constellation.num_planes", "must be >= 1"));
        }
        if self.sats_per_plane < 1 {
            return Err(Error::param("constellation.sats_per_plane", "must be >= 1"));
        }
        if !(0.0..=180.0).contains(&self.inclination_deg) {
            return Err(Error::param(
                "constellation.inclination_deg",
                "must lie in [0, 180]",
            ));
        }
        if !(self.altitude_km > 0.0) {
            return Err(Error::param("constellation.altitude_km", "must be > 0"));
        }
        if !(self.raan_spread_deg >= 0.0 && self.raan_spread_deg <= 360.0) {
            return Err(Error::param(
                "constellation.raan_spread_deg",
                "must lie in [0, 360]",
            ));
        }
        Ok(())
    }
}

/// Circular-orbit elements of one satellite at epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalElements {
    pub sat_id: usize,
    pub plane: usize,
    pub slot: usize,
    pub raan_rad: f64,
    pub inclination_rad: f64,
    /// Argument of latitude at epoch.
    pub arg_latitude_rad: f64,
    pub radius_km: f64,
}

#[derive(Debug, Clone)]
pub struct Constellation {
    pub params: ConstellationParams,
    pub earth: EarthModel,
    pub elements: Vec<OrbitalElements>,
}

/// Lays out `num_planes × sats_per_plane` circular orbits.
///
/// Plane `p` sits at RAAN `p·raan_spread/num_planes`; slot `s` at argument of
/// latitude `s·360/sats_per_plane + p·F·360/T` where `F` is the phasing factor
/// and `T` the total satellite count.
pub fn build_constellation(params: ConstellationParams, earth: EarthModel) -> Result<Constellation> {
    params.validate()?;
    earth.validate()?;
    let total = params.total() as f64;
    let radius_km = earth.radius_km + params.altitude_km;
    let inclination_rad = params.inclination_deg.to_radians();
    let mut elements = Vec::with_capacity(params.total());
    for plane in 0..params.num_planes {
        let raan_deg = plane as f64 * params.raan_spread_deg / params.num_planes as f64;
        let phase_deg = plane as f64 * params.phasing_factor as f64 * 360.0 / total;
        for slot in 0..params.sats_per_plane {
            let anomaly_deg = slot as f64 * 360.0 / params.sats_per_plane as f64 + phase_deg;
            elements.push(OrbitalElements {
                sat_id: elements.len(),
                plane,
                slot,
                raan_rad: raan_deg.to_radians(),
                inclination_rad,
                arg_latitude_rad: anomaly_deg.to_radians(),
                radius_km,
            });
        }
    }
    Ok(Constellation {
        params,
        earth,
        elements,
    })
}

/// Kepler period of a circular orbit of the given radius, seconds.
pub fn orbital_period_s(radius_km: f64) -> f64 {
    2.0 * PI * (radius_km.powi(3) / MU_EARTH_KM3_S2).sqrt()
}

/// One satellite at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteState {
    pub sat_id: usize,
    /// ECEF position, km.
    pub position: Vector3<f64>,
    /// Inertial velocity expressed in ECEF axes, km/s.
    pub velocity: Vector3<f64>,
    pub nadir_lat_deg: f64,
    pub nadir_lon_deg: f64,
}

impl SatelliteState {
    /// Builds a state from position and velocity, deriving the nadir point.
    pub fn new(sat_id: usize, position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        let (lat, lon) = lat_lon_deg(&position);
        Self {
            sat_id,
            position,
            velocity,
            nadir_lat_deg: lat,
            nadir_lon_deg: lon,
        }
    }

    /// Sub-satellite point on the Earth's surface.
    pub fn nadir_point(&self, earth: &EarthModel) -> GroundPosition {
        GroundPosition::from_ecef(self.position.normalize() * earth.radius_km)
    }
}

impl Constellation {
    pub fn period_s(&self) -> f64 {
        orbital_period_s(self.earth.radius_km + self.params.altitude_km)
    }

    /// Positions at snapshot `index` of `count` equal slices of one orbital period.
    pub fn propagate(&self, index: usize, count: usize) -> Result<Vec<SatelliteState>> {
        if count == 0 {
            return Err(Error::param("snapshots", "must be >= 1"));
        }
        if index > count {
            return Err(Error::param(
                "snapshot_index",
                format!("{index} exceeds snapshot count {count}"),
            ));
        }
        let fraction = index as f64 / count as f64;
        let elapsed = fraction * self.period_s();
        let earth_angle = self.earth.rotation_rate_rad_s * elapsed;
        let (se, ce) = earth_angle.sin_cos();
        let to_ecef = |v: Vector3<f64>| Vector3::new(ce * v.x + se * v.y, -se * v.x + ce * v.y, v.z);

        Ok(self
            .elements
            .iter()
            .map(|el| {
                let n = 2.0 * PI / orbital_period_s(el.radius_km);
                let u = el.arg_latitude_rad + 2.0 * PI * fraction;
                let (su, cu) = u.sin_cos();
                let (so, co) = el.raan_rad.sin_cos();
                let (si, ci) = el.inclination_rad.sin_cos();
                let r = el.radius_km;
                let pos = Vector3::new(
                    r * (co * cu - so * su * ci),
                    r * (so * cu + co * su * ci),
                    r * su * si,
                );
                let vel = Vector3::new(
                    r * n * (-co * su - so * cu * ci),
                    r * n * (-so * su + co * cu * ci),
                    r * n * cu * si,
                );
                SatelliteState::new(el.sat_id, to_ecef(pos), to_ecef(vel))
            })
            .collect())
    }
}

/// A user on the Earth's surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPosition {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub ecef: Vector3<f64>,
}

impl GroundPosition {
    pub fn from_geodetic(lat_deg: f64, lon_deg: f64, earth: &EarthModel) -> Self {
        let (slat, clat) = lat_deg.to_radians().sin_cos();
        let (slon, clon) = lon_deg.to_radians().sin_cos();
        let ecef = earth.radius_km * Vector3::new(clat * clon, clat * slon, slat);
        Self {
            lat_deg,
            lon_deg,
            ecef,
        }
    }

    pub fn from_ecef(ecef: Vector3<f64>) -> Self {
        let (lat_deg, lon_deg) = lat_lon_deg(&ecef);
        Self {
            lat_deg,
            lon_deg,
            ecef,
        }
    }
}

fn lat_lon_deg(p: &Vector3<f64>) -> (f64, f64) {
    let r = p.norm();
    ((p.z / r).asin().to_degrees(), p.y.atan2(p.x).to_degrees())
}

pub fn slant_distance(sat: &SatelliteState, ue: &GroundPosition) -> f64 {
    (sat.position - ue.ecef).norm()
}

/// Elevation of the satellite above the local horizon at `ue`, degrees.
pub fn elevation_angle(sat: &SatelliteState, ue: &GroundPosition) -> f64 {
    let up = ue.ecef.normalize();
    let los = (sat.position - ue.ecef).normalize();
    up.dot(&los).clamp(-1.0, 1.0).asin().to_degrees()
}

/// A point of the UV plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UvCoordinate {
    pub u: f64,
    pub v: f64,
}

impl UvCoordinate {
    pub const ORIGIN: UvCoordinate = UvCoordinate { u: 0.0, v: 0.0 };

    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn radius_sq(&self) -> f64 {
        self.u * self.u + self.v * self.v
    }

    pub fn distance(&self, other: &UvCoordinate) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Orthonormal steering frame of a satellite: along-track, cross-track, nadir.
#[derive(Debug, Clone, Copy)]
pub struct UvFrame {
    pub along: Vector3<f64>,
    pub cross: Vector3<f64>,
    pub nadir: Vector3<f64>,
}

impl UvFrame {
    pub fn of(sat: &SatelliteState) -> Self {
        let nadir = -sat.position.normalize();
        // velocity projected onto the plane perpendicular to the satellite-Earth line
        let radial = -nadir;
        let mut along = sat.velocity - radial * sat.velocity.dot(&radial);
        if along.norm() < 1e-12 {
            // stationary or radial velocity: fall back to the ECEF z axis projection
            along = Vector3::z() - radial * radial.z;
            if along.norm() < 1e-12 {
                along = Vector3::x() - radial * radial.x;
            }
        }
        let along = along.normalize();
        let cross = nadir.cross(&along);
        Self {
            along,
            cross,
            nadir,
        }
    }

    pub fn to_uv(&self, direction: &Vector3<f64>) -> UvCoordinate {
        let d = direction.normalize();
        UvCoordinate::new(d.dot(&self.along), d.dot(&self.cross))
    }

    /// Unit direction of a UV point on the Earth-facing hemisphere.
    pub fn to_direction(&self, uv: &UvCoordinate) -> Vector3<f64> {
        let w = (1.0 - uv.radius_sq()).max(0.0).sqrt();
        self.along * uv.u + self.cross * uv.v + self.nadir * w
    }
}

fn check_visible(sat: &SatelliteState, target: &GroundPosition) -> Result<()> {
    let elevation_deg = elevation_angle(sat, target);
    // the horizon itself is admitted; tangency is limited by rounding only
    if elevation_deg < -1e-9 {
        return Err(Error::NotVisible {
            sat_id: sat.sat_id,
            elevation_deg,
        });
    }
    Ok(())
}

/// UV coordinates of the direction from `sat` to `target`.
pub fn direction_to_uv(sat: &SatelliteState, target: &GroundPosition) -> Result<UvCoordinate> {
    check_visible(sat, target)?;
    Ok(UvFrame::of(sat).to_uv(&(target.ecef - sat.position)))
}

pub fn uv_to_direction(sat: &SatelliteState, uv: &UvCoordinate) -> Vector3<f64> {
    UvFrame::of(sat).to_direction(uv)
}

/// Angle between a beam boresight (given by its UV center) and the user, radians.
pub fn off_boresight_angle(
    sat: &SatelliteState,
    beam_center: &UvCoordinate,
    ue: &GroundPosition,
) -> Result<f64> {
    check_visible(sat, ue)?;
    let frame = UvFrame::of(sat);
    Ok(angle_between(&frame.to_direction(beam_center), &(ue.ecef - sat.position)))
}

pub(crate) fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Hexagonal beam layout in the UV plane.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamLayout {
    pub centers: Vec<UvCoordinate>,
    pub beam_radius_uv: f64,
    pub colors: Vec<u8>,
    /// Axial lattice coordinates of each beam, kept through translations.
    pub axial: Vec<(i32, i32)>,
}

impl BeamLayout {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Index pairs of lattice neighbours.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        const STEPS: [(i32, i32); 3] = [(1, 0), (0, 1), (1, -1)];
        let mut pairs = Vec::new();
        for (i, &(q, r)) in self.axial.iter().enumerate() {
            for (dq, dr) in STEPS {
                if let Some(j) = self.axial.iter().position(|&c| c == (q + dq, r + dr)) {
                    pairs.push((i.min(j), i.max(j)));
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }
}

/// Ring count `r` with `3r(r+1)+1 == count`, if `count` is centered hexagonal.
pub fn hex_rings(count: usize) -> Option<usize> {
    let (mut rings, mut total) = (0, 1);
    while total < count {
        rings += 1;
        total += 6 * rings;
    }
    (total == count).then_some(rings)
}

const AXIAL_DIRECTIONS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

/// Centered hexagonal layout of `count` beams spaced `2·beam_radius_uv` apart,
/// colored for reuse-3.
pub fn hex_beam_layout(count: usize, beam_radius_uv: f64) -> Result<BeamLayout> {
    let rings = hex_rings(count).ok_or_else(|| {
        Error::param(
            "coverage_beams",
            format!("{count} is not a centered hexagonal number (1, 7, 19, 37, 61, ...)"),
        )
    })?;
    if !(beam_radius_uv > 0.0) {
        return Err(Error::param("beam_radius_uv", "must be > 0"));
    }
    let mut axial = vec![(0, 0)];
    for k in 1..=rings as i32 {
        let (dq, dr) = AXIAL_DIRECTIONS[4];
        let mut cell = (dq * k, dr * k);
        for &(sq, sr) in &AXIAL_DIRECTIONS {
            for _ in 0..k {
                axial.push(cell);
                cell = (cell.0 + sq, cell.1 + sr);
            }
        }
    }
    let spacing = 2.0 * beam_radius_uv;
    let half_sqrt3 = 3f64.sqrt() / 2.0;
    let centers = axial
        .iter()
        .map(|&(q, r)| {
            UvCoordinate::new(
                spacing * (q as f64 + r as f64 / 2.0),
                spacing * half_sqrt3 * r as f64,
            )
        })
        .collect();
    let mut layout = BeamLayout {
        centers,
        beam_radius_uv,
        colors: Vec::new(),
        axial,
    };
    layout.colors = linkbudget::reuse3_coloring(&layout);
    Ok(layout)
}

/// Shifts every beam center by `offset`; fails if any center leaves the UV disk.
pub fn translate_layout(layout: &BeamLayout, offset: UvCoordinate) -> Result<BeamLayout> {
    let mut out = layout.clone();
    for (beam, c) in out.centers.iter_mut().enumerate() {
        *c = UvCoordinate::new(c.u + offset.u, c.v + offset.v);
        let radius_sq = c.radius_sq();
        if radius_sq > 1.0 {
            return Err(Error::Horizon { beam, radius_sq });
        }
    }
    Ok(out)
}

/// Like [`translate_layout`] but drops beams that leave the disk instead of failing.
///
/// Returns the kept layout and, for each kept beam, its index in `layout`.
pub fn translate_layout_clipped(layout: &BeamLayout, offset: UvCoordinate) -> (BeamLayout, Vec<usize>) {
    let mut kept = Vec::new();
    let mut out = BeamLayout {
        centers: Vec::new(),
        beam_radius_uv: layout.beam_radius_uv,
        colors: Vec::new(),
        axial: Vec::new(),
    };
    for (i, c) in layout.centers.iter().enumerate() {
        let moved = UvCoordinate::new(c.u + offset.u, c.v + offset.v);
        if moved.radius_sq() <= 1.0 {
            out.centers.push(moved);
            out.colors.push(layout.colors[i]);
            out.axial.push(layout.axial[i]);
            kept.push(i);
        }
    }
    (out, kept)
}
