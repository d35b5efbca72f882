//! Beam hopping control: positioning-satellite selection, max-SINR
//! association, Voronoi beam activation and SDP power allocation, plus the
//! two equal-power baselines.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crlb::{self, SignalSpec, ToaStats};
use crate::error::{Error, Result};
use crate::geometry::{self, GroundPosition, SatelliteState, UvCoordinate};
use crate::linkbudget::{self, InterferenceMode, LinkParams, LinkTable, PowerAllocation};
use crate::sdp::{self, AnchorTerm, PowerSdpInput, SdpStatus, SolverOptions};

const SPEED_OF_LIGHT_M_S: f64 = linkbudget::SPEED_OF_LIGHT_M_S;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Tmcb,
    UvbhsEpa,
    Fbhca,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Tmcb, Scheme::UvbhsEpa, Scheme::Fbhca];

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Tmcb => "TMCB",
            Scheme::UvbhsEpa => "UVBHS-EPA",
            Scheme::Fbhca => "FBHCA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoConfig {
    /// Outer iterations `M`.
    pub iterations: usize,
    /// Positioning satellites per user.
    pub positioning_sats: usize,
    pub per_beam_w: f64,
    pub per_sat_w: f64,
    /// Beams in one hexagonal layout.
    pub coverage_beams: usize,
    /// Active beams allowed per satellite.
    pub active_beams: usize,
    /// Beam radius in the UV plane. Neighbouring layout centers sit `2r` apart.
    /// Set it to `linkbudget::half_power_beam_radius_uv` for 3 dB contiguous beams.
    pub beam_radius_uv: f64,
    pub interference: InterferenceMode,
    pub min_elevation_deg: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            positioning_sats: 4,
            per_beam_w: 110.0,
            per_sat_w: 6100.0,
            coverage_beams: 61,
            active_beams: 61,
            beam_radius_uv: 0.035,
            interference: InterferenceMode::CoChannel,
            min_elevation_deg: 0.0,
            solver_tol: 1e-7,
            solver_max_iter: 200,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::param("algo.iterations", "must be >= 1"));
        }
        if self.positioning_sats < 4 {
            return Err(Error::param("algo.positioning_sats", "TDOA in 3D needs at least 4"));
        }
        if !(self.per_beam_w > 0.0) {
            return Err(Error::param("algo.per_beam_w", "must be > 0"));
        }
        if !(self.per_sat_w > 0.0) {
            return Err(Error::param("algo.per_sat_w", "must be > 0"));
        }
        if geometry::hex_rings(self.coverage_beams).is_none() {
            return Err(Error::param(
                "algo.coverage_beams",
                format!("{} is not a centered hexagonal number", self.coverage_beams),
            ));
        }
        if self.active_beams == 0 {
            return Err(Error::param("algo.active_beams", "must be >= 1"));
        }
        if !(self.beam_radius_uv > 0.0 && self.beam_radius_uv < 1.0) {
            return Err(Error::param("algo.beam_radius_uv", "must lie in (0, 1)"));
        }
        if !(-90.0..90.0).contains(&self.min_elevation_deg) {
            return Err(Error::param("algo.min_elevation_deg", "must lie in [-90, 90)"));
        }
        if !(self.solver_tol > 0.0) || self.solver_max_iter == 0 {
            return Err(Error::param("algo.solver_tol", "tolerance and iteration budget must be positive"));
        }
        Ok(())
    }

}

/// One snapshot: satellite states, users and the link model.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub earth: geometry::EarthModel,
    pub sats: Vec<SatelliteState>,
    pub users: Vec<GroundPosition>,
    pub link: LinkParams,
    pub signal: SignalSpec,
    /// Seeds the shadow-fading draws.
    pub seed: u64,
}

impl Scenario {
    pub fn noise_bandwidth_hz(&self) -> f64 {
        self.link.noise_bandwidth_hz.unwrap_or_else(|| self.signal.bandwidth_hz())
    }
}

/// The `n_pos` highest-elevation satellites above `min_elevation_deg`, ties by id.
pub fn select_positioning_sats(
    user: usize,
    ue: &GroundPosition,
    sats: &[SatelliteState],
    n_pos: usize,
    min_elevation_deg: f64,
) -> Result<Vec<usize>> {
    let mut visible: Vec<(f64, usize, usize)> = sats
        .iter()
        .enumerate()
        .map(|(i, s)| (geometry::elevation_angle(s, ue), s.sat_id, i))
        .filter(|&(e, _, _)| e >= min_elevation_deg.max(0.0) - 1e-9)
        .collect();
    if visible.len() < n_pos {
        return Err(Error::Coverage {
            user,
            visible: visible.len(),
            needed: n_pos,
        });
    }
    visible.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(visible.into_iter().take(n_pos).map(|(_, _, i)| i).collect())
}

/// Beams carried by one satellite: one or more translated copies of the base layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSet {
    pub centers: Vec<UvCoordinate>,
    pub colors: Vec<u8>,
    /// Local index of the satellite whose nadir each beam's layout is centered on.
    pub target: Vec<usize>,
}

impl BeamSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Users, satellites and beams of one scheme on one snapshot.
///
/// Users and satellites are renumbered locally: `users[u]` is the scenario
/// index of local user `u`, `sats[k]` that of local satellite `k`.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub users: Vec<usize>,
    pub excluded: Vec<usize>,
    pub sats: Vec<usize>,
    /// Positioning satellites per user (local indices), highest elevation first.
    pub anchors: Vec<Vec<usize>>,
    pub beams: Vec<BeamSet>,
    /// Keyed by (local user, local satellite).
    pub links: LinkTable,
    /// UV position of each user in the frame of each of its anchors.
    pub user_uv: Vec<Vec<UvCoordinate>>,
}

impl Deployment {
    pub fn colors(&self) -> Vec<Vec<u8>> {
        self.beams.iter().map(|b| b.colors.clone()).collect()
    }

    /// `(local user, anchor rank)` pairs that use satellite `k`.
    pub fn users_of(&self, k: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, anchors) in self.anchors.iter().enumerate() {
            if let Some(rank) = anchors.iter().position(|&a| a == k) {
                out.push((u, rank));
            }
        }
        out
    }
}

/// Selects anchors and lays out beams.
///
/// With `cooperative`, every satellite carries one layout per distinct target
/// among the users it serves, centered on that target's nadir; the target of
/// a user is its highest-elevation satellite. Otherwise every satellite keeps
/// its nadir layout.
pub fn deploy(scenario: &Scenario, cfg: &AlgoConfig, cooperative: bool) -> Result<Deployment> {
    cfg.validate()?;
    scenario.link.validate()?;
    scenario.signal.validate()?;
    let base = geometry::hex_beam_layout(cfg.coverage_beams, cfg.beam_radius_uv)?;

    let mut users = Vec::new();
    let mut excluded = Vec::new();
    let mut selected = Vec::new();
    for (j, ue) in scenario.users.iter().enumerate() {
        match select_positioning_sats(j, ue, &scenario.sats, cfg.positioning_sats, cfg.min_elevation_deg) {
            Ok(list) => {
                users.push(j);
                selected.push(list);
            }
            Err(Error::Coverage { .. }) => excluded.push(j),
            Err(e) => return Err(e),
        }
    }
    let mut sats: Vec<usize> = selected.iter().flatten().copied().collect();
    sats.sort_unstable();
    sats.dedup();
    let local = |i: usize| sats.binary_search(&i).expect("selected satellite is involved");
    let anchors: Vec<Vec<usize>> = selected.iter().map(|l| l.iter().map(|&i| local(i)).collect()).collect();

    let states: Vec<SatelliteState> = sats.iter().map(|&i| scenario.sats[i].clone()).collect();
    let mut beams = Vec::with_capacity(sats.len());
    for k in 0..sats.len() {
        let mut targets: Vec<usize> = if cooperative {
            anchors.iter().filter(|a| a.contains(&k)).map(|a| a[0]).collect()
        } else {
            vec![k]
        };
        targets.sort_unstable();
        targets.dedup();
        let mut set = BeamSet {
            centers: Vec::new(),
            colors: Vec::new(),
            target: Vec::new(),
        };
        for t in targets {
            let layout = if t == k {
                base.clone()
            } else {
                let nadir = states[t].nadir_point(&scenario.earth);
                match geometry::direction_to_uv(&states[k], &nadir) {
                    Ok(offset) => geometry::translate_layout_clipped(&base, offset).0,
                    Err(Error::NotVisible { .. }) => continue,
                    Err(e) => return Err(e),
                }
            };
            set.target.extend(std::iter::repeat(t).take(layout.len()));
            set.centers.extend(layout.centers);
            set.colors.extend(layout.colors);
        }
        beams.push(set);
    }

    let ues: Vec<GroundPosition> = users.iter().map(|&j| scenario.users[j].clone()).collect();
    let pairs: Vec<(usize, usize)> = anchors
        .iter()
        .enumerate()
        .flat_map(|(u, a)| a.iter().map(move |&k| (u, k)))
        .collect();
    let centers: Vec<Vec<UvCoordinate>> = beams.iter().map(|b| b.centers.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let links = LinkTable::build(
        &scenario.link,
        scenario.noise_bandwidth_hz(),
        &states,
        &centers,
        &ues,
        &pairs,
        &mut rng,
    )?;
    let user_uv = anchors
        .iter()
        .zip(&ues)
        .map(|(a, ue)| a.iter().map(|&k| geometry::direction_to_uv(&states[k], ue)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(Deployment {
        users,
        excluded,
        sats,
        anchors,
        beams,
        links,
        user_uv,
    })
}

/// Nearest site in Euclidean UV distance; ties go to the lower site index.
pub fn voronoi_assign(centers: &[UvCoordinate], users: &[UvCoordinate]) -> Vec<usize> {
    users
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, c) in centers.iter().enumerate() {
                let d = (p.u - c.u).powi(2) + (p.v - c.v).powi(2);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Active cells of one satellite and the (possibly reassigned) cell of each user.
#[derive(Debug, Clone, PartialEq)]
pub struct CellActivation {
    pub active: Vec<bool>,
    pub assignment: Vec<usize>,
}

/// Activates every occupied cell, keeping the `budget` most populated ones.
///
/// Users of dropped cells move to their nearest active cell.
pub fn bh_design(
    centers: &[UvCoordinate],
    users: &[UvCoordinate],
    assignment: &[usize],
    budget: usize,
) -> Result<CellActivation> {
    if budget == 0 {
        return Err(Error::param("active beam budget", "must be >= 1"));
    }
    let mut population = vec![0usize; centers.len()];
    for &a in assignment {
        population[a] += 1;
    }
    let mut occupied: Vec<usize> = (0..centers.len()).filter(|&i| population[i] > 0).collect();
    let mut active = vec![false; centers.len()];
    if occupied.len() <= budget {
        for i in occupied {
            active[i] = true;
        }
        return Ok(CellActivation {
            active,
            assignment: assignment.to_vec(),
        });
    }
    occupied.sort_by(|&a, &b| population[b].cmp(&population[a]).then(a.cmp(&b)));
    for &i in &occupied[..budget] {
        active[i] = true;
    }
    let kept: Vec<usize> = (0..centers.len()).filter(|&i| active[i]).collect();
    let kept_centers: Vec<UvCoordinate> = kept.iter().map(|&i| centers[i]).collect();
    let reassigned = users
        .iter()
        .zip(assignment)
        .map(|(p, &a)| {
            if active[a] {
                a
            } else {
                kept[voronoi_assign(&kept_centers, std::slice::from_ref(p))[0]]
            }
        })
        .collect();
    Ok(CellActivation {
        active,
        assignment: reassigned,
    })
}

/// `gamma[k][b]` for every local satellite and beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamActivation {
    pub gamma: Vec<Vec<bool>>,
}

impl BeamActivation {
    pub fn all(dep: &Deployment) -> Self {
        Self {
            gamma: dep.beams.iter().map(|b| vec![true; b.len()]).collect(),
        }
    }

    pub fn active_count(&self, k: usize) -> usize {
        self.gamma[k].iter().filter(|&&g| g).count()
    }
}

/// Voronoi activation on every satellite from the positions of its users.
pub fn design_activation(dep: &Deployment, budget: usize) -> Result<BeamActivation> {
    let mut gamma = Vec::with_capacity(dep.beams.len());
    for (k, set) in dep.beams.iter().enumerate() {
        let users: Vec<UvCoordinate> = dep.users_of(k).iter().map(|&(u, r)| dep.user_uv[u][r]).collect();
        if set.is_empty() || users.is_empty() {
            gamma.push(vec![false; set.len()]);
            continue;
        }
        let assignment = voronoi_assign(&set.centers, &users);
        gamma.push(bh_design(&set.centers, &users, &assignment, budget)?.active);
    }
    Ok(BeamActivation { gamma })
}

/// `delta[u][rank]`: serving beam of local user `u` on its `rank`-th anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMap {
    pub delta: Vec<Vec<Option<usize>>>,
}

/// Index of the largest positive SINR, lowest index on ties.
pub fn best_beam(sinr: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (b, &s) in sinr.iter().enumerate() {
        if s > 0.0 && best.map_or(true, |(_, v)| s > v) {
            best = Some((b, s));
        }
    }
    best.map(|(b, _)| b)
}

/// Max-SINR association of every user on every anchor under `power`.
pub fn associate_users(dep: &Deployment, power: &PowerAllocation, mode: InterferenceMode) -> Result<AssociationMap> {
    let mut delta = Vec::with_capacity(dep.anchors.len());
    for (u, anchors) in dep.anchors.iter().enumerate() {
        let mut row = Vec::with_capacity(anchors.len());
        for &k in anchors {
            let link = dep.links.get(u, k)?;
            let sinr = link.sinr_all(&power.watts[k], &dep.beams[k].colors, mode, dep.links.noise_w);
            let b = best_beam(&sinr).ok_or_else(|| {
                Error::Association(format!(
                    "user {} has no powered beam on satellite {}",
                    dep.users[u], dep.sats[k]
                ))
            })?;
            row.push(Some(b));
        }
        delta.push(row);
    }
    Ok(AssociationMap { delta })
}

/// Powers restricted to active beams.
fn masked(power: &PowerAllocation, gamma: &BeamActivation) -> PowerAllocation {
    PowerAllocation::new(
        power
            .watts
            .iter()
            .zip(&gamma.gamma)
            .map(|(p, g)| p.iter().zip(g).map(|(&w, &on)| if on { w } else { 0.0 }).collect())
            .collect(),
    )
}

/// `min(P_beam, P_sat / active)` on every active beam.
pub fn equal_power(gamma: &BeamActivation, cfg: &AlgoConfig) -> PowerAllocation {
    PowerAllocation::new(
        gamma
            .gamma
            .iter()
            .map(|g| {
                let n = g.iter().filter(|&&on| on).count().max(1);
                let p = cfg.per_beam_w.min(cfg.per_sat_w / n as f64);
                g.iter().map(|&on| if on { p } else { 0.0 }).collect()
            })
            .collect(),
    )
}

/// Per-user outcome of one (δ, P).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Bound per local user; `None` when the user's geometry or links are unusable.
    pub crlb_m: Vec<Option<f64>>,
    /// Linear SINR per user and anchor rank.
    pub sinr: Vec<Vec<f64>>,
    /// Interference-free SNR of the associated beam, dB.
    pub snr_db: Vec<Vec<f64>>,
    pub avg_crlb_m: f64,
}

/// TOA information weight `1/(c σ²)` per unit SINR, in m⁻².
fn weight_per_sinr(signal: &SignalSpec) -> f64 {
    let ts = signal.symbol_duration_s();
    8.0 * PI * PI * crlb::gamma_term(signal) / (ts * ts * SPEED_OF_LIGHT_M_S * SPEED_OF_LIGHT_M_S)
}

pub fn evaluate(
    scenario: &Scenario,
    dep: &Deployment,
    delta: &AssociationMap,
    power: &PowerAllocation,
    mode: InterferenceMode,
) -> Result<Evaluation> {
    let mut crlb_m = Vec::with_capacity(dep.users.len());
    let mut sinr = Vec::with_capacity(dep.users.len());
    let mut snr_db = Vec::with_capacity(dep.users.len());
    for (u, anchors) in dep.anchors.iter().enumerate() {
        let mut betas = Vec::with_capacity(anchors.len());
        let mut snrs = Vec::with_capacity(anchors.len());
        for (rank, &k) in anchors.iter().enumerate() {
            let link = dep.links.get(u, k)?;
            match delta.delta[u][rank] {
                Some(b) => {
                    let all = link.sinr_all(&power.watts[k], &dep.beams[k].colors, mode, dep.links.noise_w);
                    betas.push(all[b]);
                    snrs.push(linkbudget::linear_to_db(link.snr(b, power.watts[k][b], dep.links.noise_w)));
                }
                None => {
                    betas.push(0.0);
                    snrs.push(f64::NEG_INFINITY);
                }
            }
        }
        crlb_m.push(user_bound(scenario, dep, u, &betas));
        sinr.push(betas);
        snr_db.push(snrs);
    }
    let values: Vec<f64> = crlb_m.iter().flatten().copied().collect();
    let avg_crlb_m = if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    Ok(Evaluation {
        crlb_m,
        sinr,
        snr_db,
        avg_crlb_m,
    })
}

/// TDOA bound of one user from its anchor SINRs; the strongest anchor is the reference.
pub fn user_bound(scenario: &Scenario, dep: &Deployment, u: usize, betas: &[f64]) -> Option<f64> {
    let reference = best_beam(betas)?;
    let sigma_sq = betas
        .iter()
        .map(|&b| crlb::toa_variance(b, b > 0.0, &scenario.signal))
        .collect::<Result<Vec<_>>>()
        .ok()?;
    let ue = scenario.users[dep.users[u]].ecef;
    let positions: Vec<Vector3<f64>> = dep.anchors[u].iter().map(|&k| scenario.sats[dep.sats[k]].position).collect();
    let ids: Vec<usize> = dep.anchors[u].iter().map(|&k| scenario.sats[dep.sats[k]].sat_id).collect();
    crlb::user_crlb(u, &ue, &positions, &ids, &ToaStats::new(sigma_sq, reference))
        .ok()
        .map(|r| r.crlb_m)
}

/// Solves the power problem for fixed (δ, γ) with interference frozen at `prev`.
///
/// Every active beam that serves at least one user becomes a variable; the
/// other beams are switched off.
pub fn allocate_power(
    scenario: &Scenario,
    dep: &Deployment,
    delta: &AssociationMap,
    gamma: &BeamActivation,
    prev: &PowerAllocation,
    cfg: &AlgoConfig,
) -> Result<PowerAllocation> {
    if dep.users.is_empty() {
        return Ok(prev.clone());
    }
    let mut var_of: Vec<Vec<Option<usize>>> = dep.beams.iter().map(|b| vec![None; b.len()]).collect();
    let mut beam_sat = Vec::new();
    let mut beam_index = Vec::new();
    for (u, anchors) in dep.anchors.iter().enumerate() {
        for (rank, &k) in anchors.iter().enumerate() {
            let Some(b) = delta.delta[u][rank] else {
                return Err(Error::Assembly(format!("user {} not associated on satellite {}", dep.users[u], dep.sats[k])));
            };
            if !gamma.gamma[k][b] {
                return Err(Error::Assembly(format!("user {} associated to inactive beam {b}", dep.users[u])));
            }
            if var_of[k][b].is_none() {
                var_of[k][b] = Some(beam_sat.len());
                beam_sat.push(k);
                beam_index.push(b);
            }
        }
    }

    let unit = weight_per_sinr(&scenario.signal) * cfg.per_beam_w;
    let mut users = Vec::with_capacity(dep.users.len());
    for (u, anchors) in dep.anchors.iter().enumerate() {
        let ue = scenario.users[dep.users[u]].ecef;
        let mut terms = Vec::with_capacity(anchors.len());
        for (rank, &k) in anchors.iter().enumerate() {
            let b = delta.delta[u][rank].expect("checked above");
            let link = dep.links.get(u, k)?;
            let interference = frozen_interference(link, &prev.watts[k], &dep.beams[k].colors, b, cfg.interference);
            terms.push(AnchorTerm {
                direction: crlb::augmented_direction(&ue, &scenario.sats[dep.sats[k]].position),
                var: var_of[k][b],
                weight_per_unit: unit * link.coupling[b] / (interference + dep.links.noise_w),
            });
        }
        users.push(terms);
    }
    let start_w = beam_sat
        .iter()
        .zip(&beam_index)
        .map(|(&k, &b)| prev.watts[k][b])
        .collect();
    let input = PowerSdpInput {
        beam_sat,
        per_beam_w: cfg.per_beam_w,
        per_sat_w: cfg.per_sat_w,
        users,
        start_w,
        user_weights: majorizer_weights(&evaluate(scenario, dep, delta, prev, cfg.interference)?),
    };
    let problem = sdp::assemble_power_sdp(&input)?;
    let opts = SolverOptions {
        tol: cfg.solver_tol,
        max_iter: cfg.solver_max_iter,
        initial: Some(problem.start.clone()),
        ..SolverOptions::default()
    };
    let solution = sdp::solve(&problem.problem, &opts)?;
    if solution.status == SdpStatus::Infeasible {
        return Err(Error::Solver("power problem reported infeasible from a feasible start".into()));
    }
    let watts = problem.powers_w(&solution.x, cfg.per_beam_w);
    let mut out: Vec<Vec<f64>> = dep.beams.iter().map(|b| vec![0.0; b.len()]).collect();
    for ((&k, &b), w) in input.beam_sat.iter().zip(&beam_index).zip(watts) {
        out[k][b] = w;
    }
    // rounding can leave a binding satellite budget a hair over
    for row in &mut out {
        let total: f64 = row.iter().sum();
        if total > cfg.per_sat_w {
            let scale = cfg.per_sat_w / total;
            row.iter_mut().for_each(|w| *w *= scale);
        }
    }
    Ok(PowerAllocation::new(out))
}

/// Weights `1/(2J·c_j)` from the bounds `c_j` at the previous power.
///
/// The square root is concave, so `Σ_j tr_j/(2J·c_j)` majorizes the mean
/// bound in metres around the previous point. Users without a finite bound
/// take the largest weight.
fn majorizer_weights(prev: &Evaluation) -> Vec<f64> {
    let j = prev.crlb_m.len() as f64;
    let w: Vec<Option<f64>> = prev
        .crlb_m
        .iter()
        .map(|c| c.filter(|v| *v > 0.0 && v.is_finite()).map(|v| 1.0 / (2.0 * j * v)))
        .collect();
    let fallback = w.iter().flatten().copied().fold(f64::NAN, f64::max);
    let fallback = if fallback.is_nan() { 1.0 / j } else { fallback };
    w.into_iter().map(|x| x.unwrap_or(fallback)).collect()
}

fn frozen_interference(
    link: &linkbudget::UserSatLinks,
    powers: &[f64],
    colors: &[u8],
    beam: usize,
    mode: InterferenceMode,
) -> f64 {
    link.coupling
        .iter()
        .zip(powers)
        .zip(colors)
        .enumerate()
        .filter(|&(b, (_, &c))| b != beam && (mode == InterferenceMode::Literal || c == colors[beam]))
        .map(|(_, ((g, p), _))| g * p)
        .sum()
}

/// Decision triple of one scheme on one snapshot, with its evaluation.
#[derive(Debug, Clone)]
pub struct Solution {
    pub scheme: Scheme,
    pub deployment: Deployment,
    pub delta: AssociationMap,
    pub gamma: BeamActivation,
    pub power: PowerAllocation,
    pub evaluation: Evaluation,
    pub avg_crlb: f64,
    /// Iterate (0-based) the solution was taken from.
    pub iterate: usize,
    /// Average bound of every evaluated iterate.
    pub history: Vec<f64>,
}

impl Solution {
    /// Checks the structural constraints; returns one message per violation.
    pub fn audit(&self, cfg: &AlgoConfig) -> Vec<String> {
        let mut issues = Vec::new();
        let dep = &self.deployment;
        for (u, row) in self.delta.delta.iter().enumerate() {
            for (rank, b) in row.iter().enumerate() {
                let k = dep.anchors[u][rank];
                match b {
                    Some(b) if *b >= dep.beams[k].len() => issues.push(format!("user {u}: beam {b} out of range")),
                    Some(b) if !self.gamma.gamma[k][*b] => {
                        issues.push(format!("user {u}: associated to inactive beam {b} of satellite {k}"))
                    }
                    _ => {}
                }
            }
        }
        for (k, g) in self.gamma.gamma.iter().enumerate() {
            let active = g.iter().filter(|&&on| on).count();
            if active > cfg.active_beams {
                issues.push(format!("satellite {k}: {active} active beams exceed the budget {}", cfg.active_beams));
            }
            for (b, (&on, &p)) in g.iter().zip(&self.power.watts[k]).enumerate() {
                if !on && p != 0.0 {
                    issues.push(format!("satellite {k}: inactive beam {b} has power {p}"));
                }
            }
        }
        if !self.power.satisfies_budgets(cfg.per_beam_w, cfg.per_sat_w, 1e-9) {
            issues.push("power budgets violated".into());
        }
        issues
    }

    /// Per-user rows: association, SINR and bound.
    pub fn write_users_csv(&self, scenario: &Scenario, path: &Path) -> Result<()> {
        let dep = &self.deployment;
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["user_id", "rank", "sat_id", "beam", "sinr_db", "snr_db", "crlb_m"])
            .map_err(csv_err)?;
        for (u, anchors) in dep.anchors.iter().enumerate() {
            for (rank, &k) in anchors.iter().enumerate() {
                let beam = self.delta.delta[u][rank].map_or(String::new(), |b| b.to_string());
                let crlb = self.evaluation.crlb_m[u].map_or(String::new(), |c| format!("{c:.6}"));
                w.write_record(&[
                    dep.users[u].to_string(),
                    rank.to_string(),
                    scenario.sats[dep.sats[k]].sat_id.to_string(),
                    beam,
                    format!("{:.6}", linkbudget::linear_to_db(self.evaluation.sinr[u][rank])),
                    format!("{:.6}", self.evaluation.snr_db[u][rank]),
                    crlb,
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Per-beam rows: activation and power.
    pub fn write_beams_csv(&self, scenario: &Scenario, path: &Path) -> Result<()> {
        let dep = &self.deployment;
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["sat_id", "beam", "target_sat_id", "u", "v", "gamma", "power_w"])
            .map_err(csv_err)?;
        for (k, set) in dep.beams.iter().enumerate() {
            for b in 0..set.len() {
                w.write_record(&[
                    scenario.sats[dep.sats[k]].sat_id.to_string(),
                    b.to_string(),
                    scenario.sats[dep.sats[set.target[b]]].sat_id.to_string(),
                    format!("{:.6}", set.centers[b].u),
                    format!("{:.6}", set.centers[b].v),
                    u8::from(self.gamma.gamma[k][b]).to_string(),
                    format!("{:.6}", self.power.watts[k][b]),
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

/// Fails with a coverage error when no user has enough visible satellites.
fn require_users(scenario: &Scenario, dep: &Deployment, cfg: &AlgoConfig) -> Result<()> {
    match dep.excluded.first() {
        Some(&user) if dep.users.is_empty() => {
            let visible = scenario
                .sats
                .iter()
                .filter(|s| geometry::elevation_angle(s, &scenario.users[user]) >= cfg.min_elevation_deg.max(0.0))
                .count();
            Err(Error::Coverage {
                user,
                visible,
                needed: cfg.positioning_sats,
            })
        }
        None if dep.users.is_empty() => Err(Error::param("users", "scenario has no users")),
        _ => Ok(()),
    }
}

/// Nadir communication layouts, all beams on at `P_sat/B_cov`, max-SINR association.
pub fn run_tmcb(scenario: &Scenario, cfg: &AlgoConfig) -> Result<Solution> {
    let dep = deploy(scenario, cfg, false)?;
    require_users(scenario, &dep, cfg)?;
    let gamma = BeamActivation::all(&dep);
    let power = equal_power(&gamma, cfg);
    single_pass(scenario, dep, gamma, power, cfg, Scheme::Tmcb)
}

/// Cooperative layouts, Voronoi activation, equal power over active beams.
pub fn run_uvbhs_epa(scenario: &Scenario, cfg: &AlgoConfig) -> Result<Solution> {
    let dep = deploy(scenario, cfg, true)?;
    require_users(scenario, &dep, cfg)?;
    let gamma = design_activation(&dep, cfg.active_beams)?;
    let power = equal_power(&gamma, cfg);
    single_pass(scenario, dep, gamma, power, cfg, Scheme::UvbhsEpa)
}

fn single_pass(
    scenario: &Scenario,
    dep: Deployment,
    gamma: BeamActivation,
    power: PowerAllocation,
    cfg: &AlgoConfig,
    scheme: Scheme,
) -> Result<Solution> {
    let delta = associate_users(&dep, &power, cfg.interference)?;
    let evaluation = evaluate(scenario, &dep, &delta, &power, cfg.interference)?;
    Ok(Solution {
        scheme,
        avg_crlb: evaluation.avg_crlb_m,
        history: vec![evaluation.avg_crlb_m],
        deployment: dep,
        delta,
        gamma,
        power,
        evaluation,
        iterate: 0,
    })
}

/// The iterative scheme: association, Voronoi activation and SDP power
/// allocation, repeated `M` times; the iterate with the lowest average
/// bound is returned.
///
/// The Voronoi activation depends only on where the users are, so it is the
/// same in every iteration. Association is recomputed over the active beams
/// before the power step and again after it.
pub fn run_fbhca(scenario: &Scenario, cfg: &AlgoConfig) -> Result<Solution> {
    let dep = deploy(scenario, cfg, true)?;
    require_users(scenario, &dep, cfg)?;
    let gamma = design_activation(&dep, cfg.active_beams)?;
    let initial = cfg.per_beam_w / cfg.active_beams as f64;
    let mut power = PowerAllocation::new(dep.beams.iter().map(|b| vec![initial; b.len()]).collect());

    let mut best: Option<(f64, usize, AssociationMap, PowerAllocation, Evaluation)> = None;
    let mut history = Vec::with_capacity(cfg.iterations);
    for m in 0..cfg.iterations {
        let restricted = masked(&power, &gamma);
        let delta = associate_users(&dep, &restricted, cfg.interference)?;
        power = allocate_power(scenario, &dep, &delta, &gamma, &restricted, cfg)?;
        let delta = associate_users(&dep, &power, cfg.interference)?;
        let evaluation = evaluate(scenario, &dep, &delta, &power, cfg.interference)?;
        let avg = evaluation.avg_crlb_m;
        history.push(avg);
        if best.as_ref().map_or(true, |b| avg < b.0) {
            best = Some((avg, m, delta, power.clone(), evaluation));
        }
    }
    let (avg_crlb, iterate, delta, power, evaluation) = best.expect("at least one iteration");
    Ok(Solution {
        scheme: Scheme::Fbhca,
        deployment: dep,
        delta,
        gamma,
        power,
        evaluation,
        avg_crlb,
        iterate,
        history,
    })
}

pub fn run_scheme(scheme: Scheme, scenario: &Scenario, cfg: &AlgoConfig) -> Result<Solution> {
    match scheme {
        Scheme::Tmcb => run_tmcb(scenario, cfg),
        Scheme::UvbhsEpa => run_uvbhs_epa(scenario, cfg),
        Scheme::Fbhca => run_fbhca(scenario, cfg),
    }
}
