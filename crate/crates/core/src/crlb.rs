//! TOA variance of an OFDM reference signal and the TDOA Cramér-Rao bound.
//!
//! Distances are kilometres and times seconds; bounds are reported in
//! metres. Linear systems go through Cholesky factors of `R` and of the
//! 3×3 information matrix `AᵀR⁻¹A`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;

/// Smallest eigenvalue ratio of `AᵀR⁻¹A` accepted as full rank.
const RANK_TOLERANCE: f64 = 1e-12;

/// Reference-signal description entering the TOA bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSpec {
    pub symbols: usize,
    pub subcarriers: usize,
    /// `|S_l(k)|²`, identical on every resource element.
    pub symbol_energy: f64,
    pub subcarrier_spacing_hz: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            symbols: 4,
            subcarriers: 240,
            symbol_energy: 1.0,
            subcarrier_spacing_hz: 15e3,
        }
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.symbols < 1 {
            return Err(Error::param("signal.symbols", "must be >= 1"));
        }
        if self.subcarriers < 2 || self.subcarriers % 2 != 0 {
            return Err(Error::param("signal.subcarriers", "must be even and >= 2"));
        }
        if !(self.symbol_energy > 0.0) {
            return Err(Error::param("signal.symbol_energy", "must be > 0"));
        }
        if !(self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::param("signal.subcarrier_spacing_hz", "must be > 0"));
        }
        Ok(())
    }

    /// Useful OFDM symbol duration (cyclic prefix excluded).
    pub fn symbol_duration_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    /// Occupied bandwidth of the reference signal.
    pub fn bandwidth_hz(&self) -> f64 {
        self.subcarriers as f64 * self.subcarrier_spacing_hz
    }
}

/// `Γ = Σ_l Σ_{k=−K/2}^{K/2−1} k² |S_l(k)|²`.
pub fn gamma_term(spec: &SignalSpec) -> f64 {
    let half = (spec.subcarriers / 2) as i64;
    let per_symbol: f64 = (-half..half).map(|k| (k * k) as f64 * spec.symbol_energy).sum();
    per_symbol * spec.symbols as f64
}

/// TOA variance `Ts² / (8π² β Γ)`, or `+∞` for a satellite without an associated beam.
pub fn toa_variance(beta: f64, associated: bool, spec: &SignalSpec) -> Result<f64> {
    if !associated {
        return Ok(f64::INFINITY);
    }
    if !(beta > 0.0) {
        return Err(Error::param("beta", format!("SINR must be > 0, got {beta}")));
    }
    let ts = spec.symbol_duration_s();
    Ok(ts * ts / (8.0 * PI * PI * beta * gamma_term(spec)))
}

/// TOA variances of the anchors of one user, with the reference anchor marked.
#[derive(Debug, Clone, PartialEq)]
pub struct ToaStats {
    pub sigma_sq: Vec<f64>,
    pub reference: usize,
}

impl ToaStats {
    pub fn new(sigma_sq: Vec<f64>, reference: usize) -> Self {
        Self { sigma_sq, reference }
    }

    pub fn len(&self) -> usize {
        self.sigma_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma_sq.is_empty()
    }

    fn reference_sigma_sq(&self) -> f64 {
        self.sigma_sq[self.reference]
    }

    /// Variances of the non-reference anchors, in anchor order.
    fn others(&self) -> impl Iterator<Item = f64> + '_ {
        self.sigma_sq
            .iter()
            .enumerate()
            .filter(move |&(i, _)| i != self.reference)
            .map(|(_, &s)| s)
    }

    fn check_usable(&self) -> Result<()> {
        if self.reference >= self.sigma_sq.len() {
            return Err(Error::Lookup(format!(
                "reference {} out of {} anchors",
                self.reference,
                self.sigma_sq.len()
            )));
        }
        if self.sigma_sq.len() < 2 {
            return Err(Error::InsufficientAnchors {
                needed: 2,
                got: self.sigma_sq.len(),
            });
        }
        for (i, &s) in self.sigma_sq.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::UnusableSatellite(i));
            }
            if !(s > 0.0) {
                return Err(Error::param("sigma_sq", format!("anchor {i} has variance {s}")));
            }
        }
        Ok(())
    }
}

/// TDOA geometry matrix, one row per non-reference anchor, in s/km.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryMatrix {
    pub a: DMatrix<f64>,
    /// Rows that vanish because the anchor is collinear with the reference.
    pub degenerate_rows: Vec<usize>,
}

/// Rows `(1/c)[unit(s − s_i) − unit(s − s_ref)]ᵀ` for every anchor `i ≠ ref`.
pub fn build_a(ue: &Vector3<f64>, sats: &[Vector3<f64>], reference: usize) -> Result<GeometryMatrix> {
    if sats.len() < 4 {
        return Err(Error::InsufficientAnchors {
            needed: 4,
            got: sats.len(),
        });
    }
    if reference >= sats.len() {
        return Err(Error::Lookup(format!("reference {reference} out of {} anchors", sats.len())));
    }
    let units = sats
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let diff = ue - s;
            let d = diff.norm();
            if d <= 1e-9 {
                Err(Error::DegenerateGeometry(format!("anchor {i} coincides with the user")))
            } else {
                Ok(diff / d)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let reference_unit = units[reference];
    let mut a = DMatrix::zeros(sats.len() - 1, 3);
    let mut degenerate_rows = Vec::new();
    for (row, (_, u)) in units.iter().enumerate().filter(|&(i, _)| i != reference).enumerate() {
        let g = (u - reference_unit) / SPEED_OF_LIGHT_KM_S;
        if g.norm() * SPEED_OF_LIGHT_KM_S < 1e-12 {
            degenerate_rows.push(row);
        }
        a.row_mut(row).copy_from(&g.transpose());
    }
    Ok(GeometryMatrix { a, degenerate_rows })
}

/// `R = diag(σ_2²,…) + σ_1² 𝟙𝟙ᵀ`, with `σ_1` the reference anchor.
pub fn build_r(toa: &ToaStats) -> Result<DMatrix<f64>> {
    toa.check_usable()?;
    let s1 = toa.reference_sigma_sq();
    let others: Vec<f64> = toa.others().collect();
    let n = others.len();
    let mut r = DMatrix::from_element(n, n, s1);
    for (i, s) in others.into_iter().enumerate() {
        r[(i, i)] += s;
    }
    Ok(r)
}

fn information_3x3(a: &GeometryMatrix, r: &DMatrix<f64>) -> Result<Matrix3<f64>> {
    if a.a.nrows() != r.nrows() || a.a.ncols() != 3 {
        return Err(Error::param(
            "A/R",
            format!("dimension mismatch: A is {}x{}, R is {}x{}", a.a.nrows(), a.a.ncols(), r.nrows(), r.ncols()),
        ));
    }
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateGeometry("R is not positive definite".into()))?;
    let whitened = chol.l().solve_lower_triangular(&a.a).expect("Cholesky factor is non-singular");
    let f = whitened.transpose() * whitened;
    Ok(Matrix3::from_iterator(f.iter().copied()))
}

/// `tr(F⁻¹)` for a symmetric 3×3 information matrix, with a rank check.
fn trace_inverse_3x3(f: &Matrix3<f64>) -> Result<(f64, f64)> {
    let eig = SymmetricEigen::new(*f).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) || min <= RANK_TOLERANCE * max {
        return Err(Error::DegenerateGeometry(format!(
            "information matrix rank deficient (eigenvalues {:.3e} .. {:.3e})",
            min, max
        )));
    }
    let chol = f
        .cholesky()
        .ok_or_else(|| Error::DegenerateGeometry("information matrix not positive definite".into()))?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&Matrix3::identity())
        .expect("Cholesky factor is non-singular");
    Ok((l_inv.norm_squared(), max / min))
}

/// `√tr{(AᵀR⁻¹A)⁻¹}` in metres.
pub fn tdoa_crlb(a: &GeometryMatrix, r: &DMatrix<f64>) -> Result<f64> {
    let f = information_3x3(a, r)?;
    let (trace, _) = trace_inverse_3x3(&f)?;
    Ok(trace.sqrt() * 1e3)
}

/// Matrix-inversion-lemma split `R⁻¹ = R₀⁻¹ − H`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseRSplit {
    /// Diagonal of `R₀⁻¹ = diag(1/σ_2², …)`.
    pub r0_inv: DVector<f64>,
    /// `H_ik = 1/(σ_i² σ_k² Ω)`.
    pub h: DMatrix<f64>,
    /// `Ω = Σ_all 1/σ_i²`.
    pub omega: f64,
}

impl InverseRSplit {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.r0_inv) - &self.h
    }
}

pub fn inv_r_decomposition(toa: &ToaStats) -> Result<InverseRSplit> {
    toa.check_usable()?;
    let inv: Vec<f64> = toa.others().map(|s| 1.0 / s).collect();
    let omega = 1.0 / toa.reference_sigma_sq() + inv.iter().sum::<f64>();
    let r0_inv = DVector::from_vec(inv);
    let h = &r0_inv * r0_inv.transpose() / omega;
    Ok(InverseRSplit { r0_inv, h, omega })
}

/// Splits `tr{(AᵀR⁻¹A)⁻¹}` into `tr{Y⁻¹}` and the correction
/// `tr{Y⁻¹Z(Z − ZY⁻¹Z)⁺ZY⁻¹}` with `Y = AᵀR₀⁻¹A`, `Z = AᵀHA`.
///
/// `Z` has rank one, so the middle factor is inverted on its range only
/// (Moore-Penrose). Both terms are in km².
pub fn crlb_decomposed(a: &GeometryMatrix, toa: &ToaStats) -> Result<(f64, f64)> {
    let split = inv_r_decomposition(toa)?;
    if a.a.nrows() != split.r0_inv.len() {
        return Err(Error::param("A", "row count differs from the anchor count minus one"));
    }
    let at = a.a.transpose();
    let y = &at * DMatrix::from_diagonal(&split.r0_inv) * &a.a;
    let z = &at * &split.h * &a.a;
    let y = Matrix3::from_iterator(y.iter().copied());
    let z = Matrix3::from_iterator(z.iter().copied());

    let (trace_y_inv, _) = trace_inverse_3x3(&y)?;
    let y_inv = y
        .cholesky()
        .ok_or_else(|| Error::DegenerateGeometry("Y is not positive definite".into()))?
        .inverse();
    let middle = z - z * y_inv * z;
    let middle = 0.5 * (middle + middle.transpose());
    let pinv = symmetric_pinv(&middle, 1e-12 * z.norm().max((z * y_inv * z).norm()));
    let correction = (y_inv * z * pinv * z * y_inv).trace();
    Ok((trace_y_inv, correction))
}

fn symmetric_pinv(m: &Matrix3<f64>, cutoff: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*m);
    let mut out = Matrix3::zeros();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff && lambda.abs() > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += v * v.transpose() / lambda;
        }
    }
    out
}

/// `[unit(s − s_i); 1]`: range gradient augmented with the common clock term.
///
/// `Σ_i w_i t_i t_iᵀ` with `w_i = 1/(c σ_i)²` is the TOA information matrix
/// with an unknown common offset. Its position block after eliminating the
/// offset equals `AᵀR⁻¹A`, for any reference choice.
pub fn augmented_direction(ue: &Vector3<f64>, sat: &Vector3<f64>) -> Vector4<f64> {
    let u = (ue - sat).normalize();
    Vector4::new(u.x, u.y, u.z, 1.0)
}

/// `tr([M⁻¹]_{pos})` of a 4×4 offset-augmented information matrix.
pub fn position_trace_from_augmented(m: &Matrix4<f64>) -> Result<f64> {
    let k = m[(3, 3)];
    if !(k > 0.0) {
        return Err(Error::DegenerateGeometry("no timing information".into()));
    }
    let b = m.fixed_view::<3, 1>(0, 3).into_owned();
    let f = m.fixed_view::<3, 3>(0, 0).into_owned() - b * b.transpose() / k;
    Ok(trace_inverse_3x3(&f)?.0)
}

/// Bound of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct CrlbRow {
    pub user: usize,
    pub anchors: usize,
    pub crlb_m: f64,
    pub reference_sat: usize,
    pub condition: f64,
}

/// Evaluates the bound of one user: positions in km, variances in s².
pub fn user_crlb(
    user: usize,
    ue: &Vector3<f64>,
    sats: &[Vector3<f64>],
    sat_ids: &[usize],
    toa: &ToaStats,
) -> Result<CrlbRow> {
    let a = build_a(ue, sats, toa.reference)?;
    let r = build_r(toa)?;
    let f = information_3x3(&a, &r)?;
    let (trace, condition) = trace_inverse_3x3(&f)?;
    Ok(CrlbRow {
        user,
        anchors: sats.len(),
        crlb_m: trace.sqrt() * 1e3,
        reference_sat: sat_ids[toa.reference],
        condition,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrlbReport {
    pub rows: Vec<CrlbRow>,
}

impl CrlbReport {
    pub fn mean_m(&self) -> Option<f64> {
        if self.rows.is_empty() {
            None
        } else {
            Some(self.rows.iter().map(|r| r.crlb_m).sum::<f64>() / self.rows.len() as f64)
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["user_id", "I_j", "crlb_m", "ref_sat"]).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(&[
                row.user.to_string(),
                row.anchors.to_string(),
                format!("{:.6}", row.crlb_m),
                row.reference_sat.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ue() -> Vector3<f64> {
        Vector3::new(6371.0, 0.0, 0.0)
    }

    fn four_sats() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(7571.0, 0.0, 0.0),
            Vector3::new(7400.0, 1500.0, 200.0),
            Vector3::new(7450.0, -600.0, 1300.0),
            Vector3::new(7350.0, -300.0, -1700.0),
        ]
    }

    /// Dense oracle: explicit inverses, no factorizations shared with the implementation.
    fn dense_crlb_m(a: &DMatrix<f64>, sigma_sq: &[f64], reference: usize) -> f64 {
        let s1 = sigma_sq[reference];
        let others: Vec<f64> = sigma_sq.iter().enumerate().filter(|&(i, _)| i != reference).map(|(_, &s)| s).collect();
        let n = others.len();
        let r = DMatrix::from_fn(n, n, |i, j| if i == j { s1 + others[i] } else { s1 });
        let fim = a.transpose() * r.try_inverse().unwrap() * a;
        (fim.try_inverse().unwrap().trace()).sqrt() * 1e3
    }

    #[test]
    fn gamma_small_and_default() {
        let tiny = SignalSpec {
            symbols: 1,
            subcarriers: 2,
            symbol_energy: 1.0,
            subcarrier_spacing_hz: 15e3,
        };
        assert_eq!(gamma_term(&tiny), 1.0);
        // Σ_{k=1}^{n} k² = n(n+1)(2n+1)/6 on both halves of the band
        let sq = |n: f64| n * (n + 1.0) * (2.0 * n + 1.0) / 6.0;
        let expected = 4.0 * (sq(120.0) + sq(119.0));
        assert_eq!(expected, 4_608_160.0);
        assert_eq!(gamma_term(&SignalSpec::default()), expected);
        let doubled = SignalSpec {
            symbols: 8,
            ..SignalSpec::default()
        };
        assert_eq!(gamma_term(&doubled), 2.0 * expected);
    }

    #[test]
    fn toa_variance_cases() {
        let spec = SignalSpec::default();
        assert_eq!(toa_variance(3.0, false, &spec).unwrap(), f64::INFINITY);
        let a = toa_variance(2.0, true, &spec).unwrap();
        let b = toa_variance(4.0, true, &spec).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!(toa_variance(0.0, true, &spec).is_err());
        assert!(toa_variance(-1.0, true, &spec).is_err());

        let beta = 10f64.powf(1.42);
        let ts = 1.0 / 15000.0;
        let expected = ts * ts / (8.0 * PI * PI * beta * 4_608_160.0);
        let got = toa_variance(beta, true, &spec).unwrap();
        assert!((got / expected - 1.0).abs() < 1e-14);
        // ≈ 4.6e-19 s², i.e. a ranging error of ~0.20 m
        assert!((got.sqrt() * SPEED_OF_LIGHT_KM_S * 1e3 - 0.2043).abs() < 0.001);
    }

    #[test]
    fn a_rows_bounded_and_match_finite_differences() {
        let sats = four_sats();
        let g = build_a(&ue(), &sats, 0).unwrap();
        assert_eq!(g.a.nrows(), 3);
        for row in g.a.row_iter() {
            assert!(row.norm() <= 2.0 / SPEED_OF_LIGHT_KM_S + 1e-18);
        }
        let tdoa = |s: &Vector3<f64>, i: usize| ((s - sats[i]).norm() - (s - sats[0]).norm()) / SPEED_OF_LIGHT_KM_S;
        let h = 1e-4;
        for i in 1..4 {
            for k in 0..3 {
                let mut plus = ue();
                let mut minus = ue();
                plus[k] += h;
                minus[k] -= h;
                let fd = (tdoa(&plus, i) - tdoa(&minus, i)) / (2.0 * h);
                let an = g.a[(i - 1, k)];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-9), "row {i} col {k}");
            }
        }
    }

    #[test]
    fn a_flags_collinear_anchor_and_rejects_few() {
        let mut sats = four_sats();
        sats[2] = ue() + (sats[0] - ue()) * 1.7;
        let g = build_a(&ue(), &sats, 0).unwrap();
        assert_eq!(g.degenerate_rows, vec![1]);
        assert!(matches!(
            build_a(&ue(), &sats[..3], 0),
            Err(Error::InsufficientAnchors { needed: 4, got: 3 })
        ));
        let mut on_user = four_sats();
        on_user[3] = ue();
        assert!(matches!(build_a(&ue(), &on_user, 0), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn r_structure() {
        let r = build_r(&ToaStats::new(vec![2.0, 3.0], 0)).unwrap();
        assert_eq!(r, DMatrix::from_element(1, 1, 5.0));

        let n = 6;
        let sigma = 0.7;
        let r = build_r(&ToaStats::new(vec![sigma; n], 0)).unwrap();
        let mut eig: Vec<f64> = r.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        for e in &eig[..n - 2] {
            assert!((e - sigma).abs() < 1e-12);
        }
        assert!((eig[n - 2] - n as f64 * sigma).abs() < 1e-12);
        assert!(matches!(
            build_r(&ToaStats::new(vec![1.0, f64::INFINITY, 1.0], 0)),
            Err(Error::UnusableSatellite(1))
        ));
    }

    #[test]
    fn crlb_matches_dense_oracle_on_tetrahedron() {
        let c = Vector3::new(0.0, 0.0, 0.0);
        let sats = vec![
            Vector3::new(1.0, 1.0, 1.0) * 1000.0,
            Vector3::new(1.0, -1.0, -1.0) * 1000.0,
            Vector3::new(-1.0, 1.0, -1.0) * 1000.0,
            Vector3::new(-1.0, -1.0, 1.0) * 1000.0,
        ];
        let sigma = vec![1e-18; 4];
        let g = build_a(&c, &sats, 0).unwrap();
        let r = build_r(&ToaStats::new(sigma.clone(), 0)).unwrap();
        let got = tdoa_crlb(&g, &r).unwrap();
        let expected = dense_crlb_m(&g.a, &sigma, 0);
        assert!((got / expected - 1.0).abs() < 1e-10);
    }

    #[test]
    fn coplanar_anchors_rejected() {
        let user = Vector3::new(6371.0, 0.0, 0.0);
        let sats: Vec<Vector3<f64>> = (0..5)
            .map(|k| {
                let a = (k as f64 * 13.0 - 30.0).to_radians();
                Vector3::new(7571.0 * a.cos(), 7571.0 * a.sin(), 0.0)
            })
            .collect();
        let g = build_a(&user, &sats, 0).unwrap();
        let r = build_r(&ToaStats::new(vec![1e-18; 5], 0)).unwrap();
        assert!(matches!(tdoa_crlb(&g, &r), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn two_anchor_scalar_identity() {
        let toa = ToaStats::new(vec![2.0, 5.0], 0);
        let split = inv_r_decomposition(&toa).unwrap();
        let omega: f64 = 1.0 / 2.0 + 1.0 / 5.0;
        let via_split = 1.0 / 5.0 - 1.0 / (25.0 * omega);
        assert!((split.reconstruct()[(0, 0)] - 1.0 / 7.0).abs() < 1e-15);
        assert!((via_split - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn correction_vanishes_with_precise_reference() {
        let sats = four_sats();
        let g = build_a(&ue(), &sats, 0).unwrap();
        let mut last = f64::INFINITY;
        for s1 in [1e-18, 1e-22, 1e-26, 1e-30] {
            let toa = ToaStats::new(vec![s1, 2e-18, 3e-18, 1e-18], 0);
            let (_, corr) = crlb_decomposed(&g, &toa).unwrap();
            assert!(corr >= 0.0 && corr < last);
            last = corr;
        }
        let base = crlb_decomposed(&g, &ToaStats::new(vec![1e-18, 2e-18, 3e-18, 1e-18], 0)).unwrap();
        assert!(last < 1e-6 * base.1);
    }

    #[test]
    fn augmented_route_matches_eq8() {
        let sats = four_sats();
        let sigma = [1.3e-18, 2.1e-18, 0.7e-18, 4.0e-18];
        let mut m = Matrix4::zeros();
        for (s, &v) in sats.iter().zip(&sigma) {
            let t = augmented_direction(&ue(), s);
            m += t * t.transpose() / (SPEED_OF_LIGHT_KM_S * SPEED_OF_LIGHT_KM_S * v);
        }
        let via_aug = position_trace_from_augmented(&m).unwrap().sqrt() * 1e3;
        for reference in 0..4 {
            let g = build_a(&ue(), &sats, reference).unwrap();
            let r = build_r(&ToaStats::new(sigma.to_vec(), reference)).unwrap();
            let direct = tdoa_crlb(&g, &r).unwrap();
            assert!((direct / via_aug - 1.0).abs() < 1e-9, "reference {reference}");
        }
    }

    #[test]
    fn report_csv_and_mean() {
        let report = CrlbReport {
            rows: vec![
                CrlbRow { user: 0, anchors: 4, crlb_m: 2.0, reference_sat: 7, condition: 3.0 },
                CrlbRow { user: 1, anchors: 4, crlb_m: 4.0, reference_sat: 9, condition: 3.0 },
            ],
        };
        assert_eq!(report.mean_m(), Some(3.0));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("crlb.csv");
        report.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("user_id,I_j,crlb_m,ref_sat\n0,4,2.000000,7\n"));
    }

    fn random_geometry(n: usize, seeds: &[f64]) -> (Vector3<f64>, Vec<Vector3<f64>>) {
        let user = Vector3::new(6371.0, 0.0, 0.0);
        let sats = (0..n)
            .map(|i| {
                let a = seeds[2 * i] * 0.35;
                let b = seeds[2 * i + 1] * std::f64::consts::TAU;
                let dir = Vector3::new(a.cos(), a.sin() * b.cos(), a.sin() * b.sin());
                dir * 7571.0
            })
            .collect();
        (user, sats)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn decomposition_reconstructs_inverse(sig in proptest::collection::vec(0.1f64..10.0, 2..9)) {
            let toa = ToaStats::new(sig.iter().map(|s| s * 1e-18).collect(), 0);
            let split = inv_r_decomposition(&toa).unwrap();
            let direct = build_r(&toa).unwrap().try_inverse().unwrap();
            let err = (split.reconstruct() - &direct).norm() / direct.norm();
            prop_assert!(err <= 1e-10);
            let sv = split.h.clone().svd(false, false).singular_values;
            let mut s: Vec<f64> = sv.iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            if s.len() > 1 {
                prop_assert!(s[1] <= 1e-12 * s[0]);
            }
        }

        #[test]
        fn decomposed_total_matches_direct(
            seeds in proptest::collection::vec(0.05f64..1.0, 16),
            sig in proptest::collection::vec(0.1f64..10.0, 8),
            n in 4usize..9,
        ) {
            let (user, sats) = random_geometry(n, &seeds);
            let toa = ToaStats::new(sig[..n].iter().map(|s| s * 1e-18).collect(), 0);
            let g = build_a(&user, &sats, 0).unwrap();
            let r = build_r(&toa).unwrap();
            if let Ok(direct) = tdoa_crlb(&g, &r) {
                let (ty, corr) = crlb_decomposed(&g, &toa).unwrap();
                prop_assert!(corr >= -1e-12 * ty);
                let total = ((ty + corr).sqrt()) * 1e3;
                prop_assert!((total / direct - 1.0).abs() < 1e-8);
            }
        }

        #[test]
        fn homogeneous_and_monotone(
            seeds in proptest::collection::vec(0.05f64..1.0, 12),
            sig in proptest::collection::vec(0.1f64..10.0, 6),
            alpha in 0.01f64..100.0,
            which in 0usize..6,
        ) {
            let (user, sats) = random_geometry(6, &seeds);
            let sigma: Vec<f64> = sig.iter().map(|s| s * 1e-18).collect();
            let g = build_a(&user, &sats, 0).unwrap();
            let base = match tdoa_crlb(&g, &build_r(&ToaStats::new(sigma.clone(), 0)).unwrap()) {
                Ok(v) => v,
                Err(_) => return Ok(()),
            };
            let scaled: Vec<f64> = sigma.iter().map(|s| s * alpha).collect();
            let c2 = tdoa_crlb(&g, &build_r(&ToaStats::new(scaled, 0)).unwrap()).unwrap();
            prop_assert!((c2 / (base * alpha.sqrt()) - 1.0).abs() < 1e-9);

            let mut better = sigma.clone();
            better[which] /= 1.1;
            let c3 = tdoa_crlb(&g, &build_r(&ToaStats::new(better, 0)).unwrap()).unwrap();
            prop_assert!(c3 < base);
        }

        #[test]
        fn permuting_non_reference_anchors(
            seeds in proptest::collection::vec(0.05f64..1.0, 10),
            sig in proptest::collection::vec(0.1f64..10.0, 5),
        ) {
            let (user, sats) = random_geometry(5, &seeds);
            let sigma: Vec<f64> = sig.iter().map(|s| s * 1e-18).collect();
            let base = tdoa_crlb(&build_a(&user, &sats, 0).unwrap(), &build_r(&ToaStats::new(sigma.clone(), 0)).unwrap());
            let order = [0usize, 3, 1, 4, 2];
            let ps: Vec<_> = order.iter().map(|&i| sats[i]).collect();
            let pv: Vec<_> = order.iter().map(|&i| sigma[i]).collect();
            let perm = tdoa_crlb(&build_a(&user, &ps, 0).unwrap(), &build_r(&ToaStats::new(pv, 0)).unwrap());
            if let (Ok(a), Ok(b)) = (base, perm) {
                prop_assert!((a / b - 1.0).abs() < 1e-10);
            }
        }
    }
}
