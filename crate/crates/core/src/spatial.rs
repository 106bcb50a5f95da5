//! Spatial part of the two-particle wavefunction and the region factor g.
//!
//! The packet is a separable product of one-dimensional Gaussians, one per
//! particle and axis, so `|φ(r1, r2)|²` is a product of six normal densities.
//! The probability that particle 1 is found in region A and particle 2 in
//! region B is estimated three ways: closed form (boxes only), tensor
//! Gauss–Legendre quadrature, and Monte Carlo sampling from `|φ|²`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::spin::{singlet_correlation, Direction};

pub type Vec3 = [f64; 3];

/// Default tensor Gauss–Legendre order.
pub const DEFAULT_QUADRATURE_ORDER: usize = 32;

/// Successive quadrature orders differing by more than this raise a warning.
pub const QUADRATURE_CONVERGENCE_TOL: f64 = 1e-4;

/// Quadrature ignores density further than this many widths from a center.
pub const TAIL_CUTOFF_SIGMAS: f64 = 8.0;

/// Samples per Monte Carlo work chunk; each chunk owns one RNG stream.
pub const MC_CHUNK_SIZE: u64 = 1 << 16;

/// Largest g for which a local hidden-variable model reproduces `g·E_spin`
/// at every CHSH setting choice.
pub const FORGEABILITY_THRESHOLD: f64 = FRAC_1_SQRT_2;

/// Separable Gaussian spatial wavefunction of a particle pair, in units with
/// ħ = m = 1 and zero mean momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPacket {
    centers: [Vec3; 2],
    initial_widths: [Vec3; 2],
    time: f64,
}

impl GaussianPacket {
    pub fn new(centers: [Vec3; 2], initial_widths: [Vec3; 2], time: f64) -> Result<Self> {
        if centers.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPacket("centers must be finite".into()));
        }
        if initial_widths
            .iter()
            .flatten()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::InvalidPacket("widths must be finite and positive".into()));
        }
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::InvalidPacket(format!(
                "time {time} must be finite and non-negative"
            )));
        }
        Ok(Self {
            centers,
            initial_widths,
            time,
        })
    }

    /// Both particles centered at the origin with unit widths at t = 0.
    pub fn standard() -> Self {
        Self::new([[0.0; 3]; 2], [[1.0; 3]; 2], 0.0).expect("valid")
    }

    pub fn centers(&self) -> &[Vec3; 2] {
        &self.centers
    }

    pub fn initial_widths(&self) -> &[Vec3; 2] {
        &self.initial_widths
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Width of particle `k` along axis `d` after free spreading.
    pub fn width(&self, k: usize, d: usize) -> f64 {
        spread_width(self.initial_widths[k][d], self.time)
    }

    pub fn widths(&self, k: usize) -> Vec3 {
        [self.width(k, 0), self.width(k, 1), self.width(k, 2)]
    }

    /// Position density of particle `k` alone.
    pub fn particle_density(&self, k: usize, r: Vec3) -> f64 {
        (0..3)
            .map(|d| normal_pdf(r[d], self.centers[k][d], self.width(k, d)))
            .product()
    }

    /// Integrates the packet's own density over a ±`half_span` σ box for
    /// each particle; should be 1.
    pub fn quadrature_norm(&self, half_span: f64, order: usize) -> f64 {
        let rule = GaussLegendre::new(order);
        (0..2)
            .map(|k| {
                let w = self.widths(k);
                let c = self.centers[k];
                let lo = [
                    c[0] - half_span * w[0],
                    c[1] - half_span * w[1],
                    c[2] - half_span * w[2],
                ];
                let hi = [
                    c[0] + half_span * w[0],
                    c[1] + half_span * w[1],
                    c[2] + half_span * w[2],
                ];
                rule.integrate_box3(lo, hi, |r| self.particle_density(k, r))
            })
            .product()
    }
}

/// `σ(t) = σ0 sqrt(1 + (t / (2σ0²))²)`.
pub fn spread_width(initial: f64, t: f64) -> f64 {
    let ratio = t / (2.0 * initial * initial);
    initial * (1.0 + ratio * ratio).sqrt()
}

fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let u = (x - mu) / sigma;
    (-0.5 * u * u).exp() / (sigma * (2.0 * PI).sqrt())
}

/// `|φ(r1, r2)|²`.
pub fn density(packet: &GaussianPacket, r1: Vec3, r2: Vec3) -> f64 {
    packet.particle_density(0, r1) * packet.particle_density(1, r2)
}

/// Free evolution by an additional time `t`; centers stay put, widths spread.
pub fn evolve(packet: &GaussianPacket, t: f64) -> Result<GaussianPacket> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "evolution time {t} must be finite and non-negative"
        )));
    }
    GaussianPacket::new(packet.centers, packet.initial_widths, packet.time + t)
}

/// A detector volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Box { center: Vec3, halfwidths: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

impl Region {
    pub fn new_box(center: Vec3, halfwidths: Vec3) -> Result<Self> {
        let r = Region::Box { center, halfwidths };
        r.validate()?;
        Ok(r)
    }

    pub fn new_sphere(center: Vec3, radius: f64) -> Result<Self> {
        let r = Region::Sphere { center, radius };
        r.validate()?;
        Ok(r)
    }

    /// Box spanning `center ± halfwidth` on every axis.
    pub fn cube(center: Vec3, halfwidth: f64) -> Result<Self> {
        Self::new_box(center, [halfwidth; 3])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Region::Box { center, halfwidths } => {
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidRegion("box center must be finite".into()));
                }
                if halfwidths.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
                    return Err(Error::InvalidRegion(
                        "box halfwidths must be finite and positive".into(),
                    ));
                }
            }
            Region::Sphere { center, radius } => {
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidRegion("sphere center must be finite".into()));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidRegion(
                        "sphere radius must be finite and positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Membership predicate; plays the role of the region projector.
    pub fn contains(&self, r: Vec3) -> bool {
        match self {
            Region::Box { center, halfwidths } => (0..3).all(|d| (r[d] - center[d]).abs() <= halfwidths[d]),
            Region::Sphere { center, radius } => {
                let d2: f64 = (0..3).map(|d| (r[d] - center[d]).powi(2)).sum();
                d2 <= radius * radius
            }
        }
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        match self {
            Region::Box { center, halfwidths } => (
                [
                    center[0] - halfwidths[0],
                    center[1] - halfwidths[1],
                    center[2] - halfwidths[2],
                ],
                [
                    center[0] + halfwidths[0],
                    center[1] + halfwidths[1],
                    center[2] + halfwidths[2],
                ],
            ),
            Region::Sphere { center, radius } => (
                [center[0] - radius, center[1] - radius, center[2] - radius],
                [center[0] + radius, center[1] + radius, center[2] + radius],
            ),
        }
    }

    pub fn is_box(&self) -> bool {
        matches!(self, Region::Box { .. })
    }

    /// Same shape and center with every halfwidth (or the radius) set to `size`.
    pub fn with_size(&self, size: f64) -> Result<Self> {
        match self {
            Region::Box { center, .. } => Region::new_box(*center, [size; 3]),
            Region::Sphere { center, .. } => Region::new_sphere(*center, size),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GMethod {
    Analytic,
    Quadrature,
    MonteCarlo,
}

/// An estimate of g together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: GMethod,
    /// Sample count for Monte Carlo, rule order for quadrature, 0 for analytic.
    pub samples_or_order: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_size: Option<u64>,
}

/// Normal mass of `[lo, hi]`, using erfc on the far tail to keep precision.
pub fn interval_mass(mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let s = sigma * std::f64::consts::SQRT_2;
    let a = (lo - mu) / s;
    let b = (hi - mu) / s;
    let m = if a >= 0.0 {
        0.5 * (libm::erfc(a) - libm::erfc(b))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b) - libm::erfc(-a))
    } else {
        0.5 * (libm::erf(b) - libm::erf(a))
    };
    m.clamp(0.0, 1.0)
}

/// Closed-form probability that particle `k` lies in a box region.
pub fn particle_mass_analytic(packet: &GaussianPacket, k: usize, region: &Region) -> Result<f64> {
    let Region::Box { center, halfwidths } = region else {
        return Err(Error::AnalyticUnavailable);
    };
    Ok((0..3)
        .map(|d| {
            interval_mass(
                packet.centers[k][d],
                packet.width(k, d),
                center[d] - halfwidths[d],
                center[d] + halfwidths[d],
            )
        })
        .product())
}

/// g for two box regions as a product of six one-axis masses.
pub fn g_analytic(packet: &GaussianPacket, region_a: &Region, region_b: &Region) -> Result<f64> {
    Ok(particle_mass_analytic(packet, 0, region_a)? * particle_mass_analytic(packet, 1, region_b)?)
}

/// Gauss–Legendre probability that particle `k` lies in `region`.
///
/// Boxes use the tensor rule over the region trimmed to the packet's
/// `±TAIL_CUTOFF_SIGMAS` window. Spheres use the same rule iterated along
/// chords, so the integrand stays smooth.
pub fn particle_mass_quadrature(
    packet: &GaussianPacket,
    k: usize,
    region: &Region,
    rule: &GaussLegendre,
) -> f64 {
    let window = |d: usize, lo: f64, hi: f64| {
        let c = packet.centers[k][d];
        let w = packet.width(k, d);
        (
            lo.max(c - TAIL_CUTOFF_SIGMAS * w),
            hi.min(c + TAIL_CUTOFF_SIGMAS * w),
        )
    };
    match region {
        Region::Box { .. } => {
            let (blo, bhi) = region.bounding_box();
            let mut lo = [0.0; 3];
            let mut hi = [0.0; 3];
            for d in 0..3 {
                (lo[d], hi[d]) = window(d, blo[d], bhi[d]);
                if hi[d] <= lo[d] {
                    return 0.0;
                }
            }
            rule.integrate_box3(lo, hi, |r| packet.particle_density(k, r))
        }
        Region::Sphere { center, radius } => {
            // Nodes along a chord of half-length `half`, placed through
            // x = c + half·sin θ to absorb the square-root endpoint behavior.
            let axis = |d: usize, half: f64| -> Vec<(f64, f64)> {
                let c = center[d];
                let (lo, hi) = window(d, c - half, c + half);
                if hi <= lo || half <= 0.0 {
                    return Vec::new();
                }
                let angle = |x: f64| ((x - c) / half).clamp(-1.0, 1.0).asin();
                rule.mapped(angle(lo), angle(hi))
                    .into_iter()
                    .map(|(t, w)| (c + half * t.sin(), w * half * t.cos()))
                    .collect()
            };
            let r2 = radius * radius;
            let mut total = 0.0;
            for (x, wx) in axis(0, *radius) {
                let dx = x - center[0];
                for (y, wy) in axis(1, (r2 - dx * dx).max(0.0).sqrt()) {
                    let dy = y - center[1];
                    let inner: f64 = axis(2, (r2 - dx * dx - dy * dy).max(0.0).sqrt())
                        .into_iter()
                        .map(|(z, wz)| wz * packet.particle_density(k, [x, y, z]))
                        .sum();
                    total += wx * wy * inner;
                }
            }
            total
        }
    }
}

/// Result of a quadrature evaluation of g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureG {
    /// Value clamped to `[0, 1]`.
    pub value: f64,
    pub unclamped: f64,
    pub order: usize,
    /// Difference against the half-order rule.
    pub delta: f64,
    pub converged: bool,
}

impl QuadratureG {
    pub fn estimate(&self) -> GEstimate {
        GEstimate {
            value: self.value,
            std_error: 0.0,
            method: GMethod::Quadrature,
            samples_or_order: self.order as u64,
            chunk_size: None,
        }
    }
}

fn g_quadrature_raw(packet: &GaussianPacket, region_a: &Region, region_b: &Region, order: usize) -> f64 {
    let rule = GaussLegendre::new(order);
    particle_mass_quadrature(packet, 0, region_a, &rule)
        * particle_mass_quadrature(packet, 1, region_b, &rule)
}

/// g by tensor Gauss–Legendre quadrature of `|φ|²` over `A × B`.
///
/// The six-dimensional product rule factorizes across the two particles
/// because both the density and the region indicator do.
pub fn g_quadrature(
    packet: &GaussianPacket,
    region_a: &Region,
    region_b: &Region,
    order: usize,
) -> Result<QuadratureG> {
    if order < 4 {
        return Err(Error::InvalidArgument(format!(
            "quadrature order {order} must be at least 4"
        )));
    }
    let unclamped = g_quadrature_raw(packet, region_a, region_b, order);
    let coarse = g_quadrature_raw(packet, region_a, region_b, order.div_ceil(2));
    let delta = (unclamped - coarse).abs();
    let converged = delta <= QUADRATURE_CONVERGENCE_TOL;
    if !converged {
        log::warn!("quadrature g not converged: order {order} differs from half order by {delta:.3e}");
    }
    if unclamped < 0.0 {
        log::debug!("clamping quadrature g {unclamped:e} to 0");
    }
    Ok(QuadratureG {
        value: unclamped.clamp(0.0, 1.0),
        unclamped,
        order,
        delta,
        converged,
    })
}

fn draw_position<R: rand::Rng>(packet: &GaussianPacket, k: usize, rng: &mut R) -> Vec3 {
    let mut r = [0.0; 3];
    for (d, slot) in r.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(rng);
        *slot = packet.centers[k][d] + packet.width(k, d) * z;
    }
    r
}

/// Monte Carlo estimate of g: the fraction of `(r1, r2) ~ |φ|²` draws with
/// `r1 ∈ A` and `r2 ∈ B`.
///
/// Work is split into fixed chunks of [`MC_CHUNK_SIZE`] samples and chunk
/// `c` draws from ChaCha8 stream `c` of `seed`, so the result does not depend
/// on the thread count.
pub fn g_monte_carlo(
    packet: &GaussianPacket,
    region_a: &Region,
    region_b: &Region,
    n: u64,
    seed: u64,
) -> Result<GEstimate> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo needs at least 1000 samples, got {n}"
        )));
    }
    let chunks = n.div_ceil(MC_CHUNK_SIZE);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let len = MC_CHUNK_SIZE.min(n - c * MC_CHUNK_SIZE);
            let mut hits = 0u64;
            for _ in 0..len {
                let r1 = draw_position(packet, 0, &mut rng);
                let r2 = draw_position(packet, 1, &mut rng);
                if region_a.contains(r1) && region_b.contains(r2) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let value = hits as f64 / n as f64;
    Ok(GEstimate {
        value,
        std_error: (value * (1.0 - value) / n as f64).sqrt(),
        method: GMethod::MonteCarlo,
        samples_or_order: n,
        chunk_size: Some(MC_CHUNK_SIZE),
    })
}

/// Single-particle detection probabilities `(gA, gB)` with `g = gA·gB`.
///
/// Closed form for boxes, quadrature otherwise.
pub fn particle_masses(
    packet: &GaussianPacket,
    region_a: &Region,
    region_b: &Region,
    order: usize,
) -> (f64, f64) {
    let rule = GaussLegendre::new(order);
    let mass = |k: usize, region: &Region| match particle_mass_analytic(packet, k, region) {
        Ok(m) => m,
        Err(_) => particle_mass_quadrature(packet, k, region, &rule).clamp(0.0, 1.0),
    };
    (mass(0, region_a), mass(1, region_b))
}

/// `g · E_spin(a, b)`, the correlation seen by localized detectors.
pub fn effective_correlation(g: f64, a: &Direction, b: &Direction) -> Result<f64> {
    if !(g.is_finite() && (-1e-9..=1.0 + 1e-9).contains(&g)) {
        return Err(Error::InvalidArgument(format!("g = {g} outside [0, 1]")));
    }
    Ok(g.clamp(0.0, 1.0) * singlet_correlation(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detectability {
    /// A local model reproduces every CHSH-relevant correlation.
    Forgeable,
    /// The correlations can violate CHSH, so an eavesdropper may be exposed.
    ViolationPossible,
}

pub fn classify_detectability(g: f64) -> Detectability {
    if g <= FORGEABILITY_THRESHOLD {
        Detectability::Forgeable
    } else {
        Detectability::ViolationPossible
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::tsirelson_settings;
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    // erf(1/√2)^6, the ±1σ box mass for both particles.
    const ONE_SIGMA_G: f64 = 0.101_237_01;

    fn one_sigma_boxes() -> (Region, Region) {
        (
            Region::cube([0.0; 3], 1.0).unwrap(),
            Region::cube([0.0; 3], 1.0).unwrap(),
        )
    }

    #[test]
    fn density_at_center() {
        let p = GaussianPacket::standard();
        let want = (2.0 * PI).powi(-3);
        assert!((density(&p, [0.0; 3], [0.0; 3]) - want).abs() < 1e-15);
        assert!((want - 0.004_031_44).abs() < 1e-8);
    }

    #[test]
    fn density_reflection_symmetry() {
        let p = GaussianPacket::new(
            [[1.0, -2.0, 0.5], [3.0, 0.0, -1.0]],
            [[0.5, 1.0, 2.0], [1.5, 0.7, 1.0]],
            0.3,
        )
        .unwrap();
        let r1 = [1.4, -1.1, 0.9];
        let r2 = [2.2, 0.3, -2.5];
        let reflect = |r: Vec3, c: Vec3| [2.0 * c[0] - r[0], 2.0 * c[1] - r[1], 2.0 * c[2] - r[2]];
        let a = density(&p, r1, r2);
        let b = density(&p, reflect(r1, p.centers()[0]), reflect(r2, p.centers()[1]));
        assert!((a - b).abs() < 1e-15 * a.max(1.0));
    }

    #[test]
    fn normalization_by_quadrature() {
        let p = GaussianPacket::new(
            [[1.0, 0.0, -2.0], [0.0, 5.0, 0.0]],
            [[0.3, 1.0, 2.0], [1.0, 1.0, 0.4]],
            1.5,
        )
        .unwrap();
        assert!((p.quadrature_norm(8.0, 32) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn analytic_examples() {
        let p = GaussianPacket::standard();
        let big = Region::cube([0.0; 3], 1e3).unwrap();
        assert!((g_analytic(&p, &big, &big).unwrap() - 1.0).abs() < 1e-12);
        let (a, b) = one_sigma_boxes();
        let g = g_analytic(&p, &a, &b).unwrap();
        assert!((g - libm::erf(FRAC_1_SQRT_2).powi(6)).abs() < 1e-15);
        assert!((g - ONE_SIGMA_G).abs() < 1e-6);
        let octant = Region::cube([1e3; 3], 1e3).unwrap();
        assert!((g_analytic(&p, &octant, &octant).unwrap() - 0.015625).abs() < 1e-12);
    }

    #[test]
    fn analytic_rejects_spheres() {
        let p = GaussianPacket::standard();
        let s = Region::new_sphere([0.0; 3], 1.0).unwrap();
        let (a, _) = one_sigma_boxes();
        assert!(matches!(g_analytic(&p, &s, &a), Err(Error::AnalyticUnavailable)));
    }

    #[test]
    fn degenerate_regions_rejected() {
        assert!(Region::new_box([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(Region::new_sphere([0.0; 3], 0.0).is_err());
        assert!(Region::new_sphere([f64::NAN, 0.0, 0.0], 1.0).is_err());
        assert!(GaussianPacket::new([[0.0; 3]; 2], [[1.0, 1.0, -1.0], [1.0; 3]], 0.0).is_err());
        assert!(GaussianPacket::new([[0.0; 3]; 2], [[1.0; 3]; 2], -1.0).is_err());
    }

    #[test]
    fn quadrature_matches_analytic_for_boxes() {
        let p = GaussianPacket::standard();
        let (a, b) = one_sigma_boxes();
        let q = g_quadrature(&p, &a, &b, 32).unwrap();
        assert!((q.value - g_analytic(&p, &a, &b).unwrap()).abs() < 1e-6);
        assert!(q.converged);
        assert!(g_quadrature(&p, &a, &b, 3).is_err());
    }

    #[test]
    fn quadrature_sphere_limits() {
        let p = GaussianPacket::standard();
        let tiny = Region::new_sphere([0.0; 3], 1e-9).unwrap();
        let huge = Region::new_sphere([0.0; 3], 1e3).unwrap();
        assert!(g_quadrature(&p, &tiny, &tiny, 32).unwrap().value < 1e-12);
        assert!((g_quadrature(&p, &huge, &huge, 32).unwrap().value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadrature_centered_sphere_matches_chi_cdf() {
        // P(|r| <= R) for a standard 3-D normal: erf(R/√2) - √(2/π)·R·exp(-R²/2).
        let p = GaussianPacket::standard();
        let rule = GaussLegendre::new(32);
        for radius in [0.3, 1.0, 1.5, 2.5, 4.0] {
            let want =
                libm::erf(radius / SQRT_2) - (2.0 / PI).sqrt() * radius * (-radius * radius / 2.0).exp();
            let got = particle_mass_quadrature(&p, 0, &Region::new_sphere([0.0; 3], radius).unwrap(), &rule);
            assert!((got - want).abs() < 1e-6, "R={radius} got={got} want={want}");
        }
        let s = Region::new_sphere([0.0; 3], 1.5).unwrap();
        assert!(g_quadrature(&p, &s, &s, 32).unwrap().converged);
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let p = GaussianPacket::standard();
        let (a, b) = one_sigma_boxes();
        let est = g_monte_carlo(&p, &a, &b, 1_000_000, 7).unwrap();
        assert!((est.std_error - 3.0e-4).abs() < 2e-5);
        assert!((est.value - ONE_SIGMA_G).abs() < 3.0 * est.std_error);
    }

    #[test]
    fn monte_carlo_deterministic_and_validated() {
        let p = GaussianPacket::standard();
        let (a, b) = one_sigma_boxes();
        let x = g_monte_carlo(&p, &a, &b, 100_000, 99).unwrap();
        let y = g_monte_carlo(&p, &a, &b, 100_000, 99).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.value.to_bits(), y.value.to_bits());
        assert!(g_monte_carlo(&p, &a, &b, 999, 1).is_err());
        let tiny = Region::new_sphere([0.0; 3], 1e-9).unwrap();
        assert_eq!(g_monte_carlo(&p, &tiny, &b, 10_000, 1).unwrap().value, 0.0);
    }

    #[test]
    fn evolution_examples() {
        let p = GaussianPacket::standard();
        assert_eq!(evolve(&p, 0.0).unwrap(), p);
        let q = evolve(&p, 2.0).unwrap();
        assert!((q.width(0, 0) - 2f64.sqrt()).abs() < 1e-15);
        assert!(evolve(&p, -1.0).is_err());
        // composition: evolving twice equals evolving once by the sum
        let r = evolve(&evolve(&p, 0.7).unwrap(), 1.3).unwrap();
        assert!((r.width(1, 2) - q.width(1, 2)).abs() < 1e-15);
    }

    #[test]
    fn g_decreases_under_spreading() {
        let p = GaussianPacket::standard();
        let (a, b) = one_sigma_boxes();
        let mut prev = f64::INFINITY;
        for k in 0..=40 {
            let t = 0.25 * k as f64;
            let g = g_analytic(&evolve(&p, t).unwrap(), &a, &b).unwrap();
            assert!(g <= prev + 1e-15, "t={t}");
            prev = g;
        }
    }

    #[test]
    fn effective_correlation_cases() {
        let t = tsirelson_settings();
        let (a, b) = (t.alice()[0], t.bob()[0]);
        assert_eq!(
            effective_correlation(1.0, &a, &b).unwrap(),
            singlet_correlation(&a, &b)
        );
        assert_eq!(effective_correlation(0.0, &a, &b).unwrap(), 0.0);
        assert!(effective_correlation(1.1, &a, &b).is_err());
        assert!(effective_correlation(-0.1, &a, &b).is_err());
        let g = FRAC_1_SQRT_2;
        let e: Vec<f64> = t
            .chsh_block()
            .unwrap()
            .pairs()
            .iter()
            .map(|&(i, j)| effective_correlation(g, &t.alice()[i], &t.bob()[j]).unwrap())
            .collect();
        let s = crate::spin::chsh_statistic(e[0], e[1], e[2], e[3]).unwrap();
        assert!((s.abs() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn detectability_boundary() {
        assert_eq!(classify_detectability(0.70), Detectability::Forgeable);
        assert_eq!(classify_detectability(0.71), Detectability::ViolationPossible);
        assert_eq!(classify_detectability(FRAC_1_SQRT_2), Detectability::Forgeable);
    }

    fn packet() -> impl Strategy<Value = GaussianPacket> {
        (
            proptest::array::uniform3(-2.0f64..2.0),
            proptest::array::uniform3(-2.0f64..2.0),
            proptest::array::uniform3(0.3f64..2.0),
            proptest::array::uniform3(0.3f64..2.0),
            0.0f64..3.0,
        )
            .prop_map(|(c1, c2, s1, s2, t)| GaussianPacket::new([c1, c2], [s1, s2], t).unwrap())
    }

    fn boxed() -> impl Strategy<Value = Region> {
        (
            proptest::array::uniform3(-2.0f64..2.0),
            proptest::array::uniform3(0.1f64..3.0),
        )
            .prop_map(|(c, h)| Region::new_box(c, h).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bounds_and_factorization(p in packet(), a in boxed(), b in boxed()) {
            let g = g_analytic(&p, &a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
            let ga = particle_mass_analytic(&p, 0, &a).unwrap();
            let gb = particle_mass_analytic(&p, 1, &b).unwrap();
            prop_assert!((g - ga * gb).abs() < 1e-9);
            let q = g_quadrature(&p, &a, &b, 16).unwrap();
            prop_assert!(q.unclamped >= -1e-9 && q.unclamped <= 1.0 + 1e-9);
        }

        #[test]
        fn containment_monotone(p in packet(), a in boxed(), b in boxed(), grow in proptest::array::uniform3(0.0f64..1.0)) {
            let enlarge = |r: &Region| match r {
                Region::Box { center, halfwidths } => Region::new_box(
                    *center,
                    [halfwidths[0] + grow[0], halfwidths[1] + grow[1], halfwidths[2] + grow[2]],
                ).unwrap(),
                _ => unreachable!(),
            };
            let g = g_analytic(&p, &a, &b).unwrap();
            let g2 = g_analytic(&p, &enlarge(&a), &enlarge(&b)).unwrap();
            prop_assert!(g2 >= g - 1e-9);
        }
    }
}
