//! Local hidden-variable forgery.
//!
//! Eve's hidden variable λ indexes a deterministic local strategy: a fixed
//! output for each of Alice's settings and each of Bob's. A target
//! correlation matrix is reproducible by Eve exactly when it lies in the
//! convex hull of the strategies' correlation matrices, which is decided here
//! by linear programming. Infeasible targets come with a separating
//! Bell-type inequality read off the phase-1 dual.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpError, Outcome};
use crate::spin::{CorrelationMatrix, Direction, SettingSet};

/// Upper limit on settings per party during enumeration.
pub const MAX_SETTINGS: usize = 4;

/// Reconstructed correlations must match targets to this accuracy.
pub const RESIDUAL_TOL: f64 = 1e-7;

/// Bisection stops once the bracket is narrower than this.
pub const BISECTION_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alphabet {
    /// Outputs ±1; every trial clicks.
    #[serde(rename = "pm")]
    PlusMinus,
    /// Outputs ±1 or 0, where 0 is a no-click.
    #[serde(rename = "pm0")]
    PlusMinusNull,
}

impl Alphabet {
    pub fn values(self) -> &'static [i8] {
        match self {
            Alphabet::PlusMinus => &[1, -1],
            Alphabet::PlusMinusNull => &[1, -1, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicStrategy {
    pub alice: Vec<i8>,
    pub bob: Vec<i8>,
}

impl DeterministicStrategy {
    pub fn product(&self, i: usize, j: usize) -> f64 {
        f64::from(self.alice[i] * self.bob[j])
    }

    pub fn coincidence(&self, i: usize, j: usize) -> f64 {
        if self.alice[i] != 0 && self.bob[j] != 0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Every deterministic strategy for `n_alice × n_bob` settings over `alphabet`.
pub fn enumerate_strategies(
    n_alice: usize,
    n_bob: usize,
    alphabet: Alphabet,
) -> Result<Vec<DeterministicStrategy>> {
    for n in [n_alice, n_bob] {
        if !(1..=MAX_SETTINGS).contains(&n) {
            return Err(Error::InvalidArgument(format!(
                "setting count {n} outside 1..={MAX_SETTINGS}"
            )));
        }
    }
    let symbols = alphabet.values();
    let words = |len: usize| -> Vec<Vec<i8>> {
        let mut out = vec![Vec::with_capacity(len)];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|w| {
                    symbols.iter().map(move |&s| {
                        let mut w = w.clone();
                        w.push(s);
                        w
                    })
                })
                .collect();
        }
        out
    };
    let bob_words = words(n_bob);
    Ok(words(n_alice)
        .into_iter()
        .flat_map(|a| {
            bob_words.iter().map(move |b| DeterministicStrategy {
                alice: a.clone(),
                bob: b.clone(),
            })
        })
        .collect())
}

/// A probability measure over deterministic strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyMixture {
    components: Vec<(DeterministicStrategy, f64)>,
}

impl StrategyMixture {
    pub fn new(components: Vec<(DeterministicStrategy, f64)>) -> Result<Self> {
        let Some((first, _)) = components.first() else {
            return Err(Error::InvalidArgument(
                "mixture needs at least one strategy".into(),
            ));
        };
        let shape = (first.alice.len(), first.bob.len());
        if components
            .iter()
            .any(|(s, _)| (s.alice.len(), s.bob.len()) != shape)
        {
            return Err(Error::InvalidArgument(
                "mixture strategies disagree on setting counts".into(),
            ));
        }
        if components.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "mixture weights must be non-negative".into(),
            ));
        }
        let total: f64 = components.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(Self { components })
    }

    pub fn single(strategy: DeterministicStrategy) -> Self {
        Self {
            components: vec![(strategy, 1.0)],
        }
    }

    pub fn components(&self) -> &[(DeterministicStrategy, f64)] {
        &self.components
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = &self.components[0].0;
        (s.alice.len(), s.bob.len())
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.components.iter().map(|(s, w)| w * s.product(i, j)).sum()
    }

    pub fn coincidence_rate(&self, i: usize, j: usize) -> f64 {
        self.components.iter().map(|(s, w)| w * s.coincidence(i, j)).sum()
    }

    pub fn correlations(&self) -> CorrelationMatrix {
        let (na, nb) = self.shape();
        let entries = (0..na)
            .map(|i| (0..nb).map(|j| self.correlation(i, j).clamp(-1.0, 1.0)).collect())
            .collect();
        CorrelationMatrix::new(entries).expect("mixture correlations are bounded")
    }
}

/// Correlation targets; `None` entries are left free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMatrix {
    entries: Vec<Vec<Option<f64>>>,
}

impl TargetMatrix {
    pub fn new(entries: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let cols = entries.first().map_or(0, Vec::len);
        if entries.is_empty() || cols == 0 || entries.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidCorrelation(
                "target matrix must be rectangular and non-empty".into(),
            ));
        }
        if entries
            .iter()
            .flatten()
            .flatten()
            .any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9)
        {
            return Err(Error::InvalidCorrelation("targets must lie in [-1, 1]".into()));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i][j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.entries.len(), self.entries[0].len())
    }

    fn constrained(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.entries.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    out.push((i, j, *v));
                }
            }
        }
        out
    }
}

impl From<&CorrelationMatrix> for TargetMatrix {
    fn from(m: &CorrelationMatrix) -> Self {
        Self {
            entries: m
                .rows()
                .iter()
                .map(|r| r.iter().map(|&v| Some(v)).collect())
                .collect(),
        }
    }
}

/// A linear inequality `Σ c_ij E_ij + Σ d_ij R_ij ≤ bound` satisfied by every
/// local strategy (`E` correlations, `R` coincidence rates) but violated by
/// the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellCertificate {
    pub coefficients: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_coefficients: Option<Vec<Vec<f64>>>,
    pub bound: f64,
    /// Functional evaluated on the targets.
    pub target_value: f64,
    /// Largest functional value over all enumerated strategies.
    pub max_local_value: f64,
}

impl BellCertificate {
    pub fn violation(&self) -> f64 {
        self.target_value - self.bound
    }

    pub fn evaluate_strategy(&self, s: &DeterministicStrategy) -> f64 {
        let mut v = 0.0;
        for (i, row) in self.coefficients.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                v += c * s.product(i, j);
            }
        }
        if let Some(rates) = &self.rate_coefficients {
            for (i, row) in rates.iter().enumerate() {
                for (j, d) in row.iter().enumerate() {
                    v += d * s.coincidence(i, j);
                }
            }
        }
        v
    }

    pub fn evaluate_correlations(&self, m: &CorrelationMatrix) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, c)| c * m.get(i, j)))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FeasibilityResult {
    Feasible {
        mixture: StrategyMixture,
        max_residual: f64,
    },
    Infeasible {
        certificate: BellCertificate,
    },
}

impl FeasibilityResult {
    pub fn is_feasible(&self) -> bool {
        matches!(self, FeasibilityResult::Feasible { .. })
    }
}

/// Decides whether a local model reproduces `targets` (and, with
/// `rate_constraint = Some(r)`, a coincidence probability `r` on every
/// constrained pair).
pub fn lhv_feasibility(
    targets: &TargetMatrix,
    settings: &SettingSet,
    alphabet: Alphabet,
    rate_constraint: Option<f64>,
) -> Result<FeasibilityResult> {
    let (na, nb) = settings.shape();
    if targets.shape() != (na, nb) {
        return Err(Error::InvalidArgument(format!(
            "targets are {:?} but settings are {na}x{nb}",
            targets.shape()
        )));
    }
    if let Some(r) = rate_constraint {
        if alphabet != Alphabet::PlusMinusNull {
            return Err(Error::InvalidArgument(
                "a rate constraint needs the pm0 alphabet".into(),
            ));
        }
        if !(r.is_finite() && (0.0..=1.0).contains(&r)) {
            return Err(Error::InvalidArgument(format!(
                "rate constraint {r} outside [0, 1]"
            )));
        }
    }
    let strategies = enumerate_strategies(na, nb, alphabet)?;
    let constrained = targets.constrained();

    let mut a = Vec::new();
    let mut b = Vec::new();
    for &(i, j, t) in &constrained {
        a.push(strategies.iter().map(|s| s.product(i, j)).collect::<Vec<_>>());
        b.push(t);
    }
    if let Some(r) = rate_constraint {
        for &(i, j, _) in &constrained {
            a.push(strategies.iter().map(|s| s.coincidence(i, j)).collect());
            b.push(r);
        }
    }
    a.push(vec![1.0; strategies.len()]);
    b.push(1.0);

    match LinearProgram::feasibility(a, b)?.solve()? {
        Outcome::Optimal(sol) => {
            let components: Vec<_> = strategies
                .into_iter()
                .zip(sol.x)
                .filter(|(_, w)| *w > 0.0)
                .collect();
            let total: f64 = components.iter().map(|(_, w)| w).sum();
            let components = components.into_iter().map(|(s, w)| (s, w / total)).collect();
            let mixture = StrategyMixture::new(components)?;
            let mut max_residual: f64 = 0.0;
            for &(i, j, t) in &constrained {
                max_residual = max_residual.max((mixture.correlation(i, j) - t).abs());
                if let Some(r) = rate_constraint {
                    max_residual = max_residual.max((mixture.coincidence_rate(i, j) - r).abs());
                }
            }
            if max_residual > RESIDUAL_TOL {
                return Err(LpError::Numerical(format!(
                    "mixture residual {max_residual:e} exceeds tolerance"
                ))
                .into());
            }
            Ok(FeasibilityResult::Feasible {
                mixture,
                max_residual,
            })
        }
        Outcome::Infeasible(farkas) => {
            let certificate =
                certificate_from_dual(&farkas.y, &constrained, rate_constraint, na, nb, &strategies)?;
            Ok(FeasibilityResult::Infeasible { certificate })
        }
        Outcome::Unbounded => Err(LpError::Numerical("feasibility problem reported unbounded".into()).into()),
    }
}

/// Turns a Farkas vector into a normalized Bell inequality and re-checks it
/// against every strategy.
fn certificate_from_dual(
    y: &[f64],
    constrained: &[(usize, usize, f64)],
    rate: Option<f64>,
    na: usize,
    nb: usize,
    strategies: &[DeterministicStrategy],
) -> Result<BellCertificate> {
    let k = constrained.len();
    let scale = y[..y.len() - 1].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale <= 0.0 {
        return Err(LpError::Numerical("degenerate dual certificate".into()).into());
    }
    let mut coefficients = vec![vec![0.0; nb]; na];
    for (row, &(i, j, _)) in constrained.iter().enumerate() {
        coefficients[i][j] = y[row] / scale;
    }
    let rate_coefficients = rate.map(|_| {
        let mut d = vec![vec![0.0; nb]; na];
        for (row, &(i, j, _)) in constrained.iter().enumerate() {
            d[i][j] = y[k + row] / scale;
        }
        d
    });
    let bound = -y[y.len() - 1] / scale;
    let mut certificate = BellCertificate {
        coefficients,
        rate_coefficients,
        bound,
        target_value: 0.0,
        max_local_value: f64::NEG_INFINITY,
    };
    certificate.target_value = constrained
        .iter()
        .map(|&(i, j, t)| certificate.coefficients[i][j] * t)
        .sum::<f64>()
        + match (&certificate.rate_coefficients, rate) {
            (Some(d), Some(r)) => constrained.iter().map(|&(i, j, _)| d[i][j] * r).sum(),
            _ => 0.0,
        };
    certificate.max_local_value = strategies
        .iter()
        .map(|s| certificate.evaluate_strategy(s))
        .fold(f64::NEG_INFINITY, f64::max);
    if certificate.max_local_value > certificate.bound + 1e-9 {
        return Err(LpError::Numerical(format!(
            "certificate fails on a local strategy ({} > {})",
            certificate.max_local_value, certificate.bound
        ))
        .into());
    }
    if certificate.violation() <= 1e-9 {
        return Err(LpError::Numerical(format!(
            "certificate violation margin {:e} too small",
            certificate.violation()
        ))
        .into());
    }
    Ok(certificate)
}

/// Outcome of the bisection for the largest forgeable scale factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSearch {
    pub scale: f64,
    /// Lowest scale probed that was infeasible (1 + ∞ if none).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infeasible_above: Option<f64>,
    pub lp_solves: usize,
}

/// Largest `v ∈ [0, 1]` for which `v·E_spin` on every setting pair admits a
/// local model.
pub fn max_forgeable_scale(
    settings: &SettingSet,
    alphabet: Alphabet,
    rate_constraint: Option<f64>,
) -> Result<f64> {
    forgeable_scale_search(settings, alphabet, rate_constraint).map(|s| s.scale)
}

pub fn forgeable_scale_search(
    settings: &SettingSet,
    alphabet: Alphabet,
    rate_constraint: Option<f64>,
) -> Result<ScaleSearch> {
    let spin = settings.singlet_correlations();
    let mut lp_solves = 0;
    let mut feasible_at = |v: f64| -> Result<bool> {
        lp_solves += 1;
        let targets = TargetMatrix::from(&spin.scaled(v));
        Ok(lhv_feasibility(&targets, settings, alphabet, rate_constraint)?.is_feasible())
    };
    if feasible_at(1.0)? {
        return Ok(ScaleSearch {
            scale: 1.0,
            infeasible_above: None,
            lp_solves: 1,
        });
    }
    if !feasible_at(0.0)? {
        return Err(Error::InvalidArgument(
            "zero correlations are not forgeable under this rate constraint".into(),
        ));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible_at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Feasibility is convex in v with v = 0 feasible, so everything below lo
    // must be feasible; probe a few points to catch solver trouble.
    for probe in [0.25, 0.5, 0.75, 0.999] {
        if !feasible_at(lo * probe)? {
            return Err(LpError::Numerical(format!(
                "feasibility not monotone: infeasible at {} below feasible {lo}",
                lo * probe
            ))
            .into());
        }
    }
    Ok(ScaleSearch {
        scale: lo,
        infeasible_above: Some(hi),
        lp_solves,
    })
}

/// Draws λ from a mixture and reports the outputs it fixes.
#[derive(Debug, Clone)]
pub struct ForgerySampler {
    mixture: StrategyMixture,
    index: WeightedIndex<f64>,
}

impl ForgerySampler {
    pub fn new(mixture: StrategyMixture) -> Result<Self> {
        let index = WeightedIndex::new(mixture.components().iter().map(|(_, w)| *w))
            .map_err(|e| Error::InvalidArgument(format!("mixture weights: {e}")))?;
        Ok(Self { mixture, index })
    }

    pub fn mixture(&self) -> &StrategyMixture {
        &self.mixture
    }

    pub fn sample<R: Rng + ?Sized>(&self, i: usize, j: usize, rng: &mut R) -> (i8, i8) {
        let (s, _) = &self.mixture.components()[self.index.sample(rng)];
        (s.alice[i], s.bob[j])
    }
}

pub fn sample_forged_outcomes<R: Rng + ?Sized>(
    mixture: &StrategyMixture,
    i: usize,
    j: usize,
    rng: &mut R,
) -> Result<(i8, i8)> {
    let (na, nb) = mixture.shape();
    if i >= na || j >= nb {
        return Err(Error::InvalidArgument(format!(
            "setting pair ({i}, {j}) outside {na}x{nb}"
        )));
    }
    Ok(ForgerySampler::new(mixture.clone())?.sample(i, j, rng))
}

/// One intercept-resend trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterceptResendTrial {
    pub alice: i8,
    pub bob: i8,
    pub eve_axis: Direction,
    pub eve_outcome: i8,
    /// Eve's most likely values of Alice's and Bob's outcomes.
    pub eve_guess: (i8, i8),
}

fn uniform_direction<R: Rng + ?Sized>(rng: &mut R) -> Direction {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let rho = (1.0 - z * z).max(0.0).sqrt();
    Direction::new(rho * phi.cos(), rho * phi.sin(), z).expect("unit vector")
}

fn spin_outcome<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> i8 {
    if rng.random::<f64>() < 0.5 * (1.0 + mean) {
        1
    } else {
        -1
    }
}

/// Eve measures particle 1 along a uniformly random axis `e`, gets `s = ±1`,
/// and resends spin `s·e` to Alice and `-s·e` to Bob.
pub fn intercept_resend_outcomes<R: Rng + ?Sized>(
    a: &Direction,
    b: &Direction,
    rng: &mut R,
) -> InterceptResendTrial {
    let e = uniform_direction(rng);
    let s: i8 = if rng.random::<bool>() { 1 } else { -1 };
    let mean_a = f64::from(s) * a.dot(&e);
    let mean_b = -f64::from(s) * b.dot(&e);
    let alice = spin_outcome(mean_a, rng);
    let bob = spin_outcome(mean_b, rng);
    let guess = |m: f64| if m >= 0.0 { 1 } else { -1 };
    InterceptResendTrial {
        alice,
        bob,
        eve_axis: e,
        eve_outcome: s,
        eve_guess: (guess(mean_a), guess(mean_b)),
    }
}

/// Closed form `-(a·b)/3` of the intercept-resend correlation.
pub fn intercept_resend_correlation(a: &Direction, b: &Direction) -> f64 {
    -a.dot(b) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{ekert_settings, single_settings, tsirelson_settings};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_strategies(2, 2, Alphabet::PlusMinus).unwrap().len(), 16);
        assert_eq!(enumerate_strategies(3, 3, Alphabet::PlusMinus).unwrap().len(), 64);
        let all = enumerate_strategies(3, 3, Alphabet::PlusMinusNull).unwrap();
        assert_eq!(all.len(), 729);
        let mut dedup = all.clone();
        dedup.sort_by(|x, y| (&x.alice, &x.bob).cmp(&(&y.alice, &y.bob)));
        dedup.dedup();
        assert_eq!(dedup.len(), 729);
        assert!(enumerate_strategies(5, 1, Alphabet::PlusMinus).is_err());
        assert!(enumerate_strategies(0, 1, Alphabet::PlusMinus).is_err());
    }

    #[test]
    fn zero_targets_feasible() {
        let t = tsirelson_settings();
        let r = lhv_feasibility(
            &TargetMatrix::from(&CorrelationMatrix::zeros(2, 2)),
            &t,
            Alphabet::PlusMinus,
            None,
        )
        .unwrap();
        let FeasibilityResult::Feasible {
            mixture,
            max_residual,
        } = r
        else {
            panic!("zero correlations must be local")
        };
        assert!(max_residual < RESIDUAL_TOL);
        for i in 0..2 {
            for j in 0..2 {
                assert!(mixture.correlation(i, j).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn singlet_at_tsirelson_is_infeasible_with_chsh_certificate() {
        let t = tsirelson_settings();
        let spin = t.singlet_correlations();
        let r = lhv_feasibility(&TargetMatrix::from(&spin), &t, Alphabet::PlusMinus, None).unwrap();
        let FeasibilityResult::Infeasible { certificate } = r else {
            panic!("singlet correlations violate CHSH")
        };
        assert!(certificate.violation() > 1e-9);
        for s in enumerate_strategies(2, 2, Alphabet::PlusMinus).unwrap() {
            assert!(certificate.evaluate_strategy(&s) <= certificate.bound + 1e-9);
        }
        assert!((spin.chsh(&t.chsh_block().unwrap()).unwrap().abs() - 2.0 * SQRT_2).abs() < 1e-12);
        // rescaled to local bound 2, the certificate is a CHSH expression
        let c = &certificate.coefficients;
        let scale = 2.0 / certificate.bound;
        let value = certificate.target_value * scale;
        assert!(
            (value - 2.0 * SQRT_2).abs() < 1e-9,
            "rescaled value {value}, coefficients {c:?}"
        );
        for row in c {
            for v in row {
                assert!((v.abs() * scale - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn half_singlet_is_feasible() {
        let t = tsirelson_settings();
        let targets = t.singlet_correlations().scaled(0.5);
        let r = lhv_feasibility(&TargetMatrix::from(&targets), &t, Alphabet::PlusMinus, None).unwrap();
        let FeasibilityResult::Feasible { mixture, .. } = r else {
            panic!("|S| = √2 is local")
        };
        for i in 0..2 {
            for j in 0..2 {
                assert!((mixture.correlation(i, j) - targets.get(i, j)).abs() < 1e-7);
            }
        }
    }

    /// Independent oracle: for 2x2 ±1 correlations the local set is cut out
    /// exactly by the eight CHSH variants (Fine's theorem).
    fn local_by_chsh_facets(m: &CorrelationMatrix) -> bool {
        let e = [m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1)];
        (0..4).all(|minus| {
            let s: f64 = (0..4).map(|k| if k == minus { -e[k] } else { e[k] }).sum();
            s.abs() <= 2.0 + 1e-12
        })
    }

    #[test]
    fn grid_agrees_with_chsh_facets() {
        let t = tsirelson_settings();
        let spin = t.singlet_correlations();
        for k in 0..=20 {
            let v = 0.05 * k as f64;
            if (v - FRAC_1_SQRT_2).abs() < 1e-3 {
                continue;
            }
            let m = spin.scaled(v);
            let lp = lhv_feasibility(&TargetMatrix::from(&m), &t, Alphabet::PlusMinus, None).unwrap();
            assert_eq!(lp.is_feasible(), local_by_chsh_facets(&m), "v = {v}");
        }
    }

    #[test]
    fn threshold_examples() {
        let v = max_forgeable_scale(&tsirelson_settings(), Alphabet::PlusMinus, None).unwrap();
        assert!((v - FRAC_1_SQRT_2).abs() < 1e-6, "{v}");
        assert_eq!(
            max_forgeable_scale(&single_settings(), Alphabet::PlusMinus, None).unwrap(),
            1.0
        );
        let ekert = max_forgeable_scale(&ekert_settings(), Alphabet::PlusMinus, None).unwrap();
        assert!(ekert <= FRAC_1_SQRT_2 + 1e-6);
    }

    #[test]
    fn rate_constraint_requires_null_alphabet() {
        let t = tsirelson_settings();
        let z = TargetMatrix::from(&CorrelationMatrix::zeros(2, 2));
        assert!(lhv_feasibility(&z, &t, Alphabet::PlusMinus, Some(0.5)).is_err());
        assert!(lhv_feasibility(&z, &t, Alphabet::PlusMinusNull, Some(1.5)).is_err());
        let r = lhv_feasibility(&z, &t, Alphabet::PlusMinusNull, Some(0.5)).unwrap();
        let FeasibilityResult::Feasible { mixture, .. } = r else {
            panic!()
        };
        assert!((mixture.coincidence_rate(1, 0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn free_entries_are_unconstrained() {
        let e = ekert_settings();
        let spin = e.singlet_correlations();
        let block = e.chsh_block().unwrap();
        let mut entries = vec![vec![None; 3]; 3];
        for (i, j) in block.pairs() {
            entries[i][j] = Some(0.6 * spin.get(i, j));
        }
        for (i, j) in e.key_pairs() {
            entries[i][j] = Some(-1.0);
        }
        let r = lhv_feasibility(
            &TargetMatrix::new(entries).unwrap(),
            &e,
            Alphabet::PlusMinus,
            None,
        )
        .unwrap();
        assert!(r.is_feasible());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let z = TargetMatrix::from(&CorrelationMatrix::zeros(3, 3));
        assert!(lhv_feasibility(&z, &tsirelson_settings(), Alphabet::PlusMinus, None).is_err());
    }

    #[test]
    fn sampler_basics() {
        let all_plus = DeterministicStrategy {
            alice: vec![1, 1],
            bob: vec![1, 1],
        };
        let m = StrategyMixture::single(all_plus);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_forged_outcomes(&m, 1, 0, &mut rng).unwrap(), (1, 1));
        }
        assert!(sample_forged_outcomes(&m, 2, 0, &mut rng).is_err());
    }

    #[test]
    fn forged_samples_match_targets_and_are_reproducible() {
        let t = tsirelson_settings();
        let targets = t.singlet_correlations().scaled(0.5);
        let FeasibilityResult::Feasible { mixture, .. } =
            lhv_feasibility(&TargetMatrix::from(&targets), &t, Alphabet::PlusMinus, None).unwrap()
        else {
            panic!()
        };
        let sampler = ForgerySampler::new(mixture).unwrap();
        let n = 100_000;
        for i in 0..2 {
            for j in 0..2 {
                let mut rng = ChaCha8Rng::seed_from_u64(5 + (2 * i + j) as u64);
                let sum: i64 = (0..n)
                    .map(|_| {
                        let (x, y) = sampler.sample(i, j, &mut rng);
                        i64::from(x * y)
                    })
                    .sum();
                let mean = sum as f64 / n as f64;
                let target = targets.get(i, j);
                let se = ((1.0 - target * target) / n as f64).sqrt();
                assert!((mean - target).abs() < 3.0 * se, "({i},{j}) {mean} vs {target}");
            }
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sampler.sample(0, 1, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn intercept_resend_statistics() {
        let a = Direction::in_xz_plane(30.0);
        let perp = Direction::in_xz_plane(120.0);
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (mut ab, mut sa, mut sb) = (0i64, 0i64, 0i64);
        for _ in 0..n {
            let t = intercept_resend_outcomes(&a, &a, &mut rng);
            ab += i64::from(t.alice * t.bob);
            sa += i64::from(t.alice);
            sb += i64::from(t.bob);
        }
        let nf = n as f64;
        let want = -1.0 / 3.0;
        assert!((ab as f64 / nf - want).abs() < 3.0 * ((1.0 - want * want) / nf).sqrt());
        assert!((sa as f64 / nf).abs() < 3.0 / nf.sqrt());
        assert!((sb as f64 / nf).abs() < 3.0 / nf.sqrt());
        let mut ab = 0i64;
        for _ in 0..n {
            let t = intercept_resend_outcomes(&a, &perp, &mut rng);
            ab += i64::from(t.alice * t.bob);
        }
        assert!((ab as f64 / nf).abs() < 3.0 / nf.sqrt());
    }

    #[test]
    fn intercept_resend_closed_form() {
        let z = Direction::in_xz_plane(0.0);
        assert!((intercept_resend_correlation(&z, &z) + 1.0 / 3.0).abs() < 1e-15);
        assert!(intercept_resend_correlation(&z, &Direction::in_xz_plane(90.0)).abs() < 1e-16);
        let t = tsirelson_settings();
        let e: Vec<f64> = t
            .chsh_block()
            .unwrap()
            .pairs()
            .iter()
            .map(|&(i, j)| intercept_resend_correlation(&t.alice()[i], &t.bob()[j]))
            .collect();
        let s = crate::spin::chsh_statistic(e[0], e[1], e[2], e[3]).unwrap();
        assert!((s.abs() - 2.0 * SQRT_2 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_average_oracle() {
        // ∫(a·e)(b·e) dΩ/4π = (a·b)/3 by midpoint quadrature in (cos θ, φ)
        let a = Direction::new(0.3, -0.2, 0.9).unwrap();
        let b = Direction::new(-0.5, 0.7, 0.1).unwrap();
        let (nz, nphi) = (400, 400);
        let mut acc = 0.0;
        for iz in 0..nz {
            let z = -1.0 + (iz as f64 + 0.5) * 2.0 / nz as f64;
            let rho = (1.0 - z * z).sqrt();
            for ip in 0..nphi {
                let phi = (ip as f64 + 0.5) * std::f64::consts::TAU / nphi as f64;
                let e = [rho * phi.cos(), rho * phi.sin(), z];
                let ae = a.x() * e[0] + a.y() * e[1] + a.z() * e[2];
                let be = b.x() * e[0] + b.y() * e[1] + b.z() * e[2];
                acc += ae * be;
            }
        }
        let avg = acc / (nz * nphi) as f64;
        assert!((-avg - intercept_resend_correlation(&a, &b)).abs() < 1e-4);
    }

    fn mixture_3x3() -> impl Strategy<Value = StrategyMixture> {
        proptest::collection::vec(0.0f64..1.0, 64).prop_filter_map("nonzero", |w| {
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                return None;
            }
            let strategies = enumerate_strategies(3, 3, Alphabet::PlusMinus).unwrap();
            StrategyMixture::new(strategies.into_iter().zip(w.iter().map(|x| x / total)).collect()).ok()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn mixtures_obey_chsh_on_every_block(m in mixture_3x3()) {
            let c = m.correlations();
            for i in 0..3 { for ip in 0..3 { for j in 0..3 { for jp in 0..3 {
                if i == ip || j == jp { continue; }
                let s = c.get(i, j) - c.get(i, jp) + c.get(ip, j) + c.get(ip, jp);
                prop_assert!(s.abs() <= 2.0 + 1e-9);
            }}}}
        }

        #[test]
        fn feasible_round_trip(m in mixture_3x3()) {
            let e = ekert_settings();
            let c = m.correlations();
            let r = lhv_feasibility(&TargetMatrix::from(&c), &e, Alphabet::PlusMinus, None).unwrap();
            let FeasibilityResult::Feasible { mixture, .. } = r else {
                return Err(TestCaseError::fail("mixture correlations must be local"));
            };
            for i in 0..3 { for j in 0..3 {
                prop_assert!((mixture.correlation(i, j) - c.get(i, j)).abs() < 1e-7);
            }}
        }
    }
}
