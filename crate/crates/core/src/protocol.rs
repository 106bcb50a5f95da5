//! End-to-end Ekert session.
//!
//! Pipeline: resolve the spatial factor g, simulate every pair over the
//! chosen channel, sift by the publicly announced settings, estimate CHSH on
//! the test group, extract a key from the same-axis group, and decide.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lhv::{
    lhv_feasibility, Alphabet, FeasibilityResult, ForgerySampler, StrategyMixture, TargetMatrix,
};
use crate::spatial::{
    classify_detectability, g_analytic, g_quadrature, particle_masses, Detectability, GEstimate, GMethod,
    GaussianPacket, Region, DEFAULT_QUADRATURE_ORDER,
};
use crate::spin::{singlet_joint_distribution, ChshBlock, SettingSet};

/// Trials per RNG stream; chunk `c` uses ChaCha8 stream `TRIAL_STREAM_BASE + c`.
pub const TRIAL_CHUNK: u64 = 4096;
const TRIAL_STREAM_BASE: u64 = 1 << 40;

/// Minimum included trials per CHSH pair for a conclusive estimate.
pub const MIN_PAIR_TRIALS: u64 = 100;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeMode {
    /// Eve always clicks; only correlations are matched.
    CorrelationOnly,
    /// Eve also emits no-clicks so every pair's coincidence rate equals g.
    #[default]
    RateMatching,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Channel {
    Honest,
    InterceptResend,
    LhvForge { mode: ForgeMode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    /// Every trial counts; no-clicks contribute 0.
    Raw,
    /// Only coincidences (both sides clicked) count.
    PostSelected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Source {
    Spatial {
        packet: GaussianPacket,
        region_a: Region,
        region_b: Region,
        quadrature_order: usize,
    },
    GOverride(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub settings: SettingSet,
    pub source: Source,
    pub channel: Channel,
    pub analysis: Analysis,
    pub n_pairs: u64,
    pub seed: u64,
    pub rate_monitoring: bool,
    /// Reserved for a location-dependent eavesdropper; not modeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eve_region: Option<Region>,
}

impl SessionConfig {
    pub fn with_g(
        settings: SettingSet,
        g: f64,
        channel: Channel,
        analysis: Analysis,
        n_pairs: u64,
        seed: u64,
    ) -> Self {
        Self {
            settings,
            source: Source::GOverride(g),
            channel,
            analysis,
            n_pairs,
            seed,
            rate_monitoring: false,
            eve_region: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
        }
        match &self.source {
            Source::GOverride(g) => {
                if !(g.is_finite() && (0.0..=1.0).contains(g)) {
                    return Err(Error::InvalidArgument(format!("g_override {g} outside [0, 1]")));
                }
            }
            Source::Spatial {
                region_a,
                region_b,
                quadrature_order,
                ..
            } => {
                region_a.validate()?;
                region_b.validate()?;
                if *quadrature_order < 4 {
                    return Err(Error::InvalidArgument(
                        "quadrature order must be at least 4".into(),
                    ));
                }
            }
        }
        if let Some(r) = &self.eve_region {
            r.validate()?;
        }
        Ok(())
    }
}

/// The spatial factor used by a session and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedG {
    pub g: f64,
    /// Probability that Alice's detector clicks.
    pub g_alice: f64,
    pub g_bob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<GEstimate>,
    pub from_override: bool,
}

pub fn resolve_g(source: &Source) -> Result<ResolvedG> {
    match source {
        Source::GOverride(g) => Ok(ResolvedG {
            g: *g,
            g_alice: g.sqrt(),
            g_bob: g.sqrt(),
            estimate: None,
            from_override: true,
        }),
        Source::Spatial {
            packet,
            region_a,
            region_b,
            quadrature_order,
        } => {
            let (ga, gb) = particle_masses(packet, region_a, region_b, *quadrature_order);
            let estimate = if region_a.is_box() && region_b.is_box() {
                GEstimate {
                    value: g_analytic(packet, region_a, region_b)?,
                    std_error: 0.0,
                    method: GMethod::Analytic,
                    samples_or_order: 0,
                    chunk_size: None,
                }
            } else {
                g_quadrature(packet, region_a, region_b, *quadrature_order)?.estimate()
            };
            Ok(ResolvedG {
                g: (ga * gb).clamp(0.0, 1.0),
                g_alice: ga,
                g_bob: gb,
                estimate: Some(estimate),
                from_override: false,
            })
        }
    }
}

/// A channel ready to generate trials.
#[derive(Debug, Clone)]
pub enum PreparedChannel {
    Honest,
    InterceptResend,
    Forge(ForgerySampler),
}

/// What Eve tried to reproduce and the mixture she found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forgery {
    pub mode: ForgeMode,
    pub targets: TargetMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    pub mixture: StrategyMixture,
    pub max_residual: f64,
}

/// Eve's targets: the CHSH block at `g·E_spin`, key pairs perfectly
/// anti-correlated; other pairs free.
pub fn forgery_targets(settings: &SettingSet, g: f64, mode: ForgeMode) -> Result<TargetMatrix> {
    let (na, nb) = settings.shape();
    let spin = settings.singlet_correlations();
    let mut entries = vec![vec![None; nb]; na];
    if let Some(block) = settings.chsh_block() {
        for (i, j) in block.pairs() {
            entries[i][j] = Some(g * spin.get(i, j));
        }
    }
    let key_value = match mode {
        ForgeMode::CorrelationOnly => -1.0,
        ForgeMode::RateMatching => -g,
    };
    for (i, j) in settings.key_pairs() {
        entries[i][j].get_or_insert(key_value);
    }
    TargetMatrix::new(entries)
}

pub fn build_forgery(settings: &SettingSet, g: f64, mode: ForgeMode) -> Result<Forgery> {
    let targets = forgery_targets(settings, g, mode)?;
    let (alphabet, rate) = match mode {
        ForgeMode::CorrelationOnly => (Alphabet::PlusMinus, None),
        ForgeMode::RateMatching => (Alphabet::PlusMinusNull, Some(g)),
    };
    match lhv_feasibility(&targets, settings, alphabet, rate)? {
        FeasibilityResult::Feasible {
            mixture,
            max_residual,
        } => Ok(Forgery {
            mode,
            targets,
            rate,
            mixture,
            max_residual,
        }),
        FeasibilityResult::Infeasible { certificate } => Err(Error::ForgeryInfeasible {
            g,
            violation: certificate.violation(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u64,
    pub alice_setting: usize,
    pub bob_setting: usize,
    /// ±1, or 0 for no click.
    pub alice: i8,
    pub bob: i8,
    /// Eve's record of both outcomes, when she has one.
    pub eve: Option<(i8, i8)>,
}

/// Per-side click probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickModel {
    pub alice: f64,
    pub bob: f64,
}

impl ClickModel {
    pub fn symmetric(g: f64) -> Self {
        let p = g.clamp(0.0, 1.0).sqrt();
        Self { alice: p, bob: p }
    }
}

/// Simulates one pair measured at settings `(i, j)`.
///
/// Honest and intercept-resend spins are masked by independent per-side
/// clicks; a forging Eve decides the clicks herself.
pub fn simulate_trial<R: Rng + ?Sized>(
    channel: &PreparedChannel,
    clicks: ClickModel,
    index: u64,
    i: usize,
    j: usize,
    settings: &SettingSet,
    rng: &mut R,
) -> TrialRecord {
    let (a, b) = (&settings.alice()[i], &settings.bob()[j]);
    let (alice, bob, eve) = match channel {
        PreparedChannel::Forge(sampler) => {
            let (x, y) = sampler.sample(i, j, rng);
            (x, y, Some((x, y)))
        }
        PreparedChannel::Honest | PreparedChannel::InterceptResend => {
            let (x, y, eve) = match channel {
                PreparedChannel::Honest => {
                    let (x, y) = singlet_joint_distribution(a, b).sample(rng);
                    (x, y, None)
                }
                _ => {
                    let t = crate::lhv::intercept_resend_outcomes(a, b, rng);
                    (t.alice, t.bob, Some(t.eve_guess))
                }
            };
            let click_a = rng.random::<f64>() < clicks.alice;
            let click_b = rng.random::<f64>() < clicks.bob;
            (if click_a { x } else { 0 }, if click_b { y } else { 0 }, eve)
        }
    };
    TrialRecord {
        index,
        alice_setting: i,
        bob_setting: j,
        alice,
        bob,
        eve,
    }
}

/// Generates `n` trials with uniformly random settings. Output is
/// independent of the rayon pool size.
pub fn simulate_trials(
    channel: &PreparedChannel,
    clicks: ClickModel,
    settings: &SettingSet,
    n: u64,
    seed: u64,
) -> Vec<TrialRecord> {
    let (na, nb) = settings.shape();
    let chunks = n.div_ceil(TRIAL_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(TRIAL_STREAM_BASE + c);
            let start = c * TRIAL_CHUNK;
            let end = (start + TRIAL_CHUNK).min(n);
            (start..end)
                .map(|index| {
                    let i = rng.random_range(0..na);
                    let j = rng.random_range(0..nb);
                    simulate_trial(channel, clicks, index, i, j, settings, &mut rng)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Chsh,
    Key,
    Discarded,
}

/// Record indices split by the public announcement of settings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sifted {
    /// One list per CHSH pair, in `ab, ab', a'b, a'b'` order.
    pub chsh: [Vec<usize>; 4],
    pub key: Vec<usize>,
    pub discarded: Vec<usize>,
}

pub fn classify_pair(settings: &SettingSet, i: usize, j: usize) -> (Group, Option<usize>) {
    if let Some(block) = settings.chsh_block() {
        if let Some(k) = block.pairs().iter().position(|&p| p == (i, j)) {
            return (Group::Chsh, Some(k));
        }
    }
    if settings.alice()[i].same_axis(&settings.bob()[j]) {
        return (Group::Key, None);
    }
    (Group::Discarded, None)
}

pub fn sift(records: &[TrialRecord], settings: &SettingSet) -> Sifted {
    let mut out = Sifted::default();
    for (idx, r) in records.iter().enumerate() {
        match classify_pair(settings, r.alice_setting, r.bob_setting) {
            (Group::Chsh, Some(k)) => out.chsh[k].push(idx),
            (Group::Key, _) => out.key.push(idx),
            _ => out.discarded.push(idx),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub alice_setting: usize,
    pub bob_setting: usize,
    pub trials: u64,
    pub included: u64,
    pub correlation: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshEstimate {
    pub analysis: Analysis,
    pub s: f64,
    pub std_error: f64,
    pub pairs: Vec<PairEstimate>,
    /// False when some pair has too few included trials or no coincidences.
    pub sufficient: bool,
}

fn is_coincidence(r: &TrialRecord) -> bool {
    r.alice != 0 && r.bob != 0
}

/// Mean of `A·B` over the records `indices` selects, with its standard error.
/// A pair with no coincidences is uninformative and gets standard error 1.
fn pair_estimate(records: &[TrialRecord], indices: &[usize], analysis: Analysis) -> PairEstimate {
    let first = indices.first().map(|&k| &records[k]);
    let mut included = 0u64;
    let mut coincidences = 0u64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &k in indices {
        let r = &records[k];
        let hit = is_coincidence(r);
        if analysis == Analysis::PostSelected && !hit {
            continue;
        }
        coincidences += u64::from(hit);
        included += 1;
        let v = f64::from(r.alice * r.bob);
        sum += v;
        sum_sq += v * v;
    }
    let (correlation, std_error) = if included == 0 || coincidences == 0 {
        (0.0, 1.0)
    } else {
        let n = included as f64;
        let mean = sum / n;
        let var = if included > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            1.0
        };
        (mean, (var / n).sqrt())
    };
    PairEstimate {
        alice_setting: first.map_or(0, |r| r.alice_setting),
        bob_setting: first.map_or(0, |r| r.bob_setting),
        trials: indices.len() as u64,
        included,
        correlation,
        std_error,
    }
}

/// CHSH estimate from the test group; pair standard errors add in quadrature.
pub fn estimate_chsh(
    records: &[TrialRecord],
    sifted: &Sifted,
    block: &ChshBlock,
    analysis: Analysis,
) -> ChshEstimate {
    let mut pairs: Vec<PairEstimate> = sifted
        .chsh
        .iter()
        .map(|idx| pair_estimate(records, idx, analysis))
        .collect();
    for (p, (i, j)) in pairs.iter_mut().zip(block.pairs()) {
        p.alice_setting = i;
        p.bob_setting = j;
    }
    let s: f64 = pairs
        .iter()
        .zip(ChshBlock::SIGNS)
        .map(|(p, sign)| sign * p.correlation)
        .sum();
    let std_error = pairs
        .iter()
        .map(|p| p.std_error * p.std_error)
        .sum::<f64>()
        .sqrt();
    let sufficient = pairs
        .iter()
        .all(|p| p.included >= MIN_PAIR_TRIALS && p.std_error < 1.0);
    ChshEstimate {
        analysis,
        s,
        std_error,
        pairs,
        sufficient,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyReport {
    /// Alice's sifted key bits as a `0`/`1` string.
    pub bits: String,
    pub length: usize,
    pub qber: f64,
    pub eve_knowledge_fraction: f64,
}

/// Converts coincident same-axis trials into key bits. Alice encodes
/// `(A + 1) / 2`; Bob flips his outcome first because the singlet is
/// anti-correlated.
pub fn extract_key(records: &[TrialRecord], key_group: &[usize]) -> Result<KeyReport> {
    let mut bits = String::new();
    let mut errors = 0usize;
    let mut known = 0usize;
    for &k in key_group {
        let r = &records[k];
        if !is_coincidence(r) {
            continue;
        }
        let alice_bit = u8::from(r.alice > 0);
        let bob_bit = u8::from(-r.bob > 0);
        bits.push(if alice_bit == 1 { '1' } else { '0' });
        if alice_bit != bob_bit {
            errors += 1;
        }
        if r.eve == Some((r.alice, r.bob)) {
            known += 1;
        }
    }
    let length = bits.len();
    if length == 0 {
        return Err(Error::NoKeyMaterial);
    }
    Ok(KeyReport {
        bits,
        length,
        qber: errors as f64 / length as f64,
        eve_knowledge_fraction: known as f64 / length as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    SecureAccept,
    EveDetected,
    Inconclusive,
}

/// Accept only when the CHSH violation is at least `z` standard errors past
/// the local bound; accuse only when the estimate is `z` errors below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityPolicy {
    pub z: f64,
    pub local_bound: f64,
}

impl Default for SecurityPolicy {
    fn default() -> Self {
        Self {
            z: 3.0,
            local_bound: 2.0,
        }
    }
}

pub fn decide_security(s: f64, std_error: f64, policy: &SecurityPolicy) -> Decision {
    if s.abs() - policy.z * std_error > policy.local_bound {
        Decision::SecureAccept
    } else if s.abs() + policy.z * std_error < policy.local_bound {
        Decision::EveDetected
    } else {
        Decision::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub alice_setting: usize,
    pub bob_setting: usize,
    pub group: Group,
    pub trials: u64,
    pub coincidences: u64,
    pub raw_correlation: f64,
    pub raw_std_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_selected_correlation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_selected_std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshReport {
    pub analysis: Analysis,
    pub s: f64,
    pub std_error: f64,
    pub settings_used: Vec<[usize; 2]>,
    pub raw: ChshEstimate,
    pub post_selected: ChshEstimate,
}

/// Coincidence rates on the CHSH pairs compared against the rate g predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub expected: f64,
    pub observed: Vec<f64>,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: SessionConfig,
    pub g: ResolvedG,
    pub detectability: Detectability,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forgery: Option<Forgery>,
    pub n_pairs: u64,
    pub pairs: Vec<PairSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chsh: Option<ChshReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<KeyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_check: Option<RateCheck>,
    pub decision: Decision,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// A finished session: the report plus the per-trial log.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub report: RunReport,
    pub trials: Vec<TrialRecord>,
}

fn pair_summaries(records: &[TrialRecord], settings: &SettingSet) -> Vec<PairSummary> {
    let (na, nb) = settings.shape();
    let mut by_pair: Vec<Vec<usize>> = vec![Vec::new(); na * nb];
    for (k, r) in records.iter().enumerate() {
        by_pair[r.alice_setting * nb + r.bob_setting].push(k);
    }
    let mut out = Vec::with_capacity(na * nb);
    for i in 0..na {
        for j in 0..nb {
            let idx = &by_pair[i * nb + j];
            let raw = pair_estimate(records, idx, Analysis::Raw);
            let post = pair_estimate(records, idx, Analysis::PostSelected);
            let coincidences = idx.iter().filter(|&&k| is_coincidence(&records[k])).count() as u64;
            out.push(PairSummary {
                alice_setting: i,
                bob_setting: j,
                group: classify_pair(settings, i, j).0,
                trials: idx.len() as u64,
                coincidences,
                raw_correlation: raw.correlation,
                raw_std_error: raw.std_error,
                post_selected_correlation: (coincidences > 0).then_some(post.correlation),
                post_selected_std_error: (coincidences > 0).then_some(post.std_error),
            });
        }
    }
    out
}

fn rate_check(records: &[TrialRecord], sifted: &Sifted, expected: f64, z: f64) -> RateCheck {
    let mut consistent = true;
    let observed = sifted
        .chsh
        .iter()
        .map(|idx| {
            let n = idx.len().max(1) as f64;
            let hits = idx.iter().filter(|&&k| is_coincidence(&records[k])).count() as f64;
            let rate = hits / n;
            let se = (expected * (1.0 - expected) / n).sqrt().max(1.0 / n);
            if (rate - expected).abs() > z * se {
                consistent = false;
            }
            rate
        })
        .collect();
    RateCheck {
        expected,
        observed,
        consistent,
    }
}

/// Runs a full session. Identical configs give identical sessions.
pub fn run_session(config: &SessionConfig) -> Result<Session> {
    config.validate()?;
    let policy = SecurityPolicy::default();
    let resolved = resolve_g(&config.source).map_err(|e| e.context("resolving spatial factor"))?;
    let g = resolved.g;
    let mut warnings = Vec::new();
    if config.eve_region.is_some() {
        warnings.push("eve_region is reserved and was ignored".to_string());
    }
    if let Some(est) = &resolved.estimate {
        if est.method == GMethod::Quadrature && resolved.g_alice * resolved.g_bob > 1.0 {
            warnings.push("quadrature g exceeded 1 and was clamped".to_string());
        }
    }

    let (prepared, forgery) = match config.channel {
        Channel::Honest => (PreparedChannel::Honest, None),
        Channel::InterceptResend => (PreparedChannel::InterceptResend, None),
        Channel::LhvForge { mode } => {
            let forgery =
                build_forgery(&config.settings, g, mode).map_err(|e| e.context("building Eve's mixture"))?;
            (
                PreparedChannel::Forge(ForgerySampler::new(forgery.mixture.clone())?),
                Some(forgery),
            )
        }
    };
    let clicks = ClickModel {
        alice: resolved.g_alice,
        bob: resolved.g_bob,
    };
    let trials = simulate_trials(&prepared, clicks, &config.settings, config.n_pairs, config.seed);
    let sifted = sift(&trials, &config.settings);

    let chsh = config.settings.chsh_block().map(|block| {
        let raw = estimate_chsh(&trials, &sifted, &block, Analysis::Raw);
        let post_selected = estimate_chsh(&trials, &sifted, &block, Analysis::PostSelected);
        let chosen = match config.analysis {
            Analysis::Raw => &raw,
            Analysis::PostSelected => &post_selected,
        };
        ChshReport {
            analysis: config.analysis,
            s: chosen.s,
            std_error: chosen.std_error,
            settings_used: block.pairs().iter().map(|&(i, j)| [i, j]).collect(),
            raw: raw.clone(),
            post_selected: post_selected.clone(),
        }
    });

    let rate = config
        .rate_monitoring
        .then(|| rate_check(&trials, &sifted, g, policy.z));

    let mut decision = match &chsh {
        None => {
            warnings.push("settings have no CHSH block; security cannot be assessed".to_string());
            Decision::Inconclusive
        }
        Some(c) => {
            let chosen = match c.analysis {
                Analysis::Raw => &c.raw,
                Analysis::PostSelected => &c.post_selected,
            };
            if chosen.sufficient {
                decide_security(c.s, c.std_error, &policy)
            } else {
                Decision::Inconclusive
            }
        }
    };
    if let Some(r) = &rate {
        if !r.consistent {
            decision = Decision::EveDetected;
        }
    }

    let (key, key_error) = match extract_key(&trials, &sifted.key) {
        Ok(k) => (Some(k), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        detectability: classify_detectability(g),
        g: resolved,
        forgery,
        n_pairs: config.n_pairs,
        pairs: pair_summaries(&trials, &config.settings),
        chsh,
        key,
        key_error,
        rate_check: rate,
        decision,
        warnings,
    };
    Ok(Session { report, trials })
}

/// Convenience for tests and sweeps: a spatial source with the default order.
pub fn spatial_source(packet: GaussianPacket, region_a: Region, region_b: Region) -> Source {
    Source::Spatial {
        packet,
        region_a,
        region_b,
        quadrature_order: DEFAULT_QUADRATURE_ORDER,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{ekert_settings, single_settings, tsirelson_settings};
    use std::f64::consts::SQRT_2;

    fn run(g: f64, channel: Channel, analysis: Analysis, n: u64, seed: u64) -> Session {
        run_session(&SessionConfig::with_g(
            ekert_settings(),
            g,
            channel,
            analysis,
            n,
            seed,
        ))
        .unwrap()
    }

    #[test]
    fn honest_full_g_violates_chsh() {
        let s = run(1.0, Channel::Honest, Analysis::Raw, 100_000, 1);
        let c = s.report.chsh.as_ref().unwrap();
        assert!(
            (c.s + 2.0 * SQRT_2).abs() < 3.0 * c.std_error,
            "S = {} ± {}",
            c.s,
            c.std_error
        );
        assert!(s.report.key.as_ref().unwrap().qber < 0.01);
        assert_eq!(s.report.decision, Decision::SecureAccept);
        assert_eq!(s.report.key.as_ref().unwrap().eve_knowledge_fraction, 0.0);
    }

    #[test]
    fn honest_half_g_scales() {
        let s = run(0.5, Channel::Honest, Analysis::Raw, 100_000, 2);
        let c = s.report.chsh.as_ref().unwrap();
        assert!((c.s + SQRT_2).abs() < 3.0 * c.std_error);
    }

    #[test]
    fn trial_edge_cases() {
        let settings = ekert_settings();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 0..1000 {
            let t = simulate_trial(
                &PreparedChannel::Honest,
                ClickModel::symmetric(1.0),
                k,
                0,
                0,
                &settings,
                &mut rng,
            );
            assert!(t.alice != 0 && t.bob != 0);
            let t = simulate_trial(
                &PreparedChannel::Honest,
                ClickModel::symmetric(0.0),
                k,
                0,
                0,
                &settings,
                &mut rng,
            );
            assert!(t.alice == 0 && t.bob == 0);
        }
    }

    #[test]
    fn coincidence_rate_binomial() {
        let settings = ekert_settings();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let hits = (0..n)
            .filter(|&k| {
                let t = simulate_trial(
                    &PreparedChannel::Honest,
                    ClickModel::symmetric(0.7),
                    k,
                    1,
                    2,
                    &settings,
                    &mut rng,
                );
                t.alice != 0 && t.bob != 0
            })
            .count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.7).abs() < 3.0 * (0.7 * 0.3 / n as f64).sqrt());
    }

    #[test]
    fn sift_examples() {
        let settings = ekert_settings();
        let rec = |i, j| TrialRecord {
            index: 0,
            alice_setting: i,
            bob_setting: j,
            alice: 1,
            bob: -1,
            eve: None,
        };
        // Alice 45° / Bob 45°, Alice 0° / Bob 45°, Alice 45° / Bob 90°
        let records = vec![rec(1, 0), rec(0, 0), rec(1, 1)];
        let s = sift(&records, &settings);
        assert_eq!(s.key, vec![0]);
        assert_eq!(s.chsh[0], vec![1]);
        assert_eq!(s.discarded, vec![2]);
    }

    #[test]
    fn sift_partitions() {
        let s = run(0.8, Channel::Honest, Analysis::Raw, 5_000, 3);
        let sifted = sift(&s.trials, &s.report.config.settings);
        let total =
            sifted.chsh.iter().map(Vec::len).sum::<usize>() + sifted.key.len() + sifted.discarded.len();
        assert_eq!(total, 5_000);
        let mut all: Vec<usize> = sifted.chsh.concat();
        all.extend(&sifted.key);
        all.extend(&sifted.discarded);
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 5_000);
    }

    #[test]
    fn analysis_modes() {
        let s = run(0.8, Channel::Honest, Analysis::Raw, 200_000, 5);
        let c = s.report.chsh.as_ref().unwrap();
        assert!((c.s + 0.8 * 2.0 * SQRT_2).abs() < 3.0 * c.std_error);
        let s = run(0.5, Channel::Honest, Analysis::PostSelected, 200_000, 6);
        let c = s.report.chsh.as_ref().unwrap();
        assert!((c.s + 2.0 * SQRT_2).abs() < 3.0 * c.std_error);
    }

    #[test]
    fn all_zero_outcomes_inconclusive() {
        let s = run(0.0, Channel::Honest, Analysis::Raw, 10_000, 7);
        let c = s.report.chsh.as_ref().unwrap();
        assert_eq!(c.s, 0.0);
        assert!(c.std_error >= 1.0);
        assert_eq!(s.report.decision, Decision::Inconclusive);
        assert!(s.report.key.is_none());
        assert!(s.report.key_error.is_some());
    }

    #[test]
    fn insufficient_counts_inconclusive() {
        let s = run(1.0, Channel::Honest, Analysis::Raw, 200, 7);
        assert_eq!(s.report.decision, Decision::Inconclusive);
    }

    #[test]
    fn decision_rule() {
        let p = SecurityPolicy::default();
        assert_eq!(decide_security(-2.8, 0.01, &p), Decision::SecureAccept);
        assert_eq!(decide_security(-1.9, 0.01, &p), Decision::EveDetected);
        assert_eq!(decide_security(-2.01, 0.05, &p), Decision::Inconclusive);
    }

    #[test]
    fn key_extraction() {
        let rec = |a, b, eve| TrialRecord {
            index: 0,
            alice_setting: 1,
            bob_setting: 0,
            alice: a,
            bob: b,
            eve,
        };
        let records = vec![
            rec(1, -1, None),
            rec(-1, 1, Some((-1, 1))),
            rec(1, 1, None),
            rec(0, 1, None),
        ];
        let k = extract_key(&records, &[0, 1, 2, 3]).unwrap();
        assert_eq!(k.bits, "101");
        assert!((k.qber - 1.0 / 3.0).abs() < 1e-15);
        assert!((k.eve_knowledge_fraction - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(extract_key(&records, &[3]), Err(Error::NoKeyMaterial)));
    }

    #[test]
    fn intercept_resend_key_errors() {
        let s = run(1.0, Channel::InterceptResend, Analysis::Raw, 100_000, 9);
        let k = s.report.key.as_ref().unwrap();
        let se = (1.0 / 3.0 * 2.0 / 3.0 / k.length as f64).sqrt();
        assert!((k.qber - 1.0 / 3.0).abs() < 3.0 * se);
        assert_eq!(s.report.decision, Decision::EveDetected);
    }

    #[test]
    fn forgery_knows_every_key_bit() {
        let s = run(
            0.65,
            Channel::LhvForge {
                mode: ForgeMode::CorrelationOnly,
            },
            Analysis::Raw,
            50_000,
            10,
        );
        let k = s.report.key.as_ref().unwrap();
        assert_eq!(k.eve_knowledge_fraction, 1.0);
        assert_eq!(k.qber, 0.0);
        let c = s.report.chsh.as_ref().unwrap();
        assert!(c.s.abs() <= 2.0 + 3.0 * c.std_error);
    }

    #[test]
    fn forgery_fails_above_threshold() {
        let r = build_forgery(&ekert_settings(), 0.75, ForgeMode::CorrelationOnly);
        assert!(matches!(r, Err(Error::ForgeryInfeasible { .. })));
        assert_eq!(
            run_session(&SessionConfig::with_g(
                ekert_settings(),
                0.75,
                Channel::LhvForge {
                    mode: ForgeMode::CorrelationOnly
                },
                Analysis::Raw,
                1000,
                1
            ))
            .unwrap_err()
            .exit_code(),
            4
        );
    }

    #[test]
    fn rate_monitoring_catches_always_click_eve() {
        let mut cfg = SessionConfig::with_g(
            ekert_settings(),
            0.6,
            Channel::LhvForge {
                mode: ForgeMode::CorrelationOnly,
            },
            Analysis::PostSelected,
            50_000,
            12,
        );
        cfg.rate_monitoring = true;
        let s = run_session(&cfg).unwrap();
        assert!(!s.report.rate_check.as_ref().unwrap().consistent);
        assert_eq!(s.report.decision, Decision::EveDetected);

        cfg.channel = Channel::LhvForge {
            mode: ForgeMode::RateMatching,
        };
        let s = run_session(&cfg).unwrap();
        assert!(s.report.rate_check.as_ref().unwrap().consistent);
        assert_eq!(s.report.decision, Decision::SecureAccept);
    }

    #[test]
    fn deterministic_and_pool_independent() {
        let cfg = SessionConfig::with_g(
            ekert_settings(),
            0.9,
            Channel::InterceptResend,
            Analysis::Raw,
            20_000,
            77,
        );
        let a = run_session(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_session(&cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn spatial_source_resolves_factorized_g() {
        let src = spatial_source(
            GaussianPacket::standard(),
            Region::cube([0.0; 3], 1.0).unwrap(),
            Region::new_sphere([0.0; 3], 1.5).unwrap(),
        );
        let r = resolve_g(&src).unwrap();
        assert!(!r.from_override);
        assert!((r.g - r.g_alice * r.g_bob).abs() < 1e-15);
        assert_eq!(r.estimate.as_ref().unwrap().method, GMethod::Quadrature);
        let o = resolve_g(&Source::GOverride(0.49)).unwrap();
        assert!((o.g_alice - 0.7).abs() < 1e-15);
    }

    #[test]
    fn no_chsh_block_is_inconclusive() {
        let s = run_session(&SessionConfig::with_g(
            single_settings(),
            1.0,
            Channel::Honest,
            Analysis::Raw,
            1000,
            1,
        ))
        .unwrap();
        assert!(s.report.chsh.is_none());
        assert_eq!(s.report.decision, Decision::Inconclusive);
        let t = run_session(&SessionConfig::with_g(
            tsirelson_settings(),
            1.0,
            Channel::Honest,
            Analysis::Raw,
            1000,
            1,
        ))
        .unwrap();
        assert!(t.report.key.is_none());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SessionConfig::with_g(ekert_settings(), 1.2, Channel::Honest, Analysis::Raw, 10, 1);
        assert!(run_session(&cfg).is_err());
        cfg.source = Source::GOverride(0.5);
        cfg.n_pairs = 0;
        assert!(run_session(&cfg).is_err());
    }
}
