//! Singlet spin correlations, joint outcome statistics and measurement settings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance applied when deciding whether a correlation value is physical.
pub const CORRELATION_TOLERANCE: f64 = 1e-9;

/// A unit vector in three-dimensional space, used as a measurement axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    x: f64,
    y: f64,
    z: f64,
}

impl Direction {
    /// Normalizes `(x, y, z)`; rejects zero-length and non-finite input.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidDirection { x, y, z });
        }
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    /// Direction at `degrees` from the z axis, rotating towards +x in the x–z plane.
    pub fn in_xz_plane(degrees: f64) -> Self {
        let t = degrees.to_radians();
        Self {
            x: t.sin(),
            y: 0.0,
            z: t.cos(),
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn components(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// True when both directions name the same axis (not merely antiparallel).
    pub fn same_axis(&self, other: &Direction) -> bool {
        self.dot(other) > 1.0 - 1e-12
    }
}

/// Indices `(a, a', b, b')` of the CHSH test block inside a [`SettingSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChshBlock {
    pub alice: [usize; 2],
    pub bob: [usize; 2],
}

impl ChshBlock {
    /// The four `(alice, bob)` setting pairs in the order `ab, ab', a'b, a'b'`.
    pub fn pairs(&self) -> [(usize, usize); 4] {
        let [a, ap] = self.alice;
        let [b, bp] = self.bob;
        [(a, b), (a, bp), (ap, b), (ap, bp)]
    }

    /// Sign of each pair's term in the CHSH combination.
    pub const SIGNS: [f64; 4] = [1.0, -1.0, 1.0, 1.0];
}

/// Measurement directions available to Alice and Bob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSet {
    alice: Vec<Direction>,
    bob: Vec<Direction>,
    chsh: Option<ChshBlock>,
}

impl SettingSet {
    pub fn new(alice: Vec<Direction>, bob: Vec<Direction>, chsh: Option<ChshBlock>) -> Result<Self> {
        if alice.is_empty() || bob.is_empty() {
            return Err(Error::InvalidSettings(
                "each party needs at least one direction".into(),
            ));
        }
        if let Some(block) = chsh {
            let alice_ok = block.alice.iter().all(|&i| i < alice.len()) && block.alice[0] != block.alice[1];
            let bob_ok = block.bob.iter().all(|&j| j < bob.len()) && block.bob[0] != block.bob[1];
            if !alice_ok || !bob_ok {
                return Err(Error::InvalidSettings(format!(
                    "CHSH block {block:?} does not fit {}x{} settings",
                    alice.len(),
                    bob.len()
                )));
            }
        }
        Ok(Self { alice, bob, chsh })
    }

    /// Builds a setting set from x–z plane angles in degrees.
    pub fn from_angles(alice_deg: &[f64], bob_deg: &[f64], chsh: Option<ChshBlock>) -> Result<Self> {
        if alice_deg.iter().chain(bob_deg).any(|a| !a.is_finite()) {
            return Err(Error::InvalidSettings("angles must be finite".into()));
        }
        Self::new(
            alice_deg.iter().map(|&d| Direction::in_xz_plane(d)).collect(),
            bob_deg.iter().map(|&d| Direction::in_xz_plane(d)).collect(),
            chsh,
        )
    }

    pub fn alice(&self) -> &[Direction] {
        &self.alice
    }

    pub fn bob(&self) -> &[Direction] {
        &self.bob
    }

    pub fn chsh_block(&self) -> Option<ChshBlock> {
        self.chsh
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.alice.len(), self.bob.len())
    }

    /// Pairs measured along a common axis; their outcomes become key material.
    pub fn key_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.alice.iter().enumerate() {
            for (j, b) in self.bob.iter().enumerate() {
                if a.same_axis(b) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Singlet correlation for every setting pair.
    pub fn singlet_correlations(&self) -> CorrelationMatrix {
        let entries = self
            .alice
            .iter()
            .map(|a| self.bob.iter().map(|b| singlet_correlation(a, b)).collect())
            .collect();
        CorrelationMatrix { entries }
    }
}

/// Correlations indexed by `(alice setting, bob setting)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    entries: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let cols = entries.first().map_or(0, Vec::len);
        if entries.is_empty() || cols == 0 || entries.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidCorrelation(
                "matrix must be rectangular and non-empty".into(),
            ));
        }
        for row in &entries {
            for &v in row {
                if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                    return Err(Error::InvalidCorrelation(format!("entry {v} outside [-1, 1]")));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            entries: vec![vec![0.0; cols]; rows],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.entries.len(), self.entries[0].len())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|r| r.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }

    /// CHSH combination of the entries selected by `block`.
    pub fn chsh(&self, block: &ChshBlock) -> Result<f64> {
        let [p0, p1, p2, p3] = block.pairs();
        chsh_statistic(
            self.get(p0.0, p0.1),
            self.get(p1.0, p1.1),
            self.get(p2.0, p2.1),
            self.get(p3.0, p3.1),
        )
    }
}

/// Correlation `-(a·b)` of spin measurements on the singlet.
pub fn singlet_correlation(a: &Direction, b: &Direction) -> f64 {
    -a.dot(b)
}

/// Probabilities of the four joint outcomes of a singlet measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    pub plus_plus: f64,
    pub plus_minus: f64,
    pub minus_plus: f64,
    pub minus_minus: f64,
}

impl JointDistribution {
    /// Probability of the outcome pair `(alice, bob)`, each ±1.
    pub fn probability(&self, alice: i8, bob: i8) -> f64 {
        match (alice > 0, bob > 0) {
            (true, true) => self.plus_plus,
            (true, false) => self.plus_minus,
            (false, true) => self.minus_plus,
            (false, false) => self.minus_minus,
        }
    }

    pub fn correlation(&self) -> f64 {
        self.plus_plus + self.minus_minus - self.plus_minus - self.minus_plus
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (i8, i8) {
        let u: f64 = rng.random();
        if u < self.plus_plus {
            (1, 1)
        } else if u < self.plus_plus + self.plus_minus {
            (1, -1)
        } else if u < self.plus_plus + self.plus_minus + self.minus_plus {
            (-1, 1)
        } else {
            (-1, -1)
        }
    }
}

/// `p(s_A, s_B) = (1 - s_A s_B (a·b)) / 4`, the unique distribution with
/// uniform marginals and correlation `-(a·b)`.
pub fn singlet_joint_distribution(a: &Direction, b: &Direction) -> JointDistribution {
    let c = a.dot(b).clamp(-1.0, 1.0);
    let same = (1.0 - c) / 4.0;
    let diff = (1.0 + c) / 4.0;
    JointDistribution {
        plus_plus: same,
        plus_minus: diff,
        minus_plus: diff,
        minus_minus: same,
    }
}

/// `S = E(a,b) - E(a,b') + E(a',b) + E(a',b')`.
pub fn chsh_statistic(e_ab: f64, e_abp: f64, e_apb: f64, e_apbp: f64) -> Result<f64> {
    for v in [e_ab, e_abp, e_apb, e_apbp] {
        if !v.is_finite() || v.abs() > 1.0 + CORRELATION_TOLERANCE {
            return Err(Error::InvalidCorrelation(format!(
                "CHSH input {v} outside [-1, 1]"
            )));
        }
    }
    Ok(e_ab - e_abp + e_apb + e_apbp)
}

/// Alice at 0° and 90°, Bob at 45° and 135°.
pub fn tsirelson_settings() -> SettingSet {
    SettingSet::from_angles(
        &[0.0, 90.0],
        &[45.0, 135.0],
        Some(ChshBlock {
            alice: [0, 1],
            bob: [0, 1],
        }),
    )
    .expect("fixed settings are valid")
}

/// Alice at 0°, 45°, 90°; Bob at 45°, 90°, 135°.
pub fn ekert_settings() -> SettingSet {
    SettingSet::from_angles(
        &[0.0, 45.0, 90.0],
        &[45.0, 90.0, 135.0],
        Some(ChshBlock {
            alice: [0, 2],
            bob: [0, 2],
        }),
    )
    .expect("fixed settings are valid")
}

/// One direction per side, both along z.
pub fn single_settings() -> SettingSet {
    SettingSet::from_angles(&[0.0], &[0.0], None).expect("fixed settings are valid")
}
