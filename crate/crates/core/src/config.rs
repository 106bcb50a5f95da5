//! TOML configuration documents.
//!
//! Unknown keys are rejected and reported with their full dotted path.
//! See `configs/SCHEMA.md` at the repository root for the field reference.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lhv::Alphabet;
use crate::protocol::{Analysis, Channel, ForgeMode, SessionConfig, Source};
use crate::spatial::{GaussianPacket, Region, Vec3, DEFAULT_QUADRATURE_ORDER};
use crate::spin::{ekert_settings, single_settings, tsirelson_settings, ChshBlock, SettingSet};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_pairs")]
    pub n_pairs: u64,
    #[serde(default = "default_analysis")]
    pub analysis: Analysis,
    #[serde(default)]
    pub rate_monitoring: bool,
    /// Replaces the spatial computation of g when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_override: Option<f64>,
    #[serde(default)]
    pub settings: SettingsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet: Option<PacketSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<RegionsSection>,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eve: Option<EveSection>,
    #[serde(default)]
    pub gfactor: GFactorSection,
    #[serde(default)]
    pub lhv: LhvSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_n_pairs() -> u64 {
    100_000
}

fn default_analysis() -> Analysis {
    Analysis::Raw
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Ekert,
    Tsirelson,
    Single,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsSection {
    #[serde(default)]
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alice_deg: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bob_deg: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chsh: Option<ChshBlock>,
}

impl SettingsSection {
    pub fn build(&self) -> Result<SettingSet> {
        let explicit_only = self.alice_deg.is_some() || self.bob_deg.is_some() || self.chsh.is_some();
        match self.preset {
            Preset::Explicit => {
                let alice = self.alice_deg.as_ref().ok_or_else(|| {
                    Error::config("settings.alice_deg", "required when preset = \"explicit\"")
                })?;
                let bob = self.bob_deg.as_ref().ok_or_else(|| {
                    Error::config("settings.bob_deg", "required when preset = \"explicit\"")
                })?;
                for (path, v) in [("settings.alice_deg", alice), ("settings.bob_deg", bob)] {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::config(path, "angles must be finite"));
                    }
                }
                SettingSet::from_angles(alice, bob, self.chsh)
                    .map_err(|e| Error::config("settings", e.to_string()))
            }
            _ if explicit_only => Err(Error::config(
                "settings",
                "alice_deg, bob_deg and chsh are only allowed with preset = \"explicit\"",
            )),
            Preset::Ekert => Ok(ekert_settings()),
            Preset::Tsirelson => Ok(tsirelson_settings()),
            Preset::Single => Ok(single_settings()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketSection {
    pub centers: [Vec3; 2],
    pub sigmas: [Vec3; 2],
    #[serde(default)]
    pub time: f64,
}

impl PacketSection {
    pub fn build(&self) -> Result<GaussianPacket> {
        GaussianPacket::new(self.centers, self.sigmas, self.time)
            .map_err(|e| Error::config("packet", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionsSection {
    pub a: Region,
    pub b: Region,
}

impl RegionsSection {
    pub fn validate(&self) -> Result<()> {
        self.a
            .validate()
            .map_err(|e| Error::config("regions.a", e.to_string()))?;
        self.b
            .validate()
            .map_err(|e| Error::config("regions.b", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    #[default]
    Honest,
    InterceptResend,
    LhvForge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(default)]
    pub kind: ChannelKind,
    #[serde(default)]
    pub forge_mode: ForgeMode,
}

impl ChannelSection {
    pub fn channel(&self) -> Channel {
        match self.kind {
            ChannelKind::Honest => Channel::Honest,
            ChannelKind::InterceptResend => Channel::InterceptResend,
            ChannelKind::LhvForge => Channel::LhvForge {
                mode: self.forge_mode,
            },
        }
    }
}

/// Reserved for a location-dependent eavesdropper.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EveSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GFactorSection {
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: u64,
}

fn default_order() -> usize {
    DEFAULT_QUADRATURE_ORDER
}

fn default_mc_samples() -> u64 {
    1_000_000
}

impl Default for GFactorSection {
    fn default() -> Self {
        Self {
            quadrature_order: default_order(),
            mc_samples: default_mc_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LhvSection {
    #[serde(default = "default_alphabets")]
    pub alphabets: Vec<Alphabet>,
    /// Coincidence rate imposed on `pm0` searches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_constraint: Option<f64>,
}

fn default_alphabets() -> Vec<Alphabet> {
    vec![Alphabet::PlusMinus, Alphabet::PlusMinusNull]
}

impl Default for LhvSection {
    fn default() -> Self {
        Self {
            alphabets: default_alphabets(),
            rate_constraint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Time,
    RegionHalfwidth,
    GOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::config(
                "output.formats",
                format!("unknown format `{other}`"),
            )),
        }
    }
}

/// Parses a comma-separated format list such as `json,csv`.
pub fn parse_formats(s: &str) -> Result<Vec<Format>> {
    let mut out: Vec<Format> = s.split(',').map(str::parse).collect::<Result<_>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

fn check_finite(path: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::config(path, "values must be finite"))
    }
}

fn region_values(r: &Region) -> Vec<f64> {
    match r {
        Region::Box { center, halfwidths } => center.iter().chain(halfwidths).copied().collect(),
        Region::Sphere { center, radius } => center.iter().copied().chain([*radius]).collect(),
    }
}

impl ConfigDocument {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let doc: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().to_string();
            Error::config(if path == "." { "<document>".into() } else { path }, message)
        })?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config: {e}")))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        if self.n_pairs == 0 {
            return Err(Error::config("n_pairs", "must be at least 1"));
        }
        if let Some(g) = self.g_override {
            if !(g.is_finite() && (0.0..=1.0).contains(&g)) {
                return Err(Error::config("g_override", format!("{g} outside [0, 1]")));
            }
        }
        self.settings.build()?;
        if let Some(p) = &self.packet {
            check_finite("packet.centers", p.centers.as_flattened())?;
            check_finite("packet.sigmas", p.sigmas.as_flattened())?;
            check_finite("packet.time", &[p.time])?;
            p.build()?;
        }
        if let Some(r) = &self.regions {
            check_finite("regions.a", &region_values(&r.a))?;
            check_finite("regions.b", &region_values(&r.b))?;
            r.validate()?;
        }
        if let Some(Some(r)) = self.eve.as_ref().map(|e| &e.region) {
            check_finite("eve.region", &region_values(r))?;
            r.validate()
                .map_err(|e| Error::config("eve.region", e.to_string()))?;
        }
        if self.gfactor.quadrature_order < 4 {
            return Err(Error::config("gfactor.quadrature_order", "must be at least 4"));
        }
        if self.gfactor.mc_samples < 1000 {
            return Err(Error::config("gfactor.mc_samples", "must be at least 1000"));
        }
        if self.lhv.alphabets.is_empty() {
            return Err(Error::config("lhv.alphabets", "must list at least one alphabet"));
        }
        if let Some(r) = self.lhv.rate_constraint {
            if !(r.is_finite() && (0.0..=1.0).contains(&r)) {
                return Err(Error::config(
                    "lhv.rate_constraint",
                    format!("{r} outside [0, 1]"),
                ));
            }
        }
        if let Some(s) = &self.sweep {
            check_finite("sweep.grid", &s.grid)?;
        }
        if self.output.formats.is_empty() {
            return Err(Error::config("output.formats", "must list at least one format"));
        }
        Ok(())
    }

    pub fn settings(&self) -> Result<SettingSet> {
        self.settings.build()
    }

    /// Packet and regions, required by spatial computations.
    pub fn spatial(&self) -> Result<(GaussianPacket, Region, Region)> {
        let packet = self
            .packet
            .as_ref()
            .ok_or_else(|| Error::config("packet", "section required"))?
            .build()?;
        let regions = self
            .regions
            .as_ref()
            .ok_or_else(|| Error::config("regions", "section required"))?;
        Ok((packet, regions.a.clone(), regions.b.clone()))
    }

    pub fn source(&self) -> Result<Source> {
        if let Some(g) = self.g_override {
            return Ok(Source::GOverride(g));
        }
        if self.packet.is_none() && self.regions.is_none() {
            return Err(Error::config(
                "g_override",
                "give either g_override or packet and regions",
            ));
        }
        let (packet, region_a, region_b) = self.spatial()?;
        Ok(Source::Spatial {
            packet,
            region_a,
            region_b,
            quadrature_order: self.gfactor.quadrature_order,
        })
    }

    pub fn session_config(&self) -> Result<SessionConfig> {
        Ok(SessionConfig {
            settings: self.settings()?,
            source: self.source()?,
            channel: self.channel.channel(),
            analysis: self.analysis,
            n_pairs: self.n_pairs,
            seed: self.seed,
            rate_monitoring: self.rate_monitoring,
            eve_region: self.eve.as_ref().and_then(|e| e.region.clone()),
        })
    }
}
