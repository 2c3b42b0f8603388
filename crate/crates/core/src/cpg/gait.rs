//! Gait library: per-leg touchdown phases and the phase-bias matrices derived
//! from them.
//!
//! A gait is described by the fraction of the cycle at which each leg touches
//! down, relative to FR. The oscillator of a leg that touches down later runs
//! behind, so in the locked state `θ_i = θ_ref − 2π·phase_i` and the bias
//! matrix is `φ_ij = phase_i − phase_j`, which is the fixed point of the
//! coupling term `sin(θ_j − θ_i − φ_ij)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leg::NUM_LEGS;
use crate::scalar::{wrap_to_2pi, wrap_to_pi, Real};

pub type Matrix4<T> = [[T; NUM_LEGS]; NUM_LEGS];

/// The nine library gaits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaitName {
    Walk,
    Amble,
    Trot,
    Pace,
    Bound,
    Pronk,
    Canter,
    TransverseGallop,
    RotaryGallop,
}

impl GaitName {
    pub const ALL: [GaitName; 9] = [
        GaitName::Walk,
        GaitName::Amble,
        GaitName::Trot,
        GaitName::Pace,
        GaitName::Bound,
        GaitName::Pronk,
        GaitName::Canter,
        GaitName::TransverseGallop,
        GaitName::RotaryGallop,
    ];

    pub fn id(self) -> &'static str {
        match self {
            GaitName::Walk => "walk",
            GaitName::Amble => "amble",
            GaitName::Trot => "trot",
            GaitName::Pace => "pace",
            GaitName::Bound => "bound",
            GaitName::Pronk => "pronk",
            GaitName::Canter => "canter",
            GaitName::TransverseGallop => "transverse-gallop",
            GaitName::RotaryGallop => "rotary-gallop",
        }
    }

    /// Shipped touchdown phases (cycle fractions) in FR, FL, HR, HL order.
    pub fn default_fractions(self) -> [f64; NUM_LEGS] {
        match self {
            GaitName::Pronk => [0.0, 0.0, 0.0, 0.0],
            GaitName::Bound => [0.0, 0.0, 0.5, 0.5],
            GaitName::Pace => [0.0, 0.5, 0.0, 0.5],
            GaitName::Trot => [0.0, 0.5, 0.5, 0.0],
            GaitName::Walk => [0.0, 0.5, 0.75, 0.25],
            GaitName::Amble => [0.0, 0.5, 0.75, 0.25],
            GaitName::Canter => [0.0, 0.3, 0.7, 0.0],
            GaitName::TransverseGallop => [0.0, 0.1, 0.6, 0.5],
            GaitName::RotaryGallop => [0.0, 0.1, 0.5, 0.6],
        }
    }

    pub fn valid_ids() -> String {
        Self::ALL.iter().map(|g| g.id()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for GaitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for GaitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        let g = match key.as_str() {
            "walk" | "lateral-sequence-walk" | "lsw" => GaitName::Walk,
            "amble" => GaitName::Amble,
            "trot" => GaitName::Trot,
            "pace" => GaitName::Pace,
            "bound" => GaitName::Bound,
            "pronk" => GaitName::Pronk,
            "canter" => GaitName::Canter,
            "transverse-gallop" | "tg" => GaitName::TransverseGallop,
            "rotary-gallop" | "rg" => GaitName::RotaryGallop,
            _ => {
                return Err(Error::UnknownGait {
                    name: s.to_string(),
                    valid: Self::valid_ids(),
                })
            }
        };
        Ok(g)
    }
}

/// Phase-bias matrix plus per-pair coupling mask that defines a gait.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitMatrix<T> {
    pub name: String,
    /// Per-leg touchdown phase relative to FR (rad, in `[0, 2π)`).
    pub phase: [T; NUM_LEGS],
    /// `phi[i][j] = phase[i] − phase[j]`, wrapped to `(−π, π]`.
    pub phi: Matrix4<T>,
    /// Multiplies the configured coupling weight for each pair; the diagonal
    /// is ignored.
    pub weight_mask: Matrix4<T>,
}

pub fn all_to_all_mask<T: Real>() -> Matrix4<T> {
    let mut m = [[T::one(); NUM_LEGS]; NUM_LEGS];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::zero();
    }
    m
}

impl<T: Real> GaitMatrix<T> {
    pub fn from_phases(
        name: impl Into<String>,
        phase: [T; NUM_LEGS],
        weight_mask: Option<Matrix4<T>>,
    ) -> Self {
        let phase = phase.map(wrap_to_2pi);
        let mut phi = [[T::zero(); NUM_LEGS]; NUM_LEGS];
        for i in 0..NUM_LEGS {
            for j in 0..NUM_LEGS {
                if i != j {
                    phi[i][j] = wrap_to_pi(phase[i] - phase[j]);
                }
            }
        }
        let mut mask = weight_mask.unwrap_or_else(all_to_all_mask);
        for (i, row) in mask.iter_mut().enumerate() {
            row[i] = T::zero();
        }
        GaitMatrix {
            name: name.into(),
            phase,
            phi,
            weight_mask: mask,
        }
    }

    /// Builds a gait from cycle fractions (1.0 = full cycle).
    pub fn from_fractions(
        name: impl Into<String>,
        fractions: [T; NUM_LEGS],
        weight_mask: Option<Matrix4<T>>,
    ) -> Self {
        Self::from_phases(name, fractions.map(|f| f * T::TAU()), weight_mask)
    }

    pub fn fractions(&self) -> [T; NUM_LEGS] {
        self.phase.map(|p| p / T::TAU())
    }

    /// Oscillator phases of the locked state for a given FR phase.
    pub fn locked_phases(&self, reference: T) -> [T; NUM_LEGS] {
        self.phase.map(|p| reference - p)
    }
}

/// Looks up one of the nine shipped gaits by identifier.
pub fn gait_library<T: Real>(name: &str) -> Result<GaitMatrix<T>> {
    let g: GaitName = name.parse()?;
    Ok(library_gait(g))
}

pub fn library_gait<T: Real>(g: GaitName) -> GaitMatrix<T> {
    GaitMatrix::from_fractions(g.id(), g.default_fractions().map(T::lit), None)
}

/// Builds an arbitrary gait from a per-leg phase vector in radians.
pub fn custom_gait<T: Real>(phase: [T; NUM_LEGS], weight_mask: Option<Matrix4<T>>) -> GaitMatrix<T> {
    GaitMatrix::from_phases("custom", phase, weight_mask)
}

pub const GAIT_FILE_VERSION: u32 = 1;

/// One entry of a gait definition file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitEntry {
    pub name: String,
    /// Touchdown phase per leg as a fraction of the cycle, FR FL HR HL.
    pub phase: [f64; NUM_LEGS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Matrix4<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitFile {
    pub version: u32,
    #[serde(rename = "gait")]
    pub gaits: Vec<GaitEntry>,
}

/// Name-indexed gait table, loadable from and dumpable to a TOML file.
#[derive(Clone, Debug, PartialEq)]
pub struct GaitLibrary {
    entries: BTreeMap<String, GaitEntry>,
}

impl Default for GaitLibrary {
    fn default() -> Self {
        let entries = GaitName::ALL
            .iter()
            .map(|g| {
                (
                    g.id().to_string(),
                    GaitEntry {
                        name: g.id().to_string(),
                        phase: g.default_fractions(),
                        weights: None,
                    },
                )
            })
            .collect();
        GaitLibrary { entries }
    }
}

impl GaitLibrary {
    pub fn from_file(file: GaitFile) -> Result<Self> {
        if file.version != GAIT_FILE_VERSION {
            return Err(Error::VersionMismatch {
                expected: GAIT_FILE_VERSION.to_string(),
                found: file.version.to_string(),
            });
        }
        let mut entries = BTreeMap::new();
        for e in file.gaits {
            validate_entry(&e)?;
            let key = normalize_name(&e.name);
            if entries.insert(key, e.clone()).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate gait `{}`", e.name)));
            }
        }
        if entries.is_empty() {
            return Err(Error::InvalidConfig("gait file defines no gaits".into()));
        }
        Ok(GaitLibrary { entries })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> GaitFile {
        GaitFile {
            version: GAIT_FILE_VERSION,
            gaits: self.entries.values().cloned().collect(),
        }
    }

    pub fn dump(&self) -> String {
        toml::to_string(&self.to_file()).expect("gait file serializes")
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.values().map(|e| e.name.as_str())
    }

    pub fn entry(&self, name: &str) -> Option<&GaitEntry> {
        self.entries.get(&normalize_name(name)).or_else(|| {
            name.parse::<GaitName>()
                .ok()
                .and_then(|g| self.entries.get(g.id()))
        })
    }

    pub fn get<T: Real>(&self, name: &str) -> Result<GaitMatrix<T>> {
        let e = self.entry(name).ok_or_else(|| Error::UnknownGait {
            name: name.to_string(),
            valid: self.names().collect::<Vec<_>>().join(", "),
        })?;
        Ok(GaitMatrix::from_fractions(
            e.name.clone(),
            e.phase.map(T::lit),
            e.weights.map(|m| m.map(|row| row.map(T::lit))),
        ))
    }
}

fn normalize_name(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace(['_', ' '], "-")
}

fn validate_entry(e: &GaitEntry) -> Result<()> {
    if e.name.trim().is_empty() {
        return Err(Error::InvalidConfig("gait with empty name".into()));
    }
    if e.phase.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidConfig(format!("gait `{}`: non-finite phase", e.name)));
    }
    if let Some(w) = &e.weights {
        if w.iter().flatten().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gait `{}`: weights must be finite and non-negative",
                e.name
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn trot_pairs_diagonals() {
        let g: GaitMatrix<f64> = gait_library("trot").unwrap();
        assert_eq!(g.phase[0], g.phase[3]);
        assert_eq!(g.phase[1], g.phase[2]);
        assert!((g.phase[1] - g.phase[0] - PI).abs() < 1e-12);
    }

    #[test]
    fn pronk_all_equal() {
        let g: GaitMatrix<f64> = gait_library("pronk").unwrap();
        assert!(g.phi.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn walk_is_lateral_sequence() {
        // Later touchdown fraction = later footfall.
        let g: GaitMatrix<f64> = gait_library("walk").unwrap();
        let f = g.fractions();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| f[a].partial_cmp(&f[b]).unwrap());
        // FR, HL, FL, HR  ==  ... HL → FL → HR → FR ...
        assert_eq!(order, vec![0, 3, 1, 2]);
        let mut spacing: Vec<f64> = order.windows(2).map(|w| f[w[1]] - f[w[0]]).collect();
        spacing.push(1.0 - f[order[3]]);
        assert!(spacing.iter().all(|s| (s - 0.25).abs() < 1e-12));
    }

    #[test]
    fn unknown_gait_lists_valid() {
        let err = gait_library::<f64>("gallop").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rotary-gallop") && msg.contains("pronk"), "{msg}");
    }

    #[test]
    fn aliases_resolve() {
        assert_eq!("T.G.".replace('.', "").parse::<GaitName>().unwrap(), GaitName::TransverseGallop);
        assert_eq!("Lateral Sequence Walk".parse::<GaitName>().unwrap(), GaitName::Walk);
        assert_eq!("rotary_gallop".parse::<GaitName>().unwrap(), GaitName::RotaryGallop);
    }

    #[test]
    fn custom_gaits_match_library() {
        let c = custom_gait([0.0, 0.0, 0.0, 0.0], None);
        assert_eq!(c.phi, gait_library::<f64>("pronk").unwrap().phi);
        let c = custom_gait([0.0, PI, PI, 0.0], None);
        assert_eq!(c.phi, gait_library::<f64>("trot").unwrap().phi);
        let c = custom_gait([PI, 0.0, 0.0, 0.0], None);
        for j in 1..4 {
            assert!((c.phi[0][j].abs() - PI).abs() < 1e-12);
            for k in 1..4 {
                assert_eq!(c.phi[j][k], 0.0);
            }
        }
    }

    #[test]
    fn gait_file_round_trip() {
        let lib = GaitLibrary::default();
        let text = lib.dump();
        let back = GaitLibrary::parse(&text).unwrap();
        assert_eq!(lib, back);
        assert_eq!(back.get::<f64>("pace").unwrap(), gait_library::<f64>("pace").unwrap());
    }

    #[test]
    fn gait_file_with_mask_and_errors() {
        let text = r#"
version = 1
[[gait]]
name = "three-one"
phase = [0.5, 0.0, 0.0, 0.0]
weights = [[0, 1, 1, 1], [1, 0, 1, 1], [1, 1, 0, 0.5], [1, 1, 0.5, 0]]
"#;
        let lib = GaitLibrary::parse(text).unwrap();
        let g = lib.get::<f32>("three-one").unwrap();
        assert_eq!(g.weight_mask[2][3], 0.5);
        assert!(lib.get::<f64>("trot").is_err());

        let bad_version = text.replace("version = 1", "version = 7");
        assert!(matches!(GaitLibrary::parse(&bad_version), Err(Error::VersionMismatch { .. })));
        let negative = text.replace("0.5, 0]]", "-0.5, 0]]");
        assert!(GaitLibrary::parse(&negative).is_err());
    }
}
