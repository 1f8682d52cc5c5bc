//! Caesium level structure, transition constants and Doppler maps.
//!
//! Hyperfine offsets and line strengths are read from plain-text line tables
//! (bundled under `data/`, or loaded from disk). Each table carries its
//! wavelength, natural linewidth and a SHA-256 checksum of its data rows in
//! `#@` header directives; ordinary `#` lines are comments.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{AfcError, Result};

pub const BOLTZMANN: f64 = 1.380649e-23;
/// 132.905451961 u.
pub const CS133_MASS: f64 = 2.206_946_95e-25;
pub const CS_D1_WAVELENGTH: f64 = 894.592_959_86e-9;
pub const CS_D2_WAVELENGTH: f64 = 852.347_275_82e-9;

const D2_TABLE: &str = include_str!("../data/cs133_d2.dat");
const D1_TABLE: &str = include_str!("../data/cs133_d1.dat");

#[derive(Debug, Clone, PartialEq)]
pub struct AtomSpecies {
    pub name: String,
    /// kg
    pub mass: f64,
    /// K
    pub temperature: f64,
    /// m
    pub d1_wavelength: f64,
    /// m
    pub d2_wavelength: f64,
}

impl AtomSpecies {
    pub fn new(
        name: impl Into<String>,
        mass: f64,
        temperature: f64,
        d1_wavelength: f64,
        d2_wavelength: f64,
    ) -> Result<Self> {
        let species = AtomSpecies {
            name: name.into(),
            mass,
            temperature,
            d1_wavelength,
            d2_wavelength,
        };
        species.validate()?;
        Ok(species)
    }

    pub fn caesium(temperature: f64) -> Result<Self> {
        Self::new("Cs-133", CS133_MASS, temperature, CS_D1_WAVELENGTH, CS_D2_WAVELENGTH)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(AfcError::domain(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(AfcError::domain(format!(
                "temperature must be positive, got {} K",
                self.temperature
            )));
        }
        if !(self.d1_wavelength > 0.0 && self.d2_wavelength > 0.0) {
            return Err(AfcError::domain("wavelengths must be positive"));
        }
        if !(self.d1_wavelength > self.d2_wavelength) {
            return Err(AfcError::domain(format!(
                "expected d1_wavelength > d2_wavelength, got {} <= {}",
                self.d1_wavelength, self.d2_wavelength
            )));
        }
        Ok(())
    }

    /// One-dimensional thermal velocity spread sqrt(kT/m), m/s.
    pub fn thermal_sigma(&self) -> f64 {
        (BOLTZMANN * self.temperature / self.mass).sqrt()
    }

    /// Most probable speed of the 3D Maxwell-Boltzmann distribution, sqrt(2kT/m).
    pub fn most_probable_speed(&self) -> f64 {
        (2.0 * BOLTZMANN * self.temperature / self.mass).sqrt()
    }
}

/// Hyperfine transition label: ground F and excited F'.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LineLabel {
    pub ground: u8,
    pub excited: u8,
}

impl LineLabel {
    pub const fn new(ground: u8, excited: u8) -> Self {
        LineLabel { ground, excited }
    }
}

impl fmt::Display for LineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F={}->F'={}", self.ground, self.excited)
    }
}

impl FromStr for LineLabel {
    type Err = AfcError;

    /// Accepts `4-5`, `4->5` and `F=4->F'=5`.
    fn from_str(s: &str) -> Result<Self> {
        let cleaned: String = s
            .chars()
            .filter(|c| !matches!(c, 'F' | '=' | '\'' | ' ' | '>'))
            .collect();
        let (g, e) = cleaned
            .split_once('-')
            .ok_or_else(|| AfcError::config(format!("cannot parse line label '{s}'")))?;
        let parse = |x: &str| {
            x.parse::<u8>()
                .map_err(|_| AfcError::config(format!("cannot parse line label '{s}'")))
        };
        Ok(LineLabel::new(parse(g)?, parse(e)?))
    }
}

/// Direction of a laser beam relative to the probe axis (+z).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Beam {
    CoPropagating,
    CounterPropagating,
}

impl Beam {
    fn sign(self) -> f64 {
        match self {
            Beam::CoPropagating => 1.0,
            Beam::CounterPropagating => -1.0,
        }
    }
}

/// Velocity class resonant with a laser detuned by `detuning` (Hz) from the line at rest.
pub fn velocity_for_detuning(wavelength: f64, detuning: f64, beam: Beam) -> f64 {
    beam.sign() * detuning * wavelength
}

/// Doppler shift (Hz) of the line seen by an atom of velocity `v` along +z.
pub fn detuning_for_velocity(wavelength: f64, velocity: f64, beam: Beam) -> f64 {
    beam.sign() * velocity / wavelength
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLine {
    pub label: LineLabel,
    /// Hz, relative to the table's reference line at rest.
    pub offset: f64,
    pub strength: f64,
    /// Hz, FWHM.
    pub natural_linewidth: f64,
    /// m
    pub wavelength: f64,
}

impl TransitionLine {
    pub fn resonant_velocity(&self, detuning: f64, beam: Beam) -> f64 {
        velocity_for_detuning(self.wavelength, detuning, beam)
    }

    pub fn doppler_shift(&self, velocity: f64, beam: Beam) -> f64 {
        detuning_for_velocity(self.wavelength, velocity, beam)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineTable {
    pub species: AtomSpecies,
    pub manifold: String,
    lines: Vec<TransitionLine>,
    reference: LineLabel,
    checksum: String,
}

impl LineTable {
    /// Builds a table from explicit lines. Exactly one line must sit at offset 0.
    pub fn new(species: AtomSpecies, manifold: impl Into<String>, lines: Vec<TransitionLine>) -> Result<Self> {
        species.validate()?;
        if lines.is_empty() {
            return Err(AfcError::config("line table is empty"));
        }
        let zeros: Vec<_> = lines.iter().filter(|l| l.offset == 0.0).collect();
        if zeros.len() != 1 {
            return Err(AfcError::config(format!(
                "exactly one line must have offset 0, found {}",
                zeros.len()
            )));
        }
        let reference = zeros[0].label;
        for (i, a) in lines.iter().enumerate() {
            if !(a.natural_linewidth > 0.0) {
                return Err(AfcError::config(format!(
                    "{}: natural linewidth must be positive",
                    a.label
                )));
            }
            if !(a.strength >= 0.0) || !a.offset.is_finite() {
                return Err(AfcError::config(format!("{}: bad strength or offset", a.label)));
            }
            if !(a.wavelength > 0.0) {
                return Err(AfcError::config(format!("{}: wavelength must be positive", a.label)));
            }
            if lines[..i].iter().any(|b| b.label == a.label) {
                return Err(AfcError::config(format!("duplicate line {}", a.label)));
            }
        }
        let checksum = hex::encode(Sha256::digest(canonical_rows(&lines).as_bytes()));
        Ok(LineTable {
            species,
            manifold: manifold.into(),
            lines,
            reference,
            checksum,
        })
    }

    /// Parses the whitespace-separated line-table format.
    pub fn parse(species: AtomSpecies, text: &str) -> Result<Self> {
        let mut meta = std::collections::HashMap::new();
        let mut rows = Vec::new();
        let mut raw_rows = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(directive) = line.strip_prefix("#@") {
                let mut it = directive.split_whitespace();
                if let (Some(k), Some(v)) = (it.next(), it.next()) {
                    meta.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(AfcError::config(format!(
                    "line table row {}: expected 4 fields, got {}",
                    n + 1,
                    fields.len()
                )));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| AfcError::config(format!("line table row {}: bad number '{s}'", n + 1)))
            };
            let int = |s: &str| {
                s.parse::<u8>()
                    .map_err(|_| AfcError::config(format!("line table row {}: bad quantum number '{s}'", n + 1)))
            };
            rows.push((
                LineLabel::new(int(fields[0])?, int(fields[1])?),
                num(fields[2])?,
                num(fields[3])?,
            ));
            raw_rows.push(fields.join(" "));
        }
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| AfcError::config(format!("line table header lacks '#@ {k}'")))
        };
        let parse_meta = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| AfcError::config(format!("line table header '{k}' is not a number")))
        };
        let wavelength = parse_meta("wavelength_m")?;
        let linewidth = parse_meta("natural_linewidth_hz")?;
        let manifold = get("manifold")?.clone();
        let lines: Vec<TransitionLine> = rows
            .into_iter()
            .map(|(label, offset, strength)| TransitionLine {
                label,
                offset,
                strength,
                natural_linewidth: linewidth,
                wavelength,
            })
            .collect();
        let mut table = LineTable::new(species, manifold, lines)?;
        let declared = get("sha256")?;
        let actual = hex::encode(Sha256::digest(raw_rows.join("\n").as_bytes()));
        if !declared.eq_ignore_ascii_case(&actual) {
            return Err(AfcError::config(format!(
                "line table checksum mismatch: header {declared}, data {actual}"
            )));
        }
        table.checksum = actual;
        Ok(table)
    }

    pub fn from_path(species: AtomSpecies, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AfcError::io(path, e))?;
        Self::parse(species, &text)
    }

    /// A one-line table, for synthetic spectra.
    pub fn single(species: AtomSpecies, line: TransitionLine) -> Result<Self> {
        let line = TransitionLine { offset: 0.0, ..line };
        Self::new(species, "synthetic", vec![line])
    }

    pub fn lines(&self) -> &[TransitionLine] {
        &self.lines
    }

    pub fn reference(&self) -> &TransitionLine {
        self.get(self.reference).expect("reference line present")
    }

    pub fn get(&self, label: LineLabel) -> Option<&TransitionLine> {
        self.lines.iter().find(|l| l.label == label)
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }
}

fn canonical_rows(lines: &[TransitionLine]) -> String {
    lines
        .iter()
        .map(|l| format!("{} {} {:e} {:e}", l.label.ground, l.label.excited, l.offset, l.strength))
        .collect::<Vec<_>>()
        .join("\n")
}

/// F=4 -> F'=3,4,5 lines of the D2 manifold, F'=5 at offset 0.
pub fn d2_line_table(species: &AtomSpecies) -> Result<LineTable> {
    let table = LineTable::parse(species.clone(), D2_TABLE)?;
    check_wavelength(&table, species.d2_wavelength)?;
    Ok(table)
}

/// D1 manifold, F=3 -> F'=4 at offset 0.
pub fn d1_line_table(species: &AtomSpecies) -> Result<LineTable> {
    let table = LineTable::parse(species.clone(), D1_TABLE)?;
    check_wavelength(&table, species.d1_wavelength)?;
    Ok(table)
}

fn check_wavelength(table: &LineTable, expected: f64) -> Result<()> {
    let w = table.reference().wavelength;
    if ((w - expected) / expected).abs() > 1e-6 {
        return Err(AfcError::config(format!(
            "{} table wavelength {w} m disagrees with species wavelength {expected} m",
            table.manifold
        )));
    }
    Ok(())
}

/// FWHM of the single-line Doppler profile, sqrt(8 ln2 kT/m) / lambda.
pub fn doppler_fwhm(species: &AtomSpecies, line: &TransitionLine) -> Result<f64> {
    if !(species.temperature > 0.0) {
        return Err(AfcError::domain(format!(
            "temperature must be positive, got {} K",
            species.temperature
        )));
    }
    Ok((8.0 * std::f64::consts::LN_2 * BOLTZMANN * species.temperature / species.mass).sqrt() / line.wavelength)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cs() -> AtomSpecies {
        AtomSpecies::caesium(294.0).unwrap()
    }

    #[test]
    fn d2_offsets() {
        let t = d2_line_table(&cs()).unwrap();
        let off = |e| t.get(LineLabel::new(4, e)).unwrap().offset;
        assert_eq!(off(5), 0.0);
        assert!((off(4) + 251.0e6).abs() < 0.1e6, "{}", off(4));
        assert!((off(3) + 452.4e6).abs() < 0.05e6, "{}", off(3));
        // pairwise differences are the tabulated splittings, exactly
        assert_eq!(off(5) - off(4), 251.0916e6);
        assert_eq!(off(4) - off(3), 452.3787e6 - 251.0916e6);
        assert_eq!(t.reference().label, LineLabel::new(4, 5));
        assert_relative_eq!(t.lines().iter().map(|l| l.strength).sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn d1_reference_is_pump_line() {
        let t = d1_line_table(&cs()).unwrap();
        assert_eq!(t.reference().label, LineLabel::new(3, 4));
        assert_eq!(t.lines().len(), 4);
    }

    #[test]
    fn checksum_is_recorded() {
        let t = d2_line_table(&cs()).unwrap();
        assert_eq!(
            t.checksum(),
            "73138799c6288ee1d59786152d9029cc9e5cae487ef4dd1f3b685581ff429a22"
        );
    }

    #[test]
    fn tampered_table_is_rejected() {
        let bad = D2_TABLE.replace("-251.0916e6", "-250.0000e6");
        assert!(matches!(LineTable::parse(cs(), &bad), Err(AfcError::Config(_))));
        let missing = D2_TABLE.replace("#@ wavelength_m", "# wavelength_m");
        assert!(matches!(LineTable::parse(cs(), &missing), Err(AfcError::Config(_))));
        let short_row = format!("{D2_TABLE}\n4 2 1.0\n");
        assert!(matches!(LineTable::parse(cs(), &short_row), Err(AfcError::Config(_))));
        assert!(matches!(
            LineTable::from_path(cs(), "/nonexistent/table.dat"),
            Err(AfcError::Io { .. })
        ));
    }

    #[test]
    fn doppler_width_room_temperature() {
        let t = d2_line_table(&cs()).unwrap();
        let w = doppler_fwhm(&cs(), t.reference()).unwrap();
        assert!((w - 375e6).abs() < 1.5e6, "{w}");
    }

    #[test]
    fn doppler_width_scaling() {
        let t = d2_line_table(&cs()).unwrap();
        let line = t.reference();
        let mut s = cs();
        let w1 = doppler_fwhm(&s, line).unwrap();
        s.temperature *= 4.0;
        assert_relative_eq!(doppler_fwhm(&s, line).unwrap() / w1, 2.0, epsilon = 1e-12);
        let longer = TransitionLine {
            wavelength: line.wavelength * 2.0,
            ..line.clone()
        };
        assert_relative_eq!(
            doppler_fwhm(&s, &longer).unwrap() / doppler_fwhm(&s, line).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        s.temperature = 1e-12;
        assert!(doppler_fwhm(&s, line).unwrap() < 1e3);
        s.temperature = 0.0;
        assert!(matches!(doppler_fwhm(&s, line), Err(AfcError::Domain(_))));
    }

    #[test]
    fn speeds() {
        assert!((cs().most_probable_speed() - 192.0).abs() < 0.5);
    }

    #[test]
    fn velocity_maps() {
        let s = cs();
        let d1 = d1_line_table(&s).unwrap();
        let d2 = d2_line_table(&s).unwrap();
        let pump = d1.reference();
        let probe = d2.reference();
        assert_eq!(pump.resonant_velocity(0.0, Beam::CounterPropagating), 0.0);
        let dv = pump.resonant_velocity(125.5e6, Beam::CoPropagating);
        assert!((dv - 112.3).abs() < 0.05, "{dv}");
        let probe_spacing = probe.doppler_shift(dv, Beam::CoPropagating);
        assert!((probe_spacing - 131.7e6).abs() < 0.05e6, "{probe_spacing}");
        let v = probe.resonant_velocity(251e6, Beam::CoPropagating);
        assert!((v - 214.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn labels_parse() {
        for s in ["4-5", "4->5", "F=4->F'=5"] {
            assert_eq!(s.parse::<LineLabel>().unwrap(), LineLabel::new(4, 5));
        }
        assert!("45".parse::<LineLabel>().is_err());
        assert_eq!(LineLabel::new(3, 4).to_string(), "F=3->F'=4");
    }

    #[test]
    fn species_invariants() {
        assert!(AtomSpecies::caesium(-1.0).is_err());
        assert!(AtomSpecies::new("x", 1e-25, 300.0, 800e-9, 850e-9).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn map_round_trip_is_identity(det in -2.0e9f64..2.0e9, co in any::<bool>()) {
                let beam = if co { Beam::CoPropagating } else { Beam::CounterPropagating };
                let v = velocity_for_detuning(CS_D2_WAVELENGTH, det, beam);
                let back = detuning_for_velocity(CS_D2_WAVELENGTH, v, beam);
                prop_assert!((back - det).abs() <= 1e-15 * det.abs().max(1.0) * 4.0);
                // odd and linear
                prop_assert_eq!(velocity_for_detuning(CS_D2_WAVELENGTH, -det, beam), -v);
                let v2 = velocity_for_detuning(CS_D2_WAVELENGTH, 2.0 * det, beam);
                prop_assert!((v2 - 2.0 * v).abs() <= 1e-12 * v.abs().max(1e-9));
            }
        }
    }
}
