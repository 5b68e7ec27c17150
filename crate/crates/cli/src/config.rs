//! Flat `key=value` experiment configuration.
//!
//! One entry per line, `#` starts a comment, keys are dotted
//! (`potential.name=quadratic`). Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mabesov_core::{ConvexPotential, DomainBox};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Smoothness written either as a number or as a multiple of a measured
/// exponent, e.g. `0.125eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSpec {
    Absolute(f64),
    OfEps(f64),
}

impl AlphaSpec {
    pub fn resolve(&self, eps: f64) -> f64 {
        match *self {
            AlphaSpec::Absolute(a) => a,
            AlphaSpec::OfEps(c) => c * eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub alpha: AlphaSpec,
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyChoice {
    Canonical,
    TwoBump,
    MeanShifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignChoice {
    Random,
    Plus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub potential: String,
    pub dim: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub resolution: usize,
    /// `None` picks the admissible range of the grid.
    pub scales: Option<(i32, i32)>,
    pub n_max: usize,
    pub besov_params: Vec<ParamSpec>,
    pub second_profile: (f64, f64),
    pub family: FamilyChoice,
    pub signs: SignChoice,
    pub signs_seed: u64,
    pub i_range: Option<(i32, i32)>,
    pub sio_params: Vec<ParamSpec>,
    pub sio_pointwise: bool,
    pub samples: usize,
    pub ensemble: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Test hook: perturb one entry of `S_k` so symmetry fails.
    pub inject_asymmetry: bool,
    entries: BTreeMap<String, String>,
}

const KEYS: &[&str] = &[
    "potential.name",
    "potential.dim",
    "domain.lower",
    "domain.upper",
    "resolution",
    "scales.k_min",
    "scales.k_max",
    "calderon.n_max",
    "besov.params",
    "besov.second_profile",
    "family.kind",
    "family.signs",
    "family.signs_seed",
    "family.i_min",
    "family.i_max",
    "sio.params",
    "sio.pointwise",
    "samples",
    "ensemble",
    "seed",
    "output_dir",
    "test.inject_asymmetry",
];

const DEFAULTS: &[(&str, &str)] = &[
    ("potential.name", "quadratic"),
    ("potential.dim", "1"),
    ("domain.lower", "-4"),
    ("domain.upper", "4"),
    ("resolution", "512"),
    ("calderon.n_max", "6"),
    ("besov.params", "0,2,2; 0.125eps,1,1; -0.125eps,inf,inf"),
    ("besov.second_profile", "0.8,2"),
    ("family.kind", "canonical"),
    ("family.signs", "random"),
    ("family.signs_seed", "7"),
    ("sio.params", "0,2,2; 0.2eps,1,1; -0.2eps,inf,inf"),
    ("sio.pointwise", "false"),
    ("samples", "200"),
    ("ensemble", "50"),
    ("seed", "1"),
    ("output_dir", "."),
    ("test.inject_asymmetry", "false"),
];

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    match v.trim() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        s => s.parse::<f64>().map_err(|_| cfg_err(format!("{key}: '{s}' is not a number"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim().parse::<T>().map_err(|_| cfg_err(format!("{key}: cannot parse '{}'", v.trim())))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        s => Err(cfg_err(format!("{key}: expected true or false, got '{s}'"))),
    }
}

fn parse_point(key: &str, v: &str, dim: usize) -> Result<[f64; 2], CliError> {
    let parts: Vec<f64> = v.split(',').map(|s| parse_f64(key, s)).collect::<Result<_, _>>()?;
    match (dim, parts.as_slice()) {
        (1, [a]) => Ok([*a, 0.0]),
        (2, [a]) => Ok([*a, *a]),
        (2, [a, b]) => Ok([*a, *b]),
        _ => Err(cfg_err(format!("{key}: expected {dim} coordinate(s), got '{v}'"))),
    }
}

fn parse_alpha(key: &str, s: &str) -> Result<AlphaSpec, CliError> {
    let s = s.trim();
    if let Some(c) = s.strip_suffix("eps") {
        let c = match c.trim() {
            "" | "+" => 1.0,
            "-" => -1.0,
            c => parse_f64(key, c)?,
        };
        return Ok(AlphaSpec::OfEps(c));
    }
    Ok(AlphaSpec::Absolute(parse_f64(key, s)?))
}

/// `alpha,p,q` triples separated by `;`.
pub fn parse_param_list(key: &str, v: &str) -> Result<Vec<ParamSpec>, CliError> {
    let mut out = Vec::new();
    for item in v.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(',').collect();
        if parts.len() != 3 {
            return Err(cfg_err(format!("{key}: '{item}' is not an alpha,p,q triple")));
        }
        let p = parse_f64(key, parts[1])?;
        let q = parse_f64(key, parts[2])?;
        if !(p >= 1.0) || !(q >= 1.0) {
            return Err(cfg_err(format!("{key}: need p, q >= 1 in '{item}'")));
        }
        out.push(ParamSpec { alpha: parse_alpha(key, parts[0])?, p, q });
    }
    if out.is_empty() {
        return Err(cfg_err(format!("{key}: empty parameter list")));
    }
    Ok(out)
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut entries = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("line {}: expected key=value", lineno + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(cfg_err(format!("line {}: unknown key '{k}'", lineno + 1)));
        }
        if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(cfg_err(format!("line {}: duplicate key '{k}'", lineno + 1)));
        }
    }
    Ok(entries)
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        Self::from_entries(parse_entries(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    fn from_entries(mut entries: BTreeMap<String, String>) -> Result<Self, CliError> {
        for (k, v) in DEFAULTS {
            entries.entry(k.to_string()).or_insert_with(|| v.to_string());
        }
        let get = |k: &str| entries.get(k).map(String::as_str);
        let dim: usize = parse_num("potential.dim", get("potential.dim").unwrap())?;
        if dim != 1 && dim != 2 {
            return Err(cfg_err(format!("potential.dim must be 1 or 2, got {dim}")));
        }
        let lower = parse_point("domain.lower", get("domain.lower").unwrap(), dim)?;
        let upper = parse_point("domain.upper", get("domain.upper").unwrap(), dim)?;
        let scales = match (get("scales.k_min"), get("scales.k_max")) {
            (None, None) => None,
            (Some(a), Some(b)) => {
                let r = (parse_num("scales.k_min", a)?, parse_num("scales.k_max", b)?);
                if r.0 > r.1 {
                    return Err(cfg_err("scales.k_min exceeds scales.k_max"));
                }
                Some(r)
            }
            _ => return Err(cfg_err("scales.k_min and scales.k_max go together")),
        };
        let i_range = match (get("family.i_min"), get("family.i_max")) {
            (None, None) => None,
            (Some(a), Some(b)) => Some((parse_num("family.i_min", a)?, parse_num("family.i_max", b)?)),
            _ => return Err(cfg_err("family.i_min and family.i_max go together")),
        };
        let prof: Vec<f64> = get("besov.second_profile")
            .unwrap()
            .split(',')
            .map(|s| parse_f64("besov.second_profile", s))
            .collect::<Result<_, _>>()?;
        let [r1, r2] = prof[..] else {
            return Err(cfg_err("besov.second_profile needs r1,r2"));
        };
        let family = match get("family.kind").unwrap() {
            "canonical" => FamilyChoice::Canonical,
            "two-bump" => FamilyChoice::TwoBump,
            "mean-shifted" => FamilyChoice::MeanShifted,
            s => return Err(cfg_err(format!("family.kind: unknown family '{s}'"))),
        };
        let signs = match get("family.signs").unwrap() {
            "random" => SignChoice::Random,
            "plus" => SignChoice::Plus,
            s => return Err(cfg_err(format!("family.signs: expected random or plus, got '{s}'"))),
        };
        let resolution: usize = parse_num("resolution", get("resolution").unwrap())?;
        let samples: usize = parse_num("samples", get("samples").unwrap())?;
        let ensemble: usize = parse_num("ensemble", get("ensemble").unwrap())?;
        if samples == 0 || ensemble == 0 {
            return Err(cfg_err("samples and ensemble must be positive"));
        }
        let cfg = ExperimentConfig {
            potential: get("potential.name").unwrap().to_string(),
            dim,
            lower,
            upper,
            resolution,
            scales,
            n_max: parse_num("calderon.n_max", get("calderon.n_max").unwrap())?,
            besov_params: parse_param_list("besov.params", get("besov.params").unwrap())?,
            second_profile: (r1, r2),
            family,
            signs,
            signs_seed: parse_num("family.signs_seed", get("family.signs_seed").unwrap())?,
            i_range,
            sio_params: parse_param_list("sio.params", get("sio.params").unwrap())?,
            sio_pointwise: parse_bool("sio.pointwise", get("sio.pointwise").unwrap())?,
            samples,
            ensemble,
            seed: parse_num("seed", get("seed").unwrap())?,
            output_dir: PathBuf::from(get("output_dir").unwrap()),
            inject_asymmetry: parse_bool("test.inject_asymmetry", get("test.inject_asymmetry").unwrap())?,
            entries,
        };
        // fail early on a bad potential or box
        cfg.potential()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.entries.insert("seed".into(), seed.to_string());
        self
    }

    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        self.entries.insert("output_dir".into(), dir.display().to_string());
        self.output_dir = dir;
        self
    }

    pub fn potential(&self) -> Result<ConvexPotential, CliError> {
        let domain = if self.dim == 1 {
            DomainBox::new_1d(self.lower[0], self.upper[0])
        } else {
            DomainBox::new_2d(self.lower, self.upper)
        };
        ConvexPotential::from_name(&self.potential, self.dim, domain, false).map_err(|e| cfg_err(e.to_string()))
    }

    /// SHA-256 of the effective configuration in canonical form. The
    /// output directory is excluded so relocated runs hash alike.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries.iter().filter(|(k, _)| k.as_str() != "output_dir") {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let c = ExperimentConfig::from_text("").unwrap();
        assert_eq!(c.potential, "quadratic");
        assert_eq!(c.resolution, 512);
        assert_eq!(c.besov_params[0], ParamSpec { alpha: AlphaSpec::Absolute(0.0), p: 2.0, q: 2.0 });
        assert_eq!(c.besov_params[1].alpha, AlphaSpec::OfEps(0.125));
        assert!(c.besov_params[2].p.is_infinite());
    }

    #[test]
    fn comments_and_overrides() {
        let c = ExperimentConfig::from_text("# header\nresolution = 256  # coarse\nscales.k_min=1\nscales.k_max=7\n").unwrap();
        assert_eq!(c.resolution, 256);
        assert_eq!(c.scales, Some((1, 7)));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "potential.name=cubic",
            "domain.lower=4\ndomain.upper=-4",
            "nonsense=1",
            "resolution",
            "resolution=1\nresolution=2",
            "besov.params=0,2",
            "besov.params=0,0.5,2",
            "scales.k_min=3",
        ] {
            assert!(matches!(ExperimentConfig::from_text(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_tracks_seed_not_output_dir() {
        let a = ExperimentConfig::from_text("").unwrap();
        let b = a.clone().with_output_dir("/elsewhere".into());
        let c = a.clone().with_seed(99);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
