//! Run configuration: a line-oriented, sectioned `key = value` format.
//!
//! ```text
//! # comment
//! [model]
//! variant = constant
//! lambda = 2.0
//!
//! [claims]
//! family = exponential
//! rate = 10.0
//! ```
//!
//! Sections: `[model]`, `[claims]`, `[prevention]`, `[run]`, and the
//! optional `[insurance]` and `[checks]`. Unknown sections, unknown keys,
//! duplicate keys, and malformed values are all reported with their line
//! number. Every parse also records a SHA-256 digest of the raw bytes so
//! output files can name the exact configuration that produced them.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::prevention::{validate_spec, CostFn, Effort, ImpactFn, PreventionSpec};
use crate::risk_models::{ClaimDistribution, ExcitationMap, IntensityModel, PPS_PHI_THRESHOLD};

/// `[run]` section: simulation size and reproducibility.
#[derive(Debug, Clone)]
pub struct RunSection {
    pub seed: u64,
    pub n_paths: usize,
    /// Node count of the backward value grid (even).
    pub value_grid: usize,
    /// Optional fixed effort for path dumps and weighting demos.
    pub effort: Option<Effort>,
}

/// `[insurance]` section: proportional-transfer pricing inputs.
#[derive(Debug, Clone)]
pub struct InsuranceSection {
    pub loading: f64,
    pub refund_fraction: f64,
    pub reference_intensity: f64,
    /// Loadings for a comparative-statics sweep.
    pub loading_sweep: Option<Vec<f64>>,
}

/// `[checks]` section: verification budgets.
#[derive(Debug, Clone)]
pub struct ChecksSection {
    pub n_paths: usize,
    pub grid_intervals: usize,
    /// Admissibility margin parameter for the integrability scan.
    pub phi: f64,
}

/// A fully interpreted configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub model: IntensityModel,
    pub claims: ClaimDistribution,
    pub spec: PreventionSpec,
    pub run: RunSection,
    pub insurance: Option<InsuranceSection>,
    pub checks: ChecksSection,
    /// Hex SHA-256 of the raw configuration bytes.
    pub sha256: String,
}

/// Hex SHA-256 digest of raw configuration bytes.
pub fn config_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn err(line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

/// Raw parse tree: `(section, key) -> (line, value)`.
struct RawConfig {
    entries: BTreeMap<(String, String), (usize, String)>,
    sections: Vec<String>,
}

const KNOWN_SECTIONS: &[&str] = &["model", "claims", "prevention", "run", "insurance", "checks"];

fn parse_raw(text: &str) -> Result<RawConfig, Error> {
    let mut entries = BTreeMap::new();
    let mut sections = Vec::new();
    let mut current: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(Some(line_no), "section header is missing its closing ]"))?
                .trim()
                .to_string();
            if !KNOWN_SECTIONS.contains(&name.as_str()) {
                return Err(err(
                    Some(line_no),
                    format!("unknown section [{name}]; expected one of {KNOWN_SECTIONS:?}"),
                ));
            }
            if sections.contains(&name) {
                return Err(err(Some(line_no), format!("section [{name}] appears twice")));
            }
            sections.push(name.clone());
            current = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(Some(line_no), "expected `key = value` or a [section] header"))?;
        let section = current
            .clone()
            .ok_or_else(|| err(Some(line_no), "key appears before any [section] header"))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(err(Some(line_no), "empty key"));
        }
        if let Some((prev_line, _)) =
            entries.insert((section.clone(), key.clone()), (line_no, value))
        {
            return Err(err(
                Some(line_no),
                format!("duplicate key `{key}` in [{section}] (first set on line {prev_line})"),
            ));
        }
    }
    Ok(RawConfig { entries, sections })
}

/// Typed accessors over the raw tree that consume keys as they are read,
/// so leftovers can be reported as unknown.
struct Reader {
    entries: BTreeMap<(String, String), (usize, String)>,
}

impl Reader {
    fn take(&mut self, section: &str, key: &str) -> Option<(usize, String)> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn require_str(&mut self, section: &str, key: &str) -> Result<(usize, String), Error> {
        self.take(section, key)
            .ok_or_else(|| err(None, format!("missing required key `{key}` in [{section}]")))
    }

    fn take_f64(&mut self, section: &str, key: &str) -> Result<Option<f64>, Error> {
        match self.take(section, key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| err(Some(line), format!("`{key}` must be a number, got `{v}`"))),
        }
    }

    fn require_f64(&mut self, section: &str, key: &str) -> Result<f64, Error> {
        self.take_f64(section, key)?
            .ok_or_else(|| err(None, format!("missing required key `{key}` in [{section}]")))
    }

    fn take_u64(&mut self, section: &str, key: &str) -> Result<Option<u64>, Error> {
        match self.take(section, key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<u64>().map(Some).map_err(|_| {
                err(Some(line), format!("`{key}` must be a nonnegative integer, got `{v}`"))
            }),
        }
    }

    fn take_usize(&mut self, section: &str, key: &str) -> Result<Option<usize>, Error> {
        Ok(self.take_u64(section, key)?.map(|v| v as usize))
    }

    fn take_f64_list(&mut self, section: &str, key: &str) -> Result<Option<Vec<f64>>, Error> {
        match self.take(section, key) {
            None => Ok(None),
            Some((line, v)) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    let part = part.trim();
                    out.push(part.parse::<f64>().map_err(|_| {
                        err(
                            Some(line),
                            format!("`{key}` must be a comma-separated number list; bad entry `{part}`"),
                        )
                    })?);
                }
                if out.is_empty() {
                    return Err(err(Some(line), format!("`{key}` must not be empty")));
                }
                Ok(Some(out))
            }
        }
    }

    /// Any keys left in `section` are unknown.
    fn reject_leftovers(&self, section: &str) -> Result<(), Error> {
        for ((s, key), (line, _)) in &self.entries {
            if s == section {
                return Err(err(Some(*line), format!("unknown key `{key}` in [{section}]")));
            }
        }
        Ok(())
    }
}

fn parse_claim_law(
    reader: &mut Reader,
    section: &str,
    prefix: &str,
) -> Result<ClaimDistribution, Error> {
    let key = |name: &str| {
        if prefix.is_empty() {
            name.to_string()
        } else {
            format!("{prefix}_{name}")
        }
    };
    let (line, family) = reader.require_str(section, &key("family"))?;
    let dist = match family.as_str() {
        "point_mass" => {
            let z0 = reader.require_f64(section, &key("z0"))?;
            ClaimDistribution::point_mass(z0)
        }
        "exponential" => {
            let rate = reader.require_f64(section, &key("rate"))?;
            ClaimDistribution::exponential(rate)
        }
        "uniform" => {
            let lo = reader.require_f64(section, &key("lo"))?;
            let hi = reader.require_f64(section, &key("hi"))?;
            ClaimDistribution::uniform(lo, hi)
        }
        other => {
            return Err(err(
                Some(line),
                format!(
                    "unknown claim family `{other}`; expected point_mass, exponential, or uniform"
                ),
            ))
        }
    };
    dist.map_err(|e| err(Some(line), format!("invalid {family} claim law: {e}")))
}

fn parse_model(reader: &mut Reader) -> Result<IntensityModel, Error> {
    let (line, variant) = reader.require_str("model", "variant")?;
    let model = match variant.as_str() {
        "constant" => {
            let lambda = reader.require_f64("model", "lambda")?;
            IntensityModel::Constant { lambda }
        }
        "markov_modulated" => {
            let levels = reader
                .take_f64_list("model", "levels")?
                .ok_or_else(|| err(None, "missing required key `levels` in [model]"))?;
            let initial = reader
                .take_usize("model", "initial")?
                .ok_or_else(|| err(None, "missing required key `initial` in [model]"))?;
            let n = levels.len();
            let mut q = Vec::with_capacity(n);
            for i in 0..n {
                let row_key = format!("q_row.{i}");
                let row = reader.take_f64_list("model", &row_key)?.ok_or_else(|| {
                    err(None, format!("missing required key `{row_key}` in [model]"))
                })?;
                if row.len() != n {
                    return Err(err(
                        None,
                        format!("`{row_key}` must have {n} entries to match `levels`"),
                    ));
                }
                q.push(row);
            }
            IntensityModel::MarkovModulated { q, levels, initial }
        }
        "cox" => IntensityModel::ShotNoiseCox {
            beta: reader.require_f64("model", "beta")?,
            alpha: reader.require_f64("model", "alpha")?,
            lambda0: reader.require_f64("model", "lambda0")?,
            shock_rate: reader.require_f64("model", "shock_rate")?,
            shock_law: parse_claim_law(reader, "model", "shock_size")?,
        },
        "contagion" => {
            let (exc_line, excitation_kind) = reader.require_str("model", "excitation")?;
            let excitation = match excitation_kind.as_str() {
                "linear" => {
                    ExcitationMap::Linear { c: reader.require_f64("model", "excitation_c")? }
                }
                "capped_linear" => ExcitationMap::CappedLinear {
                    c: reader.require_f64("model", "excitation_c")?,
                    cap: reader.require_f64("model", "excitation_cap")?,
                },
                other => {
                    return Err(err(
                        Some(exc_line),
                        format!("unknown excitation `{other}`; expected linear or capped_linear"),
                    ))
                }
            };
            IntensityModel::Contagion {
                beta: reader.require_f64("model", "beta")?,
                alpha: reader.require_f64("model", "alpha")?,
                lambda0: reader.require_f64("model", "lambda0")?,
                shock_rate: reader.require_f64("model", "shock_rate")?,
                shock_law: parse_claim_law(reader, "model", "shock_size")?,
                excitation,
            }
        }
        other => {
            return Err(err(
                Some(line),
                format!(
                    "unknown model variant `{other}`; expected constant, markov_modulated, cox, or contagion"
                ),
            ))
        }
    };
    reader.reject_leftovers("model")?;
    model
        .validate()
        .map_err(|e| err(None, format!("[model] is inconsistent: {e}")))?;
    Ok(model)
}

fn parse_impact(reader: &mut Reader, which: &str) -> Result<ImpactFn, Error> {
    let key = |name: &str| format!("{which}_{name}");
    let (line, family) = reader.require_str("prevention", &key("family"))?;
    match family.as_str() {
        "exp_decay" => Ok(ImpactFn::ExpDecay {
            alpha: reader.require_f64("prevention", &key("alpha"))?,
        }),
        "hyperbolic" => Ok(ImpactFn::Hyperbolic),
        "linear_down" => Ok(ImpactFn::LinearDown),
        "one" => Ok(ImpactFn::One),
        "affine_up" => Ok(ImpactFn::AffineUp {
            slope: reader.require_f64("prevention", &key("slope"))?,
        }),
        other => Err(err(
            Some(line),
            format!(
                "unknown impact family `{other}` for {which}; expected exp_decay, hyperbolic, linear_down, one, or affine_up"
            ),
        )),
    }
}

fn parse_cost(reader: &mut Reader, which: &str) -> Result<CostFn, Error> {
    let key = |name: &str| format!("{which}_{name}");
    let (line, family) = reader.require_str("prevention", &key("family"))?;
    match family.as_str() {
        "quadratic" => Ok(CostFn::Quadratic {
            scale: reader.require_f64("prevention", &key("scale"))?,
        }),
        "shifted_quadratic" => Ok(CostFn::ShiftedQuadratic {
            scale: reader.require_f64("prevention", &key("scale"))?,
        }),
        "affine" => Ok(CostFn::Affine {
            intercept: reader.require_f64("prevention", &key("intercept"))?,
            slope: reader.require_f64("prevention", &key("slope"))?,
        }),
        "zero" => Ok(CostFn::Zero),
        other => Err(err(
            Some(line),
            format!(
                "unknown cost family `{other}` for {which}; expected quadratic, shifted_quadratic, affine, or zero"
            ),
        )),
    }
}

fn parse_prevention(reader: &mut Reader) -> Result<PreventionSpec, Error> {
    let spec = PreventionSpec {
        gamma1: parse_impact(reader, "gamma1")?,
        gamma2: parse_impact(reader, "gamma2")?,
        c1: parse_cost(reader, "c1")?,
        c2: parse_cost(reader, "c2")?,
        zeta1: reader.require_f64("prevention", "zeta1")?,
        zeta2: reader.require_f64("prevention", "zeta2")?,
        eta: reader.require_f64("prevention", "eta")?,
        r: reader.require_f64("prevention", "r")?,
        horizon: reader.require_f64("prevention", "horizon")?,
        x0: reader.require_f64("prevention", "x0")?,
    };
    reader.reject_leftovers("prevention")?;
    let problems = validate_spec(&spec);
    if !problems.is_empty() {
        return Err(err(None, format!("[prevention] is inconsistent: {}", problems.join("; "))));
    }
    Ok(spec)
}

/// Parse and interpret a configuration file.
pub fn parse_config(text: &str) -> Result<Config, Error> {
    let raw = parse_raw(text)?;
    for required in ["model", "claims", "prevention", "run"] {
        if !raw.sections.iter().any(|s| s == required) {
            return Err(err(None, format!("missing required section [{required}]")));
        }
    }
    let has_insurance = raw.sections.iter().any(|s| s == "insurance");
    let has_checks = raw.sections.iter().any(|s| s == "checks");
    let mut reader = Reader { entries: raw.entries };

    let model = parse_model(&mut reader)?;
    let claims = parse_claim_law(&mut reader, "claims", "")?;
    reader.reject_leftovers("claims")?;
    let spec = parse_prevention(&mut reader)?;

    let seed = reader.take_u64("run", "seed")?.unwrap_or(1);
    let n_paths = reader.take_usize("run", "n_paths")?.unwrap_or(100_000);
    let value_grid = reader.take_usize("run", "value_grid")?.unwrap_or(512);
    let u1 = reader.take_f64("run", "effort_u1")?;
    let u2 = reader.take_f64("run", "effort_u2")?;
    let effort = match (u1, u2) {
        (None, None) => None,
        (a, b) => Some(Effort::new(a.unwrap_or(0.0), b.unwrap_or(0.0))),
    };
    reader.reject_leftovers("run")?;
    let run = RunSection { seed, n_paths, value_grid, effort };

    let insurance = if has_insurance {
        let loading = reader.require_f64("insurance", "loading")?;
        let refund_fraction = reader.take_f64("insurance", "refund_fraction")?.unwrap_or(0.0);
        let reference_intensity = reader.require_f64("insurance", "reference_intensity")?;
        let loading_sweep = reader.take_f64_list("insurance", "loading_sweep")?;
        reader.reject_leftovers("insurance")?;
        Some(InsuranceSection { loading, refund_fraction, reference_intensity, loading_sweep })
    } else {
        None
    };

    let checks = if has_checks {
        let n_paths = reader.take_usize("checks", "n_paths")?.unwrap_or(100_000);
        let grid_intervals = reader.take_usize("checks", "grid_intervals")?.unwrap_or(20);
        let phi = reader.take_f64("checks", "phi")?.unwrap_or(0.9 * PPS_PHI_THRESHOLD);
        reader.reject_leftovers("checks")?;
        ChecksSection { n_paths, grid_intervals, phi }
    } else {
        ChecksSection {
            n_paths: 100_000,
            grid_intervals: 20,
            phi: 0.9 * PPS_PHI_THRESHOLD,
        }
    };

    Ok(Config {
        model,
        claims,
        spec,
        run,
        insurance,
        checks,
        sha256: config_sha256(text.as_bytes()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
# demonstration run
[model]
variant = constant
lambda = 2.0

[claims]
family = exponential
rate = 10.0

[prevention]
gamma1_family = exp_decay
gamma1_alpha = 0.8
gamma2_family = linear_down
c1_family = quadratic
c1_scale = 1.0
c2_family = quadratic
c2_scale = 1.0
zeta1 = 1.0
zeta2 = 1.0
eta = 0.5
r = 0.0
horizon = 1.0
x0 = 0.2

[run]
seed = 42
n_paths = 5000
";

    #[test]
    fn parses_a_complete_constant_model_file() {
        let cfg = parse_config(GOOD).unwrap();
        assert!(matches!(cfg.model, IntensityModel::Constant { lambda } if lambda == 2.0));
        assert!(matches!(cfg.claims, ClaimDistribution::Exponential { rate } if rate == 10.0));
        assert_eq!(cfg.run.seed, 42);
        assert_eq!(cfg.run.n_paths, 5000);
        assert_eq!(cfg.run.value_grid, 512, "default grid");
        assert!(cfg.run.effort.is_none());
        assert!(cfg.insurance.is_none());
        assert_eq!(cfg.checks.grid_intervals, 20, "default checks");
        assert_eq!(cfg.sha256.len(), 64);
        assert_eq!(cfg.sha256, config_sha256(GOOD.as_bytes()));
    }

    #[test]
    fn digest_tracks_bytes_exactly() {
        let a = config_sha256(GOOD.as_bytes());
        let b = config_sha256(format!("{GOOD} ").as_bytes());
        assert_ne!(a, b);
    }

    fn expect_line(text: &str, needle: &str, want_line: usize) {
        match parse_config(text) {
            Err(Error::Config { line, message }) => {
                assert!(
                    message.contains(needle),
                    "message `{message}` should mention `{needle}`"
                );
                assert_eq!(line, Some(want_line), "for `{message}`");
            }
            other => panic!("expected a config error mentioning `{needle}`, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_keys_are_line_anchored() {
        let text = format!("{GOOD}seed = 43\n");
        // GOOD has 27 lines; the duplicate lands on line 28.
        expect_line(&text, "duplicate key `seed`", 28);
    }

    #[test]
    fn unknown_keys_sections_and_values_are_rejected() {
        expect_line(&format!("{GOOD}typo = 1\n"), "unknown key `typo`", 28);
        expect_line(&format!("{GOOD}\n[mystery]\n"), "unknown section", 29);
        expect_line(&GOOD.replace("lambda = 2.0", "lambda = fast"), "must be a number", 4);
        expect_line(&GOOD.replace("variant = constant", "variant = brownian"), "unknown model variant", 3);
    }

    #[test]
    fn keys_before_any_section_are_rejected() {
        expect_line("seed = 1\n", "before any [section]", 1);
    }

    #[test]
    fn missing_sections_and_keys_are_reported() {
        let no_run = GOOD.replace("[run]", "").replace("seed = 42", "").replace("n_paths = 5000", "");
        match parse_config(&no_run) {
            Err(Error::Config { line: None, message }) => {
                assert!(message.contains("[run]"), "{message}");
            }
            other => panic!("expected missing-section error, got {other:?}"),
        }
        let no_rate = GOOD.replace("rate = 10.0", "");
        match parse_config(&no_rate) {
            Err(Error::Config { message, .. }) => {
                assert!(message.contains("`rate`"), "{message}");
            }
            other => panic!("expected missing-key error, got {other:?}"),
        }
    }

    #[test]
    fn semantic_validation_runs_after_parsing() {
        // A negative intensity parses but fails model validation.
        let bad = GOOD.replace("lambda = 2.0", "lambda = -1.0");
        match parse_config(&bad) {
            Err(Error::Config { message, .. }) => {
                assert!(message.contains("[model]"), "{message}");
            }
            other => panic!("expected semantic model error, got {other:?}"),
        }
        let bad = GOOD.replace("eta = 0.5", "eta = -0.5");
        match parse_config(&bad) {
            Err(Error::Config { message, .. }) => {
                assert!(message.contains("[prevention]"), "{message}");
            }
            other => panic!("expected semantic prevention error, got {other:?}"),
        }
    }

    #[test]
    fn markov_modulated_rows_must_match_levels() {
        let text = "\
[model]
variant = markov_modulated
levels = 1.0, 3.0
initial = 0
q_row.0 = -2.0, 2.0
q_row.1 = 1.0, -1.0

[claims]
family = point_mass
z0 = 0.5

[prevention]
gamma1_family = exp_decay
gamma1_alpha = 0.8
gamma2_family = linear_down
c1_family = quadratic
c1_scale = 1.0
c2_family = quadratic
c2_scale = 1.0
zeta1 = 1.0
zeta2 = 1.0
eta = 0.5
r = 0.0
horizon = 1.0
x0 = 0.0

[run]
seed = 7
";
        let cfg = parse_config(text).unwrap();
        match cfg.model {
            IntensityModel::MarkovModulated { q, levels, initial } => {
                assert_eq!(levels, vec![1.0, 3.0]);
                assert_eq!(initial, 0);
                assert_eq!(q, vec![vec![-2.0, 2.0], vec![1.0, -1.0]]);
            }
            other => panic!("wrong model: {other:?}"),
        }
        let short = text.replace("q_row.0 = -2.0, 2.0", "q_row.0 = -2.0");
        match parse_config(&short) {
            Err(Error::Config { message, .. }) => {
                assert!(message.contains("q_row.0"), "{message}");
            }
            other => panic!("expected row-length error, got {other:?}"),
        }
    }

    #[test]
    fn contagion_and_insurance_sections_round_trip() {
        let text = "\
[model]
variant = contagion
beta = 0.8
alpha = 1.0
lambda0 = 1.2
shock_rate = 0.4
shock_size_family = exponential
shock_size_rate = 2.0
excitation = linear
excitation_c = 0.5

[claims]
family = exponential
rate = 1.0

[prevention]
gamma1_family = exp_decay
gamma1_alpha = 0.8
gamma2_family = linear_down
c1_family = quadratic
c1_scale = 1.0
c2_family = quadratic
c2_scale = 1.0
zeta1 = 1.0
zeta2 = 1.0
eta = 0.5
r = 0.0
horizon = 1.0
x0 = 0.0

[run]
seed = 9

[insurance]
loading = 0.3
refund_fraction = 0.5
reference_intensity = 1.5
loading_sweep = 0.0, 0.25, 0.5

[checks]
n_paths = 20000
grid_intervals = 10
";
        let cfg = parse_config(text).unwrap();
        match &cfg.model {
            IntensityModel::Contagion { shock_law, excitation, .. } => {
                assert!(matches!(shock_law, ClaimDistribution::Exponential { rate } if *rate == 2.0));
                assert!(matches!(excitation, ExcitationMap::Linear { c } if *c == 0.5));
            }
            other => panic!("wrong model: {other:?}"),
        }
        let ins = cfg.insurance.expect("insurance section present");
        assert_eq!(ins.loading, 0.3);
        assert_eq!(ins.refund_fraction, 0.5);
        assert_eq!(ins.loading_sweep.as_deref(), Some(&[0.0, 0.25, 0.5][..]));
        assert_eq!(cfg.checks.n_paths, 20000);
        assert_eq!(cfg.checks.grid_intervals, 10);
        assert!((cfg.checks.phi - 0.9 * PPS_PHI_THRESHOLD).abs() <= 1e-18);
    }
}
