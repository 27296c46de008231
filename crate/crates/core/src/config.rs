//! Experiment configuration: flat `key = value` text with `#` comments.
//!
//! ```text
//! model = model2
//! p = 0.1
//! q = 0.3
//! code = random_linear(10,4,1)
//! mode = both
//! n_trials = 100000
//! master_seed = 42
//! xi = 0.15
//! eps_prime = 0.2
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::code::CodeSpec;
use crate::keys::ExtractionParams;
use crate::source::{Model1Params, Model2Params, Model3Params, Model4Params, SourceModel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Empirical,
    Both,
}

impl Mode {
    pub fn exact(self) -> bool {
        matches!(self, Mode::Exact | Mode::Both)
    }

    pub fn empirical(self) -> bool {
        matches!(self, Mode::Empirical | Mode::Both)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::Empirical => "empirical",
            Mode::Both => "both",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact" => Ok(Mode::Exact),
            "empirical" => Ok(Mode::Empirical),
            "both" => Ok(Mode::Both),
            other => Err(Error::Config(format!("mode must be exact, empirical or both, got '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: SourceModel,
    pub code: CodeSpec,
    pub n_trials: u64,
    pub master_seed: u64,
    pub xi: Option<f64>,
    pub eps_prime: Option<f64>,
    pub epsilon: Option<f64>,
    pub mode: Mode,
    pub output_path: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "model",
    "p",
    "q",
    "link_probs",
    "code",
    "n_trials",
    "master_seed",
    "xi",
    "eps_prime",
    "epsilon",
    "mode",
    "output_path",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value for {key} ('{value}'): {e}")))
}

fn as_config<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })
}

impl ExperimentConfig {
    /// `model` on `code` with default settings (exact mode, no trials).
    pub fn new(model: SourceModel, code: CodeSpec) -> Self {
        Self {
            model,
            code,
            n_trials: 0,
            master_seed: 0,
            xi: None,
            eps_prime: None,
            epsilon: None,
            mode: Mode::Exact,
            output_path: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("line {}: unknown key '{key}'", lineno + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        let get = |key: &str| entries.get(key).map(String::as_str);
        let require = |key: &str| get(key).ok_or_else(|| Error::Config(format!("missing required key '{key}'")));
        let float = |key: &str| get(key).map(|v| parse_value::<f64>(key, v)).transpose();

        let model_name = require("model")?;
        let p = || float("p")?.ok_or_else(|| Error::Config(format!("{model_name} needs p")));
        let q = || float("q")?.ok_or_else(|| Error::Config(format!("{model_name} needs q")));
        let model = match model_name {
            "model1" => SourceModel::Model1(as_config(Model1Params::new(p()?))?),
            "model2" => SourceModel::Model2(as_config(Model2Params::new(p()?, q()?))?),
            "model3" => {
                let list = require("link_probs")?;
                let probs = list
                    .split(',')
                    .map(|v| parse_value::<f64>("link_probs", v.trim()))
                    .collect::<Result<Vec<_>>>()?;
                SourceModel::Model3(as_config(Model3Params::new(probs))?)
            }
            "model4" => SourceModel::Model4(as_config(Model4Params::new(p()?, q()?))?),
            other => return Err(Error::Config(format!("unknown model '{other}'"))),
        };
        let allowed: &[&str] = match model {
            SourceModel::Model1(_) => &["p"],
            SourceModel::Model2(_) | SourceModel::Model4(_) => &["p", "q"],
            SourceModel::Model3(_) => &["link_probs"],
        };
        for key in ["p", "q", "link_probs"] {
            if get(key).is_some() && !allowed.contains(&key) {
                return Err(Error::Config(format!("{model_name} does not take '{key}'")));
            }
        }

        let config = Self {
            model,
            code: parse_value("code", require("code")?)?,
            n_trials: get("n_trials").map_or(Ok(0), |v| parse_value("n_trials", v))?,
            master_seed: get("master_seed").map_or(Ok(0), |v| parse_value("master_seed", v))?,
            xi: float("xi")?,
            eps_prime: float("eps_prime")?,
            epsilon: float("epsilon")?,
            mode: get("mode").map_or(Ok(Mode::Exact), str::parse)?,
            output_path: get("output_path").map(PathBuf::from),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Extraction settings: model defaults overridden by explicit values.
    pub fn extraction(&self) -> ExtractionParams {
        let d = ExtractionParams::defaults_for(&self.model);
        let xi = self.xi.unwrap_or(d.xi);
        let epsilon = self.epsilon.unwrap_or(d.epsilon);
        let eps_prime = self.eps_prime.unwrap_or_else(|| {
            ExtractionParams::min_eps_prime(&self.model, xi, epsilon) + ExtractionParams::DEFAULT_EPS_PRIME_MARGIN
        });
        ExtractionParams { xi, eps_prime, epsilon }
    }

    /// Checks parameter relations that do not need the code.
    pub fn validate(&self) -> Result<()> {
        as_config(self.extraction().validate_for(&self.model))?;
        if self.mode.empirical() && self.n_trials == 0 {
            return Err(Error::Config(format!("mode {} needs n_trials > 0", self.mode)));
        }
        Ok(())
    }
}

impl fmt::Display for ExperimentConfig {
    /// Canonical form; parsing it gives back an equal config.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model = {}", self.model.name())?;
        match &self.model {
            SourceModel::Model1(m) => writeln!(f, "p = {}", m.p())?,
            SourceModel::Model2(m) => writeln!(f, "p = {}\nq = {}", m.p(), m.q())?,
            SourceModel::Model3(m) => {
                let list: Vec<String> = m.link_probs().iter().map(f64::to_string).collect();
                writeln!(f, "link_probs = {}", list.join(","))?
            }
            SourceModel::Model4(m) => writeln!(f, "p = {}\nq = {}", m.p(), m.q())?,
        }
        writeln!(f, "code = {}", self.code)?;
        writeln!(f, "mode = {}", self.mode)?;
        writeln!(f, "n_trials = {}", self.n_trials)?;
        writeln!(f, "master_seed = {}", self.master_seed)?;
        for (key, value) in [("xi", self.xi), ("eps_prime", self.eps_prime), ("epsilon", self.epsilon)] {
            if let Some(v) = value {
                writeln!(f, "{key} = {v}")?;
            }
        }
        if let Some(path) = &self.output_path {
            writeln!(f, "output_path = {}", path.display())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_commented_config() {
        let text = "# demo\nmodel = model1   # BSC source\np = 0.05\ncode = hamming(3)\n\nmode = both\nn_trials = 1000\nmaster_seed = 7\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.model, SourceModel::Model1(Model1Params::new(0.05).unwrap()));
        assert_eq!(c.code, CodeSpec::Hamming(3));
        assert_eq!(c.mode, Mode::Both);
        assert_eq!((c.n_trials, c.master_seed), (1000, 7));
        assert_eq!(c.output_path, None);
    }

    #[test]
    fn model3_link_list() {
        let c = ExperimentConfig::parse("model = model3\nlink_probs = 0.03, 0.05\ncode = hamming(3)\n").unwrap();
        assert_eq!(c.model, SourceModel::Model3(Model3Params::new(vec![0.03, 0.05]).unwrap()));
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "model = model1\ncode = hamming(3)\n",
            "model = model1\np = 0.7\ncode = hamming(3)\n",
            "model = model5\np = 0.1\ncode = hamming(3)\n",
            "model = model1\np = 0.1\ncode = hamming(3)\ncolour = red\n",
            "model = model1\np = 0.1\np = 0.2\ncode = hamming(3)\n",
            "model = model1\np = 0.1\ncode = golay\n",
            "model = model1\np = 0.1\nq = 0.3\ncode = hamming(3)\n",
            "model = model1\np = 0.1\ncode = hamming(3)\nmode = empirical\n",
            "model = model1\np = 0.1\ncode = hamming(3)\nmode = fast\n",
            "model = model1\np = 0.1 code = hamming(3)\n",
            "model = model2\np = 0.1\nq = 0.3\ncode = hamming(3)\nxi = 0.1\neps_prime = 0.1\n",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn model2_constraint_is_named() {
        let err = ExperimentConfig::parse("model = model2\np = 0.1\nq = 0.3\ncode = hamming(3)\nxi = 0.1\neps_prime = 0.05\n")
            .unwrap_err();
        assert!(err.to_string().contains("eps' > xi + epsilon"), "{err}");
    }

    #[test]
    fn extraction_defaults() {
        let mut c = ExperimentConfig::new(
            SourceModel::Model4(Model4Params::new(0.1, 0.3).unwrap()),
            CodeSpec::Hamming(3),
        );
        c.xi = Some(0.1);
        let e = c.extraction();
        assert!((e.eps_prime - (0.2 + 0.01 + 0.05)).abs() < 1e-15);
        c.eps_prime = Some(0.3);
        assert_eq!(c.extraction().eps_prime, 0.3);
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        let model = prop_oneof![
            (0.001f64..0.499).prop_map(|p| SourceModel::Model1(Model1Params::new(p).unwrap())),
            (0.001f64..0.499, 0.001f64..0.999)
                .prop_map(|(p, q)| SourceModel::Model2(Model2Params::new(p, q).unwrap())),
            prop::collection::vec(0.001f64..0.499, 1..5)
                .prop_map(|l| SourceModel::Model3(Model3Params::new(l).unwrap())),
            (0.001f64..0.499, 0.001f64..0.999)
                .prop_map(|(p, q)| SourceModel::Model4(Model4Params::new(p, q).unwrap())),
        ];
        let code = prop_oneof![
            (2usize..6).prop_map(CodeSpec::Hamming),
            (1usize..6).prop_map(|h| CodeSpec::Repetition(2 * h + 1)),
            (any::<u64>()).prop_map(|seed| CodeSpec::RandomLinear { n: 10, m: 5, seed }),
        ];
        (
            model,
            code,
            1u64..1_000_000,
            any::<u64>(),
            prop::option::of(0.0f64..0.1),
            prop::option::of(0.001f64..0.05),
            prop_oneof![Just(Mode::Exact), Just(Mode::Empirical), Just(Mode::Both)],
            prop::option::of("[a-z]{1,8}\\.txt"),
        )
            .prop_map(|(model, code, n_trials, master_seed, xi, epsilon, mode, out)| {
                let mut c = ExperimentConfig::new(model, code);
                c.n_trials = n_trials;
                c.master_seed = master_seed;
                c.xi = xi;
                c.epsilon = epsilon;
                // pick eps' above its bound so the config validates
                c.eps_prime = xi.map(|x| 2.0 * x + epsilon.unwrap_or(0.01) + 0.01);
                c.mode = mode;
                c.output_path = out.map(PathBuf::from);
                c
            })
    }

    proptest! {
        #[test]
        fn config_round_trip(c in arb_config()) {
            let text = c.to_string();
            prop_assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
        }
    }
}
