use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ConfigError;

/// How a random run injects crashes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CrashPolicy {
    #[default]
    None,
    /// Crash whenever legal until the budget is spent.
    Eager,
    /// On each tick, with this probability, crash a uniformly chosen legal victim.
    Random(f64),
    /// Crash only when the chosen step would push participation above `λ`.
    LatestLegal,
}

impl fmt::Display for CrashPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrashPolicy::None => f.write_str("none"),
            CrashPolicy::Eager => f.write_str("eager"),
            CrashPolicy::Random(p) => write!(f, "random:{p}"),
            CrashPolicy::LatestLegal => f.write_str("latest"),
        }
    }
}

impl FromStr for CrashPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(CrashPolicy::None),
            "eager" => Ok(CrashPolicy::Eager),
            "latest" => Ok(CrashPolicy::LatestLegal),
            _ => {
                let p = s
                    .strip_prefix("random:")
                    .ok_or_else(|| format!("unknown crash policy {s:?} (none, eager, random:<p>, latest)"))?;
                let p: f64 = p.parse().map_err(|_| format!("bad probability in {s:?}"))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("probability {p} outside [0, 1]"));
                }
                Ok(CrashPolicy::Random(p))
            }
        }
    }
}

impl Serialize for CrashPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CrashPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// `λ = n − k`.
pub fn lambda_of(n: usize, k: usize) -> Result<usize, ConfigError> {
    n.checked_sub(k)
        .ok_or_else(|| ConfigError::new("k", format!("k = {k} exceeds n = {n}")))
}

pub const DEFAULT_MAX_STEPS: u64 = 100_000;

/// Parameters of one system and run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub n: usize,
    /// Number of constrained failures the algorithm is built to tolerate.
    pub k: usize,
    /// Crash budget granted to the adversary.
    pub f: usize,
    pub inputs: Vec<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub crash_policy: CrashPolicy,
}

fn default_max_steps() -> u64 {
    DEFAULT_MAX_STEPS
}

impl Config {
    pub fn new(n: usize, k: usize, f: usize, inputs: Vec<u64>) -> Self {
        Config {
            n,
            k,
            f,
            inputs,
            seed: 0,
            max_steps: DEFAULT_MAX_STEPS,
            crash_policy: CrashPolicy::None,
        }
    }

    /// `n − k`. Call [`Config::validate`] first; saturates at 0 otherwise.
    pub fn lambda(&self) -> usize {
        self.n.saturating_sub(self.k)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::new("n", "at least one process is required"));
        }
        lambda_of(self.n, self.k)?;
        if self.f > self.n {
            return Err(ConfigError::new("f", format!("f = {} exceeds n = {}", self.f, self.n)));
        }
        if self.inputs.len() != self.n {
            return Err(ConfigError::new(
                "inputs",
                format!("expected {} inputs, got {}", self.n, self.inputs.len()),
            ));
        }
        if self.max_steps == 0 {
            return Err(ConfigError::new("max_steps", "must be positive"));
        }
        if let CrashPolicy::Random(p) = self.crash_policy {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::new("crash_policy", format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_values() {
        assert_eq!(lambda_of(9, 3).unwrap(), 6);
        assert_eq!(lambda_of(7, 0).unwrap(), 7);
        assert_eq!(lambda_of(5, 5).unwrap(), 0);
        assert_eq!(lambda_of(3, 4).unwrap_err().field, "k");
    }

    #[test]
    fn validation_names_field() {
        let ok = Config::new(9, 3, 3, vec![0; 9]);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.lambda(), 6);
        let cases = [
            (Config::new(0, 0, 0, vec![]), "n"),
            (Config::new(3, 4, 0, vec![0; 3]), "k"),
            (Config::new(3, 1, 4, vec![0; 3]), "f"),
            (Config::new(3, 1, 1, vec![0; 2]), "inputs"),
        ];
        for (c, field) in cases {
            assert_eq!(c.validate().unwrap_err().field, field);
        }
    }

    #[test]
    fn policies_parse() {
        for s in ["none", "eager", "random:0.05", "latest"] {
            assert_eq!(s.parse::<CrashPolicy>().unwrap().to_string(), s);
        }
        assert!("random:2".parse::<CrashPolicy>().is_err());
        assert!("sometimes".parse::<CrashPolicy>().is_err());
    }
}
