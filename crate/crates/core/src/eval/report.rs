use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::bench::TIMER;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Environment {
    pub timer: String,
    pub build: String,
}

impl Environment {
    pub fn current() -> Self {
        let profile = if cfg!(debug_assertions) {
            "debug"
        } else {
            "release"
        };
        Environment {
            timer: TIMER.to_string(),
            build: format!(
                "flowdistill {} ({profile}, {}-{}, single-threaded)",
                env!("CARGO_PKG_VERSION"),
                std::env::consts::ARCH,
                std::env::consts::OS
            ),
        }
    }
}

/// The `report.json` document.
#[derive(Debug, Clone, Serialize)]
pub struct Report<R: Serialize> {
    pub config: BTreeMap<String, String>,
    pub rows: Vec<R>,
    pub environment: Environment,
}

impl<R: Serialize> Report<R> {
    pub fn new(config: BTreeMap<String, String>, rows: Vec<R>) -> Self {
        Report {
            config,
            rows,
            environment: Environment::current(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let cfg = BTreeMap::from([("seed".to_string(), "1".to_string())]);
        let r = Report::new(cfg, vec![(0.1, 2.0), (0.2, 1.5)]);
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["config"]["seed"], "1");
        assert_eq!(v["rows"].as_array().unwrap().len(), 2);
        assert!(v["environment"]["timer"].is_string());
        assert!(v["environment"]["build"].is_string());
    }
}
