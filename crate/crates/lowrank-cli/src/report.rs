//! JSON run reports: config echo, metrics, timings, and counters.

use crate::config::RunConfig;
use serde::Serialize;
use serde_json::{Map, Value};
use std::path::Path;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Report {
    pub version: u32,
    pub config: RunConfig,
    pub metrics: Map<String, Value>,
    pub timing_ms: Map<String, Value>,
    pub counters: Map<String, Value>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Dense-to-original node id mapping recorded at load time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id_map: Option<Vec<u64>>,
}

impl Report {
    pub fn new(config: RunConfig) -> Self {
        Self {
            version: REPORT_VERSION,
            config,
            metrics: Map::new(),
            timing_ms: Map::new(),
            counters: Map::new(),
            warnings: Vec::new(),
            id_map: None,
        }
    }

    pub fn metric(&mut self, key: &str, value: f64) -> &mut Self {
        assert!(value.is_finite(), "metric {key} is not finite");
        self.metrics.insert(key.to_string(), json_f64(value));
        self
    }

    pub fn timing(&mut self, key: &str, millis: f64) -> &mut Self {
        self.timing_ms.insert(key.to_string(), json_f64(millis));
        self
    }

    pub fn counter(&mut self, key: &str, value: u64) -> &mut Self {
        self.counters.insert(key.to_string(), Value::from(value));
        self
    }

    /// Prints the report to stdout and, when a path is configured, writes the
    /// same JSON there.
    pub fn emit(&self, path: Option<&Path>) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        println!("{json}");
        if let Some(path) = path {
            std::fs::write(path, &json)?;
        }
        Ok(())
    }
}

fn json_f64(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .expect("finite metric")
}
