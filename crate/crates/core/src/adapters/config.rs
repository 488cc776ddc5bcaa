use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Role;
use crate::error::{Error, Result};

/// Environment variable naming the endpoints config file.
pub const ENDPOINTS_ENV: &str = "AUDIOPEDIA_ENDPOINTS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 200,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1` (1-based `n`): base doubled per retry.
    pub fn backoff_ms(&self, n: u32) -> u64 {
        self.backoff_base_ms
            .saturating_mul(1u64 << n.saturating_sub(1).min(16))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterEndpoint {
    pub role: Role,
    pub base_url: String,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
    /// Concurrent requests allowed against this endpoint.
    pub max_in_flight: usize,
}

impl AdapterEndpoint {
    pub fn new(role: Role, base_url: impl Into<String>) -> Self {
        AdapterEndpoint {
            role,
            base_url: base_url.into(),
            timeout_ms: 30_000,
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(Error::InvalidConfig(format!(
                "{} endpoint: timeout must be positive",
                self.role
            )));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::InvalidConfig(format!(
                "{} endpoint: at least one attempt required",
                self.role
            )));
        }
        if self.max_in_flight == 0 {
            return Err(Error::InvalidConfig(format!(
                "{} endpoint: max_in_flight must be positive",
                self.role
            )));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(Error::InvalidConfig(format!(
                "{} endpoint: base_url {:?} is not an http(s) URL",
                self.role, self.base_url
            )));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!(
            "{}{}",
            self.base_url.trim_end_matches('/'),
            self.role.path()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
struct EndpointEntry {
    base_url: Option<String>,
    timeout_ms: Option<u64>,
    max_attempts: Option<u32>,
    backoff_base_ms: Option<u64>,
    max_in_flight: Option<usize>,
}

/// Endpoint per role, read from TOML:
///
/// ```toml
/// [defaults]
/// base_url = "http://127.0.0.1:8750"
/// timeout_ms = 30000
///
/// [answer]
/// base_url = "http://gpu-box:8750"
/// max_in_flight = 2
/// ```
///
/// `AUDIOPEDIA_<ROLE>_URL`, `_TIMEOUT_MS`, `_ATTEMPTS`, `_BACKOFF_MS` and
/// `_MAX_IN_FLIGHT` override the file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EndpointsConfig {
    pub endpoints: BTreeMap<Role, AdapterEndpoint>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct FileRepr {
    defaults: EndpointEntry,
    asr: Option<EndpointEntry>,
    tts: Option<EndpointEntry>,
    encode: Option<EndpointEntry>,
    answer: Option<EndpointEntry>,
}

fn apply(ep: &mut AdapterEndpoint, e: &EndpointEntry) {
    if let Some(u) = &e.base_url {
        ep.base_url = u.clone();
    }
    if let Some(t) = e.timeout_ms {
        ep.timeout_ms = t;
    }
    if let Some(a) = e.max_attempts {
        ep.retry.max_attempts = a;
    }
    if let Some(b) = e.backoff_base_ms {
        ep.retry.backoff_base_ms = b;
    }
    if let Some(m) = e.max_in_flight {
        ep.max_in_flight = m;
    }
}

impl EndpointsConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: FileRepr =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("endpoints: {e}")))?;
        let mut endpoints = BTreeMap::new();
        for (role, entry) in [
            (Role::Asr, &file.asr),
            (Role::Tts, &file.tts),
            (Role::Encode, &file.encode),
            (Role::Answer, &file.answer),
        ] {
            let Some(entry) = entry else { continue };
            let mut ep = AdapterEndpoint::new(role, "");
            apply(&mut ep, &file.defaults);
            apply(&mut ep, entry);
            endpoints.insert(role, ep);
        }
        Ok(EndpointsConfig { endpoints })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Applies `AUDIOPEDIA_<ROLE>_*` overrides from `vars`. A URL override
    /// creates the endpoint when the file did not declare it.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (key, value) in vars {
            let (key, value) = (key.as_ref(), value.as_ref());
            let Some(rest) = key.strip_prefix("AUDIOPEDIA_") else {
                continue;
            };
            for role in Role::ALL {
                let prefix = format!("{}_", role.as_str().to_uppercase());
                let Some(field) = rest.strip_prefix(&prefix) else {
                    continue;
                };
                let bad = || Error::InvalidConfig(format!("{key}={value:?}"));
                let mut entry = EndpointEntry::default();
                match field {
                    "URL" => entry.base_url = Some(value.to_string()),
                    "TIMEOUT_MS" => entry.timeout_ms = Some(value.parse().map_err(|_| bad())?),
                    "ATTEMPTS" => entry.max_attempts = Some(value.parse().map_err(|_| bad())?),
                    "BACKOFF_MS" => entry.backoff_base_ms = Some(value.parse().map_err(|_| bad())?),
                    "MAX_IN_FLIGHT" => {
                        entry.max_in_flight = Some(value.parse().map_err(|_| bad())?)
                    }
                    _ => continue,
                }
                if entry.base_url.is_none() && !self.endpoints.contains_key(&role) {
                    continue;
                }
                let ep = self
                    .endpoints
                    .entry(role)
                    .or_insert_with(|| AdapterEndpoint::new(role, ""));
                apply(ep, &entry);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.endpoints
            .values()
            .try_for_each(AdapterEndpoint::validate)
    }

    pub fn get(&self, role: Role) -> Option<&AdapterEndpoint> {
        self.endpoints.get(&role)
    }
}
