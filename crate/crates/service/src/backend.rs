//! Backend selection shared by the config file and the command line.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use dualloop_core::llm::{ChatBackend, EndpointConfig, FuzzBackend, OpenAiClient, ScriptedEqualizer, ScriptedStatic};
use dualloop_core::navigator::parse_action;
use serde::{Deserialize, Serialize};

/// `live | equalizer | static:<file> | fuzz | none`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Live,
    Equalizer,
    /// Replays the JSON action stored in the file on every call.
    Static(PathBuf),
    Fuzz,
    #[default]
    None,
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "live" => Ok(Self::Live),
            "equalizer" => Ok(Self::Equalizer),
            "fuzz" => Ok(Self::Fuzz),
            "none" => Ok(Self::None),
            other => match other.strip_prefix("static:") {
                Some(path) if !path.is_empty() => Ok(Self::Static(PathBuf::from(path))),
                _ => Err(format!(
                    "unknown backend {other:?}; expected live, equalizer, static:<file>, fuzz or none"
                )),
            },
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<BackendSpec> for String {
    fn from(b: BackendSpec) -> String {
        b.to_string()
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Live => f.write_str("live"),
            Self::Equalizer => f.write_str("equalizer"),
            Self::Static(p) => write!(f, "static:{}", p.display()),
            Self::Fuzz => f.write_str("fuzz"),
            Self::None => f.write_str("none"),
        }
    }
}

/// Builds the backend. `None` means the navigator is not run at all. The
/// live client must be built outside any async runtime.
pub fn build_backend(
    spec: &BackendSpec,
    endpoint: &EndpointConfig,
    n: usize,
    seed: u64,
) -> Result<Option<Box<dyn ChatBackend>>, String> {
    Ok(match spec {
        BackendSpec::None => None,
        BackendSpec::Live => Some(Box::new(OpenAiClient::new(endpoint.clone()).map_err(|e| e.to_string())?)),
        BackendSpec::Equalizer => Some(Box::new(ScriptedEqualizer::default())),
        BackendSpec::Fuzz => Some(Box::new(FuzzBackend::new(seed, n))),
        BackendSpec::Static(path) => Some(Box::new(load_static(path)?)),
    })
}

/// Reads a fixed action such as `{"weights": [...], "P_total": 30,
/// "reasoning": "..."}` from a file.
pub fn load_static(path: &std::path::Path) -> Result<ScriptedStatic, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let action = parse_action(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(ScriptedStatic::new(
        action.weights,
        action.p_total,
        action.reasoning.unwrap_or_default(),
    ))
}
