//! Knowledge-grounded audio question answering toolkit: benchmark synthesis
//! from a triplet knowledge base, entity linking by embedding ranking,
//! knowledge-infused prompting, threshold retrieval and evaluation.

pub mod adapters;
pub mod cli;
pub mod error;
pub mod eval;
pub mod kb;
pub mod linking;
pub mod pipeline;
pub mod retrieval;
pub mod synth;
pub mod text;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// Benchmark sub-task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "s_aqa")]
    SAqa = 0,
    #[serde(rename = "m_aqa")]
    MAqa = 1,
    #[serde(rename = "r_aqa")]
    RAqa = 2,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::SAqa, Task::MAqa, Task::RAqa];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::SAqa => "s_aqa",
            Task::MAqa => "m_aqa",
            Task::RAqa => "r_aqa",
        }
    }

    /// Display name used in tables.
    pub fn title(self) -> &'static str {
        match self {
            Task::SAqa => "s-AQA",
            Task::MAqa => "m-AQA",
            Task::RAqa => "r-AQA",
        }
    }

    pub fn answer_type(self) -> &'static str {
        match self {
            Task::SAqa => "open-ended",
            Task::MAqa => "binary",
            Task::RAqa => "counts",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "s" | "s_aqa" => Ok(Task::SAqa),
            "m" | "m_aqa" => Ok(Task::MAqa),
            "r" | "r_aqa" => Ok(Task::RAqa),
            _ => Err(format!("unknown task {s:?} (expected s, m or r)")),
        }
    }
}
