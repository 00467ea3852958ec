use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// `git describe`-style build version, stamped at compile time.
pub const VERSION: &str = env!("LMU_BUILD_VERSION");

/// Everything needed to rerun a command: the exact invocation, the seeds it
/// used and the execution environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reproduction {
    pub version: String,
    pub command: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub precision: String,
}

impl Reproduction {
    pub fn new(command: &[String], threads: usize) -> Self {
        Reproduction {
            version: VERSION.to_string(),
            command: command.to_vec(),
            seeds: BTreeMap::new(),
            threads,
            precision: "f64".to_string(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    /// The stanza as `#`-prefixed lines, for CSV output.
    pub fn comment_lines(&self) -> String {
        let json = serde_json::to_string(self).expect("reproduction stanza serializes");
        format!("# reproduction: {json}\n")
    }
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
