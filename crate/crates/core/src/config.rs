//! Run configuration files.
//!
//! Flat `key = value` lines grouped under optional section headers:
//!
//! ```text
//! # comment
//! [run]
//! deterministic = true
//! threads = 1
//!
//! [paths]
//! data = base.fvecs
//! index = base.grlc
//!
//! [hyperparams]
//! k_init = 32
//! tau = 3.0
//! ```
//!
//! Keys outside any section may come from any group. Unknown sections and keys are
//! rejected with their line number.

use std::path::{Path, PathBuf};

use crate::error::{GarlicError, Result};
use crate::params::HyperParams;

pub const RUN_KEYS: &[&str] = &["deterministic", "threads"];
pub const PATH_KEYS: &[&str] = &["data", "queries", "gt", "labels", "query_labels", "index", "out", "log"];

/// Every setting of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub hp: HyperParams,
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub data: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub query_labels: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Any,
    Run,
    Paths,
    Hyper,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = Section::Any;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| GarlicError::Config { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = match name.trim() {
                    "run" => Section::Run,
                    "paths" => Section::Paths,
                    "hyperparams" => Section::Hyper,
                    other => return Err(err(format!("unknown section [{other}]"))),
                };
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let group = if RUN_KEYS.contains(&key) {
                Section::Run
            } else if PATH_KEYS.contains(&key) {
                Section::Paths
            } else if HyperParams::KEYS.contains(&key) {
                Section::Hyper
            } else {
                return Err(err(format!("unknown key {key:?}")));
            };
            if section != Section::Any && section != group {
                return Err(err(format!("key {key:?} does not belong in this section")));
            }
            cfg.set(key, value).map_err(|e| err(e.to_string()))?;
        }
        cfg.hp.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key from any group.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "deterministic" => {
                self.deterministic = value
                    .parse()
                    .map_err(|_| GarlicError::InvalidParameter(format!("cannot parse {value:?} for deterministic")))?
            }
            "threads" => {
                let t: usize = value
                    .parse()
                    .map_err(|_| GarlicError::InvalidParameter(format!("cannot parse {value:?} for threads")))?;
                self.threads = Some(t);
            }
            "data" => self.data = path(),
            "queries" => self.queries = path(),
            "gt" => self.gt = path(),
            "labels" => self.labels = path(),
            "query_labels" => self.query_labels = path(),
            "index" => self.index = path(),
            "out" => self.out = path(),
            "log" => self.log = path(),
            other => self.hp.set(other, value)?,
        }
        Ok(())
    }

    /// Renders a file that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("[run]\n");
        s.push_str(&format!("deterministic = {}\n", self.deterministic));
        if let Some(t) = self.threads {
            s.push_str(&format!("threads = {t}\n"));
        }
        s.push_str("\n[paths]\n");
        let paths = [
            ("data", &self.data),
            ("queries", &self.queries),
            ("gt", &self.gt),
            ("labels", &self.labels),
            ("query_labels", &self.query_labels),
            ("index", &self.index),
            ("out", &self.out),
            ("log", &self.log),
        ];
        for (k, v) in paths {
            if let Some(p) = v {
                s.push_str(&format!("{k} = {}\n", p.display()));
            }
        }
        s.push_str("\n[hyperparams]\n");
        s.push_str(&self.hp.to_config_text());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Optimizer;

    #[test]
    fn parses_sections() {
        let cfg = RunConfig::parse(
            "# demo\n[run]\ndeterministic = true\nthreads = 2\n[paths]\ndata = a.fvecs\n[hyperparams]\ntau = 2.5\noptimizer = sgd # inline\n",
        )
        .unwrap();
        assert!(cfg.deterministic);
        assert_eq!(cfg.threads, Some(2));
        assert_eq!(cfg.data, Some(PathBuf::from("a.fvecs")));
        assert_eq!(cfg.hp.tau, 2.5);
        assert_eq!(cfg.hp.optimizer, Optimizer::Sgd);
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        match RunConfig::parse("tau = 3\nbogus = 1\n") {
            Err(GarlicError::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(RunConfig::parse("[extra]\n").is_err());
        assert!(RunConfig::parse("[run]\ntau = 3\n").is_err());
        assert!(RunConfig::parse("tau 3\n").is_err());
        assert!(RunConfig::parse("tau = -1\n").is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("threads", "3").unwrap();
        cfg.set("index", "x/y.grlc").unwrap();
        cfg.set("lr_mu_peak", "0.0123").unwrap();
        cfg.set("seed", "99").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
