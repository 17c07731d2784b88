//! Run settings: `key = value` config files merged with command-line flags.
//!
//! Keys are the long flag names (`part1`, `out-dir`, ...); underscores and
//! dashes are interchangeable. Blank lines and `#` comments are ignored.
//! Relative paths in a config file are taken relative to the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use serde::Serialize;

use epf::backtest::{parse_methods, BacktestConfig, Method, Transform};
use epf::evaluation::DmVariance;
use epf::transform::{McConfig, DEFAULT_SCENARIOS};

use crate::BacktestArgs;

pub const DEFAULT_PART_DAYS: usize = 365;
pub const DEFAULT_OUT_DIR: &str = "epf-out";

const KEYS: [&str; 17] = [
    "data",
    "holidays",
    "from",
    "to",
    "methods",
    "transform",
    "seed",
    "scenarios",
    "part1",
    "part2",
    "out-dir",
    "jobs",
    "sig",
    "dm-lags",
    "intercept",
    "cache",
    "error-budget",
];

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    base: PathBuf,
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            let key = key.trim().to_ascii_lowercase().replace('_', "-");
            if !KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key `{key}`", i + 1);
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                bail!("line {}: `{key}` given twice", i + 1);
            }
        }
        Ok(Self {
            base: PathBuf::new(),
            entries,
        })
    }

    fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.entries
            .get(key)
            .map(|raw| raw.parse::<T>().map_err(|e| anyhow!("config key `{key}`: {e}")))
            .transpose()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.entries.get(key).map(|raw| self.base.join(raw))
    }
}

fn parse_bool(raw: &str) -> Result<bool, String> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("`{raw}` is not a boolean")),
    }
}

#[derive(Debug, Clone, Copy)]
struct Flag(bool);

impl FromStr for Flag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_bool(s).map(Flag)
    }
}

/// Fully resolved settings of a backtest run; echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestSettings {
    pub data: PathBuf,
    pub holidays: Option<PathBuf>,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub methods: Vec<String>,
    pub transform: String,
    pub seed: u64,
    pub scenarios: usize,
    pub part1: usize,
    pub part2: usize,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
    pub sig: f64,
    pub dm_lags: Option<usize>,
    pub intercept: bool,
    pub cache: bool,
    pub error_budget: f64,
}

impl BacktestSettings {
    /// Flags first, then the config file, then defaults.
    pub fn resolve(args: &BacktestArgs, file: &ConfigFile) -> Result<Self> {
        let data = args
            .data
            .clone()
            .or_else(|| file.path("data"))
            .ok_or_else(|| anyhow!("missing --data (or `data` in the config file)"))?;
        let from = match args.from {
            Some(d) => d,
            None => file
                .value("from")?
                .ok_or_else(|| anyhow!("missing --from (or `from` in the config file)"))?,
        };
        let to = match args.to {
            Some(d) => d,
            None => file
                .value("to")?
                .ok_or_else(|| anyhow!("missing --to (or `to` in the config file)"))?,
        };
        let methods_raw = match &args.methods {
            Some(m) => m.clone(),
            None => file.value::<String>("methods")?.unwrap_or_else(|| "all".into()),
        };
        let methods = parse_methods(&methods_raw).map_err(|e| anyhow!(e))?;
        let transform = match args.transform {
            Some(t) => t,
            None => file.value("transform")?.unwrap_or(Transform::Asinh),
        };
        macro_rules! pick {
            ($field:expr, $key:literal, $default:expr) => {
                match $field {
                    Some(v) => v,
                    None => file.value($key)?.unwrap_or($default),
                }
            };
        }
        let intercept = args.intercept || file.value::<Flag>("intercept")?.is_some_and(|f| f.0);
        let cache = !args.no_cache && file.value::<Flag>("cache")?.is_none_or(|f| f.0);
        Ok(Self {
            data,
            holidays: args.holidays.clone().or_else(|| file.path("holidays")),
            from,
            to,
            methods: methods.iter().map(Method::to_string).collect(),
            transform: transform.to_string(),
            seed: pick!(args.seed, "seed", 0),
            scenarios: pick!(args.scenarios, "scenarios", DEFAULT_SCENARIOS),
            part1: pick!(args.part1, "part1", DEFAULT_PART_DAYS),
            part2: pick!(args.part2, "part2", DEFAULT_PART_DAYS),
            out_dir: args
                .out_dir
                .clone()
                .or_else(|| file.path("out-dir"))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
            jobs: match args.jobs {
                Some(j) => Some(j),
                None => file.value("jobs")?,
            },
            sig: pick!(args.sig, "sig", 0.05),
            dm_lags: match args.dm_lags {
                Some(l) => Some(l),
                None => file.value("dm-lags")?,
            },
            intercept,
            cache,
            error_budget: pick!(args.error_budget, "error-budget", 0.01),
        })
    }

    pub fn backtest_config(&self) -> Result<BacktestConfig> {
        if self.jobs == Some(0) {
            bail!("--jobs must be at least 1");
        }
        let mut cfg = BacktestConfig::new(self.part1, self.part2, self.from, self.to);
        cfg.methods = self
            .methods
            .iter()
            .map(|m| m.parse::<Method>().map_err(|e| anyhow!(e)))
            .collect::<Result<_>>()?;
        cfg.transform = self.transform.parse().map_err(|e: String| anyhow!(e))?;
        cfg.mc = McConfig::new(self.scenarios, self.seed)?;
        cfg.averaging.intercept = self.intercept;
        cfg.cache = self.cache;
        cfg.error_budget = self.error_budget;
        cfg.report.sig = self.sig;
        cfg.report.dm_variance = dm_variance(self.dm_lags);
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn dm_variance(lags: Option<usize>) -> DmVariance {
    lags.map_or(DmVariance::Sample, DmVariance::NeweyWest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Wrap {
        #[command(flatten)]
        args: BacktestArgs,
    }

    fn args(extra: &[&str]) -> BacktestArgs {
        let mut argv = vec!["backtest"];
        argv.extend_from_slice(extra);
        Wrap::parse_from(argv).args
    }

    #[test]
    fn comments_blank_lines_and_key_spelling() {
        let cfg = ConfigFile::parse("# run\n\nout_dir = results # here\nPART1=100\n").unwrap();
        assert_eq!(cfg.entries["out-dir"], "results");
        assert_eq!(cfg.entries["part1"], "100");
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(ConfigFile::parse("colour = red").is_err());
        assert!(ConfigFile::parse("seed = 1\nseed = 2").is_err());
        assert!(ConfigFile::parse("seed").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let file =
            ConfigFile::parse("data = a.csv\nfrom = 2019-01-01\nto = 2019-01-31\nseed = 7\npart1 = 100\n").unwrap();
        let s = BacktestSettings::resolve(&args(&["--seed", "9"]), &file).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.part1, 100);
        assert_eq!(s.part2, DEFAULT_PART_DAYS);
        assert_eq!(s.data, PathBuf::from("a.csv"));
        assert_eq!(s.methods.len(), 12);
    }

    #[test]
    fn missing_data_is_reported() {
        let err = BacktestSettings::resolve(
            &args(&["--from", "2019-01-01", "--to", "2019-01-02"]),
            &ConfigFile::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("--data"));
    }

    #[test]
    fn boolean_keys() {
        let file = ConfigFile::parse("data=x\nfrom=2019-01-01\nto=2019-01-01\nintercept = yes\ncache = off").unwrap();
        let s = BacktestSettings::resolve(&args(&[]), &file).unwrap();
        assert!(s.intercept && !s.cache);
        let bad = ConfigFile::parse("data=x\nfrom=2019-01-01\nto=2019-01-01\ncache = maybe").unwrap();
        assert!(BacktestSettings::resolve(&args(&[]), &bad).is_err());
    }
}
