//! TOML configuration file and its command-line overrides.

use std::path::{Path, PathBuf};

use aiswatch_core::domain::{GridConfig, Roi};
use aiswatch_core::normalcy::NormalcyParams;
use aiswatch_core::preprocess::PreprocessConfig;
use aiswatch_core::stream::DEFAULT_PARTITIONS;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    /// `latmin,latmax,lonmin,lonmax`. Unset means the built-in region for
    /// training and the model's own region for detection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roi: Option<String>,
    pub max_sog_knots: f64,
    pub gap_threshold_s: i64,
    pub resample_period_s: i64,
    pub min_track_duration_s: i64,
    pub redetect_period_s: i64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        PreprocessSection {
            roi: None,
            max_sog_knots: d.max_sog_knots,
            gap_threshold_s: d.gap_threshold_s,
            resample_period_s: d.resample_period_s,
            min_track_duration_s: d.min_track_duration_s,
            redetect_period_s: d.redetect_period_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSection {
    pub n_partitions: u32,
    pub replicas: usize,
    pub checkpoint_interval: u64,
}

impl Default for StreamSection {
    fn default() -> Self {
        StreamSection {
            n_partitions: DEFAULT_PARTITIONS,
            replicas: 1,
            checkpoint_interval: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub window_s: i64,
    pub replicas: Vec<usize>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            window_s: 600,
            replicas: vec![1, 2, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub model: PathBuf,
    pub listen: String,
    /// Alert sink for `serve`: a file path or `host:port`. Unset means stdout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alerts: Option<String>,
    /// Directory for file-backed partitions in `serve`. Unset keeps them in memory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            model: PathBuf::from("model.gtnm"),
            listen: "127.0.0.1:10110".into(),
            alerts: None,
            log_dir: None,
            out_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub preprocess: PreprocessSection,
    pub grid: GridConfig,
    pub normalcy: NormalcyParams,
    pub stream: StreamSection,
    pub bench: BenchSection,
    pub paths: PathsSection,
}

/// Reference printed under `--help`. A unit test keeps it in step with the defaults.
pub const CONFIG_HELP: &str = "\
CONFIGURATION FILE (--config, TOML; unknown keys are rejected; flags override)

[preprocess]
  roi = \"47.5,49.5,-7,-4\"      region latmin,latmax,lonmin,lonmax (--roi); unset: 47.5,49.5,-7,-4
                               for train, the model's region for detect/serve
  max_sog_knots = 30           reports faster than this are dropped
  gap_threshold_s = 14400      silence longer than this splits a track
  resample_period_s = 600      resampling grid step
  min_track_duration_s = 14400 shorter tracks are rejected
  redetect_period_s = 3600     track growth between re-scorings in serve

[grid]
  cell_size_deg = 0.1          spatial cell edge
  sog_bin_knots = 1            speed bin width
  sog_cap_knots = 30           speeds at or above this share the top bin
  cog_bin_deg = 10             course bin width

[normalcy]
  alpha = 1                    Laplace pseudo-count
  q = 0.05                     per-cell score quantile used as threshold
  min_cell_count = 50          training messages needed to validate a cell
  epsilon_nfa = 1              a track is abnormal when its NFA is below this

[stream]
  n_partitions = 16            MMSI partitions (--partitions)
  replicas = 1                 operator replicas in serve (--replicas)
  checkpoint_interval = 4096   records per partition between commits

[bench]
  window_s = 600               window for the unique-MMSI CDF and capacity estimate
  replicas = [1, 2, 4]         replica counts to benchmark (--replicas 1,2,4)

[paths]
  model = \"model.gtnm\"         model file (--model)
  listen = \"127.0.0.1:10110\"   serve ingest address (--listen)
  alerts = \"alerts.jsonl\"      serve alert sink, file or host:port (--alerts); unset: stdout
  log_dir = \"log\"              file-backed partitions for serve; unset: in memory
  out_dir = \".\"                bench output directory

EXIT CODES
  0 ok, 1 other failure, 2 config error, 3 empty training set,
  4 model file unreadable, corrupt or mismatched, 5 cannot bind the listen address
";

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<PathBuf>,
    pub roi: Option<String>,
    pub replicas: Vec<usize>,
    pub partitions: Option<u32>,
    pub listen: Option<String>,
    pub alerts: Option<String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Config::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Config, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(m) = &o.model {
            self.paths.model = m.clone();
        }
        if let Some(r) = &o.roi {
            self.preprocess.roi = Some(r.clone());
        }
        match o.replicas.as_slice() {
            [] => {}
            [one] => {
                self.stream.replicas = *one;
                self.bench.replicas = vec![*one];
            }
            many => self.bench.replicas = many.to_vec(),
        }
        if let Some(p) = o.partitions {
            self.stream.n_partitions = p;
        }
        if let Some(l) = &o.listen {
            self.paths.listen = l.clone();
        }
        if let Some(a) = &o.alerts {
            self.paths.alerts = Some(a.clone());
        }
        self.check()
    }

    fn check(&self) -> Result<(), CliError> {
        self.preprocess_config(None)?;
        self.grid.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.normalcy.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let s = &self.stream;
        if s.n_partitions == 0 || s.replicas == 0 || s.checkpoint_interval == 0 {
            return Err(CliError::Config(
                "stream.n_partitions, stream.replicas and stream.checkpoint_interval must be > 0".into(),
            ));
        }
        if s.replicas > s.n_partitions as usize {
            return Err(CliError::Config(format!(
                "stream.replicas ({}) exceeds stream.n_partitions ({})",
                s.replicas, s.n_partitions
            )));
        }
        if self.bench.window_s <= 0 {
            return Err(CliError::Config("bench.window_s must be > 0".into()));
        }
        if self.bench.replicas.is_empty() || self.bench.replicas.contains(&0) {
            return Err(CliError::Config(
                "bench.replicas must be a non-empty list of counts > 0".into(),
            ));
        }
        Ok(())
    }

    /// Bench replica counts must fit the partition count.
    pub fn check_bench(&self) -> Result<(), CliError> {
        let n = self.stream.n_partitions as usize;
        match self.bench.replicas.iter().find(|&&r| r > n) {
            Some(r) => Err(CliError::Config(format!(
                "bench.replicas: {r} replicas exceed stream.n_partitions ({n})"
            ))),
            None => Ok(()),
        }
    }

    /// The configured region, if one was set.
    pub fn roi(&self) -> Result<Option<Roi>, CliError> {
        self.preprocess
            .roi
            .as_deref()
            .map(|s| {
                s.parse::<Roi>()
                    .map_err(|e| CliError::Config(format!("preprocess.roi: {e}")))
            })
            .transpose()
    }

    /// Preprocessing settings over the configured region, else `fallback`, else the default region.
    pub fn preprocess_config(&self, fallback: Option<Roi>) -> Result<PreprocessConfig, CliError> {
        let p = &self.preprocess;
        let cfg = PreprocessConfig {
            roi: self.roi()?.or(fallback).unwrap_or(PreprocessConfig::default().roi),
            max_sog_knots: p.max_sog_knots,
            gap_threshold_s: p.gap_threshold_s,
            resample_period_s: p.resample_period_s,
            min_track_duration_s: p.min_track_duration_s,
            redetect_period_s: p.redetect_period_s,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "bogus = 1",
            "[grid]\ncell_size = 0.2",
            "[stream]\nreplica = 2",
            "[nope]",
        ] {
            assert!(matches!(Config::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn sections_parse() {
        let c = Config::parse(
            "[preprocess]\nroi = \"48,49,-6,-5\"\ngap_threshold_s = 7200\n\
             [grid]\ncell_size_deg = 0.2\n[normalcy]\nq = 0.1\n\
             [stream]\nn_partitions = 8\nreplicas = 2\n[bench]\nreplicas = [1, 8]\n\
             [paths]\nalerts = \"127.0.0.1:9000\"\n",
        )
        .unwrap();
        let p = c.preprocess_config(None).unwrap();
        assert_eq!(p.roi, Roi::new(48.0, 49.0, -6.0, -5.0).unwrap());
        assert_eq!(p.gap_threshold_s, 7200);
        assert_eq!(c.grid.cell_size_deg, 0.2);
        assert_eq!(c.normalcy.q, 0.1);
        assert_eq!((c.stream.n_partitions, c.stream.replicas), (8, 2));
        assert_eq!(c.bench.replicas, vec![1, 8]);
        assert_eq!(c.paths.alerts.as_deref(), Some("127.0.0.1:9000"));
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "[preprocess]\nroi = \"49,48,-6,-5\"",
            "[grid]\ncell_size_deg = 0",
            "[normalcy]\nq = 1.5",
            "[stream]\nreplicas = 32",
            "[bench]\nwindow_s = 0",
        ] {
            assert!(matches!(Config::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn flags_override_file() {
        let mut c = Config::parse("[stream]\nn_partitions = 8\nreplicas = 2\n[paths]\nmodel = \"a.gtnm\"").unwrap();
        c.apply(&Overrides {
            model: Some("b.gtnm".into()),
            roi: Some("48,49,-6,-5".into()),
            replicas: vec![4],
            partitions: Some(4),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(c.paths.model, PathBuf::from("b.gtnm"));
        assert_eq!((c.stream.n_partitions, c.stream.replicas), (4, 4));
        assert!(c
            .clone()
            .apply(&Overrides {
                partitions: Some(2),
                ..Overrides::default()
            })
            .is_err());
        // the default bench list only matters to bench
        let mut small = Config::default();
        small
            .apply(&Overrides {
                partitions: Some(2),
                ..Overrides::default()
            })
            .unwrap();
        assert!(small.check_bench().is_err());
    }

    #[test]
    fn help_lists_every_key_with_its_default() {
        let mut d = Config::default();
        d.preprocess.roi = Some("47.5,49.5,-7,-4".into());
        d.paths.alerts = Some("alerts.jsonl".into());
        d.paths.log_dir = Some("log".into());
        let table: toml::Table = toml::from_str(&toml::to_string(&d).unwrap()).unwrap();
        for (section, body) in &table {
            assert!(CONFIG_HELP.contains(&format!("[{section}]")), "{section}");
            for (key, value) in body.as_table().unwrap() {
                let shown = match value {
                    toml::Value::Float(f) => format!("{key} = {f}"),
                    other => format!("{key} = {other}"),
                };
                assert!(CONFIG_HELP.contains(&shown), "help lacks {shown:?}");
            }
        }
    }
}
