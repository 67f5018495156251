//! Sectioned TOML configuration.
//!
//! Only `[dataset]` and `run.rounds` are required; every other key falls
//! back to the simulator defaults. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, LocalDistill};
use crate::error::{FdError, Result};
use crate::knowledge::{CacheLiteConfig, KnowledgeForm, Protocol};
use crate::nn::TrainConfig;
use crate::sim::{
    AttackSetup, DatasetSpec, ExperimentConfig, ModelSetup, PartitionSetup, ProtocolSetup,
    RunSetup,
};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset: Option<DatasetSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSection>,
    pub run: Option<RunSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Blobs,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<DatasetKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_samples_per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_clients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heterogeneous: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<Protocol>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<KnowledgeForm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighbors: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoding_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<AttackKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_distill: Option<LocalDistill>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub literal_index: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misdirection_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: Option<SweepAxis>,
    pub values: Option<Vec<toml::Value>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<AttackKind>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Fraction,
    Alpha,
    Clients,
    Heterogeneous,
    Peak,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Fraction => "fraction",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Clients => "clients",
            SweepAxis::Heterogeneous => "heterogeneous",
            SweepAxis::Peak => "peak",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisValue {
    Real(f64),
    Count(usize),
    Flag(bool),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Real(v) => write!(f, "{v}"),
            AxisValue::Count(v) => write!(f, "{v}"),
            AxisValue::Flag(v) => write!(f, "{v}"),
        }
    }
}

impl AxisValue {
    /// Applies this grid value to a copy of `base`.
    pub fn apply(self, axis: SweepAxis, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        match (axis, self) {
            (SweepAxis::Fraction, AxisValue::Real(v)) => cfg.attack.fraction = v,
            (SweepAxis::Alpha, AxisValue::Real(v)) => cfg.partition.alpha = v,
            (SweepAxis::Peak, AxisValue::Real(v)) => cfg.attack.peak = v,
            (SweepAxis::Clients, AxisValue::Count(v)) => cfg.partition.n_clients = v,
            (SweepAxis::Heterogeneous, AxisValue::Flag(v)) => cfg.model.heterogeneous = v,
            _ => unreachable!("axis values are typed when the sweep is resolved"),
        }
        cfg
    }
}

/// A resolved sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<AxisValue>,
    pub methods: Vec<AttackKind>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn grid_len(&self) -> usize {
        self.methods.len() * self.values.len()
    }
}

/// A parsed file: the experiment, an optional sweep and any warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub experiment: ExperimentConfig,
    pub sweep: Option<SweepSpec>,
    pub warnings: Vec<String>,
}

pub fn parse_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| FdError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut loaded = parse_str(&text, path)?;
    // Relative dataset paths are resolved against the config file's directory.
    if let DatasetSpec::Csv { train, test } = &mut loaded.experiment.dataset {
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [train, test] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(loaded)
}

/// Parses config text; `origin` only labels diagnostics.
pub fn parse_str(text: &str, origin: &Path) -> Result<LoadedConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start].matches('\n').count() as u64 + 1);
        let mut message = e.message().trim().to_string();
        // Quote the offending line so the diagnostic names the key.
        if let Some(src) = text.lines().nth(line.saturating_sub(1) as usize).filter(|_| line > 0) {
            message = format!("{message} (at `{}`)", src.trim());
        }
        FdError::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        }
    })?;
    resolve(&file)
}

pub fn resolve(file: &ConfigFile) -> Result<LoadedConfig> {
    let mut warnings = Vec::new();
    let defaults = ExperimentConfig::default();

    let ds = file
        .dataset
        .as_ref()
        .ok_or_else(|| FdError::config("missing required section [dataset]"))?;
    let dataset = match ds.kind.unwrap_or_default() {
        DatasetKind::Blobs => {
            if ds.train.is_some() || ds.test.is_some() {
                return Err(FdError::config(
                    "dataset.train and dataset.test are only valid with kind = \"csv\"",
                ));
            }
            let DatasetSpec::Blobs {
                n_classes,
                samples_per_class,
                test_samples_per_class,
                dim,
                spread,
                ..
            } = defaults.dataset
            else {
                unreachable!("default dataset is blobs")
            };
            DatasetSpec::Blobs {
                n_classes: ds.n_classes.unwrap_or(n_classes),
                samples_per_class: ds.samples_per_class.unwrap_or(samples_per_class),
                test_samples_per_class: ds.test_samples_per_class.unwrap_or(test_samples_per_class),
                dim: ds.dim.unwrap_or(dim),
                spread: ds.spread.unwrap_or(spread),
                seed: ds.seed,
            }
        }
        DatasetKind::Csv => {
            let generator_keys = [
                ("n_classes", ds.n_classes.is_some()),
                ("samples_per_class", ds.samples_per_class.is_some()),
                ("test_samples_per_class", ds.test_samples_per_class.is_some()),
                ("dim", ds.dim.is_some()),
                ("spread", ds.spread.is_some()),
                ("seed", ds.seed.is_some()),
            ];
            if let Some((key, _)) = generator_keys.iter().find(|(_, set)| *set) {
                return Err(FdError::config(format!(
                    "dataset.{key} is only valid with kind = \"blobs\""
                )));
            }
            DatasetSpec::Csv {
                train: ds
                    .train
                    .clone()
                    .ok_or_else(|| FdError::config("missing required key dataset.train"))?,
                test: ds
                    .test
                    .clone()
                    .ok_or_else(|| FdError::config("missing required key dataset.test"))?,
            }
        }
    };

    let rs = file
        .run
        .as_ref()
        .ok_or_else(|| FdError::config("missing required key run.rounds"))?;
    let run = RunSetup {
        rounds: rs
            .rounds
            .ok_or_else(|| FdError::config("missing required key run.rounds"))?,
        seed: rs.seed.unwrap_or(defaults.run.seed),
        probe_size: rs.probe_size.unwrap_or(defaults.run.probe_size),
        misdirection_class: rs.misdirection_class.unwrap_or(defaults.run.misdirection_class),
    };

    let ps = file.partition.clone().unwrap_or_default();
    let partition = PartitionSetup {
        n_clients: ps.n_clients.unwrap_or(defaults.partition.n_clients),
        alpha: ps.alpha.unwrap_or(defaults.partition.alpha),
        seed: ps.seed,
    };

    let ts = file.train.clone().unwrap_or_default();
    let train = TrainConfig {
        lr: ts.lr.unwrap_or(defaults.train.lr),
        beta: ts.beta.unwrap_or(defaults.train.beta),
        temperature: ts.temperature.unwrap_or(defaults.train.temperature),
        local_epochs: ts.local_epochs.unwrap_or(defaults.train.local_epochs),
        batch_size: ts.batch_size.unwrap_or(defaults.train.batch_size),
    };

    let ms = file.model.clone().unwrap_or_default();
    let model = ModelSetup {
        hidden: ms.hidden.unwrap_or(defaults.model.hidden),
        heterogeneous: ms.heterogeneous.unwrap_or(defaults.model.heterogeneous),
    };

    let pr = file.protocol.clone().unwrap_or_default();
    let protocol = ProtocolSetup {
        kind: pr.kind.unwrap_or_default(),
        knowledge: pr.knowledge.unwrap_or_default(),
        cache: CacheLiteConfig {
            neighbors: pr.neighbors.unwrap_or(defaults.protocol.cache.neighbors),
            encoding_dim: pr.encoding_dim.unwrap_or(defaults.protocol.cache.encoding_dim),
        },
    };

    let at = file.attack.clone().unwrap_or_default();
    let kind = at.kind.unwrap_or(AttackKind::None);
    if kind == AttackKind::Pcfdla && at.peak.is_none() {
        warnings.push(format!(
            "attack.peak not set for pcfdla; using default {}",
            defaults.attack.peak
        ));
    }
    let attack = AttackSetup {
        kind,
        peak: at.peak.unwrap_or(defaults.attack.peak),
        fraction: at.fraction.unwrap_or(defaults.attack.fraction),
        local_distill: at.local_distill,
        literal_index: at.literal_index.unwrap_or(false),
    };

    let experiment = ExperimentConfig {
        dataset,
        partition,
        train,
        model,
        protocol,
        attack,
        run,
    };
    experiment.validate()?;

    let sweep = file
        .sweep
        .as_ref()
        .map(|s| resolve_sweep(s, &experiment, &mut warnings))
        .transpose()?;

    Ok(LoadedConfig {
        experiment,
        sweep,
        warnings,
    })
}

fn resolve_sweep(
    s: &SweepSection,
    base: &ExperimentConfig,
    warnings: &mut Vec<String>,
) -> Result<SweepSpec> {
    let axis = s
        .axis
        .ok_or_else(|| FdError::config("missing required key sweep.axis"))?;
    let raw = s.values.clone().unwrap_or_default();

    let mut values: Vec<AxisValue> = Vec::with_capacity(raw.len());
    for v in &raw {
        let typed = match (axis, v) {
            (SweepAxis::Fraction | SweepAxis::Alpha | SweepAxis::Peak, toml::Value::Float(x)) => {
                AxisValue::Real(*x)
            }
            (SweepAxis::Fraction | SweepAxis::Alpha | SweepAxis::Peak, toml::Value::Integer(x)) => {
                AxisValue::Real(*x as f64)
            }
            (SweepAxis::Clients, toml::Value::Integer(x)) if *x > 0 => AxisValue::Count(*x as usize),
            (SweepAxis::Heterogeneous, toml::Value::Boolean(b)) => AxisValue::Flag(*b),
            _ => {
                return Err(FdError::config(format!(
                    "sweep.values: `{v}` is not a valid {} value",
                    axis.name()
                )))
            }
        };
        if values.contains(&typed) {
            warnings.push(format!("sweep.values: duplicate value {typed} ignored"));
        } else {
            values.push(typed);
        }
    }

    let default_methods = if axis == SweepAxis::Peak {
        vec![AttackKind::Pcfdla]
    } else {
        AttackKind::ALL.to_vec()
    };
    let mut methods = Vec::new();
    for m in s.methods.clone().unwrap_or(default_methods) {
        if methods.contains(&m) {
            warnings.push(format!("sweep.methods: duplicate method {m} ignored"));
        } else {
            methods.push(m);
        }
    }

    let mut seeds = Vec::new();
    let mut seen = BTreeSet::new();
    for seed in s.seeds.clone().unwrap_or_else(|| vec![base.run.seed]) {
        if seen.insert(seed) {
            seeds.push(seed);
        } else {
            warnings.push(format!("sweep.seeds: duplicate seed {seed} ignored"));
        }
    }

    if values.is_empty() || methods.is_empty() || seeds.is_empty() {
        return Err(FdError::usage("sweep grid is empty"));
    }

    let spec = SweepSpec {
        axis,
        values,
        methods,
        seeds,
    };
    for (m, v) in spec.methods.iter().flat_map(|m| spec.values.iter().map(move |v| (m, v))) {
        let mut cfg = v.apply(axis, base);
        cfg.attack.kind = *m;
        cfg.validate()?;
    }
    Ok(spec)
}

/// The fully explicit file form of `cfg`; parsing it yields `cfg` again.
pub fn to_file(cfg: &ExperimentConfig, sweep: Option<&SweepSpec>) -> ConfigFile {
    let dataset = match &cfg.dataset {
        DatasetSpec::Blobs {
            n_classes,
            samples_per_class,
            test_samples_per_class,
            dim,
            spread,
            seed,
        } => DatasetSection {
            kind: Some(DatasetKind::Blobs),
            n_classes: Some(*n_classes),
            samples_per_class: Some(*samples_per_class),
            test_samples_per_class: Some(*test_samples_per_class),
            dim: Some(*dim),
            spread: Some(*spread),
            seed: *seed,
            ..DatasetSection::default()
        },
        DatasetSpec::Csv { train, test } => DatasetSection {
            kind: Some(DatasetKind::Csv),
            train: Some(train.clone()),
            test: Some(test.clone()),
            ..DatasetSection::default()
        },
    };
    ConfigFile {
        dataset: Some(dataset),
        partition: Some(PartitionSection {
            n_clients: Some(cfg.partition.n_clients),
            alpha: Some(cfg.partition.alpha),
            seed: cfg.partition.seed,
        }),
        train: Some(TrainSection {
            lr: Some(cfg.train.lr),
            beta: Some(cfg.train.beta),
            temperature: Some(cfg.train.temperature),
            local_epochs: Some(cfg.train.local_epochs),
            batch_size: Some(cfg.train.batch_size),
        }),
        model: Some(ModelSection {
            hidden: Some(cfg.model.hidden.clone()),
            heterogeneous: Some(cfg.model.heterogeneous),
        }),
        protocol: Some(ProtocolSection {
            kind: Some(cfg.protocol.kind),
            knowledge: Some(cfg.protocol.knowledge),
            neighbors: Some(cfg.protocol.cache.neighbors),
            encoding_dim: Some(cfg.protocol.cache.encoding_dim),
        }),
        attack: Some(AttackSection {
            kind: Some(cfg.attack.kind),
            peak: Some(cfg.attack.peak),
            fraction: Some(cfg.attack.fraction),
            local_distill: cfg.attack.local_distill,
            literal_index: Some(cfg.attack.literal_index),
        }),
        run: Some(RunSection {
            rounds: Some(cfg.run.rounds),
            seed: Some(cfg.run.seed),
            probe_size: Some(cfg.run.probe_size),
            misdirection_class: Some(cfg.run.misdirection_class),
        }),
        sweep: sweep.map(|s| SweepSection {
            axis: Some(s.axis),
            values: Some(
                s.values
                    .iter()
                    .map(|v| match *v {
                        AxisValue::Real(x) => toml::Value::Float(x),
                        AxisValue::Count(n) => toml::Value::Integer(n as i64),
                        AxisValue::Flag(b) => toml::Value::Boolean(b),
                    })
                    .collect(),
            ),
            methods: Some(s.methods.clone()),
            seeds: Some(s.seeds.clone()),
        }),
    }
}

pub fn emit(cfg: &ExperimentConfig, sweep: Option<&SweepSpec>) -> Result<String> {
    toml::to_string(&to_file(cfg, sweep))
        .map_err(|e| FdError::Internal(format!("config serialisation failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadedConfig> {
        parse_str(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse("[dataset]\n[run]\nrounds = 5\n").unwrap();
        let expected = ExperimentConfig {
            run: RunSetup {
                rounds: 5,
                ..RunSetup::default()
            },
            ..ExperimentConfig::default()
        };
        assert_eq!(c.experiment, expected);
        assert_eq!(c.experiment.partition.alpha, 1.0);
        assert!(c.warnings.is_empty());
        assert!(c.sweep.is_none());
    }

    #[test]
    fn required_fields() {
        assert!(matches!(parse("[run]\nrounds = 5\n"), Err(FdError::Config(m)) if m.contains("[dataset]")));
        assert!(matches!(parse("[dataset]\n"), Err(FdError::Config(m)) if m.contains("run.rounds")));
        assert!(matches!(parse("[dataset]\n[run]\nseed = 1\n"), Err(FdError::Config(m)) if m.contains("run.rounds")));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("[dataset]\nbogus_key = 1\n[run]\nrounds = 5\n").unwrap_err();
        match err {
            FdError::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus_key"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("[dataset]\n[run]\nrounds = 5\n[extra]\n").is_err());
    }

    #[test]
    fn type_mismatch_is_a_parse_error() {
        let err = parse("[dataset]\n[run]\nrounds = \"many\"\n").unwrap_err();
        assert!(matches!(err, FdError::Parse { line: 3, .. }), "{err:?}");
        assert!(err.is_validation());
    }

    #[test]
    fn pcfdla_without_peak_warns() {
        let c = parse("[dataset]\n[attack]\nkind = \"pcfdla\"\nfraction = 0.3\n[run]\nrounds = 2\n").unwrap();
        assert_eq!(c.experiment.attack.peak, 5.0);
        assert_eq!(c.warnings.len(), 1);
        assert!(c.warnings[0].contains("peak"));
        let c = parse("[dataset]\n[attack]\nkind = \"pcfdla\"\npeak = 2.0\n[run]\nrounds = 2\n").unwrap();
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn fraction_out_of_bounds() {
        let err = parse("[dataset]\n[attack]\nkind = \"fdla\"\nfraction = 1.5\n[run]\nrounds = 2\n").unwrap_err();
        assert!(matches!(err, FdError::Config(m) if m.contains("fraction")));
    }

    #[test]
    fn csv_dataset_requires_paths() {
        let c = parse("[dataset]\nkind = \"csv\"\ntrain = \"a.csv\"\ntest = \"b.csv\"\n[run]\nrounds = 1\n").unwrap();
        assert!(matches!(c.experiment.dataset, DatasetSpec::Csv { .. }));
        assert!(parse("[dataset]\nkind = \"csv\"\ntrain = \"a.csv\"\n[run]\nrounds = 1\n").is_err());
        assert!(parse("[dataset]\nkind = \"csv\"\ntrain = \"a\"\ntest = \"b\"\ndim = 3\n[run]\nrounds = 1\n").is_err());
        assert!(parse("[dataset]\ntrain = \"a.csv\"\n[run]\nrounds = 1\n").is_err());
    }

    #[test]
    fn emit_round_trips() {
        let text = r#"
[dataset]
spread = 0.7
seed = 9
[partition]
n_clients = 6
alpha = 0.5
[train]
lr = 0.1
[model]
hidden = [[4], [8, 8]]
heterogeneous = true
[protocol]
kind = "cache_lite"
neighbors = 4
[attack]
kind = "fdla"
fraction = 0.3333333333333333
local_distill = "clean"
[run]
rounds = 3
seed = 11
[sweep]
axis = "alpha"
values = [0.5, 1, 3.0]
seeds = [1, 2]
"#;
        let first = parse(text).unwrap();
        let emitted = emit(&first.experiment, first.sweep.as_ref()).unwrap();
        let second = parse(&emitted).unwrap();
        assert_eq!(first.experiment, second.experiment);
        assert_eq!(first.sweep, second.sweep);
        assert_eq!(emit(&second.experiment, second.sweep.as_ref()).unwrap(), emitted);
    }

    #[test]
    fn sweep_defaults_and_dedup() {
        let c = parse("[dataset]\n[run]\nrounds = 1\n[sweep]\naxis = \"fraction\"\nvalues = [0.1, 0.2, 0.2, 0.3]\n").unwrap();
        let s = c.sweep.unwrap();
        assert_eq!(s.values.len(), 3);
        assert_eq!(s.methods.len(), 5);
        assert_eq!(s.grid_len(), 15);
        assert_eq!(s.seeds, vec![0]);
        assert_eq!(c.warnings.len(), 1);

        let c = parse("[dataset]\n[run]\nrounds = 1\n[sweep]\naxis = \"peak\"\nvalues = [1, 2, 5, 10]\n").unwrap();
        let s = c.sweep.unwrap();
        assert_eq!(s.methods, vec![AttackKind::Pcfdla]);
        assert_eq!(s.grid_len(), 4);
    }

    #[test]
    fn sweep_errors() {
        let empty = parse("[dataset]\n[run]\nrounds = 1\n[sweep]\naxis = \"alpha\"\nvalues = []\n");
        assert!(matches!(empty, Err(FdError::Usage(_))));
        let missing = parse("[dataset]\n[run]\nrounds = 1\n[sweep]\naxis = \"alpha\"\n");
        assert!(matches!(missing, Err(FdError::Usage(_))));
        let typed = parse("[dataset]\n[run]\nrounds = 1\n[sweep]\naxis = \"clients\"\nvalues = [1.5]\n");
        assert!(matches!(typed, Err(FdError::Config(_))));
        let invalid = parse("[dataset]\n[run]\nrounds = 1\n[sweep]\naxis = \"fraction\"\nvalues = [2.0]\n");
        assert!(matches!(invalid, Err(FdError::Config(_))));
        let hetero = parse("[dataset]\n[run]\nrounds = 1\n[sweep]\naxis = \"heterogeneous\"\nvalues = [true, false]\n").unwrap();
        assert_eq!(hetero.sweep.unwrap().values, vec![AxisValue::Flag(true), AxisValue::Flag(false)]);
    }
}
