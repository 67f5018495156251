//! Round orchestration: local training, knowledge upload (poisoned for
//! malicious clients), barrier aggregation, distribution and evaluation.

use std::path::PathBuf;

use crate::attacks::{apply_attack, AttackConfig, AttackKind, LocalDistill, DEFAULT_PEAK};
use crate::data::{dirichlet_partition, load_dataset, BlobGenerator, Dataset, PartitionSpec};
use crate::error::{FdError, Result};
use crate::exec::{self, Execution};
use crate::knowledge::{
    distribute, extract_knowledge, CacheIndex, CacheLiteConfig, KnowledgeForm, KnowledgeRecord, Protocol, Server,
    TargetMap,
};
use crate::metrics::{
    evaluate, modal_runner_up, pca_project, tol_avg_acc, vctm_avg_acc, ConfusionMatrix, RoundReport,
};
use crate::nn::{train_local, Example, ModelParams, TrainConfig};
use crate::rng::{derive_seed, stream, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs {
        n_classes: usize,
        samples_per_class: usize,
        test_samples_per_class: usize,
        dim: usize,
        spread: f64,
        /// Derived from the master seed when absent.
        seed: Option<u64>,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs {
            n_classes: 10,
            samples_per_class: 200,
            test_samples_per_class: 100,
            dim: 32,
            spread: 1.2,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSetup {
    pub n_clients: usize,
    pub alpha: f64,
    pub seed: Option<u64>,
}

impl Default for PartitionSetup {
    fn default() -> Self {
        PartitionSetup {
            n_clients: 10,
            alpha: 1.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSetup {
    /// Hidden-layer widths of each architecture in the family.
    pub hidden: Vec<Vec<usize>>,
    /// Assign architecture `i mod family_size` to client `i`.
    pub heterogeneous: bool,
}

impl Default for ModelSetup {
    fn default() -> Self {
        ModelSetup {
            hidden: vec![vec![32], vec![64], vec![32, 32]],
            heterogeneous: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProtocolSetup {
    pub kind: Protocol,
    pub knowledge: KnowledgeForm,
    pub cache: CacheLiteConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSetup {
    pub kind: AttackKind,
    pub peak: f64,
    /// Share of clients that are malicious; the lowest ids are chosen.
    pub fraction: f64,
    /// Falls back to the kind's default when absent.
    pub local_distill: Option<LocalDistill>,
    pub literal_index: bool,
}

impl Default for AttackSetup {
    fn default() -> Self {
        AttackSetup {
            kind: AttackKind::None,
            peak: DEFAULT_PEAK,
            fraction: 0.0,
            local_distill: None,
            literal_index: false,
        }
    }
}

impl AttackSetup {
    pub fn local_distill(&self) -> LocalDistill {
        self.local_distill
            .unwrap_or_else(|| self.kind.default_local_distill())
    }

    /// Number of malicious clients among `n_clients`.
    pub fn malicious_count(&self, n_clients: usize) -> usize {
        if self.kind == AttackKind::None {
            return 0;
        }
        ((self.fraction * n_clients as f64) + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSetup {
    pub rounds: usize,
    pub seed: u64,
    /// Test samples whose uploaded logits represent a client in the PCA view.
    pub probe_size: usize,
    /// True class whose confusion with its decoy is tracked.
    pub misdirection_class: usize,
}

impl Default for RunSetup {
    fn default() -> Self {
        RunSetup {
            rounds: 40,
            seed: 0,
            probe_size: 64,
            misdirection_class: 0,
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub partition: PartitionSetup,
    pub train: TrainConfig,
    pub model: ModelSetup,
    pub protocol: ProtocolSetup,
    pub attack: AttackSetup,
    pub run: RunSetup,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSpec::Blobs {
                n_classes,
                samples_per_class,
                test_samples_per_class,
                dim,
                spread,
                ..
            } => {
                if *n_classes < 2 {
                    return Err(FdError::config("dataset.n_classes must be >= 2"));
                }
                if *samples_per_class == 0 || *test_samples_per_class == 0 || *dim == 0 {
                    return Err(FdError::config(
                        "dataset sample counts and dim must be positive",
                    ));
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return Err(FdError::config("dataset.spread must be >= 0"));
                }
            }
            DatasetSpec::Csv { .. } => {}
        }
        PartitionSpec {
            n_clients: self.partition.n_clients,
            alpha: self.partition.alpha,
            seed: 0,
        }
        .validate()?;
        self.train.validate()?;
        if self.model.hidden.is_empty() {
            return Err(FdError::config("model.hidden needs at least one architecture"));
        }
        if self.model.hidden.iter().flatten().any(|&w| w == 0) {
            return Err(FdError::config("model.hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.attack.fraction) {
            return Err(FdError::config(format!(
                "attack.fraction must be in [0, 1), got {}",
                self.attack.fraction
            )));
        }
        if !(self.attack.peak > 0.0 && self.attack.peak.is_finite()) {
            return Err(FdError::config(format!(
                "attack.peak must be > 0, got {}",
                self.attack.peak
            )));
        }
        if self.protocol.cache.neighbors == 0 || self.protocol.cache.encoding_dim == 0 {
            return Err(FdError::config(
                "protocol.neighbors and protocol.encoding_dim must be positive",
            ));
        }
        if self.run.rounds == 0 {
            return Err(FdError::config("run.rounds must be >= 1"));
        }
        if self.run.probe_size == 0 {
            return Err(FdError::config("run.probe_size must be >= 1"));
        }
        Ok(())
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            n_clients: self.partition.n_clients,
            alpha: self.partition.alpha,
            seed: self
                .partition
                .seed
                .unwrap_or_else(|| derive_seed(self.run.seed, "partition", 0)),
        }
    }

    /// Architecture index of client `i`.
    pub fn architecture_of(&self, client: usize) -> usize {
        if self.model.heterogeneous {
            client % self.model.hidden.len()
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Honest,
    Malicious,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Honest => "honest",
            Role::Malicious => "malicious",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub architecture: usize,
    pub params: ModelParams,
    pub shard: Vec<usize>,
    pub role: Role,
    pub attack: AttackConfig,
    form: KnowledgeForm,
    rng: StreamRng,
    attack_rng: StreamRng,
    /// Targets distributed after the previous round.
    targets: TargetMap,
    /// A malicious client's own knowledge from the previous round, clean or
    /// poisoned depending on its local-distillation mode.
    own_knowledge: Option<TargetMap>,
}

impl ClientState {
    pub fn is_malicious(&self) -> bool {
        self.role == Role::Malicious
    }

    pub fn targets(&self) -> &TargetMap {
        &self.targets
    }

    /// Local optimisation against the distillation targets in effect.
    pub fn train(&mut self, train: &Dataset, cfg: &TrainConfig) -> Result<()> {
        let targets = if self.is_malicious() && self.attack.local_distill != LocalDistill::Global {
            self.own_knowledge.as_ref()
        } else {
            Some(&self.targets)
        };
        let examples: Vec<Example> = self
            .shard
            .iter()
            .map(|&s| {
                let (features, label) = train.sample(s);
                Example {
                    features,
                    label,
                    target: targets.and_then(|t| t.get(&s)).map(Vec::as_slice),
                }
            })
            .collect();
        self.params = train_local(&self.params, &examples, cfg, &mut self.rng)?;
        Ok(())
    }

    /// Trains, extracts knowledge and returns the (possibly poisoned) upload.
    fn step(&mut self, train: &Dataset, cfg: &TrainConfig) -> Result<Vec<KnowledgeRecord>> {
        self.train(train, cfg)?;
        let records = self
            .form
            .apply(extract_knowledge(self.id, &self.params, &self.shard, train.features())?);
        let upload = if self.is_malicious() {
            apply_attack(&records, &self.attack, &mut self.attack_rng)?
        } else {
            records.clone()
        };
        if self.is_malicious() {
            let own = match self.attack.local_distill {
                LocalDistill::Global => None,
                LocalDistill::Clean => Some(&records),
                LocalDistill::Poisoned => Some(&upload),
            };
            self.own_knowledge =
                own.map(|r| r.iter().map(|r| (r.sample_id, r.logits.clone())).collect());
        }
        Ok(upload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub execution: Execution,
    /// Keep every round's uploaded records.
    pub record_knowledge: bool,
}

/// A built experiment, advanced one round at a time.
#[derive(Debug)]
pub struct Experiment {
    cfg: ExperimentConfig,
    options: RunOptions,
    clients: Vec<ClientState>,
    server: Server,
    train: Dataset,
    test: Dataset,
    probe: Vec<usize>,
    cache: Option<CacheIndex>,
    decoy_class: usize,
    round: usize,
    uploads: Vec<(usize, Vec<KnowledgeRecord>)>,
}

fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetSpec::Blobs {
            n_classes,
            samples_per_class,
            test_samples_per_class,
            dim,
            spread,
            seed,
        } => {
            let seed = seed.unwrap_or_else(|| derive_seed(cfg.run.seed, "dataset", 0));
            let gen = BlobGenerator::new(*n_classes, *dim, *spread, seed)?;
            Ok((
                gen.sample(*samples_per_class, derive_seed(seed, "blob-train", 0))?,
                gen.sample(*test_samples_per_class, derive_seed(seed, "blob-test", 0))?,
            ))
        }
        DatasetSpec::Csv { train, test } => {
            let train = load_dataset(train)?;
            let test = load_dataset(test)?;
            if train.dim() != test.dim() {
                return Err(FdError::Schema(format!(
                    "train has {} features but test has {}",
                    train.dim(),
                    test.dim()
                )));
            }
            let n = train.n_classes().max(test.n_classes());
            Ok((
                Dataset::new(train.features().to_vec(), train.labels().to_vec(), n)?,
                Dataset::new(test.features().to_vec(), test.labels().to_vec(), n)?,
            ))
        }
    }
}

impl Experiment {
    pub fn build(cfg: &ExperimentConfig, options: RunOptions) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = load_datasets(cfg)?;
        if cfg.run.misdirection_class >= train.n_classes() {
            return Err(FdError::config(format!(
                "run.misdirection_class {} is not below the {} classes",
                cfg.run.misdirection_class,
                train.n_classes()
            )));
        }
        let master = cfg.run.seed;
        let shards = dirichlet_partition(train.labels(), &cfg.partition_spec())?;
        let n_malicious = cfg.attack.malicious_count(cfg.partition.n_clients);

        let clients = shards
            .iter()
            .enumerate()
            .map(|(id, shard)| {
                let architecture = cfg.architecture_of(id);
                let mut dims = vec![train.dim()];
                dims.extend(&cfg.model.hidden[architecture]);
                dims.push(train.n_classes());
                let params = ModelParams::init_uniform(&dims, &mut stream(master, "init", id as u64))?;
                let role = if id < n_malicious {
                    Role::Malicious
                } else {
                    Role::Honest
                };
                let attack = AttackConfig {
                    kind: cfg.attack.kind,
                    peak: cfg.attack.peak,
                    rng_seed: derive_seed(master, "attack", id as u64),
                    local_distill: cfg.attack.local_distill(),
                    literal_index: cfg.attack.literal_index,
                };
                Ok(ClientState {
                    id,
                    architecture,
                    params,
                    shard: shard.clone(),
                    role,
                    attack,
                    form: cfg.protocol.knowledge,
                    rng: stream(master, "train", id as u64),
                    attack_rng: stream(attack.rng_seed, "attack-stream", 0),
                    targets: TargetMap::new(),
                    own_knowledge: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let cache = match cfg.protocol.kind {
            Protocol::CacheLite => Some(CacheIndex::build(
                train.features(),
                &shards,
                &cfg.protocol.cache,
                derive_seed(master, "cache", 0),
                options.execution,
            )?),
            _ => None,
        };

        let probe = {
            use rand::seq::SliceRandom;
            let mut idx: Vec<usize> = (0..test.len()).collect();
            idx.shuffle(&mut stream(master, "probe", 0));
            idx.truncate(cfg.run.probe_size);
            idx.sort_unstable();
            idx
        };
        let decoy_class = modal_runner_up(&train.centroids(), &test, cfg.run.misdirection_class)?;

        Ok(Experiment {
            server: Server::new(clients.len(), train.n_classes(), cfg.protocol.kind),
            cfg: cfg.clone(),
            options,
            clients,
            train,
            test,
            probe,
            cache,
            decoy_class,
            round: 0,
            uploads: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn decoy_class(&self) -> usize {
        self.decoy_class
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn uploads(&self) -> &[(usize, Vec<KnowledgeRecord>)] {
        &self.uploads
    }

    pub fn honest_mask(&self) -> Vec<bool> {
        self.clients.iter().map(|c| !c.is_malicious()).collect()
    }

    /// One communication round.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        self.round += 1;
        let mode = self.options.execution;
        let train = &self.train;
        let train_cfg = &self.cfg.train;

        let uploads = exec::map_mut(mode, &mut self.clients, |c| c.step(train, train_cfg))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        if self.options.record_knowledge {
            self.uploads
                .push((self.round, uploads.iter().flatten().cloned().collect()));
        }
        for (client, upload) in self.clients.iter().zip(uploads) {
            self.server.receive(client.id, upload)?;
        }
        let labels = train.labels();
        let gk = self.server.aggregate(labels)?;
        let cache = self.cache.as_ref();
        let targets = exec::map(mode, &self.clients, |c| {
            distribute(gk, c.id, &c.shard, labels, cache)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for (client, t) in self.clients.iter_mut().zip(targets) {
            client.targets = t;
        }
        self.report()
    }

    fn report(&self) -> Result<RoundReport> {
        let test = &self.test;
        let evals = exec::map(self.options.execution, &self.clients, |c| {
            evaluate(&c.params, test)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut confusion = ConfusionMatrix::new(test.n_classes());
        let mut per_client_acc = Vec::with_capacity(evals.len());
        for (acc, conf) in &evals {
            per_client_acc.push(*acc);
            confusion.merge(conf);
        }
        let honest = self.honest_mask();
        Ok(RoundReport {
            round: self.round,
            tol_avg_acc: tol_avg_acc(&per_client_acc)?,
            vctm_avg_acc: vctm_avg_acc(&per_client_acc, &honest)?,
            misdirection_count: confusion.get(self.cfg.run.misdirection_class, self.decoy_class)?,
            malicious: honest.iter().map(|h| !h).collect(),
            per_client_acc,
            confusion,
        })
    }

    /// 2-D PCA of what the server would see from each client on the probe set.
    pub fn pca(&self) -> Result<Vec<PcaPoint>> {
        let vectors = self
            .clients
            .iter()
            .map(|c| {
                let records = c
                    .form
                    .apply(extract_knowledge(c.id, &c.params, &self.probe, self.test.features())?);
                let upload = if c.is_malicious() {
                    let mut rng = stream(c.attack.rng_seed, "probe-attack", self.round as u64);
                    apply_attack(&records, &c.attack, &mut rng)?
                } else {
                    records
                };
                Ok(upload.into_iter().flat_map(|r| r.logits).collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let coords = if vectors.len() >= 2 {
            pca_project(&vectors, 2)?
        } else {
            vec![vec![0.0, 0.0]; vectors.len()]
        };
        Ok(self
            .clients
            .iter()
            .zip(coords)
            .map(|(c, xy)| PcaPoint {
                client_id: c.id,
                role: c.role,
                x: xy[0],
                y: xy[1],
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaPoint {
    pub client_id: usize,
    pub role: Role,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<RoundReport>,
    pub pca: Vec<PcaPoint>,
    pub roles: Vec<Role>,
    pub decoy_class: usize,
    pub n_classes: usize,
    /// Uploaded records per round, when requested.
    pub uploads: Vec<(usize, Vec<KnowledgeRecord>)>,
}

impl ExperimentOutcome {
    pub fn final_report(&self) -> &RoundReport {
        self.reports.last().expect("at least one round")
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, options: RunOptions) -> Result<ExperimentOutcome> {
    let mut exp = Experiment::build(cfg, options)?;
    let reports = (0..cfg.run.rounds)
        .map(|_| exp.run_round())
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutcome {
        pca: exp.pca()?,
        roles: exp.clients.iter().map(|c| c.role).collect(),
        decoy_class: exp.decoy_class,
        n_classes: exp.train.n_classes(),
        uploads: std::mem::take(&mut exp.uploads),
        reports,
    })
}
