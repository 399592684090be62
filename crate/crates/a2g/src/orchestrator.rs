//! Experiment driver: the synchronous round loop over parallel client
//! updates, QoS collection, the dual-gain server update, evaluation, and
//! per-round telemetry.

use rayon::prelude::*;

use crate::aggregation::{a2g_update, AggregationConfig, ClientReport};
use crate::channel::{measure_instability, sample_fidelity, sample_latency, ChannelConfig};
use crate::data::{
    load_csv, partition, pca_reduce, standardize, synth_blobs, train_test_split, CsvSpec, Dataset,
    PartitionSpec,
};
use crate::error::{Error, Result};
use crate::manifold::{self, ParamPoint};
use crate::model::{bce_loss, ModelSpec};
use crate::optimizer::{local_train, SpsaConfig};
use crate::qos::QosSample;
use crate::rng::{derive_seed, RngStream, StreamPurpose};

use rand::Rng;
use std::f64::consts::FRAC_PI_4;

/// Where the experiment's samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        n: usize,
        dim: usize,
        separation: f64,
    },
    Csv {
        path: std::path::PathBuf,
        spec: CsvSpec,
    },
}

/// Full description of one federated run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub num_clients: usize,
    pub rounds: usize,
    pub eval_every: usize,
    /// Seed for initialization, training, and channel streams.
    pub master_seed: u64,
    /// Seed for data generation, the holdout split, and partitioning; sweeps
    /// hold it fixed so every axis value sees identical splits.
    pub data_seed: u64,
    /// Phase-I worker cap; 0 resolves to A2G_THREADS or the CPU count.
    pub threads: usize,
    pub test_fraction: f64,
    /// Principal components to keep; 0 disables PCA.
    pub pca_dim: usize,
    pub instability_window: usize,
    pub aggregation: AggregationConfig,
    pub channel: ChannelConfig,
    /// Optional per-client bit-flip override (length = num_clients).
    pub flip_prob_per_client: Option<Vec<f64>>,
    pub spsa: SpsaConfig,
    pub model: ModelSpec,
    pub partition: PartitionSpec,
    pub source: DataSource,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config {
                path: "num_clients".into(),
                reason: "must be >= 1".into(),
            });
        }
        if self.rounds == 0 {
            return Err(Error::Config {
                path: "rounds".into(),
                reason: "must be >= 1".into(),
            });
        }
        if self.eval_every == 0 {
            return Err(Error::Config {
                path: "eval_every".into(),
                reason: "must be >= 1".into(),
            });
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config {
                path: "test_fraction".into(),
                reason: format!("must lie in (0, 1), got {}", self.test_fraction),
            });
        }
        if self.instability_window == 0 {
            return Err(Error::Config {
                path: "instability_window".into(),
                reason: "must be >= 1".into(),
            });
        }
        self.aggregation.validate()?;
        self.channel.validate()?;
        self.spsa.validate()?;
        self.model.validate()?;
        self.partition.validate()?;
        if self.partition.num_clients != self.num_clients {
            return Err(Error::Config {
                path: "partition".into(),
                reason: "partition num_clients must equal the experiment's".into(),
            });
        }
        if let Some(flips) = &self.flip_prob_per_client {
            if flips.len() != self.num_clients {
                return Err(Error::Config {
                    path: "channel.flip_prob_per_client".into(),
                    reason: format!(
                        "needs one entry per client ({}), got {}",
                        self.num_clients,
                        flips.len()
                    ),
                });
            }
            for &p in flips {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Config {
                        path: "channel.flip_prob_per_client".into(),
                        reason: format!("entries must lie in [0, 1), got {p}"),
                    });
                }
            }
        }
        match &self.source {
            DataSource::Synthetic { n, dim, .. } => {
                if *n < 4 {
                    return Err(Error::Config {
                        path: "data.synth_n".into(),
                        reason: "must be >= 4".into(),
                    });
                }
                if *dim == 0 {
                    return Err(Error::Config {
                        path: "data.synth_dim".into(),
                        reason: "must be >= 1".into(),
                    });
                }
            }
            DataSource::Csv { path, .. } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::Config {
                        path: "data.csv_path".into(),
                        reason: "must be set for data.source=csv".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Per-round telemetry, one record per round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub test_accuracy: f64,
    pub global_loss: f64,
    pub weights: Vec<f64>,
    pub mean_fidelity: f64,
    pub mean_latency: f64,
    pub mean_instability: f64,
    pub dispersion: f64,
    pub grad_norm: f64,
}

/// Run-level digest of the per-round records.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub mean_accuracy_last5: f64,
    pub records: Vec<RoundRecord>,
}

impl RunSummary {
    fn from_records(records: Vec<RoundRecord>) -> Self {
        let best = records
            .iter()
            .map(|r| r.test_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        let last = records.last().map(|r| r.test_accuracy).unwrap_or(0.0);
        let tail = records.len().min(5);
        let mean5 = records[records.len() - tail..]
            .iter()
            .map(|r| r.test_accuracy)
            .sum::<f64>()
            / tail as f64;
        Self {
            best_accuracy: best,
            final_accuracy: last,
            mean_accuracy_last5: mean5,
            records,
        }
    }
}

/// Everything a client needs besides its shard and the current global model.
#[derive(Debug, Clone, Copy)]
pub struct ClientContext<'a> {
    pub model: &'a ModelSpec,
    pub spsa: &'a SpsaConfig,
    pub channel: &'a ChannelConfig,
    pub master_seed: u64,
    pub instability_window: usize,
}

/// One client's round: copy the global model, train locally, measure QoS,
/// and assemble the report.
pub fn client_round(
    client_id: usize,
    round: usize,
    global: &ParamPoint,
    shard: &Dataset,
    ctx: &ClientContext<'_>,
) -> Result<ClientReport> {
    let mut loss_fn = |p: &ParamPoint| bce_loss(ctx.model, p, shard.features(), shard.labels());
    let mut train_rng = RngStream::new(
        ctx.master_seed,
        StreamPurpose::Train,
        client_id as u64,
        round as u64,
    )
    .rng();
    let outcome = local_train(global, &mut loss_fn, ctx.spsa, &mut train_rng)
        .map_err(|e| e.with_client_context(client_id, round))?;

    let mut fid_rng = RngStream::new(
        ctx.master_seed,
        StreamPurpose::Fidelity,
        client_id as u64,
        round as u64,
    )
    .rng();
    let fidelity = sample_fidelity(ctx.channel, &mut fid_rng);
    let mut lat_rng = RngStream::new(
        ctx.master_seed,
        StreamPurpose::Latency,
        client_id as u64,
        round as u64,
    )
    .rng();
    let latency = sample_latency(ctx.channel, &mut lat_rng);
    let instability = if outcome.loss_history.is_empty() {
        0.0
    } else {
        measure_instability(
            &outcome.loss_history,
            ctx.instability_window,
            ctx.channel.s_max,
        )?
    };
    let qos = QosSample::new(fidelity, latency, instability)?;
    Ok(ClientReport {
        params: outcome.params,
        grad: Some(outcome.last_grad),
        qos,
        shard_size: shard.len(),
    })
}

/// Evaluate a model on a test set: accuracy (outputs ≥ 0.5 predict class 1)
/// and mean binary cross-entropy.
pub fn evaluate(model: &ModelSpec, params: &ParamPoint, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let mut correct = 0usize;
    for (x, &y) in test.features().iter().zip(test.labels()) {
        let p = model.forward(params, x)?;
        let pred = u8::from(p >= 0.5);
        correct += usize::from(pred == y);
    }
    let accuracy = correct as f64 / test.len() as f64;
    let loss = bce_loss(model, params, test.features(), test.labels())?;
    Ok((accuracy, loss))
}

fn resolve_threads(cfg_threads: usize, num_clients: usize) -> usize {
    let auto = || {
        std::env::var("A2G_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&t| t > 0)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            })
    };
    let t = if cfg_threads > 0 { cfg_threads } else { auto() };
    t.min(num_clients).max(1)
}

/// A prepared federated run: data loaded, preprocessed, partitioned, global
/// parameters initialized.
pub struct Experiment {
    cfg: ExperimentConfig,
    shards: Vec<Dataset>,
    test: Dataset,
    global: ParamPoint,
    pool: rayon::ThreadPool,
    last_eval: (f64, f64),
}

impl Experiment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let raw = match &cfg.source {
            DataSource::Synthetic { n, dim, separation } => {
                let mut rng = RngStream::new(cfg.data_seed, StreamPurpose::Data, 0, 0).rng();
                synth_blobs(*n, *dim, *separation, &mut rng)?
            }
            DataSource::Csv { path, spec } => load_csv(path, spec)?,
        };
        let mut split_rng = RngStream::new(cfg.data_seed, StreamPurpose::Split, 0, 0).rng();
        let (train_raw, test_raw) = train_test_split(&raw, cfg.test_fraction, &mut split_rng)?;
        let (train_std, mut others, _) = standardize(&train_raw, &[&test_raw])?;
        let test_std = others.pop().expect("one applied dataset");
        let (train, test) = if cfg.pca_dim > 0 {
            if cfg.pca_dim > train_std.dim() {
                return Err(Error::Config {
                    path: "pca_dim".into(),
                    reason: format!(
                        "{} components requested but data has {} features",
                        cfg.pca_dim,
                        train_std.dim()
                    ),
                });
            }
            let (train_pca, mut others, _) = pca_reduce(&train_std, &[&test_std], cfg.pca_dim)?;
            (train_pca, others.pop().expect("one applied dataset"))
        } else {
            (train_std, test_std)
        };

        let mut part_rng = RngStream::new(cfg.data_seed, StreamPurpose::Partition, 0, 0).rng();
        let index_sets = partition(&train, &cfg.partition, &mut part_rng)?;
        let shards = index_sets
            .iter()
            .map(|idx| train.select(idx))
            .collect::<Result<Vec<_>>>()?;

        let spec = cfg.model.param_manifold(train.dim())?;
        let mut init_rng = RngStream::new(cfg.master_seed, StreamPurpose::Init, 0, 0).rng();
        let coords: Vec<f64> = spec
            .angular_mask()
            .iter()
            .map(|&angular| {
                if angular {
                    init_rng.gen_range(-FRAC_PI_4..FRAC_PI_4)
                } else {
                    0.0
                }
            })
            .collect();
        let global = ParamPoint::new(coords, spec)?;

        let threads = resolve_threads(cfg.threads, cfg.num_clients);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config {
                path: "threads".into(),
                reason: e.to_string(),
            })?;

        let last_eval = evaluate(&cfg.model, &global, &test)?;
        Ok(Self {
            cfg: cfg.clone(),
            shards,
            test,
            global,
            pool,
            last_eval,
        })
    }

    pub fn global(&self) -> &ParamPoint {
        &self.global
    }

    pub fn shards(&self) -> &[Dataset] {
        &self.shards
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    fn channel_for(&self, client_id: usize) -> ChannelConfig {
        let mut channel = self.cfg.channel;
        if let Some(flips) = &self.cfg.flip_prob_per_client {
            channel.flip_prob = flips[client_id];
        }
        channel
    }

    /// Execute round `t` (1-based): all clients in parallel, then the server
    /// update, then evaluation on the cadence. Reports are returned in client
    /// order for callers that want the raw round inputs.
    pub fn run_round(&mut self, t: usize) -> Result<(Vec<ClientReport>, RoundRecord)> {
        let cfg = &self.cfg;
        let global = &self.global;
        let shards = &self.shards;
        let reports: Vec<ClientReport> = self.pool.install(|| {
            (0..cfg.num_clients)
                .into_par_iter()
                .map(|client_id| {
                    let channel = self.channel_for(client_id);
                    let ctx = ClientContext {
                        model: &cfg.model,
                        spsa: &cfg.spsa,
                        channel: &channel,
                        master_seed: cfg.master_seed,
                        instability_window: cfg.instability_window,
                    };
                    client_round(client_id, t, global, &shards[client_id], &ctx)
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let client_points: Vec<ParamPoint> = reports.iter().map(|r| r.params.clone()).collect();
        let rho = manifold::dispersion(&self.global, &client_points)?;
        let outcome = a2g_update(&self.global, &reports, &cfg.aggregation)?;
        self.global = outcome.params;

        if t.is_multiple_of(cfg.eval_every) || t == cfg.rounds {
            self.last_eval = evaluate(&cfg.model, &self.global, &self.test)?;
        }
        let k = reports.len() as f64;
        let record = RoundRecord {
            round: t,
            test_accuracy: self.last_eval.0,
            global_loss: self.last_eval.1,
            weights: outcome.weights.weights().to_vec(),
            mean_fidelity: reports.iter().map(|r| r.qos.fidelity).sum::<f64>() / k,
            mean_latency: reports.iter().map(|r| r.qos.latency).sum::<f64>() / k,
            mean_instability: reports.iter().map(|r| r.qos.instability).sum::<f64>() / k,
            dispersion: rho,
            grad_norm: outcome.grad_norm,
        };
        Ok((reports, record))
    }

    /// Run all rounds and summarize.
    pub fn run(mut self) -> Result<RunSummary> {
        let rounds = self.cfg.rounds;
        let mut records = Vec::with_capacity(rounds);
        for t in 1..=rounds {
            let (_, record) = self.run_round(t)?;
            records.push(record);
        }
        Ok(RunSummary::from_records(records))
    }
}

/// Load, preprocess, partition, train for the configured number of rounds,
/// and summarize.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    Experiment::new(cfg)?.run()
}

/// Which config knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Beta,
    Noise,
    Partition,
}

impl SweepAxis {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "beta" => Ok(SweepAxis::Beta),
            "noise" => Ok(SweepAxis::Noise),
            "partition" => Ok(SweepAxis::Partition),
            other => Err(Error::Config {
                path: "sweep.axis".into(),
                reason: format!("unknown axis `{other}` (expected beta|noise|partition)"),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::Noise => "noise",
            SweepAxis::Partition => "partition",
        }
    }

    /// Apply one axis value to a run config.
    pub fn apply(&self, cfg: &mut ExperimentConfig, value: &str) -> Result<()> {
        match self {
            SweepAxis::Beta => {
                let beta: f64 = value.parse().map_err(|_| Error::Config {
                    path: "sweep.values".into(),
                    reason: format!("`{value}` is not a number"),
                })?;
                cfg.aggregation.beta = beta;
                cfg.aggregation.validate()
            }
            SweepAxis::Noise => {
                let regime = crate::channel::NoiseRegime::from_name(value)?;
                cfg.channel.flip_prob = regime.flip_prob();
                Ok(())
            }
            SweepAxis::Partition => {
                let scheme = crate::data::PartitionScheme::from_name(value)?;
                cfg.partition.scheme = scheme;
                Ok(())
            }
        }
    }
}

/// One entry of a sweep: the axis value, the run's full config (axis applied,
/// seed derived), and its outcome. Failures are recorded; later values still
/// run.
#[derive(Debug)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub cfg: ExperimentConfig,
    pub result: Result<RunSummary>,
}

/// Run one experiment per axis value. Every run derives its own master seed
/// from the shared one and the value string, while the data seed stays fixed
/// so all values see identical splits.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepRun>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("sweep values"));
    }
    let mut out = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = base.clone();
        let seed = derive_seed(base.master_seed, value);
        cfg.master_seed = seed;
        let result = axis
            .apply(&mut cfg, value)
            .and_then(|()| run_experiment(&cfg));
        out.push(SweepRun {
            value: value.clone(),
            seed,
            cfg,
            result,
        });
    }
    Ok(out)
}
