//! Flat key-value experiment configuration: file parsing, dotted-path
//! overrides, validation, and the canonical `config.resolved` echo that makes
//! runs reproducible byte for byte.
//!
//! The format is one `key=value` pair per line; `#` starts a comment. Every
//! key is listed in [`KEYS`]; unknown keys are rejected, not ignored.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::aggregation::AggregationConfig;
use crate::channel::{ChannelConfig, NoiseRegime};
use crate::data::{CsvSpec, PartitionScheme, PartitionSpec};
use crate::error::{Error, Result};
use crate::model::{CircuitSpec, ModelSpec};
use crate::optimizer::SpsaConfig;
use crate::orchestrator::{DataSource, ExperimentConfig};
use crate::qos::QosGains;

/// Every accepted config key, in canonical emission order.
pub const KEYS: &[&str] = &[
    "num_clients",
    "rounds",
    "eval_every",
    "master_seed",
    "data_seed",
    "threads",
    "test_fraction",
    "pca_dim",
    "instability_window",
    "aggregation.eta",
    "aggregation.beta",
    "aggregation.alpha",
    "aggregation.gamma",
    "aggregation.delta",
    "aggregation.epsilon",
    "channel.flip_prob",
    "channel.flip_prob_per_client",
    "channel.trials_per_round",
    "channel.latency_log_mean",
    "channel.latency_log_sigma",
    "channel.tau_max",
    "channel.s_max",
    "spsa.a0",
    "spsa.c0",
    "spsa.stability_offset",
    "spsa.alpha_exp",
    "spsa.gamma_exp",
    "spsa.steps_per_round",
    "model.kind",
    "model.num_qubits",
    "model.num_layers",
    "model.readout_qubit",
    "model.bias",
    "partition.scheme",
    "partition.min_shard",
    "partition.quantity_low",
    "partition.quantity_high",
    "partition.skew_bias",
    "data.source",
    "data.csv_path",
    "data.label_column",
    "data.positive_token",
    "data.drop_tokens",
    "data.synth_n",
    "data.synth_dim",
    "data.synth_separation",
];

/// Input-only convenience keys that resolve into canonical ones.
const SUGAR_KEYS: &[&str] = &["channel.noise"];

/// Mutable builder the file and overrides are applied onto.
#[derive(Debug, Clone)]
struct Builder {
    num_clients: usize,
    rounds: usize,
    eval_every: usize,
    master_seed: u64,
    data_seed: Option<u64>,
    threads: usize,
    test_fraction: f64,
    pca_dim: usize,
    instability_window: usize,
    eta: f64,
    beta: f64,
    alpha: f64,
    gamma: f64,
    delta: f64,
    epsilon: f64,
    flip_prob: f64,
    flip_prob_per_client: Vec<f64>,
    trials_per_round: usize,
    latency_log_mean: f64,
    latency_log_sigma: f64,
    tau_max: f64,
    s_max: f64,
    a0: f64,
    c0: f64,
    stability_offset: f64,
    alpha_exp: f64,
    gamma_exp: f64,
    steps_per_round: usize,
    model_kind: String,
    num_qubits: usize,
    num_layers: usize,
    readout_qubit: usize,
    bias: bool,
    scheme: String,
    min_shard: usize,
    quantity_low: usize,
    quantity_high: usize,
    skew_bias: f64,
    source: String,
    csv_path: String,
    label_column: String,
    positive_token: String,
    drop_tokens: Vec<String>,
    synth_n: usize,
    synth_dim: usize,
    synth_separation: f64,
}

impl Default for Builder {
    fn default() -> Self {
        let channel = ChannelConfig::default();
        let spsa = SpsaConfig::default();
        let agg = AggregationConfig::default();
        let circuit = CircuitSpec::default();
        Self {
            num_clients: 5,
            rounds: 30,
            eval_every: 1,
            master_seed: 42,
            data_seed: None,
            threads: 0,
            test_fraction: 0.2,
            pca_dim: 4,
            instability_window: 10,
            eta: agg.eta,
            beta: agg.beta,
            alpha: agg.gains.alpha,
            gamma: agg.gains.gamma,
            delta: agg.gains.delta,
            epsilon: agg.gains.epsilon,
            flip_prob: channel.flip_prob,
            flip_prob_per_client: Vec::new(),
            trials_per_round: channel.trials_per_round,
            latency_log_mean: channel.latency_log_mean,
            latency_log_sigma: channel.latency_log_sigma,
            tau_max: channel.tau_max,
            s_max: channel.s_max,
            a0: spsa.a0,
            c0: spsa.c0,
            stability_offset: spsa.stability_offset,
            alpha_exp: spsa.alpha_exp,
            gamma_exp: spsa.gamma_exp,
            steps_per_round: spsa.steps_per_round,
            model_kind: "circuit".into(),
            num_qubits: circuit.num_qubits,
            num_layers: circuit.num_layers,
            readout_qubit: circuit.readout_qubit,
            bias: true,
            scheme: "iid".into(),
            min_shard: 20,
            quantity_low: 20,
            quantity_high: 150,
            skew_bias: 0.8,
            source: "synthetic".into(),
            csv_path: String::new(),
            label_column: "diagnosis".into(),
            positive_token: "malignant".into(),
            drop_tokens: vec!["not applicable".into(), "indefinable".into()],
            synth_n: 1000,
            synth_dim: 4,
            synth_separation: 4.0,
        }
    }
}

fn bad(path: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(bad(key, format!("expected true|false, got `{other}`"))),
    }
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(';')
        .map(|v| parse_num::<f64>(key, v.trim()))
        .collect()
}

fn parse_string_list(value: &str) -> Vec<String> {
    if value.is_empty() {
        Vec::new()
    } else {
        value.split(';').map(|v| v.trim().to_string()).collect()
    }
}

impl Builder {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "num_clients" => self.num_clients = parse_num(key, value)?,
            "rounds" => self.rounds = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "master_seed" => self.master_seed = parse_num(key, value)?,
            "data_seed" => self.data_seed = Some(parse_num(key, value)?),
            "threads" => self.threads = parse_num(key, value)?,
            "test_fraction" => self.test_fraction = parse_num(key, value)?,
            "pca_dim" => self.pca_dim = parse_num(key, value)?,
            "instability_window" => self.instability_window = parse_num(key, value)?,
            "aggregation.eta" => self.eta = parse_num(key, value)?,
            "aggregation.beta" => self.beta = parse_num(key, value)?,
            "aggregation.alpha" => self.alpha = parse_num(key, value)?,
            "aggregation.gamma" => self.gamma = parse_num(key, value)?,
            "aggregation.delta" => self.delta = parse_num(key, value)?,
            "aggregation.epsilon" => self.epsilon = parse_num(key, value)?,
            "channel.noise" => {
                self.flip_prob = NoiseRegime::from_name(value)?.flip_prob();
            }
            "channel.flip_prob" => self.flip_prob = parse_num(key, value)?,
            "channel.flip_prob_per_client" => {
                self.flip_prob_per_client = parse_f64_list(key, value)?;
            }
            "channel.trials_per_round" => self.trials_per_round = parse_num(key, value)?,
            "channel.latency_log_mean" => self.latency_log_mean = parse_num(key, value)?,
            "channel.latency_log_sigma" => self.latency_log_sigma = parse_num(key, value)?,
            "channel.tau_max" => self.tau_max = parse_num(key, value)?,
            "channel.s_max" => self.s_max = parse_num(key, value)?,
            "spsa.a0" => self.a0 = parse_num(key, value)?,
            "spsa.c0" => self.c0 = parse_num(key, value)?,
            "spsa.stability_offset" => self.stability_offset = parse_num(key, value)?,
            "spsa.alpha_exp" => self.alpha_exp = parse_num(key, value)?,
            "spsa.gamma_exp" => self.gamma_exp = parse_num(key, value)?,
            "spsa.steps_per_round" => self.steps_per_round = parse_num(key, value)?,
            "model.kind" => self.model_kind = value.to_string(),
            "model.num_qubits" => self.num_qubits = parse_num(key, value)?,
            "model.num_layers" => self.num_layers = parse_num(key, value)?,
            "model.readout_qubit" => self.readout_qubit = parse_num(key, value)?,
            "model.bias" => self.bias = parse_bool(key, value)?,
            "partition.scheme" => self.scheme = value.to_string(),
            "partition.min_shard" => self.min_shard = parse_num(key, value)?,
            "partition.quantity_low" => self.quantity_low = parse_num(key, value)?,
            "partition.quantity_high" => self.quantity_high = parse_num(key, value)?,
            "partition.skew_bias" => self.skew_bias = parse_num(key, value)?,
            "data.source" => self.source = value.to_string(),
            "data.csv_path" => self.csv_path = value.to_string(),
            "data.label_column" => self.label_column = value.to_string(),
            "data.positive_token" => self.positive_token = value.to_string(),
            "data.drop_tokens" => self.drop_tokens = parse_string_list(value),
            "data.synth_n" => self.synth_n = parse_num(key, value)?,
            "data.synth_dim" => self.synth_dim = parse_num(key, value)?,
            "data.synth_separation" => self.synth_separation = parse_num(key, value)?,
            unknown => {
                return Err(bad(
                    unknown,
                    "unknown config key (see the documented schema)",
                ))
            }
        }
        Ok(())
    }

    fn build(self) -> Result<ExperimentConfig> {
        let model = match self.model_kind.as_str() {
            "circuit" => ModelSpec::Circuit {
                circuit: CircuitSpec {
                    num_qubits: self.num_qubits,
                    num_layers: self.num_layers,
                    readout_qubit: self.readout_qubit,
                },
                bias: self.bias,
            },
            "logistic" => ModelSpec::Logistic,
            other => {
                return Err(bad(
                    "model.kind",
                    format!("expected circuit|logistic, got `{other}`"),
                ))
            }
        };
        let source = match self.source.as_str() {
            "synthetic" => DataSource::Synthetic {
                n: self.synth_n,
                dim: self.synth_dim,
                separation: self.synth_separation,
            },
            "csv" => DataSource::Csv {
                path: PathBuf::from(&self.csv_path),
                spec: CsvSpec {
                    label_column: self.label_column.clone(),
                    drop_tokens: self.drop_tokens.clone(),
                    positive_token: self.positive_token.clone(),
                },
            },
            other => {
                return Err(bad(
                    "data.source",
                    format!("expected synthetic|csv, got `{other}`"),
                ))
            }
        };
        let cfg = ExperimentConfig {
            num_clients: self.num_clients,
            rounds: self.rounds,
            eval_every: self.eval_every,
            master_seed: self.master_seed,
            data_seed: self.data_seed.unwrap_or(self.master_seed),
            threads: self.threads,
            test_fraction: self.test_fraction,
            pca_dim: self.pca_dim,
            instability_window: self.instability_window,
            aggregation: AggregationConfig {
                eta: self.eta,
                beta: self.beta,
                gains: QosGains {
                    alpha: self.alpha,
                    gamma: self.gamma,
                    delta: self.delta,
                    epsilon: self.epsilon,
                },
            },
            channel: ChannelConfig {
                flip_prob: self.flip_prob,
                trials_per_round: self.trials_per_round,
                latency_log_mean: self.latency_log_mean,
                latency_log_sigma: self.latency_log_sigma,
                tau_max: self.tau_max,
                s_max: self.s_max,
            },
            flip_prob_per_client: if self.flip_prob_per_client.is_empty() {
                None
            } else {
                Some(self.flip_prob_per_client.clone())
            },
            spsa: SpsaConfig {
                a0: self.a0,
                c0: self.c0,
                stability_offset: self.stability_offset,
                alpha_exp: self.alpha_exp,
                gamma_exp: self.gamma_exp,
                steps_per_round: self.steps_per_round,
            },
            model,
            partition: PartitionSpec {
                scheme: PartitionScheme::from_name(&self.scheme)?,
                num_clients: self.num_clients,
                min_shard: self.min_shard,
                quantity_range: (self.quantity_low, self.quantity_high),
                skew_bias: self.skew_bias,
            },
            source,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<Option<(String, String)>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let (key, value) = trimmed.split_once('=').ok_or_else(|| {
        bad(
            &format!("line {line_no}"),
            format!("expected key=value, got `{trimmed}`"),
        )
    })?;
    Ok(Some((key.trim().to_string(), value.trim().to_string())))
}

/// Resolve a run configuration from an optional file, dotted-path overrides
/// (applied in order after the file), and an optional seed override.
pub fn resolve(
    file: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut builder = Builder::default();
    let known: HashSet<&str> = KEYS.iter().chain(SUGAR_KEYS).copied().collect();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)?;
        for (i, line) in text.lines().enumerate() {
            if let Some((key, value)) = parse_line(line, i + 1)? {
                if !known.contains(key.as_str()) {
                    return Err(bad(&key, "unknown config key"));
                }
                builder.set(&key, &value)?;
            }
        }
    }
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| bad("override", format!("expected key=value, got `{item}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !known.contains(key) {
            return Err(bad(key, "unknown config key"));
        }
        builder.set(key, value)?;
    }
    if let Some(s) = seed {
        builder.master_seed = s;
    }
    builder.build()
}

fn join_f64_list(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Canonical text form of a resolved config: every key, in [`KEYS`] order,
/// with round-trippable float formatting. Feeding this back through
/// [`resolve`] reproduces the identical config.
pub fn canonical_text(cfg: &ExperimentConfig) -> String {
    let (model_kind, num_qubits, num_layers, readout_qubit, bias) = match &cfg.model {
        ModelSpec::Circuit { circuit, bias } => (
            "circuit",
            circuit.num_qubits,
            circuit.num_layers,
            circuit.readout_qubit,
            *bias,
        ),
        ModelSpec::Logistic => {
            let d = CircuitSpec::default();
            (
                "logistic",
                d.num_qubits,
                d.num_layers,
                d.readout_qubit,
                true,
            )
        }
    };
    let (
        source,
        csv_path,
        label_column,
        positive_token,
        drop_tokens,
        synth_n,
        synth_dim,
        synth_sep,
    ) = match &cfg.source {
        DataSource::Synthetic { n, dim, separation } => (
            "synthetic",
            String::new(),
            "diagnosis".to_string(),
            "malignant".to_string(),
            "not applicable;indefinable".to_string(),
            *n,
            *dim,
            *separation,
        ),
        DataSource::Csv { path, spec } => (
            "csv",
            path.display().to_string(),
            spec.label_column.clone(),
            spec.positive_token.clone(),
            spec.drop_tokens.join(";"),
            1000,
            4,
            4.0,
        ),
    };
    let mut out = String::new();
    let mut push = |key: &str, value: String| {
        out.push_str(key);
        out.push('=');
        out.push_str(&value);
        out.push('\n');
    };
    push("num_clients", cfg.num_clients.to_string());
    push("rounds", cfg.rounds.to_string());
    push("eval_every", cfg.eval_every.to_string());
    push("master_seed", cfg.master_seed.to_string());
    push("data_seed", cfg.data_seed.to_string());
    push("threads", cfg.threads.to_string());
    push("test_fraction", cfg.test_fraction.to_string());
    push("pca_dim", cfg.pca_dim.to_string());
    push("instability_window", cfg.instability_window.to_string());
    push("aggregation.eta", cfg.aggregation.eta.to_string());
    push("aggregation.beta", cfg.aggregation.beta.to_string());
    push("aggregation.alpha", cfg.aggregation.gains.alpha.to_string());
    push("aggregation.gamma", cfg.aggregation.gains.gamma.to_string());
    push("aggregation.delta", cfg.aggregation.gains.delta.to_string());
    push(
        "aggregation.epsilon",
        cfg.aggregation.gains.epsilon.to_string(),
    );
    push("channel.flip_prob", cfg.channel.flip_prob.to_string());
    push(
        "channel.flip_prob_per_client",
        cfg.flip_prob_per_client
            .as_deref()
            .map(join_f64_list)
            .unwrap_or_default(),
    );
    push(
        "channel.trials_per_round",
        cfg.channel.trials_per_round.to_string(),
    );
    push(
        "channel.latency_log_mean",
        cfg.channel.latency_log_mean.to_string(),
    );
    push(
        "channel.latency_log_sigma",
        cfg.channel.latency_log_sigma.to_string(),
    );
    push("channel.tau_max", cfg.channel.tau_max.to_string());
    push("channel.s_max", cfg.channel.s_max.to_string());
    push("spsa.a0", cfg.spsa.a0.to_string());
    push("spsa.c0", cfg.spsa.c0.to_string());
    push(
        "spsa.stability_offset",
        cfg.spsa.stability_offset.to_string(),
    );
    push("spsa.alpha_exp", cfg.spsa.alpha_exp.to_string());
    push("spsa.gamma_exp", cfg.spsa.gamma_exp.to_string());
    push("spsa.steps_per_round", cfg.spsa.steps_per_round.to_string());
    push("model.kind", model_kind.to_string());
    push("model.num_qubits", num_qubits.to_string());
    push("model.num_layers", num_layers.to_string());
    push("model.readout_qubit", readout_qubit.to_string());
    push("model.bias", bias.to_string());
    push("partition.scheme", cfg.partition.scheme.name().to_string());
    push("partition.min_shard", cfg.partition.min_shard.to_string());
    push(
        "partition.quantity_low",
        cfg.partition.quantity_range.0.to_string(),
    );
    push(
        "partition.quantity_high",
        cfg.partition.quantity_range.1.to_string(),
    );
    push("partition.skew_bias", cfg.partition.skew_bias.to_string());
    push("data.source", source.to_string());
    push("data.csv_path", csv_path);
    push("data.label_column", label_column);
    push("data.positive_token", positive_token);
    push("data.drop_tokens", drop_tokens);
    push("data.synth_n", synth_n.to_string());
    push("data.synth_dim", synth_dim.to_string());
    push("data.synth_separation", synth_sep.to_string());
    out
}
