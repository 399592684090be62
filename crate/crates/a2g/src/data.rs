//! Dataset handling: CSV ingestion, synthetic blobs, standardization, PCA,
//! the train/test holdout, and the federated partitioners (IID, label-skew,
//! quantity-skew).

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// A binary-labelled feature table. Rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput("dataset"));
        }
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: features.len(),
                actual: labels.len(),
            });
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::EmptyInput("feature columns"));
        }
        for row in &features {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "dataset row",
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset features"));
            }
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Config {
                path: "labels".into(),
                reason: "labels must be 0 or 1".into(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Count of (label 0, label 1) samples.
    pub fn label_counts(&self) -> (usize, usize) {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        (self.labels.len() - ones, ones)
    }

    /// Materialize the subset at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("index set"));
        }
        let features = indices.iter().map(|&i| self.features[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(features, labels)
    }
}

/// Per-feature affine map fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(train: &Dataset) -> Self {
        let n = train.len() as f64;
        let d = train.dim();
        let mut mean = vec![0.0; d];
        for row in train.features() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in train.features() {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        // Constant features get a floored std and map to zero.
        let std = var.iter().map(|v| v.sqrt().max(1e-12)).collect();
        Self { mean, std }
    }

    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "scaler transform",
                expected: self.mean.len(),
                actual: ds.dim(),
            });
        }
        let features = ds
            .features()
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((&v, &m), &s)| (v - m) / s)
                    .collect()
            })
            .collect();
        Dataset::new(features, ds.labels().to_vec())
    }
}

/// Standardize features to train-set mean 0 and std 1, applying the fitted
/// map to every dataset in `apply_to` as well.
pub fn standardize(
    train: &Dataset,
    apply_to: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, StandardScaler)> {
    let scaler = StandardScaler::fit(train);
    let train_out = scaler.transform(train)?;
    let others = apply_to
        .iter()
        .map(|ds| scaler.transform(ds))
        .collect::<Result<_>>()?;
    Ok((train_out, others, scaler))
}

/// Principal components fitted on a training set: mean vector plus a
/// d_raw × d_out matrix whose columns are unit-norm components sorted by
/// descending eigenvalue, each signed so its largest-magnitude entry is
/// positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Column j is the j-th component (length d_raw).
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn fit(train: &Dataset, d_out: usize) -> Result<Self> {
        let n = train.len();
        let d = train.dim();
        if d_out == 0 || d_out > d {
            return Err(Error::Config {
                path: "pca_dim".into(),
                reason: format!("must lie in 1..={d}, got {d_out}"),
            });
        }
        if d > n {
            return Err(Error::Config {
                path: "pca_dim".into(),
                reason: format!("needs at least as many samples ({n}) as features ({d})"),
            });
        }
        let nf = n as f64;
        let mut mean = vec![0.0; d];
        for row in train.features() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v / nf;
            }
        }
        // Sample covariance of the centered data; d is tiny (≤ ~30).
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for row in train.features() {
            for i in 0..d {
                let ci = row[i] - mean[i];
                for j in i..d {
                    let cj = row[j] - mean[j];
                    cov[(i, j)] += ci * cj / denom;
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite eigenvalues")
        });
        let mut components = Vec::with_capacity(d_out);
        let mut eigenvalues = Vec::with_capacity(d_out);
        for &idx in order.iter().take(d_out) {
            let col = eig.eigenvectors.column(idx);
            let mut comp: Vec<f64> = col.iter().copied().collect();
            // Deterministic sign: largest-magnitude entry positive.
            let lead = comp
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| {
                    a.abs()
                        .partial_cmp(&b.abs())
                        .expect("finite component")
                        .then(ib.cmp(ia))
                })
                .map(|(_, &v)| v)
                .unwrap_or(1.0);
            if lead < 0.0 {
                for c in &mut comp {
                    *c = -*c;
                }
            }
            components.push(comp);
            eigenvalues.push(eig.eigenvalues[idx].max(0.0));
        }
        Ok(Self {
            mean,
            components,
            eigenvalues,
        })
    }

    /// Project rows onto the fitted components (centering first).
    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "pca transform",
                expected: self.mean.len(),
                actual: ds.dim(),
            });
        }
        let features = ds
            .features()
            .iter()
            .map(|row| {
                self.components
                    .iter()
                    .map(|comp| {
                        row.iter()
                            .zip(&self.mean)
                            .zip(comp)
                            .map(|((&v, &m), &c)| (v - m) * c)
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Dataset::new(features, ds.labels().to_vec())
    }

    /// Lift projected rows back into the centered input space.
    pub fn lift(&self, projected: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = vec![0.0; d];
        for (comp, &z) in self.components.iter().zip(projected) {
            for (o, &c) in out.iter_mut().zip(comp) {
                *o += z * c;
            }
        }
        out
    }
}

/// Reduce to the top `d_out` principal directions of the training covariance.
pub fn pca_reduce(
    train: &Dataset,
    apply_to: &[&Dataset],
    d_out: usize,
) -> Result<(Dataset, Vec<Dataset>, PcaModel)> {
    let model = PcaModel::fit(train, d_out)?;
    let train_out = model.transform(train)?;
    let others = apply_to
        .iter()
        .map(|ds| model.transform(ds))
        .collect::<Result<_>>()?;
    Ok((train_out, others, model))
}

/// How the training set is spread across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionScheme {
    Iid,
    LabelSkew,
    QuantitySkew,
}

impl PartitionScheme {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "iid" => Ok(PartitionScheme::Iid),
            "label_skew" => Ok(PartitionScheme::LabelSkew),
            "quantity_skew" => Ok(PartitionScheme::QuantitySkew),
            other => Err(Error::Config {
                path: "partition.scheme".into(),
                reason: format!("unknown scheme `{other}` (expected iid|label_skew|quantity_skew)"),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PartitionScheme::Iid => "iid",
            PartitionScheme::LabelSkew => "label_skew",
            PartitionScheme::QuantitySkew => "quantity_skew",
        }
    }
}

/// Federated partition parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    pub min_shard: usize,
    /// Inclusive per-client size interval for quantity skew.
    pub quantity_range: (usize, usize),
    /// Fraction of a client's shard drawn from its preferred label.
    pub skew_bias: f64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config {
                path: "num_clients".into(),
                reason: "must be >= 1".into(),
            });
        }
        if self.min_shard == 0 {
            return Err(Error::Config {
                path: "partition.min_shard".into(),
                reason: "must be >= 1".into(),
            });
        }
        let (low, high) = self.quantity_range;
        if low < self.min_shard {
            return Err(Error::Config {
                path: "partition.quantity_low".into(),
                reason: format!("must be >= min_shard ({}), got {low}", self.min_shard),
            });
        }
        if high < low {
            return Err(Error::Config {
                path: "partition.quantity_high".into(),
                reason: format!("must be >= quantity_low ({low}), got {high}"),
            });
        }
        if !(0.0..=1.0).contains(&self.skew_bias) {
            return Err(Error::Config {
                path: "partition.skew_bias".into(),
                reason: format!("must lie in [0, 1], got {}", self.skew_bias),
            });
        }
        Ok(())
    }
}

/// Near-equal sizes summing exactly to n; the first n % k shards get the
/// extra sample.
fn near_equal_sizes(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let extra = n % k;
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

fn require_both_labels(ds: &Dataset, scheme: &str) -> Result<()> {
    let (n0, n1) = ds.label_counts();
    if n0 == 0 || n1 == 0 {
        let missing = if n0 == 0 { 0 } else { 1 };
        return Err(Error::Infeasible(format!(
            "{scheme} partitioning needs both labels, but label {missing} has 0 samples"
        )));
    }
    Ok(())
}

/// Split a dataset into disjoint per-client index sets.
///
/// * `iid`: shuffled near-equal shards covering every sample.
/// * `label_skew`: near-equal shards where client k draws a `skew_bias`
///   fraction from its preferred label (labels assigned round-robin) and the
///   remainder from the other; every sample is assigned, so the global label
///   histogram is preserved exactly. When the ideal per-label demand exceeds
///   a pool, the excess shifts to the other label starting from the
///   highest-index client, non-preferred allocations first.
/// * `quantity_skew`: per-client sizes drawn uniformly from the configured
///   interval, each shard mirroring the global label proportions up to
///   rounding; unassigned leftovers are discarded.
pub fn partition(
    ds: &Dataset,
    spec: &PartitionSpec,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let n = ds.len();
    let k = spec.num_clients;
    if n < k * spec.min_shard {
        return Err(Error::Infeasible(format!(
            "{n} samples cannot give {k} clients at least {} each (short by {})",
            spec.min_shard,
            k * spec.min_shard - n
        )));
    }
    match spec.scheme {
        PartitionScheme::Iid => {
            let mut indices: Vec<usize> = (0..n).collect();
            indices.shuffle(rng);
            let sizes = near_equal_sizes(n, k);
            let mut out = Vec::with_capacity(k);
            let mut cursor = 0;
            for s in sizes {
                out.push(indices[cursor..cursor + s].to_vec());
                cursor += s;
            }
            Ok(out)
        }
        PartitionScheme::LabelSkew => {
            require_both_labels(ds, "label_skew")?;
            let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for (i, &l) in ds.labels().iter().enumerate() {
                pools[l as usize].push(i);
            }
            pools[0].shuffle(rng);
            pools[1].shuffle(rng);

            let sizes = near_equal_sizes(n, k);
            // Ideal per-client counts: want[k][label].
            let mut want: Vec<[usize; 2]> = sizes
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let pref = i % 2;
                    let p = ((spec.skew_bias * s as f64).round() as usize).min(s);
                    let mut w = [0usize; 2];
                    w[pref] = p;
                    w[1 - pref] = s - p;
                    w
                })
                .collect();
            // Repair so totals match the pools exactly. Shift excess demand
            // for the over-asked label onto the other one, highest-index
            // client first, non-preferred allocations before preferred ones.
            let avail = [pools[0].len(), pools[1].len()];
            for label in 0..2 {
                let total: usize = want.iter().map(|w| w[label]).sum();
                let mut excess = total.saturating_sub(avail[label]);
                for preferred_pass in [false, true] {
                    if excess == 0 {
                        break;
                    }
                    for i in (0..k).rev() {
                        if excess == 0 {
                            break;
                        }
                        let pref = i % 2;
                        if (pref == label) != preferred_pass {
                            continue;
                        }
                        let cut = want[i][label].min(excess);
                        want[i][label] -= cut;
                        want[i][1 - label] += cut;
                        excess -= cut;
                    }
                }
            }
            let mut cursors = [0usize, 0usize];
            let mut out = Vec::with_capacity(k);
            for w in &want {
                let mut shard = Vec::with_capacity(w[0] + w[1]);
                for label in 0..2 {
                    let take = w[label];
                    shard.extend_from_slice(&pools[label][cursors[label]..cursors[label] + take]);
                    cursors[label] += take;
                }
                out.push(shard);
            }
            Ok(out)
        }
        PartitionScheme::QuantitySkew => {
            require_both_labels(ds, "quantity_skew")?;
            let (low, high) = spec.quantity_range;
            let sizes: Vec<usize> = (0..k).map(|_| rng.gen_range(low..=high)).collect();
            let total: usize = sizes.iter().sum();
            if total > n {
                return Err(Error::Infeasible(format!(
                    "quantity-skew sizes total {total} but only {n} samples exist (short by {})",
                    total - n
                )));
            }
            let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for (i, &l) in ds.labels().iter().enumerate() {
                pools[l as usize].push(i);
            }
            pools[0].shuffle(rng);
            pools[1].shuffle(rng);
            let ratio1 = pools[1].len() as f64 / n as f64;
            let mut cursors = [0usize, 0usize];
            let mut out = Vec::with_capacity(k);
            for &s in &sizes {
                let mut want1 = ((s as f64 * ratio1).round() as usize).min(s);
                let mut want0 = s - want1;
                // Pool-aware rounding repair: borrow from the other label if
                // one pool runs dry. Both fit because Σ sizes ≤ n.
                let left0 = pools[0].len() - cursors[0];
                let left1 = pools[1].len() - cursors[1];
                if want0 > left0 {
                    want1 += want0 - left0;
                    want0 = left0;
                }
                if want1 > left1 {
                    want0 += want1 - left1;
                    want1 = left1;
                }
                let mut shard = Vec::with_capacity(s);
                shard.extend_from_slice(&pools[0][cursors[0]..cursors[0] + want0]);
                shard.extend_from_slice(&pools[1][cursors[1]..cursors[1] + want1]);
                cursors[0] += want0;
                cursors[1] += want1;
                out.push(shard);
            }
            Ok(out)
        }
    }
}

/// Two isotropic unit-variance Gaussian clusters at ±(separation/2)·e₁ with
/// balanced labels, in shuffled order.
pub fn synth_blobs(n: usize, d: usize, separation: f64, rng: &mut impl Rng) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config {
            path: "data.synth_n".into(),
            reason: format!("must be >= 2, got {n}"),
        });
    }
    if d == 0 {
        return Err(Error::Config {
            path: "data.synth_dim".into(),
            reason: "must be >= 1".into(),
        });
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::Config {
            path: "data.synth_separation".into(),
            reason: format!("must be >= 0, got {separation}"),
        });
    }
    let normal = rand_distr::StandardNormal;
    let half = separation / 2.0;
    let n1 = n / 2;
    let n0 = n - n1;
    let mut rows: Vec<(Vec<f64>, u8)> = Vec::with_capacity(n);
    for label in [0u8, 1u8] {
        let count = if label == 0 { n0 } else { n1 };
        let center = if label == 0 { -half } else { half };
        for _ in 0..count {
            let mut row: Vec<f64> = (0..d)
                .map(|_| rand_distr::Distribution::sample(&normal, rng))
                .collect();
            row[0] += center;
            rows.push((row, label));
        }
    }
    rows.shuffle(rng);
    let (features, labels) = rows.into_iter().unzip();
    Dataset::new(features, labels)
}

/// Seeded proportional holdout: `test_fraction` of the rows (rounded) go to
/// the test split.
pub fn train_test_split(
    ds: &Dataset,
    test_fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::Config {
            path: "test_fraction".into(),
            reason: format!("must lie in (0, 1), got {test_fraction}"),
        });
    }
    let n = ds.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let test = ds.select(&indices[..n_test])?;
    let train = ds.select(&indices[n_test..])?;
    Ok((train, test))
}

/// CSV ingestion parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSpec {
    pub label_column: String,
    /// Rows containing any of these tokens (in any column) are dropped.
    pub drop_tokens: Vec<String>,
    /// Label-column value mapped to class 1; everything else is class 0.
    pub positive_token: String,
}

/// Load a comma-separated file with a header row. Non-numeric feature columns
/// are label-encoded by first appearance; the label column is binarized by
/// the positive token.
pub fn load_csv(path: &Path, spec: &CsvSpec) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            line: 0,
            reason: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == spec.label_column)
        .ok_or_else(|| Error::Csv {
            line: 1,
            reason: format!("label column `{}` not found in header", spec.label_column),
        })?;

    let mut kept: Vec<(usize, Vec<String>)> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Csv {
            line,
            reason: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Csv {
                line,
                reason: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let fields: Vec<String> = record.iter().map(str::to_owned).collect();
        if fields
            .iter()
            .any(|f| spec.drop_tokens.iter().any(|t| t == f))
        {
            continue;
        }
        kept.push((line, fields));
    }
    if kept.is_empty() {
        return Err(Error::Csv {
            line: 1,
            reason: "no data rows remain after filtering".into(),
        });
    }

    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_idx).collect();
    // A column is numeric iff every kept value parses as f64.
    let numeric: Vec<bool> = feature_cols
        .iter()
        .map(|&c| kept.iter().all(|(_, f)| f[c].parse::<f64>().is_ok()))
        .collect();

    let mut encoders: Vec<Vec<String>> = vec![Vec::new(); feature_cols.len()];
    let mut features = Vec::with_capacity(kept.len());
    let mut labels = Vec::with_capacity(kept.len());
    for (line, fields) in &kept {
        let mut row = Vec::with_capacity(feature_cols.len());
        for (j, &c) in feature_cols.iter().enumerate() {
            let value = &fields[c];
            if numeric[j] {
                row.push(value.parse::<f64>().map_err(|e| Error::Csv {
                    line: *line,
                    reason: format!("column `{}`: {e}", &headers[c]),
                })?);
            } else {
                let code = match encoders[j].iter().position(|v| v == value) {
                    Some(p) => p,
                    None => {
                        encoders[j].push(value.clone());
                        encoders[j].len() - 1
                    }
                };
                row.push(code as f64);
            }
        }
        features.push(row);
        labels.push(u8::from(fields[label_idx] == spec.positive_token));
    }
    Dataset::new(features, labels)
}
