//! Dataset generation: random signal settings evaluated by the simulator.
//!
//! Rows are simulated with seeds derived from `(master_seed, row index)`, so
//! the result is identical for any worker count. Splits follow
//! `val = test = ceil(n / 10)`, with rows assigned by a seeded shuffle.

use std::collections::HashSet;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microsim::{SimConfig, SimError, Simulator};
use crate::roadnet::{grid_generate, PhaseGroup, RoadNetwork};
use crate::seed::{derive_seed, derived_rng};
use crate::signalplan::{SettingError, SignalSetting};

pub const TARGET_COLUMN: &str = "total_wait_s";
pub const SPLIT_RULE: &str = "val=test=ceil(n/10), train=n-2*ceil(n/10), seeded shuffle";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("row {row}: {source}")]
    Simulation { row: usize, source: SimError },
    #[error("row {row}: {source}")]
    Setting { row: usize, source: SettingError },
    #[error("feature {index} has zero standard deviation on the training split")]
    ZeroStd { index: usize },
    #[error("dataset needs at least {min} rows, got {got}")]
    TooSmall { min: usize, got: usize },
    #[error("csv: {0}")]
    Csv(String),
    #[error("metadata: {0}")]
    Meta(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// `(n_train, n_val, n_test)` with `n_val = n_test = ceil(n / 10)`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = n.div_ceil(10);
    (n - 2 * tenth, tenth, tenth)
}

/// Seeded shuffle of row indices; the first `n_train` go to train, then val, then test.
pub fn assign_splits(n: usize, master_seed: u64) -> Vec<Split> {
    use rand::seq::SliceRandom;
    let (n_train, n_val, _) = split_sizes(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derived_rng(master_seed, "split", 0));
    let mut out = vec![Split::Test; n];
    for (rank, &row) in idx.iter().enumerate() {
        out[row] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [i64]>) -> Result<Self, DatasetError> {
        let rows: Vec<&[i64]> = rows.into_iter().collect();
        let Some(width) = rows.first().map(|r| r.len()) else {
            return Err(DatasetError::TooSmall { min: 1, got: 0 });
        };
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for r in &rows {
            for (m, &x) in mean.iter_mut().zip(r.iter()) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in &rows {
            for ((v, &x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *v += (x as f64 - m).powi(2);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        if let Some(index) = std.iter().position(|s| *s == 0.0) {
            return Err(DatasetError::ZeroStd { index });
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[i64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((&x, m), s)| (x as f64 - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((z, m), s)| z * s + m).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub k: usize,
    pub network_hash: Option<String>,
    pub sim_config: Option<SimConfig>,
    pub master_seed: u64,
    pub split_rule: String,
    pub norm_stats: NormStats,
    pub target_minmax: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub k: usize,
    /// `N x 3K` encoded settings.
    pub features: Vec<Vec<i64>>,
    pub targets: Vec<f64>,
    pub split: Vec<Split>,
    pub norm_stats: NormStats,
    /// `(min, max)` of training targets.
    pub target_minmax: (f64, f64),
    pub master_seed: u64,
    pub network_hash: Option<String>,
    pub sim_config: Option<SimConfig>,
}

impl SampleSet {
    /// Assigns splits and fits train-only statistics. Every feature row must
    /// decode to a valid setting for `k` intersections.
    pub fn from_rows(k: usize, features: Vec<Vec<i64>>, targets: Vec<f64>, master_seed: u64) -> Result<Self, DatasetError> {
        if features.len() < 10 {
            return Err(DatasetError::TooSmall { min: 10, got: features.len() });
        }
        if features.len() != targets.len() {
            return Err(DatasetError::Csv(format!("{} feature rows but {} targets", features.len(), targets.len())));
        }
        for (row, f) in features.iter().enumerate() {
            SignalSetting::decode(f, k).map_err(|source| DatasetError::Setting { row, source })?;
        }
        let split = assign_splits(features.len(), master_seed);
        let train = || features.iter().zip(&split).filter(|(_, s)| **s == Split::Train);
        let norm_stats = NormStats::fit(train().map(|(f, _)| f.as_slice()))?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (y, _) in targets.iter().zip(&split).filter(|(_, s)| **s == Split::Train) {
            lo = lo.min(*y);
            hi = hi.max(*y);
        }
        Ok(Self {
            k,
            features,
            targets,
            split,
            norm_stats,
            target_minmax: (lo, hi),
            master_seed,
            network_hash: None,
            sim_config: None,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn setting(&self, row: usize) -> SignalSetting {
        SignalSetting::decode(&self.features[row], self.k).expect("validated on construction")
    }

    /// Standardized features of the given rows, using train statistics.
    pub fn standardized(&self, rows: &[usize]) -> Vec<Vec<f64>> {
        rows.iter().map(|&r| self.norm_stats.apply(&self.features[r])).collect()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            n: self.len(),
            k: self.k,
            network_hash: self.network_hash.clone(),
            sim_config: self.sim_config.clone(),
            master_seed: self.master_seed,
            split_rule: SPLIT_RULE.to_string(),
            norm_stats: self.norm_stats.clone(),
            target_minmax: self.target_minmax,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DatasetError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        let mut header: Vec<String> = (0..3 * self.k).map(|i| format!("s_{i}")).collect();
        header.push(TARGET_COLUMN.into());
        w.write_record(&header).map_err(|e| DatasetError::Csv(e.to_string()))?;
        for (f, y) in self.features.iter().zip(&self.targets) {
            let mut rec: Vec<String> = f.iter().map(i64::to_string).collect();
            rec.push(format_target(*y));
            w.write_record(&rec).map_err(|e| DatasetError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| DatasetError::Csv(e.to_string()))
    }

    pub fn meta_json(&self) -> String {
        serde_json::to_string_pretty(&self.meta()).expect("metadata serializes")
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_target(y: f64) -> String {
    format!("{y}")
}

/// Raw CSV contents: encoded settings and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRows {
    pub k: usize,
    pub features: Vec<Vec<i64>>,
    pub targets: Vec<f64>,
}

/// Reads a dataset CSV. Feature columns are `s_0 .. s_{3K-1}` in order and
/// the target column is `total_wait_s`. External files with other names can
/// be read with [`read_csv_mapped`].
pub fn read_csv<R: Read>(input: R) -> Result<CsvRows, DatasetError> {
    read_csv_mapped(input, None, TARGET_COLUMN)
}

/// Reads a CSV with an explicit column mapping: `feature_columns` lists the
/// columns holding `gA0, gB0, off0, gA1, ...`; when `None`, every column
/// other than the target is a feature, in file order.
pub fn read_csv_mapped<R: Read>(
    input: R,
    feature_columns: Option<&[String]>,
    target_column: &str,
) -> Result<CsvRows, DatasetError> {
    let csv_err = |e: csv::Error| DatasetError::Csv(e.to_string());
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let col =
        |name: &str| header.iter().position(|h| h == name).ok_or_else(|| DatasetError::Csv(format!("missing column {name}")));
    let target_idx = col(target_column)?;
    let feat_idx: Vec<usize> = match feature_columns {
        Some(cols) => cols.iter().map(|c| col(c)).collect::<Result<_, _>>()?,
        None => (0..header.len()).filter(|&i| i != target_idx).collect(),
    };
    if feat_idx.is_empty() || !feat_idx.len().is_multiple_of(3) {
        return Err(DatasetError::Csv(format!("{} feature columns is not a multiple of 3", feat_idx.len())));
    }
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let f = feat_idx
            .iter()
            .map(|&i| {
                rec[i]
                    .trim()
                    .parse::<i64>()
                    .map_err(|_| DatasetError::Csv(format!("row {row}, column {}: {:?} is not an integer", header[i], &rec[i])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let y = rec[target_idx].trim().parse::<f64>().map_err(|_| {
            DatasetError::Csv(format!("row {row}, column {target_column}: {:?} is not a number", &rec[target_idx]))
        })?;
        features.push(f);
        targets.push(y);
    }
    Ok(CsvRows { k: feat_idx.len() / 3, features, targets })
}

/// Rebuilds a sample set from CSV rows and, when available, its sidecar
/// metadata (which fixes the master seed and therefore the split).
pub fn load_sample_set(rows: CsvRows, meta: Option<&DatasetMeta>, fallback_seed: u64) -> Result<SampleSet, DatasetError> {
    let seed = meta.map_or(fallback_seed, |m| m.master_seed);
    if let Some(m) = meta {
        if m.n != rows.targets.len() || m.k != rows.k {
            return Err(DatasetError::Meta(format!(
                "metadata describes n={}, k={} but csv has n={}, k={}",
                m.n,
                m.k,
                rows.targets.len(),
                rows.k
            )));
        }
    }
    let mut set = SampleSet::from_rows(rows.k, rows.features, rows.targets, seed)?;
    if let Some(m) = meta {
        set.network_hash = m.network_hash.clone();
        set.sim_config = m.sim_config.clone();
    }
    Ok(set)
}

/// Samples `n_samples` distinct settings and simulates each one.
pub fn generate(
    net: &RoadNetwork,
    cfg: &SimConfig,
    n_samples: usize,
    master_seed: u64,
    workers: usize,
) -> Result<SampleSet, DatasetError> {
    if n_samples < 10 {
        return Err(DatasetError::TooSmall { min: 10, got: n_samples });
    }
    let k = net.signal_count();
    let mut rng = derived_rng(master_seed, "settings", 0);
    let mut seen = HashSet::with_capacity(n_samples);
    let mut settings = Vec::with_capacity(n_samples);
    while settings.len() < n_samples {
        let s = SignalSetting::sample_with(k, &mut rng);
        if seen.insert(s.encode()) {
            settings.push(s);
        }
    }

    let sim = Simulator::new(net);
    let run_row = |(row, s): (usize, &SignalSetting)| -> Result<f64, DatasetError> {
        let row_cfg = SimConfig { rng_seed: derive_seed(master_seed, "row", row as u64), ..cfg.clone() };
        sim.run(s, &row_cfg).map(|o| o.total_wait_s as f64).map_err(|source| DatasetError::Simulation { row, source })
    };
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| DatasetError::Pool(e.to_string()))?;
    let targets: Vec<f64> = pool.install(|| settings.par_iter().enumerate().map(run_row).collect::<Result<_, _>>())?;

    let features = settings.iter().map(SignalSetting::encode).collect();
    let mut set = SampleSet::from_rows(k, features, targets, master_seed)?;
    set.network_hash = Some(net.content_hash());
    set.sim_config = Some(cfg.clone());
    Ok(set)
}

/// Per-entry arrival probabilities: `group_a` on entries feeding phase-A
/// approaches, `group_b` on those feeding phase B.
pub fn directional_demand(net: &RoadNetwork, group_a: f64, group_b: f64) -> SimConfig {
    let mut cfg = SimConfig { demand_default: 0.0, ..SimConfig::default() };
    for e in net.entries_in_group(PhaseGroup::A) {
        cfg.demand.insert(e.to_string(), group_a);
    }
    for e in net.entries_in_group(PhaseGroup::B) {
        cfg.demand.insert(e.to_string(), group_b);
    }
    cfg
}

/// The desk-scale scenario: a 3x3 grid of 40-cell (300 m) segments with
/// heavy north-south and light east-west arrivals over a 600 s horizon.
pub fn desk_scenario() -> (RoadNetwork, SimConfig) {
    let net = grid_generate(3, 3, 40).expect("fixed valid grid");
    let cfg = directional_demand(&net, 0.5, 0.05);
    (net, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::grid_generate;
    use proptest::prelude::*;

    fn small() -> (RoadNetwork, SimConfig) {
        let net = grid_generate(2, 2, 6).unwrap();
        let cfg = SimConfig { duration_s: 200, demand_default: 0.2, ..SimConfig::default() };
        (net, cfg)
    }

    #[test]
    fn split_matches_reference_partition() {
        assert_eq!(split_sizes(1_470_972), (1_176_776, 147_098, 147_098));
        assert_eq!(split_sizes(10), (8, 1, 1));
    }

    proptest! {
        #[test]
        fn split_parts_sum(n in 10usize..5_000_000) {
            let (a, b, c) = split_sizes(n);
            prop_assert_eq!(a + b + c, n);
            prop_assert_eq!(b, c);
        }
    }

    #[test]
    fn split_assignment_is_partition_and_seeded() {
        let s = assign_splits(101, 5);
        let count = |x| s.iter().filter(|v| **v == x).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), split_sizes(101));
        assert_eq!(s, assign_splits(101, 5));
        assert_ne!(s, assign_splits(101, 6));
    }

    #[test]
    fn generation_independent_of_workers() {
        let (net, cfg) = small();
        let a = generate(&net, &cfg, 40, 9, 1).unwrap();
        let b = generate(&net, &cfg, 40, 9, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.targets.iter().all(|y| *y > 0.0));
        let unique: HashSet<_> = a.features.iter().collect();
        assert_eq!(unique.len(), 40);
    }

    #[test]
    fn standardization_uses_train_rows() {
        let (net, cfg) = small();
        let set = generate(&net, &cfg, 60, 3, 2).unwrap();
        let train = set.indices(Split::Train);
        let z = set.standardized(&train);
        for j in 0..3 * set.k {
            let col: Vec<f64> = z.iter().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
        for (r, zr) in train.iter().zip(&z) {
            let back = set.norm_stats.invert(zr);
            for (a, b) in back.iter().zip(&set.features[*r]) {
                assert!((a - *b as f64).abs() < 1e-9);
            }
        }
        let train_rows: Vec<&[i64]> = train.iter().map(|&r| set.features[r].as_slice()).collect();
        assert_eq!(NormStats::fit(train_rows).unwrap(), set.norm_stats);
    }

    #[test]
    fn constant_column_is_rejected() {
        let rows: Vec<Vec<i64>> = (0..20).map(|i| vec![20 + i, 30, 5]).collect();
        let err = NormStats::fit(rows.iter().map(|r| r.as_slice())).unwrap_err();
        assert!(matches!(err, DatasetError::ZeroStd { index: 1 }));
    }

    #[test]
    fn csv_round_trip_with_metadata() {
        let (net, cfg) = small();
        let mut set = generate(&net, &cfg, 30, 4, 1).unwrap();
        set.targets[0] = 1234.567890123456;
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("s_0,s_1,s_2,"));
        assert!(!text.contains('\r'));
        let meta: DatasetMeta = serde_json::from_str(&set.meta_json()).unwrap();
        let back = load_sample_set(read_csv(buf.as_slice()).unwrap(), Some(&meta), 0).unwrap();
        assert_eq!(back.features, set.features);
        assert_eq!(back.targets, set.targets);
        assert_eq!(back.split, set.split);
    }

    #[test]
    fn mapped_external_csv() {
        let text = "wait,a0,b0,o0,x\n100.5,20,30,4,9\n";
        let cols: Vec<String> = ["a0", "b0", "o0"].iter().map(|s| s.to_string()).collect();
        let rows = read_csv_mapped(text.as_bytes(), Some(&cols), "wait").unwrap();
        assert_eq!(rows.features, vec![vec![20, 30, 4]]);
        assert_eq!(rows.targets, vec![100.5]);
        let bad = "s_0,s_1,s_2,total_wait_s\n20,x,3,4\n";
        let err = read_csv(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 0") && err.contains("s_1"), "{err}");
    }

    #[test]
    fn invalid_rows_are_rejected() {
        let rows: Vec<Vec<i64>> = (0..10).map(|i| vec![20 + i, 30, 60]).collect();
        let err = SampleSet::from_rows(1, rows, vec![1.0; 10], 0).unwrap_err();
        assert!(matches!(err, DatasetError::Setting { row: 0, .. }), "{err}");
    }
}
