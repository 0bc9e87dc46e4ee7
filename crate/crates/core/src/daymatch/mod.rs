//! Day-level matching of real and synthetic profiles: days are embedded
//! in 2-D, paired one-to-one by minimum total distance, and the pair
//! distances are summarized.

mod hungarian;

pub use hungarian::{hungarian, Assignment};

use crate::dataset::{is_missing, midnight, LoadProfile, SLOTS_PER_DAY};
use crate::fsutil::write_atomic;
use crate::rng::seeded;
use crate::typing::{pca_fit, PcaBasis, TypingError};
use chrono::NaiveDate;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_MAX_MATCH_N: usize = 2000;
pub const MATCHING_FILES: [&str; 2] = ["matching.csv", "matching_stats.csv"];

#[derive(Debug, Error, PartialEq)]
pub enum DayMatchError {
    #[error("embedding file has no coordinates for {0}")]
    KeyMismatch(String),
    #[error("non-finite cost at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },
    #[error("cost matrix rows have different lengths")]
    Ragged,
    #[error("no complete days to match")]
    EmptyInput,
    #[error("embedding: {0}")]
    Embedding(#[from] TypingError),
    #[error("embedding file: {0}")]
    Import(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DayKey {
    pub sensor_id: String,
    pub date: NaiveDate,
}

/// Complete calendar days of a profile set, in profile then date order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DaySet {
    pub keys: Vec<DayKey>,
    pub days: Vec<Vec<f64>>,
}

impl DaySet {
    pub fn from_profiles(profiles: &[LoadProfile]) -> Self {
        let mut set = DaySet::default();
        for p in profiles {
            let first = p.start.date_naive();
            let mut date = if p.start == midnight(first) {
                first
            } else {
                first.succ_opt().unwrap()
            };
            while let Some(i0) = p.index_of(midnight(date)) {
                let Some(day) = p.values.get(i0..i0 + SLOTS_PER_DAY) else {
                    break;
                };
                if day.iter().all(|v| !is_missing(*v)) {
                    set.keys.push(DayKey {
                        sensor_id: p.sensor_id.clone(),
                        date,
                    });
                    set.days.push(day.to_vec());
                }
                date = date.succ_opt().unwrap();
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// The days at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> DaySet {
        DaySet {
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            days: idx.iter().map(|&i| self.days[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    InternalPca,
    ExternalImport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub source: EmbeddingSource,
    pub note: String,
}

/// Two-component PCA fitted on a reference day set.
pub fn fit_day_pca(days: &[Vec<f64>]) -> Result<PcaBasis, DayMatchError> {
    Ok(pca_fit(days, 2)?)
}

pub fn embed_with(basis: &PcaBasis, days: &[Vec<f64>]) -> Embedding2D {
    Embedding2D {
        points: days
            .par_iter()
            .map(|d| {
                let s = basis.project(d);
                [s[0], s[1]]
            })
            .collect(),
        source: EmbeddingSource::InternalPca,
        note: "2-component PCA of 96-slot day vectors".to_string(),
    }
}

/// PCA embedding of a day set fitted on itself.
pub fn embed_days(days: &[Vec<f64>]) -> Result<Embedding2D, DayMatchError> {
    Ok(embed_with(&fit_day_pca(days)?, days))
}

/// Reads `sensor_id,date,x,y` rows and returns coordinates for `keys` in order.
pub fn import_embedding(csv_text: &str, keys: &[DayKey]) -> Result<Embedding2D, DayMatchError> {
    let mut map: HashMap<DayKey, [f64; 2]> = HashMap::new();
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    for rec in rdr.deserialize::<(String, NaiveDate, f64, f64)>() {
        let (sensor_id, date, x, y) = rec.map_err(|e| DayMatchError::Import(e.to_string()))?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(DayMatchError::Import(format!(
                "non-finite coordinates for {sensor_id} {date}"
            )));
        }
        map.insert(DayKey { sensor_id, date }, [x, y]);
    }
    let points = keys
        .iter()
        .map(|k| {
            map.get(k)
                .copied()
                .ok_or_else(|| DayMatchError::KeyMismatch(format!("{} {}", k.sensor_id, k.date)))
        })
        .collect::<Result<_, _>>()?;
    Ok(Embedding2D {
        points,
        source: EmbeddingSource::ExternalImport,
        note: "imported coordinates".to_string(),
    })
}

/// Sorted uniform subsample of `max` indices out of `n` (all when `n <= max`).
pub fn subsample(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut idx = sample(&mut seeded(seed), n, max).into_vec();
    idx.sort_unstable();
    idx
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingResult {
    /// `(real index, synthetic index)` per matched pair, by real index.
    pub pairs: Vec<(usize, usize)>,
    pub distances: Vec<f64>,
}

/// One-to-one matching minimizing the summed Euclidean distance.
pub fn match_points(real: &[Vec<f64>], synth: &[Vec<f64>]) -> Result<MatchingResult, DayMatchError> {
    if real.is_empty() || synth.is_empty() {
        return Err(DayMatchError::EmptyInput);
    }
    let cost: Vec<Vec<f64>> = real
        .par_iter()
        .map(|r| synth.iter().map(|s| euclid(r, s)).collect())
        .collect();
    let a = hungarian(&cost)?;
    let distances = a.pairs.iter().map(|&(i, j)| cost[i][j]).collect();
    Ok(MatchingResult {
        pairs: a.pairs,
        distances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchStats {
    pub sum: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

pub fn match_stats(result: &MatchingResult) -> Option<MatchStats> {
    let mut d = result.distances.clone();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let sum: f64 = d.iter().sum();
    Some(MatchStats {
        sum,
        mean: sum / n as f64,
        min: d[0],
        max: d[n - 1],
        median: if n % 2 == 1 {
            d[n / 2]
        } else {
            0.5 * (d[n / 2 - 1] + d[n / 2])
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Per-side cap; larger day sets are subsampled.
    pub max_match_n: usize,
    /// Match in the 96-dimensional day space instead of the embedding.
    pub raw_space: bool,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            max_match_n: DEFAULT_MAX_MATCH_N,
            raw_space: false,
            seed: 0,
        }
    }
}

/// Matched day pairs of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatching {
    pub model: String,
    pub pairs: Vec<(DayKey, DayKey, f64)>,
    pub stats: MatchStats,
}

/// Embeds (unless matching in raw space), subsamples both sides with
/// seeds derived from `cfg.seed` and matches. `embed` maps a day set to
/// its points; `None` uses the raw day vectors.
pub fn match_model(
    model: &str,
    real: &DaySet,
    synth: &DaySet,
    embed: Option<&dyn Fn(&DaySet) -> Result<Embedding2D, DayMatchError>>,
    cfg: &MatchConfig,
) -> Result<ModelMatching, DayMatchError> {
    let r = real.select(&subsample(
        real.len(),
        cfg.max_match_n,
        crate::rng::derive_seed(cfg.seed, 30, 0),
    ));
    let s = synth.select(&subsample(
        synth.len(),
        cfg.max_match_n,
        crate::rng::derive_seed(cfg.seed, 31, 0),
    ));
    let points = |set: &DaySet| -> Result<Vec<Vec<f64>>, DayMatchError> {
        match embed {
            Some(f) if !cfg.raw_space => Ok(f(set)?.points.iter().map(|p| p.to_vec()).collect()),
            _ => Ok(set.days.clone()),
        }
    };
    let res = match_points(&points(&r)?, &points(&s)?)?;
    let stats = match_stats(&res).ok_or(DayMatchError::EmptyInput)?;
    Ok(ModelMatching {
        model: model.to_string(),
        pairs: res
            .pairs
            .iter()
            .zip(&res.distances)
            .map(|(&(i, j), &d)| (r.keys[i].clone(), s.keys[j].clone(), d))
            .collect(),
        stats,
    })
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> std::io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))
}

/// Writes `matching.csv` (all pairs) and `matching_stats.csv` (one row
/// per model: sum, avg, min, max, median).
pub fn write_matchings(dir: &Path, results: &[ModelMatching]) -> std::io::Result<()> {
    let mut pairs = Vec::new();
    for m in results {
        for (r, s, d) in &m.pairs {
            pairs.push(vec![
                m.model.clone(),
                r.sensor_id.clone(),
                r.date.to_string(),
                s.sensor_id.clone(),
                s.date.to_string(),
                format!("{d}"),
            ]);
        }
    }
    let header = [
        "model",
        "real_sensor_id",
        "real_date",
        "synth_sensor_id",
        "synth_date",
        "distance",
    ];
    write_atomic(&dir.join("matching.csv"), &csv_bytes(&header, pairs)?)?;
    let stats = results
        .iter()
        .map(|m| {
            let s = m.stats;
            vec![
                m.model.clone(),
                m.pairs.len().to_string(),
                format!("{}", s.sum),
                format!("{}", s.mean),
                format!("{}", s.min),
                format!("{}", s.max),
                format!("{}", s.median),
            ]
        })
        .collect();
    let header = ["model", "n_pairs", "sum", "avg", "min", "max", "median"];
    write_atomic(&dir.join("matching_stats.csv"), &csv_bytes(&header, stats)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::profile;

    fn wave_days(n: usize, phase: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| {
                (0..96)
                    .map(|i| (k as f64 * 0.3 + phase) * (1.0 + (i as f64 / 15.0).sin()))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn rank_one_days_embed_on_a_line() {
        let e = embed_days(&wave_days(30, 0.1)).unwrap();
        let ys: Vec<f64> = e.points.iter().map(|p| p[1]).collect();
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / ys.len() as f64;
        assert!(var < 1e-9);
        assert_eq!(e, embed_days(&wave_days(30, 0.1)).unwrap());
    }

    #[test]
    fn import_requires_every_key() {
        let keys = vec![
            DayKey {
                sensor_id: "a".into(),
                date: NaiveDate::from_ymd_opt(2023, 1, 2).unwrap(),
            },
            DayKey {
                sensor_id: "b".into(),
                date: NaiveDate::from_ymd_opt(2023, 1, 2).unwrap(),
            },
        ];
        let text = "sensor_id,date,x,y\na,2023-01-02,1.5,-2\nb,2023-01-02,0,3\n";
        let e = import_embedding(text, &keys).unwrap();
        assert_eq!(e.points, vec![[1.5, -2.0], [0.0, 3.0]]);
        assert_eq!(e.source, EmbeddingSource::ExternalImport);
        let partial = "sensor_id,date,x,y\na,2023-01-02,1.5,-2\n";
        assert_eq!(
            import_embedding(partial, &keys),
            Err(DayMatchError::KeyMismatch("b 2023-01-02".into()))
        );
    }

    #[test]
    fn identical_sets_match_at_zero() {
        let d = wave_days(12, 0.0);
        let res = match_points(&d, &d).unwrap();
        assert!(res.distances.iter().all(|x| *x == 0.0));
        let s = match_stats(&res).unwrap();
        assert_eq!((s.sum, s.max), (0.0, 0.0));
    }

    #[test]
    fn single_pair_stats() {
        let res = MatchingResult {
            pairs: vec![(0, 0)],
            distances: vec![2.5],
        };
        let s = match_stats(&res).unwrap();
        assert_eq!((s.sum, s.mean, s.min, s.max, s.median), (2.5, 2.5, 2.5, 2.5, 2.5));
        assert_eq!(
            match_stats(&MatchingResult {
                pairs: vec![],
                distances: vec![]
            }),
            None
        );
    }

    #[test]
    fn subsampling_is_seeded() {
        assert_eq!(subsample(10, 20, 1), (0..10).collect::<Vec<_>>());
        let a = subsample(1000, 50, 7);
        assert_eq!(a.len(), 50);
        assert_eq!(a, subsample(1000, 50, 7));
        assert_ne!(a, subsample(1000, 50, 8));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn day_sets_skip_partial_and_gappy_days() {
        let mut v = vec![1.0; 96 * 4];
        v[96 * 2 + 5] = f64::NAN;
        // starts at noon: the first partial day is skipped
        let p = profile("p", "2023-01-01T12:00:00Z", v);
        let ds = DaySet::from_profiles(&[p]);
        let dates: Vec<String> = ds.keys.iter().map(|k| k.date.to_string()).collect();
        assert_eq!(dates, vec!["2023-01-02", "2023-01-04"]);
    }

    #[test]
    fn model_matching_writes_tables() {
        let real = DaySet::from_profiles(&[profile("r", "2023-01-02T00:00:00Z", wave_days(6, 0.0).concat())]);
        let synth = DaySet::from_profiles(&[profile("hmm:r", "2023-01-02T00:00:00Z", wave_days(6, 0.05).concat())]);
        let basis = fit_day_pca(&real.days).unwrap();
        let embed = |s: &DaySet| Ok(embed_with(&basis, &s.days));
        let cfg = MatchConfig {
            max_match_n: 4,
            ..Default::default()
        };
        let m = match_model("hmm", &real, &synth, Some(&embed), &cfg).unwrap();
        assert_eq!(m.pairs.len(), 4);
        let dir = tempfile::tempdir().unwrap();
        write_matchings(dir.path(), &[m]).unwrap();
        let stats = std::fs::read_to_string(dir.path().join("matching_stats.csv")).unwrap();
        assert!(stats.starts_with("model,n_pairs,sum,avg,min,max,median\nhmm,4,"));
    }
}
