use super::correlation::{correlation_matrix, index_from_matrix, vote_histogram};
use super::features::{extract_features, FeatureManifest, ZScaler};
use super::hmm_hist::hmm_state_histogram;
use super::metrics::{
    cosine_similarity, dynamic_range, mmd2, pointwise_metrics, ssim, ssim_constants, Bandwidth, SeriesPair,
};
use super::qq::{pool_quantiles, qq_levels};
use super::stats::{bonferroni, mann_whitney_u, mean_std, significance_label, simple_stats, SIMPLE_STAT_NAMES};
use super::EvalError;
use crate::dataset::{is_missing, LoadProfile, SLOTS_PER_DAY, SLOT_SECONDS};
use crate::fsutil::{write_atomic, write_json_atomic};
use crate::hmm::BaumWelchConfig;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Column label of the real profiles in the report tables.
pub const REAL_LABEL: &str = "real";
pub const METRIC_NAMES: [&str; 7] = ["mae", "mape", "rmse", "pearson", "ssim", "mmd2", "cosine"];
pub const REPORT_FILES: [&str; 8] = [
    "metrics_per_pair.csv",
    "metrics_aggregate.csv",
    "simple_stats.csv",
    "corr_index.csv",
    "cluster_vote.csv",
    "qq.csv",
    "features.manifest.json",
    "report.json",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Keep zero-load slots in the MAPE with this denominator floor.
    pub mape_keep_eps: Option<f64>,
    pub ssim_window: usize,
    pub ssim_stride: usize,
    pub mmd_bandwidth: Bandwidth,
    /// Number of most-correlated real profiles in the cluster vote.
    pub top_k: usize,
    pub n_quantiles: usize,
    /// Fit per-profile HMMs and report their state occupancy.
    pub hmm_histogram: Option<BaumWelchConfig>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mape_keep_eps: None,
            ssim_window: SLOTS_PER_DAY,
            ssim_stride: SLOTS_PER_DAY,
            mmd_bandwidth: Bandwidth::Median,
            top_k: 10,
            n_quantiles: 1000,
            hmm_histogram: None,
        }
    }
}

/// One surrogate set; `pairing[i]` is the real index paired with `profiles[i]`.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub name: String,
    pub profiles: Vec<LoadProfile>,
    pub pairing: Vec<usize>,
}

impl ModelSet {
    /// Pairs each synthetic profile with the real profile whose id equals
    /// the synthetic id, or the part after its first `:`.
    pub fn paired_by_id(name: &str, profiles: Vec<LoadProfile>, real: &[LoadProfile]) -> Result<Self, EvalError> {
        let index: BTreeMap<&str, usize> = real
            .iter()
            .enumerate()
            .map(|(i, p)| (p.sensor_id.as_str(), i))
            .collect();
        let pairing = profiles
            .iter()
            .map(|p| {
                let id = p.sensor_id.as_str();
                index
                    .get(id)
                    .or_else(|| id.split_once(':').and_then(|(_, rest)| index.get(rest)))
                    .copied()
                    .ok_or_else(|| EvalError::Unpaired(p.sensor_id.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(ModelSet {
            name: name.to_string(),
            profiles,
            pairing,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairMetrics {
    pub model: String,
    pub real_id: String,
    pub synth_id: String,
    /// Jointly present slots.
    pub n: usize,
    pub mae: f64,
    pub mape: Option<f64>,
    pub mape_skipped: usize,
    pub rmse: f64,
    pub pearson: Option<f64>,
    pub ssim: Option<f64>,
    pub mmd2: Option<f64>,
    pub cosine: Option<f64>,
}

impl PairMetrics {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "mae" => Some(self.mae),
            "mape" => self.mape,
            "rmse" => Some(self.rmse),
            "pearson" => self.pearson,
            "ssim" => self.ssim,
            "mmd2" => self.mmd2,
            "cosine" => self.cosine,
            _ => None,
        }
    }
}

fn complete_days(v: &[f64]) -> impl Iterator<Item = Vec<f64>> + '_ {
    v.chunks_exact(SLOTS_PER_DAY)
        .filter(|d| d.iter().all(|x| !is_missing(*x)))
        .map(<[f64]>::to_vec)
}

/// All metrics for one real/synthetic pair over their common time span.
/// MMD compares the sets of complete calendar days of the two series.
pub fn pair_metrics(real: &LoadProfile, synth: &LoadProfile, opts: &EvalOptions) -> Result<PairMetrics, EvalError> {
    let no_overlap = || EvalError::NoOverlap(real.sensor_id.clone(), synth.sensor_id.clone());
    let off_secs = (synth.start - real.start).num_seconds();
    if off_secs % SLOT_SECONDS != 0 {
        return Err(no_overlap());
    }
    let off = off_secs / SLOT_SECONDS;
    let i0 = off.max(0);
    let i1 = (real.len() as i64).min(off + synth.len() as i64);
    if i1 <= i0 {
        return Err(no_overlap());
    }
    let y = &real.values[i0 as usize..i1 as usize];
    let y_hat = &synth.values[(i0 - off) as usize..(i1 - off) as usize];
    let pair = SeriesPair::new(y, y_hat)?;
    let pm = pointwise_metrics(&pair, opts.mape_keep_eps);
    let (c1, c2) = ssim_constants(dynamic_range(&pair.y));
    let ssim_v = ssim(&pair.y, &pair.y_hat, opts.ssim_window, opts.ssim_stride, c1, c2).ok();

    let first_slot = (real.start.timestamp() + SLOT_SECONDS * i0).rem_euclid(86_400) / SLOT_SECONDS;
    let skip = ((SLOTS_PER_DAY as i64 - first_slot) % SLOTS_PER_DAY as i64) as usize;
    let skip = skip.min(y.len());
    let xd: Vec<Vec<f64>> = complete_days(&y[skip..]).collect();
    let yd: Vec<Vec<f64>> = complete_days(&y_hat[skip..]).collect();
    let mmd = mmd2(&xd, &yd, opts.mmd_bandwidth).ok();

    Ok(PairMetrics {
        model: String::new(),
        real_id: real.sensor_id.clone(),
        synth_id: synth.sensor_id.clone(),
        n: pair.len(),
        mae: pm.mae,
        mape: pm.mape,
        mape_skipped: pm.mape_skipped,
        rmse: pm.rmse,
        pearson: pm.pearson,
        ssim: ssim_v,
        mmd2: mmd,
        cosine: cosine_similarity(&pair.y, &pair.y_hat),
    })
}

/// Mean and sample std of one metric per model (`None` if no pair defines it).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub metric: String,
    pub values: Vec<Option<(f64, f64)>>,
    /// Pairs where the metric was undefined, per model.
    pub undefined: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimpleStatsTable {
    /// `real` followed by the model names.
    pub columns: Vec<String>,
    /// Per statistic: per column (mean, std) over profiles.
    pub rows: Vec<(String, Vec<(f64, f64)>)>,
    /// Bonferroni-adjusted Mann-Whitney p-value of the per-profile means
    /// against the real set, per model.
    pub p_adjusted: Vec<f64>,
    pub significance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCorr {
    pub model: String,
    pub synth_ids: Vec<String>,
    pub real_ids: Vec<String>,
    pub ranks: Vec<usize>,
    pub map: f64,
    /// Winning cluster counts of the top-K vote.
    pub votes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub models: Vec<String>,
    pub n_real: usize,
    pub pairs: Vec<PairMetrics>,
    pub aggregate: Vec<AggregateRow>,
    pub simple_stats: SimpleStatsTable,
    pub correlation: Vec<ModelCorr>,
    pub real_cluster_histogram: Vec<usize>,
    #[serde(skip)]
    pub qq_levels: Vec<f64>,
    /// Quantiles of the real pool followed by each model's pool.
    #[serde(skip)]
    pub qq: Vec<Vec<f64>>,
    #[serde(skip)]
    pub manifest: FeatureManifest,
    pub hmm_histograms: Option<BTreeMap<String, Vec<f64>>>,
}

fn pooled(profiles: &[LoadProfile]) -> Vec<f64> {
    profiles.iter().flat_map(|p| p.present_values()).collect()
}

/// Scores every model set against the real profiles. `real_clusters[i]`
/// is the consumer type of `real[i]` out of `n_clusters`.
pub fn evaluate(
    real: &[LoadProfile],
    real_clusters: &[usize],
    n_clusters: usize,
    models: &[ModelSet],
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    if real.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    let names: Vec<String> = models.iter().map(|m| m.name.clone()).collect();

    let jobs: Vec<(usize, usize)> = models
        .iter()
        .enumerate()
        .flat_map(|(mi, m)| (0..m.profiles.len()).map(move |si| (mi, si)))
        .collect();
    let pairs: Vec<PairMetrics> = jobs
        .par_iter()
        .map(|&(mi, si)| {
            let m = &models[mi];
            let mut pm = pair_metrics(&real[m.pairing[si]], &m.profiles[si], opts)?;
            pm.model = m.name.clone();
            Ok(pm)
        })
        .collect::<Result<_, EvalError>>()?;

    let aggregate = METRIC_NAMES
        .iter()
        .map(|&metric| {
            let mut values = Vec::new();
            let mut undefined = Vec::new();
            for name in &names {
                let rows: Vec<&PairMetrics> = pairs.iter().filter(|p| &p.model == name).collect();
                let v: Vec<f64> = rows.iter().filter_map(|p| p.metric(metric)).collect();
                undefined.push(rows.len() - v.len());
                values.push((!v.is_empty()).then(|| mean_std(&v)));
            }
            AggregateRow {
                metric: metric.to_string(),
                values,
                undefined,
            }
        })
        .collect();

    // simple statistics per profile, summarized per set
    let per_set: Vec<Vec<super::SimpleStats>> = std::iter::once(real)
        .chain(models.iter().map(|m| m.profiles.as_slice()))
        .map(|set| set.iter().filter_map(|p| simple_stats(&p.values)).collect())
        .collect();
    let rows = SIMPLE_STAT_NAMES
        .iter()
        .map(|&s| {
            let cols = per_set
                .iter()
                .map(|set| {
                    let v: Vec<f64> = set.iter().filter_map(|st| st.get(s)).collect();
                    if v.is_empty() {
                        (f64::NAN, f64::NAN)
                    } else {
                        mean_std(&v)
                    }
                })
                .collect();
            (s.to_string(), cols)
        })
        .collect();
    let real_means: Vec<f64> = per_set[0].iter().map(|s| s.mean).collect();
    let p_adjusted: Vec<f64> = per_set[1..]
        .iter()
        .map(|set| {
            let m: Vec<f64> = set.iter().map(|s| s.mean).collect();
            bonferroni(mann_whitney_u(&real_means, &m).p, models.len())
        })
        .collect();
    let simple = SimpleStatsTable {
        columns: std::iter::once(REAL_LABEL.to_string())
            .chain(names.iter().cloned())
            .collect(),
        rows,
        significance: p_adjusted.iter().map(|p| significance_label(*p).to_string()).collect(),
        p_adjusted,
    };

    // features, z-scored with the real population's statistics
    let mut manifest = FeatureManifest::new();
    let extract = |set: &[LoadProfile]| -> Vec<super::FeatureVector> { set.par_iter().map(extract_features).collect() };
    let real_fv = extract(real);
    for (p, fv) in real.iter().zip(&real_fv) {
        manifest.imputed.insert(p.sensor_id.clone(), fv.imputed.clone());
    }
    let real_raw: Vec<Vec<f64>> = real_fv.into_iter().map(|f| f.values).collect();
    let z = ZScaler::fit(&real_raw);
    let real_z: Vec<Vec<f64>> = real_raw.iter().map(|r| z.apply(r)).collect();
    let mut correlation = Vec::new();
    for m in models {
        let fv = extract(&m.profiles);
        for (p, f) in m.profiles.iter().zip(&fv) {
            manifest.imputed.insert(p.sensor_id.clone(), f.imputed.clone());
        }
        let synth_z: Vec<Vec<f64>> = fv.iter().map(|f| z.apply(&f.values)).collect();
        let corr = correlation_matrix(&synth_z, &real_z)?;
        let ci = index_from_matrix(&corr, &m.pairing);
        correlation.push(ModelCorr {
            model: m.name.clone(),
            synth_ids: m.profiles.iter().map(|p| p.sensor_id.clone()).collect(),
            real_ids: m.pairing.iter().map(|&j| real[j].sensor_id.clone()).collect(),
            ranks: ci.ranks,
            map: ci.map,
            votes: vote_histogram(&corr, real_clusters, opts.top_k, n_clusters),
        });
    }
    let mut real_hist = vec![0usize; n_clusters];
    for &c in real_clusters {
        if c < n_clusters {
            real_hist[c] += 1;
        }
    }

    let mut qq = vec![pool_quantiles(&pooled(real), opts.n_quantiles)?];
    for m in models {
        qq.push(pool_quantiles(&pooled(&m.profiles), opts.n_quantiles)?);
    }

    let hmm_histograms = match &opts.hmm_histogram {
        None => None,
        Some(cfg) => {
            let all: Vec<&LoadProfile> = real.iter().chain(models.iter().flat_map(|m| &m.profiles)).collect();
            let hists: Vec<(String, Vec<f64>)> = all
                .par_iter()
                .map(|p| (p.sensor_id.clone(), hmm_state_histogram(p, cfg).unwrap_or_default()))
                .collect();
            Some(hists.into_iter().collect())
        }
    };

    Ok(EvalReport {
        options: opts.clone(),
        models: names,
        n_real: real.len(),
        pairs,
        aggregate,
        simple_stats: simple,
        correlation,
        real_cluster_histogram: real_hist,
        qq_levels: qq_levels(opts.n_quantiles),
        qq,
        manifest,
        hmm_histograms,
    })
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> std::io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))
}

impl EvalReport {
    pub fn per_pair_csv(&self) -> std::io::Result<Vec<u8>> {
        let header = [
            "model",
            "real_id",
            "synth_id",
            "n",
            "mae",
            "mape",
            "mape_skipped",
            "rmse",
            "pearson",
            "ssim",
            "mmd2",
            "cosine",
        ];
        let rows = self
            .pairs
            .iter()
            .map(|p| {
                vec![
                    p.model.clone(),
                    p.real_id.clone(),
                    p.synth_id.clone(),
                    p.n.to_string(),
                    num(p.mae),
                    opt(p.mape),
                    p.mape_skipped.to_string(),
                    num(p.rmse),
                    opt(p.pearson),
                    opt(p.ssim),
                    opt(p.mmd2),
                    opt(p.cosine),
                ]
            })
            .collect();
        csv_bytes(header.iter().map(|s| s.to_string()).collect(), rows)
    }

    /// Metrics as rows, `<model>_mean` and `<model>_std` columns.
    pub fn aggregate_csv(&self) -> std::io::Result<Vec<u8>> {
        let mut header = vec!["metric".to_string()];
        for m in &self.models {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        let rows = self
            .aggregate
            .iter()
            .map(|a| {
                let mut r = vec![a.metric.clone()];
                for v in &a.values {
                    r.push(opt(v.map(|x| x.0)));
                    r.push(opt(v.map(|x| x.1)));
                }
                r
            })
            .collect();
        csv_bytes(header, rows)
    }

    /// Statistics as rows with the real set first, preceded by the adjusted
    /// p-value and significance label of each model.
    pub fn simple_stats_csv(&self) -> std::io::Result<Vec<u8>> {
        let t = &self.simple_stats;
        let mut header = vec!["stat".to_string()];
        for c in &t.columns {
            header.push(format!("{c}_mean"));
            header.push(format!("{c}_std"));
        }
        let mut rows = Vec::new();
        let mut p_row = vec!["p_adjusted".to_string(), String::new(), String::new()];
        let mut sig_row = vec!["sig".to_string(), String::new(), String::new()];
        for (p, s) in t.p_adjusted.iter().zip(&t.significance) {
            p_row.extend([num(*p), String::new()]);
            sig_row.extend([s.clone(), String::new()]);
        }
        rows.push(sig_row);
        rows.push(p_row);
        for (stat, cols) in &t.rows {
            let mut r = vec![stat.clone()];
            for (m, s) in cols {
                r.push(num(*m));
                r.push(num(*s));
            }
            rows.push(r);
        }
        csv_bytes(header, rows)
    }

    pub fn corr_index_csv(&self) -> std::io::Result<Vec<u8>> {
        let header = ["model", "synth_id", "real_id", "rank", "reciprocal_rank"];
        let mut rows = Vec::new();
        for c in &self.correlation {
            for ((s, r), k) in c.synth_ids.iter().zip(&c.real_ids).zip(&c.ranks) {
                rows.push(vec![
                    c.model.clone(),
                    s.clone(),
                    r.clone(),
                    k.to_string(),
                    num(1.0 / *k as f64),
                ]);
            }
        }
        csv_bytes(header.iter().map(|s| s.to_string()).collect(), rows)
    }

    pub fn cluster_vote_csv(&self) -> std::io::Result<Vec<u8>> {
        let mut header = vec!["cluster".to_string(), REAL_LABEL.to_string()];
        header.extend(self.models.iter().cloned());
        let rows = (0..self.real_cluster_histogram.len())
            .map(|c| {
                let mut r = vec![c.to_string(), self.real_cluster_histogram[c].to_string()];
                r.extend(self.correlation.iter().map(|m| m.votes[c].to_string()));
                r
            })
            .collect();
        csv_bytes(header, rows)
    }

    pub fn qq_csv(&self) -> std::io::Result<Vec<u8>> {
        let mut header = vec!["p".to_string(), REAL_LABEL.to_string()];
        header.extend(self.models.iter().cloned());
        let rows = self
            .qq_levels
            .iter()
            .enumerate()
            .map(|(i, p)| {
                std::iter::once(num(*p))
                    .chain(self.qq.iter().map(|col| num(col[i])))
                    .collect()
            })
            .collect();
        csv_bytes(header, rows)
    }

    /// Writes every file in [`REPORT_FILES`] into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        write_atomic(&dir.join("metrics_per_pair.csv"), &self.per_pair_csv()?)?;
        write_atomic(&dir.join("metrics_aggregate.csv"), &self.aggregate_csv()?)?;
        write_atomic(&dir.join("simple_stats.csv"), &self.simple_stats_csv()?)?;
        write_atomic(&dir.join("corr_index.csv"), &self.corr_index_csv()?)?;
        write_atomic(&dir.join("cluster_vote.csv"), &self.cluster_vote_csv()?)?;
        write_atomic(&dir.join("qq.csv"), &self.qq_csv()?)?;
        write_json_atomic(&dir.join("features.manifest.json"), &self.manifest)?;
        write_json_atomic(&dir.join("report.json"), self)
    }
}
