use super::config::RunConfig;
use super::error::{Classify, ErrorKind, PipelineError, Stage};
use crate::dataset::{
    self, clean as clean_profile, extract_day_samples, io, midnight, reference as refdata, split_train_test,
    typical_week, Category, DatasetError, LoadProfile, ProfileMeta, Season, SLOTS_PER_DAY,
};
use crate::daymatch::{self, DayMatchError, DaySet, Embedding2D, MatchConfig, ModelMatching};
use crate::eval::{self, EvalReport, ModelSet};
use crate::fsutil::{write_atomic, write_json_atomic};
use crate::hmm::{self, ClusterHmms};
use crate::mabf::{self, MabfModel};
use crate::rng::derive_seed;
use crate::slp::{self, SlpYear};
use crate::typing::TypingModel;
use chrono::{NaiveDate, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

// seed streams of the pipeline stages
const STREAM_TYPING: u64 = 50;
const STREAM_HMM_TRAIN: u64 = 51;
const STREAM_MABF_TRAIN: u64 = 52;
const STREAM_MATCH: u64 = 53;
const STREAM_HMM_SENSOR: u64 = 40;
const STREAM_MABF_SENSOR: u64 = 41;

/// Built-in surrogate generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Hmm,
    Mabf,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hmm => "hmm",
            ModelKind::Mabf => "mabf",
        }
    }
}

/// Where each artifact lives below the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn ingested(&self) -> PathBuf {
        self.root.join("ingested")
    }

    pub fn cleaned(&self) -> PathBuf {
        self.root.join("cleaned")
    }

    pub fn excluded(&self) -> PathBuf {
        self.root.join("excluded.csv")
    }

    pub fn typing_model(&self) -> PathBuf {
        self.root.join("typing").join("model.json")
    }

    pub fn assignments(&self) -> PathBuf {
        self.root.join("typing").join("assignments.csv")
    }

    pub fn hmm_cluster(&self, cluster: usize) -> PathBuf {
        self.root
            .join("models")
            .join("hmm")
            .join(format!("cluster_{cluster:02}"))
    }

    pub fn mabf_model(&self) -> PathBuf {
        self.root.join("models").join("mabf").join("model.json")
    }

    pub fn synthetic(&self, model: &str) -> PathBuf {
        self.root.join("synthetic").join(model)
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }
}

fn layout(cfg: &RunConfig) -> Layout {
    Layout::new(&cfg.out_dir)
}

fn read_dir_at(stage: Stage, dir: &Path) -> Result<Vec<LoadProfile>, PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::new(
            stage,
            ErrorKind::Data,
            format!("{} is missing; run the earlier stages first", dir.display()),
        ));
    }
    io::read_profile_dir(dir).map_err(|e| e.at(stage))
}

fn write_dir_at(stage: Stage, dir: &Path, profiles: &[LoadProfile]) -> Result<(), PipelineError> {
    // replace rather than merge, so reruns never leave stale profiles behind
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| e.at(stage))?;
    }
    io::write_profile_dir(dir, profiles).map_err(|e| e.at(stage))
}

fn csv_bytes(
    stage: Stage,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<Vec<u8>, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut push = |r: &[String]| {
        w.write_record(r)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e.to_string()))
    };
    push(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    for r in rows {
        push(&r)?;
    }
    w.into_inner()
        .map_err(|e| PipelineError::new(stage, ErrorKind::Data, e.to_string()))
}

/// Reads the raw data directory, validates every profile and re-emits it
/// in canonical form.
pub fn ingest(cfg: &RunConfig) -> Result<usize, PipelineError> {
    let profiles = read_dir_at(Stage::Ingest, &cfg.data_dir)?;
    if profiles.is_empty() {
        return Err(PipelineError::new(
            Stage::Ingest,
            ErrorKind::Data,
            format!("no profiles in {}", cfg.data_dir.display()),
        ));
    }
    write_dir_at(Stage::Ingest, &layout(cfg).ingested(), &profiles)?;
    Ok(profiles.len())
}

/// Applies the cleaning rules. Profiles rejected as too short or too
/// sparse are dropped and listed in `excluded.csv`; any other failure
/// aborts.
pub fn clean(cfg: &RunConfig) -> Result<usize, PipelineError> {
    let l = layout(cfg);
    let source = if l.ingested().is_dir() {
        l.ingested()
    } else {
        cfg.data_dir.clone()
    };
    let raw = read_dir_at(Stage::Clean, &source)?;
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for p in &raw {
        match clean_profile(p, &cfg.cleaning) {
            Ok(c) => kept.push(c),
            Err(e @ (DatasetError::TooShort { .. } | DatasetError::TooSparse { .. })) => {
                excluded.push(vec![p.sensor_id.clone(), e.to_string()]);
            }
            Err(e) => return Err(e.at(Stage::Clean).with_sensor(&p.sensor_id)),
        }
    }
    let bytes = csv_bytes(Stage::Clean, &["sensor_id", "reason"], excluded)?;
    write_atomic(&l.excluded(), &bytes).map_err(|e| e.at(Stage::Clean))?;
    if kept.is_empty() {
        return Err(PipelineError::new(
            Stage::Clean,
            ErrorKind::Data,
            "every profile was rejected",
        ));
    }
    write_dir_at(Stage::Clean, &l.cleaned(), &kept)?;
    Ok(kept.len())
}

fn cleaned(cfg: &RunConfig, stage: Stage) -> Result<Vec<LoadProfile>, PipelineError> {
    let profiles = read_dir_at(stage, &layout(cfg).cleaned())?;
    if profiles.is_empty() {
        return Err(PipelineError::new(stage, ErrorKind::Data, "no cleaned profiles"));
    }
    Ok(profiles)
}

fn split_at(stage: Stage, p: &LoadProfile) -> Result<(LoadProfile, LoadProfile), PipelineError> {
    split_train_test(p).map_err(|e| e.at(stage).with_sensor(&p.sensor_id))
}

/// Test-year parts of the cleaned profiles: the real side of every
/// comparison.
pub fn real_test_profiles(cfg: &RunConfig) -> Result<Vec<LoadProfile>, PipelineError> {
    cleaned(cfg, Stage::Evaluate)?
        .iter()
        .map(|p| split_at(Stage::Evaluate, p).map(|(_, test)| test))
        .collect()
}

/// Types consumers by the transition-season typical week of their
/// training part. Writes the model and `sensor_id,cluster_id` assignments.
pub fn typify(cfg: &RunConfig) -> Result<Vec<usize>, PipelineError> {
    let profiles = cleaned(cfg, Stage::Typify)?;
    let mut weeks = Vec::with_capacity(profiles.len());
    for p in &profiles {
        let (train, _) = split_at(Stage::Typify, p)?;
        let w = typical_week(&train, Season::Transition, &cfg.typing.holidays)
            .map_err(|e| e.at(Stage::Typify).with_sensor(&p.sensor_id))?;
        if let Some(i) = w.values.iter().position(|v| !v.is_finite()) {
            return Err(PipelineError::new(
                Stage::Typify,
                ErrorKind::Data,
                format!("typical week has no data for slot {i}"),
            )
            .with_sensor(&p.sensor_id));
        }
        weeks.push(w.values);
    }
    let (model, assignments) = TypingModel::fit(&weeks, cfg.typing.k, derive_seed(cfg.seed, STREAM_TYPING, 0))
        .map_err(|e| e.at(Stage::Typify))?;
    let l = layout(cfg);
    write_json_atomic(&l.typing_model(), &model).map_err(|e| e.at(Stage::Typify))?;
    let rows = profiles
        .iter()
        .zip(&assignments)
        .map(|(p, c)| vec![p.sensor_id.clone(), c.to_string()]);
    let bytes = csv_bytes(Stage::Typify, &["sensor_id", "cluster_id"], rows)?;
    write_atomic(&l.assignments(), &bytes).map_err(|e| e.at(Stage::Typify))?;
    Ok(assignments)
}

/// Reads `sensor_id,cluster_id` rows.
pub fn read_assignments(path: &Path) -> Result<BTreeMap<String, usize>, PipelineError> {
    let err = |m: String| PipelineError::new(Stage::Typify, ErrorKind::Data, m);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for rec in rdr.deserialize::<(String, usize)>() {
        let (id, c) = rec.map_err(|e| err(format!("{}: {e}", path.display())))?;
        out.insert(id, c);
    }
    Ok(out)
}

fn cluster_of(assign: &BTreeMap<String, usize>, stage: Stage, id: &str) -> Result<usize, PipelineError> {
    assign.get(id).copied().ok_or_else(|| {
        PipelineError::new(stage, ErrorKind::Data, "sensor has no cluster assignment; rerun typify").with_sensor(id)
    })
}

/// Trains the 21 (season, weekday) models of every consumer type, or of
/// `only` that type.
pub fn train_hmm(cfg: &RunConfig, only: Option<usize>) -> Result<(), PipelineError> {
    let stage = Stage::TrainHmm;
    let l = layout(cfg);
    let assign = read_assignments(&l.assignments()).map_err(|e| PipelineError { stage, ..e })?;
    let k = assign.values().copied().max().map_or(0, |m| m + 1);
    let clusters: Vec<usize> = match only {
        Some(c) if c >= k => {
            return Err(PipelineError::new(
                stage,
                ErrorKind::Config,
                format!("cluster {c} out of range (k = {k})"),
            ));
        }
        Some(c) => vec![c],
        None => (0..k).collect(),
    };
    let profiles = cleaned(cfg, stage)?;
    for c in clusters {
        let mut trains = Vec::new();
        for p in &profiles {
            if cluster_of(&assign, stage, &p.sensor_id)? == c {
                trains.push(split_at(stage, p)?.0);
            }
        }
        if trains.is_empty() {
            return Err(PipelineError::new(
                stage,
                ErrorKind::Data,
                format!("cluster {c} has no members"),
            ));
        }
        let tc = cfg
            .hmm
            .train_config(&cfg.typing.holidays, derive_seed(cfg.seed, STREAM_HMM_TRAIN, c as u64));
        let hmms = hmm::train_cluster(c, &trains, &tc).map_err(|e| PipelineError {
            message: format!("cluster {c}: {e}"),
            ..e.at(stage)
        })?;
        hmm::save_cluster(&l.hmm_cluster(c), &hmms).map_err(|e| e.at(stage))?;
    }
    Ok(())
}

/// Fits one flow over the daily training samples of all sensors.
pub fn train_mabf(cfg: &RunConfig) -> Result<MabfModel, PipelineError> {
    let stage = Stage::TrainMabf;
    let res = cfg
        .mabf
        .resolution()
        .ok_or_else(|| PipelineError::config("mabf.resolution_minutes must be 15 or 30"))?;
    let mut days = Vec::new();
    for p in &cleaned(cfg, stage)? {
        let (train, _) = split_at(stage, p)?;
        days.extend(extract_day_samples(&train, 0, res));
    }
    let model = mabf::fit(
        &days,
        cfg.mabf.arch(),
        &cfg.mabf.training(derive_seed(cfg.seed, STREAM_MABF_TRAIN, 0)),
    )
    .map_err(|e| e.at(stage))?;
    model.save(&layout(cfg).mabf_model()).map_err(|e| e.at(stage))?;
    Ok(model)
}

/// First day and length of the generated span for one sensor.
fn target_span(cfg: &RunConfig, p: &LoadProfile) -> Result<(NaiveDate, usize), PipelineError> {
    match cfg.generate.year {
        Some(y) => {
            let first = NaiveDate::from_ymd_opt(y, 1, 1)
                .ok_or_else(|| PipelineError::config(format!("year {y} out of range")))?;
            let next = NaiveDate::from_ymd_opt(y + 1, 1, 1)
                .ok_or_else(|| PipelineError::config(format!("year {y} out of range")))?;
            Ok((first, (next - first).num_days() as usize))
        }
        None => {
            let (_, test) = split_at(Stage::Generate, p)?;
            Ok((test.start.date_naive(), test.len() / SLOTS_PER_DAY))
        }
    }
}

fn surrogate_meta(model: &str, p: &LoadProfile) -> ProfileMeta {
    ProfileMeta {
        sensor_id: format!("{model}:{}", p.sensor_id),
        ..p.meta()
    }
}

/// Writes one surrogate per cleaned sensor for each requested generator,
/// covering the sensor's test year (or the configured calendar year).
/// Sensor `i` in id order draws from seed stream `(seed, i)`.
pub fn generate(cfg: &RunConfig, models: &[ModelKind]) -> Result<(), PipelineError> {
    let stage = Stage::Generate;
    let l = layout(cfg);
    let profiles = cleaned(cfg, stage)?;
    for &kind in models {
        let mut out = Vec::with_capacity(profiles.len());
        match kind {
            ModelKind::Hmm => {
                let assign = read_assignments(&l.assignments()).map_err(|e| PipelineError { stage, ..e })?;
                let mut cache: BTreeMap<usize, ClusterHmms> = BTreeMap::new();
                for (i, p) in profiles.iter().enumerate() {
                    let c = cluster_of(&assign, stage, &p.sensor_id)?;
                    if !cache.contains_key(&c) {
                        let h = hmm::load_cluster(&l.hmm_cluster(c), c).map_err(|e| PipelineError {
                            message: format!("cluster {c}: {e}"),
                            ..e.at(stage)
                        })?;
                        cache.insert(c, h);
                    }
                    let (first, n_days) = target_span(cfg, p)?;
                    let values = hmm::assemble_span(
                        &cache[&c],
                        first,
                        n_days,
                        cfg.hmm.start_hour,
                        derive_seed(cfg.seed, STREAM_HMM_SENSOR, i as u64),
                        cfg.hmm.clamp_nonnegative,
                    )
                    .map_err(|e| e.at(stage).with_sensor(&p.sensor_id))?;
                    out.push(
                        LoadProfile::new(surrogate_meta("hmm", p), midnight(first), values, None)
                            .map_err(|e| e.at(stage).with_sensor(&p.sensor_id))?,
                    );
                }
            }
            ModelKind::Mabf => {
                let model = MabfModel::load(&l.mabf_model()).map_err(|e| e.at(stage))?;
                for (i, p) in profiles.iter().enumerate() {
                    let (first, n_days) = target_span(cfg, p)?;
                    let conds = mabf::day_conditions(&model, Some(p), first, n_days, model.sensor_index(&p.sensor_id));
                    let values = mabf::generate_span(
                        &model,
                        first,
                        &conds,
                        derive_seed(cfg.seed, STREAM_MABF_SENSOR, i as u64),
                    )
                    .map_err(|e| e.at(stage).with_sensor(&p.sensor_id))?;
                    out.push(
                        LoadProfile::new(surrogate_meta("mabf", p), midnight(first), values, None)
                            .map_err(|e| e.at(stage).with_sensor(&p.sensor_id))?,
                    );
                }
            }
        }
        write_dir_at(stage, &l.synthetic(kind.name()), &out)?;
    }
    Ok(())
}

/// Fits the standard load profile to every sensor's test year.
pub fn scale_slp(cfg: &RunConfig) -> Result<(), PipelineError> {
    let stage = Stage::ScaleSlp;
    let user: Option<SlpYear> = match &cfg.slp.file {
        Some(path) => {
            let meta = ProfileMeta {
                sensor_id: "slp".into(),
                category: Category::Household,
                region_code: String::new(),
            };
            let p = io::read_profile_csv(path, meta).map_err(|e| e.at(stage))?;
            Some(SlpYear::from_profile(&p).map_err(|e| e.at(stage))?)
        }
        None => None,
    };
    let mut out = Vec::new();
    for p in &cleaned(cfg, stage)? {
        let (_, test) = split_at(stage, p)?;
        let slp_year = match &user {
            Some(s) => s.clone(),
            None => slp::reference_slp_span(test.start, test.len()),
        };
        let scaled =
            slp::scale_slp(&slp_year, &test, cfg.slp.anchor).map_err(|e| e.at(stage).with_sensor(&p.sensor_id))?;
        out.push(scaled);
    }
    write_dir_at(stage, &layout(cfg).synthetic("slp"), &out)
}

/// Built-in sets that exist on disk, then the external registry, each
/// paired with the real profiles by id.
fn model_sets(cfg: &RunConfig, stage: Stage, real: &[LoadProfile]) -> Result<Vec<ModelSet>, PipelineError> {
    let l = layout(cfg);
    let mut dirs: Vec<(String, PathBuf)> = ["hmm", "mabf", "slp"]
        .iter()
        .map(|m| (m.to_string(), l.synthetic(m)))
        .filter(|(_, d)| d.is_dir())
        .collect();
    dirs.extend(cfg.external.iter().map(|e| (e.name.clone(), e.dir.clone())));
    let mut sets = Vec::new();
    for (name, dir) in dirs {
        let profiles = read_dir_at(stage, &dir)?;
        if profiles.is_empty() {
            continue;
        }
        let set = ModelSet::paired_by_id(&name, profiles, real).map_err(|e| PipelineError {
            message: format!("model {name}: {e}"),
            ..e.at(stage)
        })?;
        sets.push(set);
    }
    if sets.is_empty() {
        return Err(PipelineError::new(
            stage,
            ErrorKind::Data,
            "no surrogate sets to compare",
        ));
    }
    Ok(sets)
}

/// Scores every surrogate set against the real test years and writes the
/// report tables.
pub fn evaluate(cfg: &RunConfig) -> Result<EvalReport, PipelineError> {
    let stage = Stage::Evaluate;
    let l = layout(cfg);
    let real = real_test_profiles(cfg)?;
    let assign = read_assignments(&l.assignments()).map_err(|e| PipelineError { stage, ..e })?;
    let clusters: Vec<usize> = real
        .iter()
        .map(|p| cluster_of(&assign, stage, &p.sensor_id))
        .collect::<Result<_, _>>()?;
    let k = clusters.iter().max().map_or(1, |m| m + 1).max(cfg.typing.k);
    let sets = model_sets(cfg, stage, &real)?;
    let report = eval::evaluate(&real, &clusters, k, &sets, &cfg.evaluate).map_err(|e| e.at(stage))?;
    report.write(&l.report()).map_err(|e| e.at(stage))?;
    Ok(report)
}

/// Matches real and synthetic test days one to one in a shared 2-D
/// embedding and writes `matching.csv` and `matching_stats.csv`.
pub fn match_days(cfg: &RunConfig) -> Result<Vec<ModelMatching>, PipelineError> {
    let stage = Stage::Match;
    let real_profiles = real_test_profiles(cfg)?;
    let real = DaySet::from_profiles(&real_profiles);
    if real.is_empty() {
        return Err(PipelineError::new(stage, ErrorKind::Data, "no complete real days"));
    }
    let external = match &cfg.matching.embedding {
        Some(path) => Some(std::fs::read_to_string(path).map_err(|e| e.at(stage))?),
        None => None,
    };
    let basis = daymatch::fit_day_pca(&real.days).map_err(|e| e.at(stage))?;
    let embed = |set: &DaySet| -> Result<Embedding2D, DayMatchError> {
        match &external {
            Some(text) => daymatch::import_embedding(text, &set.keys),
            None => Ok(daymatch::embed_with(&basis, &set.days)),
        }
    };
    let mc = MatchConfig {
        max_match_n: cfg.matching.max_match_n,
        raw_space: cfg.matching.raw_space,
        seed: derive_seed(cfg.seed, STREAM_MATCH, 0),
    };
    let mut results = Vec::new();
    for set in model_sets(cfg, stage, &real_profiles)? {
        let synth = DaySet::from_profiles(&set.profiles);
        if synth.is_empty() {
            return Err(PipelineError::new(
                stage,
                ErrorKind::Data,
                format!("model {} has no complete days", set.name),
            ));
        }
        let m = daymatch::match_model(&set.name, &real, &synth, Some(&embed), &mc).map_err(|e| PipelineError {
            message: format!("model {}: {e}", set.name),
            ..e.at(stage)
        })?;
        results.push(m);
    }
    daymatch::write_matchings(&layout(cfg).report(), &results).map_err(|e| e.at(stage))?;
    Ok(results)
}

#[derive(Debug, Serialize)]
struct IndexEntry {
    name: String,
    bytes: u64,
    sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `report/index.json`: every report file with its size and digest.
pub fn report(cfg: &RunConfig) -> Result<(), PipelineError> {
    let stage = Stage::Report;
    let dir = layout(cfg).report();
    let mut names = Vec::new();
    for f in eval::REPORT_FILES.iter().chain(daymatch::MATCHING_FILES.iter()) {
        if !dir.join(f).is_file() {
            return Err(PipelineError::new(
                stage,
                ErrorKind::Data,
                format!("report file {f} is missing"),
            ));
        }
        names.push(f.to_string());
    }
    let mut entries = Vec::new();
    for name in names {
        let bytes = std::fs::read(dir.join(&name)).map_err(|e| e.at(stage))?;
        entries.push(IndexEntry {
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
            name,
        });
    }
    write_json_atomic(&dir.join("index.json"), &entries).map_err(|e| e.at(stage))
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub feature_schema_version: u32,
    pub started_utc: String,
    pub stages: Vec<StageTiming>,
    pub status: String,
}

fn run_stage(cfg: &RunConfig, stage: Stage) -> Result<(), PipelineError> {
    match stage {
        Stage::Ingest => ingest(cfg).map(drop),
        Stage::Clean => clean(cfg).map(drop),
        Stage::Typify => typify(cfg).map(drop),
        Stage::TrainHmm => train_hmm(cfg, None),
        Stage::TrainMabf => train_mabf(cfg).map(drop),
        Stage::Generate => generate(cfg, &[ModelKind::Hmm, ModelKind::Mabf]),
        Stage::ScaleSlp => scale_slp(cfg),
        Stage::Evaluate => evaluate(cfg).map(drop),
        Stage::Match => match_days(cfg).map(drop),
        Stage::Report => report(cfg),
        Stage::Config => Ok(()),
    }
}

fn enabled(cfg: &RunConfig, stage: Stage) -> bool {
    let s = &cfg.stages;
    match stage {
        Stage::Ingest => s.ingest,
        Stage::Clean => s.clean,
        Stage::Typify => s.typify,
        Stage::TrainHmm => s.train_hmm,
        Stage::TrainMabf => s.train_mabf,
        Stage::Generate => s.generate,
        Stage::ScaleSlp => s.scale_slp,
        Stage::Evaluate => s.evaluate,
        Stage::Match => s.match_days,
        Stage::Report => s.report,
        Stage::Config => true,
    }
}

/// Validates the config, then runs the enabled stages in pipeline order.
/// `run_manifest.json` is written whether or not a stage fails.
pub fn run(cfg: &RunConfig) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    let l = layout(cfg);
    std::fs::create_dir_all(&l.root)
        .map_err(|e| PipelineError::config(format!("cannot create {}: {e}", l.root.display())))?;
    write_atomic(&l.root.join("config.toml"), cfg.to_toml().as_bytes()).map_err(|e| e.at(Stage::Config))?;
    let mut manifest = RunManifest {
        config_sha256: cfg.hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        feature_schema_version: eval::FEATURE_SCHEMA_VERSION,
        started_utc: Utc::now().to_rfc3339(),
        stages: Vec::new(),
        status: "running".into(),
    };
    let mut failure = None;
    for stage in Stage::PIPELINE {
        if !enabled(cfg, stage) {
            continue;
        }
        let t = Instant::now();
        let r = run_stage(cfg, stage);
        manifest.stages.push(StageTiming {
            stage,
            seconds: t.elapsed().as_secs_f64(),
        });
        if let Err(e) = r {
            manifest.status = format!("failed: {e}");
            failure = Some(e);
            break;
        }
    }
    if failure.is_none() {
        manifest.status = "ok".into();
    }
    write_json_atomic(&l.manifest(), &manifest).map_err(|e| e.at(Stage::Report))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

/// Writes the seeded 20-profile reference dataset to `dir` together with
/// `families.csv`, the generating archetype of each profile.
pub fn write_reference_dataset(dir: &Path, seed: u64) -> Result<refdata::ReferenceDataset, DatasetError> {
    let data = refdata::generate(seed);
    dataset::io::write_profile_dir(dir, &data.profiles)?;
    let mut s = String::from("sensor_id,family\n");
    for (p, f) in data.profiles.iter().zip(&data.families) {
        s.push_str(&format!("{},{}\n", p.sensor_id, f));
    }
    write_atomic(&dir.join("families.csv"), s.as_bytes())?;
    Ok(data)
}

/// Reads `synth_id,real_id` rows into a pairing for `set`.
fn explicit_pairing(path: &Path, set: &[LoadProfile], real: &[LoadProfile]) -> Result<Vec<usize>, PipelineError> {
    let stage = Stage::Evaluate;
    let err = |m: String| PipelineError::new(stage, ErrorKind::Data, format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let mut map = BTreeMap::new();
    for rec in rdr.deserialize::<(String, String)>() {
        let (s, r) = rec.map_err(|e| err(e.to_string()))?;
        map.insert(s, r);
    }
    let index: BTreeMap<&str, usize> = real
        .iter()
        .enumerate()
        .map(|(i, p)| (p.sensor_id.as_str(), i))
        .collect();
    set.iter()
        .map(|p| {
            let r = map
                .get(&p.sensor_id)
                .ok_or_else(|| err("no pairing row".into()).with_sensor(&p.sensor_id))?;
            index
                .get(r.as_str())
                .copied()
                .ok_or_else(|| err(format!("unknown real profile {r}")).with_sensor(&p.sensor_id))
        })
        .collect()
}

/// Evaluates surrogate directories against a real directory without a
/// pipeline run. Pairing comes from a `synth_id,real_id` CSV, or from the
/// ids otherwise; cluster labels from a `sensor_id,cluster_id` CSV, or a
/// single cluster otherwise.
pub fn evaluate_dirs(
    real_dir: &Path,
    synth: &[(String, PathBuf)],
    pairing: Option<&Path>,
    assignments: Option<&Path>,
    opts: &eval::EvalOptions,
    out_dir: &Path,
) -> Result<EvalReport, PipelineError> {
    let stage = Stage::Evaluate;
    let real = read_dir_at(stage, real_dir)?;
    let clusters: Vec<usize> = match assignments {
        Some(path) => {
            let a = read_assignments(path).map_err(|e| PipelineError { stage, ..e })?;
            real.iter()
                .map(|p| cluster_of(&a, stage, &p.sensor_id))
                .collect::<Result<_, _>>()?
        }
        None => vec![0; real.len()],
    };
    let k = clusters.iter().max().map_or(1, |m| m + 1);
    let mut sets = Vec::new();
    for (name, dir) in synth {
        let profiles = read_dir_at(stage, dir)?;
        let set = match pairing {
            Some(path) => ModelSet {
                name: name.clone(),
                pairing: explicit_pairing(path, &profiles, &real)?,
                profiles,
            },
            None => ModelSet::paired_by_id(name, profiles, &real).map_err(|e| e.at(stage))?,
        };
        sets.push(set);
    }
    let report = eval::evaluate(&real, &clusters, k, &sets, opts).map_err(|e| e.at(stage))?;
    report.write(out_dir).map_err(|e| e.at(stage))?;
    Ok(report)
}
