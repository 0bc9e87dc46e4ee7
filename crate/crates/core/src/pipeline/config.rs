use super::error::PipelineError;
use crate::dataset::{CleaningRules, HolidayRange, Resolution};
use crate::eval::EvalOptions;
use crate::hmm::{BaumWelchConfig, HmmTrainConfig, TrainingSetOptions};
use crate::mabf::{FlowTrainingConfig, MabfArch};
use crate::slp::SlpAnchor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "LOADSURROGATE_SEED";

/// A complete run description, read from a single TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub cleaning: CleaningRules,
    #[serde(default)]
    pub typing: TypingBlock,
    #[serde(default)]
    pub hmm: HmmBlock,
    #[serde(default)]
    pub mabf: MabfBlock,
    #[serde(default)]
    pub generate: GenerateBlock,
    #[serde(default)]
    pub slp: SlpBlock,
    #[serde(default)]
    pub evaluate: EvalOptions,
    #[serde(default)]
    pub matching: MatchingBlock,
    /// Surrogate sets produced elsewhere (e.g. GAN or diffusion outputs),
    /// evaluated alongside the built-in generators.
    #[serde(default)]
    pub external: Vec<ExternalSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub ingest: bool,
    pub clean: bool,
    pub typify: bool,
    pub train_hmm: bool,
    pub train_mabf: bool,
    pub generate: bool,
    pub scale_slp: bool,
    pub evaluate: bool,
    #[serde(rename = "match")]
    pub match_days: bool,
    pub report: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            ingest: true,
            clean: true,
            typify: true,
            train_hmm: true,
            train_mabf: true,
            generate: true,
            scale_slp: true,
            evaluate: true,
            match_days: true,
            report: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypingBlock {
    pub k: usize,
    /// Excluded from typical weeks and HMM training days.
    pub holidays: Vec<HolidayRange>,
}

impl Default for TypingBlock {
    fn default() -> Self {
        TypingBlock {
            k: crate::typing::DEFAULT_K,
            holidays: HolidayRange::defaults(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmBlock {
    pub n_states: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub var_floor: Option<f64>,
    pub start_hour: u32,
    pub window: usize,
    /// Clip generated power at zero. Off by default: the fitted Gaussians
    /// do emit negative loads.
    pub clamp_nonnegative: bool,
}

impl Default for HmmBlock {
    fn default() -> Self {
        let bw = BaumWelchConfig::default();
        let ts = TrainingSetOptions::default();
        HmmBlock {
            n_states: bw.n_states,
            max_iter: bw.max_iter,
            tol: bw.tol,
            var_floor: bw.var_floor,
            start_hour: ts.start_hour,
            window: ts.window,
            clamp_nonnegative: false,
        }
    }
}

impl HmmBlock {
    pub fn train_config(&self, holidays: &[HolidayRange], seed: u64) -> HmmTrainConfig {
        HmmTrainConfig {
            baum_welch: BaumWelchConfig {
                n_states: self.n_states,
                max_iter: self.max_iter,
                tol: self.tol,
                var_floor: self.var_floor,
                seed,
            },
            training: TrainingSetOptions {
                start_hour: self.start_hour,
                window: self.window,
                holidays: holidays.to_vec(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MabfBlock {
    /// 15 or 30.
    pub resolution_minutes: u32,
    pub order: usize,
    pub made_hidden: usize,
    pub cond_hidden: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub clip_norm: f64,
}

impl Default for MabfBlock {
    fn default() -> Self {
        let a = MabfArch::default();
        let t = FlowTrainingConfig::default();
        MabfBlock {
            resolution_minutes: 30,
            order: a.order,
            made_hidden: a.made_hidden,
            cond_hidden: a.cond_hidden,
            embed_dim: a.embed_dim,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            validation_fraction: t.validation_fraction,
            clip_norm: t.clip_norm,
        }
    }
}

impl MabfBlock {
    pub fn resolution(&self) -> Option<Resolution> {
        Resolution::from_minutes(self.resolution_minutes)
    }

    pub fn arch(&self) -> MabfArch {
        MabfArch {
            order: self.order,
            made_hidden: self.made_hidden,
            cond_hidden: self.cond_hidden,
            embed_dim: self.embed_dim,
            ..MabfArch::default()
        }
    }

    pub fn training(&self, seed: u64) -> FlowTrainingConfig {
        FlowTrainingConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            clip_norm: self.clip_norm,
            seed,
            ..FlowTrainingConfig::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateBlock {
    /// Generate this calendar year instead of each sensor's test year.
    pub year: Option<i32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlpBlock {
    pub anchor: SlpAnchor,
    /// Profile CSV with the SLP; the bundled analytic SLP is used if unset.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingBlock {
    pub max_match_n: usize,
    pub raw_space: bool,
    /// Externally computed 2-D embedding (`sensor_id,date,x,y`) covering
    /// real and synthetic days; a PCA fitted on the real days otherwise.
    pub embedding: Option<PathBuf>,
}

impl Default for MatchingBlock {
    fn default() -> Self {
        MatchingBlock {
            max_match_n: crate::daymatch::DEFAULT_MAX_MATCH_N,
            raw_space: false,
            embedding: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSet {
    pub name: String,
    pub dir: PathBuf,
}

const RESERVED_MODELS: [&str; 3] = ["hmm", "mabf", "slp"];

impl RunConfig {
    /// Defaults for everything but the seed and the two directories.
    pub fn new(seed: u64, data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            seed,
            data_dir: data_dir.into(),
            out_dir: out_dir.into(),
            stages: StageToggles::default(),
            cleaning: CleaningRules::default(),
            typing: TypingBlock::default(),
            hmm: HmmBlock::default(),
            mabf: MabfBlock::default(),
            generate: GenerateBlock::default(),
            slp: SlpBlock::default(),
            evaluate: EvalOptions::default(),
            matching: MatchingBlock::default(),
            external: Vec::new(),
        }
    }

    /// Settings sized for the bundled 20-profile reference dataset: four
    /// consumer types and small generators so a full run takes minutes on
    /// one core.
    pub fn reference(seed: u64, data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let mut c = RunConfig::new(seed, data_dir, out_dir);
        c.typing.k = 4;
        c.hmm.n_states = 10;
        c.hmm.max_iter = 30;
        c.mabf.made_hidden = 64;
        c.mabf.cond_hidden = 32;
        c.mabf.epochs = 10;
        c.matching.max_match_n = 1000;
        c
    }

    /// Parses TOML and applies the seed override from the environment.
    /// Relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| PipelineError::config(e.to_string()))?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            c.seed = v
                .trim()
                .parse()
                .map_err(|_| PipelineError::config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut c.data_dir);
        abs(&mut c.out_dir);
        if let Some(f) = &mut c.slp.file {
            abs(f);
        }
        if let Some(f) = &mut c.matching.embedding {
            abs(f);
        }
        for e in &mut c.external {
            abs(&mut e.dir);
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks referenced paths and parameter ranges before any stage runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let must_exist = |what: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(PipelineError::config(format!("{what} {} does not exist", p.display())))
            }
        };
        if self.stages.ingest {
            must_exist("data_dir", &self.data_dir)?;
        }
        if let Some(f) = &self.slp.file {
            must_exist("slp.file", f)?;
        }
        if let Some(f) = &self.matching.embedding {
            must_exist("matching.embedding", f)?;
        }
        for e in &self.external {
            must_exist(&format!("external set {:?}", e.name), &e.dir)?;
            if RESERVED_MODELS.contains(&e.name.as_str()) || e.name.is_empty() {
                return Err(PipelineError::config(format!(
                    "external set name {:?} is reserved",
                    e.name
                )));
            }
        }
        let mut names: Vec<&str> = self.external.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(PipelineError::config("duplicate external set name"));
        }
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(PipelineError::config(msg.to_string()))
            }
        };
        check(self.typing.k >= 1, "typing.k must be at least 1")?;
        check(self.hmm.n_states >= 1, "hmm.n_states must be at least 1")?;
        check(self.hmm.start_hour < 24, "hmm.start_hour must be below 24")?;
        check(self.hmm.window >= 1, "hmm.window must be at least 1")?;
        check(
            self.mabf.resolution().is_some(),
            "mabf.resolution_minutes must be 15 or 30",
        )?;
        check(self.mabf.order >= 1, "mabf.order must be at least 1")?;
        check(self.mabf.batch_size >= 1, "mabf.batch_size must be at least 1")?;
        check(
            (0.0..1.0).contains(&self.mabf.validation_fraction),
            "mabf.validation_fraction must lie in [0, 1)",
        )?;
        check(
            self.matching.max_match_n >= 1,
            "matching.max_match_n must be at least 1",
        )?;
        check(
            self.evaluate.ssim_window >= 2 && self.evaluate.ssim_stride >= 1,
            "evaluate.ssim_window must be at least 2 and ssim_stride at least 1",
        )?;
        Ok(())
    }
}
