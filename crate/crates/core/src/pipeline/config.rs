use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binio::Fingerprint;
use crate::classifier::SvmConfig;
use crate::coding::{CodingConfig, Solver};
use crate::dictionary::{DictLearnConfig, DictionaryPreset};
use crate::error::{Error, Result};
use crate::features::BuiltinConfig;
use crate::patch_grid::ScaleConfig;
use crate::perturb::{PerturbationKind, DEFAULT_DIVISORS};
use crate::pooling::PoolingMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scales: ScalesSection,
    pub features: FeaturesSection,
    pub pca: PcaSection,
    pub dictionary: DictionarySection,
    pub coding: CodingSection,
    pub pooling: PoolingSection,
    pub svm: SvmSection,
    pub perturbation: PerturbationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalesSection {
    pub divisors: Vec<usize>,
}

impl Default for ScalesSection {
    fn default() -> Self {
        ScalesSection {
            divisors: ScaleConfig::default().divisors,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSection {
    pub grid: usize,
    pub orientation_bins: usize,
    pub intensity_bins: usize,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        Self::from(BuiltinConfig::default())
    }
}

impl From<BuiltinConfig> for ExtractorSection {
    fn from(c: BuiltinConfig) -> Self {
        ExtractorSection {
            grid: c.grid,
            orientation_bins: c.orientation_bins,
            intensity_bins: c.intensity_bins,
        }
    }
}

impl From<ExtractorSection> for BuiltinConfig {
    fn from(s: ExtractorSection) -> Self {
        BuiltinConfig {
            grid: s.grid,
            orientation_bins: s.orientation_bins,
            intensity_bins: s.intensity_bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub global: ExtractorSection,
    pub structure: ExtractorSection,
    pub object: ExtractorSection,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            global: ExtractorSection::default(),
            structure: ExtractorSection::default(),
            object: ExtractorSection {
                grid: 3,
                ..ExtractorSection::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSection {
    /// Clamped to the rank of the fitting data.
    pub output_dim: usize,
    pub max_samples: usize,
}

impl Default for PcaSection {
    fn default() -> Self {
        PcaSection {
            output_dim: 1000,
            max_samples: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionarySection {
    pub preset: DictionaryPreset,
    /// Overrides the preset's total word count.
    pub words: Option<usize>,
    /// Overrides the proportional split of words across scales.
    pub words_per_scale: Option<Vec<usize>>,
    pub lambda_dl: f64,
    pub epochs: usize,
    pub kmeans_iters: usize,
    /// Per-scale cap on descriptors fed to k-means.
    pub kmeans_max_samples: usize,
    pub learn_max_samples: usize,
    pub inner_tol: f64,
    pub inner_max_sweeps: usize,
}

impl Default for DictionarySection {
    fn default() -> Self {
        let learn = DictLearnConfig::default();
        DictionarySection {
            preset: DictionaryPreset::Scene15,
            words: None,
            words_per_scale: None,
            lambda_dl: learn.lambda_dl,
            epochs: learn.epochs,
            kmeans_iters: 50,
            kmeans_max_samples: 50_000,
            learn_max_samples: 20_000,
            inner_tol: learn.inner_tol,
            inner_max_sweeps: learn.inner_max_sweeps,
        }
    }
}

impl DictionarySection {
    pub fn total_words(&self) -> usize {
        self.words.unwrap_or_else(|| self.preset.words())
    }

    pub fn learn_config(&self, seed: u64) -> DictLearnConfig {
        DictLearnConfig {
            lambda_dl: self.lambda_dl,
            epochs: self.epochs,
            seed,
            inner_tol: self.inner_tol,
            inner_max_sweeps: self.inner_max_sweeps,
            ..DictLearnConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodingSection {
    pub sparsity_fraction: f64,
    pub residual_tol: f64,
    pub solver: Solver,
    pub lasso_lambda: f64,
}

impl Default for CodingSection {
    fn default() -> Self {
        let c = CodingConfig::default();
        CodingSection {
            sparsity_fraction: c.sparsity_fraction,
            residual_tol: c.residual_tol,
            solver: c.solver,
            lasso_lambda: c.lasso_lambda,
        }
    }
}

impl From<&CodingSection> for CodingConfig {
    fn from(s: &CodingSection) -> Self {
        CodingConfig {
            sparsity_fraction: s.sparsity_fraction,
            residual_tol: s.residual_tol,
            solver: s.solver,
            lasso_lambda: s.lasso_lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingSection {
    pub mode: PoolingMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub c: f64,
    pub max_epochs: usize,
    pub tol: f64,
}

impl Default for SvmSection {
    fn default() -> Self {
        let s = SvmConfig::default();
        SvmSection {
            c: s.c,
            max_epochs: s.max_epochs,
            tol: s.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSection {
    pub divisors: Vec<usize>,
    pub kinds: Vec<PerturbationKind>,
    pub seeds: Vec<u64>,
    pub count: usize,
}

impl Default for PerturbationSection {
    fn default() -> Self {
        PerturbationSection {
            divisors: DEFAULT_DIVISORS.to_vec(),
            kinds: PerturbationKind::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            count: 1,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            scales: ScalesSection::default(),
            features: FeaturesSection::default(),
            pca: PcaSection::default(),
            dictionary: DictionarySection::default(),
            coding: CodingSection::default(),
            pooling: PoolingSection::default(),
            svm: SvmSection::default(),
            perturbation: PerturbationSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Settings for the 64x64 synthetic glyph benchmark: a 256-word
    /// dictionary per source, capped learning samples and a weakly
    /// regularized SVM.
    pub fn synthetic_benchmark() -> Self {
        let mut cfg = PipelineConfig::default();
        cfg.dictionary.words = Some(256);
        cfg.dictionary.epochs = 3;
        cfg.dictionary.kmeans_max_samples = 5000;
        cfg.dictionary.learn_max_samples = 3000;
        cfg.svm.c = 1000.0;
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::from_toml(&text).map_err(|e| e.at_path(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scale_config().validate()?;
        for f in [self.features.global, self.features.structure, self.features.object] {
            BuiltinConfig::from(f).validate()?;
        }
        if self.pca.output_dim == 0 || self.pca.max_samples < 2 {
            return Err(Error::Config("pca output_dim must be positive and max_samples at least 2".into()));
        }
        let d = &self.dictionary;
        if let Some(per) = &d.words_per_scale {
            if per.len() != self.scales.divisors.len() || per.contains(&0) {
                return Err(Error::Config(format!(
                    "words_per_scale {per:?} must give a positive count for each of {} scales",
                    self.scales.divisors.len()
                )));
            }
        } else if d.total_words() < self.scales.divisors.len() {
            return Err(Error::Config(format!("{} words cannot cover every scale", d.total_words())));
        }
        if d.kmeans_iters == 0 || d.kmeans_max_samples == 0 || d.learn_max_samples == 0 {
            return Err(Error::Config("dictionary iteration and sample caps must be positive".into()));
        }
        self.dictionary.learn_config(self.seed).validate()?;
        CodingConfig::from(&self.coding).validate()?;
        self.svm_config().validate()?;
        let p = &self.perturbation;
        if p.divisors.iter().any(|&n| n < 2) || p.count == 0 {
            return Err(Error::Config("perturbation divisors must be at least 2 and count positive".into()));
        }
        Ok(())
    }

    pub fn scale_config(&self) -> ScaleConfig {
        ScaleConfig {
            divisors: self.scales.divisors.clone(),
        }
    }

    pub fn coding_config(&self) -> CodingConfig {
        CodingConfig::from(&self.coding)
    }

    pub fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            c: self.svm.c,
            max_epochs: self.svm.max_epochs,
            tol: self.svm.tol,
            seed: self.seed,
        }
    }

    /// First 16 bytes of the SHA-256 of the canonical TOML form, ignoring the
    /// perturbation section (which only affects evaluation).
    pub fn fingerprint(&self) -> Fingerprint {
        let canonical = PipelineConfig {
            perturbation: PerturbationSection::default(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        let mut fp = [0u8; 16];
        fp.copy_from_slice(&digest[..16]);
        fp
    }

    /// Fingerprint of the settings that determine extracted descriptors.
    pub fn extraction_fingerprint(&self) -> Fingerprint {
        #[derive(Serialize)]
        struct Extraction<'a> {
            scales: &'a ScalesSection,
            features: &'a FeaturesSection,
        }
        let text = toml::to_string(&Extraction {
            scales: &self.scales,
            features: &self.features,
        })
        .expect("sections serialize");
        let digest = Sha256::digest(text.as_bytes());
        let mut fp = [0u8; 16];
        fp.copy_from_slice(&digest[..16]);
        fp
    }
}

pub fn fingerprint_hex(fp: &Fingerprint) -> String {
    fp.iter().map(|b| format!("{b:02x}")).collect()
}
