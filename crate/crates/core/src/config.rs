//! TOML run configuration. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::citeflow::{EccBaseline, DEFAULT_HARDWARE_TERMS};
use crate::corpus::{CategoryMap, CorpusConfig, CorpusPaths, EntityClass, Sector, YearRange};
use crate::entnorm::{read_abbreviations, read_stoplist, NormalizationConfig};
use crate::error::{Error, Result};
use crate::studies::{Period, PsmConfig, StabilityConfig, StabilityMetric};

pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub papers: PathBuf,
    pub entities: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub citations: Option<PathBuf>,
    #[serde(default = "default_years")]
    pub years: String,
    pub embedding_dim: Option<usize>,
    /// Extra raw-category to sector mappings.
    #[serde(default)]
    pub categories: BTreeMap<String, Sector>,
}

fn default_years() -> String {
    "2000-2022".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeSection {
    pub abbreviations: Option<PathBuf>,
    pub stoplist: Option<PathBuf>,
    pub same_cluster_sim: f64,
    pub merge_avg_sim: f64,
    pub min_annual_freq: u64,
}

impl Default for NormalizeSection {
    fn default() -> Self {
        let d = NormalizationConfig::default();
        NormalizeSection {
            abbreviations: None,
            stoplist: None,
            same_cluster_sim: d.same_cluster_sim,
            merge_avg_sim: d.merge_avg_sim,
            min_annual_freq: d.min_annual_freq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntitySimSection {
    /// `all` or entity class names.
    pub classes: Vec<String>,
    pub dedup_per_paper: bool,
}

impl Default for EntitySimSection {
    fn default() -> Self {
        EntitySimSection {
            classes: ["all", "method", "tool", "dataset", "metric"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            dedup_per_paper: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemanticSection {
    pub quantile: f64,
    /// Fixed threshold instead of the corpus quantile.
    pub threshold: Option<f64>,
    pub same_year_pairs: bool,
    pub top_k: usize,
    /// Focal year of the top-pairs export; defaults to the last corpus year.
    pub top_focal_year: Option<i32>,
}

impl Default for SemanticSection {
    fn default() -> Self {
        SemanticSection {
            quantile: 0.9,
            threshold: None,
            same_year_pairs: false,
            top_k: 20,
            top_focal_year: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub seed: Option<u64>,
    pub unweighted: bool,
    pub shared_partition: bool,
    pub edge_lists: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CitationSection {
    pub terms: Vec<String>,
    pub ecc_baseline: EccBaseline,
}

impl Default for CitationSection {
    fn default() -> Self {
        CitationSection {
            terms: DEFAULT_HARDWARE_TERMS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ecc_baseline: EccBaseline::AllClassified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSection {
    pub periods: Vec<String>,
}

impl Default for RegressionSection {
    fn default() -> Self {
        RegressionSection {
            periods: Period::defaults().into_iter().map(|p| p.label).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub proportions: Vec<f64>,
    pub repetitions: usize,
    pub seed: Option<u64>,
    pub metrics: Vec<StabilityMetric>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        let d = StabilityConfig::default();
        StabilitySection {
            proportions: d.proportions,
            repetitions: d.repetitions,
            seed: None,
            metrics: d.metrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsmSection {
    pub ratios: Vec<usize>,
}

impl Default for PsmSection {
    fn default() -> Self {
        PsmSection {
            ratios: PsmConfig::default().ratios,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub normalize: NormalizeSection,
    #[serde(default)]
    pub entity_sim: EntitySimSection,
    #[serde(default)]
    pub semantic: SemanticSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub citation: CitationSection,
    #[serde(default)]
    pub regression: RegressionSection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub psm: PsmSection,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line overrides; `None` keeps the configured value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub years: Option<String>,
    pub quantile: Option<f64>,
    pub threshold: Option<f64>,
    pub classes: Option<Vec<String>>,
    pub periods: Option<Vec<String>>,
    pub ratios: Option<Vec<usize>>,
    pub workers: Option<usize>,
}

/// Which entity classes a matrix is restricted to; `None` means all.
pub type ClassFilter = Option<EntityClass>;

pub fn parse_class_filter(s: &str) -> Result<ClassFilter> {
    if s.trim().eq_ignore_ascii_case("all") {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|_| Error::config("entity_sim.classes", format!("unknown class `{s}`")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().replace('\n', " ");
            Error::config(toml_field(text, &e), msg)
        })?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::config("<file>", "config is not valid UTF-8"))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((RunConfig::from_toml(&text, base)?, bytes))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus.papers);
        for p in [
            &mut self.corpus.entities,
            &mut self.corpus.embeddings,
            &mut self.corpus.citations,
            &mut self.normalize.abbreviations,
            &mut self.normalize.stoplist,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.years {
            self.corpus.years = v.clone();
        }
        if let Some(v) = o.quantile {
            self.semantic.quantile = v;
        }
        if let Some(v) = o.threshold {
            self.semantic.threshold = Some(v);
        }
        if let Some(v) = &o.classes {
            self.entity_sim.classes = v.clone();
        }
        if let Some(v) = &o.periods {
            self.regression.periods = v.clone();
        }
        if let Some(v) = &o.ratios {
            self.psm.ratios = v.clone();
        }
        if let Some(v) = o.workers {
            self.workers = Some(v);
        }
    }

    /// Check values and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        self.years()?;
        let files = [
            ("corpus.papers", Some(&self.corpus.papers)),
            ("corpus.entities", self.corpus.entities.as_ref()),
            ("corpus.embeddings", self.corpus.embeddings.as_ref()),
            ("corpus.citations", self.corpus.citations.as_ref()),
            (
                "normalize.abbreviations",
                self.normalize.abbreviations.as_ref(),
            ),
            ("normalize.stoplist", self.normalize.stoplist.as_ref()),
        ];
        for (field, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::config(
                        field,
                        format!("file {} does not exist", p.display()),
                    ));
                }
            }
        }
        if self.corpus.embedding_dim == Some(0) {
            return Err(Error::config("corpus.embedding_dim", "must be positive"));
        }
        let q = self.semantic.quantile;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::config(
                "semantic.quantile",
                format!("{q} must lie in (0, 1)"),
            ));
        }
        if let Some(t) = self.semantic.threshold {
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::config(
                    "semantic.threshold",
                    format!("{t} must lie in [-1, 1]"),
                ));
            }
        }
        self.normalization_params()
            .validate()
            .map_err(|e| match e {
                Error::Config { message, .. } => Error::config("normalize.merge_avg_sim", message),
                other => other,
            })?;
        self.class_filters()?;
        self.periods()?;
        self.stability_config().validate()?;
        self.psm_config().validate()?;
        if self.citation.terms.is_empty() {
            return Err(Error::config(
                "citation.terms",
                "term list must not be empty",
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers", "must be at least 1"));
        }
        Ok(())
    }

    pub fn years(&self) -> Result<YearRange> {
        self.corpus.years.parse().map_err(|_| {
            Error::config(
                "corpus.years",
                format!("expected START-END, got `{}`", self.corpus.years),
            )
        })
    }

    pub fn corpus_paths(&self) -> CorpusPaths {
        CorpusPaths {
            papers: self.corpus.papers.clone(),
            entities: self.corpus.entities.clone(),
            embeddings: self.corpus.embeddings.clone(),
            citations: self.corpus.citations.clone(),
        }
    }

    pub fn corpus_config(&self) -> Result<CorpusConfig> {
        Ok(CorpusConfig {
            years: self.years()?,
            categories: CategoryMap::with_overrides(
                self.corpus.categories.iter().map(|(k, v)| (k.as_str(), *v)),
            ),
            embedding_dim: self.corpus.embedding_dim,
        })
    }

    fn normalization_params(&self) -> NormalizationConfig {
        NormalizationConfig {
            same_cluster_sim: self.normalize.same_cluster_sim,
            merge_avg_sim: self.normalize.merge_avg_sim,
            min_annual_freq: self.normalize.min_annual_freq,
            ..NormalizationConfig::default()
        }
    }

    /// Normalization settings with the abbreviation map and stoplist loaded.
    pub fn normalization(&self) -> Result<NormalizationConfig> {
        let mut cfg = self.normalization_params();
        if let Some(p) = &self.normalize.abbreviations {
            let pairs = read_abbreviations(p)?;
            cfg = cfg.with_abbreviations(pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())));
        }
        if let Some(p) = &self.normalize.stoplist {
            let terms = read_stoplist(p)?;
            cfg = cfg.with_stoplist(terms.iter().map(String::as_str));
        }
        Ok(cfg)
    }

    pub fn class_filters(&self) -> Result<Vec<ClassFilter>> {
        if self.entity_sim.classes.is_empty() {
            return Err(Error::config(
                "entity_sim.classes",
                "at least one class is required",
            ));
        }
        self.entity_sim
            .classes
            .iter()
            .map(|c| parse_class_filter(c))
            .collect()
    }

    pub fn periods(&self) -> Result<Vec<Period>> {
        if self.regression.periods.is_empty() {
            return Err(Error::config(
                "regression.periods",
                "at least one period is required",
            ));
        }
        self.regression
            .periods
            .iter()
            .map(|p| {
                p.parse()
                    .map_err(|_| Error::config("regression.periods", format!("bad period `{p}`")))
            })
            .collect()
    }

    pub fn network_seed(&self) -> u64 {
        self.network.seed.unwrap_or(self.seed)
    }

    pub fn stability_config(&self) -> StabilityConfig {
        StabilityConfig {
            proportions: self.stability.proportions.clone(),
            repetitions: self.stability.repetitions,
            seed: self.stability.seed.unwrap_or(self.seed),
            metrics: self.stability.metrics.clone(),
        }
    }

    pub fn psm_config(&self) -> PsmConfig {
        PsmConfig {
            ratios: self.psm.ratios.clone(),
            terms: self.citation.terms.clone(),
        }
    }
}

/// Best-effort dotted path of the key a TOML error points at.
fn toml_field(text: &str, e: &toml::de::Error) -> String {
    let Some(span) = e.span() else {
        return "<toml>".into();
    };
    let mut table = String::new();
    let mut key = String::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            table = trimmed
                .trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string();
        }
        if offset + line.len() > span.start {
            if let Some((k, _)) = trimmed.split_once('=') {
                key = k.trim().to_string();
            }
            break;
        }
        offset += line.len();
    }
    match (table.is_empty(), key.is_empty()) {
        (true, true) => "<toml>".into(),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}
