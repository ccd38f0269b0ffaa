//! Seeded synthetic data: a full corpus generator that writes the input file
//! formats with a ground-truth sidecar, plus small in-memory generators with
//! planted structure for tests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    Affiliation, CitationEdge, Corpus, CorpusConfig, EntityClass, EntityMention, PaperRecord,
    PaperType, YearRange,
};
use crate::entnorm::{edit_similarity, EntityTable};
use crate::error::{Error, Result};
use crate::studies::{PsmUnit, RegressionRow};

fn aff(author: u32, inst: impl Into<String>, category: &str) -> Affiliation {
    Affiliation {
        author_index: author,
        institution_id: inst.into(),
        category: category.to_string(),
    }
}

fn affiliations_for(ty: PaperType, rng: &mut impl Rng) -> Vec<Affiliation> {
    let n_auth = rng.random_range(1..=4u32);
    let academic = |rng: &mut dyn rand::RngCore, a: u32| {
        let cat = if rng.random_bool(0.15) {
            "healthcare"
        } else {
            "education"
        };
        aff(a, format!("uni-{}", rng.random_range(0..20)), cat)
    };
    let industry = |rng: &mut dyn rand::RngCore, a: u32| {
        aff(a, format!("corp-{}", rng.random_range(0..10)), "company")
    };
    match ty {
        PaperType::Academic => (0..n_auth).map(|a| academic(rng, a)).collect(),
        PaperType::Industry => (0..n_auth).map(|a| industry(rng, a)).collect(),
        PaperType::Cooperation => {
            let n = n_auth.max(2);
            (0..n)
                .map(|a| match a {
                    0 => academic(rng, a),
                    1 => industry(rng, a),
                    _ if rng.random_bool(0.5) => academic(rng, a),
                    _ => industry(rng, a),
                })
                .collect()
        }
        PaperType::Excluded => vec![aff(0, "gov-0", "government")],
    }
}

fn paper(id: &str, year: i32, ty: PaperType, rng: &mut impl Rng) -> PaperRecord {
    PaperRecord::new(
        id,
        year,
        format!("paper {id}"),
        None,
        affiliations_for(ty, rng),
    )
}

/// Five papers over 2020-2021 with hand-written entity lists.
///
/// 2020: two academic, one industry, one cooperation; 2021: one academic.
pub fn tiny_corpus() -> (Corpus, EntityTable) {
    use EntityClass::*;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    type Row = (&'static str, i32, PaperType, Vec<(u32, EntityClass)>);
    let spec: [Row; 5] = [
        (
            "a1",
            2020,
            PaperType::Academic,
            vec![(0, Method), (0, Method), (1, Tool)],
        ),
        ("a2", 2020, PaperType::Academic, vec![(2, Dataset)]),
        (
            "i1",
            2020,
            PaperType::Industry,
            vec![(0, Method), (3, Metric)],
        ),
        (
            "c1",
            2020,
            PaperType::Cooperation,
            vec![(0, Method), (1, Tool)],
        ),
        (
            "a3",
            2021,
            PaperType::Academic,
            vec![(1, Tool), (4, Method)],
        ),
    ];
    let papers = spec
        .iter()
        .map(|(id, y, t, _)| paper(id, *y, *t, &mut rng))
        .collect();
    let config = CorpusConfig {
        years: YearRange::new(2020, 2021).expect("valid range"),
        ..CorpusConfig::default()
    };
    let corpus =
        Corpus::from_parts(papers, vec![], vec![], vec![], &config).expect("valid tiny corpus");
    let mut lists = vec![Vec::new(); corpus.len()];
    for (id, _, _, ents) in &spec {
        lists[corpus.index_of(id).expect("paper present")] = ents.clone();
    }
    (corpus, EntityTable::from_lists(lists))
}

/// Papers with random Gaussian embeddings and no entities or citations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSpec {
    pub years: YearRange,
    pub academic: usize,
    pub industry: usize,
    pub cooperation: usize,
    pub dim: usize,
    pub seed: u64,
    /// Every paper gets the same embedding.
    pub constant: bool,
}

impl EmbeddedSpec {
    pub fn small(seed: u64) -> Self {
        EmbeddedSpec {
            years: YearRange::new(2019, 2020).expect("valid range"),
            academic: 3,
            industry: 3,
            cooperation: 1,
            dim: 8,
            seed,
            constant: false,
        }
    }

    pub fn constant() -> Self {
        EmbeddedSpec {
            constant: true,
            ..EmbeddedSpec::small(0)
        }
    }
}

pub fn embedded_corpus(spec: &EmbeddedSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut papers = Vec::new();
    let mut embeddings = Vec::new();
    for y in spec.years.years() {
        for (ty, n) in [
            (PaperType::Academic, spec.academic),
            (PaperType::Industry, spec.industry),
            (PaperType::Cooperation, spec.cooperation),
        ] {
            for k in 0..n {
                let id = format!("{}-{y}-{k}", ty.as_str());
                papers.push(paper(&id, y, ty, &mut rng));
                let v: Vec<f64> = if spec.constant {
                    (0..spec.dim)
                        .map(|d| if d == 0 { 1.0 } else { 0.0 })
                        .collect()
                } else {
                    (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect()
                };
                embeddings.push((id, v));
            }
        }
    }
    let config = CorpusConfig {
        years: spec.years,
        ..CorpusConfig::default()
    };
    Corpus::from_parts(papers, vec![], embeddings, vec![], &config).expect("valid embedded corpus")
}

/// Single-year citing corpus where every citer draws references from the
/// same category distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CitationSpec {
    pub references: usize,
    pub papers_per_type: usize,
    pub category_probs: [f64; 3],
    pub seed: u64,
}

impl CitationSpec {
    pub fn blind(references: usize, seed: u64) -> Self {
        CitationSpec {
            references,
            papers_per_type: 30,
            category_probs: [0.5, 0.3, 0.2],
            seed,
        }
    }
}

pub fn citation_corpus(spec: &CitationSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut papers = Vec::new();
    for ty in PaperType::CLASSIFIED {
        for k in 0..spec.papers_per_type {
            papers.push(paper(&format!("{}-{k}", ty.as_str()), 2020, ty, &mut rng));
        }
    }
    let cat = WeightedIndex::new(spec.category_probs).expect("positive weights");
    let citations = (0..spec.references)
        .map(|r| {
            let citer = &papers[rng.random_range(0..papers.len())];
            CitationEdge {
                citing_id: citer.paper_id.clone(),
                cited_key: format!("ref-{r}"),
                cited_year: 2019,
                cited_type: PaperType::CLASSIFIED[cat.sample(&mut rng)],
            }
        })
        .collect();
    let config = CorpusConfig {
        years: YearRange::new(2020, 2020).expect("valid range"),
        ..CorpusConfig::default()
    };
    Corpus::from_parts(papers, vec![], vec![], citations, &config).expect("valid citation corpus")
}

/// Row-level generator for the HHI regression with known coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFixture {
    pub n: usize,
    pub years: YearRange,
    pub intercept: f64,
    pub beta_hhi: f64,
    /// ln(institutions), ln(authors), ln(references).
    pub beta_controls: [f64; 3],
    pub beta_academic: f64,
    /// Slope of the planted year effect per year.
    pub year_trend: f64,
    pub noise_sd: f64,
}

impl Default for RegressionFixture {
    fn default() -> Self {
        RegressionFixture {
            n: 5000,
            years: YearRange::default(),
            intercept: 0.6,
            beta_hhi: -0.04,
            beta_controls: [0.01, -0.005, 0.02],
            beta_academic: -0.03,
            year_trend: 0.004,
            noise_sd: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionTruth {
    pub reference_year: i32,
    pub intercept: f64,
    pub beta_hhi: f64,
    pub beta_controls: [f64; 3],
    pub beta_academic: f64,
    /// Year effects relative to the reference year.
    pub year_effects: BTreeMap<i32, f64>,
}

impl RegressionTruth {
    /// Planted coefficients under the design's column names.
    pub fn coefficients(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("_cons".to_string(), self.intercept),
            ("hhi".to_string(), self.beta_hhi),
            ("ln_inst_num".to_string(), self.beta_controls[0]),
            ("ln_auth_num".to_string(), self.beta_controls[1]),
            ("ln_ref".to_string(), self.beta_controls[2]),
            ("academic".to_string(), self.beta_academic),
        ];
        out.extend(
            self.year_effects
                .iter()
                .map(|(y, e)| (format!("year_{y}"), *e)),
        );
        out
    }
}

fn planted_year_effect(spec: &RegressionFixture, y: i32) -> f64 {
    let t = f64::from(y - spec.years.start);
    spec.year_trend * t + 0.01 * (t * 0.7).sin()
}

pub fn regression_rows(
    spec: &RegressionFixture,
    seed: u64,
) -> (Vec<RegressionRow>, RegressionTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let years: Vec<i32> = spec.years.years().collect();
    let mut rows = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        // cycle through years first so every year is present
        let year = if i < years.len() {
            years[i]
        } else {
            years[rng.random_range(0..years.len())]
        };
        let academic = rng.random_bool(0.6);
        let hhi = rng.random_range(1.0 / 3.0..=1.0);
        let n_institutions = rng.random_range(1..=6);
        let n_authors = rng.random_range(n_institutions..=10);
        let n_references = rng.random_range(1..=80);
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise_sd;
        let semsim = spec.intercept
            + spec.beta_hhi * hhi
            + spec.beta_controls[0] * (n_institutions as f64).ln()
            + spec.beta_controls[1] * (n_authors as f64).ln()
            + spec.beta_controls[2] * (n_references as f64).ln()
            + spec.beta_academic * f64::from(u8::from(academic))
            + planted_year_effect(spec, year)
            + noise;
        rows.push(RegressionRow {
            paper_id: format!("r{i:05}"),
            year,
            academic,
            semsim,
            hhi,
            n_institutions,
            n_authors,
            n_references,
        });
    }
    let reference_year = rows
        .iter()
        .map(|r| r.year)
        .min()
        .unwrap_or(spec.years.start);
    let base = planted_year_effect(spec, reference_year);
    let year_effects = rows
        .iter()
        .map(|r| r.year)
        .filter(|&y| y != reference_year)
        .map(|y| (y, planted_year_effect(spec, y) - base))
        .collect();
    let truth = RegressionTruth {
        reference_year,
        intercept: spec.intercept + base,
        beta_hhi: spec.beta_hhi,
        beta_controls: spec.beta_controls,
        beta_academic: spec.beta_academic,
        year_effects,
    };
    (rows, truth)
}

/// Matching units where treatment depends on every covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsmFixture {
    pub n: usize,
    /// Approximate treated share at zero confounding.
    pub treated_share: f64,
    /// Scale of the covariate effect on the treatment log-odds.
    pub confounding: f64,
    /// Shift of the academic-citation share for treated units.
    pub treated_effect: f64,
}

impl Default for PsmFixture {
    fn default() -> Self {
        PsmFixture {
            n: 3000,
            treated_share: 0.1,
            confounding: 1.0,
            treated_effect: -0.12,
        }
    }
}

pub fn psm_units_fixture(spec: &PsmFixture, seed: u64) -> Vec<PsmUnit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = (spec.treated_share / (1.0 - spec.treated_share)).ln();
    (0..spec.n)
        .map(|i| {
            let year = rng.random_range(2000..=2022);
            let inst = rng.random_range(1..=6);
            let auth = rng.random_range(1..=10);
            let refs = rng.random_range(5..=60);
            // standardized covariates from the uniform moments
            let z = [
                (f64::from(inst) - 3.5) / 1.708,
                (f64::from(auth) - 5.5) / 2.872,
                (f64::from(refs) - 32.5) / 16.02,
                (f64::from(year) - 2011.0) / 6.63,
            ];
            let eta = base + spec.confounding * (0.5 * z[0] + 0.5 * z[1] + 0.4 * z[2] + 0.9 * z[3]);
            let treated = rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp());
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.1;
            let outcome =
                (0.55 - 0.05 * z[3] + if treated { spec.treated_effect } else { 0.0 } + noise)
                    .clamp(0.0, 1.0);
            PsmUnit {
                paper_id: format!("u{i:05}"),
                treated,
                covariates: [
                    f64::from(inst),
                    f64::from(auth),
                    f64::from(refs),
                    f64::from(year),
                ],
                outcome,
            }
        })
        .collect()
}

/// Parameters of the full synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub years: YearRange,
    pub academic_per_year: usize,
    pub industry_per_year: usize,
    pub cooperation_per_year: usize,
    /// Distinct canonical entities.
    pub vocabulary: usize,
    pub mentions_per_paper: usize,
    pub dim: usize,
    /// Mean reference count; each paper draws from half to one and a half times this.
    pub refs_per_paper: usize,
    /// Base probability that a paper reports hardware in its abstract.
    pub gpu_share: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            years: YearRange::new(2013, 2022).expect("valid range"),
            academic_per_year: 24,
            industry_per_year: 16,
            cooperation_per_year: 3,
            vocabulary: 40,
            mentions_per_paper: 10,
            dim: 16,
            refs_per_paper: 6,
            gpu_share: 0.15,
        }
    }
}

const WORDS: [&str; 24] = [
    "spectral",
    "boosting",
    "transformer",
    "lattice",
    "bayesian",
    "pointer",
    "gradient",
    "recurrent",
    "sentiment",
    "parsing",
    "embedding",
    "alignment",
    "dropout",
    "attention",
    "kernel",
    "hierarchical",
    "contrastive",
    "summarizer",
    "tagger",
    "benchmark",
    "corpus",
    "lexicon",
    "decoder",
    "retrieval",
];

/// Canonical names that stay well apart in edit similarity.
fn entity_names(n: usize) -> Result<Vec<String>> {
    let w = WORDS.len();
    if n > w * (w - 1) * (w - 2) {
        return Err(Error::Invalid(format!(
            "vocabulary of {n} entities exceeds the {} three-word names available",
            w * (w - 1) * (w - 2)
        )));
    }
    let mut out: Vec<String> = Vec::new();
    'outer: for a in 0..WORDS.len() {
        for b in 0..WORDS.len() {
            for c in 0..WORDS.len() {
                if a == b || b == c || a == c {
                    continue;
                }
                let name = format!("{} {} {}", WORDS[a], WORDS[b], WORDS[c]);
                if name.len() < 21 {
                    continue;
                }
                let far = out
                    .iter()
                    .all(|o| edit_similarity(o, &name).map(|s| s < 0.6).unwrap_or(false));
                if far {
                    out.push(name);
                    if out.len() == n {
                        break 'outer;
                    }
                }
            }
        }
    }
    if out.len() < n {
        return Err(Error::Invalid(format!(
            "vocabulary of {n} entities exceeds the {} distinct names available",
            out.len()
        )));
    }
    Ok(out)
}

fn variants(canonical: &str) -> [String; 3] {
    [
        canonical.to_string(),
        format!("{canonical}s"),
        canonical.replacen(' ', "-", 1),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedCluster {
    pub canonical: String,
    pub class: EntityClass,
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub spec: SyntheticSpec,
    pub clusters: Vec<PlantedCluster>,
    /// Cited-category probabilities (academic, industry, cooperation,
    /// excluded) per citing type, before the hardware shift.
    pub citation_distributions: BTreeMap<PaperType, [f64; 4]>,
    /// Academic share moved to industry for papers that report hardware.
    pub hardware_citation_shift: f64,
    /// Planted coefficients of the regression row generator.
    pub regression: RegressionFixture,
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub papers: Vec<PaperRecord>,
    pub mentions: Vec<EntityMention>,
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub citations: Vec<CitationEdge>,
    pub truth: GroundTruth,
}

const HARDWARE_SHIFT: f64 = 0.15;

fn citation_distributions() -> BTreeMap<PaperType, [f64; 4]> {
    BTreeMap::from([
        (PaperType::Academic, [0.58, 0.22, 0.15, 0.05]),
        (PaperType::Industry, [0.33, 0.47, 0.15, 0.05]),
        (PaperType::Cooperation, [0.43, 0.32, 0.20, 0.05]),
    ])
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let per_year = self.academic_per_year + self.industry_per_year + self.cooperation_per_year;
        if per_year == 0 {
            return Err(Error::config("fixture", "spec generates no papers"));
        }
        if self.vocabulary == 0 && self.mentions_per_paper > 0 {
            return Err(Error::config(
                "fixture.vocabulary",
                "mentions need a non-empty vocabulary",
            ));
        }
        if self.dim == 0 {
            return Err(Error::config(
                "fixture.dim",
                "embedding dimension must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.gpu_share) {
            return Err(Error::config("fixture.gpu_share", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn one_paper() -> Self {
        SyntheticSpec {
            years: YearRange::new(2020, 2020).expect("valid range"),
            academic_per_year: 1,
            industry_per_year: 0,
            cooperation_per_year: 0,
            ..SyntheticSpec::default()
        }
    }
}

pub fn synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = entity_names(spec.vocabulary)?;
    let clusters: Vec<PlantedCluster> = names
        .iter()
        .enumerate()
        .map(|(i, n)| PlantedCluster {
            canonical: n.clone(),
            class: EntityClass::ALL[i % 4],
            variants: variants(n).to_vec(),
        })
        .collect();
    let entity_vecs: Vec<Vec<f64>> = (0..spec.vocabulary)
        .map(|_| unit_vector(&mut rng, spec.dim))
        .collect();
    // shared Zipf-like popularity with a mild side tilt
    let popularity = |e: usize, ty: PaperType| {
        let base = 1.0 / (e as f64 + 1.0).powf(0.8);
        let tilt = match ty {
            PaperType::Industry => 1.0 + 0.5 * (e as f64).cos(),
            PaperType::Academic => 1.0 + 0.5 * (e as f64).sin(),
            _ => 1.0,
        };
        base * tilt.max(0.05)
    };
    let pickers: BTreeMap<PaperType, Option<WeightedIndex<f64>>> = PaperType::CLASSIFIED
        .iter()
        .map(|&t| {
            let w: Vec<f64> = (0..spec.vocabulary).map(|e| popularity(e, t)).collect();
            (t, WeightedIndex::new(w).ok())
        })
        .collect();
    let dists = citation_distributions();
    let span = (spec.years.end - spec.years.start).max(1) as f64;

    let mut papers = Vec::new();
    let mut mentions = Vec::new();
    let mut embeddings = Vec::new();
    let mut citations = Vec::new();
    for y in spec.years.years() {
        for (ty, n) in [
            (PaperType::Academic, spec.academic_per_year),
            (PaperType::Industry, spec.industry_per_year),
            (PaperType::Cooperation, spec.cooperation_per_year),
        ] {
            for k in 0..n {
                let id = format!("{}-{y}-{k:03}", &ty.as_str()[..3]);
                let p_gpu = (spec.gpu_share * (0.4 + 1.2 * f64::from(y - spec.years.start) / span))
                    .min(1.0);
                let gpu = rng.random_bool(p_gpu);
                let abstract_text = if gpu {
                    format!(
                        "We train the model on {} GPUs for several days.",
                        rng.random_range(2..=64)
                    )
                } else {
                    "We study the task with a compact model.".to_string()
                };
                let mut p = PaperRecord::new(
                    &id,
                    y,
                    format!("Synthetic study {id}"),
                    Some(abstract_text),
                    affiliations_for(ty, &mut rng),
                );
                p.title = format!("Synthetic study {id}");
                let mut emb = vec![0.0; spec.dim];
                if let Some(pick) = &pickers[&ty] {
                    for _ in 0..spec.mentions_per_paper {
                        let e = pick.sample(&mut rng);
                        let c = &clusters[e];
                        let surface = c.variants[rng.random_range(0..c.variants.len())].clone();
                        mentions.push(EntityMention {
                            paper_id: id.clone(),
                            surface,
                            class: c.class,
                            char_span: None,
                            year: y,
                        });
                        for (d, v) in emb.iter_mut().zip(&entity_vecs[e]) {
                            *d += v;
                        }
                    }
                }
                for d in emb.iter_mut() {
                    *d += 0.8 * rng.sample::<f64, _>(StandardNormal);
                }
                embeddings.push((id.clone(), emb));
                let mut probs = dists[&ty];
                if gpu {
                    let moved = probs[0].min(HARDWARE_SHIFT);
                    probs[0] -= moved;
                    probs[1] += moved;
                }
                let cat = WeightedIndex::new(probs).expect("positive weights");
                let n_refs =
                    rng.random_range(spec.refs_per_paper.div_ceil(2)..=spec.refs_per_paper * 3 / 2);
                for r in 0..n_refs {
                    let cited_type = [
                        PaperType::Academic,
                        PaperType::Industry,
                        PaperType::Cooperation,
                        PaperType::Excluded,
                    ][cat.sample(&mut rng)];
                    citations.push(CitationEdge {
                        citing_id: id.clone(),
                        cited_key: format!("{id}-ref{r}"),
                        cited_year: rng.random_range(spec.years.start.min(y - 5)..=y),
                        cited_type,
                    });
                }
                papers.push(p);
            }
        }
    }
    Ok(Synthetic {
        papers,
        mentions,
        embeddings,
        citations,
        truth: GroundTruth {
            seed,
            spec: spec.clone(),
            clusters,
            citation_distributions: dists,
            hardware_citation_shift: HARDWARE_SHIFT,
            regression: RegressionFixture::default(),
        },
    })
}

impl Synthetic {
    pub fn corpus(&self) -> Result<Corpus> {
        let config = CorpusConfig {
            years: self.truth.spec.years,
            embedding_dim: Some(self.truth.spec.dim),
            ..CorpusConfig::default()
        };
        Corpus::from_parts(
            self.papers.clone(),
            self.mentions.clone(),
            self.embeddings.clone(),
            self.citations.clone(),
            &config,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FixtureFiles {
    pub papers: PathBuf,
    pub entities: PathBuf,
    pub embeddings: PathBuf,
    pub citations: PathBuf,
    pub truth: PathBuf,
    pub config: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn io(p: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(p, e)
}

fn json(p: &Path) -> impl Fn(serde_json::Error) -> Error + '_ {
    move |e| Error::io(p, e.into())
}

fn csv_io(p: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(p, e.into())
}

/// A run configuration that points at the files `gen_fixture` writes.
pub fn fixture_config(spec: &SyntheticSpec, seed: u64) -> String {
    let YearRange { start, end } = spec.years;
    let periods = if end > start {
        let mid = start + (end - start) / 2;
        format!(
            "\"{start}-{end}\", \"{start}-{mid}\", \"{}-{end}\"",
            mid + 1
        )
    } else {
        format!("\"{start}-{end}\"")
    };
    format!(
        "seed = {seed}\n\
         out = \"out\"\n\
         \n\
         [corpus]\n\
         papers = \"papers.jsonl\"\n\
         entities = \"entities.jsonl\"\n\
         embeddings = \"embeddings.csv\"\n\
         citations = \"citations.csv\"\n\
         years = \"{start}-{end}\"\n\
         embedding_dim = {dim}\n\
         \n\
         [regression]\n\
         periods = [{periods}]\n",
        dim = spec.dim,
    )
}

/// Write a synthetic corpus in the input formats plus `truth.json` and a
/// `config.toml` that runs the pipeline over it.
pub fn gen_fixture(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<FixtureFiles> {
    let s = synthetic(spec, seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = FixtureFiles {
        papers: dir.join("papers.jsonl"),
        entities: dir.join("entities.jsonl"),
        embeddings: dir.join("embeddings.csv"),
        citations: dir.join("citations.csv"),
        truth: dir.join("truth.json"),
        config: dir.join("config.toml"),
    };

    let mut w = create(&files.papers)?;
    for p in &s.papers {
        serde_json::to_writer(&mut w, p).map_err(json(&files.papers))?;
        w.write_all(b"\n").map_err(io(&files.papers))?;
    }
    w.flush().map_err(io(&files.papers))?;

    let mut w = create(&files.entities)?;
    for m in &s.mentions {
        serde_json::to_writer(&mut w, m).map_err(json(&files.entities))?;
        w.write_all(b"\n").map_err(io(&files.entities))?;
    }
    w.flush().map_err(io(&files.entities))?;

    let mut w = csv::Writer::from_writer(create(&files.embeddings)?);
    let mut header = vec!["paper_id".to_string()];
    header.extend((0..spec.dim).map(|d| format!("v{d}")));
    w.write_record(&header).map_err(csv_io(&files.embeddings))?;
    for (id, v) in &s.embeddings {
        let mut rec = vec![id.clone()];
        rec.extend(v.iter().map(|x| format!("{x:.6}")));
        w.write_record(&rec).map_err(csv_io(&files.embeddings))?;
    }
    w.flush().map_err(io(&files.embeddings))?;

    let mut w = csv::Writer::from_writer(create(&files.citations)?);
    w.write_record(["citing_id", "cited_key", "cited_year", "cited_category"])
        .map_err(csv_io(&files.citations))?;
    for c in &s.citations {
        let cat = match c.cited_type {
            PaperType::Excluded => "government",
            t => t.as_str(),
        };
        w.write_record([
            c.citing_id.as_str(),
            c.cited_key.as_str(),
            &c.cited_year.to_string(),
            cat,
        ])
        .map_err(csv_io(&files.citations))?;
    }
    w.flush().map_err(io(&files.citations))?;

    let mut w = create(&files.truth)?;
    serde_json::to_writer_pretty(&mut w, &s.truth).map_err(json(&files.truth))?;
    w.write_all(b"\n").map_err(io(&files.truth))?;
    w.flush().map_err(io(&files.truth))?;

    fs::write(&files.config, fixture_config(spec, seed)).map_err(io(&files.config))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_far_apart_and_long() {
        let names = entity_names(40).unwrap();
        assert_eq!(names.len(), 40);
        for (i, a) in names.iter().enumerate() {
            assert!(a.len() >= 21);
            for v in variants(a) {
                assert!(edit_similarity(a, &v).unwrap() > 0.95, "{a} / {v}");
            }
            for b in &names[i + 1..] {
                assert!(edit_similarity(a, b).unwrap() < 0.6);
            }
        }
        assert!(entity_names(100_000).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticSpec::default();
        let a = synthetic(&spec, 5).unwrap();
        let b = synthetic(&spec, 5).unwrap();
        assert_eq!(a.papers, b.papers);
        assert_eq!(a.mentions, b.mentions);
        assert_eq!(a.citations, b.citations);
        let c = a.corpus().unwrap();
        assert_eq!(c.report().dropped_total(), 0);
    }

    #[test]
    fn one_paper_spec() {
        let s = synthetic(&SyntheticSpec::one_paper(), 1).unwrap();
        assert_eq!(s.papers.len(), 1);
        assert_eq!(s.corpus().unwrap().len(), 1);
        let bad = SyntheticSpec {
            academic_per_year: 0,
            industry_per_year: 0,
            cooperation_per_year: 0,
            ..SyntheticSpec::default()
        };
        assert!(synthetic(&bad, 1).is_err());
    }

    #[test]
    fn files_reload_and_repeat() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::default();
        let f1 = gen_fixture(&spec, 3, &dir.path().join("a")).unwrap();
        let f2 = gen_fixture(&spec, 3, &dir.path().join("b")).unwrap();
        for (a, b) in [
            (&f1.papers, &f2.papers),
            (&f1.embeddings, &f2.embeddings),
            (&f1.citations, &f2.citations),
            (&f1.truth, &f2.truth),
        ] {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }
        let corpus = crate::corpus::load_corpus(
            &crate::corpus::CorpusPaths {
                papers: f1.papers.clone(),
                entities: Some(f1.entities.clone()),
                embeddings: Some(f1.embeddings.clone()),
                citations: Some(f1.citations.clone()),
            },
            &CorpusConfig {
                years: spec.years,
                ..CorpusConfig::default()
            },
        )
        .unwrap();
        assert_eq!(corpus.report().dropped_total(), 0);
        assert_eq!(corpus.len(), 430);
    }
}
