//! Inferential studies: the HHI regression family, subsampling stability of
//! the similarity indicators, and propensity-score matching on compute demand.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::citeflow::{flag_paper, paper_breakdown};
use crate::corpus::{Corpus, EntityClass, PaperType, YearRange};
use crate::entnorm::{EntityId, EntityTable};
use crate::entsim::{cosine_bow, csv_err, StratumBow};
use crate::error::{Error, Result};
use crate::semsim::same_year_scores;
use crate::stats::{
    coefficient_of_variation, logit_fit, mann_whitney_u, mean, ols_robust, sample_var, stars, vif,
    DesignMatrix, FitResult,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Period {
    pub label: String,
    pub years: YearRange,
}

impl Period {
    pub fn new(start: i32, end: i32) -> Result<Self> {
        Ok(Period {
            label: format!("{start}-{end}"),
            years: YearRange::new(start, end)?,
        })
    }

    pub fn defaults() -> Vec<Period> {
        [(2000, 2022), (2000, 2012), (2013, 2017), (2018, 2022)]
            .into_iter()
            .map(|(a, b)| Period::new(a, b).expect("valid default period"))
            .collect()
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let r: YearRange = s.parse()?;
        Period::new(r.start, r.end)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// One observation of the HHI regression.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionRow {
    pub paper_id: String,
    pub year: i32,
    pub academic: bool,
    pub semsim: f64,
    pub hhi: f64,
    pub n_institutions: usize,
    pub n_authors: usize,
    pub n_references: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SampleReport {
    pub candidates: usize,
    pub no_hhi: usize,
    pub no_semsim: usize,
    pub no_references: usize,
    pub kept: usize,
}

/// Pure academic and industry papers with a defined HHI, a same-year score
/// and at least one reference.
pub fn regression_sample(corpus: &Corpus, q: f64) -> Result<(Vec<RegressionRow>, SampleReport)> {
    let scores = same_year_scores(corpus, q)?;
    let mut report = SampleReport::default();
    let mut rows = Vec::new();
    for (idx, p) in corpus.papers().iter().enumerate() {
        if !matches!(p.paper_type, PaperType::Academic | PaperType::Industry) {
            continue;
        }
        report.candidates += 1;
        let refs = corpus.n_references(idx);
        if refs == 0 {
            report.no_references += 1;
            continue;
        }
        let Some(hhi) = crate::citeflow::hhi(&paper_breakdown(corpus, idx)) else {
            report.no_hhi += 1;
            continue;
        };
        let Some(semsim) = scores[idx] else {
            report.no_semsim += 1;
            continue;
        };
        rows.push(RegressionRow {
            paper_id: p.paper_id.clone(),
            year: p.year,
            academic: p.paper_type == PaperType::Academic,
            semsim,
            hhi,
            n_institutions: p.n_institutions(),
            n_authors: p.n_authors(),
            n_references: refs,
        });
    }
    report.kept = rows.len();
    Ok((rows, report))
}

fn ln_count(v: usize, what: &str, id: &str) -> Result<f64> {
    if v == 0 {
        return Err(Error::Invalid(format!(
            "paper `{id}` has zero {what}; log undefined"
        )));
    }
    Ok((v as f64).ln())
}

pub const CONTROL_NAMES: [&str; 3] = ["ln_inst_num", "ln_auth_num", "ln_ref"];

/// Design: intercept, HHI, optional log controls, an academic dummy
/// (industry is the reference) and year dummies. The reference year defaults
/// to the earliest year in the sample. Dummies that are constant in the
/// sample are left out.
pub fn regression_design(
    rows: &[RegressionRow],
    full_controls: bool,
    reference_year: Option<i32>,
) -> Result<(DesignMatrix, Vec<f64>)> {
    let n = rows.len();
    let mut names = vec!["_cons".to_string(), "hhi".to_string()];
    let mut cols = vec![vec![1.0; n], rows.iter().map(|r| r.hhi).collect()];
    if full_controls {
        let mut c = [
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        ];
        for r in rows {
            c[0].push(ln_count(r.n_institutions, "institutions", &r.paper_id)?);
            c[1].push(ln_count(r.n_authors, "authors", &r.paper_id)?);
            c[2].push(ln_count(r.n_references, "references", &r.paper_id)?);
        }
        names.extend(CONTROL_NAMES.iter().map(|s| s.to_string()));
        cols.extend(c);
    }
    let n_academic = rows.iter().filter(|r| r.academic).count();
    if n_academic > 0 && n_academic < n {
        names.push("academic".into());
        cols.push(
            rows.iter()
                .map(|r| f64::from(u8::from(r.academic)))
                .collect(),
        );
    }
    let years: BTreeSet<i32> = rows.iter().map(|r| r.year).collect();
    let reference = reference_year.or_else(|| years.first().copied());
    for &y in &years {
        if Some(y) == reference {
            continue;
        }
        names.push(format!("year_{y}"));
        cols.push(
            rows.iter()
                .map(|r| f64::from(u8::from(r.year == y)))
                .collect(),
        );
    }
    let y = rows.iter().map(|r| r.semsim).collect();
    Ok((DesignMatrix::from_columns(names, cols)?, y))
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelResult {
    /// 1-based model number; odd models are HHI-only.
    pub model: usize,
    pub period: Period,
    pub full_controls: bool,
    pub fit: FitResult,
    /// Present for full-controls models.
    pub vif: Option<Vec<(String, f64)>>,
}

impl ModelResult {
    /// Mean VIF over every non-dummy predictor.
    pub fn mean_vif(&self) -> Option<f64> {
        let v = self.vif.as_ref()?;
        let main: Vec<f64> = v
            .iter()
            .filter(|(n, _)| !n.starts_with("year_"))
            .map(|&(_, x)| x)
            .collect();
        mean(&main)
    }
}

pub fn fit_model(
    rows: &[RegressionRow],
    period: &Period,
    full_controls: bool,
    model: usize,
) -> Result<ModelResult> {
    let sample: Vec<RegressionRow> = rows
        .iter()
        .filter(|r| period.years.contains(r.year))
        .cloned()
        .collect();
    if sample.is_empty() {
        return Err(Error::Invalid(format!(
            "regression sample for period {period} is empty"
        )));
    }
    let (x, y) = regression_design(&sample, full_controls, None)?;
    let fit = ols_robust(&x, &y)?.result;
    let vif = if full_controls { Some(vif(&x)?) } else { None };
    Ok(ModelResult {
        model,
        period: period.clone(),
        full_controls,
        fit,
        vif,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionFamily {
    pub models: Vec<ModelResult>,
    pub sample: SampleReport,
}

/// HHI-only and full-controls models for each period, numbered in order.
pub fn run_regression_rows(rows: &[RegressionRow], periods: &[Period]) -> Result<Vec<ModelResult>> {
    let jobs: Vec<(usize, &Period, bool)> = periods
        .iter()
        .enumerate()
        .flat_map(|(i, p)| [(2 * i + 1, p, false), (2 * i + 2, p, true)])
        .collect();
    jobs.into_par_iter()
        .map(|(m, p, full)| fit_model(rows, p, full, m))
        .collect()
}

pub fn run_regression(corpus: &Corpus, periods: &[Period], q: f64) -> Result<RegressionFamily> {
    let (rows, sample) = regression_sample(corpus, q)?;
    let models = run_regression_rows(&rows, periods)?;
    Ok(RegressionFamily { models, sample })
}

/// One column per model; coefficient rows carry stars, standard errors sit in
/// parentheses on the following row. Year dummies are summarised as `year_fe`.
pub fn write_regression_table<W: Write>(w: W, models: &[ModelResult]) -> Result<()> {
    let mut terms: Vec<String> = Vec::new();
    for m in models {
        for n in &m.fit.names {
            if !n.starts_with("year_") && n != "_cons" && !terms.contains(n) {
                terms.push(n.clone());
            }
        }
    }
    terms.push("_cons".into());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["term".to_string()];
    header.extend(
        models
            .iter()
            .map(|m| format!("model_{} ({})", m.model, m.period)),
    );
    out.write_record(&header).map_err(csv_err)?;
    for t in &terms {
        let mut coef = vec![t.clone()];
        let mut se = vec![String::new()];
        for m in models {
            match (m.fit.coefficient(t), m.fit.std_error(t), m.fit.p_value(t)) {
                (Some(b), Some(s), Some(p)) => {
                    coef.push(format!("{b:.4}{}", stars(p)));
                    se.push(format!("({s:.4})"));
                }
                _ => {
                    coef.push(String::new());
                    se.push(String::new());
                }
            }
        }
        out.write_record(&coef).map_err(csv_err)?;
        out.write_record(&se).map_err(csv_err)?;
    }
    let mut fe = vec!["year_fe".to_string()];
    let mut nrow = vec!["n".to_string()];
    let mut r2 = vec!["r_squared".to_string()];
    let mut mv = vec!["mean_vif".to_string()];
    for m in models {
        fe.push("yes".into());
        nrow.push(m.fit.n_obs.to_string());
        r2.push(format!("{:.4}", m.fit.r_squared));
        mv.push(m.mean_vif().map_or(String::new(), |v| format!("{v:.3}")));
    }
    for rec in [fe, nrow, r2, mv] {
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Long-form coefficients: (model, period, term, coefficient, robust_se, p_value, stars).
pub fn write_coefficients<W: Write>(w: W, models: &[ModelResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "model",
        "period",
        "term",
        "coefficient",
        "robust_se",
        "p_value",
        "stars",
    ])
    .map_err(csv_err)?;
    for m in models {
        for (i, n) in m.fit.names.iter().enumerate() {
            let p = m.fit.p_values[i];
            out.write_record([
                m.model.to_string(),
                m.period.label.clone(),
                n.clone(),
                format!("{:.10}", m.fit.coefficients[i]),
                format!("{:.10}", m.fit.robust_se[i]),
                format!("{p:.6}"),
                stars(p).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityMetric {
    EntityAll,
    EntityMethod,
    CollaborationShare,
}

impl StabilityMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            StabilityMetric::EntityAll => "entity-all",
            StabilityMetric::EntityMethod => "entity-method",
            StabilityMetric::CollaborationShare => "collaboration-share",
        }
    }
}

impl FromStr for StabilityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity-all" => Ok(StabilityMetric::EntityAll),
            "entity-method" => Ok(StabilityMetric::EntityMethod),
            "collaboration-share" => Ok(StabilityMetric::CollaborationShare),
            _ => Err(Error::config(
                "stability.metrics",
                format!("unknown metric `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub proportions: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub metrics: Vec<StabilityMetric>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            proportions: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            repetitions: 10,
            seed: 42,
            metrics: vec![
                StabilityMetric::EntityAll,
                StabilityMetric::EntityMethod,
                StabilityMetric::CollaborationShare,
            ],
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proportions.is_empty() {
            return Err(Error::config(
                "stability.proportions",
                "at least one proportion is required",
            ));
        }
        if let Some(p) = self.proportions.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::config(
                "stability.proportions",
                format!("{p} is outside (0, 1]"),
            ));
        }
        if self.repetitions < 2 {
            return Err(Error::config(
                "stability.repetitions",
                "need at least 2 repetitions",
            ));
        }
        if self.metrics.is_empty() {
            return Err(Error::config(
                "stability.metrics",
                "at least one metric is required",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvCell {
    pub metric: StabilityMetric,
    pub proportion: f64,
    pub year: i32,
    /// `None` when the metric's mean over repetitions is zero.
    pub cv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSummary {
    pub metric: StabilityMetric,
    pub proportion: f64,
    pub mean_cv: Option<f64>,
    /// Mann–Whitney p against the collaboration-share CVs at the same proportion.
    pub u_test_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub cells: Vec<CvCell>,
    pub summary: Vec<CvSummary>,
}

impl StabilityReport {
    pub fn summary_for(&self, metric: StabilityMetric, proportion: f64) -> Option<&CvSummary> {
        self.summary
            .iter()
            .find(|s| s.metric == metric && s.proportion == proportion)
    }
}

/// Metric values for each year on a selection of papers per year.
fn metric_series(
    corpus: &Corpus,
    entities: &EntityTable,
    selection: &BTreeMap<i32, Vec<usize>>,
    metric: StabilityMetric,
) -> BTreeMap<i32, f64> {
    let class = match metric {
        StabilityMetric::EntityMethod => Some(EntityClass::Method),
        _ => None,
    };
    selection
        .iter()
        .map(|(&year, papers)| {
            let value = match metric {
                StabilityMetric::CollaborationShare => {
                    let coop = papers
                        .iter()
                        .filter(|&&i| corpus.paper(i).paper_type == PaperType::Cooperation)
                        .count();
                    if papers.is_empty() {
                        0.0
                    } else {
                        coop as f64 / papers.len() as f64
                    }
                }
                StabilityMetric::EntityAll | StabilityMetric::EntityMethod => {
                    let bow = |ty: PaperType| {
                        let mut counts: BTreeMap<EntityId, u64> = BTreeMap::new();
                        for &i in papers.iter().filter(|&&i| corpus.paper(i).paper_type == ty) {
                            for &(e, c) in entities.mentions(i) {
                                if class.is_none_or(|f| f == c) {
                                    *counts.entry(e).or_insert(0) += 1;
                                }
                            }
                        }
                        let side = ty.side().expect("pure type has a side");
                        StratumBow::from_counts(crate::corpus::Stratum { year, side }, counts)
                    };
                    cosine_bow(&bow(PaperType::Academic), &bow(PaperType::Industry))
                }
            };
            (year, value)
        })
        .collect()
}

/// Subsample each year's classified papers at each proportion, repeatedly,
/// and report the coefficient of variation of every metric.
pub fn cv_stability(
    corpus: &Corpus,
    entities: &EntityTable,
    config: &StabilityConfig,
) -> Result<StabilityReport> {
    config.validate()?;
    let by_year: BTreeMap<i32, Vec<usize>> = corpus
        .years()
        .years()
        .map(|y| {
            let papers: Vec<usize> = PaperType::CLASSIFIED
                .iter()
                .flat_map(|&t| corpus.papers_of(y, t))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            (y, papers)
        })
        .filter(|(_, p)| !p.is_empty())
        .collect();

    let jobs: Vec<(usize, usize)> = (0..config.proportions.len())
        .flat_map(|r| (0..config.repetitions).map(move |k| (r, k)))
        .collect();
    // values[(r, rep)][metric] = per-year series
    type Job = ((usize, usize), Vec<BTreeMap<i32, f64>>);
    let values: Vec<Job> = jobs
        .into_par_iter()
        .map(|(r, rep)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((r * config.repetitions + rep) as u64);
            let prop = config.proportions[r];
            let selection: BTreeMap<i32, Vec<usize>> = by_year
                .iter()
                .map(|(&y, papers)| {
                    let k = ((prop * papers.len() as f64).round() as usize).clamp(1, papers.len());
                    let mut picked: Vec<usize> = sample(&mut rng, papers.len(), k)
                        .into_iter()
                        .map(|i| papers[i])
                        .collect();
                    picked.sort_unstable();
                    (y, picked)
                })
                .collect();
            let series = config
                .metrics
                .iter()
                .map(|&m| metric_series(corpus, entities, &selection, m))
                .collect();
            ((r, rep), series)
        })
        .collect();

    let mut cells = Vec::new();
    let mut per: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (ri, &prop) in config.proportions.iter().enumerate() {
        for (mi, &metric) in config.metrics.iter().enumerate() {
            for &year in by_year.keys() {
                let samples: Vec<f64> = values
                    .iter()
                    .filter(|((r, _), _)| *r == ri)
                    .map(|(_, s)| s[mi][&year])
                    .collect();
                let cv = coefficient_of_variation(&samples).map(f64::abs);
                if let Some(v) = cv {
                    per.entry((mi, ri)).or_default().push(v);
                }
                cells.push(CvCell {
                    metric,
                    proportion: prop,
                    year,
                    cv,
                });
            }
        }
    }
    let collab = config
        .metrics
        .iter()
        .position(|&m| m == StabilityMetric::CollaborationShare);
    let mut summary = Vec::new();
    for (ri, &prop) in config.proportions.iter().enumerate() {
        for (mi, &metric) in config.metrics.iter().enumerate() {
            let own = per.get(&(mi, ri)).cloned().unwrap_or_default();
            let u_test_p = match collab {
                Some(c) if c != mi => per
                    .get(&(c, ri))
                    .filter(|other| !other.is_empty() && !own.is_empty())
                    .and_then(|other| mann_whitney_u(&own, other).ok())
                    .map(|r| r.p_value),
                _ => None,
            };
            summary.push(CvSummary {
                metric,
                proportion: prop,
                mean_cv: mean(&own),
                u_test_p,
            });
        }
    }
    Ok(StabilityReport { cells, summary })
}

pub const PSM_COVARIATES: [&str; 4] = ["n_institutions", "n_authors", "n_references", "year"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsmUnit {
    pub paper_id: String,
    pub treated: bool,
    /// In [`PSM_COVARIATES`] order.
    pub covariates: [f64; 4],
    /// Share of classified references that point to academic papers.
    pub outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsmConfig {
    pub ratios: Vec<usize>,
    pub terms: Vec<String>,
}

impl Default for PsmConfig {
    fn default() -> Self {
        PsmConfig {
            ratios: vec![3, 5],
            terms: crate::citeflow::DEFAULT_HARDWARE_TERMS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl PsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.ratios.contains(&0) {
            return Err(Error::config(
                "psm.ratios",
                "ratios must be non-empty and at least 1",
            ));
        }
        if self.terms.is_empty() {
            return Err(Error::config("psm.terms", "term list must not be empty"));
        }
        Ok(())
    }
}

/// Classified papers with at least one classified reference.
pub fn psm_units(corpus: &Corpus, terms: &[String]) -> Vec<PsmUnit> {
    (0..corpus.len())
        .filter(|&i| corpus.paper(i).paper_type.is_classified())
        .filter_map(|i| {
            let b = paper_breakdown(corpus, i);
            let outcome = b.share(PaperType::Academic)?;
            let p = corpus.paper(i);
            Some(PsmUnit {
                paper_id: p.paper_id.clone(),
                treated: flag_paper(corpus, i, terms).high_demand,
                covariates: [
                    p.n_institutions() as f64,
                    p.n_authors() as f64,
                    corpus.n_references(i) as f64,
                    f64::from(p.year),
                ],
                outcome,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchSet {
    pub ratio: usize,
    /// (treated index, matched control indices) into the unit list.
    pub pairs: Vec<(usize, Vec<usize>)>,
    /// Treated units that got fewer than `ratio` controls.
    pub short_matches: usize,
}

impl MatchSet {
    pub fn controls(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().flat_map(|(_, c)| c.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub smd_pre: f64,
    pub smd_post: f64,
    pub ratio: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeRow {
    pub ratio: usize,
    pub n_treated: usize,
    pub n_controls: usize,
    pub treated_mean: f64,
    pub control_mean: f64,
    pub u_statistic: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PsmReport {
    pub propensity: Vec<f64>,
    pub logit: FitResult,
    pub matches: Vec<MatchSet>,
    pub balance: Vec<BalanceRow>,
    pub outcomes: Vec<OutcomeRow>,
    pub warnings: Vec<String>,
}

/// Right/left "next unused" lookups over sorted controls.
struct Available {
    right: Vec<usize>,
    left: Vec<usize>,
}

impl Available {
    fn new(n: usize) -> Self {
        // index n is the right sentinel; left uses a shift of one, 0 is the sentinel
        Available {
            right: (0..=n).collect(),
            left: (0..=n).collect(),
        }
    }

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        while parent[x] != root {
            let next = parent[x];
            parent[x] = root;
            x = next;
        }
        root
    }

    /// Smallest unused position ≥ i, or `None`.
    fn next_right(&mut self, i: usize) -> Option<usize> {
        let n = self.right.len() - 1;
        let r = Self::find(&mut self.right, i.min(n));
        (r < n).then_some(r)
    }

    /// Largest unused position ≤ i, or `None`.
    fn next_left(&mut self, i: Option<usize>) -> Option<usize> {
        let l = Self::find(&mut self.left, i.map_or(0, |v| v + 1));
        (l > 0).then(|| l - 1)
    }

    fn remove(&mut self, i: usize) {
        self.right[i] = i + 1;
        self.left[i + 1] = i;
    }
}

/// Greedy nearest-neighbour matching without replacement. Treated units are
/// processed by descending propensity (ties by paper id); distance ties go to
/// the smaller paper id.
pub fn match_units(units: &[PsmUnit], propensity: &[f64], ratio: usize) -> MatchSet {
    let mut treated: Vec<usize> = (0..units.len()).filter(|&i| units[i].treated).collect();
    treated.sort_by(|&a, &b| {
        propensity[b]
            .total_cmp(&propensity[a])
            .then_with(|| units[a].paper_id.cmp(&units[b].paper_id))
    });
    let mut controls: Vec<usize> = (0..units.len()).filter(|&i| !units[i].treated).collect();
    controls.sort_by(|&a, &b| {
        propensity[a]
            .total_cmp(&propensity[b])
            .then_with(|| units[a].paper_id.cmp(&units[b].paper_id))
    });
    let cp: Vec<f64> = controls.iter().map(|&c| propensity[c]).collect();
    let mut avail = Available::new(controls.len());
    let mut pairs = Vec::with_capacity(treated.len());
    let mut short = 0;
    for &t in &treated {
        let pt = propensity[t];
        let pos = cp.partition_point(|&p| p < pt);
        let mut l = avail.next_left(pos.checked_sub(1));
        let mut r = avail.next_right(pos);
        let mut chosen = Vec::with_capacity(ratio);
        while chosen.len() < ratio {
            let pick = match (l, r) {
                (None, None) => break,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (Some(a), Some(b)) => {
                    let (da, db) = ((pt - cp[a]).abs(), (cp[b] - pt).abs());
                    let a_first = da < db
                        || (da == db && units[controls[a]].paper_id <= units[controls[b]].paper_id);
                    if a_first {
                        a
                    } else {
                        b
                    }
                }
            };
            chosen.push(pick);
            if Some(pick) == l {
                l = if pick == 0 {
                    None
                } else {
                    avail.next_left(Some(pick - 1))
                };
            } else {
                r = avail.next_right(pick + 1);
            }
        }
        for &c in &chosen {
            avail.remove(c);
        }
        if chosen.len() < ratio {
            short += 1;
        }
        if !chosen.is_empty() {
            pairs.push((t, chosen.into_iter().map(|c| controls[c]).collect()));
        }
    }
    MatchSet {
        ratio,
        pairs,
        short_matches: short,
    }
}

/// Standardized mean difference with a fixed pooled SD.
fn smd(treated: &[f64], control: &[f64], pooled_sd: f64) -> f64 {
    match (mean(treated), mean(control)) {
        (Some(a), Some(b)) if pooled_sd > 0.0 => (a - b) / pooled_sd,
        _ => 0.0,
    }
}

fn pooled_sd(treated: &[f64], control: &[f64]) -> f64 {
    let vt = sample_var(treated).unwrap_or(0.0);
    let vc = sample_var(control).unwrap_or(0.0);
    ((vt + vc) / 2.0).sqrt()
}

/// Propensity scores from a logit on standardized covariates (constant
/// covariates are left out of the fit).
pub fn propensity_scores(units: &[PsmUnit]) -> Result<(Vec<f64>, FitResult)> {
    let n = units.len();
    let mut names = vec!["_cons".to_string()];
    let mut cols = vec![vec![1.0; n]];
    for (j, name) in PSM_COVARIATES.iter().enumerate() {
        let raw: Vec<f64> = units.iter().map(|u| u.covariates[j]).collect();
        let m = mean(&raw).unwrap_or(0.0);
        let sd = sample_var(&raw).unwrap_or(0.0).sqrt();
        if sd > 0.0 {
            names.push((*name).to_string());
            cols.push(raw.iter().map(|v| (v - m) / sd).collect());
        }
    }
    let x = DesignMatrix::from_columns(names, cols)?;
    let y: Vec<bool> = units.iter().map(|u| u.treated).collect();
    let fit = logit_fit(&x, &y)?;
    Ok((fit.probabilities, fit.result))
}

pub fn psm_on_units(units: &[PsmUnit], config: &PsmConfig) -> Result<PsmReport> {
    config.validate()?;
    let n_treated = units.iter().filter(|u| u.treated).count();
    if n_treated == 0 || n_treated == units.len() {
        return Err(Error::Invalid(
            "matching needs both treated (high compute) and control papers".into(),
        ));
    }
    let (propensity, logit) = propensity_scores(units)?;
    let treated_idx: Vec<usize> = (0..units.len()).filter(|&i| units[i].treated).collect();
    let control_idx: Vec<usize> = (0..units.len()).filter(|&i| !units[i].treated).collect();
    let column = |idx: &[usize], j: usize| -> Vec<f64> {
        idx.iter().map(|&i| units[i].covariates[j]).collect()
    };

    let mut warnings = Vec::new();
    let mut matches = Vec::new();
    let mut balance = Vec::new();
    let mut outcomes = Vec::new();
    for &ratio in &config.ratios {
        let ms = match_units(units, &propensity, ratio);
        if ms.short_matches > 0 {
            let msg = format!(
                "ratio 1:{ratio}: {} treated papers matched to fewer than {ratio} controls",
                ms.short_matches
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let mt: Vec<usize> = ms.pairs.iter().map(|(t, _)| *t).collect();
        let mc: Vec<usize> = ms.controls().collect();
        for (j, name) in PSM_COVARIATES.iter().enumerate() {
            let (pt, pc) = (column(&treated_idx, j), column(&control_idx, j));
            let sd = pooled_sd(&pt, &pc);
            balance.push(BalanceRow {
                covariate: (*name).to_string(),
                smd_pre: smd(&pt, &pc, sd),
                smd_post: smd(&column(&mt, j), &column(&mc, j), sd),
                ratio,
            });
        }
        let ot: Vec<f64> = mt.iter().map(|&i| units[i].outcome).collect();
        let oc: Vec<f64> = mc.iter().map(|&i| units[i].outcome).collect();
        if !ot.is_empty() && !oc.is_empty() {
            let u = mann_whitney_u(&ot, &oc)?;
            outcomes.push(OutcomeRow {
                ratio,
                n_treated: ot.len(),
                n_controls: oc.len(),
                treated_mean: mean(&ot).unwrap_or(f64::NAN),
                control_mean: mean(&oc).unwrap_or(f64::NAN),
                u_statistic: u.u_statistic,
                z: u.z,
                p_value: u.p_value,
            });
        }
        matches.push(ms);
    }
    Ok(PsmReport {
        propensity,
        logit,
        matches,
        balance,
        outcomes,
        warnings,
    })
}

pub fn psm_study(corpus: &Corpus, config: &PsmConfig) -> Result<(Vec<PsmUnit>, PsmReport)> {
    let units = psm_units(corpus, &config.terms);
    let report = psm_on_units(&units, config)?;
    Ok((units, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{psm_units_fixture, regression_rows, PsmFixture, RegressionFixture};

    #[test]
    fn zero_noise_recovers_exactly() {
        let spec = RegressionFixture {
            noise_sd: 0.0,
            ..RegressionFixture::default()
        };
        let (rows, truth) = regression_rows(&spec, 3);
        let m = fit_model(&rows, &Period::new(2000, 2022).unwrap(), true, 2).unwrap();
        for (name, want) in truth.coefficients() {
            let got = m.fit.coefficient(&name).unwrap();
            assert!((got - want).abs() < 1e-8, "{name}: {got} vs {want}");
        }
    }

    #[test]
    fn reference_level_does_not_change_fit() {
        let (rows, _) = regression_rows(
            &RegressionFixture {
                n: 400,
                ..RegressionFixture::default()
            },
            9,
        );
        let (x1, y) = regression_design(&rows, true, None).unwrap();
        let (x2, _) = regression_design(&rows, true, Some(2010)).unwrap();
        let f1 = ols_robust(&x1, &y).unwrap();
        let f2 = ols_robust(&x2, &y).unwrap();
        for (a, b) in f1.fitted.iter().zip(&f2.fitted) {
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(
            f1.result.coefficient("hhi").map(|v| (v * 1e6).round()),
            f2.result.coefficient("hhi").map(|v| (v * 1e6).round())
        );
    }

    #[test]
    fn family_numbering_and_empty_period() {
        let (rows, _) = regression_rows(
            &RegressionFixture {
                n: 600,
                ..RegressionFixture::default()
            },
            1,
        );
        let models = run_regression_rows(&rows, &Period::defaults()).unwrap();
        assert_eq!(models.len(), 8);
        for (i, m) in models.iter().enumerate() {
            assert_eq!(m.model, i + 1);
            assert_eq!(m.full_controls, i % 2 == 1);
            assert_eq!(m.vif.is_some(), m.full_controls);
        }
        assert_eq!(models[0].fit.n_obs, rows.len());
        let err = fit_model(&rows, &Period::new(1990, 1995).unwrap(), false, 1).unwrap_err();
        assert!(err.to_string().contains("1990-1995"));
        let mut buf = Vec::new();
        write_regression_table(&mut buf, &models).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().contains("model_8 (2018-2022)"));
        assert!(text.contains("\nhhi,"));
    }

    #[test]
    fn matching_without_replacement() {
        for seed in 0..5 {
            let units = psm_units_fixture(&PsmFixture::default(), seed);
            let report = psm_on_units(&units, &PsmConfig::default()).unwrap();
            for ms in &report.matches {
                let used: Vec<usize> = ms.controls().collect();
                let set: BTreeSet<usize> = used.iter().copied().collect();
                assert_eq!(set.len(), used.len());
                assert!(used.iter().all(|&c| !units[c].treated));
            }
        }
    }

    #[test]
    fn matches_are_nearest_available() {
        let units = psm_units_fixture(
            &PsmFixture {
                n: 300,
                ..PsmFixture::default()
            },
            4,
        );
        let (p, _) = propensity_scores(&units).unwrap();
        let ms = match_units(&units, &p, 3);
        let mut used: BTreeSet<usize> = BTreeSet::new();
        // replay the greedy order and check each choice against brute force
        for (t, chosen) in &ms.pairs {
            let mut avail: Vec<usize> = (0..units.len())
                .filter(|&i| !units[i].treated && !used.contains(&i))
                .collect();
            avail.sort_by(|&a, &b| {
                (p[a] - p[*t])
                    .abs()
                    .total_cmp(&(p[b] - p[*t]).abs())
                    .then_with(|| units[a].paper_id.cmp(&units[b].paper_id))
            });
            let kth = (p[avail[chosen.len() - 1]] - p[*t]).abs();
            for c in chosen {
                assert!((p[*c] - p[*t]).abs() <= kth + 1e-15);
                used.insert(*c);
            }
        }
    }

    #[test]
    fn matching_runs_short_of_controls() {
        let units: Vec<PsmUnit> = (0..6)
            .map(|i| PsmUnit {
                paper_id: format!("p{i}"),
                treated: i < 3,
                covariates: [1.0 + (i % 2) as f64, 2.0, 3.0 + i as f64, 2000.0],
                outcome: 0.5,
            })
            .collect();
        let p: Vec<f64> = (0..6).map(|i| i as f64 / 10.0).collect();
        let ms = match_units(&units, &p, 2);
        assert_eq!(ms.controls().count(), 3);
        assert_eq!(ms.short_matches, 2);
    }

    #[test]
    fn identical_groups_have_small_smd() {
        let units = psm_units_fixture(
            &PsmFixture {
                confounding: 0.0,
                treated_effect: 0.0,
                ..PsmFixture::default()
            },
            2,
        );
        let report = psm_on_units(&units, &PsmConfig::default()).unwrap();
        for b in &report.balance {
            assert!(b.smd_pre.abs() < 0.2, "{b:?}");
            assert!(b.smd_post.abs() < 0.2, "{b:?}");
        }
    }

    #[test]
    fn stability_constant_and_full_sample() {
        let (corpus, table) = crate::fixture::tiny_corpus();
        let cfg = StabilityConfig {
            proportions: vec![1.0],
            repetitions: 3,
            seed: 1,
            metrics: vec![
                StabilityMetric::EntityAll,
                StabilityMetric::CollaborationShare,
            ],
        };
        let r = cv_stability(&corpus, &table, &cfg).unwrap();
        for c in &r.cells {
            assert!(c.cv.is_none() || c.cv == Some(0.0), "{c:?}");
        }
        assert_eq!(r, cv_stability(&corpus, &table, &cfg).unwrap());
        assert!(StabilityConfig {
            repetitions: 1,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(StabilityConfig {
            proportions: vec![0.0],
            ..cfg
        }
        .validate()
        .is_err());
    }
}
