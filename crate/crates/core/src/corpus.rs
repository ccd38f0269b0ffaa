//! Corpus ingestion, validation and sector classification.
//!
//! A [`Corpus`] is built once (from files via [`load_corpus`] or from
//! in-memory records via [`Corpus::from_parts`]) and is immutable afterwards.
//! Paper types are always re-derived from the raw institution categories;
//! any stored type in the input is ignored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sector of a single institution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sector {
    Academic,
    Industry,
    Excluded,
}

impl Sector {
    pub fn opposite(self) -> Option<Sector> {
        match self {
            Sector::Academic => Some(Sector::Industry),
            Sector::Industry => Some(Sector::Academic),
            Sector::Excluded => None,
        }
    }

    /// Paper type whose papers make up this side's strata.
    pub fn paper_type(self) -> Option<PaperType> {
        match self {
            Sector::Academic => Some(PaperType::Academic),
            Sector::Industry => Some(PaperType::Industry),
            Sector::Excluded => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sector::Academic => "academic",
            Sector::Industry => "industry",
            Sector::Excluded => "excluded",
        }
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "academic" | "academia" => Ok(Sector::Academic),
            "industry" => Ok(Sector::Industry),
            "excluded" => Ok(Sector::Excluded),
            other => Err(Error::Invalid(format!("unknown sector `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaperType {
    Academic,
    Industry,
    Cooperation,
    Excluded,
}

impl PaperType {
    pub const CLASSIFIED: [PaperType; 3] = [
        PaperType::Academic,
        PaperType::Industry,
        PaperType::Cooperation,
    ];

    pub fn is_classified(self) -> bool {
        !matches!(self, PaperType::Excluded)
    }

    /// Side of a pure paper type; `None` for cooperation and excluded papers.
    pub fn side(self) -> Option<Sector> {
        match self {
            PaperType::Academic => Some(Sector::Academic),
            PaperType::Industry => Some(Sector::Industry),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PaperType::Academic => "academic",
            PaperType::Industry => "industry",
            PaperType::Cooperation => "cooperation",
            PaperType::Excluded => "excluded",
        }
    }
}

impl fmt::Display for PaperType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PaperType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "academic" | "academia" => Ok(PaperType::Academic),
            "industry" => Ok(PaperType::Industry),
            "cooperation" | "collaboration" => Ok(PaperType::Cooperation),
            "excluded" => Ok(PaperType::Excluded),
            other => Err(Error::Invalid(format!("unknown paper type `{other}`"))),
        }
    }
}

/// Knowledge-entity class. The four classes are disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityClass {
    Method,
    Tool,
    Metric,
    Dataset,
}

impl EntityClass {
    pub const ALL: [EntityClass; 4] = [
        EntityClass::Method,
        EntityClass::Tool,
        EntityClass::Metric,
        EntityClass::Dataset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::Method => "method",
            EntityClass::Tool => "tool",
            EntityClass::Metric => "metric",
            EntityClass::Dataset => "dataset",
        }
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "method" => Ok(EntityClass::Method),
            "tool" => Ok(EntityClass::Tool),
            "metric" => Ok(EntityClass::Metric),
            "dataset" => Ok(EntityClass::Dataset),
            other => Err(Error::Invalid(format!("unknown entity class `{other}`"))),
        }
    }
}

/// Mapping from raw institution categories to sectors.
///
/// Comparison is case-insensitive after trimming. Unknown categories map to
/// [`Sector::Excluded`], so the mapping is total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryMap {
    map: BTreeMap<String, Sector>,
}

impl Default for CategoryMap {
    fn default() -> Self {
        let map = [
            ("education", Sector::Academic),
            ("healthcare", Sector::Academic),
            ("company", Sector::Industry),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        CategoryMap { map }
    }
}

impl CategoryMap {
    pub fn with_overrides<'a>(overrides: impl IntoIterator<Item = (&'a str, Sector)>) -> Self {
        let mut out = CategoryMap::default();
        for (raw, sector) in overrides {
            out.map.insert(raw.trim().to_ascii_lowercase(), sector);
        }
        out
    }

    pub fn classify(&self, raw_category: &str) -> Sector {
        let key = raw_category.trim().to_ascii_lowercase();
        self.map.get(&key).copied().unwrap_or(Sector::Excluded)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, Sector)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Classify a raw institution category with the default mapping.
pub fn classify_institution(raw_category: &str) -> Sector {
    CategoryMap::default().classify(raw_category)
}

/// Derive a paper type from its authors' sectors.
///
/// Excluded authors are ignored as long as one classified author remains.
pub fn classify_paper(paper_id: &str, author_sectors: &[Sector]) -> Result<PaperType> {
    if author_sectors.is_empty() {
        return Err(Error::Invalid(format!(
            "paper `{paper_id}` has no author sectors to classify"
        )));
    }
    let academic = author_sectors.contains(&Sector::Academic);
    let industry = author_sectors.contains(&Sector::Industry);
    Ok(match (academic, industry) {
        (true, true) => PaperType::Cooperation,
        (true, false) => PaperType::Academic,
        (false, true) => PaperType::Industry,
        (false, false) => PaperType::Excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Affiliation {
    pub author_index: u32,
    pub institution_id: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    pub year: i32,
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: Option<String>,
    pub affiliations: Vec<Affiliation>,
    #[serde(skip, default = "excluded")]
    pub paper_type: PaperType,
    #[serde(skip)]
    pub has_embedding: bool,
}

fn excluded() -> PaperType {
    PaperType::Excluded
}

impl PaperRecord {
    pub fn new(
        paper_id: impl Into<String>,
        year: i32,
        title: impl Into<String>,
        abstract_text: Option<String>,
        affiliations: Vec<Affiliation>,
    ) -> Self {
        PaperRecord {
            paper_id: paper_id.into(),
            year,
            title: title.into(),
            abstract_text,
            affiliations,
            paper_type: PaperType::Excluded,
            has_embedding: false,
        }
    }

    /// Each author's sector from their first listed institution, in order of
    /// first appearance.
    pub fn author_sectors(&self, categories: &CategoryMap) -> Vec<Sector> {
        let mut seen = HashSet::new();
        self.affiliations
            .iter()
            .filter(|a| seen.insert(a.author_index))
            .map(|a| categories.classify(&a.category))
            .collect()
    }

    pub fn derive_type(&self, categories: &CategoryMap) -> Result<PaperType> {
        classify_paper(&self.paper_id, &self.author_sectors(categories))
    }

    pub fn n_authors(&self) -> usize {
        self.affiliations
            .iter()
            .map(|a| a.author_index)
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn n_institutions(&self) -> usize {
        self.affiliations
            .iter()
            .map(|a| a.institution_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationEdge {
    pub citing_id: String,
    pub cited_key: String,
    pub cited_year: i32,
    pub cited_type: PaperType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub paper_id: String,
    pub surface: String,
    pub class: EntityClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_span: Option<(usize, usize)>,
    #[serde(skip)]
    pub year: i32,
}

/// One (year, side) cell. The side is never [`Sector::Excluded`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub year: i32,
    pub side: Sector,
}

impl Stratum {
    pub fn new(year: i32, side: Sector) -> Result<Self> {
        if side == Sector::Excluded {
            return Err(Error::Invalid(format!(
                "stratum {year} cannot use the excluded side"
            )));
        }
        Ok(Stratum { year, side })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl Default for YearRange {
    fn default() -> Self {
        YearRange {
            start: 2000,
            end: 2022,
        }
    }
}

impl YearRange {
    pub fn new(start: i32, end: i32) -> Result<Self> {
        if start > end {
            return Err(Error::config(
                "corpus.years",
                format!("start {start} is after end {end}"),
            ));
        }
        Ok(YearRange { start, end })
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start..=self.end).contains(&year)
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + Clone {
        self.start..=self.end
    }
}

impl FromStr for YearRange {
    type Err = Error;

    /// Parses `2000-2022` or a single year.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("years", format!("expected START-END, got `{s}`"));
        match s.split_once(['-', ':']) {
            Some((a, b)) => YearRange::new(
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ),
            None => {
                let y = s.trim().parse().map_err(|_| bad())?;
                Ok(YearRange { start: y, end: y })
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusConfig {
    pub years: YearRange,
    pub categories: CategoryMap,
    /// Embedding dimension. Required for binary embedding files.
    pub embedding_dim: Option<usize>,
}

const MAX_WARNINGS: usize = 50;

/// Counts of what was read and dropped while building a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub papers_read: usize,
    pub papers_out_of_range: usize,
    /// Papers with no affiliations at all, typed as excluded.
    pub papers_unaffiliated: usize,
    pub mentions_read: usize,
    pub mentions_dangling: usize,
    pub embeddings_read: usize,
    pub embeddings_dangling: usize,
    pub citations_read: usize,
    pub citations_dangling: usize,
    pub citations_after_citing_year: usize,
    pub type_counts: BTreeMap<PaperType, usize>,
    pub warnings: Vec<String>,
}

impl LoadReport {
    pub fn dropped_total(&self) -> usize {
        self.papers_out_of_range
            + self.mentions_dangling
            + self.embeddings_dangling
            + self.citations_dangling
            + self.citations_after_citing_year
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        if self.warnings.len() < MAX_WARNINGS {
            self.warnings.push(msg);
        }
    }
}

/// Validated, immutable corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    years: YearRange,
    categories: CategoryMap,
    papers: Vec<PaperRecord>,
    index: HashMap<String, usize>,
    mentions: Vec<EntityMention>,
    mentions_by_paper: Vec<Vec<usize>>,
    embeddings: Vec<Option<Vec<f64>>>,
    embedding_dim: Option<usize>,
    citations: Vec<CitationEdge>,
    refs_by_paper: Vec<Vec<usize>>,
    report: LoadReport,
}

impl Corpus {
    /// Validate and assemble a corpus from in-memory records.
    ///
    /// Papers outside the year range are dropped; mentions, embeddings and
    /// citations that reference unknown papers are dropped with a warning.
    pub fn from_parts(
        papers: Vec<PaperRecord>,
        mentions: Vec<EntityMention>,
        embeddings: Vec<(String, Vec<f64>)>,
        citations: Vec<CitationEdge>,
        config: &CorpusConfig,
    ) -> Result<Self> {
        let mut report = LoadReport {
            papers_read: papers.len(),
            mentions_read: mentions.len(),
            embeddings_read: embeddings.len(),
            citations_read: citations.len(),
            ..LoadReport::default()
        };

        let mut kept = Vec::with_capacity(papers.len());
        let mut index = HashMap::new();
        let mut out_of_range = HashSet::new();
        for mut paper in papers {
            if paper.paper_id.is_empty() {
                return Err(Error::Invalid("paper with empty paper_id".into()));
            }
            if index.contains_key(&paper.paper_id) || out_of_range.contains(&paper.paper_id) {
                return Err(Error::Invalid(format!(
                    "duplicate paper_id `{}`",
                    paper.paper_id
                )));
            }
            if !config.years.contains(paper.year) {
                report.papers_out_of_range += 1;
                report.warn(format!(
                    "paper `{}` year {} outside {}-{}; dropped",
                    paper.paper_id, paper.year, config.years.start, config.years.end
                ));
                out_of_range.insert(paper.paper_id);
                continue;
            }
            paper.paper_type = if paper.affiliations.is_empty() {
                report.papers_unaffiliated += 1;
                PaperType::Excluded
            } else {
                paper.derive_type(&config.categories)?
            };
            paper.has_embedding = false;
            index.insert(paper.paper_id.clone(), kept.len());
            kept.push(paper);
        }
        let papers = kept;

        let mut mentions_by_paper = vec![Vec::new(); papers.len()];
        let mut kept_mentions = Vec::with_capacity(mentions.len());
        for mut m in mentions {
            match index.get(&m.paper_id) {
                Some(&p) => {
                    m.year = papers[p].year;
                    mentions_by_paper[p].push(kept_mentions.len());
                    kept_mentions.push(m);
                }
                None => {
                    report.mentions_dangling += 1;
                    report.warn(format!(
                        "entity mention `{}` references unknown paper `{}`; dropped",
                        m.surface, m.paper_id
                    ));
                }
            }
        }

        let mut papers = papers;
        let mut embedding_dim = config.embedding_dim;
        let mut vectors: Vec<Option<Vec<f64>>> = vec![None; papers.len()];
        for (id, values) in embeddings {
            let Some(&p) = index.get(&id) else {
                report.embeddings_dangling += 1;
                report.warn(format!("embedding for unknown paper `{id}`; dropped"));
                continue;
            };
            match embedding_dim {
                Some(d) if d != values.len() => {
                    return Err(Error::Invalid(format!(
                        "embedding for `{id}` has dimension {}, expected {d}",
                        values.len()
                    )))
                }
                None => embedding_dim = Some(values.len()),
                _ => {}
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "embedding for `{id}` has non-finite components"
                )));
            }
            if vectors[p].is_some() {
                return Err(Error::Invalid(format!("duplicate embedding for `{id}`")));
            }
            papers[p].has_embedding = true;
            vectors[p] = Some(values);
        }

        let mut refs_by_paper = vec![Vec::new(); papers.len()];
        let mut kept_citations = Vec::with_capacity(citations.len());
        for c in citations {
            let Some(&p) = index.get(&c.citing_id) else {
                report.citations_dangling += 1;
                report.warn(format!(
                    "citation from unknown paper `{}` to `{}`; dropped",
                    c.citing_id, c.cited_key
                ));
                continue;
            };
            if c.cited_year > papers[p].year {
                report.citations_after_citing_year += 1;
                report.warn(format!(
                    "citation `{}` -> `{}` cites year {} after {}; dropped",
                    c.citing_id, c.cited_key, c.cited_year, papers[p].year
                ));
                continue;
            }
            refs_by_paper[p].push(kept_citations.len());
            kept_citations.push(c);
        }

        for paper in &papers {
            *report.type_counts.entry(paper.paper_type).or_default() += 1;
        }

        Ok(Corpus {
            years: config.years,
            categories: config.categories.clone(),
            papers,
            index,
            mentions: kept_mentions,
            mentions_by_paper,
            embeddings: vectors,
            embedding_dim,
            citations: kept_citations,
            refs_by_paper,
            report,
        })
    }

    pub fn years(&self) -> YearRange {
        self.years
    }

    pub fn papers(&self) -> &[PaperRecord] {
        &self.papers
    }

    pub fn paper(&self, idx: usize) -> &PaperRecord {
        &self.papers[idx]
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    pub fn index_of(&self, paper_id: &str) -> Option<usize> {
        self.index.get(paper_id).copied()
    }

    pub fn report(&self) -> &LoadReport {
        &self.report
    }

    pub fn mentions(&self) -> &[EntityMention] {
        &self.mentions
    }

    pub fn mentions_of(&self, idx: usize) -> impl Iterator<Item = &EntityMention> {
        self.mentions_by_paper[idx]
            .iter()
            .map(|&m| &self.mentions[m])
    }

    pub fn embedding(&self, idx: usize) -> Option<&[f64]> {
        self.embeddings[idx].as_deref()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    pub fn citations(&self) -> &[CitationEdge] {
        &self.citations
    }

    pub fn references_of(&self, idx: usize) -> impl Iterator<Item = &CitationEdge> {
        self.refs_by_paper[idx].iter().map(|&c| &self.citations[c])
    }

    pub fn n_references(&self, idx: usize) -> usize {
        self.refs_by_paper[idx].len()
    }

    /// Indices of papers of `paper_type` published in `year`, in corpus order.
    pub fn papers_of(&self, year: i32, paper_type: PaperType) -> impl Iterator<Item = usize> + '_ {
        self.papers
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.year == year && p.paper_type == paper_type)
            .map(|(i, _)| i)
    }

    /// Papers contributing to a stratum: pure papers of the stratum's side.
    pub fn stratum_papers(&self, stratum: Stratum) -> Vec<usize> {
        match stratum.side.paper_type() {
            Some(t) => self.papers_of(stratum.year, t).collect(),
            None => Vec::new(),
        }
    }

    pub fn type_counts(&self) -> BTreeMap<PaperType, usize> {
        let mut out = BTreeMap::new();
        for p in &self.papers {
            *out.entry(p.paper_type).or_default() += 1;
        }
        out
    }

    /// Restrict to a subset of papers (by index), keeping everything attached to them.
    pub fn subset(&self, keep: &[usize]) -> Corpus {
        let mut papers = Vec::with_capacity(keep.len());
        let mut mentions = Vec::new();
        let mut embeddings = Vec::new();
        let mut citations = Vec::new();
        for &i in keep {
            let p = &self.papers[i];
            papers.push(p.clone());
            mentions.extend(self.mentions_of(i).cloned());
            if let Some(e) = self.embedding(i) {
                embeddings.push((p.paper_id.clone(), e.to_vec()));
            }
            citations.extend(self.references_of(i).cloned());
        }
        let config = CorpusConfig {
            years: self.years,
            categories: self.categories.clone(),
            embedding_dim: self.embedding_dim,
        };
        Corpus::from_parts(papers, mentions, embeddings, citations, &config)
            .expect("subset of a valid corpus is valid")
    }

    pub fn categories(&self) -> &CategoryMap {
        &self.categories
    }
}

/// Input file locations for [`load_corpus`].
#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub papers: PathBuf,
    pub entities: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub citations: Option<PathBuf>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::data(path.display().to_string(), n + 1, e.to_string()))?;
        out.push((n + 1, rec));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct MentionInput {
    paper_id: String,
    surface: String,
    class: String,
    #[serde(default)]
    char_span: Option<(usize, usize)>,
}

pub fn read_papers(path: &Path) -> Result<Vec<PaperRecord>> {
    let name = path.display().to_string();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, paper) in read_jsonl::<PaperRecord>(path)? {
        if !seen.insert(paper.paper_id.clone()) {
            return Err(Error::data(
                &name,
                line,
                format!("duplicate paper_id `{}`", paper.paper_id),
            ));
        }
        out.push(paper);
    }
    Ok(out)
}

pub fn read_mentions(path: &Path) -> Result<Vec<EntityMention>> {
    let name = path.display().to_string();
    read_jsonl::<MentionInput>(path)?
        .into_iter()
        .map(|(line, m)| {
            let class = m
                .class
                .parse()
                .map_err(|e: Error| Error::data(&name, line, e.to_string()))?;
            Ok(EntityMention {
                paper_id: m.paper_id,
                surface: m.surface,
                class,
                char_span: m.char_span,
                year: 0,
            })
        })
        .collect()
}

/// Reads embeddings from CSV (`paper_id,v0,..`) or, for `.bin`/`.f32`
/// files, from length-prefixed binary rows: a little-endian `u32` id byte
/// length, the UTF-8 id, then `dim` little-endian `f32` values.
pub fn read_embeddings(path: &Path, dim: Option<usize>) -> Result<Vec<(String, Vec<f64>)>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext == "bin" || ext == "f32" {
        let dim = dim.ok_or_else(|| {
            Error::config(
                "corpus.embedding_dim",
                "binary embedding files require an explicit dimension",
            )
        })?;
        read_embeddings_binary(path, dim)
    } else {
        read_embeddings_csv(path, dim)
    }
}

fn read_embeddings_csv(path: &Path, dim: Option<usize>) -> Result<Vec<(String, Vec<f64>)>> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    let mut expected = dim;
    for (n, rec) in reader.records().enumerate() {
        let line = n + 1;
        let rec = rec.map_err(|e| Error::data(&name, line, e.to_string()))?;
        if rec.is_empty() {
            continue;
        }
        if n == 0 && rec[0].trim() == "paper_id" {
            let header_dim = rec.len() - 1;
            if let Some(d) = expected {
                if d != header_dim {
                    return Err(Error::data(
                        &name,
                        line,
                        format!("header declares {header_dim} dimensions, config says {d}"),
                    ));
                }
            }
            expected = Some(header_dim);
            continue;
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::data(&name, line, format!("bad embedding value: {e}")))?;
        match expected {
            Some(d) if d != values.len() => {
                return Err(Error::data(
                    &name,
                    line,
                    format!("expected {d} values, found {}", values.len()),
                ))
            }
            None => expected = Some(values.len()),
            _ => {}
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(&name, line, "non-finite embedding value"));
        }
        out.push((rec[0].trim().to_string(), values));
    }
    Ok(out)
}

fn read_embeddings_binary(path: &Path, dim: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let name = path.display().to_string();
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut pos = 0usize;
    let truncated = |row: usize| Error::data(&name, row, "truncated binary embedding row");
    while pos < bytes.len() {
        let row = out.len() + 1;
        let len_bytes: [u8; 4] = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| truncated(row))?
            .try_into()
            .unwrap();
        let id_len = u32::from_le_bytes(len_bytes) as usize;
        pos += 4;
        let id = std::str::from_utf8(bytes.get(pos..pos + id_len).ok_or_else(|| truncated(row))?)
            .map_err(|e| Error::data(&name, row, e.to_string()))?
            .to_string();
        pos += id_len;
        let raw = bytes
            .get(pos..pos + 4 * dim)
            .ok_or_else(|| truncated(row))?;
        pos += 4 * dim;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(&name, row, "non-finite embedding value"));
        }
        out.push((id, values));
    }
    Ok(out)
}

/// Encode embeddings in the binary row format read by [`read_embeddings`].
pub fn encode_embeddings_binary<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Vec<u8> {
    let mut out = Vec::new();
    for (id, values) in rows {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for v in values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

/// Parse a cited category: a paper type name, or a raw institution category
/// mapped through `categories`.
pub fn parse_cited_category(raw: &str, categories: &CategoryMap) -> PaperType {
    raw.parse::<PaperType>()
        .unwrap_or_else(|_| match categories.classify(raw) {
            Sector::Academic => PaperType::Academic,
            Sector::Industry => PaperType::Industry,
            Sector::Excluded => PaperType::Excluded,
        })
}

pub fn read_citations(path: &Path, categories: &CategoryMap) -> Result<Vec<CitationEdge>> {
    #[derive(Deserialize)]
    struct Row {
        citing_id: String,
        cited_key: String,
        cited_year: i32,
        cited_category: String,
    }
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for (n, row) in reader.deserialize::<Row>().enumerate() {
        // +1 for the header, +1 for 1-based numbering
        let row = row.map_err(|e| Error::data(&name, n + 2, e.to_string()))?;
        out.push(CitationEdge {
            cited_type: parse_cited_category(&row.cited_category, categories),
            citing_id: row.citing_id,
            cited_key: row.cited_key,
            cited_year: row.cited_year,
        });
    }
    Ok(out)
}

/// Read and validate all corpus files.
pub fn load_corpus(paths: &CorpusPaths, config: &CorpusConfig) -> Result<Corpus> {
    let papers = read_papers(&paths.papers)?;
    let mentions = match &paths.entities {
        Some(p) => read_mentions(p)?,
        None => Vec::new(),
    };
    let embeddings = match &paths.embeddings {
        Some(p) => read_embeddings(p, config.embedding_dim)?,
        None => Vec::new(),
    };
    let citations = match &paths.citations {
        Some(p) => read_citations(p, &config.categories)?,
        None => Vec::new(),
    };
    let corpus = Corpus::from_parts(papers, mentions, embeddings, citations, config)?;
    let r = corpus.report();
    log::info!(
        "loaded {} papers ({} dropped out of range), {} mentions, {} embeddings, {} citations",
        corpus.len(),
        r.papers_out_of_range,
        corpus.mentions().len(),
        r.embeddings_read - r.embeddings_dangling,
        corpus.citations().len()
    );
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aff(author: u32, inst: &str, cat: &str) -> Affiliation {
        Affiliation {
            author_index: author,
            institution_id: inst.into(),
            category: cat.into(),
        }
    }

    fn paper(id: &str, year: i32, affs: Vec<Affiliation>) -> PaperRecord {
        PaperRecord::new(id, year, "t", None, affs)
    }

    #[test]
    fn institution_categories() {
        assert_eq!(classify_institution("education"), Sector::Academic);
        assert_eq!(classify_institution("healthcare"), Sector::Academic);
        assert_eq!(classify_institution("company"), Sector::Industry);
        assert_eq!(classify_institution("government"), Sector::Excluded);
        assert_eq!(classify_institution("  Education "), Sector::Academic);
        assert_eq!(classify_institution("COMPANY"), Sector::Industry);
        assert_eq!(classify_institution(""), Sector::Excluded);
    }

    #[test]
    fn overrides_take_precedence() {
        let map = CategoryMap::with_overrides([("Facility", Sector::Academic)]);
        assert_eq!(map.classify("facility"), Sector::Academic);
        assert_eq!(map.classify("company"), Sector::Industry);
    }

    #[test]
    fn paper_rules() {
        use Sector::*;
        assert_eq!(
            classify_paper("p", &[Academic, Academic]).unwrap(),
            PaperType::Academic
        );
        assert_eq!(
            classify_paper("p", &[Academic, Industry]).unwrap(),
            PaperType::Cooperation
        );
        assert_eq!(
            classify_paper("p", &[Industry]).unwrap(),
            PaperType::Industry
        );
        assert_eq!(
            classify_paper("p", &[Excluded, Excluded]).unwrap(),
            PaperType::Excluded
        );
        assert_eq!(
            classify_paper("p", &[Excluded, Industry]).unwrap(),
            PaperType::Industry
        );
        let err = classify_paper("p42", &[]).unwrap_err();
        assert!(err.to_string().contains("p42"));
    }

    #[test]
    fn first_listed_institution_per_author() {
        // author 0 lists a company first, then a university
        let p = paper(
            "x",
            2010,
            vec![
                aff(0, "c1", "company"),
                aff(0, "u1", "education"),
                aff(1, "c2", "company"),
            ],
        );
        let cats = CategoryMap::default();
        assert_eq!(
            p.author_sectors(&cats),
            vec![Sector::Industry, Sector::Industry]
        );
        assert_eq!(p.derive_type(&cats).unwrap(), PaperType::Industry);
        assert_eq!(p.n_authors(), 2);
        assert_eq!(p.n_institutions(), 3);
    }

    #[test]
    fn from_parts_drops_and_counts() {
        let papers = vec![
            paper("a", 2010, vec![aff(0, "u", "education")]),
            paper("old", 1999, vec![aff(0, "u", "education")]),
            paper("b", 2011, vec![aff(0, "c", "company")]),
            paper("none", 2011, vec![]),
        ];
        let mentions = vec![
            EntityMention {
                paper_id: "a".into(),
                surface: "BERT".into(),
                class: EntityClass::Method,
                char_span: None,
                year: 0,
            },
            EntityMention {
                paper_id: "zzz".into(),
                surface: "x".into(),
                class: EntityClass::Tool,
                char_span: None,
                year: 0,
            },
        ];
        let citations = vec![
            CitationEdge {
                citing_id: "b".into(),
                cited_key: "a".into(),
                cited_year: 2010,
                cited_type: PaperType::Academic,
            },
            CitationEdge {
                citing_id: "ghost".into(),
                cited_key: "a".into(),
                cited_year: 2010,
                cited_type: PaperType::Academic,
            },
            CitationEdge {
                citing_id: "a".into(),
                cited_key: "future".into(),
                cited_year: 2015,
                cited_type: PaperType::Industry,
            },
        ];
        let corpus = Corpus::from_parts(
            papers,
            mentions,
            vec![("b".into(), vec![1.0, 0.0])],
            citations,
            &CorpusConfig::default(),
        )
        .unwrap();
        let r = corpus.report();
        assert_eq!(corpus.len(), 3);
        assert_eq!(r.papers_out_of_range, 1);
        assert_eq!(r.papers_unaffiliated, 1);
        assert_eq!(r.mentions_dangling, 1);
        assert_eq!(r.citations_dangling, 1);
        assert_eq!(r.citations_after_citing_year, 1);
        assert_eq!(corpus.citations().len(), 1);
        assert_eq!(corpus.mentions_of(0).next().unwrap().year, 2010);
        assert!(corpus.paper(corpus.index_of("b").unwrap()).has_embedding);
        assert_eq!(
            corpus.paper(corpus.index_of("none").unwrap()).paper_type,
            PaperType::Excluded
        );
        let total: usize = corpus.type_counts().values().sum();
        assert_eq!(total, corpus.len());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let papers = vec![
            paper("a", 2010, vec![aff(0, "u", "education")]),
            paper("a", 2011, vec![aff(0, "u", "education")]),
        ];
        let err = Corpus::from_parts(papers, vec![], vec![], vec![], &CorpusConfig::default());
        assert!(matches!(err, Err(Error::Invalid(_))));
    }

    #[test]
    fn cited_category_parsing() {
        let cats = CategoryMap::default();
        assert_eq!(
            parse_cited_category("Cooperation", &cats),
            PaperType::Cooperation
        );
        assert_eq!(
            parse_cited_category("education", &cats),
            PaperType::Academic
        );
        assert_eq!(parse_cited_category("company", &cats), PaperType::Industry);
        assert_eq!(
            parse_cited_category("nonprofit", &cats),
            PaperType::Excluded
        );
    }

    #[test]
    fn binary_embeddings_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let rows = [("p1", &[0.5, -1.0][..]), ("p2", &[2.0, 0.25][..])];
        std::fs::write(&path, encode_embeddings_binary(rows)).unwrap();
        let got = read_embeddings(&path, Some(2)).unwrap();
        assert_eq!(
            got,
            vec![
                ("p1".into(), vec![0.5, -1.0]),
                ("p2".into(), vec![2.0, 0.25])
            ]
        );
        assert!(matches!(
            read_embeddings(&path, None),
            Err(Error::Config { .. })
        ));
        assert!(matches!(
            read_embeddings(&path, Some(3)),
            Err(Error::Data { .. })
        ));
    }

    #[test]
    fn malformed_jsonl_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("papers.jsonl");
        std::fs::write(
            &path,
            "{\"paper_id\":\"a\",\"year\":2001,\"title\":\"t\",\"abstract\":null,\"affiliations\":[]}\n{oops\n",
        )
        .unwrap();
        match read_papers(&path) {
            Err(Error::Data { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn year_range_parse() {
        assert_eq!(
            "2000-2012".parse::<YearRange>().unwrap(),
            YearRange::new(2000, 2012).unwrap()
        );
        assert_eq!(
            "2019".parse::<YearRange>().unwrap(),
            YearRange {
                start: 2019,
                end: 2019
            }
        );
        assert!("2012-2000".parse::<YearRange>().is_err());
    }
}
