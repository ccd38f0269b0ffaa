//! Entity normalization: abbreviation expansion, generic-term filtering,
//! edit-distance clustering and rare-entity pruning.
//!
//! Clustering runs per entity class in two passes over distinct surfaces:
//!
//! 1. single-link: any two surfaces with similarity above
//!    `same_cluster_sim` end up in one cluster;
//! 2. average-link: the pair of clusters with the highest mean pairwise
//!    cross-similarity is merged while that mean exceeds `merge_avg_sim`.
//!
//! Both passes are deterministic; ties are broken on the lexicographically
//! smallest member of each cluster.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EntityClass, EntityMention};
use crate::error::{Error, Result};

pub type EntityId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationConfig {
    /// Short form to full form, both compared lowercased.
    pub abbreviations: HashMap<String, String>,
    pub stoplist: BTreeSet<String>,
    pub same_cluster_sim: f64,
    pub merge_avg_sim: f64,
    pub min_annual_freq: u64,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            abbreviations: HashMap::new(),
            stoplist: BTreeSet::new(),
            same_cluster_sim: 0.95,
            merge_avg_sim: 0.8,
            min_annual_freq: 5,
        }
    }
}

impl NormalizationConfig {
    pub fn validate(&self) -> Result<()> {
        let (merge, same) = (self.merge_avg_sim, self.same_cluster_sim);
        if !(merge > 0.0 && merge <= same && same <= 1.0) {
            return Err(Error::config(
                "normalize",
                format!("need 0 < merge_avg_sim ({merge}) <= same_cluster_sim ({same}) <= 1"),
            ));
        }
        Ok(())
    }

    pub fn with_abbreviations<'a>(
        mut self,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Self {
        for (short, full) in pairs {
            self.abbreviations
                .insert(short.trim().to_lowercase(), full.trim().to_lowercase());
        }
        self
    }

    pub fn with_stoplist<'a>(mut self, terms: impl IntoIterator<Item = &'a str>) -> Self {
        self.stoplist
            .extend(terms.into_iter().map(|t| t.trim().to_lowercase()));
        self
    }

    /// Lowercase, trim and expand a surface; `None` if it is stoplisted.
    pub fn normalize_surface(&self, surface: &str) -> Option<String> {
        let lowered = surface.trim().to_lowercase();
        if lowered.is_empty() {
            return None;
        }
        let expanded = match self.abbreviations.get(&lowered) {
            Some(full) => full.clone(),
            None => lowered,
        };
        if self.stoplist.contains(&expanded) {
            None
        } else {
            Some(expanded)
        }
    }
}

/// Read an abbreviation map: one `short<TAB>full` (or `short=full`) per line.
/// Blank lines and lines starting with `#` are skipped.
pub fn read_abbreviations(path: &Path) -> Result<Vec<(String, String)>> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (short, full) = line
            .split_once('\t')
            .or_else(|| line.split_once('='))
            .ok_or_else(|| Error::data(&name, n + 1, "expected `short<TAB>full`"))?;
        out.push((short.trim().to_string(), full.trim().to_string()));
    }
    Ok(out)
}

/// Read a stoplist: one term per line, `#` comments allowed.
pub fn read_stoplist(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Expand abbreviations and drop stoplisted mentions.
pub fn expand_and_filter(
    mentions: &[EntityMention],
    config: &NormalizationConfig,
) -> Vec<EntityMention> {
    mentions
        .iter()
        .filter_map(|m| {
            config
                .normalize_surface(&m.surface)
                .map(|surface| EntityMention {
                    surface,
                    ..m.clone()
                })
        })
        .collect()
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein(a, b) / max(|a|, |b|)` over characters.
pub fn edit_similarity(a: &str, b: &str) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("edit similarity of an empty string".into()));
    }
    Ok(similarity_unchecked(a, b))
}

fn similarity_unchecked(a: &str, b: &str) -> f64 {
    let max_len = a.chars().count().max(b.chars().count());
    1.0 - levenshtein(a, b) as f64 / max_len as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCluster {
    pub entity_id: EntityId,
    pub canonical: String,
    pub class: EntityClass,
    pub members: BTreeSet<String>,
    pub year_freq: BTreeMap<i32, u64>,
}

impl EntityCluster {
    pub fn total_freq(&self) -> u64 {
        self.year_freq.values().sum()
    }

    pub fn max_annual_freq(&self) -> u64 {
        self.year_freq.values().copied().max().unwrap_or(0)
    }
}

#[derive(Default)]
struct SurfaceStats {
    total: u64,
    year_freq: BTreeMap<i32, u64>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root so roots are stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Merge candidate in the average-link pass.
struct Candidate {
    avg: f64,
    // smallest member of each side, ordered so key.0 < key.1
    key: (usize, usize),
    a: usize,
    b: usize,
    stamp: (u32, u32),
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // max-heap: highest average first, then lexicographically smallest key
    fn cmp(&self, other: &Self) -> Ordering {
        self.avg
            .total_cmp(&other.avg)
            .then_with(|| other.key.cmp(&self.key))
    }
}

/// Cluster the distinct surfaces of one class. `surfaces` must be sorted;
/// returns groups of surface indices.
fn cluster_class(surfaces: &[&str], same_sim: f64, merge_sim: f64) -> Vec<Vec<usize>> {
    let n = surfaces.len();
    if n == 0 {
        return Vec::new();
    }
    // upper-triangular pairwise similarity, row i holds (i, i+1..n)
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| similarity_unchecked(surfaces[i], surfaces[j]))
                .collect()
        })
        .collect();
    let sim = |i: usize, j: usize| -> f64 {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        rows[lo][hi - lo - 1]
    };

    let mut dsu = DisjointSet::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if sim(i, j) > same_sim {
                dsu.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        groups.entry(dsu.find(i)).or_default().push(i);
    }
    // each group's key is its smallest surface index, which is also its root
    let mut clusters: Vec<Option<Vec<usize>>> = groups.into_values().map(Some).collect();
    let k = clusters.len();

    // sums[a][b]: total pairwise similarity between clusters a and b
    let mut sums = vec![vec![0.0f64; k]; k];
    for a in 0..k {
        for b in (a + 1)..k {
            let (ca, cb) = (clusters[a].as_ref().unwrap(), clusters[b].as_ref().unwrap());
            let mut s = 0.0;
            for &i in ca {
                for &j in cb {
                    s += sim(i, j);
                }
            }
            sums[a][b] = s;
            sums[b][a] = s;
        }
    }
    let mut sizes: Vec<usize> = clusters.iter().map(|c| c.as_ref().unwrap().len()).collect();
    let mut keys: Vec<usize> = clusters.iter().map(|c| c.as_ref().unwrap()[0]).collect();
    let mut stamps = vec![0u32; k];

    let candidate =
        |a: usize, b: usize, sums: &[Vec<f64>], sizes: &[usize], keys: &[usize], stamps: &[u32]| {
            let avg = sums[a][b] / (sizes[a] * sizes[b]) as f64;
            let (ka, kb) = (keys[a].min(keys[b]), keys[a].max(keys[b]));
            Candidate {
                avg,
                key: (ka, kb),
                a,
                b,
                stamp: (stamps[a], stamps[b]),
            }
        };

    let mut heap = BinaryHeap::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let c = candidate(a, b, &sums, &sizes, &keys, &stamps);
            if c.avg > merge_sim {
                heap.push(c);
            }
        }
    }
    while let Some(c) = heap.pop() {
        let (a, b) = (c.a, c.b);
        if clusters[a].is_none() || clusters[b].is_none() || c.stamp != (stamps[a], stamps[b]) {
            continue;
        }
        let moved = clusters[b].take().unwrap();
        clusters[a].as_mut().unwrap().extend(moved);
        sizes[a] += sizes[b];
        keys[a] = keys[a].min(keys[b]);
        stamps[a] += 1;
        for other in 0..k {
            if other == a || other == b || clusters[other].is_none() {
                continue;
            }
            let s = sums[a][other] + sums[b][other];
            sums[a][other] = s;
            sums[other][a] = s;
        }
        for other in 0..k {
            if other == a || clusters[other].is_none() {
                continue;
            }
            let (x, y) = if a < other { (a, other) } else { (other, a) };
            let cand = candidate(x, y, &sums, &sizes, &keys, &stamps);
            if cand.avg > merge_sim {
                heap.push(cand);
            }
        }
    }
    clusters
        .into_iter()
        .flatten()
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect()
}

/// Cluster already expanded and filtered mentions into entities.
///
/// The output partitions the distinct surfaces of each class. Entity ids are
/// assigned in (class, canonical) order.
pub fn cluster_entities(
    mentions: &[EntityMention],
    config: &NormalizationConfig,
) -> Vec<EntityCluster> {
    let mut by_class: BTreeMap<EntityClass, BTreeMap<&str, SurfaceStats>> = BTreeMap::new();
    for m in mentions {
        let stats = by_class
            .entry(m.class)
            .or_default()
            .entry(m.surface.as_str())
            .or_default();
        stats.total += 1;
        *stats.year_freq.entry(m.year).or_default() += 1;
    }

    let per_class: Vec<Vec<EntityCluster>> = by_class
        .par_iter()
        .map(|(&class, stats)| {
            let surfaces: Vec<&str> = stats.keys().copied().collect();
            cluster_class(&surfaces, config.same_cluster_sim, config.merge_avg_sim)
                .into_iter()
                .map(|group| {
                    let mut year_freq = BTreeMap::new();
                    let mut canonical = surfaces[group[0]];
                    let mut best = 0;
                    for &i in &group {
                        let s = &stats[surfaces[i]];
                        for (&y, &c) in &s.year_freq {
                            *year_freq.entry(y).or_default() += c;
                        }
                        // group is sorted, so the first maximum is lexicographically smallest
                        if s.total > best {
                            best = s.total;
                            canonical = surfaces[i];
                        }
                    }
                    EntityCluster {
                        entity_id: 0,
                        canonical: canonical.to_string(),
                        class,
                        members: group.iter().map(|&i| surfaces[i].to_string()).collect(),
                        year_freq,
                    }
                })
                .collect()
        })
        .collect();

    let mut all: Vec<EntityCluster> = per_class.into_iter().flatten().collect();
    all.sort_by(|a, b| (a.class, &a.canonical).cmp(&(b.class, &b.canonical)));
    for (i, c) in all.iter_mut().enumerate() {
        c.entity_id = i as EntityId;
    }
    all
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PruneReport {
    pub before: usize,
    pub after: usize,
}

/// Drop clusters whose highest annual frequency is below `min_annual_freq`.
pub fn prune_rare(
    clusters: Vec<EntityCluster>,
    min_annual_freq: u64,
) -> (Vec<EntityCluster>, PruneReport) {
    let before = clusters.len();
    let kept: Vec<_> = clusters
        .into_iter()
        .filter(|c| c.max_annual_freq() >= min_annual_freq)
        .collect();
    let report = PruneReport {
        before,
        after: kept.len(),
    };
    (kept, report)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct NormalizationReport {
    pub mentions_in: usize,
    pub mentions_after_filter: usize,
    pub distinct_surfaces: usize,
    pub clusters_before_prune: usize,
    pub clusters_after_prune: usize,
}

#[derive(Debug, Clone)]
pub struct Normalization {
    pub clusters: Vec<EntityCluster>,
    pub report: NormalizationReport,
}

/// Full normalization: expand/filter, cluster, prune.
pub fn normalize(
    mentions: &[EntityMention],
    config: &NormalizationConfig,
) -> Result<Normalization> {
    config.validate()?;
    let filtered = expand_and_filter(mentions, config);
    let distinct: BTreeSet<(EntityClass, &str)> = filtered
        .iter()
        .map(|m| (m.class, m.surface.as_str()))
        .collect();
    let clusters = cluster_entities(&filtered, config);
    let before = clusters.len();
    let (clusters, prune) = prune_rare(clusters, config.min_annual_freq);
    log::info!(
        "normalized {} mentions into {} entities ({} before pruning)",
        mentions.len(),
        prune.after,
        before
    );
    Ok(Normalization {
        report: NormalizationReport {
            mentions_in: mentions.len(),
            mentions_after_filter: filtered.len(),
            distinct_surfaces: distinct.len(),
            clusters_before_prune: prune.before,
            clusters_after_prune: prune.after,
        },
        clusters,
    })
}

pub fn write_entities_jsonl<W: Write>(mut w: W, clusters: &[EntityCluster]) -> std::io::Result<()> {
    for c in clusters {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Entity mentions of every paper, resolved to entity ids.
#[derive(Debug, Clone)]
pub struct EntityTable {
    per_paper: Vec<Vec<(EntityId, EntityClass)>>,
    classes: BTreeMap<EntityId, EntityClass>,
}

impl EntityTable {
    /// Resolve corpus mentions through the normalization config and clusters.
    /// Mentions whose surface was filtered or pruned are dropped.
    pub fn build(
        corpus: &Corpus,
        clusters: &[EntityCluster],
        config: &NormalizationConfig,
    ) -> Self {
        let mut lookup: HashMap<(EntityClass, &str), EntityId> = HashMap::new();
        for c in clusters {
            for m in &c.members {
                lookup.insert((c.class, m.as_str()), c.entity_id);
            }
        }
        let per_paper = (0..corpus.len())
            .map(|i| {
                corpus
                    .mentions_of(i)
                    .filter_map(|m| {
                        let surface = config.normalize_surface(&m.surface)?;
                        lookup
                            .get(&(m.class, surface.as_str()))
                            .map(|&id| (id, m.class))
                    })
                    .collect()
            })
            .collect();
        EntityTable {
            per_paper,
            classes: clusters.iter().map(|c| (c.entity_id, c.class)).collect(),
        }
    }

    /// Build directly from per-paper entity lists (indexed like the corpus).
    pub fn from_lists(per_paper: Vec<Vec<(EntityId, EntityClass)>>) -> Self {
        let classes = per_paper.iter().flatten().map(|&(id, c)| (id, c)).collect();
        EntityTable { per_paper, classes }
    }

    pub fn mentions(&self, paper: usize) -> &[(EntityId, EntityClass)] {
        &self.per_paper[paper]
    }

    /// Distinct entity ids of a paper, ascending.
    pub fn distinct(&self, paper: usize) -> Vec<EntityId> {
        let set: BTreeSet<EntityId> = self.per_paper[paper].iter().map(|&(e, _)| e).collect();
        set.into_iter().collect()
    }

    pub fn class_of(&self, entity: EntityId) -> Option<EntityClass> {
        self.classes.get(&entity).copied()
    }

    pub fn n_papers(&self) -> usize {
        self.per_paper.len()
    }

    pub fn subset(&self, keep: &[usize]) -> EntityTable {
        EntityTable {
            per_paper: keep.iter().map(|&i| self.per_paper[i].clone()).collect(),
            classes: self.classes.clone(),
        }
    }
}
