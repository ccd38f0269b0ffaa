//! Entity co-occurrence networks: per-paper clique expansion, largest
//! connected components, common-node edge counts, modularity and Louvain
//! community detection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Corpus, PaperType};
use crate::entnorm::{EntityId, EntityTable};
use crate::entsim::csv_err;
use crate::error::{Error, Result};

/// Undirected weighted graph without self-loops. Edge keys are `(lo, hi)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoocGraph {
    nodes: BTreeSet<EntityId>,
    edges: BTreeMap<(EntityId, EntityId), u64>,
}

impl CoocGraph {
    /// Build from explicit nodes and edges; repeated edges accumulate.
    pub fn from_edges(
        nodes: impl IntoIterator<Item = EntityId>,
        edges: impl IntoIterator<Item = (EntityId, EntityId, u64)>,
    ) -> Result<Self> {
        let mut g = CoocGraph {
            nodes: nodes.into_iter().collect(),
            edges: BTreeMap::new(),
        };
        for (a, b, w) in edges {
            if a == b {
                return Err(Error::Invalid(format!("self-loop on entity {a}")));
            }
            if w == 0 {
                continue;
            }
            g.nodes.insert(a);
            g.nodes.insert(b);
            *g.edges.entry((a.min(b), a.max(b))).or_insert(0) += w;
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &BTreeSet<EntityId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeMap<(EntityId, EntityId), u64> {
        &self.edges
    }

    pub fn weight(&self, a: EntityId, b: EntityId) -> u64 {
        self.edges.get(&(a.min(b), a.max(b))).copied().unwrap_or(0)
    }

    /// Sum of edge weights, `m`.
    pub fn total_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    pub fn degrees(&self) -> BTreeMap<EntityId, u64> {
        let mut d: BTreeMap<EntityId, u64> = self.nodes.iter().map(|&n| (n, 0)).collect();
        for (&(a, b), &w) in &self.edges {
            *d.get_mut(&a).expect("edge endpoint is a node") += w;
            *d.get_mut(&b).expect("edge endpoint is a node") += w;
        }
        d
    }

    /// Same topology with every edge weight set to 1.
    pub fn unweighted(&self) -> CoocGraph {
        CoocGraph {
            nodes: self.nodes.clone(),
            edges: self.edges.keys().map(|&k| (k, 1)).collect(),
        }
    }

    fn adjacency(&self) -> BTreeMap<EntityId, Vec<EntityId>> {
        let mut adj: BTreeMap<EntityId, Vec<EntityId>> =
            self.nodes.iter().map(|&n| (n, Vec::new())).collect();
        for &(a, b) in self.edges.keys() {
            adj.get_mut(&a).expect("node").push(b);
            adj.get_mut(&b).expect("node").push(a);
        }
        adj
    }

    pub fn write_edge_list<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["source", "target", "weight"])
            .map_err(csv_err)?;
        for (&(a, b), &wt) in &self.edges {
            out.write_record([a.to_string(), b.to_string(), wt.to_string()])
                .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Each paper's distinct entities form a clique; edge weight counts papers.
pub fn build_graph(entities: &EntityTable, papers: impl IntoIterator<Item = usize>) -> CoocGraph {
    let mut g = CoocGraph::default();
    for p in papers {
        let ids = entities.distinct(p);
        g.nodes.extend(ids.iter().copied());
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                *g.edges.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    g
}

/// Papers of one year of the given types.
pub fn year_graph(
    corpus: &Corpus,
    entities: &EntityTable,
    year: i32,
    types: &[PaperType],
) -> CoocGraph {
    build_graph(
        entities,
        types
            .iter()
            .flat_map(|&t| corpus.papers_of(year, t))
            .collect::<Vec<_>>(),
    )
}

/// Largest component; ties go to the component with the smallest entity id.
pub fn largest_connected_component(g: &CoocGraph) -> BTreeSet<EntityId> {
    let adj = g.adjacency();
    let mut seen: BTreeSet<EntityId> = BTreeSet::new();
    let mut best: BTreeSet<EntityId> = BTreeSet::new();
    for &start in &g.nodes {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(n) = stack.pop() {
            for &m in &adj[&n] {
                if seen.insert(m) {
                    comp.insert(m);
                    stack.push(m);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LccReport {
    pub year: i32,
    pub full_lcc_size: usize,
    /// `None` when the full LCC is empty.
    pub per_type_missing: BTreeMap<PaperType, Option<f64>>,
}

/// LCC shrinkage when each classified paper type is left out in turn.
pub fn missing_proportion(corpus: &Corpus, entities: &EntityTable, year: i32) -> LccReport {
    let all = PaperType::CLASSIFIED;
    let full = largest_connected_component(&year_graph(corpus, entities, year, &all)).len();
    let per_type_missing = all
        .iter()
        .map(|&left_out| {
            let keep: Vec<PaperType> = all.iter().copied().filter(|&t| t != left_out).collect();
            let value = (full > 0).then(|| {
                let reduced =
                    largest_connected_component(&year_graph(corpus, entities, year, &keep)).len();
                (1.0 - reduced as f64 / full as f64).clamp(0.0, 1.0)
            });
            (left_out, value)
        })
        .collect();
    LccReport {
        year,
        full_lcc_size: full,
        per_type_missing,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommonNodeReport {
    pub year: i32,
    pub common_nodes: BTreeSet<EntityId>,
    pub edge_scale: BTreeMap<PaperType, usize>,
}

pub fn common_nodes_and_edges(
    year: i32,
    academic: &CoocGraph,
    industry: &CoocGraph,
    cooperation: &CoocGraph,
) -> CommonNodeReport {
    let common: BTreeSet<EntityId> = academic
        .nodes
        .iter()
        .filter(|n| industry.nodes.contains(n) && cooperation.nodes.contains(n))
        .copied()
        .collect();
    let scale = |g: &CoocGraph| {
        g.edges
            .keys()
            .filter(|(a, b)| common.contains(a) && common.contains(b))
            .count()
    };
    let edge_scale = BTreeMap::from([
        (PaperType::Academic, scale(academic)),
        (PaperType::Industry, scale(industry)),
        (PaperType::Cooperation, scale(cooperation)),
    ]);
    CommonNodeReport {
        year,
        common_nodes: common,
        edge_scale,
    }
}

/// Community assignment. Ids are contiguous from 0 in order of each
/// community's smallest node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    assignment: BTreeMap<EntityId, usize>,
}

impl Partition {
    pub fn from_assignment(raw: impl IntoIterator<Item = (EntityId, usize)>) -> Self {
        let raw: BTreeMap<EntityId, usize> = raw.into_iter().collect();
        let mut relabel: HashMap<usize, usize> = HashMap::new();
        let assignment = raw
            .into_iter()
            .map(|(n, c)| {
                let next = relabel.len();
                (n, *relabel.entry(c).or_insert(next))
            })
            .collect();
        Partition { assignment }
    }

    pub fn single(g: &CoocGraph) -> Self {
        Partition::from_assignment(g.nodes.iter().map(|&n| (n, 0)))
    }

    pub fn singletons(g: &CoocGraph) -> Self {
        Partition::from_assignment(g.nodes.iter().map(|&n| (n, n as usize)))
    }

    pub fn community(&self, node: EntityId) -> Option<usize> {
        self.assignment.get(&node).copied()
    }

    pub fn n_communities(&self) -> usize {
        self.assignment.values().max().map_or(0, |m| m + 1)
    }

    pub fn assignment(&self) -> &BTreeMap<EntityId, usize> {
        &self.assignment
    }

    /// Restrict to the nodes of `g`, relabelling contiguously.
    pub fn restrict(&self, g: &CoocGraph) -> Result<Partition> {
        let mut out = Vec::new();
        for &n in &g.nodes {
            let c = self
                .community(n)
                .ok_or_else(|| Error::Invalid(format!("partition misses node {n}")))?;
            out.push((n, c));
        }
        Ok(Partition::from_assignment(out))
    }
}

pub fn modularity(g: &CoocGraph, p: &Partition) -> Result<f64> {
    let m = g.total_weight();
    if m == 0 {
        return Err(Error::Invalid(
            "modularity undefined on a graph without edges".into(),
        ));
    }
    let mut internal: BTreeMap<usize, u64> = BTreeMap::new();
    let mut total: BTreeMap<usize, u64> = BTreeMap::new();
    for (n, k) in g.degrees() {
        let c = p
            .community(n)
            .ok_or_else(|| Error::Invalid(format!("partition misses node {n}")))?;
        *total.entry(c).or_insert(0) += k;
    }
    for (&(a, b), &w) in &g.edges {
        let (ca, cb) = (p.community(a), p.community(b));
        if ca == cb {
            // ordered pairs count each internal edge twice
            *internal.entry(ca.expect("checked above")).or_insert(0) += 2 * w;
        }
    }
    let two_m = (2 * m) as f64;
    let sum: f64 = total
        .iter()
        .map(|(c, &tot)| {
            let inside = internal.get(c).copied().unwrap_or(0) as f64;
            let tot = tot as f64;
            inside - tot * tot / two_m
        })
        .sum();
    Ok(sum / two_m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LouvainResult {
    pub partition: Partition,
    pub q: f64,
    /// Modularity after each aggregation level.
    pub level_q: Vec<f64>,
    pub seed: u64,
}

/// Weighted graph over `0..n` used inside Louvain levels.
struct LevelGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    degree: Vec<f64>,
    two_m: f64,
}

impl LevelGraph {
    fn n(&self) -> usize {
        self.adj.len()
    }

    /// One local-moving phase. Returns the community of every node and
    /// whether anything moved.
    fn local_moves(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.n();
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot: Vec<f64> = self.degree.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut moved_any = false;
        let mut links = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        loop {
            let mut moved = false;
            for &i in &order {
                let own = comm[i];
                let ki = self.degree[i];
                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if links[c] == 0.0 {
                        touched.push(c);
                    }
                    links[c] += w;
                }
                tot[own] -= ki;
                let gain = |c: usize, link: f64| link - tot[c] * ki / self.two_m;
                let mut best = own;
                let mut best_gain = gain(own, links[own]);
                touched.sort_unstable();
                for &c in &touched {
                    let g = gain(c, links[c]);
                    if g > best_gain + 1e-12 {
                        best = c;
                        best_gain = g;
                    }
                }
                tot[best] += ki;
                if best != own {
                    comm[i] = best;
                    moved = true;
                    moved_any = true;
                }
                for &c in &touched {
                    links[c] = 0.0;
                }
                touched.clear();
            }
            if !moved {
                break;
            }
        }
        (comm, moved_any)
    }

    fn aggregate(&self, comm: &[usize]) -> (LevelGraph, Vec<usize>) {
        // relabel communities in order of first appearance
        let mut relabel = vec![usize::MAX; self.n()];
        let mut k = 0;
        let dense: Vec<usize> = comm
            .iter()
            .map(|&c| {
                if relabel[c] == usize::MAX {
                    relabel[c] = k;
                    k += 1;
                }
                relabel[c]
            })
            .collect();
        let mut weights: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut self_loops = vec![0.0; k];
        let mut degree = vec![0.0; k];
        for i in 0..self.n() {
            let ci = dense[i];
            degree[ci] += self.degree[i];
            self_loops[ci] += self.self_loops[i];
            for &(j, w) in &self.adj[i] {
                let cj = dense[j];
                if ci == cj {
                    // each internal edge is seen from both endpoints
                    self_loops[ci] += w / 2.0;
                } else {
                    *weights[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        let adj = weights
            .into_iter()
            .map(|m| m.into_iter().collect())
            .collect();
        (
            LevelGraph {
                adj,
                self_loops,
                degree,
                two_m: self.two_m,
            },
            dense,
        )
    }
}

/// Louvain community detection with a seeded node visit order.
pub fn louvain(g: &CoocGraph, seed: u64) -> Result<LouvainResult> {
    let m = g.total_weight();
    if m == 0 {
        return Err(Error::Invalid(
            "Louvain needs a graph with at least one edge".into(),
        ));
    }
    let ids: Vec<EntityId> = g.nodes.iter().copied().collect();
    let pos: HashMap<EntityId, usize> = ids.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut adj = vec![Vec::new(); ids.len()];
    let mut degree = vec![0.0; ids.len()];
    for (&(a, b), &w) in &g.edges {
        let (i, j, w) = (pos[&a], pos[&b], w as f64);
        adj[i].push((j, w));
        adj[j].push((i, w));
        degree[i] += w;
        degree[j] += w;
    }
    let mut level = LevelGraph {
        adj,
        self_loops: vec![0.0; ids.len()],
        degree,
        two_m: 2.0 * m as f64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // membership of each original node in the current level's nodes
    let mut membership: Vec<usize> = (0..ids.len()).collect();
    let mut level_q = Vec::new();
    let to_partition = |membership: &[usize]| {
        Partition::from_assignment(ids.iter().zip(membership).map(|(&n, &c)| (n, c)))
    };
    level_q.push(modularity(g, &to_partition(&membership))?);
    loop {
        let (comm, moved) = level.local_moves(&mut rng);
        if !moved {
            break;
        }
        let (next, dense) = level.aggregate(&comm);
        let candidate: Vec<usize> = membership.iter().map(|&c| dense[c]).collect();
        let q = modularity(g, &to_partition(&candidate))?;
        if q <= *level_q.last().expect("initial entry") + 1e-12 {
            break;
        }
        membership = candidate;
        level = next;
        level_q.push(q);
    }
    let partition = to_partition(&membership);
    let q = modularity(g, &partition)?;
    Ok(LouvainResult {
        partition,
        q,
        level_q,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModularityRow {
    pub year: i32,
    pub paper_type: PaperType,
    /// `None` for graphs without edges.
    pub q: Option<f64>,
    pub n_communities: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NetworkOptions {
    pub unweighted: bool,
    /// Score every type subgraph with the partition found on the all-papers
    /// graph instead of running Louvain per subgraph.
    pub shared_partition: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearNetwork {
    pub lcc: LccReport,
    pub common: CommonNodeReport,
    pub modularity: Vec<ModularityRow>,
}

pub fn analyze_year(
    corpus: &Corpus,
    entities: &EntityTable,
    year: i32,
    seed: u64,
    opts: NetworkOptions,
) -> Result<YearNetwork> {
    let prep = |g: CoocGraph| if opts.unweighted { g.unweighted() } else { g };
    let graphs: Vec<(PaperType, CoocGraph)> = PaperType::CLASSIFIED
        .iter()
        .map(|&t| (t, prep(year_graph(corpus, entities, year, &[t]))))
        .collect();
    let common = common_nodes_and_edges(year, &graphs[0].1, &graphs[1].1, &graphs[2].1);
    let shared = if opts.shared_partition {
        let all = prep(year_graph(corpus, entities, year, &PaperType::CLASSIFIED));
        if all.total_weight() > 0 {
            Some(louvain(&all, seed)?.partition)
        } else {
            None
        }
    } else {
        None
    };
    let mut rows = Vec::new();
    for (t, g) in &graphs {
        let (q, n_communities) = if g.total_weight() == 0 {
            (None, 0)
        } else if let Some(p) = &shared {
            let p = p.restrict(g)?;
            (Some(modularity(g, &p)?), p.n_communities())
        } else {
            let r = louvain(g, seed)?;
            (Some(r.q), r.partition.n_communities())
        };
        rows.push(ModularityRow {
            year,
            paper_type: *t,
            q,
            n_communities,
            seed,
        });
    }
    Ok(YearNetwork {
        lcc: missing_proportion(corpus, entities, year),
        common,
        modularity: rows,
    })
}
