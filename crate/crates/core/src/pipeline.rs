//! Step orchestration: load inputs, run each analysis, write CSV outputs
//! with JSON sidecars, and record a manifest of digests and timings.

use std::cell::OnceCell;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::citeflow::{citation_proportions, ecc, hhi, paper_rows, year_breakdown};
use crate::config::{ClassFilter, RunConfig};
use crate::coocnet::{analyze_year, year_graph, NetworkOptions};
use crate::corpus::{load_corpus, Corpus, PaperType, Sector};
use crate::entnorm::{normalize, write_entities_jsonl, EntityTable, Normalization};
use crate::entsim::{collaboration_share, csv_err, similarity_matrix, BowOptions};
use crate::error::{Error, Result};
use crate::semsim::{global_threshold, proportion_matrix, top_pairs_export, write_top_pairs};
use crate::studies::{
    cv_stability, psm_study, run_regression, write_coefficients, write_regression_table,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const QUANTILE_RULE: &str = "linear interpolation between order statistics (type 7)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    Validate,
    Normalize,
    EntitySim,
    SemanticSim,
    Network,
    CiteFlow,
    Regress,
    Stability,
    Psm,
}

impl Step {
    pub const ALL: [Step; 9] = [
        Step::Validate,
        Step::Normalize,
        Step::EntitySim,
        Step::SemanticSim,
        Step::Network,
        Step::CiteFlow,
        Step::Regress,
        Step::Stability,
        Step::Psm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Step::Validate => "validate",
            Step::Normalize => "normalize",
            Step::EntitySim => "entity-sim",
            Step::SemanticSim => "semantic-sim",
            Step::Network => "network",
            Step::CiteFlow => "cite-flow",
            Step::Regress => "regress",
            Step::Stability => "stability",
            Step::Psm => "psm",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Step {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Step::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::config("subcommand", format!("unknown step `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: Step,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
}

impl Manifest {
    /// Output digests keyed by path, for reproducibility checks.
    pub fn output_digests(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = self
            .steps
            .iter()
            .flat_map(|s| s.outputs.iter().map(|d| (d.path.clone(), d.sha256.clone())))
            .collect();
        v.sort();
        v
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects the files one step writes.
struct Outputs<'a> {
    dir: &'a Path,
    seed: u64,
    files: Vec<FileDigest>,
}

impl<'a> Outputs<'a> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn with_buffer(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    /// Writes a JSON sidecar; the run seed is always recorded.
    fn json(&mut self, name: &str, mut value: serde_json::Value) -> Result<()> {
        if let Some(obj) = value.as_object_mut() {
            obj.entry("seed").or_insert(json!(self.seed));
            obj.insert("version".into(), json!(VERSION));
        }
        let mut bytes =
            serde_json::to_vec_pretty(&value).map_err(|e| Error::Invalid(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn csv_rows<T: Serialize>(&mut self, name: &str, header: &[&str], rows: &[T]) -> Result<()> {
        self.with_buffer(name, |buf| {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(buf);
            w.write_record(header).map_err(csv_err)?;
            for r in rows {
                w.serialize(r).map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io(name, e))
        })
    }
}

fn class_label(c: ClassFilter) -> &'static str {
    c.map_or("all", |c| c.as_str())
}

/// Runs steps over one configuration, loading the corpus and entity table
/// at most once.
pub struct Pipeline<'a> {
    cfg: &'a RunConfig,
    config_bytes: &'a [u8],
    corpus: OnceCell<Corpus>,
    entities: OnceCell<(Normalization, EntityTable)>,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a RunConfig, config_bytes: &'a [u8]) -> Self {
        Pipeline {
            cfg,
            config_bytes,
            corpus: OnceCell::new(),
            entities: OnceCell::new(),
        }
    }

    fn corpus(&self) -> Result<&Corpus> {
        if let Some(c) = self.corpus.get() {
            return Ok(c);
        }
        let c = load_corpus(&self.cfg.corpus_paths(), &self.cfg.corpus_config()?)?;
        Ok(self.corpus.get_or_init(|| c))
    }

    fn entities(&self) -> Result<&(Normalization, EntityTable)> {
        if let Some(e) = self.entities.get() {
            return Ok(e);
        }
        let corpus = self.corpus()?;
        let ncfg = self.cfg.normalization()?;
        let norm = normalize(corpus.mentions(), &ncfg)?;
        let table = EntityTable::build(corpus, &norm.clusters, &ncfg);
        Ok(self.entities.get_or_init(|| (norm, table)))
    }

    fn inputs(&self, step: Step) -> Result<Vec<FileDigest>> {
        let c = &self.cfg.corpus;
        let mut paths: Vec<&PathBuf> = vec![&c.papers];
        let needs_entities = matches!(
            step,
            Step::Normalize
                | Step::EntitySim
                | Step::Network
                | Step::Stability
                | Step::Psm
                | Step::Validate
        );
        let needs_embeddings = matches!(step, Step::SemanticSim | Step::Regress | Step::Validate);
        let needs_citations = matches!(
            step,
            Step::CiteFlow | Step::Regress | Step::Psm | Step::Validate
        );
        if needs_entities {
            paths.extend(c.entities.as_ref());
            if step != Step::Validate && step != Step::Psm {
                paths.extend(self.cfg.normalize.abbreviations.as_ref());
                paths.extend(self.cfg.normalize.stoplist.as_ref());
            }
        }
        if needs_embeddings {
            paths.extend(c.embeddings.as_ref());
        }
        if needs_citations {
            paths.extend(c.citations.as_ref());
        }
        paths.into_iter().map(|p| digest_file(p)).collect()
    }

    pub fn run(&self, steps: &[Step]) -> Result<Manifest> {
        let out = &self.cfg.out;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let config_hash = {
            // output location and thread count do not change results
            let mut cfg = self.cfg.clone();
            cfg.out = PathBuf::new();
            cfg.workers = None;
            let effective = serde_json::to_vec(&cfg).map_err(|e| Error::Invalid(e.to_string()))?;
            let mut h = Sha256::new();
            h.update(self.config_bytes);
            h.update(&effective);
            hex::encode(h.finalize())
        };
        let mut records = Vec::new();
        for &step in steps {
            let started = Instant::now();
            log::info!("step {step}: starting");
            let mut outputs = Outputs {
                dir: out,
                seed: self.cfg.seed,
                files: Vec::new(),
            };
            self.run_step(step, &mut outputs)?;
            let seconds = started.elapsed().as_secs_f64();
            log::info!(
                "step {step}: {} files in {seconds:.2}s",
                outputs.files.len()
            );
            records.push(StepRecord {
                step,
                inputs: self.inputs(step)?,
                outputs: outputs.files,
                seconds,
            });
        }
        let manifest = Manifest {
            version: VERSION.to_string(),
            config_hash,
            seed: self.cfg.seed,
            steps: records,
        };
        let path = out.join("manifest.json");
        let bytes =
            serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    fn run_step(&self, step: Step, out: &mut Outputs<'_>) -> Result<()> {
        match step {
            Step::Validate => self.validate(out),
            Step::Normalize => self.normalize(out),
            Step::EntitySim => self.entity_sim(out),
            Step::SemanticSim => self.semantic_sim(out),
            Step::Network => self.network(out),
            Step::CiteFlow => self.cite_flow(out),
            Step::Regress => self.regress(out),
            Step::Stability => self.stability(out),
            Step::Psm => self.psm(out),
        }
    }

    fn validate(&self, out: &mut Outputs<'_>) -> Result<()> {
        let corpus = self.corpus()?;
        let r = corpus.report();
        out.json(
            "validation.json",
            json!({
                "papers": corpus.len(),
                "dropped_total": r.dropped_total(),
                "report": r,
                "embedding_dim": corpus.embedding_dim(),
            }),
        )
    }

    fn normalize(&self, out: &mut Outputs<'_>) -> Result<()> {
        let (norm, _) = self.entities()?;
        out.with_buffer("entities.jsonl", |buf| {
            write_entities_jsonl(buf, &norm.clusters).map_err(|e| Error::io("entities.jsonl", e))
        })?;
        let n = &self.cfg.normalize;
        out.json(
            "entities.json",
            json!({
                "report": norm.report,
                "same_cluster_sim": n.same_cluster_sim,
                "merge_avg_sim": n.merge_avg_sim,
                "min_annual_freq": n.min_annual_freq,
                "clustering": "per entity class",
            }),
        )
    }

    fn entity_sim(&self, out: &mut Outputs<'_>) -> Result<()> {
        let corpus = self.corpus()?;
        let (_, table) = self.entities()?;
        let years = corpus.years();
        for filter in self.cfg.class_filters()? {
            let opts = BowOptions {
                class_filter: filter,
                dedup_per_paper: self.cfg.entity_sim.dedup_per_paper,
            };
            let m = similarity_matrix(
                corpus,
                table,
                (Sector::Industry, years),
                (Sector::Academic, years),
                opts,
            )?;
            let stem = format!("entity_sim_{}", class_label(filter));
            out.with_buffer(&format!("{stem}.csv"), |buf| m.write_csv(buf))?;
            out.json(
                &format!("{stem}.json"),
                json!({
                    "row_side": m.row_side,
                    "col_side": m.col_side,
                    "class_filter": class_label(filter),
                    "dedup_per_paper": opts.dedup_per_paper,
                    "weighting": "raw mention counts",
                }),
            )?;
        }
        let share = collaboration_share(corpus);
        let rows: Vec<(i32, f64)> = share.share.iter().map(|(&y, &s)| (y, s)).collect();
        out.csv_rows("collaboration_share.csv", &["year", "share"], &rows)?;
        out.json(
            "collaboration_share.json",
            json!({ "missing_years": share.missing_years }),
        )
    }

    fn semantic_sim(&self, out: &mut Outputs<'_>) -> Result<()> {
        let corpus = self.corpus()?;
        let s = &self.cfg.semantic;
        let (threshold, source) = match s.threshold {
            Some(t) => (t, "configured"),
            None => (
                global_threshold(corpus, s.quantile, s.same_year_pairs)?,
                "corpus quantile",
            ),
        };
        log::info!("semantic threshold {threshold:.4} ({source})");
        for side in [Sector::Academic, Sector::Industry] {
            let m = proportion_matrix(corpus, side, threshold, s.quantile)?;
            let stem = format!("semantic_proportion_{}", side.as_str());
            out.with_buffer(&format!("{stem}.csv"), |buf| m.write_csv(buf))?;
            out.json(
                &format!("{stem}.json"),
                json!({
                    "focal_side": side,
                    "threshold": threshold,
                    "threshold_source": source,
                    "q": s.quantile,
                    "quantile_rule": QUANTILE_RULE,
                    "same_year_pairs": s.same_year_pairs,
                    "missing_cells": m.missing_cells(),
                    "denominators": m.denominators,
                }),
            )?;
        }
        let years = corpus.years();
        let focal_year = s.top_focal_year.unwrap_or(years.end);
        let max_target = if focal_year > years.start {
            focal_year - 1
        } else {
            focal_year
        };
        let pairs = top_pairs_export(corpus, focal_year, Sector::Academic, s.top_k, max_target)?;
        out.with_buffer("semantic_top_pairs.csv", |buf| write_top_pairs(buf, &pairs))?;
        out.json(
            "semantic_top_pairs.json",
            json!({
                "focal_year": focal_year,
                "focal_side": Sector::Academic,
                "max_target_year": max_target,
                "k": s.top_k,
            }),
        )
    }

    fn network(&self, out: &mut Outputs<'_>) -> Result<()> {
        let corpus = self.corpus()?;
        let (_, table) = self.entities()?;
        let seed = self.cfg.network_seed();
        let opts = NetworkOptions {
            unweighted: self.cfg.network.unweighted,
            shared_partition: self.cfg.network.shared_partition,
        };
        let years: Vec<i32> = corpus.years().years().collect();
        let results = years
            .par_iter()
            .map(|&y| analyze_year(corpus, table, y, seed, opts))
            .collect::<Result<Vec<_>>>()?;
        let lcc: Vec<_> = results
            .iter()
            .map(|r| {
                let m = &r.lcc.per_type_missing;
                (
                    r.lcc.year,
                    r.lcc.full_lcc_size,
                    m[&PaperType::Academic],
                    m[&PaperType::Industry],
                    m[&PaperType::Cooperation],
                )
            })
            .collect();
        out.csv_rows(
            "network_lcc.csv",
            &[
                "year",
                "full_lcc",
                "missing_academic",
                "missing_industry",
                "missing_cooperation",
            ],
            &lcc,
        )?;
        let common: Vec<_> = results
            .iter()
            .flat_map(|r| {
                r.common
                    .edge_scale
                    .iter()
                    .map(|(t, &e)| (r.common.year, t.as_str(), r.common.common_nodes.len(), e))
            })
            .collect();
        out.csv_rows(
            "network_common.csv",
            &["year", "type", "common_nodes", "common_edge_scale"],
            &common,
        )?;
        let modularity: Vec<_> = results
            .iter()
            .flat_map(|r| {
                r.modularity
                    .iter()
                    .map(|m| (m.year, m.paper_type.as_str(), m.q, m.n_communities, m.seed))
            })
            .collect();
        out.csv_rows(
            "network_modularity.csv",
            &["year", "type", "modularity_q", "n_communities", "seed"],
            &modularity,
        )?;
        if self.cfg.network.edge_lists {
            for &y in &years {
                let g = year_graph(corpus, table, y, &PaperType::CLASSIFIED);
                out.with_buffer(&format!("network_edges_{y}.csv"), |buf| {
                    g.write_edge_list(buf)
                })?;
            }
        }
        out.json(
            "network.json",
            json!({
                "network_seed": seed,
                "weighted": !opts.unweighted,
                "shared_partition": opts.shared_partition,
                "all_papers_graph": "academic, industry and cooperation papers",
            }),
        )
    }

    fn cite_flow(&self, out: &mut Outputs<'_>) -> Result<()> {
        let corpus = self.corpus()?;
        let c = &self.cfg.citation;
        let mut props = Vec::new();
        let mut eccs = Vec::new();
        for y in corpus.years().years() {
            for t in PaperType::CLASSIFIED {
                let b = year_breakdown(corpus, y, &[t]);
                let p = citation_proportions(corpus, y, t);
                props.push((
                    y,
                    t.as_str(),
                    p.map(|p| p[0]),
                    p.map(|p| p[1]),
                    p.map(|p| p[2]),
                    hhi(&b),
                    b.total(),
                ));
            }
            for side in [Sector::Academic, Sector::Industry] {
                eccs.push((y, side.as_str(), ecc(corpus, y, side, c.ecc_baseline)));
            }
        }
        out.csv_rows(
            "citation_proportions.csv",
            &[
                "year",
                "citing_type",
                "p_academic",
                "p_industry",
                "p_cooperation",
                "hhi",
                "n_classified_refs",
            ],
            &props,
        )?;
        out.csv_rows("citation_ecc.csv", &["year", "side", "ecc"], &eccs)?;
        let rows = paper_rows(corpus, &c.terms);
        let undefined = rows.iter().filter(|r| r.hhi.is_none()).count();
        out.csv_rows(
            "citation_papers.csv",
            &["paper_id", "hhi", "n_classified_refs", "high_compute_flag"],
            &rows,
        )?;
        out.json(
            "citation.json",
            json!({
                "ecc_baseline": c.ecc_baseline,
                "terms": c.terms,
                "term_matching": "whole token, case-insensitive, optional trailing s",
                "papers_without_classified_refs": undefined,
            }),
        )
    }

    fn regress(&self, out: &mut Outputs<'_>) -> Result<()> {
        let corpus = self.corpus()?;
        let fam = run_regression(corpus, &self.cfg.periods()?, self.cfg.semantic.quantile)?;
        out.with_buffer("regression_table.csv", |buf| {
            write_regression_table(buf, &fam.models)
        })?;
        out.with_buffer("regression_coefficients.csv", |buf| {
            write_coefficients(buf, &fam.models)
        })?;
        let vif: Vec<_> = fam
            .models
            .iter()
            .filter_map(|m| m.vif.as_ref().map(|v| (m, v)))
            .flat_map(|(m, v)| {
                v.iter().map(move |(n, x)| {
                    let value = if x.is_finite() {
                        format!("{x:.6}")
                    } else {
                        "inf".to_string()
                    };
                    (m.model, m.period.label.clone(), n.clone(), value)
                })
            })
            .collect();
        out.csv_rows(
            "regression_vif.csv",
            &["model", "period", "term", "vif"],
            &vif,
        )?;
        out.json(
            "regression.json",
            json!({
                "sample": fam.sample,
                "q": self.cfg.semantic.quantile,
                "quantile_rule": QUANTILE_RULE,
                "standard_errors": "HC1",
                "reference_levels": { "paper_type": "industry", "year": "earliest year in each sample" },
                "models": fam.models.iter().map(|m| json!({
                    "model": m.model,
                    "period": m.period.label,
                    "full_controls": m.full_controls,
                    "n_obs": m.fit.n_obs,
                    "r_squared": m.fit.r_squared,
                    "mean_vif": m.mean_vif(),
                })).collect::<Vec<_>>(),
            }),
        )
    }

    fn stability(&self, out: &mut Outputs<'_>) -> Result<()> {
        let corpus = self.corpus()?;
        let (_, table) = self.entities()?;
        let cfg = self.cfg.stability_config();
        let report = cv_stability(corpus, table, &cfg)?;
        let cells: Vec<_> = report
            .cells
            .iter()
            .map(|c| (c.metric.as_str(), c.proportion, c.year, c.cv))
            .collect();
        out.csv_rows("stability_cv.csv", &["metric", "r", "year", "cv"], &cells)?;
        let summary: Vec<_> = report
            .summary
            .iter()
            .map(|s| (s.metric.as_str(), s.proportion, s.mean_cv, s.u_test_p))
            .collect();
        out.csv_rows(
            "stability_summary.csv",
            &["metric", "r", "mean_cv", "u_test_p"],
            &summary,
        )?;
        out.json(
            "stability.json",
            json!({
                "stability_seed": cfg.seed,
                "repetitions": cfg.repetitions,
                "proportions": cfg.proportions,
                "metrics": cfg.metrics,
                "sampling": "per year, uniform without replacement",
                "cv": "sample standard deviation over mean",
                "u_test_reference": "collaboration-share",
            }),
        )
    }

    fn psm(&self, out: &mut Outputs<'_>) -> Result<()> {
        let corpus = self.corpus()?;
        let cfg = self.cfg.psm_config();
        let (units, report) = psm_study(corpus, &cfg)?;
        let balance: Vec<_> = report
            .balance
            .iter()
            .map(|b| (b.covariate.as_str(), b.smd_pre, b.smd_post, b.ratio))
            .collect();
        out.csv_rows(
            "psm_balance.csv",
            &["covariate", "smd_pre", "smd_post", "ratio"],
            &balance,
        )?;
        out.csv_rows(
            "psm_outcome.csv",
            &[
                "ratio",
                "n_treated",
                "n_controls",
                "treated_mean",
                "control_mean",
                "u_statistic",
                "z",
                "p_value",
            ],
            &report.outcomes,
        )?;
        let n_treated = units.iter().filter(|u| u.treated).count();
        out.json(
            "psm.json",
            json!({
                "ratios": cfg.ratios,
                "terms": cfg.terms,
                "covariates": crate::studies::PSM_COVARIATES,
                "n_treated": n_treated,
                "n_controls": units.len() - n_treated,
                "matching": "greedy nearest neighbour on propensity, without replacement, descending propensity",
                "short_matches": report.matches.iter().map(|m| json!({"ratio": m.ratio, "short": m.short_matches})).collect::<Vec<_>>(),
                "warnings": report.warnings,
                "logit": report.logit,
            }),
        )
    }
}

/// Validate the configuration and run the given steps.
pub fn run(cfg: &RunConfig, config_bytes: &[u8], steps: &[Step]) -> Result<Manifest> {
    cfg.validate()?;
    Pipeline::new(cfg, config_bytes).run(steps)
}
