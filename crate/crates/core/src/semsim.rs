//! Embedding-based proximity: pairwise cosine similarity, per-paper quantile
//! scores against the opposing side, a corpus-wide high-similarity threshold,
//! and year-by-year proportions of papers above it.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, PaperType, Sector};
use crate::entsim::csv_err;
use crate::error::{Error, Result};
use crate::stats::quantile_in_place;

pub const DEFAULT_QUANTILE: f64 = 0.9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn cosine_embedding(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Invalid("cosine of a zero vector".into()));
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "quantile level {q} must lie in (0, 1)"
        )))
    }
}

/// q-quantile of the focal vector's similarities to every opposing vector.
pub fn paper_score(focal: &[f64], opposing: &[&[f64]], q: f64) -> Result<f64> {
    check_q(q)?;
    if opposing.is_empty() {
        return Err(Error::Invalid(
            "paper score needs at least one opposing paper".into(),
        ));
    }
    let mut sims = opposing
        .iter()
        .map(|o| cosine_embedding(focal, o))
        .collect::<Result<Vec<_>>>()?;
    quantile_in_place(&mut sims, q)
}

/// An embedded paper with its cached norm.
#[derive(Clone, Copy)]
struct Emb<'a> {
    idx: usize,
    v: &'a [f64],
    n: f64,
}

fn embedded(corpus: &Corpus, papers: impl Iterator<Item = usize>) -> Vec<Emb<'_>> {
    papers
        .filter_map(|idx| {
            let v = corpus.embedding(idx)?;
            let n = norm(v);
            (n > 0.0).then_some(Emb { idx, v, n })
        })
        .collect()
}

fn side_papers(corpus: &Corpus, year: i32, side: Sector) -> Vec<Emb<'_>> {
    match side.paper_type() {
        Some(ty) => embedded(corpus, corpus.papers_of(year, ty)),
        None => Vec::new(),
    }
}

fn score_against(focal: Emb<'_>, opposing: &[Emb<'_>], q: f64) -> f64 {
    let mut sims: Vec<f64> = opposing
        .iter()
        .map(|o| cosine_with_norms(focal.v, focal.n, o.v, o.n))
        .collect();
    quantile_in_place(&mut sims, q).expect("non-empty finite similarities")
}

/// Similarities of every academic–industry pair. With `same_year` only pairs
/// published in the same year are included.
pub fn cross_similarities(corpus: &Corpus, same_year: bool) -> Vec<f64> {
    let years: Vec<i32> = corpus.years().years().collect();
    let academic: Vec<Vec<Emb<'_>>> = years
        .iter()
        .map(|&y| side_papers(corpus, y, Sector::Academic))
        .collect();
    let industry: Vec<Vec<Emb<'_>>> = years
        .iter()
        .map(|&y| side_papers(corpus, y, Sector::Industry))
        .collect();
    let all_industry: Vec<Emb<'_>> = industry.iter().flatten().copied().collect();
    academic
        .par_iter()
        .enumerate()
        .flat_map_iter(|(yi, group)| {
            let targets: &[Emb<'_>] = if same_year {
                &industry[yi]
            } else {
                &all_industry
            };
            group.iter().flat_map(move |a| {
                targets
                    .iter()
                    .map(move |i| cosine_with_norms(a.v, a.n, i.v, i.n))
            })
        })
        .collect()
}

/// q-quantile of all cross-side pairwise similarities.
pub fn global_threshold(corpus: &Corpus, q: f64, same_year: bool) -> Result<f64> {
    check_q(q)?;
    let mut sims = cross_similarities(corpus, same_year);
    if sims.is_empty() {
        return Err(Error::Invalid(
            "no embedded academic-industry pairs to set a threshold".into(),
        ));
    }
    quantile_in_place(&mut sims, q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProportionMatrix {
    pub focal_side: Sector,
    pub threshold: f64,
    pub q: f64,
    pub years: Vec<i32>,
    /// `values[i][j]`: focal year `years[i]` against target year `years[j]`;
    /// `None` when either stratum has no embedded papers.
    pub values: Vec<Vec<Option<f64>>>,
    pub denominators: Vec<Vec<usize>>,
}

impl ProportionMatrix {
    pub fn get(&self, focal_year: i32, target_year: i32) -> Option<f64> {
        let i = self.years.iter().position(|&y| y == focal_year)?;
        let j = self.years.iter().position(|&y| y == target_year)?;
        self.values[i][j]
    }

    pub fn missing_cells(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_none()).count()
    }

    /// Missing cells are written as empty fields.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["focal_year".to_string()];
        header.extend(self.years.iter().map(i32::to_string));
        out.write_record(&header).map_err(csv_err)?;
        for (y, row) in self.years.iter().zip(&self.values) {
            let mut rec = vec![y.to_string()];
            rec.extend(
                row.iter()
                    .map(|v| v.map_or(String::new(), |x| format!("{x:.6}"))),
            );
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Share of focal-side papers of each year whose score against the opposing
/// side of each target year is strictly above `threshold`.
pub fn proportion_matrix(
    corpus: &Corpus,
    focal_side: Sector,
    threshold: f64,
    q: f64,
) -> Result<ProportionMatrix> {
    check_q(q)?;
    if !threshold.is_finite() {
        return Err(Error::Invalid("threshold must be finite".into()));
    }
    let target_side = focal_side
        .opposite()
        .ok_or_else(|| Error::Invalid("focal side must be academic or industry".into()))?;
    let years: Vec<i32> = corpus.years().years().collect();
    let focal: Vec<Vec<Emb<'_>>> = years
        .iter()
        .map(|&y| side_papers(corpus, y, focal_side))
        .collect();
    let target: Vec<Vec<Emb<'_>>> = years
        .iter()
        .map(|&y| side_papers(corpus, y, target_side))
        .collect();
    let rows: Vec<(Vec<Option<f64>>, Vec<usize>)> = focal
        .par_iter()
        .map(|fs| {
            target
                .iter()
                .map(|ts| {
                    if fs.is_empty() || ts.is_empty() {
                        return (None, fs.len());
                    }
                    let above = fs
                        .iter()
                        .filter(|&&f| score_against(f, ts, q) > threshold)
                        .count();
                    (Some(above as f64 / fs.len() as f64), fs.len())
                })
                .unzip()
        })
        .collect();
    let (values, denominators) = rows.into_iter().unzip();
    let m = ProportionMatrix {
        focal_side,
        threshold,
        q,
        years,
        values,
        denominators,
    };
    if m.missing_cells() > 0 {
        log::info!(
            "{} of {} proportion cells missing for focal side {}",
            m.missing_cells(),
            m.years.len() * m.years.len(),
            focal_side.as_str()
        );
    }
    Ok(m)
}

/// Per-paper score against same-year opposing-side papers, indexed like the
/// corpus. `None` for papers that are not pure academic or industry, lack an
/// embedding, or have no embedded same-year counterpart.
pub fn same_year_scores(corpus: &Corpus, q: f64) -> Result<Vec<Option<f64>>> {
    check_q(q)?;
    let years: Vec<i32> = corpus.years().years().collect();
    let groups: Vec<[Vec<Emb<'_>>; 2]> = years
        .iter()
        .map(|&y| {
            [
                side_papers(corpus, y, Sector::Academic),
                side_papers(corpus, y, Sector::Industry),
            ]
        })
        .collect();
    let mut out = vec![None; corpus.len()];
    let scored: Vec<(usize, f64)> = groups
        .par_iter()
        .flat_map_iter(|[a, i]| {
            let one = |fs: &[Emb<'_>], ts: &[Emb<'_>]| -> Vec<(usize, f64)> {
                if ts.is_empty() {
                    return Vec::new();
                }
                fs.iter()
                    .map(|&f| (f.idx, score_against(f, ts, q)))
                    .collect()
            };
            let mut v = one(a, i);
            v.extend(one(i, a));
            v
        })
        .collect();
    for (idx, s) in scored {
        out[idx] = Some(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopPair {
    pub focal_id: String,
    pub match_id: String,
    pub similarity: f64,
    pub match_year: i32,
}

/// Best opposing-side match (published no later than `max_target_year`) for
/// each focal paper of `focal_year`, keeping the `k` most similar.
pub fn top_pairs_export(
    corpus: &Corpus,
    focal_year: i32,
    focal_side: Sector,
    k: usize,
    max_target_year: i32,
) -> Result<Vec<TopPair>> {
    if max_target_year > focal_year {
        return Err(Error::Invalid(format!(
            "max target year {max_target_year} is after focal year {focal_year}"
        )));
    }
    let target_side = focal_side
        .opposite()
        .ok_or_else(|| Error::Invalid("focal side must be academic or industry".into()))?;
    let focal = side_papers(corpus, focal_year, focal_side);
    let targets: Vec<Emb<'_>> = corpus
        .years()
        .years()
        .filter(|&y| y <= max_target_year)
        .flat_map(|y| side_papers(corpus, y, target_side))
        .collect();
    let id = |e: &Emb<'_>| corpus.paper(e.idx).paper_id.as_str();
    let mut pairs: Vec<TopPair> = focal
        .par_iter()
        .filter_map(|f| {
            let mut best: Option<(f64, &Emb<'_>)> = None;
            for t in &targets {
                let s = cosine_with_norms(f.v, f.n, t.v, t.n);
                let better = match best {
                    None => true,
                    Some((bs, bt)) => s > bs || (s == bs && id(t) < id(bt)),
                };
                if better {
                    best = Some((s, t));
                }
            }
            best.map(|(s, t)| TopPair {
                focal_id: id(f).to_string(),
                match_id: id(t).to_string(),
                similarity: s,
                match_year: corpus.paper(t.idx).year,
            })
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.focal_id.cmp(&b.focal_id))
    });
    pairs.truncate(k);
    Ok(pairs)
}

pub fn write_top_pairs<W: Write>(w: W, pairs: &[TopPair]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in pairs {
        out.serialize(p).map_err(csv_err)?;
    }
    if pairs.is_empty() {
        out.write_record(["focal_id", "match_id", "similarity", "match_year"])
            .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Which papers are eligible for semantic comparisons.
pub fn is_pure(ty: PaperType) -> bool {
    matches!(ty, PaperType::Academic | PaperType::Industry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{embedded_corpus, EmbeddedSpec};

    #[test]
    fn cosine_examples() {
        assert!(
            (cosine_embedding(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15
        );
        assert_eq!(cosine_embedding(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_embedding(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((c - 10.0 / 14.0).abs() < 1e-12);
        assert!(cosine_embedding(&[1.0], &[1.0, 2.0]).is_err());
        assert!(cosine_embedding(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn paper_score_examples() {
        let focal = [1.0, 0.0];
        let one = [0.6, 0.8];
        assert!((paper_score(&focal, &[&one], 0.9).unwrap() - 0.6).abs() < 1e-12);
        // similarities 0.1 .. 1.0 via unit vectors at chosen angles
        let vecs: Vec<[f64; 2]> = (1..=10)
            .map(|i| {
                let c = i as f64 / 10.0;
                [c, (1.0 - c * c).max(0.0).sqrt()]
            })
            .collect();
        let refs: Vec<&[f64]> = vecs.iter().map(|v| v.as_slice()).collect();
        assert!((paper_score(&focal, &refs, 0.9).unwrap() - 0.91).abs() < 1e-12);
        assert!(paper_score(&focal, &[], 0.9).is_err());
        assert!(paper_score(&focal, &[&one], 1.0).is_err());
    }

    #[test]
    fn threshold_extremes() {
        let corpus = embedded_corpus(&EmbeddedSpec::small(3));
        let all = proportion_matrix(&corpus, Sector::Academic, -1.0 - 1e-9, 0.9).unwrap();
        assert!(all.values.iter().flatten().flatten().all(|&v| v == 1.0));
        let none = proportion_matrix(&corpus, Sector::Industry, 1.0, 0.9).unwrap();
        assert!(none.values.iter().flatten().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn top_pairs_against_argmax() {
        let corpus = embedded_corpus(&EmbeddedSpec::small(9));
        let years = corpus.years();
        let pairs = top_pairs_export(&corpus, years.end, Sector::Academic, 100, years.end).unwrap();
        let focal: Vec<usize> = corpus.papers_of(years.end, PaperType::Academic).collect();
        assert_eq!(pairs.len(), focal.len());
        for p in &pairs {
            let f = corpus
                .embedding(corpus.index_of(&p.focal_id).unwrap())
                .unwrap();
            let best = (0..corpus.len())
                .filter(|&j| corpus.paper(j).paper_type == PaperType::Industry)
                .map(|j| cosine_embedding(f, corpus.embedding(j).unwrap()).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((p.similarity - best).abs() < 1e-12);
        }
        let short = top_pairs_export(&corpus, years.end, Sector::Academic, 1, years.end).unwrap();
        assert_eq!(short.len(), 1);
        assert_eq!(short[0], pairs[0]);
        assert!(top_pairs_export(&corpus, years.start, Sector::Academic, 1, years.end).is_err());
    }

    #[test]
    fn threshold_of_constant_pairs() {
        let corpus = embedded_corpus(&EmbeddedSpec::constant());
        let t = global_threshold(&corpus, 0.9, false).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cosine_symmetric_and_scale_invariant(
                a in proptest::collection::vec(-5.0f64..5.0, 4),
                b in proptest::collection::vec(-5.0f64..5.0, 4),
                s in 0.01f64..100.0,
            ) {
                prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
                let c = cosine_embedding(&a, &b).unwrap();
                prop_assert!((c - cosine_embedding(&b, &a).unwrap()).abs() < 1e-12);
                let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
                prop_assert!((c - cosine_embedding(&scaled, &b).unwrap()).abs() < 1e-6);
            }

            #[test]
            fn score_monotone_in_q(seed in 0u64..200, q1 in 0.01f64..0.99, q2 in 0.01f64..0.99) {
                let corpus = embedded_corpus(&EmbeddedSpec::small(seed));
                let y = corpus.years().start;
                let f = corpus.papers_of(y, PaperType::Academic).next().unwrap();
                let opp: Vec<&[f64]> = corpus.papers_of(y, PaperType::Industry).map(|j| corpus.embedding(j).unwrap()).collect();
                let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
                let focal = corpus.embedding(f).unwrap();
                prop_assert!(paper_score(focal, &opp, lo).unwrap() <= paper_score(focal, &opp, hi).unwrap() + 1e-15);
            }

            #[test]
            fn proportions_antitone_in_threshold(seed in 0u64..100, t1 in -1.0f64..1.0, t2 in -1.0f64..1.0) {
                let corpus = embedded_corpus(&EmbeddedSpec::small(seed));
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let a = proportion_matrix(&corpus, Sector::Academic, lo, 0.9).unwrap();
                let b = proportion_matrix(&corpus, Sector::Academic, hi, 0.9).unwrap();
                for (ra, rb) in a.values.iter().zip(&b.values) {
                    for (x, y) in ra.iter().zip(rb) {
                        prop_assert!(y.unwrap() <= x.unwrap());
                    }
                }
            }
        }
    }
}
