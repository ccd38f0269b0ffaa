//! Citation-flow metrics: source proportions, HHI concentration, excess
//! self-citation (ECC), and the hardware-term compute-demand flag.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::corpus::{Corpus, PaperType, Sector};

/// Reference counts by cited category, in [`PaperType::CLASSIFIED`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CitationBreakdown {
    pub counts: [u64; 3],
    pub excluded: u64,
}

fn slot(ty: PaperType) -> Option<usize> {
    PaperType::CLASSIFIED.iter().position(|&t| t == ty)
}

impl CitationBreakdown {
    pub fn from_counts(academic: u64, industry: u64, cooperation: u64) -> Self {
        CitationBreakdown {
            counts: [academic, industry, cooperation],
            excluded: 0,
        }
    }

    pub fn add(&mut self, cited: PaperType) {
        match slot(cited) {
            Some(i) => self.counts[i] += 1,
            None => self.excluded += 1,
        }
    }

    pub fn merge(&mut self, other: &CitationBreakdown) {
        for i in 0..3 {
            self.counts[i] += other.counts[i];
        }
        self.excluded += other.excluded;
    }

    /// Classified references only.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn count(&self, cited: PaperType) -> u64 {
        slot(cited).map_or(0, |i| self.counts[i])
    }

    pub fn proportions(&self) -> Option<[f64; 3]> {
        let t = self.total();
        (t > 0).then(|| self.counts.map(|c| c as f64 / t as f64))
    }

    pub fn share(&self, cited: PaperType) -> Option<f64> {
        let i = slot(cited)?;
        self.proportions().map(|p| p[i])
    }
}

pub fn paper_breakdown(corpus: &Corpus, idx: usize) -> CitationBreakdown {
    let mut b = CitationBreakdown::default();
    for r in corpus.references_of(idx) {
        b.add(r.cited_type);
    }
    b
}

/// References made in `year` by papers of any of `citing_types`.
pub fn year_breakdown(corpus: &Corpus, year: i32, citing_types: &[PaperType]) -> CitationBreakdown {
    let mut b = CitationBreakdown::default();
    for &t in citing_types {
        for idx in corpus.papers_of(year, t) {
            b.merge(&paper_breakdown(corpus, idx));
        }
    }
    b
}

/// Shares of academic, industry and cooperation references among those made
/// by `citing_type` papers in `year`; `None` without classified references.
pub fn citation_proportions(
    corpus: &Corpus,
    year: i32,
    citing_type: PaperType,
) -> Option<[f64; 3]> {
    year_breakdown(corpus, year, &[citing_type]).proportions()
}

/// Sum of squared category shares; `None` for an empty breakdown.
pub fn hhi(b: &CitationBreakdown) -> Option<f64> {
    b.proportions().map(|p| p.iter().map(|s| s * s).sum())
}

pub fn paper_hhi(corpus: &Corpus, idx: usize) -> Option<f64> {
    hhi(&paper_breakdown(corpus, idx))
}

/// Population whose references define the unconditional shares in ECC.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EccBaseline {
    /// Academic, industry and cooperation citers.
    #[default]
    AllClassified,
    /// Academic and industry citers only.
    PureTypes,
}

/// `[P(i|i) - P(i)] - [P(j|i) - P(j)]` for side `i` against the opposing side `j`.
pub fn ecc(corpus: &Corpus, year: i32, side: Sector, baseline: EccBaseline) -> Option<f64> {
    let own = side.paper_type()?;
    let other = side.opposite()?.paper_type()?;
    let conditional = year_breakdown(corpus, year, &[own]);
    let base_types: &[PaperType] = match baseline {
        EccBaseline::AllClassified => &PaperType::CLASSIFIED,
        EccBaseline::PureTypes => &[PaperType::Academic, PaperType::Industry],
    };
    let base = year_breakdown(corpus, year, base_types);
    ecc_from_breakdowns(&conditional, &base, own, other)
}

pub fn ecc_from_breakdowns(
    conditional: &CitationBreakdown,
    baseline: &CitationBreakdown,
    own: PaperType,
    other: PaperType,
) -> Option<f64> {
    let self_gap = conditional.share(own)? - baseline.share(own)?;
    let cross_gap = conditional.share(other)? - baseline.share(other)?;
    Some(self_gap - cross_gap)
}

pub const DEFAULT_HARDWARE_TERMS: [&str; 4] = ["GPU", "TPU", "CUDA", "CPU"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComputeDemandFlag {
    pub paper_id: String,
    pub high_demand: bool,
    pub matched_terms: BTreeSet<String>,
}

/// Whole-token, case-insensitive match; a token also matches a term when it
/// is the term followed by a single `s`.
pub fn flag_compute_demand<'a>(
    paper_id: &str,
    texts: impl IntoIterator<Item = &'a str>,
    terms: &[String],
) -> ComputeDemandFlag {
    let lowered: Vec<(String, &String)> = terms.iter().map(|t| (t.to_lowercase(), t)).collect();
    let mut matched = BTreeSet::new();
    for text in texts {
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let token = token.to_lowercase();
            for (low, original) in &lowered {
                let plural = token.len() == low.len() + 1
                    && token.starts_with(low.as_str())
                    && token.ends_with('s');
                if token == *low || plural {
                    matched.insert((*original).clone());
                }
            }
        }
    }
    ComputeDemandFlag {
        paper_id: paper_id.to_string(),
        high_demand: !matched.is_empty(),
        matched_terms: matched,
    }
}

/// Flag a corpus paper from its title, abstract and entity surfaces.
pub fn flag_paper(corpus: &Corpus, idx: usize, terms: &[String]) -> ComputeDemandFlag {
    let p = corpus.paper(idx);
    let texts = std::iter::once(p.title.as_str())
        .chain(p.abstract_text.as_deref())
        .chain(corpus.mentions_of(idx).map(|m| m.surface.as_str()));
    flag_compute_demand(&p.paper_id, texts, terms)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaperCitationRow {
    pub paper_id: String,
    pub hhi: Option<f64>,
    pub n_classified_refs: u64,
    pub high_compute_flag: bool,
}

pub fn paper_rows(corpus: &Corpus, terms: &[String]) -> Vec<PaperCitationRow> {
    (0..corpus.len())
        .map(|i| {
            let b = paper_breakdown(corpus, i);
            PaperCitationRow {
                paper_id: corpus.paper(i).paper_id.clone(),
                hhi: hhi(&b),
                n_classified_refs: b.total(),
                high_compute_flag: flag_paper(corpus, i, terms).high_demand,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::{citation_corpus, CitationSpec};

    fn terms() -> Vec<String> {
        DEFAULT_HARDWARE_TERMS
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn proportions_and_hhi() {
        let b = CitationBreakdown::from_counts(50, 30, 20);
        assert_eq!(b.proportions().unwrap(), [0.5, 0.3, 0.2]);
        assert_eq!(hhi(&CitationBreakdown::from_counts(2, 1, 1)), Some(0.375));
        assert_eq!(hhi(&CitationBreakdown::from_counts(0, 7, 0)), Some(1.0));
        let third = hhi(&CitationBreakdown::from_counts(1, 1, 1)).unwrap();
        assert!((third - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(hhi(&CitationBreakdown::default()), None);
        let mut ex = CitationBreakdown::from_counts(1, 0, 0);
        ex.add(PaperType::Excluded);
        assert_eq!(ex.proportions().unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(ex.excluded, 1);
    }

    #[test]
    fn ecc_hand_examples() {
        let own = CitationBreakdown::from_counts(9, 0, 0);
        let base = CitationBreakdown::from_counts(3, 3, 3);
        let v = ecc_from_breakdowns(&own, &base, PaperType::Academic, PaperType::Industry).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let same = CitationBreakdown::from_counts(2, 3, 5);
        let v = ecc_from_breakdowns(
            &same,
            &CitationBreakdown::from_counts(4, 6, 10),
            PaperType::Industry,
            PaperType::Academic,
        );
        assert_eq!(v, Some(0.0));
        assert_eq!(
            ecc_from_breakdowns(
                &CitationBreakdown::default(),
                &base,
                PaperType::Academic,
                PaperType::Industry
            ),
            None
        );
    }

    #[test]
    fn ecc_null_on_blind_citing() {
        let corpus = citation_corpus(&CitationSpec::blind(10_000, 7));
        for side in [Sector::Academic, Sector::Industry] {
            let v = ecc(&corpus, 2020, side, EccBaseline::AllClassified).unwrap();
            assert!(v.abs() < 0.02, "{side:?}: {v}");
        }
    }

    #[test]
    fn compute_flag_tokens() {
        let f = flag_compute_demand("p", ["trained on 8 GPUs"], &terms());
        assert!(f.high_demand);
        assert_eq!(f.matched_terms, BTreeSet::from(["GPU".to_string()]));
        assert!(!flag_compute_demand("p", ["a plain abstract"], &terms()).high_demand);
        assert!(!flag_compute_demand("p", ["read cpuinfo first"], &terms()).high_demand);
        assert!(flag_compute_demand("p", ["uses cuda-11 kernels"], &terms()).high_demand);
        assert!(!flag_compute_demand("p", ["GPUss"], &terms()).high_demand);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn hhi_bounds_and_scale(a in 0u64..50, i in 0u64..50, c in 0u64..50, k in 1u64..20) {
                let b = CitationBreakdown::from_counts(a, i, c);
                if let Some(h) = hhi(&b) {
                    prop_assert!((1.0 / 3.0 - 1e-12..=1.0 + 1e-12).contains(&h));
                    let s = hhi(&CitationBreakdown::from_counts(a * k, i * k, c * k)).unwrap();
                    prop_assert!((s - h).abs() < 1e-12);
                    let p = b.proportions().unwrap();
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }

            #[test]
            fn more_terms_never_unset(text in "[a-zA-Z0-9 ]{0,40}", extra in "[a-z]{1,6}") {
                let base = flag_compute_demand("p", [text.as_str()], &terms());
                let mut more = terms();
                more.push(extra);
                let wider = flag_compute_demand("p", [text.as_str()], &more);
                prop_assert!(!base.high_demand || wider.high_demand);
            }
        }
    }
}
