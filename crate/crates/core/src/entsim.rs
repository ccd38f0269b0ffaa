//! Entity bag-of-words vectors per (year, side) stratum and the cosine
//! similarity matrices between them.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, EntityClass, PaperType, Sector, Stratum, YearRange};
use crate::entnorm::{EntityId, EntityTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BowOptions {
    pub class_filter: Option<EntityClass>,
    /// Count each entity at most once per paper.
    pub dedup_per_paper: bool,
}

impl BowOptions {
    pub fn class(class_filter: Option<EntityClass>) -> Self {
        BowOptions {
            class_filter,
            dedup_per_paper: false,
        }
    }
}

/// Sparse entity frequency vector of one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumBow {
    pub stratum: Stratum,
    freqs: BTreeMap<EntityId, u64>,
    norm_sq: f64,
}

impl StratumBow {
    pub fn from_counts(
        stratum: Stratum,
        counts: impl IntoIterator<Item = (EntityId, u64)>,
    ) -> Self {
        let mut freqs = BTreeMap::new();
        for (e, c) in counts {
            if c > 0 {
                *freqs.entry(e).or_insert(0) += c;
            }
        }
        let norm_sq = freqs.values().map(|&c| (c as f64) * (c as f64)).sum();
        StratumBow {
            stratum,
            freqs,
            norm_sq,
        }
    }

    pub fn freqs(&self) -> &BTreeMap<EntityId, u64> {
        &self.freqs
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }
}

fn side_type(side: Sector) -> Result<PaperType> {
    side.paper_type()
        .ok_or_else(|| Error::Invalid("entity strata need the academic or industry side".into()))
}

pub fn build_bow(
    corpus: &Corpus,
    entities: &EntityTable,
    stratum: Stratum,
    opts: BowOptions,
) -> StratumBow {
    let ty = side_type(stratum.side).expect("Stratum never holds the excluded side");
    let mut counts: BTreeMap<EntityId, u64> = BTreeMap::new();
    for idx in corpus.papers_of(stratum.year, ty) {
        let mentions = entities
            .mentions(idx)
            .iter()
            .filter(|(_, c)| opts.class_filter.is_none_or(|f| f == *c))
            .map(|&(e, _)| e);
        if opts.dedup_per_paper {
            let mut ids: Vec<EntityId> = mentions.collect();
            ids.sort_unstable();
            ids.dedup();
            for e in ids {
                *counts.entry(e).or_insert(0) += 1;
            }
        } else {
            for e in mentions {
                *counts.entry(e).or_insert(0) += 1;
            }
        }
    }
    StratumBow::from_counts(stratum, counts)
}

/// Cosine over the union vocabulary; 0 if either vector is empty.
pub fn cosine_bow(u: &StratumBow, v: &StratumBow) -> f64 {
    if u.norm_sq == 0.0 || v.norm_sq == 0.0 {
        return 0.0;
    }
    let (small, large) = if u.freqs.len() <= v.freqs.len() {
        (u, v)
    } else {
        (v, u)
    };
    let dot: f64 = small
        .freqs
        .iter()
        .filter_map(|(e, &a)| large.freqs.get(e).map(|&b| a as f64 * b as f64))
        .sum();
    (dot / (u.norm_sq * v.norm_sq).sqrt()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    pub row_years: Vec<i32>,
    pub col_years: Vec<i32>,
    pub row_side: Sector,
    pub col_side: Sector,
    pub class_filter: Option<EntityClass>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn get(&self, row_year: i32, col_year: i32) -> Option<f64> {
        let i = self.row_years.iter().position(|&y| y == row_year)?;
        let j = self.col_years.iter().position(|&y| y == col_year)?;
        Some(self.values[i][j])
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        let values = (0..self.col_years.len())
            .map(|j| self.values.iter().map(|row| row[j]).collect())
            .collect();
        SimilarityMatrix {
            row_years: self.col_years.clone(),
            col_years: self.row_years.clone(),
            row_side: self.col_side,
            col_side: self.row_side,
            class_filter: self.class_filter,
            values,
        }
    }

    /// Year-labelled CSV: header `year,<col years...>`, one row per row year.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![format!(
            "{}\\{}",
            self.row_side.as_str(),
            self.col_side.as_str()
        )];
        header.extend(self.col_years.iter().map(i32::to_string));
        out.write_record(&header).map_err(csv_err)?;
        for (y, row) in self.row_years.iter().zip(&self.values) {
            let mut rec = vec![y.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv write failed: {e}"))
}

pub fn similarity_matrix(
    corpus: &Corpus,
    entities: &EntityTable,
    row: (Sector, YearRange),
    col: (Sector, YearRange),
    opts: BowOptions,
) -> Result<SimilarityMatrix> {
    let range = corpus.years();
    for (side, years) in [row, col] {
        side_type(side)?;
        if !range.contains(years.start) || !range.contains(years.end) {
            return Err(Error::Invalid(format!(
                "years {}-{} outside corpus range {}-{}",
                years.start, years.end, range.start, range.end
            )));
        }
    }
    let bows = |side: Sector, years: YearRange| -> Vec<StratumBow> {
        years
            .years()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&y| build_bow(corpus, entities, Stratum { year: y, side }, opts))
            .collect()
    };
    let row_bows = bows(row.0, row.1);
    let col_bows = bows(col.0, col.1);
    let values = row_bows
        .par_iter()
        .map(|r| col_bows.iter().map(|c| cosine_bow(r, c)).collect())
        .collect();
    Ok(SimilarityMatrix {
        row_years: row.1.years().collect(),
        col_years: col.1.years().collect(),
        row_side: row.0,
        col_side: col.0,
        class_filter: opts.class_filter,
        values,
    })
}

/// Same-year academia/industry similarity, one value per year.
pub fn same_year_similarity(
    corpus: &Corpus,
    entities: &EntityTable,
    opts: BowOptions,
) -> BTreeMap<i32, f64> {
    corpus
        .years()
        .years()
        .map(|y| {
            let a = build_bow(
                corpus,
                entities,
                Stratum {
                    year: y,
                    side: Sector::Academic,
                },
                opts,
            );
            let i = build_bow(
                corpus,
                entities,
                Stratum {
                    year: y,
                    side: Sector::Industry,
                },
                opts,
            );
            (y, cosine_bow(&a, &i))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollaborationShare {
    pub share: BTreeMap<i32, f64>,
    /// Years without any classified paper.
    pub missing_years: Vec<i32>,
}

pub fn collaboration_share(corpus: &Corpus) -> CollaborationShare {
    let mut share = BTreeMap::new();
    let mut missing_years = Vec::new();
    for y in corpus.years().years() {
        let coop = corpus.papers_of(y, PaperType::Cooperation).count();
        let classified = coop
            + corpus.papers_of(y, PaperType::Academic).count()
            + corpus.papers_of(y, PaperType::Industry).count();
        if classified == 0 {
            missing_years.push(y);
        } else {
            share.insert(y, coop as f64 / classified as f64);
        }
    }
    CollaborationShare {
        share,
        missing_years,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::tiny_corpus;

    fn bow(pairs: &[(EntityId, u64)]) -> StratumBow {
        StratumBow::from_counts(
            Stratum {
                year: 2020,
                side: Sector::Academic,
            },
            pairs.iter().copied(),
        )
    }

    /// Dense evaluation over an explicit vocabulary.
    fn dense_cosine(u: &[f64], v: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            0.0
        } else {
            dot / (nu * nv)
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(
            cosine_bow(&bow(&[(0, 1), (1, 2)]), &bow(&[(0, 2), (1, 1)])),
            0.8
        );
        let u = bow(&[(3, 4), (9, 1)]);
        assert!((cosine_bow(&u, &u) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_bow(&bow(&[(0, 1)]), &bow(&[(1, 1)])), 0.0);
        assert_eq!(cosine_bow(&bow(&[]), &u), 0.0);
    }

    #[test]
    fn bow_counts_and_norm() {
        let b = bow(&[(0, 2), (1, 1), (2, 0)]);
        assert_eq!(b.freqs().len(), 2);
        assert!((b.norm() - 5f64.sqrt()).abs() < 1e-12);
        assert!(bow(&[]).is_empty());
    }

    #[test]
    fn build_bow_filters_and_dedups() {
        let (corpus, table) = tiny_corpus();
        let s = Stratum {
            year: 2020,
            side: Sector::Academic,
        };
        let all = build_bow(&corpus, &table, s, BowOptions::default());
        assert_eq!(all.freqs().get(&0), Some(&2));
        assert_eq!(all.freqs().get(&1), Some(&1));
        let methods = build_bow(
            &corpus,
            &table,
            s,
            BowOptions::class(Some(EntityClass::Dataset)),
        );
        assert!(methods
            .freqs()
            .keys()
            .all(|&e| table.class_of(e) == Some(EntityClass::Dataset)));
        let dedup = build_bow(
            &corpus,
            &table,
            s,
            BowOptions {
                class_filter: None,
                dedup_per_paper: true,
            },
        );
        assert_eq!(dedup.freqs().get(&0), Some(&1));
        let empty = build_bow(
            &corpus,
            &table,
            Stratum {
                year: 2021,
                side: Sector::Industry,
            },
            BowOptions::default(),
        );
        assert!(empty.is_empty());
    }

    #[test]
    fn matrix_against_dense_oracle_and_transpose() {
        let (corpus, table) = tiny_corpus();
        let years = corpus.years();
        let m = similarity_matrix(
            &corpus,
            &table,
            (Sector::Industry, years),
            (Sector::Academic, years),
            BowOptions::default(),
        )
        .unwrap();
        let back = similarity_matrix(
            &corpus,
            &table,
            (Sector::Academic, years),
            (Sector::Industry, years),
            BowOptions::default(),
        )
        .unwrap();
        assert_eq!(m.transpose().values, back.values);
        let vocab = 8usize;
        for (i, ry) in m.row_years.iter().enumerate() {
            for (j, cy) in m.col_years.iter().enumerate() {
                let dense = |year: i32, ty: PaperType| {
                    let mut v = vec![0.0; vocab];
                    for p in corpus.papers_of(year, ty) {
                        for &(e, _) in table.mentions(p) {
                            v[e as usize] += 1.0;
                        }
                    }
                    v
                };
                let want = dense_cosine(
                    &dense(*ry, PaperType::Industry),
                    &dense(*cy, PaperType::Academic),
                );
                assert!((m.values[i][j] - want).abs() < 1e-12);
            }
        }
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("industry\\academic,2020,2021"));
    }

    #[test]
    fn collaboration_share_counts() {
        let (corpus, _) = tiny_corpus();
        let cs = collaboration_share(&corpus);
        // 2020: 2 academic, 1 industry, 1 cooperation
        assert_eq!(cs.share[&2020], 0.25);
        assert_eq!(cs.share[&2021], 0.0);
        assert!(cs.missing_years.is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn sparse() -> impl Strategy<Value = Vec<(EntityId, u64)>> {
            proptest::collection::vec((0u32..100, 0u64..20), 0..30)
        }

        proptest! {
            #[test]
            fn cosine_bounded_and_scale_invariant(u in sparse(), v in sparse(), alpha in 1u64..50) {
                let (bu, bv) = (bow(&u), bow(&v));
                let c = cosine_bow(&bu, &bv);
                prop_assert!((0.0..=1.0).contains(&c));
                let scaled = bow(&u.iter().map(|&(e, n)| (e, n * alpha)).collect::<Vec<_>>());
                let cs = cosine_bow(&scaled, &bv);
                prop_assert!((cs - c).abs() <= 1e-9 * c.max(1e-300) || (cs - c).abs() < 1e-12);
                prop_assert_eq!(cosine_bow(&bu, &bv), cosine_bow(&bv, &bu));
            }

            #[test]
            fn padding_with_absent_entity_is_noop(u in sparse(), v in sparse()) {
                let (bu, bv) = (bow(&u), bow(&v));
                let mut padded = u.clone();
                padded.push((500, 0));
                prop_assert_eq!(cosine_bow(&bow(&padded), &bv), cosine_bow(&bu, &bv));
            }

            #[test]
            fn matches_dense(u in sparse(), v in sparse()) {
                let mut du = vec![0.0; 100];
                let mut dv = vec![0.0; 100];
                for &(e, n) in &u { du[e as usize] += n as f64; }
                for &(e, n) in &v { dv[e as usize] += n as f64; }
                prop_assert!((cosine_bow(&bow(&u), &bow(&v)) - dense_cosine(&du, &dv)).abs() < 1e-12);
            }
        }
    }
}
