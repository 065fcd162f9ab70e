//! Memorization audit: synthetic × real Jaccard histogram and degree distributions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionMatrix;
use crate::error::{Error, Result};

pub const BUCKETS: usize = 10;

/// `|a ∩ b| / |a ∪ b|` over sorted item lists; two empty sets give 0.
pub fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    let inter = intersection_size(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn intersection_size(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Bucket `[b/10, (b+1)/10)` of `inter/union`, last bucket closed.
/// Integer arithmetic keeps edge values such as 0.3 exact.
pub fn bucket_of(inter: usize, union: usize) -> usize {
    if union == 0 {
        0
    } else {
        (BUCKETS * inter / union).min(BUCKETS - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxPair {
    pub synthetic: usize,
    pub real: usize,
    pub intersection: usize,
    pub union: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHistogram {
    pub counts: Vec<u64>,
    pub percentages: Vec<f64>,
    pub total_pairs: u64,
    /// Highest-similarity pair; ties go to the lowest (synthetic, real) index.
    pub max_pair: Option<MaxPair>,
}

impl SimilarityHistogram {
    /// Share of pairs strictly below `edge`, for an edge on the 0.1 grid.
    pub fn share_below(&self, edge: f64) -> f64 {
        let upto = ((edge * BUCKETS as f64).round() as usize).min(BUCKETS);
        let n: u64 = self.counts[..upto].iter().sum();
        n as f64 / self.total_pairs as f64
    }

    pub fn bucket_label(b: usize) -> String {
        let lo = b as f64 / BUCKETS as f64;
        let hi = (b + 1) as f64 / BUCKETS as f64;
        if b + 1 == BUCKETS {
            format!("[{lo:.1}, {hi:.1}]")
        } else {
            format!("[{lo:.1}, {hi:.1})")
        }
    }
}

struct Partial {
    counts: [u64; BUCKETS],
    max: Option<MaxPair>,
}

fn better(candidate: &MaxPair, current: &Option<MaxPair>) -> bool {
    match current {
        None => true,
        Some(c) => {
            let lhs = candidate.intersection as u128 * c.union as u128;
            let rhs = c.intersection as u128 * candidate.union as u128;
            lhs > rhs || (lhs == rhs && (candidate.synthetic, candidate.real) < (c.synthetic, c.real))
        }
    }
}

/// Every synthetic × real pair bucketed by Jaccard similarity. Pairs sharing
/// no item are counted in the first bucket via an inverted index, without
/// visiting them.
pub fn pairwise_similarity_histogram(synthetic: &InteractionMatrix, real: &InteractionMatrix) -> Result<SimilarityHistogram> {
    if synthetic.n_users() == 0 || real.n_users() == 0 {
        return Err(Error::Data("similarity audit needs non-empty synthetic and real matrices".into()));
    }
    if synthetic.n_items() != real.n_items() {
        return Err(Error::Data(format!(
            "item vocabularies differ: {} synthetic vs {} real",
            synthetic.n_items(),
            real.n_items()
        )));
    }
    let mut postings: Vec<Vec<u32>> = vec![Vec::new(); real.n_items()];
    for (u, i) in real.cells() {
        postings[i as usize].push(u as u32);
    }
    let real_len: Vec<usize> = real.rows().iter().map(Vec::len).collect();
    let n_real = real.n_users();

    let merged = (0..synthetic.n_users())
        .into_par_iter()
        .fold(
            || (vec![0u32; n_real], Vec::<u32>::new(), Partial { counts: [0; BUCKETS], max: None }),
            |(mut shared, mut touched, mut acc), s| {
                let row = synthetic.row(s);
                for &i in row {
                    for &r in &postings[i as usize] {
                        if shared[r as usize] == 0 {
                            touched.push(r);
                        }
                        shared[r as usize] += 1;
                    }
                }
                touched.sort_unstable();
                acc.counts[0] += (n_real - touched.len()) as u64;
                for &r in &touched {
                    let inter = shared[r as usize] as usize;
                    let union = row.len() + real_len[r as usize] - inter;
                    acc.counts[bucket_of(inter, union)] += 1;
                    let cand = MaxPair {
                        synthetic: s,
                        real: r as usize,
                        intersection: inter,
                        union,
                        similarity: inter as f64 / union as f64,
                    };
                    if better(&cand, &acc.max) {
                        acc.max = Some(cand);
                    }
                    shared[r as usize] = 0;
                }
                touched.clear();
                // Nothing shared yet: the first pair is the current maximum.
                if acc.max.is_none() {
                    acc.max = Some(MaxPair {
                        synthetic: s,
                        real: 0,
                        intersection: 0,
                        union: row.len() + real_len[0],
                        similarity: 0.0,
                    });
                }
                (shared, touched, acc)
            },
        )
        .map(|(_, _, p)| p)
        .reduce(
            || Partial { counts: [0; BUCKETS], max: None },
            |mut a, b| {
                for (x, y) in a.counts.iter_mut().zip(b.counts) {
                    *x += y;
                }
                if let Some(m) = b.max {
                    if better(&m, &a.max) {
                        a.max = Some(m);
                    }
                }
                a
            },
        );
    let total = synthetic.n_users() as u64 * n_real as u64;
    Ok(SimilarityHistogram {
        counts: merged.counts.to_vec(),
        percentages: merged.counts.iter().map(|&c| 100.0 * c as f64 / total as f64).collect(),
        total_pairs: total,
        max_pair: merged.max,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeBin {
    /// Inclusive lower edge.
    pub lo: usize,
    /// Exclusive upper edge.
    pub hi: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeHistogram {
    /// A `[0, 1)` bin followed by `[1, 2), [2, 4), [4, 8), …`.
    pub bins: Vec<DegreeBin>,
    /// Exact degree → number of entities.
    pub exact: BTreeMap<usize, usize>,
    pub p50: usize,
    pub p90: usize,
    pub p99: usize,
    pub total: usize,
}

impl DegreeHistogram {
    pub fn from_degrees(degrees: &[usize]) -> Self {
        let max = degrees.iter().copied().max().unwrap_or(0);
        let mut bins = vec![DegreeBin { lo: 0, hi: 1, count: 0 }];
        let mut lo = 1;
        while lo <= max {
            bins.push(DegreeBin { lo, hi: lo * 2, count: 0 });
            lo *= 2;
        }
        let mut exact = BTreeMap::new();
        for &d in degrees {
            let b = if d == 0 { 0 } else { 1 + d.ilog2() as usize };
            bins[b].count += 1;
            *exact.entry(d).or_insert(0) += 1;
        }
        let mut sorted = degrees.to_vec();
        sorted.sort_unstable();
        Self {
            bins,
            exact,
            p50: nearest_rank(&sorted, 0.5),
            p90: nearest_rank(&sorted, 0.9),
            p99: nearest_rank(&sorted, 0.99),
            total: degrees.len(),
        }
    }
}

/// Smallest value with at least `q·n` observations at or below it.
fn nearest_rank(sorted: &[usize], q: f64) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeDistributions {
    pub items_per_user: DegreeHistogram,
    pub users_per_item: DegreeHistogram,
}

pub fn degree_distributions(matrix: &InteractionMatrix) -> DegreeDistributions {
    DegreeDistributions {
        items_per_user: DegreeHistogram::from_degrees(&matrix.user_degrees()),
        users_per_item: DegreeHistogram::from_degrees(&matrix.item_degrees()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub similarity: SimilarityHistogram,
    pub synthetic: DegreeDistributions,
    pub real: DegreeDistributions,
}

pub fn audit(synthetic: &InteractionMatrix, real: &InteractionMatrix) -> Result<AuditReport> {
    Ok(AuditReport {
        similarity: pairwise_similarity_histogram(synthetic, real)?,
        synthetic: degree_distributions(synthetic),
        real: degree_distributions(real),
    })
}

impl AuditReport {
    pub fn render_markdown(&self) -> String {
        let h = &self.similarity;
        let mut out = String::from("| Jaccard similarity | Pairs | Share (%) |\n|---|---|---|\n");
        for b in 0..BUCKETS {
            out.push_str(&format!(
                "| {} | {} | {:.4} |\n",
                SimilarityHistogram::bucket_label(b),
                h.counts[b],
                h.percentages[b]
            ));
        }
        out.push_str(&format!("| Total | {} | 100.0000 |\n", h.total_pairs));
        if let Some(m) = &h.max_pair {
            out.push_str(&format!(
                "\nMost similar pair: synthetic user {} vs real user {} ({}/{} = {:.4})\n",
                m.synthetic, m.real, m.intersection, m.union, m.similarity
            ));
        }
        let q = |d: &DegreeHistogram| format!("{} / {} / {}", d.p50, d.p90, d.p99);
        out.push_str("\n| Distribution | Synthetic p50/p90/p99 | Real p50/p90/p99 |\n|---|---|---|\n");
        out.push_str(&format!(
            "| items per user | {} | {} |\n",
            q(&self.synthetic.items_per_user),
            q(&self.real.items_per_user)
        ));
        out.push_str(&format!(
            "| users per item | {} | {} |\n",
            q(&self.synthetic.users_per_item),
            q(&self.real.users_per_item)
        ));
        out
    }

    /// `source,distribution,bin_lo,bin_hi,count` rows for plotting.
    pub fn write_degree_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "source,distribution,bin_lo,bin_hi,count").map_err(io)?;
        for (source, d) in [("synthetic", &self.synthetic), ("real", &self.real)] {
            for (name, hist) in [("items_per_user", &d.items_per_user), ("users_per_item", &d.users_per_item)] {
                for bin in &hist.bins {
                    writeln!(w, "{source},{name},{},{},{}", bin.lo, bin.hi, bin.count).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }
}
