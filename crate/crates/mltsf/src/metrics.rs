//! Word error rate with a deletion/insertion/substitution breakdown.
//!
//! Corpus scoring aggregates raw counts across sentences and divides once at
//! the end; it is not a mean of per-sentence rates.

use crate::error::{Error, Result};

/// Alignment counts for one or many reference/hypothesis pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditStats {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl EditStats {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn merge(&mut self, other: &EditStats) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_len += other.ref_len;
    }
}

/// Minimum-cost alignment of hypothesis to reference under unit costs.
///
/// The backtrace resolves cost ties in a fixed order: substitution or match
/// first, then deletion, then insertion. The tie order changes only the
/// decomposition, never the total.
pub fn edit_stats(reference: &[usize], hypothesis: &[usize]) -> EditStats {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    #[allow(clippy::needless_range_loop)]
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let sub_cost = if reference[i - 1] == hypothesis[j - 1] { 0 } else { 1 };
            let best = (d[(i - 1) * w + j - 1] + sub_cost)
                .min(d[(i - 1) * w + j] + 1)
                .min(d[i * w + j - 1] + 1);
            d[i * w + j] = best;
        }
    }

    let mut stats = EditStats { ref_len: n, ..EditStats::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let cur = d[i * w + j];
        if i > 0 && j > 0 {
            let sub_cost = if reference[i - 1] == hypothesis[j - 1] { 0 } else { 1 };
            if cur == d[(i - 1) * w + j - 1] + sub_cost {
                stats.substitutions += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cur == d[(i - 1) * w + j] + 1 {
            stats.deletions += 1;
            i -= 1;
            continue;
        }
        stats.insertions += 1;
        j -= 1;
    }
    stats
}

/// `(sub + del + ins) / ref_len` over aggregated counts.
pub fn wer(stats: &EditStats) -> Result<f64> {
    if stats.ref_len == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(stats.total() as f64 / stats.ref_len as f64)
}

/// Rates for the standard report columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerReport {
    pub wer: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    pub sub_rate: f64,
}

impl WerReport {
    pub fn from_stats(stats: &EditStats) -> Result<Self> {
        if stats.ref_len == 0 {
            return Err(Error::UndefinedMetric);
        }
        let denom = stats.ref_len as f64;
        Ok(WerReport {
            wer: stats.total() as f64 / denom,
            del_rate: stats.deletions as f64 / denom,
            ins_rate: stats.insertions as f64 / denom,
            sub_rate: stats.substitutions as f64 / denom,
        })
    }

    /// Machine-readable key=value lines.
    pub fn to_kv(&self) -> String {
        format!(
            "wer={:.6}\ndel_rate={:.6}\nins_rate={:.6}\nsub_rate={:.6}\n",
            self.wer, self.del_rate, self.ins_rate, self.sub_rate
        )
    }
}

impl std::fmt::Display for WerReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "WER {:.2}% (del {:.2}%, ins {:.2}%, sub {:.2}%)",
            self.wer * 100.0,
            self.del_rate * 100.0,
            self.ins_rate * 100.0,
            self.sub_rate * 100.0
        )
    }
}

/// Score a whole corpus by aggregating counts first.
pub fn corpus_stats<'a, I>(pairs: I) -> EditStats
where
    I: IntoIterator<Item = (&'a [usize], &'a [usize])>,
{
    let mut total = EditStats::default();
    for (reference, hypothesis) in pairs {
        total.merge(&edit_stats(reference, hypothesis));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::subrng;
    use rand::Rng;

    #[test]
    fn identity_has_zero_cost() {
        let s = edit_stats(&[1, 2, 3], &[1, 2, 3]);
        assert_eq!(s, EditStats { substitutions: 0, deletions: 0, insertions: 0, ref_len: 3 });
        assert_eq!(wer(&s).unwrap(), 0.0);
    }

    #[test]
    fn single_substitution_is_half_wer() {
        // two-word reference, second word replaced
        let s = edit_stats(&[1, 2], &[1, 3]);
        assert_eq!((s.substitutions, s.deletions, s.insertions), (1, 0, 0));
        assert_eq!(wer(&s).unwrap(), 0.5);
    }

    #[test]
    fn pure_deletions_and_insertions() {
        let s = edit_stats(&[1, 2, 3], &[2]);
        assert_eq!(s.total(), 2);
        assert_eq!(s.deletions, 2);
        let s2 = edit_stats(&[2], &[1, 2, 3]);
        assert_eq!(s2.total(), 2);
        assert_eq!(s2.insertions, 2);
        // insertion-dominated WER exceeds one
        let s3 = edit_stats(&[1, 2], &[3, 4, 1, 2, 5]);
        assert_eq!(s3.insertions, 3);
        assert_eq!(wer(&s3).unwrap(), 1.5);
    }

    #[test]
    fn empty_reference_stats_allowed_but_wer_undefined() {
        let s = edit_stats(&[], &[1, 2]);
        assert_eq!(s.insertions, 2);
        assert!(matches!(wer(&s), Err(Error::UndefinedMetric)));
    }

    #[test]
    fn wer_formula_on_aggregated_counts() {
        let s = EditStats { substitutions: 1, deletions: 1, insertions: 1, ref_len: 10 };
        assert!((wer(&s).unwrap() - 0.3).abs() < 1e-15);
        let r = WerReport::from_stats(&s).unwrap();
        assert!((r.del_rate - 0.1).abs() < 1e-15);
        assert!(r.to_kv().contains("wer=0.300000"));
    }

    #[test]
    fn corpus_aggregates_counts_not_rates() {
        // sentence WERs 1.0 and 0.25 would average to 0.625; count
        // aggregation gives 2/5
        let a_ref = [1usize];
        let a_hyp = [2usize];
        let b_ref = [1usize, 2, 3, 4];
        let b_hyp = [1usize, 2, 3, 5];
        let total = corpus_stats([
            (&a_ref[..], &a_hyp[..]),
            (&b_ref[..], &b_hyp[..]),
        ]);
        assert_eq!(total.ref_len, 5);
        assert!((wer(&total).unwrap() - 0.4).abs() < 1e-15);
    }

    /// Distance-only two-row Levenshtein, written separately from the
    /// alignment routine.
    fn lev_distance(a: &[usize], b: &[usize]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        let mut cur = vec![0usize; b.len() + 1];
        for (i, &x) in a.iter().enumerate() {
            cur[0] = i + 1;
            for (j, &y) in b.iter().enumerate() {
                let sub = prev[j] + usize::from(x != y);
                cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        prev[b.len()]
    }

    fn random_seq(rng: &mut impl Rng, max_len: usize, v: usize) -> Vec<usize> {
        let len = rng.random_range(0..=max_len);
        (0..len).map(|_| rng.random_range(1..=v)).collect()
    }

    #[test]
    fn total_matches_independent_distance() {
        let mut rng = subrng(1, "lev", 0);
        for _ in 0..10_000 {
            let a = random_seq(&mut rng, 8, 5);
            let b = random_seq(&mut rng, 8, 5);
            let s = edit_stats(&a, &b);
            assert_eq!(s.total(), lev_distance(&a, &b), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn total_cost_is_symmetric() {
        // only the total is symmetric; the del/ins split depends on the
        // fixed tie order and need not mirror exactly
        let mut rng = subrng(2, "sym", 0);
        for _ in 0..2000 {
            let a = random_seq(&mut rng, 7, 4);
            let b = random_seq(&mut rng, 7, 4);
            assert_eq!(edit_stats(&a, &b).total(), edit_stats(&b, &a).total());
        }
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = subrng(3, "tri", 0);
        for _ in 0..2000 {
            let a = random_seq(&mut rng, 6, 4);
            let b = random_seq(&mut rng, 6, 4);
            let c = random_seq(&mut rng, 6, 4);
            let ab = edit_stats(&a, &b).total();
            let bc = edit_stats(&b, &c).total();
            let ac = edit_stats(&a, &c).total();
            assert!(ac <= ab + bc);
        }
    }

    #[test]
    fn decomposition_sums_to_total() {
        let mut rng = subrng(4, "decomp", 0);
        for _ in 0..2000 {
            let a = random_seq(&mut rng, 8, 3);
            let b = random_seq(&mut rng, 8, 3);
            let s = edit_stats(&a, &b);
            assert_eq!(s.substitutions + s.deletions + s.insertions, s.total());
            // alignment consumes the whole reference and hypothesis
            assert!(s.deletions <= a.len());
            assert!(s.insertions <= b.len());
        }
    }
}
