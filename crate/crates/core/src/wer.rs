//! Word error rate by unit-cost Levenshtein alignment.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// WER in percent. An empty reference uses a denominator of 1; see
    /// [`ErrorCounts::empty_reference`].
    pub fn wer(&self) -> f64 {
        100.0 * self.errors() as f64 / self.ref_words.max(1) as f64
    }

    pub fn empty_reference(&self) -> bool {
        self.ref_words == 0
    }
}

impl std::ops::AddAssign for ErrorCounts {
    fn add_assign(&mut self, o: Self) {
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
        self.ref_words += o.ref_words;
    }
}

impl std::iter::Sum for ErrorCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut acc = ErrorCounts::default();
        for c in iter {
            acc += c;
        }
        acc
    }
}

/// Minimum-edit alignment counts. Among equal-cost alignments the
/// traceback prefers substitutions, then deletions, then insertions.
pub fn wer<S: AsRef<str>, H: AsRef<str>>(reference: &[S], hypothesis: &[H]) -> ErrorCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1]
                + usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut counts = ErrorCounts {
        ref_words: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                if !same {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn substitution() {
        let c = wer(&w("a b c"), &w("a x c"));
        assert_eq!((c.substitutions, c.insertions, c.deletions), (1, 0, 0));
        assert!((c.wer() - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_and_insertion() {
        assert_eq!(wer(&w("a b"), &w("a b")).wer(), 0.0);
        let c = wer(&w("a"), &w("a b"));
        assert_eq!((c.substitutions, c.insertions, c.deletions), (0, 1, 0));
        assert_eq!(c.wer(), 100.0);
    }

    #[test]
    fn deletions_and_empty_reference() {
        let c = wer(&w("a b c"), &w("b"));
        assert_eq!(c.deletions, 2);
        let c = wer(&w(""), &w("x y"));
        assert!(c.empty_reference());
        assert_eq!(c.insertions, 2);
        assert_eq!(c.wer(), 200.0);
    }

    #[test]
    fn corpus_sum() {
        let total: ErrorCounts = [wer(&w("a b"), &w("a")), wer(&w("c d"), &w("c d e"))]
            .into_iter()
            .sum();
        assert_eq!(total.errors(), 2);
        assert_eq!(total.wer(), 50.0);
    }
}
