//! Word-level error-rate accounting.

/// Levenshtein alignment counts at word level plus the WER ratio
/// `(S + I + D) / len(reference)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub wer: f64,
}

/// Aligns `hypothesis` against `reference` and counts edit operations.
///
/// Ties in the alignment are broken match/substitution first, then deletion,
/// then insertion, so the breakdown is deterministic. Panics on an empty
/// reference (contract violation).
pub fn word_error_rate<S: AsRef<str>, T: AsRef<str>>(
    reference: &[S],
    hypothesis: &[T],
) -> WerBreakdown {
    assert!(
        !reference.is_empty(),
        "word_error_rate: reference must be non-empty"
    );
    let r = reference.len();
    let h = hypothesis.len();

    // d[i][j] = edit distance between reference[..i] and hypothesis[..j].
    let mut d = vec![vec![0usize; h + 1]; r + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=r {
        for j in 1..=h {
            let sub_cost = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            d[i][j] = (d[i - 1][j - 1] + sub_cost)
                .min(d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1);
        }
    }

    let (mut i, mut j) = (r, h);
    let (mut subs, mut ins, mut dels) = (0usize, 0usize, 0usize);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let sub_cost = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            if d[i][j] == d[i - 1][j - 1] + sub_cost {
                subs += sub_cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            dels += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }

    WerBreakdown {
        substitutions: subs,
        insertions: ins,
        deletions: dels,
        wer: (subs + ins + dels) as f64 / r as f64,
    }
}
