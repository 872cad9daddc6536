//! Token-level Levenshtein alignment.

/// One step of an alignment from `a` to `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    /// Token of `b` with no counterpart in `a`.
    Insert,
    /// Token of `a` with no counterpart in `b`.
    Delete,
}

fn table<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Vec<usize>> {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let diag = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = diag.min(d[i][j - 1] + 1).min(d[i - 1][j] + 1);
        }
    }
    d
}

pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    // Two-row variant of the full table.
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let diag = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = diag.min(cur[j - 1] + 1).min(prev[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Minimum-cost alignment with unit costs. Traced back from the end,
/// preferring match, then substitution, insertion, deletion.
pub fn align<T: PartialEq>(a: &[T], b: &[T]) -> Vec<EditOp> {
    let d = table(a, b);
    let (mut i, mut j) = (a.len(), b.len());
    let mut ops = Vec::with_capacity(a.len().max(b.len()));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && a[i - 1] == b[j - 1] && d[i][j] == d[i - 1][j - 1] {
            ops.push(EditOp::Match);
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            ops.push(EditOp::Substitute);
            i -= 1;
            j -= 1;
        } else if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            ops.push(EditOp::Insert);
            j -= 1;
        } else {
            ops.push(EditOp::Delete);
            i -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Marks the positions of `x_cf` aligned as insertions or substitutions.
pub fn derive_counterfactual_rationale<T: PartialEq>(x: &[T], x_cf: &[T]) -> Vec<u8> {
    let mut z = Vec::with_capacity(x_cf.len());
    for op in align(x, x_cf) {
        match op {
            EditOp::Match => z.push(0),
            EditOp::Substitute | EditOp::Insert => z.push(1),
            EditOp::Delete => {}
        }
    }
    z
}
