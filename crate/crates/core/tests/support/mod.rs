//! Independent oracles and random generators shared by the integration and
//! acceptance tests. Nothing here calls into the code under test.

#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::Rng;

/// Spans as plain `(start, end)` pairs.
pub type Pairs = Vec<(usize, usize)>;

/// IoU by scanning every position.
pub fn iou_oracle(pred: &[(usize, usize)], gold: &[(usize, usize)], len: usize) -> f64 {
    let covered = |spans: &[(usize, usize)], i: usize| spans.iter().any(|&(s, e)| s <= i && i < e);
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..len {
        let (p, g) = (covered(pred, i), covered(gold, i));
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Average ranks by counting: 1 + #smaller + (#equal - 1) / 2.
pub fn rank_oracle(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let smaller = values.iter().filter(|&&w| w < v).count();
            let equal = values.iter().filter(|&&w| w == v).count();
            1.0 + smaller as f64 + (equal as f64 - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx.sqrt() * syy.sqrt())
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    match (constant(x), constant(y)) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => pearson_oracle(&rank_oracle(x), &rank_oracle(y)),
    }
}

/// Maximum number of identical aligned characters (LCS length), filled
/// column by column.
pub fn lcs_oracle(a: &[u8], b: &[u8]) -> usize {
    let mut prev = vec![0usize; a.len() + 1];
    for &cb in b {
        let mut col = vec![0usize; a.len() + 1];
        for (i, &ca) in a.iter().enumerate() {
            col[i + 1] = if ca == cb {
                prev[i] + 1
            } else {
                prev[i + 1].max(col[i])
            };
        }
        prev = col;
    }
    prev[a.len()]
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Op {
    Diag,
    GapInOriginal,
    GapInClean,
}

/// Enumerates every global alignment, walking from the end, trying the
/// preferred move first. The first alignment reaching the optimum is the
/// preferred one. Returns `(mapping, matches)`.
pub fn enumerate_alignment_oracle(a: &[u8], b: &[u8]) -> (Vec<Option<usize>>, usize) {
    let best = lcs_oracle(a, b);
    let mut ops = Vec::new();
    let found = search(a, b, a.len(), b.len(), 0, best, &mut ops);
    assert!(found, "optimum must be reachable");
    // ops were pushed from the end backwards
    let mut mapping = vec![None; a.len()];
    let (mut i, mut j) = (a.len(), b.len());
    for op in &ops {
        match op {
            Op::Diag => {
                mapping[i - 1] = Some(j - 1);
                i -= 1;
                j -= 1;
            }
            Op::GapInOriginal => i -= 1,
            Op::GapInClean => j -= 1,
        }
    }
    (mapping, best)
}

fn search(a: &[u8], b: &[u8], i: usize, j: usize, gained: usize, target: usize, ops: &mut Vec<Op>) -> bool {
    if i == 0 || j == 0 {
        // remaining characters all become gaps
        if gained != target {
            return false;
        }
        ops.extend(std::iter::repeat_n(Op::GapInOriginal, i));
        ops.extend(std::iter::repeat_n(Op::GapInClean, j));
        return true;
    }
    // prune: even matching everything left cannot reach the target
    if gained + i.min(j) < target {
        return false;
    }
    for op in [Op::Diag, Op::GapInOriginal, Op::GapInClean] {
        let (ni, nj, g) = match op {
            Op::Diag => (i - 1, j - 1, usize::from(a[i - 1] == b[j - 1])),
            Op::GapInOriginal => (i - 1, j, 0),
            Op::GapInClean => (i, j - 1, 0),
        };
        ops.push(op);
        if search(a, b, ni, nj, gained + g, target, ops) {
            return true;
        }
        ops.pop();
    }
    false
}

/// All strings over `alphabet` of length exactly `len`.
pub fn all_strings(alphabet: &[u8], len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                alphabet.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

pub fn all_strings_up_to(alphabet: &[u8], max_len: usize) -> Vec<Vec<u8>> {
    (0..=max_len).flat_map(|l| all_strings(alphabet, l)).collect()
}

const SCRIPTS: &[(u32, u32)] = &[
    (0x61, 0x7A),     // a-z
    (0x41, 0x5A),     // A-Z
    (0x4E00, 0x4FFF), // CJK
    (0x0905, 0x0939), // Devanagari letters
    (0x0621, 0x064A), // Arabic letters
];

/// Random multilingual text, mixing scripts with spaces and punctuation.
pub fn random_text(rng: &mut StdRng, max_len: usize) -> String {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| {
            if rng.random_bool(0.12) {
                *[' ', ',', '.', '-', '1', '9'].get(rng.random_range(0..6)).unwrap()
            } else {
                let (lo, hi) = SCRIPTS[rng.random_range(0..SCRIPTS.len())];
                char::from_u32(rng.random_range(lo..=hi)).unwrap()
            }
        })
        .collect()
}

/// Sorted, non-empty spans in `[0, len)` separated by at least one character.
pub fn random_separated_spans(rng: &mut StdRng, len: usize) -> Pairs {
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos < len {
        pos += rng.random_range(0..4);
        if pos >= len || rng.random_bool(0.4) {
            pos += 1;
            continue;
        }
        let end = (pos + rng.random_range(1..6)).min(len);
        spans.push((pos, end));
        pos = end + 1;
    }
    spans
}

/// Sorted non-overlapping spans, possibly touching.
pub fn random_spans(rng: &mut StdRng, len: usize) -> Pairs {
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos < len {
        pos += rng.random_range(0..5);
        if pos >= len {
            break;
        }
        let end = (pos + rng.random_range(1..7)).min(len);
        if rng.random_bool(0.6) {
            spans.push((pos, end));
        }
        pos = end;
    }
    spans
}

/// Probability vectors drawn from a coarse grid so ties are frequent.
pub fn random_tied_vector(rng: &mut StdRng, len: usize) -> Vec<f64> {
    let levels = rng.random_range(1..=6);
    (0..len)
        .map(|_| rng.random_range(0..=levels) as f64 / levels as f64)
        .collect()
}

/// Visits every string `b` over `alphabet` with `len(b) <= max_len`, passing
/// the LCS length against `a`. Columns of the LCS table are extended one
/// character at a time, so shared prefixes are computed once.
pub fn for_each_lcs_against(a: &[u8], alphabet: &[u8], max_len: usize, f: &mut impl FnMut(&[u8], usize)) {
    fn walk(
        a: &[u8],
        alphabet: &[u8],
        max_len: usize,
        b: &mut Vec<u8>,
        col: &[usize],
        f: &mut impl FnMut(&[u8], usize),
    ) {
        f(b, col[a.len()]);
        if b.len() == max_len {
            return;
        }
        let mut next = vec![0usize; a.len() + 1];
        for &c in alphabet {
            for (i, &ca) in a.iter().enumerate() {
                next[i + 1] = if ca == c { col[i] + 1 } else { col[i + 1].max(next[i]) };
            }
            b.push(c);
            walk(a, alphabet, max_len, b, &next, f);
            b.pop();
        }
    }
    walk(a, alphabet, max_len, &mut Vec::new(), &vec![0; a.len() + 1], f);
}
