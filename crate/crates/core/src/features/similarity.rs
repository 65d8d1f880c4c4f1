use super::ctph::CtphDigest;

/// Levenshtein distance with unit insertion, deletion and substitution costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitute.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - d / max(m, n)` over two digest strings; two empty strings score 1.
pub fn string_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

/// Method similarity score between two fuzzy digests.
///
/// Digests are compared at a shared block size: equal sizes compare the
/// primary digests, sizes a factor of two apart compare the smaller one's
/// double digest against the larger one's primary digest. The best score over
/// the compatible pairings wins; with no compatible pairing the score is 0.
pub fn mss(a: &CtphDigest, b: &CtphDigest) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 1.0 } else { 0.0 };
    }
    let mut best: Option<f64> = None;
    let mut consider = |x: &str, y: &str| {
        let s = string_similarity(x, y);
        best = Some(best.map_or(s, |b: f64| b.max(s)));
    };
    if a.block_size == b.block_size {
        consider(&a.digest, &b.digest);
    }
    if a.block_size == b.block_size * 2 {
        consider(&a.digest, &b.double_digest);
    }
    if a.block_size * 2 == b.block_size {
        consider(&a.double_digest, &b.digest);
    }
    best.unwrap_or(0.0)
}

/// Cheap upper bound on [`mss`]: the edit distance is at least the length
/// difference, so `mss <= min(len) / max(len)` for each pairing.
pub fn mss_upper_bound(a: &CtphDigest, b: &CtphDigest) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() { 1.0 } else { 0.0 };
    }
    let ratio = |x: &str, y: &str| {
        let (m, n) = (x.len(), y.len());
        if m.max(n) == 0 {
            1.0
        } else {
            m.min(n) as f64 / m.max(n) as f64
        }
    };
    let mut best = 0.0f64;
    if a.block_size == b.block_size {
        best = best.max(ratio(&a.digest, &b.digest));
    }
    if a.block_size == b.block_size * 2 {
        best = best.max(ratio(&a.digest, &b.double_digest));
    }
    if a.block_size * 2 == b.block_size {
        best = best.max(ratio(&a.double_digest, &b.digest));
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digest(block_size: u32, d: &str, dd: &str) -> CtphDigest {
        CtphDigest {
            block_size,
            digest: d.into(),
            double_digest: dd.into(),
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("abc", ""), 3);
        assert_eq!(edit_distance("abc", "abd"), 1);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("flaw", "lawn"), 2);
    }

    #[test]
    fn identical_digests_score_one() {
        let d = digest(6, "abcdef", "abc");
        assert_eq!(mss(&d, &d), 1.0);
        assert_eq!(mss(&CtphDigest::empty(), &CtphDigest::empty()), 1.0);
        assert_eq!(mss(&CtphDigest::empty(), &d), 0.0);
    }

    #[test]
    fn one_substitution_in_three() {
        let s = mss(&digest(3, "abc", ""), &digest(3, "abd", ""));
        assert!((s - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn incompatible_block_sizes_score_zero() {
        assert_eq!(mss(&digest(3, "abc", "ab"), &digest(24, "abc", "ab")), 0.0);
    }

    #[test]
    fn adjacent_block_sizes_use_the_double_digest() {
        let small = digest(3, "zzzzzz", "abc");
        let large = digest(6, "abc", "q");
        assert_eq!(mss(&small, &large), 1.0);
        assert_eq!(mss(&large, &small), 1.0);
    }
}
