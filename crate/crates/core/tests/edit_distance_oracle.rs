//! Levenshtein distance against the textbook recursion on every pair of
//! strings up to length 8 over a three-letter alphabet.

use tplscan_core::features::edit_distance;

fn recursive(a: &[u8], b: &[u8], memo: &mut Vec<Option<usize>>, width: usize) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let slot = a.len() * width + b.len();
    if let Some(d) = memo[slot] {
        return d;
    }
    let (ra, rb) = (&a[..a.len() - 1], &b[..b.len() - 1]);
    let cost = usize::from(a[a.len() - 1] != b[b.len() - 1]);
    let d = (recursive(ra, b, memo, width) + 1)
        .min(recursive(a, rb, memo, width) + 1)
        .min(recursive(ra, rb, memo, width) + cost);
    memo[slot] = Some(d);
    d
}

/// Every string of length `0..=max` over `abc`.
fn all_strings(max: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<u8>| {
                b"abc".iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

pub fn count_mismatches(max: usize) -> usize {
    let strings = all_strings(max);
    let width = max + 1;
    let mut mismatches = 0;
    for a in &strings {
        let sa = std::str::from_utf8(a).unwrap();
        for b in &strings {
            let mut memo = vec![None; width * width];
            let expected = recursive(a, b, &mut memo, width);
            if edit_distance(sa, std::str::from_utf8(b).unwrap()) != expected {
                mismatches += 1;
            }
        }
    }
    mismatches
}

#[test]
fn agrees_with_the_recursion_up_to_length_five() {
    // The full length-8 sweep runs in the acceptance suite.
    assert_eq!(count_mismatches(5), 0);
}
