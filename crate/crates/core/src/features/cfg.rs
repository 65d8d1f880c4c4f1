//! Canonical serial numbering of method control flow graphs.
//!
//! Blocks reachable from the entry are numbered depth-first in pre-order.
//! At each node the successors are visited by descending out-degree, then
//! descending opcode count. Remaining ties are broken first by a structural
//! colour (iterated neighbourhood refinement over the graph shape), and then by
//! searching every order of the still-tied children and keeping the smallest
//! `(adjacency string, opcode stream)`. The search is bounded; past the bound
//! ties fall back to ascending original block index.

use std::cmp::{Ordering, Reverse};
use std::fmt::Write as _;

use crate::bundle::MethodDef;
use crate::hash::Hash128;

/// Largest tie group whose orderings are enumerated.
const MAX_TIE_GROUP: usize = 6;
/// Upper bound on complete numberings explored per method.
const MAX_NUMBERINGS: usize = 1024;

/// A CFG renumbered into canonical serials `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalCfg {
    pub node_count: usize,
    /// `(parent serial, child serials ascending)`, ascending by parent; parents
    /// without successors are omitted.
    pub adjacency: Vec<(usize, Vec<usize>)>,
    /// Original block index for each serial.
    pub order: Vec<usize>,
}

impl CanonicalCfg {
    /// `n=<count>;<p>-><c1>,<c2>;...`
    pub fn canonical_string(&self) -> String {
        let mut s = format!("n={};", self.node_count);
        for (parent, children) in &self.adjacency {
            let _ = write!(s, "{parent}->");
            for (i, c) in children.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{c}");
            }
            s.push(';');
        }
        s
    }
}

/// First 16 bytes of SHA-256 over the canonical adjacency string.
pub fn coarse_hash(cfg: &CanonicalCfg) -> Hash128 {
    Hash128::of(cfg.canonical_string().as_bytes())
}

/// Hash over the ascending-sorted concatenation of a module's coarse hashes.
/// The empty module maps to the hash of the empty string.
pub fn t1<'a, I>(coarse: I) -> Hash128
where
    I: IntoIterator<Item = &'a Hash128>,
{
    let mut sorted: Vec<&Hash128> = coarse.into_iter().collect();
    sorted.sort_unstable();
    let mut buf = Vec::with_capacity(sorted.len() * 16);
    for h in sorted {
        buf.extend_from_slice(h.as_bytes());
    }
    Hash128::of(&buf)
}

struct Graph<'a> {
    method: &'a MethodDef,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
    out_degree: Vec<usize>,
    opcodes: Vec<usize>,
    color: Vec<u64>,
}

pub fn canonicalize_cfg(method: &MethodDef) -> CanonicalCfg {
    let reachable = method.reachable();
    let mut succ = method.successors();
    for (b, list) in succ.iter_mut().enumerate() {
        if !reachable[b] {
            list.clear();
        }
    }
    let mut pred = vec![Vec::new(); method.blocks.len()];
    for (b, list) in succ.iter().enumerate() {
        for &c in list {
            pred[c].push(b);
        }
    }
    let graph = Graph {
        method,
        pred,
        out_degree: succ.iter().map(Vec::len).collect(),
        opcodes: method.blocks.iter().map(|b| b.len()).collect(),
        color: refine_colors(method, &succ, &reachable),
        succ,
    };

    let mut search = Search {
        graph: &graph,
        best: None,
        explored: 0,
    };
    search.explore(&mut Vec::new());
    let (serials, _) = search.best.expect("at least one numbering is always produced");
    graph.finish(serials)
}

impl Graph<'_> {
    /// Successors of `node` in visiting priority, original index last.
    fn ordered_children(&self, node: usize) -> Vec<usize> {
        let mut kids = self.succ[node].clone();
        kids.sort_by_key(|&c| (Reverse(self.out_degree[c]), Reverse(self.opcodes[c]), self.color[c], c));
        kids
    }

    fn tie_key(&self, c: usize) -> (usize, usize, u64) {
        (self.out_degree[c], self.opcodes[c], self.color[c])
    }

    /// Runs the pre-order numbering, consuming one entry of `choices` at each
    /// tie group. Returns the serial-to-block order, or the size of the next
    /// undecided choice.
    fn number(&self, choices: &[usize], forced_default: bool) -> Result<Vec<usize>, usize> {
        let n = self.method.blocks.len();
        let mut visited = vec![false; n];
        let mut order = Vec::new();
        let mut next_choice = 0usize;
        // Explicit stack of (node, remaining children in order).
        let entry = self.method.entry_block;
        visited[entry] = true;
        order.push(entry);
        let mut stack: Vec<(Vec<usize>, usize)> = Vec::new();
        let kids = self.resolve(entry, &visited, choices, &mut next_choice, forced_default)?;
        stack.push((kids, 0));
        while let Some((kids, pos)) = stack.last_mut() {
            if *pos >= kids.len() {
                stack.pop();
                continue;
            }
            let child = kids[*pos];
            *pos += 1;
            if visited[child] {
                continue;
            }
            visited[child] = true;
            order.push(child);
            let grand = self.resolve(child, &visited, choices, &mut next_choice, forced_default)?;
            stack.push((grand, 0));
        }
        Ok(order)
    }

    fn resolve(
        &self,
        node: usize,
        visited: &[bool],
        choices: &[usize],
        next_choice: &mut usize,
        forced_default: bool,
    ) -> Result<Vec<usize>, usize> {
        let mut kids = self.ordered_children(node);
        let mut start = 0;
        while start < kids.len() {
            let key = self.tie_key(kids[start]);
            let mut end = start + 1;
            while end < kids.len() && self.tie_key(kids[end]) == key {
                end += 1;
            }
            let group = &mut kids[start..end];
            let open = group.iter().filter(|&&c| !visited[c]).count();
            // Same-content leaves with the same predecessors are swapped by an
            // automorphism, so their order cannot matter.
            let first = group[0];
            let interchangeable = group.iter().all(|&c| {
                self.out_degree[c] == 0
                    && self.pred[c] == self.pred[first]
                    && self.method.blocks[c].opcodes == self.method.blocks[first].opcodes
            });
            if open >= 2 && !interchangeable && !forced_default {
                if group.len() > MAX_TIE_GROUP {
                    return Err(0);
                }
                let options = factorial(group.len());
                match choices.get(*next_choice) {
                    Some(&k) => {
                        permute_nth(group, k);
                        *next_choice += 1;
                    }
                    None => return Err(options),
                }
            }
            start = end;
        }
        Ok(kids)
    }

    fn finish(&self, order: Vec<usize>) -> CanonicalCfg {
        let mut serial_of = vec![usize::MAX; self.method.blocks.len()];
        for (s, &b) in order.iter().enumerate() {
            serial_of[b] = s;
        }
        let adjacency = order
            .iter()
            .enumerate()
            .filter(|(_, &b)| !self.succ[b].is_empty())
            .map(|(s, &b)| {
                let mut kids: Vec<usize> = self.succ[b].iter().map(|&c| serial_of[c]).collect();
                kids.sort_unstable();
                (s, kids)
            })
            .collect();
        CanonicalCfg {
            node_count: order.len(),
            adjacency,
            order,
        }
    }

    fn opcode_stream(&self, order: &[usize]) -> Vec<u8> {
        order
            .iter()
            .flat_map(|&b| self.method.blocks[b].opcodes.iter().map(|o| o.byte()))
            .collect()
    }
}

struct Search<'g, 'm> {
    graph: &'g Graph<'m>,
    best: Option<(Vec<usize>, (String, Vec<u8>))>,
    explored: usize,
}

impl Search<'_, '_> {
    fn explore(&mut self, prefix: &mut Vec<usize>) {
        if self.explored >= MAX_NUMBERINGS && self.best.is_some() {
            return;
        }
        match self.graph.number(prefix, false) {
            Ok(order) => self.offer(order),
            Err(0) => {
                // Tie group too large to enumerate: fall back to block index order.
                let order = self.graph.number(&[], true).expect("default numbering never branches");
                self.offer(order);
                self.explored = MAX_NUMBERINGS;
            }
            Err(options) => {
                for k in 0..options {
                    prefix.push(k);
                    self.explore(prefix);
                    prefix.pop();
                    if self.explored >= MAX_NUMBERINGS {
                        break;
                    }
                }
            }
        }
    }

    fn offer(&mut self, order: Vec<usize>) {
        self.explored += 1;
        let cfg = self.graph.finish(order.clone());
        let key = (cfg.canonical_string(), self.graph.opcode_stream(&order));
        let better = match &self.best {
            None => true,
            Some((_, best)) => key.cmp(best) == Ordering::Less,
        };
        if better {
            self.best = Some((order, key));
        }
    }
}

/// Iterated colour refinement over reachable blocks. Colours depend on graph
/// shape alone: neither block indices nor block content can reorder the
/// numbering, so inserting opcodes into blocks leaves the coarse hash alone.
fn refine_colors(method: &MethodDef, succ: &[Vec<usize>], reachable: &[bool]) -> Vec<u64> {
    let n = method.blocks.len();
    let mut pred = vec![Vec::new(); n];
    for (b, list) in succ.iter().enumerate() {
        for &c in list {
            pred[c].push(b);
        }
    }
    let mut color: Vec<u64> = (0..n)
        .map(|b| {
            let mut h = Fnv64::new();
            h.write_u64(succ[b].len() as u64);
            h.write_u64(pred[b].len() as u64);
            h.write_u64((b == method.entry_block) as u64);
            h.finish()
        })
        .collect();
    let live = reachable.iter().filter(|&&r| r).count();
    let mut classes = distinct(&color, reachable);
    for _ in 0..live {
        let next: Vec<u64> = (0..n)
            .map(|b| {
                let mut h = Fnv64::new();
                h.write_u64(color[b]);
                let mut out: Vec<u64> = succ[b].iter().map(|&c| color[c]).collect();
                out.sort_unstable();
                h.write_u64(out.len() as u64);
                out.iter().for_each(|&c| h.write_u64(c));
                let mut inc: Vec<u64> = pred[b].iter().map(|&c| color[c]).collect();
                inc.sort_unstable();
                h.write_u64(inc.len() as u64);
                inc.iter().for_each(|&c| h.write_u64(c));
                h.finish()
            })
            .collect();
        let next_classes = distinct(&next, reachable);
        color = next;
        if next_classes == classes {
            break;
        }
        classes = next_classes;
    }
    color
}

fn distinct(color: &[u64], reachable: &[bool]) -> usize {
    let mut v: Vec<u64> = color
        .iter()
        .zip(reachable)
        .filter(|(_, &r)| r)
        .map(|(&c, _)| c)
        .collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Fnv64 {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Rearranges `items` into their `k`-th lexicographic permutation, taking the
/// current order as permutation 0.
fn permute_nth(items: &mut [usize], mut k: usize) {
    let mut pool: Vec<usize> = items.to_vec();
    for slot in items.iter_mut() {
        let f = factorial(pool.len() - 1);
        let idx = k / f;
        k %= f;
        *slot = pool.remove(idx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::BasicBlock;
    use crate::opcode::Opcode;

    fn method(sizes: &[usize], edges: &[(usize, usize)]) -> MethodDef {
        MethodDef {
            method_id: "m".into(),
            blocks: sizes
                .iter()
                .map(|&n| BasicBlock::new(vec![Opcode::Add; n]))
                .collect(),
            edges: edges.to_vec(),
            entry_block: 0,
        }
    }

    #[test]
    fn single_block() {
        let cfg = canonicalize_cfg(&method(&[3], &[]));
        assert_eq!(cfg.node_count, 1);
        assert!(cfg.adjacency.is_empty());
        assert_eq!(cfg.canonical_string(), "n=1;");
    }

    #[test]
    fn child_with_more_out_edges_comes_first() {
        // entry -> {1 (one out-edge), 2 (two out-edges)}
        let m = method(&[1, 1, 1, 1, 1], &[(0, 1), (0, 2), (1, 4), (2, 3), (2, 4)]);
        let cfg = canonicalize_cfg(&m);
        assert_eq!(cfg.order[0], 0);
        assert_eq!(cfg.order[1], 2);
        // Block 1 comes after block 2's subtree in pre-order.
        assert_eq!(cfg.order[4], 1);
    }

    #[test]
    fn equal_out_degree_prefers_more_statements() {
        let m = method(&[1, 2, 3, 1], &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        let cfg = canonicalize_cfg(&m);
        assert_eq!(cfg.order[1], 2);
    }

    #[test]
    fn unreachable_blocks_are_dropped() {
        let m = method(&[1, 1, 1], &[(0, 1), (2, 0)]);
        let cfg = canonicalize_cfg(&m);
        assert_eq!(cfg.node_count, 2);
        assert_eq!(cfg.canonical_string(), "n=2;0->1;");
    }

    #[test]
    fn permutations_cover_every_ordering() {
        let mut seen = std::collections::HashSet::new();
        for k in 0..24 {
            let mut v = vec![1, 2, 3, 4];
            permute_nth(&mut v, k);
            seen.insert(v);
        }
        assert_eq!(seen.len(), 24);
        let mut v = vec![7, 8, 9];
        permute_nth(&mut v, 0);
        assert_eq!(v, vec![7, 8, 9]);
    }

    #[test]
    fn t1_is_order_free_and_has_an_empty_sentinel() {
        let a = Hash128::of(b"a");
        let b = Hash128::of(b"b");
        assert_eq!(t1([&a, &b]), t1([&b, &a]));
        assert_ne!(t1([&a, &b]), t1([&a, &b, &b]));
        assert_eq!(t1(std::iter::empty()), Hash128::of(b""));
    }
}
