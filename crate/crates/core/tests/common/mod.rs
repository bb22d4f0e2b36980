//! Oracles shared between integration test targets.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

/// Trees on labelled vertices 0..v from a Prüfer sequence.
fn prufer_decode(seq: &[usize], v: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; v];
    for &x in seq {
        degree[x] += 1;
    }
    let mut edges = Vec::new();
    for &x in seq {
        let leaf = (0..v).find(|&i| degree[i] == 1).unwrap();
        edges.push((leaf, x));
        degree[leaf] -= 1;
        degree[x] -= 1;
    }
    let rest: Vec<usize> = (0..v).filter(|&i| degree[i] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

fn leaves_below(edges: &[(usize, usize)], v: usize, from: usize, to: usize, n: usize) -> BTreeSet<usize> {
    // leaves in the component of `to` after removing edge (from, to)
    let mut adj = vec![Vec::new(); v];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; v];
    seen[from] = true;
    let mut stack = vec![to];
    let mut out = BTreeSet::new();
    while let Some(x) = stack.pop() {
        if seen[x] {
            continue;
        }
        seen[x] = true;
        if x < n {
            out.insert(x + 1);
        }
        stack.extend(adj[x].iter().copied());
    }
    out
}

/// Interval [i..j] (1-based, cyclic) representing a leaf set, normalised to
/// the side not containing leaf n; None if neither side is a cyclic interval.
fn as_interval(set: &BTreeSet<usize>, n: usize) -> Option<(usize, usize)> {
    let side: BTreeSet<usize> = if set.contains(&n) {
        (1..=n).filter(|x| !set.contains(x)).collect()
    } else {
        set.clone()
    };
    if side.is_empty() {
        return Some((n, n));
    }
    let lo = *side.iter().next().unwrap();
    let hi = *side.iter().last().unwrap();
    if hi - lo + 1 == side.len() {
        Some((lo, hi))
    } else {
        None
    }
}

/// Generate all trees with leaves 1..n (degree 1) and r internal vertices of
/// degree ≥ 3, keep the non-crossing ones (every split a cyclic interval),
/// deduplicate by split set.
pub fn brute_force_count(n: usize) -> usize {
    let mut found = HashSet::new();
    for r in 1..=n - 2 {
        let v = n + r;
        let len = v - 2;
        let mut seq = vec![n; len];
        loop {
            // leaves never occur in the sequence; internal vertex degree = occurrences + 1
            let ok = (n..v).all(|i| seq.iter().filter(|&&x| x == i).count() >= 2);
            if ok {
                let edges = prufer_decode(&seq, v);
                let mut splits = BTreeSet::new();
                let mut planar = true;
                for &(a, b) in &edges {
                    match as_interval(&leaves_below(&edges, v, a, b, n), n) {
                        Some(iv) => {
                            splits.insert(iv);
                        }
                        None => planar = false,
                    }
                }
                if planar {
                    found.insert(splits);
                }
            }
            // advance the odometer over internal labels n..v
            let mut i = 0;
            while i < len {
                seq[i] += 1;
                if seq[i] < v {
                    break;
                }
                seq[i] = n;
                i += 1;
            }
            if i == len {
                break;
            }
        }
    }
    found.len()
}
