//! Maximum spanning arborescence decoding (Chu-Liu-Edmonds) and label
//! assignment.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::mtt::NormalizedScores;
use crate::scorer::LabelScores;

/// Largest sentence length accepted by the exhaustive search.
pub const MAX_BRUTE_FORCE_N: usize = 8;

/// Highest-scoring tree. With `single_root`, ROOT has exactly one child.
///
/// The single-root search first decodes without the constraint; if that
/// tree has several root children, CLE is rerun once per candidate root
/// child with all other root arcs removed and the best result is kept.
pub fn mst_decode(scores: &NormalizedScores, single_root: bool) -> Vec<usize> {
    let n = scores.n();
    let graph = square_graph(scores);
    let unconstrained = chu_liu_edmonds(&graph);
    if !single_root || unconstrained.iter().filter(|&&h| h == 0).count() == 1 {
        return unconstrained;
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    for child in 1..=n {
        let mut forced = graph.clone();
        for other in 1..=n {
            if other != child {
                forced[[0, other]] = f64::NEG_INFINITY;
            }
        }
        let heads = chu_liu_edmonds(&forced);
        let score = scores.tree_score(&heads);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, heads));
        }
    }
    best.expect("sentence has at least one word").1
}

/// `(n + 1) x (n + 1)` weights, `[head, dependent]`, nothing enters ROOT.
fn square_graph(scores: &NormalizedScores) -> Array2<f64> {
    let n = scores.n();
    let mut graph = Array2::from_elem((n + 1, n + 1), f64::NEG_INFINITY);
    for h in 0..=n {
        for c in 1..=n {
            graph[[h, c]] = scores.get(h, c);
        }
    }
    graph
}

/// Maximum arborescence rooted at vertex 0 of a dense graph. Returns the
/// parent of every vertex except the root, i.e. `heads[v - 1]` is the
/// parent of `v`. Ties prefer the lower vertex index.
pub fn chu_liu_edmonds(graph: &Array2<f64>) -> Vec<usize> {
    let size = graph.nrows();
    if size <= 1 {
        return Vec::new();
    }

    let best_parent: Vec<usize> = (0..size)
        .map(|v| {
            if v == 0 {
                return 0;
            }
            let mut best = usize::MAX;
            let mut best_score = f64::NEG_INFINITY;
            for u in 0..size {
                if u == v {
                    continue;
                }
                if best == usize::MAX || graph[[u, v]] > best_score {
                    best = u;
                    best_score = graph[[u, v]];
                }
            }
            best
        })
        .collect();

    let Some(cycle) = find_cycle(&best_parent) else {
        return best_parent[1..].to_vec();
    };

    let mut in_cycle = vec![false; size];
    for &v in &cycle {
        in_cycle[v] = true;
    }

    // Remaining vertices keep their relative order; the contracted cycle
    // becomes the last vertex.
    let kept: Vec<usize> = (0..size).filter(|&v| !in_cycle[v]).collect();
    let mut new_index = vec![usize::MAX; size];
    for (i, &v) in kept.iter().enumerate() {
        new_index[v] = i;
    }
    let contracted = kept.len();
    let new_size = contracted + 1;

    let mut reduced = Array2::from_elem((new_size, new_size), f64::NEG_INFINITY);
    let mut enters_at = vec![usize::MAX; size];
    let mut leaves_from = vec![usize::MAX; size];

    for &u in &kept {
        for &v in &kept {
            if u != v && v != 0 {
                reduced[[new_index[u], new_index[v]]] = graph[[u, v]];
            }
        }

        let mut best = f64::NEG_INFINITY;
        for &v in &cycle {
            let score = graph[[u, v]] - graph[[best_parent[v], v]];
            if enters_at[u] == usize::MAX || score > best {
                best = score;
                enters_at[u] = v;
            }
        }
        reduced[[new_index[u], contracted]] = best;

        if u != 0 {
            let mut best = f64::NEG_INFINITY;
            for &c in &cycle {
                if leaves_from[u] == usize::MAX || graph[[c, u]] > best {
                    best = graph[[c, u]];
                    leaves_from[u] = c;
                }
            }
            reduced[[contracted, new_index[u]]] = best;
        }
    }

    let reduced_heads = chu_liu_edmonds(&reduced);

    let mut heads = vec![0; size - 1];
    for &v in kept.iter().skip(1) {
        let parent = reduced_heads[new_index[v] - 1];
        heads[v - 1] = if parent == contracted {
            leaves_from[v]
        } else {
            kept[parent]
        };
    }
    let entering = kept[reduced_heads[contracted - 1]];
    for &v in &cycle {
        heads[v - 1] = best_parent[v];
    }
    heads[enters_at[entering] - 1] = entering;
    heads
}

/// Vertices of one cycle in the parent graph, ascending.
fn find_cycle(parents: &[usize]) -> Option<Vec<usize>> {
    let size = parents.len();
    let mut state = vec![0u8; size];
    state[0] = 2;
    for start in 1..size {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = parents[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&p| p == v).unwrap();
            let mut cycle = path[pos..].to_vec();
            cycle.sort_unstable();
            return Some(cycle);
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

/// Highest-scoring label for every arc of `heads`; ties go to the lower
/// label index.
pub fn assign_labels(label_scores: &LabelScores, heads: &[usize]) -> Vec<usize> {
    heads
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let scores = label_scores.get(h, i + 1);
            let mut best = 0;
            for (r, &v) in scores.iter().enumerate() {
                if v > scores[best] {
                    best = r;
                }
            }
            best
        })
        .collect()
}

/// Calls `visit` with every valid head assignment of an `n`-word sentence,
/// in lexicographic order of the head vector.
pub fn for_each_tree(n: usize, single_root: bool, mut visit: impl FnMut(&[usize])) -> Result<()> {
    if n > MAX_BRUTE_FORCE_N {
        return Err(Error::TooLarge {
            n,
            max: MAX_BRUTE_FORCE_N,
        });
    }
    let mut heads = vec![0; n];
    enumerate(0, &mut heads, 0, single_root, &mut visit);
    Ok(())
}

fn enumerate(pos: usize, heads: &mut Vec<usize>, roots: usize, single_root: bool, visit: &mut impl FnMut(&[usize])) {
    let n = heads.len();
    if pos == n {
        if roots >= 1 && reaches_root(heads) {
            visit(heads);
        }
        return;
    }
    for h in 0..=n {
        if h == pos + 1 || (single_root && h == 0 && roots == 1) {
            continue;
        }
        heads[pos] = h;
        // prune cycles among already assigned words
        if h != 0 && closes_cycle(heads, pos + 1) {
            continue;
        }
        enumerate(pos + 1, heads, roots + usize::from(h == 0), single_root, visit);
    }
}

fn closes_cycle(heads: &[usize], start: usize) -> bool {
    let mut v = heads[start - 1];
    let mut steps = 0;
    while v != 0 && v <= start && steps <= start {
        if v == start {
            return true;
        }
        v = heads[v - 1];
        steps += 1;
    }
    false
}

fn reaches_root(heads: &[usize]) -> bool {
    let n = heads.len();
    (1..=n).all(|start| {
        let mut v = start;
        for _ in 0..=n {
            if v == 0 {
                return true;
            }
            v = heads[v - 1];
        }
        false
    })
}

/// Exhaustive search for the best tree, `n <= 8`.
pub fn brute_force_best_tree(scores: &NormalizedScores, single_root: bool) -> Result<Vec<usize>> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_tree(scores.n(), single_root, |heads| {
        let score = scores.tree_score(heads);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, heads.to_vec()));
        }
    })?;
    Ok(best.expect("every sentence has a tree").1)
}
