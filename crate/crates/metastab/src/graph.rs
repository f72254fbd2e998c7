//! Small directed-graph helpers: strongly connected components and the
//! condensation order, shared by the limit-chain analysis, the reduced-chain
//! classification, and the variational solver.

/// Strongly connected components of the directed graph on `0..n` whose edges
/// are given by `succ` (adjacency lists). Components are returned with their
/// member lists sorted ascending, and the component list itself is sorted by
/// smallest member, so the output is deterministic.
pub fn sccs(n: usize, succ: &dyn Fn(usize) -> Vec<usize>) -> Vec<Vec<usize>> {
    // Iterative Tarjan; the recursion depth would otherwise be bounded only
    // by the state count.
    const UNSET: usize = usize::MAX;
    let mut index = vec![UNSET; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut comps: Vec<Vec<usize>> = Vec::new();

    // Explicit DFS frames: (vertex, adjacency, next child position).
    let mut frames: Vec<(usize, Vec<usize>, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != UNSET {
            continue;
        }
        frames.push((root, succ(root), 0));
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(frame) = frames.last_mut() {
            let v = frame.0;
            if frame.2 < frame.1.len() {
                let w = frame.1[frame.2];
                frame.2 += 1;
                if index[w] == UNSET {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    frames.push((w, succ(w), 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
                frames.pop();
                if let Some(parent) = frames.last() {
                    let p = parent.0;
                    low[p] = low[p].min(low[v]);
                }
            }
        }
    }
    comps.sort_by_key(|c| c[0]);
    comps
}

/// For each vertex, the index of its component in the output of [`sccs`].
pub fn component_of(n: usize, comps: &[Vec<usize>]) -> Vec<usize> {
    let mut of = vec![usize::MAX; n];
    for (ci, comp) in comps.iter().enumerate() {
        for &v in comp {
            of[v] = ci;
        }
    }
    debug_assert!(of.iter().all(|&c| c != usize::MAX));
    of
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_cycles_and_a_bridge() {
        // 0 <-> 1 -> 2 <-> 3, plus an isolated 4.
        let adj = |v: usize| -> Vec<usize> {
            match v {
                0 => vec![1],
                1 => vec![0, 2],
                2 => vec![3],
                3 => vec![2],
                _ => vec![],
            }
        };
        let comps = sccs(5, &adj);
        assert_eq!(comps, vec![vec![0, 1], vec![2, 3], vec![4]]);
        let of = component_of(5, &comps);
        assert_eq!(of, vec![0, 0, 1, 1, 2]);
    }

    #[test]
    fn long_path_is_all_singletons() {
        let n = 2000; // deep enough to break a recursive implementation
        let adj = |v: usize| -> Vec<usize> {
            if v + 1 < n {
                vec![v + 1]
            } else {
                vec![]
            }
        };
        let comps = sccs(n, &adj);
        assert_eq!(comps.len(), n);
    }
}
