//! Iterative Tarjan SCC over a compact adjacency store.

/// Successor lists indexed by node id. Lists are stored in expansion order,
/// which need not match id order, so each node keeps its own `(start, len)`.
#[derive(Debug, Default)]
pub(crate) struct Graph {
    start: Vec<u64>,
    len: Vec<u8>,
    targets: Vec<u32>,
}

impl Graph {
    pub fn add_node(&mut self) {
        self.start.push(u64::MAX);
        self.len.push(0);
    }

    /// Records the successors of `node`; must be called once per node.
    pub fn set_successors(&mut self, node: u32, succ: &[u32]) {
        self.start[node as usize] = self.targets.len() as u64;
        self.len[node as usize] = u8::try_from(succ.len()).expect("fewer than 256 actions per state");
        self.targets.extend_from_slice(succ);
    }

    pub fn node_count(&self) -> usize {
        self.start.len()
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn successors(&self, node: u32) -> &[u32] {
        let s = self.start[node as usize];
        if s == u64::MAX {
            return &[];
        }
        let s = s as usize;
        &self.targets[s..s + self.len[node as usize] as usize]
    }
}

/// Component id of every node; ids are assigned in completion order, so
/// every edge goes from a component to one with an id no larger than its own.
pub(crate) fn tarjan(g: &Graph) -> (Vec<u32>, u32) {
    const UNSEEN: u32 = u32::MAX;
    let n = g.node_count();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![UNSEEN; n];
    let mut stack: Vec<u32> = Vec::new();
    let mut call: Vec<(u32, u32)> = Vec::new();
    let mut next_index = 0u32;
    let mut next_comp = 0u32;

    for root in 0..n as u32 {
        if index[root as usize] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        index[root as usize] = next_index;
        low[root as usize] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root as usize] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            let succ = g.successors(v);
            if (*pos as usize) < succ.len() {
                let w = succ[*pos as usize];
                *pos += 1;
                if index[w as usize] == UNSEEN {
                    index[w as usize] = next_index;
                    low[w as usize] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w as usize] = true;
                    call.push((w, 0));
                } else if on_stack[w as usize] {
                    low[v as usize] = low[v as usize].min(index[w as usize]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent as usize] = low[parent as usize].min(low[v as usize]);
            }
            if low[v as usize] == index[v as usize] {
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w as usize] = false;
                    comp[w as usize] = next_comp;
                    if w == v {
                        break;
                    }
                }
                next_comp += 1;
            }
        }
    }
    (comp, next_comp)
}

/// Components with no edge leaving them.
pub(crate) fn bottom_components(g: &Graph, comp: &[u32], count: u32) -> Vec<bool> {
    let mut bottom = vec![true; count as usize];
    for v in 0..g.node_count() as u32 {
        let c = comp[v as usize];
        if g.successors(v).iter().any(|&w| comp[w as usize] != c) {
            bottom[c as usize] = false;
        }
    }
    bottom
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(u32, u32)]) -> Graph {
        let mut g = Graph::default();
        for _ in 0..n {
            g.add_node();
        }
        for v in 0..n as u32 {
            let succ: Vec<u32> = edges.iter().filter(|e| e.0 == v).map(|e| e.1).collect();
            g.set_successors(v, &succ);
        }
        g
    }

    /// Reachability closure; two nodes share a component iff mutually reachable.
    fn reach(n: usize, edges: &[(u32, u32)]) -> Vec<Vec<bool>> {
        let mut r = vec![vec![false; n]; n];
        for (i, row) in r.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(a, b) in edges {
            r[a as usize][b as usize] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if r[i][k] && r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
        r
    }

    #[test]
    fn small_cases() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 1), (2, 3), (4, 4)]);
        let (comp, count) = tarjan(&g);
        assert_eq!(count, 4);
        assert_eq!(comp[1], comp[2]);
        let bottom = bottom_components(&g, &comp, count);
        assert!(bottom[comp[3] as usize] && bottom[comp[4] as usize]);
        assert!(!bottom[comp[1] as usize] && !bottom[comp[0] as usize]);
    }

    proptest! {
        #[test]
        fn matches_reachability(n in 1usize..9, raw in proptest::collection::vec((0u32..9, 0u32..9), 0..24)) {
            let edges: Vec<(u32, u32)> = raw.into_iter().filter(|e| (e.0 as usize) < n && (e.1 as usize) < n).collect();
            let g = graph(n, &edges);
            let (comp, count) = tarjan(&g);
            let r = reach(n, &edges);
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(comp[i] == comp[j], r[i][j] && r[j][i]);
                }
            }
            let bottom = bottom_components(&g, &comp, count);
            for i in 0..n {
                let is_bottom = (0..n).all(|j| !r[i][j] || r[j][i]);
                prop_assert_eq!(bottom[comp[i] as usize], is_bottom);
            }
            for &(a, b) in &edges {
                prop_assert!(comp[b as usize] <= comp[a as usize]);
            }
        }
    }
}
