//! Zero/nonzero patterns of nonnegative matrices and their graph structure.

use nalgebra::DMatrix;
use petgraph::graph::DiGraph;

/// Entries at or below `PATTERN_REL_THRESHOLD · max entry` are structural zeros.
pub const PATTERN_REL_THRESHOLD: f64 = 1e-13;

/// Dense Boolean matrix stored as row bitsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BoolMatrix {
    pub fn zeros(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Self { n, words, bits: vec![0; n * words] }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = Self::zeros(n);
        for i in 0..n {
            b.set(i, i);
        }
        b
    }

    /// Pattern of `m` with the relative threshold applied to the largest entry.
    pub fn from_dense(m: &DMatrix<f64>, rel_threshold: f64) -> Self {
        let n = m.nrows();
        let cutoff = rel_threshold * m.iter().fold(0.0f64, |a, &v| a.max(v));
        let mut b = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] > cutoff {
                    b.set(i, j);
                }
            }
        }
        b
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, j: usize) {
        self.bits[i * self.words + j / 64] |= 1 << (j % 64);
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn full_mask(&self) -> Vec<u64> {
        let mut mask = vec![u64::MAX; self.words];
        let rem = self.n % 64;
        if rem != 0 {
            mask[self.words - 1] = (1u64 << rem) - 1;
        }
        mask
    }

    /// Boolean product `self · other`.
    pub fn mul(&self, other: &BoolMatrix) -> BoolMatrix {
        let mut out = BoolMatrix::zeros(self.n);
        for i in 0..self.n {
            let dst = i * self.words;
            for k in 0..self.n {
                if self.get(i, k) {
                    for w in 0..self.words {
                        out.bits[dst + w] |= other.bits[k * self.words + w];
                    }
                }
            }
        }
        out
    }

    pub fn all_ones(&self) -> bool {
        let mask = self.full_mask();
        (0..self.n).all(|i| self.row(i).iter().zip(&mask).all(|(r, m)| r & m == *m))
    }

    /// Rows `i` with a zero in column `j`.
    pub fn zero_rows_in_column(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.get(i, j)).collect()
    }

    pub fn column_all_ones(&self, j: usize) -> bool {
        (0..self.n).all(|i| self.get(i, j))
    }

    /// Transitive closure (paths of length ≥ 1), Warshall's algorithm on bitsets.
    pub fn transitive_closure(&self) -> BoolMatrix {
        let mut c = self.clone();
        for k in 0..self.n {
            let row_k: Vec<u64> = c.row(k).to_vec();
            for i in 0..self.n {
                if c.get(i, k) {
                    let base = i * c.words;
                    for (w, rk) in row_k.iter().enumerate() {
                        c.bits[base + w] |= rk;
                    }
                }
            }
        }
        c
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn graph(&self) -> DiGraph<(), ()> {
        let mut g = DiGraph::with_capacity(self.n, self.count_ones());
        let nodes: Vec<_> = (0..self.n).map(|_| g.add_node(())).collect();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    g.add_edge(nodes[i], nodes[j], ());
                }
            }
        }
        g
    }

    /// Strongly connected components, each sorted, ordered by smallest member.
    pub fn strongly_connected_components(&self) -> Vec<Vec<usize>> {
        let mut comps: Vec<Vec<usize>> = petgraph::algo::tarjan_scc(&self.graph())
            .into_iter()
            .map(|c| {
                let mut v: Vec<usize> = c.into_iter().map(|ix| ix.index()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        comps.sort_by_key(|c| c[0]);
        comps
    }

    /// Components with no edge leaving them (closed communicating classes).
    pub fn closed_classes(&self) -> Vec<Vec<usize>> {
        let comps = self.strongly_connected_components();
        let mut label = vec![0usize; self.n];
        for (c, members) in comps.iter().enumerate() {
            for &i in members {
                label[i] = c;
            }
        }
        comps
            .iter()
            .enumerate()
            .filter(|(c, members)| {
                members
                    .iter()
                    .all(|&i| (0..self.n).all(|j| !self.get(i, j) || label[j] == *c))
            })
            .map(|(_, m)| m.clone())
            .collect()
    }

    /// Period of an irreducible pattern: gcd of `level(i) + 1 − level(j)` over edges,
    /// with BFS levels from node 0.
    pub fn period(&self) -> usize {
        let mut level = vec![usize::MAX; self.n];
        let mut queue = std::collections::VecDeque::new();
        level[0] = 0;
        queue.push_back(0);
        while let Some(i) = queue.pop_front() {
            for j in 0..self.n {
                if self.get(i, j) && level[j] == usize::MAX {
                    level[j] = level[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        let mut g = 0i64;
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) && level[i] != usize::MAX && level[j] != usize::MAX {
                    g = gcd(g, (level[i] as i64 + 1 - level[j] as i64).abs());
                }
            }
        }
        g as usize
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
