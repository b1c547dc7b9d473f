//! Maximum families of site-disjoint crossing paths and the parameter
//! conditions under which enough of them exist.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;

use crate::error::Result;
use crate::spatial::{CellCoord, LocalGrid, Orientation, Partition, RectId, SiteGrid};

/// Guaranteed crossing-path density: at least this many paths per `ln n`.
pub const PATH_DENSITY: f64 = 0.5474;

/// Border-to-border sequence of distinct, edge-adjacent open cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenPath {
    pub rect: RectId,
    /// Global cell coordinates; LR paths run left to right, TB paths top to bottom.
    pub cells: Vec<CellCoord>,
}

impl OpenPath {
    pub fn orientation(&self) -> Orientation {
        self.rect.orientation
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    pub rect: RectId,
    pub paths: Vec<OpenPath>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Cell → path map, or the first cell claimed twice.
    pub fn certificate(&self) -> std::result::Result<Vec<(CellCoord, usize)>, CellCoord> {
        let mut owner: Vec<(CellCoord, usize)> =
            self.paths.iter().enumerate().flat_map(|(i, p)| p.cells.iter().map(move |&c| (c, i))).collect();
        owner.sort_unstable();
        for w in owner.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(w[0].0);
            }
        }
        Ok(owner)
    }

    /// One text block: `rect <id> paths <k>` then one line of `col,row` pairs per path.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "rect {} paths {}", self.rect, self.paths.len())?;
        for p in &self.paths {
            let cells: Vec<String> = p.cells.iter().map(|c| format!("{},{}", c.col, c.row)).collect();
            writeln!(out, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Unit-capacity residual graph.
struct FlowGraph {
    head: Vec<u32>,
    next: Vec<u32>,
    to: Vec<u32>,
    cap: Vec<u8>,
}

const NIL: u32 = u32::MAX;

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        Self { head: vec![NIL; nodes], next: Vec::new(), to: Vec::new(), cap: Vec::new() }
    }

    fn add_edge(&mut self, u: usize, v: usize) {
        for (a, b, c) in [(u, v, 1u8), (v, u, 0u8)] {
            self.to.push(b as u32);
            self.cap.push(c);
            self.next.push(self.head[a]);
            self.head[a] = (self.to.len() - 1) as u32;
        }
    }

    fn edges(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        let mut e = self.head[u];
        std::iter::from_fn(move || {
            (e != NIL).then(|| {
                let cur = e as usize;
                e = self.next[cur];
                cur
            })
        })
    }

    /// Edmonds-Karp; returns the flow value.
    fn max_flow(&mut self, s: usize, t: usize) -> usize {
        let n = self.head.len();
        let mut flow = 0;
        let mut via = vec![NIL; n];
        let mut queue = VecDeque::new();
        loop {
            via.fill(NIL);
            queue.clear();
            queue.push_back(s);
            let mut seen = vec![false; n];
            seen[s] = true;
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for e in self.edges(u) {
                    let v = self.to[e] as usize;
                    if self.cap[e] > 0 && !seen[v] {
                        seen[v] = true;
                        via[v] = e as u32;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return flow;
            }
            let mut v = t;
            while v != s {
                let e = via[v] as usize;
                self.cap[e] -= 1;
                self.cap[e ^ 1] += 1;
                v = self.to[e ^ 1] as usize;
            }
            flow += 1;
        }
    }
}

/// Maximum set of vertex-disjoint left-to-right open paths in a local grid.
///
/// Each returned path is a list of `(row, col)` starting in column 0 and ending in
/// the last column.
pub fn max_disjoint_lr(grid: &LocalGrid) -> Vec<Vec<(u32, u32)>> {
    let (rows, cols) = (grid.rows as usize, grid.cols as usize);
    let cells = rows * cols;
    if cells == 0 {
        return Vec::new();
    }
    // in(v) = 2v, out(v) = 2v + 1
    let (s, t) = (2 * cells, 2 * cells + 1);
    let mut g = FlowGraph::new(2 * cells + 2);
    // Edges are pushed to the front of each adjacency list, so add them in
    // reverse of the desired exploration order.
    for v in (0..cells).rev() {
        let (r, c) = (v / cols, v % cols);
        if !grid.open[v] {
            continue;
        }
        if c == cols - 1 {
            g.add_edge(2 * v + 1, t);
        }
        let mut nbrs = Vec::with_capacity(4);
        if c + 1 < cols {
            nbrs.push(v + 1);
        }
        if r + 1 < rows {
            nbrs.push(v + cols);
        }
        if r > 0 {
            nbrs.push(v - cols);
        }
        if c > 0 {
            nbrs.push(v - 1);
        }
        for &w in nbrs.iter().rev() {
            if grid.open[w] {
                g.add_edge(2 * v + 1, 2 * w);
            }
        }
        g.add_edge(2 * v, 2 * v + 1);
    }
    for r in (0..rows).rev() {
        let v = r * cols;
        if grid.open[v] {
            g.add_edge(s, 2 * v);
        }
    }
    let flow = g.max_flow(s, t);

    // Decompose: follow saturated forward edges out of the source.
    let saturated = |g: &FlowGraph, e: usize| e.is_multiple_of(2) && g.cap[e] == 0;
    let mut starts: Vec<usize> = g.edges(s).filter(|&e| saturated(&g, e)).map(|e| g.to[e] as usize / 2).collect();
    starts.sort_unstable();
    let mut paths = Vec::with_capacity(flow);
    for start in starts {
        let mut path = Vec::new();
        let mut v = start;
        loop {
            path.push(((v / cols) as u32, (v % cols) as u32));
            let out = 2 * v + 1;
            let next = g
                .edges(out)
                .find(|&e| saturated(&g, e))
                .map(|e| g.to[e] as usize)
                .expect("flow leaves every saturated cell");
            if next == t {
                break;
            }
            v = next / 2;
        }
        paths.push(path);
    }
    debug_assert_eq!(paths.len(), flow);
    paths
}

/// Maximum site-disjoint crossing paths of one rectangle, in its own orientation.
pub fn max_disjoint_paths(grid: &SiteGrid, partition: &Partition, rect: RectId) -> PathSet {
    let (origin, _, _) = partition.rect_cells(rect);
    let view = grid.rect_view(partition, rect);
    let paths = match rect.orientation {
        Orientation::LeftRight => max_disjoint_lr(&view)
            .into_iter()
            .map(|p| p.into_iter().map(|(r, c)| CellCoord::new(origin.col + c, origin.row + r)).collect())
            .collect::<Vec<Vec<_>>>(),
        Orientation::TopBottom => max_disjoint_lr(&view.transpose())
            .into_iter()
            .map(|p| {
                // transposed (row, col) = original (col, row); flow runs bottom to top
                p.into_iter().rev().map(|(r, c)| CellCoord::new(origin.col + r, origin.row + c)).collect()
            })
            .collect(),
    };
    PathSet { rect, paths: paths.into_iter().map(|cells| OpenPath { rect, cells }).collect() }
}

/// Path sets for every rectangle, horizontal ones first.
pub fn all_path_sets(grid: &SiteGrid, partition: &Partition) -> Vec<PathSet> {
    let rects: Vec<RectId> = partition.rectangles().collect();
    rects.par_iter().map(|&r| max_disjoint_paths(grid, partition, r)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercolationConditions {
    pub p: f64,
    pub c: f64,
    pub c1: f64,
    pub omega1: f64,
    /// `2 + c1 ln(6(1-p))`, must be negative.
    pub expr5: f64,
    /// `ω1 ln(p/(1-p)) + c1 ln(6(1-p)) + 2`, must be negative.
    pub expr6: f64,
    pub cond4: bool,
    pub cond5: bool,
    pub cond6: bool,
}

impl PercolationConditions {
    pub fn all_hold(&self) -> bool {
        self.cond4 && self.cond5 && self.cond6
    }
}

pub fn check_conditions(c: f64, c1: f64, omega1: f64) -> PercolationConditions {
    let p = crate::spatial::open_probability(c);
    let q = (-c * c).exp();
    let log6q = (6.0 * q).ln();
    let expr5 = 2.0 + c1 * log6q;
    let expr6 = omega1 * (p / q).ln() + c1 * log6q + 2.0;
    PercolationConditions {
        p,
        c,
        c1,
        omega1,
        expr5,
        expr6,
        cond4: p > 5.0 / 6.0 && p < 1.0,
        cond5: expr5 < 0.0,
        cond6: expr6 < 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::collections::HashMap;

    fn random_grid(rows: u32, cols: u32, p: f64, seed: u64) -> LocalGrid {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        LocalGrid::new(rows, cols, (0..rows * cols).map(|_| rng.random::<f64>() < p).collect())
    }

    fn assert_valid(grid: &LocalGrid, paths: &[Vec<(u32, u32)>]) {
        let mut used = vec![false; grid.open.len()];
        for p in paths {
            assert_eq!(p.first().unwrap().1, 0);
            assert_eq!(p.last().unwrap().1, grid.cols - 1);
            for w in p.windows(2) {
                let d = (w[0].0 as i64 - w[1].0 as i64).abs() + (w[0].1 as i64 - w[1].1 as i64).abs();
                assert_eq!(d, 1, "cells not edge-adjacent");
            }
            for &(r, c) in p {
                assert!(grid.is_open(r, c));
                let i = (r * grid.cols + c) as usize;
                assert!(!used[i], "cell shared");
                used[i] = true;
            }
        }
    }

    /// Exhaustive maximum over disjoint families.
    ///
    /// Any family can be normalised so each path meets column 0 only at its
    /// first cell, stops at its first last-column cell and is induced (no
    /// chords); shortening keeps disjointness. So either the lowest available
    /// column-0 cell is unused, or some normalised path starts there.
    struct Exhaustive {
        rows: usize,
        cols: usize,
        memo: HashMap<u64, u32>,
    }

    impl Exhaustive {
        fn solve(grid: &LocalGrid) -> u32 {
            let mut mask = 0u64;
            for (i, &o) in grid.open.iter().enumerate() {
                if o {
                    mask |= 1 << i;
                }
            }
            let mut e = Exhaustive { rows: grid.rows as usize, cols: grid.cols as usize, memo: HashMap::new() };
            e.best(mask)
        }

        fn best(&mut self, avail: u64) -> u32 {
            if let Some(&v) = self.memo.get(&avail) {
                return v;
            }
            let start = (0..self.rows).map(|r| r * self.cols).find(|&i| avail >> i & 1 == 1);
            let value = match start {
                None => 0,
                Some(s) => {
                    let mut best = self.best(avail & !(1 << s));
                    let mut found = Vec::new();
                    self.extend(avail, s, 1 << s, &mut found);
                    for used in found {
                        best = best.max(1 + self.best(avail & !used));
                    }
                    best
                }
            };
            self.memo.insert(avail, value);
            value
        }

        fn neighbours(&self, v: usize) -> impl Iterator<Item = usize> {
            let (r, c, cols, rows) = (v / self.cols, v % self.cols, self.cols, self.rows);
            [
                (c + 1 < cols).then(|| v + 1),
                (c > 0).then(|| v.wrapping_sub(1)),
                (r + 1 < rows).then(|| v + cols),
                (r > 0).then(|| v.wrapping_sub(cols)),
            ]
            .into_iter()
            .flatten()
        }

        fn extend(&self, avail: u64, tip: usize, path: u64, out: &mut Vec<u64>) {
            if tip % self.cols == self.cols - 1 {
                out.push(path);
                return;
            }
            for w in self.neighbours(tip) {
                if avail >> w & 1 == 0 || path >> w & 1 == 1 || w % self.cols == 0 {
                    continue;
                }
                // induced: w may touch only `tip` among path cells
                let touches = self.neighbours(w).filter(|&x| x != tip && path >> x & 1 == 1).count();
                if touches > 0 {
                    continue;
                }
                self.extend(avail, w, path | 1 << w, out);
            }
        }
    }

    /// Minimum number of open cells on a top-to-bottom 8-connected blocking path.
    fn dual_min_cut(grid: &LocalGrid) -> u32 {
        let (rows, cols) = (grid.rows as i64, grid.cols as i64);
        let cost = |r: i64, c: i64| grid.is_open(r as u32, c as u32) as u32;
        let mut dist = vec![u32::MAX; (rows * cols) as usize];
        let mut dq = VecDeque::new();
        let top = rows - 1;
        for c in 0..cols {
            let i = (top * cols + c) as usize;
            dist[i] = cost(top, c);
            dq.push_back((top, c));
        }
        // Dial-style relaxation with a deque (0-1 weights).
        while let Some((r, c)) = dq.pop_front() {
            let d = dist[(r * cols + c) as usize];
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if (dr, dc) == (0, 0) || nr < 0 || nc < 0 || nr >= rows || nc >= cols {
                        continue;
                    }
                    let w = cost(nr, nc);
                    let i = (nr * cols + nc) as usize;
                    if d + w < dist[i] {
                        dist[i] = d + w;
                        if w == 0 {
                            dq.push_front((nr, nc));
                        } else {
                            dq.push_back((nr, nc));
                        }
                    }
                }
            }
        }
        (0..cols).map(|c| dist[c as usize]).min().unwrap()
    }

    #[test]
    fn all_open_rectangle() {
        let g = LocalGrid::filled(3, 5, true);
        let p = max_disjoint_lr(&g);
        assert_eq!(p.len(), 3);
        assert_valid(&g, &p);
    }

    #[test]
    fn all_closed_rectangle() {
        assert!(max_disjoint_lr(&LocalGrid::filled(4, 7, false)).is_empty());
    }

    #[test]
    fn every_three_by_four_pattern() {
        for bits in 0u32..1 << 12 {
            let g = LocalGrid::new(3, 4, (0..12).map(|i| bits >> i & 1 == 1).collect());
            let paths = max_disjoint_lr(&g);
            assert_valid(&g, &paths);
            assert_eq!(paths.len() as u32, Exhaustive::solve(&g), "pattern {bits:012b}");
        }
    }

    #[test]
    fn random_six_by_six_against_exhaustive() {
        for seed in 0..200 {
            let p = 0.55 + 0.35 * (seed % 5) as f64 / 4.0;
            let g = random_grid(6, 6, p, seed);
            let paths = max_disjoint_lr(&g);
            assert_valid(&g, &paths);
            assert_eq!(paths.len() as u32, Exhaustive::solve(&g), "seed {seed}");
        }
    }

    #[test]
    fn matches_dual_cut_up_to_twelve() {
        for seed in 0..300u64 {
            let rows = 1 + (seed % 12) as u32;
            let cols = 1 + (seed / 12 % 12) as u32;
            let g = random_grid(rows, cols, 0.5 + 0.45 * ((seed % 7) as f64 / 6.0), seed);
            let paths = max_disjoint_lr(&g);
            assert_valid(&g, &paths);
            assert_eq!(paths.len() as u32, dual_min_cut(&g), "{rows}x{cols} seed {seed}");
        }
    }

    #[test]
    fn decomposition_is_deterministic() {
        let g = random_grid(10, 40, 0.8, 3);
        assert_eq!(max_disjoint_lr(&g), max_disjoint_lr(&g));
    }

    #[test]
    fn rectangles_in_global_frame() {
        use crate::spatial::{classify_sites, deploy_poisson};
        let side = 80.0;
        let part = Partition::new(side, 1.7308, 3.0).unwrap();
        let field = deploy_poisson(1.0, side, 9).unwrap();
        let grid = classify_sites(&field, &part).unwrap();
        for set in all_path_sets(&grid, &part) {
            set.certificate().unwrap();
            let (origin, rows, cols) = part.rect_cells(set.rect);
            for path in &set.paths {
                for c in &path.cells {
                    assert!(grid.is_open(part.cell_index(*c)));
                    assert!(c.col >= origin.col && c.col < origin.col + cols);
                    assert!(c.row >= origin.row && c.row < origin.row + rows);
                }
                for w in path.cells.windows(2) {
                    assert!(w[0].is_adjacent(&w[1]));
                }
                let (first, last) = (path.cells[0], *path.cells.last().unwrap());
                match set.rect.orientation {
                    Orientation::LeftRight => {
                        assert_eq!(first.col, 0);
                        assert_eq!(last.col, cols - 1);
                    }
                    Orientation::TopBottom => {
                        assert_eq!(first.row, rows - 1);
                        assert_eq!(last.row, 0);
                    }
                }
            }
        }
    }

    #[test]
    fn published_constants_are_tight() {
        let k = check_conditions(1.7308, 3.0, PATH_DENSITY);
        assert!((k.p - 0.95).abs() < 1e-4);
        assert!((k.expr5 - (-1.612)).abs() < 1e-3, "{}", k.expr5);
        assert!(k.expr6.abs() < 2e-3, "{}", k.expr6);
        assert!(k.cond4 && k.cond5);
    }

    #[test]
    fn small_cell_fails_first_condition() {
        let k = check_conditions(1.0, 3.0, 0.5);
        assert!(k.p < 5.0 / 6.0);
        assert!(!k.cond4);
    }

    #[test]
    fn tiny_omega_passes_third_condition() {
        let k = check_conditions(1.7308, 3.0, 1e-9);
        assert!(k.cond5 && k.cond6);
        assert!(k.expr6 < 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn transpose_swaps_orientation(rows in 1u32..9, cols in 1u32..9, seed in any::<u64>(), p in 0.3f64..1.0) {
            let g = random_grid(rows, cols, p, seed);
            let lr = max_disjoint_lr(&g);
            assert_valid(&g, &lr);
            // TB count on the transposed grid equals the LR count here.
            let t = g.transpose();
            let via_t = max_disjoint_lr(&t.transpose());
            prop_assert_eq!(lr.len(), via_t.len());
            prop_assert!(lr.len() <= rows as usize);
        }

        #[test]
        fn expr6_monotone_in_omega(w1 in 0.01f64..2.0, w2 in 0.01f64..2.0) {
            let (a, b) = (check_conditions(1.7308, 3.0, w1), check_conditions(1.7308, 3.0, w2));
            prop_assert_eq!(w1 < w2, a.expr6 < b.expr6);
        }
    }
}
