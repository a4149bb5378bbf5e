//! Region graphs: regions of vertices and interactions joined by
//! parent-to-child containment edges, with counting numbers and the
//! interior / ancestor / boundary sets used by the message equations.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::factor_graph::FactorGraph;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub id: usize,
    /// Sorted vertex ids.
    pub vertices: Vec<usize>,
    /// Sorted interaction ids.
    pub interactions: Vec<usize>,
    pub counting_number: i64,
}

/// Directed edge `parent -> child`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub parent: usize,
    pub child: usize,
}

#[derive(Debug, Clone)]
pub struct RegionGraph {
    regions: Vec<Region>,
    edges: Vec<Edge>,
    parent_edges: Vec<Vec<usize>>,
    child_edges: Vec<Vec<usize>>,
    topo_order: Vec<usize>,
    depth: Vec<usize>,
    interior: Vec<Vec<usize>>,
    ancestors: Vec<Vec<usize>>,
    boundary: Vec<Vec<usize>>,
    vertex_regions: Vec<Vec<usize>>,
    interaction_regions: Vec<Vec<usize>>,
}

fn sorted_contains(set: &[usize], x: usize) -> bool {
    set.binary_search(&x).is_ok()
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|&x| sorted_contains(big, x))
}

fn disjoint(a: &[usize], b: &[usize]) -> bool {
    let (small, big) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    !small.iter().any(|&x| sorted_contains(big, x))
}

impl RegionGraph {
    /// Builds a region graph whose regions are given by vertex sets; each
    /// region receives every interaction whose members all lie inside it.
    pub fn new(fg: &FactorGraph, vertex_sets: Vec<Vec<usize>>, edges: &[(usize, usize)]) -> Result<Self> {
        let mut regions = Vec::with_capacity(vertex_sets.len());
        for mut vs in vertex_sets {
            vs.sort_unstable();
            vs.dedup();
            let interactions = interactions_inside(fg, &vs);
            regions.push((vs, interactions));
        }
        Self::from_parts(fg, regions, edges)
    }

    /// Builds a region graph with explicit `(vertices, interactions)` per region.
    pub fn from_parts(
        fg: &FactorGraph,
        parts: Vec<(Vec<usize>, Vec<usize>)>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = parts.len();
        let mut regions = Vec::with_capacity(n);
        let mut seen = HashSet::with_capacity(n);
        for (id, (mut vs, mut inter)) in parts.into_iter().enumerate() {
            vs.sort_unstable();
            vs.dedup();
            inter.sort_unstable();
            inter.dedup();
            if vs.is_empty() {
                return Err(Error::Structure(format!("region {id} has no vertices")));
            }
            if let Some(&v) = vs.iter().find(|&&v| v >= fg.num_vertices()) {
                return Err(Error::Structure(format!("region {id} references unknown vertex {v}")));
            }
            for &a in &inter {
                if a >= fg.num_interactions() {
                    return Err(Error::Structure(format!(
                        "region {id} references unknown interaction {a}"
                    )));
                }
                if !is_subset_unsorted(&fg.interaction(a).members, &vs) {
                    return Err(Error::Structure(format!(
                        "region {id} holds interaction {a} without all of its vertices"
                    )));
                }
            }
            if !seen.insert(vs.clone()) {
                return Err(Error::Structure(format!(
                    "region {id} duplicates the vertex set of another region"
                )));
            }
            regions.push(Region {
                id,
                vertices: vs,
                interactions: inter,
                counting_number: 0,
            });
        }

        let mut edge_list = Vec::with_capacity(edges.len());
        let mut parent_edges = vec![Vec::new(); n];
        let mut child_edges = vec![Vec::new(); n];
        let mut edge_set = HashSet::with_capacity(edges.len());
        for &(p, c) in edges {
            if p >= n || c >= n {
                return Err(Error::Structure(format!(
                    "edge {p} -> {c} references an unknown region"
                )));
            }
            if p == c {
                return Err(Error::Structure(format!("self-loop on region {p}")));
            }
            if !edge_set.insert((p, c)) {
                return Err(Error::Structure(format!("duplicate edge {p} -> {c}")));
            }
            if !is_subset(&regions[c].vertices, &regions[p].vertices)
                || !is_subset(&regions[c].interactions, &regions[p].interactions)
            {
                return Err(Error::Structure(format!(
                    "edge {p} -> {c}: child is not contained in parent"
                )));
            }
            let id = edge_list.len();
            edge_list.push(Edge { parent: p, child: c });
            child_edges[p].push(id);
            parent_edges[c].push(id);
        }

        let topo_order = topological_order(n, &edge_list, &parent_edges, &child_edges)?;
        let mut depth = vec![0usize; n];
        for &r in &topo_order {
            for &e in &child_edges[r] {
                let c = edge_list[e].child;
                depth[c] = depth[c].max(depth[r] + 1);
            }
        }

        let interior = (0..n)
            .map(|r| reach(r, |x| child_edges[x].iter().map(|&e| edge_list[e].child), true))
            .collect::<Vec<_>>();
        let ancestors = (0..n)
            .map(|r| reach(r, |x| parent_edges[x].iter().map(|&e| edge_list[e].parent), false))
            .collect::<Vec<_>>();
        let boundary = (0..n)
            .map(|r| {
                let inside = &interior[r];
                let mut b: Vec<usize> = inside
                    .iter()
                    .flat_map(|&g| parent_edges[g].iter().map(|&e| edge_list[e].parent))
                    .filter(|p| !sorted_contains(inside, *p))
                    .collect();
                b.sort_unstable();
                b.dedup();
                b
            })
            .collect::<Vec<_>>();

        let mut vertex_regions = vec![Vec::new(); fg.num_vertices()];
        let mut interaction_regions = vec![Vec::new(); fg.num_interactions()];
        for r in &regions {
            for &v in &r.vertices {
                vertex_regions[v].push(r.id);
            }
            for &a in &r.interactions {
                interaction_regions[a].push(r.id);
            }
        }

        let mut rg = Self {
            regions,
            edges: edge_list,
            parent_edges,
            child_edges,
            topo_order,
            depth,
            interior,
            ancestors,
            boundary,
            vertex_regions,
            interaction_regions,
        };
        let counts = rg.counting_numbers_with_order(&rg.topo_order.clone())?;
        for (r, c) in rg.regions.iter_mut().zip(counts) {
            r.counting_number = c;
        }
        Ok(rg)
    }

    /// Counting numbers `c = 1 - sum of ancestor counting numbers`, evaluated
    /// in the supplied order, which must list every ancestor before its descendants.
    pub fn counting_numbers_with_order(&self, order: &[usize]) -> Result<Vec<i64>> {
        let n = self.regions.len();
        if order.len() != n {
            return Err(Error::Structure("order does not list every region".into()));
        }
        let mut done = vec![false; n];
        let mut c = vec![0i64; n];
        for &r in order {
            if r >= n || done[r] {
                return Err(Error::Structure(format!("order repeats or misses region {r}")));
            }
            let mut sum = 0i64;
            for &a in &self.ancestors[r] {
                if !done[a] {
                    return Err(Error::Structure(format!("order is not topological at region {r}")));
                }
                sum += c[a];
            }
            c[r] = 1 - sum;
            done[r] = true;
        }
        Ok(c)
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, r: usize) -> &Region {
        &self.regions[r]
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> Edge {
        self.edges[e]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn find_edge(&self, parent: usize, child: usize) -> Option<usize> {
        self.child_edges[parent]
            .iter()
            .copied()
            .find(|&e| self.edges[e].child == child)
    }

    /// Edge ids entering region `r`.
    pub fn parent_edges(&self, r: usize) -> &[usize] {
        &self.parent_edges[r]
    }

    /// Edge ids leaving region `r`.
    pub fn child_edges(&self, r: usize) -> &[usize] {
        &self.child_edges[r]
    }

    pub fn counting_number(&self, r: usize) -> i64 {
        self.regions[r].counting_number
    }

    /// Parents-before-children ordering of all regions.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo_order
    }

    /// Length of the longest directed path from a root to `r`.
    pub fn depth(&self, r: usize) -> usize {
        self.depth[r]
    }

    /// `I_r`: the region and all of its descendants (sorted).
    pub fn interior(&self, r: usize) -> &[usize] {
        &self.interior[r]
    }

    /// `A_r`: strict ancestors (sorted).
    pub fn ancestors(&self, r: usize) -> &[usize] {
        &self.ancestors[r]
    }

    /// `B_r`: regions outside `I_r` that parent some region of `I_r` (sorted).
    pub fn boundary(&self, r: usize) -> &[usize] {
        &self.boundary[r]
    }

    pub fn interior_ancestor_boundary(&self, r: usize) -> Result<(&[usize], &[usize], &[usize])> {
        if r >= self.regions.len() {
            return Err(Error::Structure(format!("unknown region {r}")));
        }
        Ok((&self.interior[r], &self.ancestors[r], &self.boundary[r]))
    }

    pub fn in_interior(&self, alpha: usize, r: usize) -> bool {
        sorted_contains(&self.interior[alpha], r)
    }

    pub fn in_boundary(&self, alpha: usize, r: usize) -> bool {
        sorted_contains(&self.boundary[alpha], r)
    }

    /// Regions containing vertex `i` (the vertex set of `R_i`).
    pub fn vertex_regions(&self, i: usize) -> &[usize] {
        &self.vertex_regions[i]
    }

    /// Regions containing interaction `a` (the vertex set of `R_a`).
    pub fn interaction_regions(&self, a: usize) -> &[usize] {
        &self.interaction_regions[a]
    }

    /// Messages `mu -> nu` with `mu` in `B_alpha` and `nu` in `I_alpha`; with
    /// `simplified`, only those whose sender has no ancestor in `B_alpha`.
    pub fn incoming_edges(&self, alpha: usize, simplified: bool) -> Vec<usize> {
        let mut out = Vec::new();
        for &mu in &self.boundary[alpha] {
            if simplified && !disjoint(&self.ancestors[mu], &self.boundary[alpha]) {
                continue;
            }
            for &e in &self.child_edges[mu] {
                if self.in_interior(alpha, self.edges[e].child) {
                    out.push(e);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Regions `alpha` whose weight contains the message on edge `e`, evaluated
    /// straight from the set definitions.
    pub fn receivers_by_definition(&self, e: usize, simplified: bool) -> Vec<usize> {
        let Edge { parent: mu, child: nu } = self.edges[e];
        (0..self.regions.len())
            .filter(|&alpha| {
                self.in_boundary(alpha, mu)
                    && self.in_interior(alpha, nu)
                    && (!simplified || disjoint(&self.ancestors[mu], &self.boundary[alpha]))
            })
            .collect()
    }

    /// Receiving sets for every edge at once (inverse of [`Self::incoming_edges`]).
    pub fn all_receivers(&self, simplified: bool) -> Vec<Vec<usize>> {
        let mut recv = vec![Vec::new(); self.edges.len()];
        for alpha in 0..self.regions.len() {
            for e in self.incoming_edges(alpha, simplified) {
                recv[e].push(alpha);
            }
        }
        recv
    }

    /// Regions whose vertex set contains all of `vertices`.
    pub fn regions_containing(&self, vertices: &[usize]) -> Vec<usize> {
        let Some(&first) = vertices.iter().min_by_key(|&&v| self.vertex_regions[v].len()) else {
            return (0..self.regions.len()).collect();
        };
        self.vertex_regions[first]
            .iter()
            .copied()
            .filter(|&r| is_subset_unsorted(vertices, &self.regions[r].vertices))
            .collect()
    }

    /// Edges whose endpoints both lie in the (sorted) region set.
    pub fn induced_edges(&self, members: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for &r in members {
            for &e in &self.child_edges[r] {
                if sorted_contains(members, self.edges[e].child) {
                    out.push(e);
                }
            }
        }
        out
    }

    /// Checks the counting-number sums and connectivity of every `R_i` and `R_a`.
    pub fn validate(&self, fg: &FactorGraph) -> ValidationReport {
        let check = |members: &[usize]| {
            let sum = members.iter().map(|&r| self.regions[r].counting_number).sum();
            let connected = !members.is_empty() && self.undirected_components(members, None) == 1;
            (sum, connected)
        };
        let vertices = (0..fg.num_vertices())
            .map(|i| {
                let (sum, connected) = check(&self.vertex_regions[i]);
                MembershipCheck {
                    id: i,
                    regions: self.vertex_regions[i].len(),
                    sum,
                    connected,
                }
            })
            .collect::<Vec<_>>();
        let interactions = (0..fg.num_interactions())
            .map(|a| {
                let (sum, connected) = check(&self.interaction_regions[a]);
                MembershipCheck {
                    id: a,
                    regions: self.interaction_regions[a].len(),
                    sum,
                    connected,
                }
            })
            .collect::<Vec<_>>();
        let pass = vertices.iter().chain(&interactions).all(MembershipCheck::ok);
        ValidationReport {
            vertices,
            interactions,
            pass,
        }
    }

    /// Number of undirected connected components of the subgraph induced by
    /// `members` (sorted), optionally using only edges accepted by `active`.
    pub fn undirected_components(&self, members: &[usize], active: Option<&[bool]>) -> usize {
        let mut seen = HashSet::with_capacity(members.len());
        let mut components = 0;
        for &start in members {
            if !seen.insert(start) {
                continue;
            }
            components += 1;
            let mut queue = VecDeque::from([start]);
            while let Some(r) = queue.pop_front() {
                for (e, other) in self.neighbours(r) {
                    if active.is_some_and(|a| !a[e]) || !sorted_contains(members, other) {
                        continue;
                    }
                    if seen.insert(other) {
                        queue.push_back(other);
                    }
                }
            }
        }
        components
    }

    /// True when `from` and `to` are joined by a path of accepted edges inside `members`.
    pub fn connected_within(&self, members: &[usize], active: &[bool], from: usize, to: usize) -> bool {
        let mut seen = HashSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(r) = queue.pop_front() {
            if r == to {
                return true;
            }
            for (e, other) in self.neighbours(r) {
                if active[e] && sorted_contains(members, other) && seen.insert(other) {
                    queue.push_back(other);
                }
            }
        }
        false
    }

    fn neighbours(&self, r: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.child_edges[r]
            .iter()
            .map(move |&e| (e, self.edges[e].child))
            .chain(self.parent_edges[r].iter().map(move |&e| (e, self.edges[e].parent)))
    }

    /// Evaluates both counting-number edge identities on every edge.
    ///
    /// The unrestricted sum must vanish on every edge; a nonzero value means the
    /// region graph cannot support the message expansion and is reported as an error.
    pub fn check_edge_identities(&self) -> Result<EdgeIdentityReport> {
        let full = self.all_receivers(false);
        let simple = self.all_receivers(true);
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in 0..self.edges.len() {
            let gbp_sum: i64 = full[e].iter().map(|&a| self.regions[a].counting_number).sum();
            if gbp_sum != 0 {
                let Edge { parent, child } = self.edges[e];
                return Err(Error::Structure(format!(
                    "counting numbers of the receivers of edge {e} ({parent} -> {child}) sum to {gbp_sum}, not 0"
                )));
            }
            let sgbp_sum: i64 = simple[e].iter().map(|&a| self.regions[a].counting_number).sum();
            edges.push(EdgeClassification {
                edge: e,
                gbp_sum,
                sgbp_sum,
                ideal: sgbp_sum == 0,
                redundant_witness: self.edge_witness(e),
            });
        }
        let ideal = edges.iter().all(|c| c.ideal);
        Ok(EdgeIdentityReport { edges, ideal })
    }

    /// Two distinct directed paths from the parent of `e` to a common region,
    /// the first starting with `e`.
    fn edge_witness(&self, e: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        let Edge { parent: mu, child: nu } = self.edges[e];
        for &other in &self.child_edges[mu] {
            if other == e {
                continue;
            }
            let side = self.edges[other].child;
            for &target in &self.interior[side] {
                if self.in_interior(nu, target) {
                    let mut p1 = vec![mu];
                    p1.extend(self.directed_path(nu, target)?);
                    let mut p2 = vec![mu];
                    p2.extend(self.directed_path(side, target)?);
                    return Some((p1, p2));
                }
            }
        }
        None
    }

    /// A directed path `from -> ... -> to` (inclusive), if one exists.
    pub fn directed_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut prev = std::collections::HashMap::from([(from, usize::MAX)]);
        let mut queue = VecDeque::from([from]);
        while let Some(r) = queue.pop_front() {
            if r == to {
                let mut path = vec![to];
                let mut cur = to;
                while prev[&cur] != usize::MAX {
                    cur = prev[&cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            for &e in &self.child_edges[r] {
                let c = self.edges[e].child;
                if let std::collections::hash_map::Entry::Vacant(v) = prev.entry(c) {
                    v.insert(r);
                    queue.push_back(c);
                }
            }
        }
        None
    }

    /// Non-redundant iff every vertex-induced subgraph is an undirected tree.
    pub fn redundancy_class(&self) -> RedundancyClass {
        for (i, members) in self.vertex_regions.iter().enumerate() {
            let edges = self.induced_edges(members);
            if edges.len() + 1 == members.len() && self.undirected_components(members, None) == 1 {
                continue;
            }
            let witness = self
                .two_paths_within(members)
                .map(|(a, b)| Witness::Paths(a, b))
                .unwrap_or_else(|| Witness::Cycle(self.undirected_cycle(members).unwrap_or_default()));
            return RedundancyClass::Redundant { vertex: i, witness };
        }
        RedundancyClass::NonRedundant
    }

    fn two_paths_within(&self, members: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        for &source in members {
            let mut prev = std::collections::HashMap::from([(source, usize::MAX)]);
            let mut queue = VecDeque::from([source]);
            while let Some(r) = queue.pop_front() {
                for &e in &self.child_edges[r] {
                    let c = self.edges[e].child;
                    if !sorted_contains(members, c) {
                        continue;
                    }
                    match prev.get(&c) {
                        None => {
                            prev.insert(c, r);
                            queue.push_back(c);
                        }
                        Some(&p) if p != r => {
                            let unwind = |mut cur: usize| {
                                let mut path = vec![cur];
                                while prev[&cur] != usize::MAX {
                                    cur = prev[&cur];
                                    path.push(cur);
                                }
                                path.reverse();
                                path
                            };
                            let first = unwind(c);
                            let mut second = unwind(r);
                            second.push(c);
                            return Some((first, second));
                        }
                        _ => {}
                    }
                }
            }
        }
        None
    }

    fn undirected_cycle(&self, members: &[usize]) -> Option<Vec<usize>> {
        let mut parent = std::collections::HashMap::new();
        for &root in members {
            if parent.contains_key(&root) {
                continue;
            }
            parent.insert(root, (usize::MAX, usize::MAX));
            let mut stack = vec![root];
            while let Some(r) = stack.pop() {
                let via = parent[&r].1;
                for (e, other) in self.neighbours(r) {
                    if e == via || !sorted_contains(members, other) {
                        continue;
                    }
                    if parent.contains_key(&other) {
                        let mut a = vec![r];
                        let mut cur = r;
                        while parent[&cur].0 != usize::MAX {
                            cur = parent[&cur].0;
                            a.push(cur);
                        }
                        let mut b = vec![other];
                        let mut cur = other;
                        while parent[&cur].0 != usize::MAX {
                            cur = parent[&cur].0;
                            b.push(cur);
                        }
                        while a.len() > 1 && b.len() > 1 && a[a.len() - 2] == b[b.len() - 2] {
                            a.pop();
                            b.pop();
                        }
                        b.pop();
                        b.reverse();
                        a.extend(b);
                        return Some(a);
                    }
                    parent.insert(other, (r, e));
                    stack.push(other);
                }
            }
        }
        None
    }

    /// Text dump: `R id c v:<ids> a:<ids>` per region and `E parent child` per edge.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        for r in &self.regions {
            let _ = writeln!(
                out,
                "R {} {} v:{} a:{}",
                r.id,
                r.counting_number,
                join(&r.vertices),
                join(&r.interactions)
            );
        }
        for e in &self.edges {
            let _ = writeln!(out, "E {} {}", e.parent, e.child);
        }
        out
    }

    /// Rebuilds a region graph from [`Self::dump`] output, checking the stored counting numbers.
    pub fn parse_dump(fg: &FactorGraph, text: &str) -> Result<Self> {
        let mut parts = Vec::new();
        let mut counts = Vec::new();
        let mut edges = Vec::new();
        let ids = |s: &str, prefix: &str, line: usize| -> Result<Vec<usize>> {
            let body = s.strip_prefix(prefix).ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `{prefix}` field"),
            })?;
            if body.is_empty() {
                return Ok(Vec::new());
            }
            body.split(',')
                .map(|t| {
                    t.parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad id `{t}`"),
                    })
                })
                .collect()
        };
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            let bad = |m: &str| Error::Parse {
                line,
                message: m.to_string(),
            };
            match toks.as_slice() {
                [] => continue,
                ["R", id, c, v, a] => {
                    let id: usize = id.parse().map_err(|_| bad("bad region id"))?;
                    if id != parts.len() {
                        return Err(bad("region ids must be dense and in order"));
                    }
                    counts.push(c.parse::<i64>().map_err(|_| bad("bad counting number"))?);
                    parts.push((ids(v, "v:", line)?, ids(a, "a:", line)?));
                }
                ["E", p, c] => edges.push((
                    p.parse().map_err(|_| bad("bad parent id"))?,
                    c.parse().map_err(|_| bad("bad child id"))?,
                )),
                _ => return Err(bad("unrecognised record")),
            }
        }
        let rg = Self::from_parts(fg, parts, &edges)?;
        for (r, c) in rg.regions.iter().zip(counts) {
            if r.counting_number != c {
                return Err(Error::Structure(format!(
                    "region {}: stored counting number {c} differs from recomputed {}",
                    r.id, r.counting_number
                )));
            }
        }
        Ok(rg)
    }

    /// A copy with region `r` (and its edges) removed; later ids shift down by one.
    pub fn without_region(&self, fg: &FactorGraph, r: usize) -> Result<Self> {
        let parts = self
            .regions
            .iter()
            .filter(|x| x.id != r)
            .map(|x| (x.vertices.clone(), x.interactions.clone()))
            .collect();
        let remap = |x: usize| if x > r { x - 1 } else { x };
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|e| e.parent != r && e.child != r)
            .map(|e| (remap(e.parent), remap(e.child)))
            .collect();
        Self::from_parts(fg, parts, &edges)
    }
}

fn is_subset_unsorted(small: &[usize], sorted_big: &[usize]) -> bool {
    small.iter().all(|&x| sorted_contains(sorted_big, x))
}

/// Interactions whose members all lie in the sorted vertex set.
pub fn interactions_inside(fg: &FactorGraph, sorted_vertices: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = sorted_vertices
        .iter()
        .flat_map(|&v| fg.interactions_of(v).iter().copied())
        .filter(|&a| is_subset_unsorted(&fg.interaction(a).members, sorted_vertices))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn topological_order(
    n: usize,
    edges: &[Edge],
    parent_edges: &[Vec<usize>],
    child_edges: &[Vec<usize>],
) -> Result<Vec<usize>> {
    let mut indeg: Vec<usize> = parent_edges.iter().map(Vec::len).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&r| indeg[r] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(r) = queue.pop_front() {
        order.push(r);
        for &e in &child_edges[r] {
            let c = edges[e].child;
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Structure("region graph contains a directed cycle".into()));
    }
    Ok(order)
}

/// Sorted set of regions reachable from `start`, optionally including it.
fn reach<I, F>(start: usize, next: F, include_start: bool) -> Vec<usize>
where
    F: Fn(usize) -> I,
    I: Iterator<Item = usize>,
{
    let mut seen = HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(r) = stack.pop() {
        for x in next(r) {
            if seen.insert(x) {
                stack.push(x);
            }
        }
    }
    if !include_start {
        seen.remove(&start);
    }
    let mut out: Vec<usize> = seen.into_iter().collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipCheck {
    pub id: usize,
    pub regions: usize,
    pub sum: i64,
    pub connected: bool,
}

impl MembershipCheck {
    pub fn ok(&self) -> bool {
        self.sum == 1 && self.connected
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub vertices: Vec<MembershipCheck>,
    pub interactions: Vec<MembershipCheck>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn failing_vertices(&self) -> Vec<usize> {
        self.vertices.iter().filter(|c| !c.ok()).map(|c| c.id).collect()
    }

    pub fn failing_interactions(&self) -> Vec<usize> {
        self.interactions.iter().filter(|c| !c.ok()).map(|c| c.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeClassification {
    pub edge: usize,
    /// Counting-number sum over all receivers of the message.
    pub gbp_sum: i64,
    /// Same sum restricted to receivers with no ancestor of the sender on their boundary.
    pub sgbp_sum: i64,
    pub ideal: bool,
    /// Paths `parent -> child -> ...` and `parent -> other child -> ...` meeting at a common region.
    pub redundant_witness: Option<(Vec<usize>, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct EdgeIdentityReport {
    pub edges: Vec<EdgeClassification>,
    pub ideal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Witness {
    /// Two distinct directed paths with common endpoints.
    Paths(Vec<usize>, Vec<usize>),
    /// An undirected cycle of regions.
    Cycle(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RedundancyClass {
    NonRedundant,
    Redundant { vertex: usize, witness: Witness },
}

impl RedundancyClass {
    pub fn is_redundant(&self) -> bool {
        matches!(self, Self::Redundant { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> FactorGraph {
        let couplings: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        FactorGraph::spin_model(&vec![0.0; n], &couplings).unwrap()
    }

    #[test]
    fn isolated_region_sets() {
        let fg = chain(2);
        let rg = RegionGraph::new(&fg, vec![vec![0, 1]], &[]).unwrap();
        let (i, a, b) = rg.interior_ancestor_boundary(0).unwrap();
        assert_eq!(i, &[0]);
        assert!(a.is_empty() && b.is_empty());
        assert_eq!(rg.counting_number(0), 1);
        assert!(rg.interior_ancestor_boundary(3).is_err());
    }

    #[test]
    fn cycle_is_rejected() {
        let fg = chain(3);
        // equal vertex sets cannot coexist, so a containment cycle needs them; both errors are structural
        let err = RegionGraph::new(&fg, vec![vec![0, 1], vec![0, 1]], &[(0, 1), (1, 0)]).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
        let err = RegionGraph::new(&fg, vec![vec![0, 1], vec![1]], &[(1, 0)]).unwrap_err();
        assert!(matches!(err, Error::Structure(_)));
    }

    #[test]
    fn bethe_chain_is_non_redundant_and_ideal() {
        let fg = chain(4);
        let sets = vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![0], vec![1], vec![2], vec![3]];
        let edges = [(0, 3), (0, 4), (1, 4), (1, 5), (2, 5), (2, 6)];
        let rg = RegionGraph::new(&fg, sets, &edges).unwrap();
        let counts: Vec<i64> = rg.regions().iter().map(|r| r.counting_number).collect();
        assert_eq!(counts, vec![1, 1, 1, 0, -1, -1, 0]);
        assert!(rg.validate(&fg).pass);
        assert_eq!(rg.redundancy_class(), RedundancyClass::NonRedundant);
        let report = rg.check_edge_identities().unwrap();
        assert!(report.ideal);
        for c in &report.edges {
            assert_eq!(c.gbp_sum, c.sgbp_sum);
        }
        for e in 0..rg.num_edges() {
            assert_eq!(
                rg.receivers_by_definition(e, false),
                rg.receivers_by_definition(e, true)
            );
        }
    }

    #[test]
    fn missing_region_fails_validation() {
        let fg = chain(3);
        let sets = vec![vec![0, 1], vec![0], vec![1]];
        let rg = RegionGraph::new(&fg, sets, &[(0, 1), (0, 2)]).unwrap();
        let report = rg.validate(&fg);
        assert!(!report.pass);
        assert_eq!(report.failing_vertices(), vec![2]);
        assert_eq!(report.failing_interactions(), vec![1]);
    }

    #[test]
    fn dump_round_trips() {
        let fg = chain(3);
        let rg = RegionGraph::new(&fg, vec![vec![0, 1], vec![1, 2], vec![1]], &[(0, 2), (1, 2)]).unwrap();
        let text = rg.dump();
        assert!(text.starts_with("R 0 1 v:0,1 a:0\n"));
        let back = RegionGraph::parse_dump(&fg, &text).unwrap();
        assert_eq!(back.dump(), text);
        let tampered = text.replace("R 2 -1", "R 2 0");
        assert!(RegionGraph::parse_dump(&fg, &tampered).is_err());
    }

    #[test]
    fn containment_and_interaction_checks() {
        let fg = chain(3);
        assert!(RegionGraph::new(&fg, vec![vec![0, 1], vec![2]], &[(0, 1)]).is_err());
        assert!(RegionGraph::from_parts(&fg, vec![(vec![0], vec![0])], &[]).is_err());
        assert!(RegionGraph::new(&fg, vec![vec![]], &[]).is_err());
    }
}
