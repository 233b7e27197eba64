//! Morphology graphs and the layered feudal hierarchy built on top of them.
//!
//! Level 0 of a [`Hierarchy`] is always the worker graph (one node per limb).
//! Every level above it is obtained by pooling the level below into clusters,
//! and the top level holds a single manager node. Nodes are addressed by a
//! global id: workers keep their limb index, upper levels follow in order.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("graph is disconnected: node {0} is unreachable from node 0")]
    DisconnectedGraph(usize),
    #[error("no node is actuated")]
    NoActuator,
    #[error("actuated flags cover {got} nodes, expected {expected}")]
    ActuatedLength { expected: usize, got: usize },
    #[error("cluster {cluster} at level {level} is empty")]
    EmptyCluster { level: usize, cluster: usize },
    #[error("node {node} at level {level} belongs to no cluster")]
    UncoveredNode { level: usize, node: usize },
    #[error("pooled edge ({0}, {1}) at level {2} is invalid")]
    InvalidPooledEdge(usize, usize, usize),
    #[error("failed to read morphology: {0}")]
    Io(String),
    #[error("malformed morphology file: {0}")]
    Parse(String),
}

/// An undirected, attribute-free graph over one hierarchy level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl LevelGraph {
    fn new(node_count: usize, raw_edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for &(a, b) in raw_edges {
            for idx in [a, b] {
                if idx >= node_count {
                    return Err(GraphError::IndexOutOfRange {
                        index: idx,
                        len: node_count,
                    });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); node_count];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges,
            neighbors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edges with `a < b`, sorted, each stored once.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    fn is_connected(&self) -> Result<(), GraphError> {
        let dist = bfs(self, 0);
        match dist.iter().position(Option::is_none) {
            Some(unreached) => Err(GraphError::DisconnectedGraph(unreached)),
            None => Ok(()),
        }
    }
}

fn bfs(g: &LevelGraph, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.node_count];
    let mut queue = VecDeque::from([source]);
    dist[source] = Some(0);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap_or(0);
        for &v in &g.neighbors[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Worker-level limb graph: connected, undirected, with a torso node and
/// per-node actuator flags. Nodes without an actuator are auxiliary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MorphGraph {
    graph: LevelGraph,
    actuated: Vec<bool>,
    torso: usize,
}

impl MorphGraph {
    pub fn new(
        node_count: usize,
        edges: &[(usize, usize)],
        actuated: &[bool],
        torso: usize,
    ) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        if torso >= node_count {
            return Err(GraphError::IndexOutOfRange {
                index: torso,
                len: node_count,
            });
        }
        if actuated.len() != node_count {
            return Err(GraphError::ActuatedLength {
                expected: node_count,
                got: actuated.len(),
            });
        }
        let graph = LevelGraph::new(node_count, edges)?;
        graph.is_connected()?;
        if !actuated.iter().any(|&a| a) {
            return Err(GraphError::NoActuator);
        }
        Ok(Self {
            graph,
            actuated: actuated.to_vec(),
            torso,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        self.graph.edges()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        self.graph.neighbors(node)
    }

    pub fn is_actuated(&self, node: usize) -> bool {
        self.actuated[node]
    }

    pub fn actuated(&self) -> &[bool] {
        &self.actuated
    }

    pub fn actuator_count(&self) -> usize {
        self.actuated.iter().filter(|&&a| a).count()
    }

    pub fn torso(&self) -> usize {
        self.torso
    }

    pub fn level_graph(&self) -> &LevelGraph {
        &self.graph
    }

    /// Same nodes, flags and torso with every edge removed. The result is
    /// disconnected for more than one node; it exists to run a policy with
    /// neighbour message passing switched off.
    pub fn edgeless(&self) -> MorphGraph {
        let graph = LevelGraph::new(self.node_count(), &[]).expect("no edges to validate");
        Self {
            graph,
            actuated: self.actuated.clone(),
            torso: self.torso,
        }
    }

    /// Breadth-first hop count from `node` to the torso.
    pub fn hop_distance_to_torso(&self, node: usize) -> Result<usize, GraphError> {
        if node >= self.node_count() {
            return Err(GraphError::IndexOutOfRange {
                index: node,
                len: self.node_count(),
            });
        }
        Ok(self.hop_distances()[node])
    }

    /// Hop distance of every node to the torso.
    pub fn hop_distances(&self) -> Vec<usize> {
        // connected by construction
        bfs(&self.graph, self.torso)
            .into_iter()
            .map(|d| d.unwrap_or(usize::MAX))
            .collect()
    }
}

/// One pooling step: clusters over the nodes of the level below plus the
/// intra-level edges of the resulting pooled graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub clusters: Vec<Vec<usize>>,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
}

impl ClusterSpec {
    pub fn new(clusters: Vec<Vec<usize>>, edges: Vec<(usize, usize)>) -> Self {
        Self { clusters, edges }
    }
}

/// The layered feudal graph: per-level graphs plus parent/child relations
/// linking each level to the one directly above.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    base: MorphGraph,
    levels: Vec<LevelGraph>,
    offsets: Vec<usize>,
    level_of: Vec<usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

impl Hierarchy {
    /// Pools `base` bottom-up through `specs`. A manager level holding every
    /// node of the current top is appended whenever the last spec leaves more
    /// than one node (always, when `specs` is empty).
    pub fn build(base: MorphGraph, specs: &[ClusterSpec]) -> Result<Self, GraphError> {
        let mut levels = vec![base.graph.clone()];
        // child-local -> parent-local memberships, one table per pooling step
        let mut memberships: Vec<Vec<Vec<usize>>> = Vec::new();

        for (step, spec) in specs.iter().enumerate() {
            let below = levels.last().map_or(0, LevelGraph::node_count);
            let level = step + 1;
            let mut clusters = Vec::with_capacity(spec.clusters.len());
            let mut covered = vec![false; below];
            for (ci, cluster) in spec.clusters.iter().enumerate() {
                if cluster.is_empty() {
                    return Err(GraphError::EmptyCluster { level, cluster: ci });
                }
                let mut members: Vec<usize> = cluster.clone();
                members.sort_unstable();
                members.dedup();
                for &m in &members {
                    if m >= below {
                        return Err(GraphError::IndexOutOfRange {
                            index: m,
                            len: below,
                        });
                    }
                    covered[m] = true;
                }
                clusters.push(members);
            }
            if let Some(node) = covered.iter().position(|c| !c) {
                return Err(GraphError::UncoveredNode {
                    level: level - 1,
                    node,
                });
            }
            let pooled = LevelGraph::new(clusters.len(), &spec.edges).map_err(|e| match e {
                GraphError::IndexOutOfRange { .. } | GraphError::SelfLoop(_) => {
                    let (a, b) = spec
                        .edges
                        .iter()
                        .copied()
                        .find(|&(a, b)| a == b || a >= clusters.len() || b >= clusters.len())
                        .unwrap_or((0, 0));
                    GraphError::InvalidPooledEdge(a, b, level)
                }
                other => other,
            })?;
            levels.push(pooled);
            memberships.push(clusters);
        }

        if levels.last().map_or(0, LevelGraph::node_count) > 1 || specs.is_empty() {
            let below = levels.last().map_or(0, LevelGraph::node_count);
            levels.push(LevelGraph::new(1, &[])?);
            memberships.push(vec![(0..below).collect()]);
        }

        let mut offsets = Vec::with_capacity(levels.len());
        let mut total = 0;
        for g in &levels {
            offsets.push(total);
            total += g.node_count();
        }
        let mut level_of = vec![0; total];
        for (l, g) in levels.iter().enumerate() {
            for i in 0..g.node_count() {
                level_of[offsets[l] + i] = l;
            }
        }
        let mut parents = vec![Vec::new(); total];
        let mut children = vec![Vec::new(); total];
        for (step, clusters) in memberships.iter().enumerate() {
            let child_level = step;
            let parent_level = step + 1;
            for (ci, members) in clusters.iter().enumerate() {
                let p = offsets[parent_level] + ci;
                for &m in members {
                    let c = offsets[child_level] + m;
                    children[p].push(c);
                    parents[c].push(p);
                }
            }
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
        }

        Ok(Self {
            base,
            levels,
            offsets,
            level_of,
            parents,
            children,
        })
    }

    /// A single manager directly above every worker.
    pub fn two_level(base: MorphGraph) -> Self {
        Self::build(base, &[]).expect("two-level hierarchy is always valid")
    }

    pub fn base(&self) -> &MorphGraph {
        &self.base
    }

    /// Number of levels, workers included.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, level: usize) -> &LevelGraph {
        &self.levels[level]
    }

    pub fn node_count(&self) -> usize {
        self.level_of.len()
    }

    pub fn worker_count(&self) -> usize {
        self.levels[0].node_count()
    }

    pub fn global_id(&self, level: usize, local: usize) -> usize {
        self.offsets[level] + local
    }

    pub fn local_id(&self, global: usize) -> usize {
        global - self.offsets[self.level_of[global]]
    }

    pub fn level_of(&self, global: usize) -> usize {
        self.level_of[global]
    }

    pub fn manager(&self) -> usize {
        self.node_count() - 1
    }

    pub fn parents(&self, global: usize) -> &[usize] {
        &self.parents[global]
    }

    pub fn children(&self, global: usize) -> &[usize] {
        &self.children[global]
    }

    /// Same-level neighbours of a node, as global ids.
    pub fn neighbors(&self, global: usize) -> impl Iterator<Item = usize> + '_ {
        let level = self.level_of[global];
        let off = self.offsets[level];
        self.levels[level]
            .neighbors(global - off)
            .iter()
            .map(move |&n| n + off)
    }

    /// Global ids of every node on `level`.
    pub fn nodes_at(&self, level: usize) -> std::ops::Range<usize> {
        let start = self.offsets[level];
        start..start + self.levels[level].node_count()
    }

    /// Sorted worker ids reachable from `global` through child links.
    pub fn descendant_workers(&self, global: usize) -> Vec<usize> {
        let mut out = BTreeSet::new();
        let mut stack = vec![global];
        while let Some(n) = stack.pop() {
            if self.level_of[n] == 0 {
                out.insert(n);
            } else {
                stack.extend_from_slice(&self.children[n]);
            }
        }
        out.into_iter().collect()
    }
}

/// On-disk morphology description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphologyFile {
    pub nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub actuated: Vec<bool>,
    pub torso: usize,
    /// One entry per pooling step, each a list of clusters.
    #[serde(default)]
    pub clusters: Vec<Vec<Vec<usize>>>,
    /// Intra-level edges of each pooled graph, parallel to `clusters`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pooled_edges: Vec<Vec<[usize; 2]>>,
}

impl MorphologyFile {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path).map_err(|e| GraphError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn morph_graph(&self) -> Result<MorphGraph, GraphError> {
        let edges: Vec<_> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        MorphGraph::new(self.nodes, &edges, &self.actuated, self.torso)
    }

    pub fn cluster_specs(&self) -> Vec<ClusterSpec> {
        self.clusters
            .iter()
            .enumerate()
            .map(|(i, clusters)| {
                let edges = self
                    .pooled_edges
                    .get(i)
                    .map(|es| es.iter().map(|e| (e[0], e[1])).collect())
                    .unwrap_or_default();
                ClusterSpec::new(clusters.clone(), edges)
            })
            .collect()
    }

    pub fn hierarchy(&self) -> Result<Hierarchy, GraphError> {
        Hierarchy::build(self.morph_graph()?, &self.cluster_specs())
    }

    pub fn from_graph(graph: &MorphGraph) -> Self {
        Self {
            nodes: graph.node_count(),
            edges: graph.edges().iter().map(|&(a, b)| [a, b]).collect(),
            actuated: graph.actuated().to_vec(),
            torso: graph.torso(),
            clusters: Vec::new(),
            pooled_edges: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(k: usize) -> MorphGraph {
        let edges: Vec<_> = (1..k).map(|i| (i - 1, i)).collect();
        MorphGraph::new(k, &edges, &vec![true; k], 0).unwrap()
    }

    fn check_symmetry(h: &Hierarchy) {
        for i in 0..h.node_count() {
            for &p in h.parents(i) {
                assert!(h.children(p).contains(&i));
                assert_eq!(h.level_of(p), h.level_of(i) + 1);
            }
            for &c in h.children(i) {
                assert!(h.parents(c).contains(&i));
            }
            if h.level_of(i) < h.top_level() {
                assert!(!h.parents(i).is_empty());
            }
            if h.level_of(i) > 0 {
                assert!(!h.children(i).is_empty());
            }
        }
        assert_eq!(h.level(h.top_level()).node_count(), 1);
        assert!(h.parents(h.manager()).is_empty());
    }

    #[test]
    fn minimal_chain() {
        let g = MorphGraph::new(3, &[(0, 1), (1, 2)], &[false, true, true], 0).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.torso(), 0);
        assert_eq!(g.actuator_count(), 2);
        assert!(g.level_graph().has_edge(2, 1));
    }

    #[test]
    fn single_node() {
        let g = MorphGraph::new(1, &[], &[true], 0).unwrap();
        assert_eq!(g.node_count(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            MorphGraph::new(4, &[(0, 1), (2, 3)], &[true; 4], 0),
            Err(GraphError::DisconnectedGraph(2))
        );
        assert_eq!(
            MorphGraph::new(2, &[(0, 0), (0, 1)], &[true; 2], 0),
            Err(GraphError::SelfLoop(0))
        );
        assert!(matches!(
            MorphGraph::new(2, &[(0, 2)], &[true; 2], 0),
            Err(GraphError::IndexOutOfRange { index: 2, .. })
        ));
        assert!(matches!(
            MorphGraph::new(2, &[(0, 1)], &[true; 2], 5),
            Err(GraphError::IndexOutOfRange { index: 5, .. })
        ));
        assert_eq!(
            MorphGraph::new(2, &[(0, 1)], &[false; 2], 0),
            Err(GraphError::NoActuator)
        );
    }

    #[test]
    fn duplicate_edges_stored_once() {
        let g = MorphGraph::new(2, &[(0, 1), (1, 0)], &[true; 2], 0).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn two_level_chain() {
        let h = Hierarchy::two_level(chain(3));
        assert_eq!(h.depth(), 2);
        let m = h.manager();
        assert_eq!(h.children(m), &[0, 1, 2]);
        for i in 0..3 {
            assert_eq!(h.parents(i), &[m]);
        }
        check_symmetry(&h);
    }

    #[test]
    fn two_level_single_and_seven() {
        let h = Hierarchy::two_level(chain(1));
        assert_eq!(h.children(h.manager()), &[0]);
        let h = Hierarchy::two_level(chain(7));
        assert_eq!(h.children(h.manager()).len(), 7);
    }

    #[test]
    fn three_level_with_sub_managers() {
        let spec = ClusterSpec::new(vec![vec![0, 1], vec![2, 3, 4]], vec![(0, 1)]);
        let h = Hierarchy::build(chain(5), &[spec]).unwrap();
        assert_eq!(h.depth(), 3);
        let (sm0, sm1) = (h.global_id(1, 0), h.global_id(1, 1));
        assert_eq!(h.children(h.manager()), &[sm0, sm1]);
        assert_eq!(h.children(sm1), &[2, 3, 4]);
        assert_eq!(h.neighbors(sm0).collect::<Vec<_>>(), vec![sm1]);
        check_symmetry(&h);
    }

    #[test]
    fn overlapping_clusters_give_multiple_parents() {
        let spec = ClusterSpec::new(vec![vec![0, 1], vec![1, 2]], vec![]);
        let h = Hierarchy::build(chain(3), &[spec]).unwrap();
        assert_eq!(h.parents(1).len(), 2);
        assert_eq!(h.parents(0).len(), 1);
        check_symmetry(&h);
    }

    #[test]
    fn single_cluster_spec_is_the_manager() {
        let spec = ClusterSpec::new(vec![vec![0, 1, 2]], vec![]);
        let h = Hierarchy::build(chain(3), &[spec]).unwrap();
        assert_eq!(h.depth(), 2);
    }

    #[test]
    fn hierarchy_errors() {
        let empty = ClusterSpec::new(vec![vec![0, 1, 2], vec![]], vec![]);
        assert_eq!(
            Hierarchy::build(chain(3), &[empty]),
            Err(GraphError::EmptyCluster {
                level: 1,
                cluster: 1
            })
        );
        let uncovered = ClusterSpec::new(vec![vec![0, 1]], vec![]);
        assert_eq!(
            Hierarchy::build(chain(3), &[uncovered]),
            Err(GraphError::UncoveredNode { level: 0, node: 2 })
        );
        let bad_edge = ClusterSpec::new(vec![vec![0], vec![1, 2]], vec![(0, 4)]);
        assert_eq!(
            Hierarchy::build(chain(3), &[bad_edge]),
            Err(GraphError::InvalidPooledEdge(0, 4, 1))
        );
    }

    #[test]
    fn hop_distances() {
        let g = MorphGraph::new(3, &[(0, 1), (1, 2)], &[false, true, true], 0).unwrap();
        assert_eq!(g.hop_distance_to_torso(2), Ok(2));
        assert_eq!(g.hop_distance_to_torso(0), Ok(0));
        assert!(g.hop_distance_to_torso(3).is_err());
        let star = MorphGraph::new(5, &[(0, 1), (0, 2), (0, 3), (0, 4)], &[true; 5], 0).unwrap();
        for leaf in 1..5 {
            assert_eq!(star.hop_distance_to_torso(leaf), Ok(1));
        }
    }

    #[test]
    fn empty_specs_match_two_level_exhaustively() {
        for k in 1..=10 {
            let a = Hierarchy::build(chain(k), &[]).unwrap();
            let b = Hierarchy::two_level(chain(k));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn morphology_file_roundtrip() {
        let text = r#"{ "nodes": 3, "edges": [[0,1],[1,2]], "actuated": [false,true,true],
                        "torso": 0, "clusters": [ [ [0,1], [1,2] ] ] }"#;
        let file = MorphologyFile::from_json(text).unwrap();
        let h = file.hierarchy().unwrap();
        assert_eq!(h.depth(), 3);
        assert_eq!(h.parents(1).len(), 2);
        assert!(MorphologyFile::from_json("{").is_err());
    }

    fn random_connected(k: usize, extra: &[(usize, usize)], tree: &[usize]) -> MorphGraph {
        // node i > 0 attaches to tree[i-1] % i, guaranteeing connectivity
        let mut edges: Vec<_> = (1..k).map(|i| (tree[i - 1] % i, i)).collect();
        edges.extend(
            extra
                .iter()
                .map(|&(a, b)| (a % k, b % k))
                .filter(|(a, b)| a != b),
        );
        MorphGraph::new(k, &edges, &vec![true; k], 0).unwrap()
    }

    fn floyd_warshall(g: &MorphGraph) -> Vec<Vec<usize>> {
        let k = g.node_count();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; k]; k];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for &(a, b) in g.edges() {
            d[a][b] = 1;
            d[b][a] = 1;
        }
        for m in 0..k {
            for i in 0..k {
                for j in 0..k {
                    if d[i][m] + d[m][j] < d[i][j] {
                        d[i][j] = d[i][m] + d[m][j];
                    }
                }
            }
        }
        d
    }

    proptest! {
        #[test]
        fn hop_distance_matches_all_pairs_oracle(
            k in 1usize..=12,
            tree in proptest::collection::vec(0usize..64, 11),
            extra in proptest::collection::vec((0usize..12, 0usize..12), 0..8),
            torso_seed in 0usize..12,
        ) {
            let g = random_connected(k, &extra, &tree);
            let torso = torso_seed % k;
            let g = MorphGraph::new(k, g.edges(), &vec![true; k], torso).unwrap();
            let oracle = floyd_warshall(&g);
            for i in 0..k {
                prop_assert_eq!(g.hop_distance_to_torso(i).unwrap(), oracle[i][torso]);
            }
        }

        #[test]
        fn parent_child_symmetry(
            k in 2usize..=10,
            assign in proptest::collection::vec(0usize..4, 10),
            extra in proptest::collection::vec(0usize..4, 10),
        ) {
            // every node joins cluster assign[i] % m, some also join extra[i] % m
            let m = 1 + assign[0] % 3;
            let mut clusters = vec![Vec::new(); m];
            for i in 0..k {
                clusters[assign[i] % m].push(i);
                if extra[i] % 2 == 0 {
                    clusters[extra[i] % m].push(i);
                }
            }
            clusters.retain(|c| !c.is_empty());
            let spec = ClusterSpec::new(clusters, vec![]);
            let h = Hierarchy::build(chain(k), &[spec]).unwrap();
            check_symmetry(&h);
        }
    }
}
