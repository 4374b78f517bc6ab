use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Stable small-integer handle for a backbone node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeRef(pub u32);

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Up,
    Down,
}

impl Status {
    pub fn is_up(self) -> bool {
        self == Status::Up
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Link {
    pub latency_ms: u64,
    pub state: Status,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("self-loop on node {0}")]
    SelfLoop(NodeRef),
    #[error("duplicate link {0}-{1}")]
    DuplicateLink(NodeRef, NodeRef),
    #[error("link {0}-{1} references unknown node")]
    UnknownNode(NodeRef, NodeRef),
    #[error("link {0}-{1} has zero latency")]
    ZeroLatency(NodeRef, NodeRef),
    #[error("no link between {0} and {1}")]
    NoSuchLink(NodeRef, NodeRef),
    #[error("unknown node {0}")]
    NoSuchNode(NodeRef),
}

fn key(a: NodeRef, b: NodeRef) -> (NodeRef, NodeRef) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Undirected backbone graph with per-node and per-link up/down state.
///
/// Node state and link state are kept separately: taking a node down leaves
/// its links' own state untouched, so bringing it back restores the exact
/// pre-failure topology.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TopologyGraph {
    nodes: BTreeMap<NodeRef, Status>,
    links: BTreeMap<(NodeRef, NodeRef), Link>,
    adjacency: BTreeMap<NodeRef, BTreeSet<NodeRef>>,
}

impl TopologyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: NodeRef) {
        self.nodes.entry(node).or_insert(Status::Up);
        self.adjacency.entry(node).or_default();
    }

    pub fn add_link(
        &mut self,
        a: NodeRef,
        b: NodeRef,
        latency_ms: u64,
    ) -> Result<(), TopologyError> {
        if a == b {
            return Err(TopologyError::SelfLoop(a));
        }
        if !self.nodes.contains_key(&a) || !self.nodes.contains_key(&b) {
            return Err(TopologyError::UnknownNode(a, b));
        }
        if latency_ms == 0 {
            return Err(TopologyError::ZeroLatency(a, b));
        }
        let k = key(a, b);
        if self.links.contains_key(&k) {
            return Err(TopologyError::DuplicateLink(k.0, k.1));
        }
        self.links.insert(
            k,
            Link {
                latency_ms,
                state: Status::Up,
            },
        );
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.nodes.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, node: NodeRef) -> bool {
        self.nodes.contains_key(&node)
    }

    pub fn links(&self) -> impl Iterator<Item = ((NodeRef, NodeRef), Link)> + '_ {
        self.links.iter().map(|(k, l)| (*k, *l))
    }

    pub fn link(&self, a: NodeRef, b: NodeRef) -> Option<Link> {
        self.links.get(&key(a, b)).copied()
    }

    pub fn node_status(&self, node: NodeRef) -> Option<Status> {
        self.nodes.get(&node).copied()
    }

    pub fn is_node_up(&self, node: NodeRef) -> bool {
        self.nodes.get(&node).is_some_and(|s| s.is_up())
    }

    pub fn set_node_status(&mut self, node: NodeRef, status: Status) -> Result<(), TopologyError> {
        let slot = self
            .nodes
            .get_mut(&node)
            .ok_or(TopologyError::NoSuchNode(node))?;
        *slot = status;
        Ok(())
    }

    pub fn set_link_status(
        &mut self,
        a: NodeRef,
        b: NodeRef,
        status: Status,
    ) -> Result<(), TopologyError> {
        let link = self
            .links
            .get_mut(&key(a, b))
            .ok_or(TopologyError::NoSuchLink(a, b))?;
        link.state = status;
        Ok(())
    }

    /// A link is usable when it is Up and both endpoints are Up.
    pub fn is_link_usable(&self, a: NodeRef, b: NodeRef) -> bool {
        self.link(a, b).is_some_and(|l| l.state.is_up()) && self.is_node_up(a) && self.is_node_up(b)
    }

    /// Neighbors reachable over usable links, ascending.
    pub fn live_neighbors(&self, node: NodeRef) -> impl Iterator<Item = NodeRef> + '_ {
        self.adjacency
            .get(&node)
            .into_iter()
            .flatten()
            .copied()
            .filter(move |&n| self.is_link_usable(node, n))
    }

    /// All configured neighbors regardless of state.
    pub fn neighbors(&self, node: NodeRef) -> impl Iterator<Item = NodeRef> + '_ {
        self.adjacency.get(&node).into_iter().flatten().copied()
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.nodes
            .iter()
            .filter(|(_, s)| s.is_up())
            .map(|(n, _)| *n)
    }

    /// Hop distances from `src` over usable links. Empty if `src` is down.
    pub fn bfs_hops(&self, src: NodeRef) -> BTreeMap<NodeRef, usize> {
        let mut dist = BTreeMap::new();
        if !self.is_node_up(src) {
            return dist;
        }
        dist.insert(src, 0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for v in self.live_neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Largest hop distance between two live nodes in the same component.
    pub fn diameter(&self) -> usize {
        self.live_nodes()
            .map(|n| self.bfs_hops(n).values().copied().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// True when removing `node` increases the number of components among
    /// the remaining live nodes.
    pub fn is_articulation_point(&self, node: NodeRef) -> bool {
        if !self.is_node_up(node) {
            return false;
        }
        let before = connected_components(self).len();
        let mut g = self.clone();
        g.nodes.insert(node, Status::Down);
        connected_components(&g).len() > before
    }

    /// Sum of link latencies along a node path; `None` if any hop is not a link.
    pub fn path_latency(&self, path: &[NodeRef]) -> Option<u64> {
        path.windows(2)
            .map(|w| self.link(w[0], w[1]).map(|l| l.latency_ms))
            .sum()
    }
}

/// Partition of live nodes into connected components over usable links.
/// Components are sorted internally and by their smallest member.
pub fn connected_components(graph: &TopologyGraph) -> Vec<BTreeSet<NodeRef>> {
    // union-find keeps this independent of the BFS used elsewhere
    let live: Vec<NodeRef> = graph.live_nodes().collect();
    let index: BTreeMap<NodeRef, usize> = live.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut parent: Vec<usize> = (0..live.len()).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    for ((a, b), _) in graph.links() {
        if graph.is_link_usable(a, b) {
            let (ra, rb) = (find(&mut parent, index[&a]), find(&mut parent, index[&b]));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<NodeRef>> = BTreeMap::new();
    for (i, n) in live.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().insert(*n);
    }
    let mut out: Vec<_> = groups.into_values().collect();
    out.sort_by_key(|c| *c.iter().next().expect("component is nonempty"));
    out
}

/// Random connected graph: a random spanning tree plus `extra_links` chords.
/// Latencies are drawn uniformly from `latency_ms`.
pub fn random_connected<R: Rng>(
    rng: &mut R,
    n: u32,
    extra_links: usize,
    latency_ms: std::ops::RangeInclusive<u64>,
) -> TopologyGraph {
    let mut g = TopologyGraph::new();
    for i in 0..n {
        g.add_node(NodeRef(i));
    }
    for i in 1..n {
        let parent = rng.random_range(0..i);
        let lat = rng.random_range(latency_ms.clone());
        g.add_link(NodeRef(i), NodeRef(parent), lat)
            .expect("tree edge is fresh");
    }
    let max_links = (n as usize) * (n as usize - 1) / 2;
    let target = (g.links.len() + extra_links).min(max_links);
    while g.links.len() < target {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && g.link(NodeRef(a), NodeRef(b)).is_none() {
            let lat = rng.random_range(latency_ms.clone());
            g.add_link(NodeRef(a), NodeRef(b), lat)
                .expect("checked above");
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> TopologyGraph {
        let mut g = TopologyGraph::new();
        for i in 0..3 {
            g.add_node(NodeRef(i));
        }
        g.add_link(NodeRef(0), NodeRef(1), 1).unwrap();
        g.add_link(NodeRef(1), NodeRef(2), 1).unwrap();
        g
    }

    #[test]
    fn rejects_self_loops_duplicates_and_zero_latency() {
        let mut g = path3();
        assert_eq!(
            g.add_link(NodeRef(0), NodeRef(0), 1),
            Err(TopologyError::SelfLoop(NodeRef(0)))
        );
        assert!(matches!(
            g.add_link(NodeRef(1), NodeRef(0), 3),
            Err(TopologyError::DuplicateLink(..))
        ));
        assert!(matches!(
            g.add_link(NodeRef(0), NodeRef(2), 0),
            Err(TopologyError::ZeroLatency(..))
        ));
        assert!(matches!(
            g.add_link(NodeRef(0), NodeRef(9), 1),
            Err(TopologyError::UnknownNode(..))
        ));
    }

    #[test]
    fn path_with_down_link_splits() {
        let mut g = path3();
        g.set_link_status(NodeRef(1), NodeRef(2), Status::Down)
            .unwrap();
        let comps = connected_components(&g);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0], BTreeSet::from([NodeRef(0), NodeRef(1)]));
        assert_eq!(comps[1], BTreeSet::from([NodeRef(2)]));
    }

    #[test]
    fn complete_graph_is_one_component() {
        let mut g = TopologyGraph::new();
        for i in 0..5 {
            g.add_node(NodeRef(i));
        }
        for a in 0..5 {
            for b in (a + 1)..5 {
                g.add_link(NodeRef(a), NodeRef(b), 2).unwrap();
            }
        }
        assert_eq!(connected_components(&g).len(), 1);
        assert_eq!(g.diameter(), 1);
    }

    #[test]
    fn down_node_disables_incident_links() {
        let mut g = path3();
        g.set_node_status(NodeRef(1), Status::Down).unwrap();
        assert!(!g.is_link_usable(NodeRef(0), NodeRef(1)));
        assert_eq!(g.live_neighbors(NodeRef(0)).count(), 0);
        assert_eq!(connected_components(&g).len(), 2);
    }

    #[test]
    fn node_down_then_up_restores_topology() {
        let mut g = path3();
        g.set_link_status(NodeRef(0), NodeRef(1), Status::Down)
            .unwrap();
        let before = g.clone();
        g.set_node_status(NodeRef(1), Status::Down).unwrap();
        g.set_node_status(NodeRef(1), Status::Up).unwrap();
        assert_eq!(g, before);
    }

    #[test]
    fn articulation_point_on_path() {
        let g = path3();
        assert!(g.is_articulation_point(NodeRef(1)));
        assert!(!g.is_articulation_point(NodeRef(0)));
    }

    #[test]
    fn random_graphs_are_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2u32, 16, 40, 64] {
            let g = random_connected(&mut rng, n, n as usize / 2, 1..=5);
            assert_eq!(connected_components(&g).len(), 1);
        }
    }
}
