//! Navigation-graph environments.
//!
//! A [`World`] is an immutable graph of viewpoints with metric positions, room
//! regions and annotated objects. Geodesic queries run Dijkstra lazily per
//! source node and memoize the result, so a `World` can be shared freely
//! across threads.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Reserved action name; no node may use it as an id.
pub const STOP_ID: &str = "stop";

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("failed to read world file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("failed to parse world: {0}")]
    Parse(String),
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("node id {0:?} is reserved")]
    ReservedNodeId(String),
    #[error("edge references unknown node {0:?}")]
    DanglingEdge(String),
    #[error("self-loop edge on node {0:?}")]
    SelfLoop(String),
    #[error("duplicate edge {0:?} -- {1:?}")]
    DuplicateEdge(String, String),
    #[error("edge {0:?} -- {1:?} has invalid weight {2}")]
    BadWeight(String, String, f64),
    #[error("node {node:?} references unknown region {region:?}")]
    UnknownRegion { node: String, region: String },
    #[error("node {0:?} has a non-finite position")]
    NonFinitePosition(String),
    #[error("graph is disconnected: node {0:?} is unreachable from the first node")]
    Disconnected(String),
    #[error("object {object:?} is visible from unknown node {node:?}")]
    UnknownVisibilityNode { object: String, node: String },
    #[error("world has no nodes")]
    Empty,
    #[error("unknown node id {0:?}")]
    UnknownNode(String),
    #[error("bearing from {0:?} to itself is undefined")]
    SameNode(String),
    #[error("infeasible synthetic world parameters: {0}")]
    Infeasible(String),
}

pub type Result<T, E = WorldError> = std::result::Result<T, E>;

/// Horizontal heading in degrees clockwise from scene north (+y), kept in `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Heading(f64);

impl Heading {
    pub fn new(degrees: f64) -> Self {
        let mut d = degrees.rem_euclid(360.0);
        // rem_euclid can round up to exactly 360.0 for tiny negative inputs
        if d >= 360.0 {
            d = 0.0;
        }
        Heading(d)
    }

    pub fn degrees(self) -> f64 {
        self.0
    }

    /// Bearing of `to` as seen from `from`, ignoring elevation.
    pub fn bearing(from: [f64; 3], to: [f64; 3]) -> Self {
        let dx = to[0] - from[0];
        let dy = to[1] - from[1];
        Heading::new(dx.atan2(dy).to_degrees())
    }

    /// Signed angle from `self` to `target` in `(-180, 180]`, positive clockwise.
    pub fn relative_to(self, target: Heading) -> f64 {
        wrap_signed(target.0 - self.0)
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}°", self.0)
    }
}

/// Maps any angle in degrees into `(-180, 180]`.
pub fn wrap_signed(degrees: f64) -> f64 {
    let r = degrees.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Absolute difference between two angles on the circle, in `[0, 180]`.
pub fn angular_difference(a: f64, b: f64) -> f64 {
    wrap_signed(a - b).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    #[serde(rename = "pos")]
    pub position: [f64; 3],
    #[serde(rename = "region")]
    pub region_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visibility {
    #[serde(rename = "node")]
    pub node_id: String,
    pub heading_deg: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    pub name: String,
    #[serde(rename = "pos")]
    pub position: [f64; 3],
    #[serde(rename = "visible_from", default)]
    pub visibility: Vec<Visibility>,
}

/// An undirected edge. `weight` is `None` when the Euclidean length applies.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRecord {
    pub a: String,
    pub b: String,
    pub weight: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct WorldFile {
    scene_id: String,
    nodes: Vec<NodeRecord>,
    edges: Vec<Vec<Value>>,
    regions: BTreeMap<String, String>,
    #[serde(default)]
    objects: Vec<ObjectRecord>,
}

#[derive(Debug, Clone, Copy)]
struct Adjacent {
    node: usize,
    weight: f64,
}

/// Immutable navigation graph for one scene.
#[derive(Debug, Clone)]
pub struct World {
    scene_id: String,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    regions: BTreeMap<String, String>,
    objects: Vec<ObjectRecord>,
    index: HashMap<String, usize>,
    // sorted by neighbor id
    adjacency: Vec<Vec<Adjacent>>,
    visible: Vec<Vec<(usize, usize)>>,
    geodesic_memo: Vec<OnceLock<Vec<f64>>>,
}

impl PartialEq for World {
    fn eq(&self, other: &Self) -> bool {
        self.scene_id == other.scene_id
            && self.nodes == other.nodes
            && self.edges == other.edges
            && self.regions == other.regions
            && self.objects == other.objects
    }
}

impl World {
    /// Builds a world and checks every structural invariant.
    pub fn new(
        scene_id: impl Into<String>,
        nodes: Vec<NodeRecord>,
        edges: Vec<EdgeRecord>,
        regions: BTreeMap<String, String>,
        objects: Vec<ObjectRecord>,
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(WorldError::Empty);
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.id == STOP_ID {
                return Err(WorldError::ReservedNodeId(n.id.clone()));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(WorldError::DuplicateNode(n.id.clone()));
            }
            if n.position.iter().any(|c| !c.is_finite()) {
                return Err(WorldError::NonFinitePosition(n.id.clone()));
            }
            if !regions.contains_key(&n.region_id) {
                return Err(WorldError::UnknownRegion { node: n.id.clone(), region: n.region_id.clone() });
            }
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut seen = HashSet::new();
        for e in &edges {
            let ia = *index.get(&e.a).ok_or_else(|| WorldError::DanglingEdge(e.a.clone()))?;
            let ib = *index.get(&e.b).ok_or_else(|| WorldError::DanglingEdge(e.b.clone()))?;
            if ia == ib {
                return Err(WorldError::SelfLoop(e.a.clone()));
            }
            if !seen.insert((ia.min(ib), ia.max(ib))) {
                return Err(WorldError::DuplicateEdge(e.a.clone(), e.b.clone()));
            }
            let weight = match e.weight {
                Some(w) if !(w.is_finite() && w >= 0.0) => {
                    return Err(WorldError::BadWeight(e.a.clone(), e.b.clone(), w))
                }
                Some(w) => w,
                None => euclidean(nodes[ia].position, nodes[ib].position),
            };
            adjacency[ia].push(Adjacent { node: ib, weight });
            adjacency[ib].push(Adjacent { node: ia, weight });
        }
        for list in &mut adjacency {
            list.sort_by(|x, y| nodes[x.node].id.cmp(&nodes[y.node].id));
        }

        let mut visible = vec![Vec::new(); nodes.len()];
        for (oi, obj) in objects.iter().enumerate() {
            for (vi, v) in obj.visibility.iter().enumerate() {
                let ni = *index.get(&v.node_id).ok_or_else(|| WorldError::UnknownVisibilityNode {
                    object: obj.id.clone(),
                    node: v.node_id.clone(),
                })?;
                visible[ni].push((oi, vi));
            }
        }

        let n = nodes.len();
        let world = World {
            scene_id: scene_id.into(),
            nodes,
            edges,
            regions,
            objects,
            index,
            adjacency,
            visible,
            geodesic_memo: (0..n).map(|_| OnceLock::new()).collect(),
        };
        world.check_connected()?;
        Ok(world)
    }

    fn check_connected(&self) -> Result<()> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for adj in &self.adjacency[u] {
                if !seen[adj.node] {
                    seen[adj.node] = true;
                    stack.push(adj.node);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(WorldError::Disconnected(self.nodes[i].id.clone())),
            None => Ok(()),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: WorldFile = serde_json::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))?;
        let mut edges = Vec::with_capacity(file.edges.len());
        for (i, raw) in file.edges.iter().enumerate() {
            let name = |v: &Value| {
                v.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| WorldError::Parse(format!("edge {i}: endpoints must be strings")))
            };
            let (a, b, weight) = match raw.as_slice() {
                [a, b] => (name(a)?, name(b)?, None),
                [a, b, w] => {
                    let w =
                        w.as_f64().ok_or_else(|| WorldError::Parse(format!("edge {i}: weight must be a number")))?;
                    (name(a)?, name(b)?, Some(w))
                }
                _ => return Err(WorldError::Parse(format!("edge {i}: expected [a, b] or [a, b, weight]"))),
            };
            edges.push(EdgeRecord { a, b, weight });
        }
        World::new(file.scene_id, file.nodes, edges, file.regions, file.objects)
    }

    pub fn to_json_string(&self) -> String {
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let mut v = vec![Value::from(e.a.clone()), Value::from(e.b.clone())];
                if let Some(w) = e.weight {
                    v.push(Value::from(w));
                }
                v
            })
            .collect();
        let file = WorldFile {
            scene_id: self.scene_id.clone(),
            nodes: self.nodes.clone(),
            edges,
            regions: self.regions.clone(),
            objects: self.objects.clone(),
        };
        serde_json::to_string_pretty(&file).expect("world serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json_string())
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn regions(&self) -> &BTreeMap<String, String> {
        &self.regions
    }

    pub fn objects(&self) -> &[ObjectRecord] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    fn idx(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| WorldError::UnknownNode(id.to_owned()))
    }

    pub fn node(&self, id: &str) -> Result<&NodeRecord> {
        Ok(&self.nodes[self.idx(id)?])
    }

    pub fn position(&self, id: &str) -> Result<[f64; 3]> {
        Ok(self.node(id)?.position)
    }

    /// Room type label of the node's region.
    pub fn room_type(&self, id: &str) -> Result<&str> {
        let node = self.node(id)?;
        Ok(self.regions[&node.region_id].as_str())
    }

    /// Neighbor ids in lexicographic order.
    pub fn neighbors(&self, id: &str) -> Result<Vec<&str>> {
        let i = self.idx(id)?;
        Ok(self.adjacency[i].iter().map(|a| self.nodes[a.node].id.as_str()).collect())
    }

    pub fn degree(&self, id: &str) -> Result<usize> {
        Ok(self.adjacency[self.idx(id)?].len())
    }

    pub fn is_edge(&self, a: &str, b: &str) -> bool {
        match (self.index.get(a), self.index.get(b)) {
            (Some(&ia), Some(&ib)) => self.adjacency[ia].iter().any(|x| x.node == ib),
            _ => false,
        }
    }

    /// Length of the edge `a -- b`, if it exists.
    pub fn edge_length(&self, a: &str, b: &str) -> Option<f64> {
        let ia = *self.index.get(a)?;
        let ib = *self.index.get(b)?;
        self.adjacency[ia].iter().find(|x| x.node == ib).map(|x| x.weight)
    }

    /// Objects visible from `node` with their visibility annotation.
    pub fn visible_objects(&self, node: &str) -> Result<Vec<(&ObjectRecord, &Visibility)>> {
        let i = self.idx(node)?;
        Ok(self.visible[i].iter().map(|&(oi, vi)| (&self.objects[oi], &self.objects[oi].visibility[vi])).collect())
    }

    pub fn bearing(&self, from: &str, to: &str) -> Result<Heading> {
        if from == to {
            return Err(WorldError::SameNode(from.to_owned()));
        }
        Ok(Heading::bearing(self.position(from)?, self.position(to)?))
    }

    /// Signed angle in `(-180, 180]` from the agent heading to the bearing of
    /// `to` as seen from `from`; positive means rightward.
    pub fn relative_heading(&self, agent_heading: Heading, from: &str, to: &str) -> Result<f64> {
        Ok(agent_heading.relative_to(self.bearing(from, to)?))
    }

    fn distances_from(&self, source: usize) -> &[f64] {
        self.geodesic_memo[source].get_or_init(|| self.dijkstra(source))
    }

    fn dijkstra(&self, source: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Entry(f64, usize);
        impl Eq for Entry {}
        impl PartialOrd for Entry {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Entry {
            fn cmp(&self, other: &Self) -> Ordering {
                other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
            }
        }

        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for adj in &self.adjacency[u] {
                let nd = d + adj.weight;
                if nd < dist[adj.node] {
                    dist[adj.node] = nd;
                    heap.push(Entry(nd, adj.node));
                }
            }
        }
        dist
    }

    /// Shortest-path length along edges.
    pub fn geodesic_distance(&self, a: &str, b: &str) -> Result<f64> {
        let ia = self.idx(a)?;
        let ib = self.idx(b)?;
        if ia == ib {
            return Ok(0.0);
        }
        // query from the smaller index so d(a, b) and d(b, a) share one memo row
        let (s, t) = if ia <= ib { (ia, ib) } else { (ib, ia) };
        Ok(self.distances_from(s)[t])
    }

    /// Geodesically nearest node whose region has `room_type`; ties go to the
    /// smallest node id.
    pub fn nearest_node_with_room(&self, origin: &str, room_type: &str) -> Result<Option<(String, f64)>> {
        let io = self.idx(origin)?;
        let dist = self.distances_from(io);
        let mut best: Option<(usize, f64)> = None;
        for (i, node) in self.nodes.iter().enumerate() {
            if self.regions[&node.region_id] != room_type {
                continue;
            }
            let d = if i == io { 0.0 } else { dist[i] };
            best = match best {
                Some((bi, bd)) if bd < d || (bd == d && self.nodes[bi].id <= node.id) => Some((bi, bd)),
                _ => Some((i, d)),
            };
        }
        Ok(best.map(|(i, d)| (self.nodes[i].id.clone(), d)))
    }

    /// Node ids reachable within `k` hops (including `origin`), with hop counts.
    pub fn hop_ball(&self, origin: &str, k: usize) -> Result<Vec<(&str, usize)>> {
        let io = self.idx(origin)?;
        let mut hops = vec![usize::MAX; self.nodes.len()];
        hops[io] = 0;
        let mut frontier = vec![io];
        for h in 1..=k {
            let mut next = Vec::new();
            for &u in &frontier {
                for adj in &self.adjacency[u] {
                    if hops[adj.node] == usize::MAX {
                        hops[adj.node] = h;
                        next.push(adj.node);
                    }
                }
            }
            frontier = next;
        }
        Ok(hops
            .iter()
            .enumerate()
            .filter(|(_, &h)| h != usize::MAX)
            .map(|(i, &h)| (self.nodes[i].id.as_str(), h))
            .collect())
    }
}

pub fn euclidean(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn load_world(path: impl AsRef<Path>) -> Result<World> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|source| WorldError::Io { path: path.display().to_string(), source })?;
    World::from_json_str(&text)
}

/// Parameters for [`generate_synthetic_world`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorldParams {
    pub n_nodes: usize,
    pub n_regions: usize,
    pub room_vocab: Vec<String>,
    pub object_vocab: Vec<String>,
    pub objects_per_region: usize,
    /// Probability of keeping each candidate edge to one of a node's nearest neighbors.
    pub edge_density: f64,
    pub visibility_radius_m: f64,
    /// Typical spacing between viewpoints in meters.
    pub node_spacing_m: f64,
}

impl Default for SyntheticWorldParams {
    fn default() -> Self {
        SyntheticWorldParams {
            n_nodes: 50,
            n_regions: 8,
            room_vocab: [
                "kitchen",
                "bedroom",
                "bathroom",
                "hallway",
                "living room",
                "dining room",
                "office",
                "laundry room",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            object_vocab: [
                "chair", "table", "picture", "cushion", "curtain", "plant", "cabinet", "stool", "bed", "towel", "door",
                "window",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            objects_per_region: 3,
            edge_density: 0.6,
            visibility_radius_m: 5.0,
            node_spacing_m: 2.0,
        }
    }
}

const NEAREST_CANDIDATES: usize = 6;

/// Seeded random world: Voronoi rooms, a random geometric spanning tree plus
/// extra nearest-neighbor edges, and objects placed near region viewpoints.
pub fn generate_synthetic_world(seed: u64, params: &SyntheticWorldParams) -> Result<World> {
    let p = params;
    if p.n_nodes < 2 {
        return Err(WorldError::Infeasible("n_nodes must be at least 2".into()));
    }
    if p.n_regions == 0 || p.n_regions > p.n_nodes {
        return Err(WorldError::Infeasible(format!("n_regions = {} must be in 1..={}", p.n_regions, p.n_nodes)));
    }
    if p.room_vocab.is_empty() {
        return Err(WorldError::Infeasible("room_vocab is empty".into()));
    }
    if p.objects_per_region > 0 && p.object_vocab.is_empty() {
        return Err(WorldError::Infeasible("object_vocab is empty".into()));
    }
    if !(0.0..=1.0).contains(&p.edge_density) {
        return Err(WorldError::Infeasible("edge_density must be in [0, 1]".into()));
    }
    if !(p.visibility_radius_m >= 0.0 && p.node_spacing_m > 0.0) {
        return Err(WorldError::Infeasible("visibility radius and node spacing must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (p.n_nodes as f64).sqrt() * p.node_spacing_m;
    let width = (p.n_nodes.to_string().len()).max(3);
    let ids: Vec<String> = (0..p.n_nodes).map(|i| format!("n{i:0width$}")).collect();
    let positions: Vec<[f64; 3]> = (0..p.n_nodes)
        .map(|_| [round_mm(rng.random_range(0.0..side)), round_mm(rng.random_range(0.0..side)), 0.0])
        .collect();

    let mut order: Vec<usize> = (0..p.n_nodes).collect();
    order.shuffle(&mut rng);
    let centers = &order[..p.n_regions];
    let region_ids: Vec<String> = (0..p.n_regions).map(|r| format!("r{r}")).collect();
    let mut regions = BTreeMap::new();
    for rid in &region_ids {
        let room = p.room_vocab[rng.random_range(0..p.room_vocab.len())].clone();
        regions.insert(rid.clone(), room);
    }
    let node_region: Vec<usize> = positions
        .iter()
        .map(|pos| {
            (0..p.n_regions)
                .min_by(|&x, &y| {
                    euclidean(*pos, positions[centers[x]]).total_cmp(&euclidean(*pos, positions[centers[y]]))
                })
                .expect("at least one region")
        })
        .collect();

    let mut edge_set = std::collections::BTreeSet::new();
    let mut order: Vec<usize> = (0..p.n_nodes).collect();
    order.shuffle(&mut rng);
    for (k, &u) in order.iter().enumerate().skip(1) {
        let v = order[..k]
            .iter()
            .copied()
            .min_by(|&x, &y| euclidean(positions[u], positions[x]).total_cmp(&euclidean(positions[u], positions[y])))
            .expect("tree has a previous node");
        edge_set.insert((u.min(v), u.max(v)));
    }
    for u in 0..p.n_nodes {
        let mut others: Vec<usize> = (0..p.n_nodes).filter(|&v| v != u).collect();
        others
            .sort_by(|&x, &y| euclidean(positions[u], positions[x]).total_cmp(&euclidean(positions[u], positions[y])));
        for &v in others.iter().take(NEAREST_CANDIDATES) {
            if rng.random_bool(p.edge_density) {
                edge_set.insert((u.min(v), u.max(v)));
            }
        }
    }

    let nodes: Vec<NodeRecord> = (0..p.n_nodes)
        .map(|i| NodeRecord {
            id: ids[i].clone(),
            position: positions[i],
            region_id: region_ids[node_region[i]].clone(),
        })
        .collect();
    let edges =
        edge_set.into_iter().map(|(a, b)| EdgeRecord { a: ids[a].clone(), b: ids[b].clone(), weight: None }).collect();

    let mut objects = Vec::new();
    for r in 0..p.n_regions {
        let members: Vec<usize> = (0..p.n_nodes).filter(|&i| node_region[i] == r).collect();
        for _ in 0..p.objects_per_region {
            let anchor = positions[members[rng.random_range(0..members.len())]];
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = rng.random_range(0.5..2.5);
            let pos = [
                round_mm(anchor[0] + radius * angle.sin()),
                round_mm(anchor[1] + radius * angle.cos()),
                round_mm(rng.random_range(0.3..1.5)),
            ];
            let name = p.object_vocab[rng.random_range(0..p.object_vocab.len())].clone();
            let visibility = (0..p.n_nodes)
                .filter_map(|i| {
                    let d = euclidean(positions[i], pos);
                    (d <= p.visibility_radius_m).then(|| Visibility {
                        node_id: ids[i].clone(),
                        heading_deg: Heading::bearing(positions[i], pos).degrees(),
                        distance_m: d,
                    })
                })
                .collect();
            objects.push(ObjectRecord { id: format!("o{}", objects.len()), name, position: pos, visibility });
        }
    }

    World::new(format!("synth_{seed}"), nodes, edges, regions, objects)
}

fn round_mm(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str, x: f64, y: f64, region: &str) -> NodeRecord {
        NodeRecord { id: id.into(), position: [x, y, 0.0], region_id: region.into() }
    }

    fn edge(a: &str, b: &str) -> EdgeRecord {
        EdgeRecord { a: a.into(), b: b.into(), weight: None }
    }

    fn regions() -> BTreeMap<String, String> {
        [("r0", "hallway"), ("r1", "kitchen")].into_iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn minimal_world_loads() {
        let text = r#"{"scene_id":"s","nodes":[{"id":"a","pos":[0,0,0],"region":"r"},
            {"id":"b","pos":[3,0,0],"region":"r"}],"edges":[["a","b"]],"regions":{"r":"hallway"},"objects":[]}"#;
        let w = World::from_json_str(text).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.geodesic_distance("a", "b").unwrap(), 3.0);
        assert_eq!(w.geodesic_distance("b", "a").unwrap(), 3.0);
        assert_eq!(w.geodesic_distance("a", "a").unwrap(), 0.0);
    }

    #[test]
    fn dangling_edge_names_node() {
        let text = r#"{"scene_id":"s","nodes":[{"id":"a","pos":[0,0,0],"region":"r"},
            {"id":"b","pos":[3,0,0],"region":"r"}],"edges":[["a","b"],["a","x9"]],"regions":{"r":"hallway"}}"#;
        let err = World::from_json_str(text).unwrap_err();
        assert!(matches!(err, WorldError::DanglingEdge(ref id) if id == "x9"));
        assert!(err.to_string().contains("x9"));
    }

    #[test]
    fn invariant_violations() {
        let nodes = vec![node("a", 0.0, 0.0, "r0"), node("b", 1.0, 0.0, "r0"), node("c", 5.0, 0.0, "r1")];
        let err = World::new("s", nodes.clone(), vec![edge("a", "b")], regions(), vec![]).unwrap_err();
        assert!(matches!(err, WorldError::Disconnected(ref id) if id == "c"));

        let err = World::new("s", nodes.clone(), vec![edge("a", "a")], regions(), vec![]).unwrap_err();
        assert!(matches!(err, WorldError::SelfLoop(_)));

        let err =
            World::new("s", nodes.clone(), vec![edge("a", "b"), edge("b", "a"), edge("b", "c")], regions(), vec![])
                .unwrap_err();
        assert!(matches!(err, WorldError::DuplicateEdge(..)));

        let mut bad = nodes.clone();
        bad[2].region_id = "r7".into();
        let err = World::new("s", bad, vec![edge("a", "b"), edge("b", "c")], regions(), vec![]).unwrap_err();
        assert!(matches!(err, WorldError::UnknownRegion { ref region, .. } if region == "r7"));

        let mut bad = nodes;
        bad[1].id = "stop".into();
        let err = World::new("s", bad, vec![], regions(), vec![]).unwrap_err();
        assert!(matches!(err, WorldError::ReservedNodeId(_)));
    }

    #[test]
    fn weight_override() {
        let text = r#"{"scene_id":"s","nodes":[{"id":"a","pos":[0,0,0],"region":"r"},
            {"id":"b","pos":[3,0,0],"region":"r"}],"edges":[["a","b",4.5]],"regions":{"r":"hallway"}}"#;
        let w = World::from_json_str(text).unwrap();
        assert_eq!(w.geodesic_distance("a", "b").unwrap(), 4.5);
        let again = World::from_json_str(&w.to_json_string()).unwrap();
        assert_eq!(w, again);
    }

    #[test]
    fn relative_heading_cases() {
        // b due north of a, c due south, d north-west-ish
        let nodes = vec![
            node("a", 0.0, 0.0, "r0"),
            node("b", 0.0, 2.0, "r0"),
            node("c", 0.0, -2.0, "r0"),
            node("d", -(10f64.to_radians().sin()), 10f64.to_radians().cos(), "r0"),
        ];
        let w =
            World::new("s", nodes, vec![edge("a", "b"), edge("a", "c"), edge("a", "d")], regions(), vec![]).unwrap();
        assert_eq!(w.relative_heading(Heading::new(0.0), "a", "b").unwrap(), 0.0);
        assert!((w.relative_heading(Heading::new(90.0), "a", "c").unwrap() - 90.0).abs() < 1e-12);
        // bearing 350 seen from heading 10
        let r = w.relative_heading(Heading::new(10.0), "a", "d").unwrap();
        assert!((r + 20.0).abs() < 1e-9, "{r}");
        assert!(matches!(w.relative_heading(Heading::new(0.0), "a", "a"), Err(WorldError::SameNode(_))));
    }

    #[test]
    fn wrap_signed_range() {
        assert_eq!(wrap_signed(180.0), 180.0);
        assert_eq!(wrap_signed(-180.0), 180.0);
        assert_eq!(wrap_signed(540.0), 180.0);
        assert_eq!(wrap_signed(-190.0), 170.0);
        assert_eq!(wrap_signed(190.0), -170.0);
        assert_eq!(wrap_signed(-360.0), 0.0);
        assert_eq!(Heading::new(-1e-20).degrees(), 0.0);
        assert_eq!(Heading::new(720.0).degrees(), 0.0);
    }

    #[test]
    fn nearest_room_basics() {
        let nodes = vec![node("a", 0.0, 0.0, "r0"), node("b", 1.0, 0.0, "r0"), node("c", 5.0, 0.0, "r1")];
        let w = World::new("s", nodes, vec![edge("a", "b"), edge("b", "c")], regions(), vec![]).unwrap();
        assert_eq!(w.nearest_node_with_room("a", "hallway").unwrap(), Some(("a".to_string(), 0.0)));
        assert_eq!(w.nearest_node_with_room("a", "kitchen").unwrap(), Some(("c".to_string(), 5.0)));
        assert_eq!(w.nearest_node_with_room("a", "garage").unwrap(), None);
        assert!(w.nearest_node_with_room("zz", "kitchen").is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let params = SyntheticWorldParams::default();
        let a = generate_synthetic_world(7, &params).unwrap();
        let b = generate_synthetic_world(7, &params).unwrap();
        assert_eq!(a.to_json_string(), b.to_json_string());
        let c = generate_synthetic_world(8, &params).unwrap();
        assert_ne!(a.to_json_string(), c.to_json_string());

        let two = SyntheticWorldParams { n_nodes: 2, n_regions: 1, ..params.clone() };
        let w = generate_synthetic_world(1, &two).unwrap();
        assert!(w.is_edge("n000", "n001"));

        let bad = SyntheticWorldParams { n_nodes: 3, n_regions: 4, ..params };
        assert!(matches!(generate_synthetic_world(1, &bad), Err(WorldError::Infeasible(_))));
    }
}
