//! Parity trees on coupling graphs.
//!
//! A parity tree collects the parity of its vertices onto the root with
//! CNOTs (child as control, parent as target). Each tree edge fires in one of
//! `d` time slots, and a child's own edge fires only after all edges into it.
//! In serial mode a vertex takes part in at most one edge per slot. In merged
//! mode a vertex may absorb any number of same-slot edges as one parallel
//! CNOT group, but cannot be control and target in the same slot.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate_compiler::{self, Circuit, Gate, SingleQubitKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingGraph {
    num_qubits: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    num_qubits: usize,
    edges: Vec<[usize; 2]>,
}

impl CouplingGraph {
    pub fn new(num_qubits: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidLayout(format!("self-loop on qubit {a}")));
            }
            if a >= num_qubits || b >= num_qubits {
                return Err(Error::InvalidLayout(format!("edge ({a}, {b}) outside {num_qubits} qubits")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidLayout(format!("duplicate edge ({a}, {b})")));
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut adj = vec![Vec::new(); num_qubits];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for n in &mut adj {
            n.sort_unstable();
        }
        Ok(Self { num_qubits, edges, adj })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b)));
        Self::new(n, edges).expect("complete graph is simple")
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("path graph is simple")
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.adj[q]
    }

    pub fn degree(&self, q: usize) -> usize {
        self.adj[q].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.num_qubits && self.adj[a].binary_search(&b).is_ok()
    }

    /// Hop distance from `root` to every vertex (`None` if unreachable).
    pub fn distances(&self, root: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_qubits];
        let mut q = VecDeque::from([root]);
        dist[root] = Some(0);
        while let Some(v) = q.pop_front() {
            let dv = dist[v].expect("queued vertices have a distance");
            for &w in &self.adj[v] {
                if dist[w].is_none() {
                    dist[w] = Some(dv + 1);
                    q.push_back(w);
                }
            }
        }
        dist
    }

    pub fn ball_size(&self, root: usize, radius: usize) -> usize {
        self.distances(root).iter().filter(|d| matches!(d, Some(x) if *x <= radius)).count()
    }

    /// Subgraph on `vertices` with the original labels kept.
    pub fn induced(&self, vertices: &[usize]) -> Result<Self> {
        let keep: BTreeSet<usize> = vertices.iter().copied().collect();
        if let Some(&v) = keep.iter().find(|&&v| v >= self.num_qubits) {
            return Err(Error::InvalidLayout(format!("vertex {v} not in graph")));
        }
        let edges = self.edges.iter().copied().filter(|(a, b)| keep.contains(a) && keep.contains(b));
        Self::new(self.num_qubits, edges)
    }

    pub fn to_json(&self) -> Result<String> {
        let j = GraphJson { num_qubits: self.num_qubits, edges: self.edges.iter().map(|&(a, b)| [a, b]).collect() };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: GraphJson = serde_json::from_str(s)?;
        Self::new(j.num_qubits, j.edges.into_iter().map(|[a, b]| (a, b)))
    }
}

/// Named coupling topologies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutKind {
    Lattice2D { width: usize, height: usize },
    /// Brick-wall honeycomb on a `(2r+1) x (2r+1)` site grid.
    Hexagonal { radius: usize },
    /// Heavy-hex rows of `4*cols + 3` qubits joined by bridge qubits.
    HeavyHexEagle { rows: usize, cols: usize },
    /// The 13-qubit heavy-hex fragment around one degree-3 qubit.
    BrisbaneFragment,
    Complete(usize),
    Custom(PathBuf),
}

impl FromStr for LayoutKind {
    type Err = Error;

    /// `lattice:WxH`, `hex:R`, `heavyhex:RxC`, `brisbane`, `complete:N`, or a JSON path.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidLayout(format!("cannot parse layout '{s}'"));
        let pair = |v: &str| -> Result<(usize, usize)> {
            let (a, b) = v.split_once('x').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        };
        match s.split_once(':') {
            Some(("lattice", v)) => {
                let (width, height) = pair(v)?;
                Ok(LayoutKind::Lattice2D { width, height })
            }
            Some(("hex", v)) => Ok(LayoutKind::Hexagonal { radius: v.parse().map_err(|_| bad())? }),
            Some(("heavyhex", v)) => {
                let (rows, cols) = pair(v)?;
                Ok(LayoutKind::HeavyHexEagle { rows, cols })
            }
            Some(("complete", v)) => Ok(LayoutKind::Complete(v.parse().map_err(|_| bad())?)),
            _ if s == "brisbane" => Ok(LayoutKind::BrisbaneFragment),
            _ if s.ends_with(".json") => Ok(LayoutKind::Custom(PathBuf::from(s))),
            _ => Err(bad()),
        }
    }
}

/// Labels of the 13-qubit fragment, in the order used for local indices.
pub const BRISBANE_FRAGMENT_LABELS: [usize; 13] = [34, 35, 42, 43, 44, 45, 46, 47, 48, 54, 63, 64, 65];
const BRISBANE_FRAGMENT_EDGES: [(usize, usize); 12] = [
    (34, 43),
    (42, 43),
    (43, 44),
    (44, 45),
    (45, 46),
    (46, 47),
    (47, 48),
    (35, 47),
    (45, 54),
    (54, 64),
    (63, 64),
    (64, 65),
];
/// Local index of the fragment's central qubit (device label 45).
pub const BRISBANE_FRAGMENT_ROOT: usize = 5;

fn brisbane_fragment() -> CouplingGraph {
    let idx = |l: usize| BRISBANE_FRAGMENT_LABELS.iter().position(|&x| x == l).expect("label in fragment");
    CouplingGraph::new(13, BRISBANE_FRAGMENT_EDGES.iter().map(|&(a, b)| (idx(a), idx(b))))
        .expect("fragment is simple")
}

fn lattice(w: usize, h: usize) -> Result<CouplingGraph> {
    let id = |x: usize, y: usize| y * w + x;
    let mut e = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                e.push((id(x, y), id(x + 1, y)));
            }
            if y + 1 < h {
                e.push((id(x, y), id(x, y + 1)));
            }
        }
    }
    CouplingGraph::new(w * h, e)
}

fn honeycomb(radius: usize) -> Result<CouplingGraph> {
    let n = 2 * radius + 1;
    let id = |r: usize, c: usize| r * n + c;
    let mut e = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if c + 1 < n {
                e.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < n && (r + c) % 2 == 0 {
                e.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    CouplingGraph::new(n * n, e)
}

fn heavy_hex(rows: usize, cols: usize) -> Result<CouplingGraph> {
    let len = 4 * cols + 3;
    let mut e = Vec::new();
    let row_start = |r: usize| r * (len + cols + 1);
    for r in 0..rows {
        let base = row_start(r);
        for c in 0..len - 1 {
            e.push((base + c, base + c + 1));
        }
        if r + 1 < rows {
            let offset = if r % 2 == 0 { 0 } else { 2 };
            for j in 0..=cols {
                let col = offset + 4 * j;
                if col >= len {
                    continue;
                }
                let bridge = base + len + j;
                e.push((base + col, bridge));
                e.push((bridge, row_start(r + 1) + col));
            }
        }
    }
    let n = if rows == 0 { 0 } else { row_start(rows - 1) + len };
    // drop unused bridge slots so labels stay dense
    let g = CouplingGraph::new(n, e)?;
    let live: Vec<usize> = (0..n).filter(|&v| g.degree(v) > 0 || n == 1).collect();
    if live.len() == n {
        return Ok(g);
    }
    let relabel: BTreeMap<usize, usize> = live.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    CouplingGraph::new(live.len(), g.edges().iter().map(|(a, b)| (relabel[a], relabel[b])))
}

pub fn builtin_layout(kind: &LayoutKind) -> Result<CouplingGraph> {
    match kind {
        LayoutKind::Lattice2D { width, height } => lattice(*width, *height),
        LayoutKind::Hexagonal { radius } => honeycomb(*radius),
        LayoutKind::HeavyHexEagle { rows, cols } => heavy_hex(*rows, *cols),
        LayoutKind::BrisbaneFragment => Ok(brisbane_fragment()),
        LayoutKind::Complete(n) => Ok(CouplingGraph::complete(*n)),
        LayoutKind::Custom(path) => CouplingGraph::from_json(&std::fs::read_to_string(path)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeMode {
    Serial,
    ParallelMerged,
}

/// Rooted CNOT collection tree with one time slot per edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityTree {
    pub root: usize,
    pub depth: usize,
    pub mode: TreeMode,
    /// child -> (parent, slot)
    pub edges: BTreeMap<usize, (usize, usize)>,
}

impl ParityTree {
    pub fn size(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = std::iter::once(self.root).chain(self.edges.keys().copied()).collect();
        v.sort_unstable();
        v
    }

    pub fn children(&self, v: usize) -> Vec<usize> {
        self.edges.iter().filter(|(_, (p, _))| *p == v).map(|(c, _)| *c).collect()
    }

    /// Edges firing in `slot`, grouped by parent: `parent -> children`.
    pub fn slot_groups(&self, slot: usize) -> BTreeMap<usize, Vec<usize>> {
        let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&c, &(p, s)) in &self.edges {
            if s == slot {
                g.entry(p).or_default().push(c);
            }
        }
        g
    }
}

/// Outcome of [`max_pauli_term`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermSearch {
    pub size: usize,
    pub tree: ParityTree,
    /// False when the search budget ran out before optimality was proven.
    pub exact: bool,
}

/// Branch-and-bound nodes visited before settling for the best tree so far.
const SEARCH_BUDGET: usize = 2_000_000;

struct SerialSearch<'a> {
    g: &'a CouplingGraph,
    used: Vec<bool>,
    opps: Vec<(usize, usize)>,
    cur: Vec<(usize, usize, usize)>,
    best: Vec<(usize, usize, usize)>,
    cap: usize,
    budget: usize,
    truncated: bool,
    finished: bool,
}

impl SerialSearch<'_> {
    fn dfs(&mut self, head: usize, potential: usize) {
        if self.finished {
            return;
        }
        if self.budget == 0 {
            self.truncated = true;
            self.finished = true;
            return;
        }
        self.budget -= 1;
        let size = self.cur.len() + 1;
        if size + potential <= self.best.len() + 1 {
            return;
        }
        if head == self.opps.len() {
            if size > self.best.len() + 1 {
                self.best = self.cur.clone();
            }
            if size >= self.cap {
                self.finished = true;
            }
            return;
        }
        let (v, j) = self.opps[head];
        let open = potential - (1 << (j - 1));
        let neighbors = self.g.neighbors(v).to_vec();
        for w in neighbors {
            if self.used[w] {
                continue;
            }
            self.used[w] = true;
            self.cur.push((w, v, j));
            let mark = self.opps.len();
            for jj in (1..j).rev() {
                self.opps.push((w, jj));
            }
            self.dfs(head + 1, open + (1 << (j - 1)) - 1);
            self.opps.truncate(mark);
            self.cur.pop();
            self.used[w] = false;
            if self.finished {
                return;
            }
        }
        self.dfs(head + 1, open);
    }
}

fn tree_from_edges(root: usize, depth: usize, mode: TreeMode, e: &[(usize, usize, usize)]) -> ParityTree {
    ParityTree { root, depth, mode, edges: e.iter().map(|&(c, p, s)| (c, (p, s))).collect() }
}

/// Largest parity tree at `root` that fits in `d` slots.
///
/// Merged mode is solved exactly by the radius-`d` BFS ball. Serial mode uses
/// depth-first branch and bound; when the node budget runs out the best tree
/// found so far is returned with `exact == false`.
pub fn max_pauli_term(graph: &CouplingGraph, root: usize, d: usize, mode: TreeMode) -> Result<TermSearch> {
    if root >= graph.num_qubits() {
        return Err(Error::InvalidLayout(format!("root {root} not in graph")));
    }
    match mode {
        TreeMode::ParallelMerged => {
            let tree = bfs_tree(graph, root, d, TreeMode::ParallelMerged);
            Ok(TermSearch { size: tree.size(), tree, exact: true })
        }
        TreeMode::Serial => {
            let ball = graph.ball_size(root, d);
            if d >= usize::BITS as usize - 1 {
                return Err(Error::InvalidLayout(format!("depth {d} too large")));
            }
            let cap = ball.min(1usize << d);
            let mut used = vec![false; graph.num_qubits()];
            used[root] = true;
            let mut s = SerialSearch {
                g: graph,
                used,
                opps: (1..=d).rev().map(|j| (root, j)).collect(),
                cur: Vec::new(),
                best: Vec::new(),
                cap,
                budget: SEARCH_BUDGET,
                truncated: false,
                finished: cap <= 1,
            };
            let potential = (1usize << d) - 1;
            s.dfs(0, potential);
            let tree = tree_from_edges(root, d, TreeMode::Serial, &s.best);
            Ok(TermSearch { size: tree.size(), tree, exact: !s.truncated })
        }
    }
}

/// BFS tree of radius `d` with slot `d - depth + 1`; smallest index first.
fn bfs_tree(graph: &CouplingGraph, root: usize, d: usize, mode: TreeMode) -> ParityTree {
    let mut edges = BTreeMap::new();
    let mut depth = vec![None; graph.num_qubits()];
    depth[root] = Some(0usize);
    let mut q = VecDeque::from([root]);
    while let Some(v) = q.pop_front() {
        let dv = depth[v].expect("queued");
        if dv == d {
            continue;
        }
        for &w in graph.neighbors(v) {
            if depth[w].is_none() {
                depth[w] = Some(dv + 1);
                edges.insert(w, (v, d - dv));
                q.push_back(w);
            }
        }
    }
    ParityTree { root, depth: d, mode, edges }
}

/// Replay a tree's schedule against `graph` and the rules of its mode.
pub fn validate_tree(tree: &ParityTree, graph: &CouplingGraph) -> Result<()> {
    let bad = |m: String| Err(Error::NoParityTree(m));
    for (&c, &(p, s)) in &tree.edges {
        if !graph.has_edge(c, p) {
            return bad(format!("tree edge ({c}, {p}) is not a coupling"));
        }
        if s == 0 || s > tree.depth {
            return bad(format!("slot {s} of edge ({c}, {p}) outside 1..={}", tree.depth));
        }
        if c == tree.root {
            return bad("root has a parent".into());
        }
    }
    for &c in tree.edges.keys() {
        let mut v = c;
        let mut steps = 0;
        while v != tree.root {
            v = match tree.edges.get(&v) {
                Some(&(p, _)) => p,
                None => return bad(format!("vertex {v} is not connected to the root")),
            };
            steps += 1;
            if steps > tree.edges.len() {
                return bad("cycle in parent map".into());
            }
        }
    }
    for slot in 1..=tree.depth {
        let mut controls: BTreeMap<usize, usize> = BTreeMap::new();
        let mut targets: BTreeMap<usize, usize> = BTreeMap::new();
        for (&c, &(p, s)) in &tree.edges {
            if s == slot {
                *controls.entry(c).or_default() += 1;
                *targets.entry(p).or_default() += 1;
            }
        }
        for (&v, &k) in &controls {
            if k > 1 {
                return bad(format!("qubit {v} controls {k} edges in slot {slot}"));
            }
            if targets.contains_key(&v) {
                return bad(format!("qubit {v} is control and target in slot {slot}"));
            }
        }
        if tree.mode == TreeMode::Serial {
            if let Some((&v, &k)) = targets.iter().find(|(_, &k)| k > 1) {
                return bad(format!("qubit {v} absorbs {k} edges in slot {slot} in serial mode"));
            }
        }
    }
    for (&c, &(p, s)) in &tree.edges {
        for (&gc, &(gp, gs)) in &tree.edges {
            if gp == c && gs >= s {
                return bad(format!("edge ({gc}, {c}) at slot {gs} is not before ({c}, {p}) at slot {s}"));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GainRow {
    pub depth: usize,
    pub serial: usize,
    pub parallel: usize,
    pub gain: usize,
    pub root: usize,
    pub exact: bool,
}

/// Per depth, the root maximizing `parallel - serial` and its sizes.
pub fn gain_curve(graph: &CouplingGraph, depths: &[usize]) -> Result<Vec<GainRow>> {
    if graph.num_qubits() == 0 {
        return Err(Error::Empty("graph has no qubits".into()));
    }
    let mut rows = Vec::new();
    for &d in depths {
        let mut best: Option<GainRow> = None;
        for root in 0..graph.num_qubits() {
            let parallel = graph.ball_size(root, d);
            if let Some(b) = best {
                if parallel.saturating_sub(1) <= b.gain {
                    continue;
                }
            }
            let s = max_pauli_term(graph, root, d, TreeMode::Serial)?;
            let gain = parallel - s.size;
            if best.is_none_or(|b| gain > b.gain) {
                best = Some(GainRow { depth: d, serial: s.size, parallel, gain, root, exact: s.exact });
            }
        }
        rows.push(best.expect("at least one root"));
    }
    Ok(rows)
}

pub fn gain_curve_csv(rows: &[GainRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["depth", "serial", "parallel", "gain", "root", "exact"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.depth.to_string(),
            r.serial.to_string(),
            r.parallel.to_string(),
            r.gain.to_string(),
            r.root.to_string(),
            r.exact.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Serial slots for a fixed tree shape: children get distinct slots below
/// their parent, each as early as its own subtree allows.
fn serial_slots(root: usize, children: &BTreeMap<usize, Vec<usize>>) -> (BTreeMap<usize, usize>, usize) {
    fn visit(v: usize, ch: &BTreeMap<usize, Vec<usize>>, slots: &mut BTreeMap<usize, usize>) -> usize {
        let mut mins: Vec<(usize, usize)> =
            ch.get(&v).into_iter().flatten().map(|&c| (visit(c, ch, slots), c)).collect();
        mins.sort_unstable();
        let mut last = 0;
        for (m, c) in mins {
            let s = m.max(last + 1);
            slots.insert(c, s);
            last = s;
        }
        last + 1
    }
    let mut slots = BTreeMap::new();
    let root_slot = visit(root, children, &mut slots);
    (slots, root_slot - 1)
}

/// A parity tree at `root` covering exactly `support`, with as few slots as found.
pub fn spanning_parity_tree(
    graph: &CouplingGraph,
    support: &[usize],
    root: usize,
    mode: TreeMode,
) -> Result<ParityTree> {
    if !support.contains(&root) {
        return Err(Error::NoParityTree(format!("root {root} is not in the term's support")));
    }
    let sub = graph.induced(support)?;
    let dist = sub.distances(root);
    let ecc = support
        .iter()
        .map(|&v| dist[v])
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::NoParityTree(format!("support {support:?} is disconnected in the layout")))?
        .into_iter()
        .max()
        .unwrap_or(0);
    if mode == TreeMode::ParallelMerged || support.len() == 1 {
        return Ok(bfs_tree(&sub, root, ecc, mode));
    }
    let bfs = bfs_tree(&sub, root, ecc, mode);
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&c, &(p, _)) in &bfs.edges {
        children.entry(p).or_default().push(c);
    }
    let (slots, depth) = serial_slots(root, &children);
    let lower = ecc.max(support.len().next_power_of_two().trailing_zeros() as usize);
    for d in lower..depth {
        let s = max_pauli_term(&sub, root, d, TreeMode::Serial)?;
        if s.size == support.len() {
            return Ok(s.tree);
        }
    }
    let edges = bfs.edges.iter().map(|(&c, &(p, _))| (c, (p, slots[&c]))).collect();
    Ok(ParityTree { root, depth, mode, edges })
}

fn collection_layer(tree: &ParityTree, slot: usize, n: usize) -> Result<Circuit> {
    let mut out = Circuit::new(n);
    for (parent, kids) in tree.slot_groups(slot) {
        if tree.mode == TreeMode::ParallelMerged && kids.len() > 1 {
            out.extend(&gate_compiler::parallel_cnot_group(&kids, parent)?.widened(n)?)?;
        } else {
            for c in kids {
                out.push(Gate::Cnot { control: c, target: parent })?;
            }
        }
    }
    Ok(out)
}

/// Collection layers, `RZ(rz_angle)` on the root, then the mirrored layers.
pub fn tree_to_circuit(tree: &ParityTree, rz_angle: f64, num_qubits: usize) -> Result<Circuit> {
    let mut out = Circuit::new(num_qubits);
    let layers = (1..=tree.depth).map(|s| collection_layer(tree, s, num_qubits)).collect::<Result<Vec<_>>>()?;
    for l in &layers {
        out.extend(l)?;
    }
    out.push(Gate::single(SingleQubitKind::Rz(rz_angle), tree.root))?;
    for l in layers.iter().rev() {
        out.extend(l)?;
    }
    Ok(out)
}
