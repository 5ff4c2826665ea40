//! Lattice carriers: matter sites on vertices, gauge qubits on links.
//!
//! Vertices and links carry separate dense id spaces. Vertex ids are row-major
//! for grids; link ids follow `(min endpoint, max endpoint)` sorted order,
//! except that a ring's wrap link is always the last id so that "link `l`
//! connects matter sites `l` and `l+1`" holds for every non-wrap link.
//!
//! Grids also carry doubled integer coordinates: a vertex at row `r`, column
//! `c` sits at `(2r, 2c)` and a link sits at the sum of its endpoints, i.e.
//! its midpoint in doubled units. This keeps every distance computation in
//! exact integer arithmetic.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Index of a matter vertex.
pub type VertexId = usize;
/// Index of a gauge link.
pub type LinkId = usize;

/// Which qubit register a simulation acts on.
///
/// `Lgt` keeps both matter and gauge qubits; `Dual` keeps gauge qubits only,
/// with matter charges demoted to classical sector labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Lgt,
    Dual,
}

/// Shape requested from [`LatticeGraph::build`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatticeSpec {
    /// Periodic chain of `n_matter` sites and as many links.
    Ring1d { n_matter: usize },
    /// Open chain of `n_matter` sites and `n_matter - 1` links.
    OpenChain1d { n_matter: usize },
    /// Rectangular grid of `rows x cols` matter sites.
    Grid2d { rows: usize, cols: usize },
    /// Adjacency list loaded from a text file (one `u v` pair per line).
    Custom { path: String },
}

/// An undirected link between two matter vertices, stored as `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub a: VertexId,
    pub b: VertexId,
}

/// Either endpoint kind of the lattice metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entity {
    Vertex(VertexId),
    Link(LinkId),
}

/// A validated simple connected graph with deterministic ids.
#[derive(Debug, Clone)]
pub struct LatticeGraph {
    kind: LatticeKind,
    n_vertices: usize,
    links: Vec<Link>,
    /// Per vertex: incident `(link, neighbor)` pairs sorted by link id.
    adj: Vec<Vec<(LinkId, VertexId)>>,
    /// Doubled integer coordinates per vertex, when the shape embeds in a plane.
    coords: Option<Vec<(i64, i64)>>,
    /// The periodic closing link of a ring, if any.
    wrap_link: Option<LinkId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LatticeKind {
    Ring,
    Chain,
    Grid { rows: usize, cols: usize },
    Custom,
}

impl fmt::Display for LatticeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LatticeKind::Ring => write!(f, "ring1d({})", self.n_vertices),
            LatticeKind::Chain => write!(f, "open_chain1d({})", self.n_vertices),
            LatticeKind::Grid { rows, cols } => write!(f, "grid2d({rows}x{cols})"),
            LatticeKind::Custom => write!(f, "custom({}v,{}l)", self.n_vertices, self.links.len()),
        }
    }
}

impl LatticeGraph {
    /// Builds the graph described by `spec`, validating simplicity and
    /// connectivity.
    pub fn build(spec: &LatticeSpec) -> Result<Self> {
        match spec {
            LatticeSpec::Ring1d { n_matter } => Self::ring(*n_matter),
            LatticeSpec::OpenChain1d { n_matter } => Self::chain(*n_matter),
            LatticeSpec::Grid2d { rows, cols } => Self::grid(*rows, *cols),
            LatticeSpec::Custom { path } => Self::from_adjacency_file(Path::new(path)),
        }
    }

    /// Periodic 1d lattice. Needs `n >= 3`: a 2-ring would require a pair of
    /// parallel links, which a simple graph cannot hold.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Lattice(format!(
                "ring1d needs at least 3 matter sites (got {n}); a 2-ring would \
                 carry parallel links"
            )));
        }
        // Non-wrap links are already (min,max)-sorted; the wrap link (0, n-1)
        // goes last by convention so link l always touches matter site l.
        let mut links: Vec<Link> = (0..n - 1).map(|v| Link { a: v, b: v + 1 }).collect();
        links.push(Link { a: 0, b: n - 1 });
        let wrap = links.len() - 1;
        Self::assemble(LatticeKind::Ring, n, links, None, Some(wrap))
    }

    /// Open 1d lattice with matter sites on both ends.
    pub fn chain(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Lattice(format!(
                "open_chain1d needs at least 2 matter sites (got {n})"
            )));
        }
        let links = (0..n - 1).map(|v| Link { a: v, b: v + 1 }).collect();
        let coords = (0..n).map(|c| (0, 2 * c as i64)).collect();
        Self::assemble(LatticeKind::Chain, n, links, Some(coords), None)
    }

    /// Rectangular grid with row-major vertex ids and doubled coordinates.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::Lattice(format!(
                "grid2d needs at least 2x2 matter sites (got {rows}x{cols})"
            )));
        }
        let id = |r: usize, c: usize| r * cols + c;
        let mut links = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    links.push(Link { a: id(r, c), b: id(r, c + 1) });
                }
                if r + 1 < rows {
                    links.push(Link { a: id(r, c), b: id(r + 1, c) });
                }
            }
        }
        links.sort_by_key(|l| (l.a, l.b));
        let coords = (0..rows * cols)
            .map(|v| (2 * (v / cols) as i64, 2 * (v % cols) as i64))
            .collect();
        Self::assemble(LatticeKind::Grid { rows, cols }, rows * cols, links, Some(coords), None)
    }

    /// Parses a custom adjacency list: one `u v` pair per line, `#` comments
    /// and blank lines allowed. Vertex ids must densely cover `0..n`.
    pub fn from_adjacency_text(text: &str) -> Result<Self> {
        let mut links = Vec::new();
        let mut max_vertex = 0usize;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (u, v) = match (it.next(), it.next(), it.next()) {
                (Some(u), Some(v), None) => (u, v),
                _ => {
                    return Err(Error::Lattice(format!(
                        "adjacency line {}: expected exactly two vertex ids, got {raw:?}",
                        lineno + 1
                    )))
                }
            };
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| {
                    Error::Lattice(format!("adjacency line {}: bad vertex id {s:?}", lineno + 1))
                })
            };
            let (u, v) = (parse(u)?, parse(v)?);
            if u == v {
                return Err(Error::Lattice(format!(
                    "adjacency line {}: self-loop on vertex {u}",
                    lineno + 1
                )));
            }
            max_vertex = max_vertex.max(u).max(v);
            links.push(Link { a: u.min(v), b: u.max(v) });
        }
        if links.is_empty() {
            return Err(Error::Lattice("adjacency text defines no links".into()));
        }
        links.sort_by_key(|l| (l.a, l.b));
        for w in links.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Lattice(format!(
                    "parallel link {}-{} listed twice",
                    w[0].a, w[0].b
                )));
            }
        }
        Self::assemble(LatticeKind::Custom, max_vertex + 1, links, None, None)
    }

    /// Reads [`Self::from_adjacency_text`] input from a file.
    pub fn from_adjacency_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_adjacency_text(&text)
    }

    /// Renders the adjacency list in the format accepted by
    /// [`Self::from_adjacency_text`].
    pub fn to_adjacency_text(&self) -> String {
        let mut out = String::from("# adjacency list: one \"u v\" link per line\n");
        for l in &self.links {
            out.push_str(&format!("{} {}\n", l.a, l.b));
        }
        out
    }

    fn assemble(
        kind: LatticeKind,
        n_vertices: usize,
        links: Vec<Link>,
        coords: Option<Vec<(i64, i64)>>,
        wrap_link: Option<LinkId>,
    ) -> Result<Self> {
        let mut adj: Vec<Vec<(LinkId, VertexId)>> = vec![Vec::new(); n_vertices];
        for (id, l) in links.iter().enumerate() {
            if l.a >= n_vertices || l.b >= n_vertices {
                return Err(Error::Lattice(format!(
                    "link {}-{} references a vertex outside 0..{n_vertices}",
                    l.a, l.b
                )));
            }
            adj[l.a].push((id, l.b));
            adj[l.b].push((id, l.a));
        }
        // BFS connectivity check; isolated vertices also land here.
        let mut seen = vec![false; n_vertices];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &(_, w) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::Lattice(format!(
                "graph is disconnected: vertex {v} is unreachable from vertex 0"
            )));
        }
        Ok(Self { kind, n_vertices, links, adj, coords, wrap_link })
    }

    // ----- basic accessors -------------------------------------------------

    /// Number of matter sites.
    pub fn n_matter(&self) -> usize {
        self.n_vertices
    }

    /// Number of gauge links.
    pub fn n_gauge(&self) -> usize {
        self.links.len()
    }

    /// All links in id order.
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Endpoints `(a, b)` of a link with `a < b`.
    pub fn link(&self, l: LinkId) -> Link {
        self.links[l]
    }

    /// Incident `(link, neighbor)` pairs of a vertex, sorted by link id.
    pub fn incident(&self, v: VertexId) -> &[(LinkId, VertexId)] {
        &self.adj[v]
    }

    /// Vertex degree.
    pub fn degree(&self, v: VertexId) -> usize {
        self.adj[v].len()
    }

    /// Link id joining `u` and `v`, if present.
    pub fn link_between(&self, u: VertexId, v: VertexId) -> Option<LinkId> {
        self.adj[u].iter().find(|&&(_, w)| w == v).map(|&(l, _)| l)
    }

    /// The periodic closing link of a ring.
    pub fn wrap_link(&self) -> Option<LinkId> {
        self.wrap_link
    }

    /// Whether 1d entropy windows should wrap around the chain end.
    pub fn is_periodic(&self) -> bool {
        matches!(self.kind, LatticeKind::Ring)
    }

    /// Conventional "center" link id used as a perturbation target.
    pub fn center_link(&self) -> LinkId {
        self.links.len() / 2
    }

    /// Doubled integer coordinates of an entity, when the lattice has them.
    pub fn coords_doubled(&self, e: Entity) -> Result<(i64, i64)> {
        let coords = self.coords.as_ref().ok_or_else(|| {
            Error::Lattice(format!("{self} carries no coordinates; metric undefined; use graph distance"))
        })?;
        Ok(match e {
            Entity::Vertex(v) => coords[v],
            Entity::Link(l) => {
                // midpoint of the endpoints; exact because adjacent vertices
                // differ by 2 in one doubled coordinate and 0 in the other
                let Link { a, b } = self.links[l];
                ((coords[a].0 + coords[b].0) / 2, (coords[a].1 + coords[b].1) / 2)
            }
        })
    }

    /// Manhattan distance in doubled integer units (vertex spacing = 2).
    pub fn manhattan_doubled(&self, a: Entity, b: Entity) -> Result<i64> {
        let (ax, ay) = self.coords_doubled(a)?;
        let (bx, by) = self.coords_doubled(b)?;
        Ok((ax - bx).abs() + (ay - by).abs())
    }

    /// Manhattan distance in lattice units, rounded up when an endpoint sits
    /// on a link midpoint (so vertex-vertex distances stay exact integers).
    pub fn manhattan(&self, a: Entity, b: Entity) -> Result<i64> {
        Ok((self.manhattan_doubled(a, b)? + 1) / 2)
    }

    // ----- qubit register layout -------------------------------------------

    /// Qubit count of a register frame.
    pub fn n_qubits(&self, frame: Frame) -> usize {
        match frame {
            Frame::Lgt => self.n_vertices + self.links.len(),
            Frame::Dual => self.links.len(),
        }
    }

    /// Global qubit id of a matter site (LGT frame only).
    pub fn matter_qubit(&self, v: VertexId) -> usize {
        v
    }

    /// Global qubit id of a gauge link in the given frame.
    pub fn gauge_qubit(&self, l: LinkId, frame: Frame) -> usize {
        match frame {
            Frame::Lgt => self.n_vertices + l,
            Frame::Dual => l,
        }
    }

    /// 1d chain ordering of the frame's qubits for matrix-product work.
    ///
    /// Chains and rings interleave matter and gauge (`m0 g0 m1 g1 ...`), with
    /// a ring's wrap link last. Grids walk anti-diagonals starting from the
    /// top-left corner, running up and to the right within each anti-diagonal.
    /// Coordinate-free custom graphs fall back to id order.
    pub fn snake_order(&self, frame: Frame) -> SnakeOrder {
        let order: Vec<usize> = match self.kind {
            LatticeKind::Ring | LatticeKind::Chain => {
                let mut order = Vec::with_capacity(self.n_qubits(frame));
                match frame {
                    Frame::Lgt => {
                        for v in 0..self.n_vertices {
                            order.push(self.matter_qubit(v));
                            if v < self.links.len() {
                                order.push(self.gauge_qubit(v, frame));
                            }
                        }
                    }
                    Frame::Dual => order.extend(0..self.links.len()),
                }
                order
            }
            LatticeKind::Grid { .. } => {
                let mut keyed: Vec<((i64, i64), usize)> = Vec::new();
                if frame == Frame::Lgt {
                    for v in 0..self.n_vertices {
                        let (x, y) = self.coords_doubled(Entity::Vertex(v)).expect("grid coords");
                        keyed.push(((x + y, y), self.matter_qubit(v)));
                    }
                }
                for l in 0..self.links.len() {
                    let (x, y) = self.coords_doubled(Entity::Link(l)).expect("grid coords");
                    keyed.push(((x + y, y), self.gauge_qubit(l, frame)));
                }
                keyed.sort_by_key(|&(k, _)| k);
                keyed.into_iter().map(|(_, q)| q).collect()
            }
            LatticeKind::Custom => (0..self.n_qubits(frame)).collect(),
        };
        SnakeOrder::new(order)
    }
}

/// Bijection between chain positions and qubit ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnakeOrder {
    /// `order[pos]` = qubit id at chain position `pos`.
    order: Vec<usize>,
    /// `position[qubit]` = chain position of a qubit.
    position: Vec<usize>,
}

impl SnakeOrder {
    /// Wraps a permutation of `0..n`; panics if `order` is not one.
    pub fn new(order: Vec<usize>) -> Self {
        let mut position = vec![usize::MAX; order.len()];
        for (pos, &q) in order.iter().enumerate() {
            assert!(q < order.len(), "qubit id {q} out of range");
            assert!(position[q] == usize::MAX, "qubit id {q} repeated");
            position[q] = pos;
        }
        Self { order, position }
    }

    /// Identity ordering on `n` qubits.
    pub fn identity(n: usize) -> Self {
        Self::new((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Qubit id sitting at a chain position.
    pub fn qubit_at(&self, pos: usize) -> usize {
        self.order[pos]
    }

    /// Chain position of a qubit id.
    pub fn position_of(&self, qubit: usize) -> usize {
        self.position[qubit]
    }

    /// Chain positions in order, as qubit ids.
    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }
}

// ---------------------------------------------------------------------------
