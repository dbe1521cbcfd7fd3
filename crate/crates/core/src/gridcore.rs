//! Grid data model, invariant checking, and the text file format.
//!
//! A grid is an immutable set of nodes (supply / demand / neutral, with
//! planar kilometre coordinates) and lines (reactance, optional capacity).
//! Line orientation is stored but semantically arbitrary: a negative flow
//! means flow against the stored direction. Parallel lines (same endpoints,
//! distinct ids) are permitted.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::scalar::Scalar;

/// Dense node identifier, unique within a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

/// Dense line identifier, unique within a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LineId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl LineId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for LineId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Planar coordinate in kilometres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point<S> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> Point<S> {
    pub fn new(x: S, y: S) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point<S>) -> S {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Node classification by net injection sign.
///
/// Zero-valued supplies and demands are normalized to `Neutral` at load
/// time; strictly negative values are rejected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeRole<S> {
    Supply { power: S },
    Demand { demand: S },
    Neutral,
}

impl<S: Scalar> NodeRole<S> {
    /// Net power injection: +P for supply, -D for demand, 0 for neutral.
    pub fn injection(&self) -> S {
        match *self {
            NodeRole::Supply { power } => power,
            NodeRole::Demand { demand } => -demand,
            NodeRole::Neutral => S::zero(),
        }
    }

    pub fn supply(&self) -> S {
        match *self {
            NodeRole::Supply { power } => power,
            _ => S::zero(),
        }
    }

    pub fn demand(&self) -> S {
        match *self {
            NodeRole::Demand { demand } => demand,
            _ => S::zero(),
        }
    }
}

/// A transmission line between two distinct nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line<S> {
    pub id: LineId,
    pub from: NodeId,
    pub to: NodeId,
    /// Strictly positive; defaults to the Euclidean segment length when a
    /// grid file omits it.
    pub reactance: S,
    /// Megawatt bound on |flow|; absent until provisioned.
    pub capacity: Option<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node<S> {
    pub id: NodeId,
    pub role: NodeRole<S>,
    pub coord: Point<S>,
}

/// Immutable grid topology. Safe to share across worker threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<S> {
    nodes: Vec<Node<S>>,
    lines: Vec<Line<S>>,
}

/// Parameters for the deterministic fixture generators.
#[derive(Clone, Debug, PartialEq)]
pub enum TopologySpec {
    MRing { areas: u32 },
    QGraph { paths: u32 },
    File { path: PathBuf },
}

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at line {line_no}: {message}")]
    Parse { line_no: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("component {component} unbalanced: supply {supply} vs demand {demand}")]
    Unbalanced {
        component: usize,
        supply: f64,
        demand: f64,
    },
}

impl<S: Scalar> Grid<S> {
    /// Build a grid from node and line records, enforcing all invariants.
    ///
    /// Records may come in any order but ids must be dense in `[0, N)`.
    /// Lines with no reactance default it to the segment length.
    pub fn new(mut nodes: Vec<Node<S>>, mut lines: Vec<Line<S>>) -> Result<Self, GridError> {
        nodes.sort_by_key(|n| n.id);
        lines.sort_by_key(|l| l.id);
        for (i, node) in nodes.iter().enumerate() {
            if node.id.index() != i {
                return Err(GridError::Validation(format!(
                    "node ids must be dense; expected id {i}, found {}",
                    node.id
                )));
            }
            if !node.coord.x.is_finite() || !node.coord.y.is_finite() {
                return Err(GridError::Validation(format!(
                    "node {} has non-finite coordinates",
                    node.id
                )));
            }
            match node.role {
                NodeRole::Supply { power } if !(power > S::zero()) => {
                    return Err(GridError::Validation(format!(
                        "node {} supply must be positive",
                        node.id
                    )));
                }
                NodeRole::Demand { demand } if !(demand > S::zero()) => {
                    return Err(GridError::Validation(format!(
                        "node {} demand must be positive",
                        node.id
                    )));
                }
                _ => {}
            }
        }
        let node_count = nodes.len();
        for (i, line) in lines.iter_mut().enumerate() {
            if line.id.index() != i {
                return Err(GridError::Validation(format!(
                    "line ids must be dense; expected id {i}, found {}",
                    line.id
                )));
            }
            for end in [line.from, line.to] {
                if end.index() >= node_count {
                    return Err(GridError::Validation(format!(
                        "line {} references missing node {}",
                        line.id, end
                    )));
                }
            }
            if line.from == line.to {
                return Err(GridError::Validation(format!(
                    "line {} is a self-loop on node {}",
                    line.id, line.from
                )));
            }
            if line.reactance <= S::zero() {
                // A zero sentinel means "derive from length".
                if line.reactance == S::zero() {
                    let len = nodes[line.from.index()]
                        .coord
                        .distance(nodes[line.to.index()].coord);
                    line.reactance = len;
                }
                if line.reactance <= S::zero() || !line.reactance.is_finite() {
                    return Err(GridError::Validation(format!(
                        "line {} reactance must be strictly positive",
                        line.id
                    )));
                }
            }
            if let Some(u) = line.capacity {
                if u < S::zero() || !u.is_finite() {
                    return Err(GridError::Validation(format!(
                        "line {} capacity must be finite and non-negative",
                        line.id
                    )));
                }
            }
        }
        Ok(Grid { nodes, lines })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn nodes(&self) -> &[Node<S>] {
        &self.nodes
    }

    pub fn lines(&self) -> &[Line<S>] {
        &self.lines
    }

    pub fn node(&self, id: NodeId) -> &Node<S> {
        &self.nodes[id.index()]
    }

    pub fn line(&self, id: LineId) -> &Line<S> {
        &self.lines[id.index()]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn line_ids(&self) -> impl Iterator<Item = LineId> + '_ {
        (0..self.lines.len() as u32).map(LineId)
    }

    /// Per-node demand vector (zero for non-demand nodes).
    pub fn demands(&self) -> Vec<S> {
        self.nodes.iter().map(|n| n.role.demand()).collect()
    }

    /// Per-node supply vector (zero for non-supply nodes).
    pub fn supplies(&self) -> Vec<S> {
        self.nodes.iter().map(|n| n.role.supply()).collect()
    }

    pub fn total_demand(&self) -> S {
        self.nodes
            .iter()
            .fold(S::zero(), |acc, n| acc + n.role.demand())
    }

    pub fn total_supply(&self) -> S {
        self.nodes
            .iter()
            .fold(S::zero(), |acc, n| acc + n.role.supply())
    }

    /// Copy of this grid with every line capacity replaced.
    pub fn with_capacities(&self, capacities: &[S]) -> Result<Grid<S>, GridError> {
        if capacities.len() != self.lines.len() {
            return Err(GridError::Validation(format!(
                "capacity vector length {} does not match line count {}",
                capacities.len(),
                self.lines.len()
            )));
        }
        let mut grid = self.clone();
        for (line, &u) in grid.lines.iter_mut().zip(capacities) {
            if u < S::zero() || !u.is_finite() {
                return Err(GridError::Validation(format!(
                    "line {} capacity must be finite and non-negative",
                    line.id
                )));
            }
            line.capacity = Some(u);
        }
        Ok(grid)
    }

    /// Per-line capacity vector; errors if any line is unprovisioned.
    pub fn capacities(&self) -> Result<Vec<S>, GridError> {
        self.lines
            .iter()
            .map(|l| {
                l.capacity.ok_or_else(|| {
                    GridError::Validation(format!("line {} has no capacity", l.id))
                })
            })
            .collect()
    }

    /// Euclidean length of a line's segment.
    pub fn line_length(&self, id: LineId) -> S {
        let line = self.line(id);
        self.nodes[line.from.index()]
            .coord
            .distance(self.nodes[line.to.index()].coord)
    }

    /// Errors unless total supply equals total demand in every connected
    /// component of the intact grid (1e-9 relative).
    pub fn require_balanced(&self) -> Result<(), GridError> {
        let report = balance_check(self);
        for comp in &report.components {
            if !comp.balanced {
                return Err(GridError::Unbalanced {
                    component: comp.component,
                    supply: comp.supply.to_f64().unwrap_or(f64::NAN),
                    demand: comp.demand.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }
}

/// Subset of a grid's lines, stored as a dense membership mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineSet {
    mask: Vec<bool>,
    count: usize,
}

impl LineSet {
    pub fn empty(line_count: usize) -> Self {
        LineSet {
            mask: vec![false; line_count],
            count: 0,
        }
    }

    pub fn full(line_count: usize) -> Self {
        LineSet {
            mask: vec![true; line_count],
            count: line_count,
        }
    }

    pub fn from_ids(line_count: usize, ids: &[LineId]) -> Self {
        let mut set = LineSet::empty(line_count);
        for &id in ids {
            set.insert(id);
        }
        set
    }

    pub fn capacity(&self) -> usize {
        self.mask.len()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[inline]
    pub fn contains(&self, id: LineId) -> bool {
        self.mask.get(id.index()).copied().unwrap_or(false)
    }

    pub fn insert(&mut self, id: LineId) {
        if !self.mask[id.index()] {
            self.mask[id.index()] = true;
            self.count += 1;
        }
    }

    pub fn remove(&mut self, id: LineId) {
        if self.mask[id.index()] {
            self.mask[id.index()] = false;
            self.count -= 1;
        }
    }

    /// Member ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = LineId> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| LineId(i as u32))
    }

    pub fn complement(&self) -> LineSet {
        LineSet {
            mask: self.mask.iter().map(|&m| !m).collect(),
            count: self.mask.len() - self.count,
        }
    }

    pub fn minus(&self, other: &LineSet) -> LineSet {
        let mask: Vec<bool> = self
            .mask
            .iter()
            .zip(&other.mask)
            .map(|(&a, &b)| a && !b)
            .collect();
        let count = mask.iter().filter(|&&m| m).count();
        LineSet { mask, count }
    }

    pub fn is_subset_of(&self, other: &LineSet) -> bool {
        self.mask
            .iter()
            .zip(&other.mask)
            .all(|(&a, &b)| !a || b)
    }
}

/// Partition of the node set induced by the surviving lines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    /// Component index per node, numbered by smallest member node id.
    pub assignment: Vec<usize>,
    pub count: usize,
}

impl Components {
    pub fn component_of(&self, node: NodeId) -> usize {
        self.assignment[node.index()]
    }

    /// Node ids grouped by component, each group ascending.
    pub fn members(&self) -> Vec<Vec<NodeId>> {
        let mut groups = vec![Vec::new(); self.count];
        for (i, &c) in self.assignment.iter().enumerate() {
            groups[c].push(NodeId(i as u32));
        }
        groups
    }
}

/// Connected components of the grid after removing `removed` lines.
///
/// Two nodes share a component iff they are joined by surviving lines.
pub fn connected_components<S: Scalar>(grid: &Grid<S>, removed: &LineSet) -> Components {
    components_with_alive(grid, &removed.complement())
}

/// Connected components of the subgraph spanned by `alive` lines.
pub fn components_with_alive<S: Scalar>(grid: &Grid<S>, alive: &LineSet) -> Components {
    debug_assert_eq!(alive.capacity(), grid.line_count());
    let n = grid.node_count();
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for line in grid.lines() {
        if alive.contains(line.id) {
            let a = find(&mut parent, line.from.index());
            let b = find(&mut parent, line.to.index());
            if a != b {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent[hi] = lo;
            }
        }
    }

    let mut assignment = vec![usize::MAX; n];
    let mut count = 0;
    for i in 0..n {
        let root = find(&mut parent, i);
        if assignment[root] == usize::MAX {
            assignment[root] = count;
            count += 1;
        }
        assignment[i] = assignment[root];
    }
    Components { assignment, count }
}

#[derive(Clone, Debug)]
pub struct ComponentBalance<S> {
    pub component: usize,
    pub nodes: Vec<NodeId>,
    pub supply: S,
    pub demand: S,
    /// False when the totals differ beyond 1e-9 relative.
    pub balanced: bool,
}

#[derive(Clone, Debug)]
pub struct BalanceReport<S> {
    pub components: Vec<ComponentBalance<S>>,
}

impl<S: Scalar> BalanceReport<S> {
    pub fn all_balanced(&self) -> bool {
        self.components.iter().all(|c| c.balanced)
    }
}

/// Per-component supply and demand totals of the intact grid.
pub fn balance_check<S: Scalar>(grid: &Grid<S>) -> BalanceReport<S> {
    let comps = connected_components(grid, &LineSet::empty(grid.line_count()));
    let mut supply = vec![S::zero(); comps.count];
    let mut demand = vec![S::zero(); comps.count];
    for node in grid.nodes() {
        let c = comps.component_of(node.id);
        supply[c] = supply[c] + node.role.supply();
        demand[c] = demand[c] + node.role.demand();
    }
    let tol = crate::scalar::default_tolerance::<S>();
    let members = comps.members();
    let components = (0..comps.count)
        .map(|c| {
            let scale = S::one().max(supply[c].max(demand[c]));
            ComponentBalance {
                component: c,
                nodes: members[c].clone(),
                supply: supply[c],
                demand: demand[c],
                balanced: (supply[c] - demand[c]).abs() <= tol * scale,
            }
        })
        .collect();
    BalanceReport { components }
}

// ---------------------------------------------------------------------------
// Text file format
//
//   node <id> <x_km> <y_km> supply <P> | demand <D> | neutral
//   line <id> <from> <to> [x=<reactance>] [u=<capacity>]
//
// `#` starts a comment, fields are whitespace-separated decimals.
// ---------------------------------------------------------------------------

/// Parse a grid from its text representation.
pub fn parse_grid<S: Scalar>(text: &str) -> Result<Grid<S>, GridError> {
    let mut nodes: Vec<Node<S>> = Vec::new();
    let mut lines: Vec<Line<S>> = Vec::new();
    let mut seen_nodes: BTreeSet<u32> = BTreeSet::new();
    let mut seen_lines: BTreeSet<u32> = BTreeSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let parse_err = |message: String| GridError::Parse { line_no, message };
        match fields[0] {
            "node" => {
                if fields.len() < 5 {
                    return Err(parse_err("node record needs: id x y role".into()));
                }
                let id: u32 = fields[1]
                    .parse()
                    .map_err(|_| parse_err(format!("bad node id {:?}", fields[1])))?;
                if !seen_nodes.insert(id) {
                    return Err(parse_err(format!("duplicate node id {id}")));
                }
                let x = parse_scalar::<S>(fields[2], line_no)?;
                let y = parse_scalar::<S>(fields[3], line_no)?;
                let role = match fields[4] {
                    "supply" => {
                        let p = parse_scalar::<S>(
                            fields.get(5).copied().ok_or_else(|| {
                                parse_err("supply role needs a power value".into())
                            })?,
                            line_no,
                        )?;
                        if p < S::zero() {
                            return Err(parse_err(format!("negative supply {p}")));
                        }
                        if p == S::zero() {
                            NodeRole::Neutral
                        } else {
                            NodeRole::Supply { power: p }
                        }
                    }
                    "demand" => {
                        let d = parse_scalar::<S>(
                            fields.get(5).copied().ok_or_else(|| {
                                parse_err("demand role needs a demand value".into())
                            })?,
                            line_no,
                        )?;
                        if d < S::zero() {
                            return Err(parse_err(format!("negative demand {d}")));
                        }
                        if d == S::zero() {
                            NodeRole::Neutral
                        } else {
                            NodeRole::Demand { demand: d }
                        }
                    }
                    "neutral" => NodeRole::Neutral,
                    other => return Err(parse_err(format!("unknown node role {other:?}"))),
                };
                nodes.push(Node {
                    id: NodeId(id),
                    role,
                    coord: Point::new(x, y),
                });
            }
            "line" => {
                if fields.len() < 4 {
                    return Err(parse_err("line record needs: id from to".into()));
                }
                let id: u32 = fields[1]
                    .parse()
                    .map_err(|_| parse_err(format!("bad line id {:?}", fields[1])))?;
                if !seen_lines.insert(id) {
                    return Err(parse_err(format!("duplicate line id {id}")));
                }
                let from: u32 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(format!("bad node id {:?}", fields[2])))?;
                let to: u32 = fields[3]
                    .parse()
                    .map_err(|_| parse_err(format!("bad node id {:?}", fields[3])))?;
                let mut reactance = S::zero(); // sentinel: derive from length
                let mut capacity = None;
                for field in &fields[4..] {
                    if let Some(v) = field.strip_prefix("x=") {
                        reactance = parse_scalar::<S>(v, line_no)?;
                    } else if let Some(v) = field.strip_prefix("u=") {
                        capacity = Some(parse_scalar::<S>(v, line_no)?);
                    } else {
                        return Err(parse_err(format!("unknown line field {field:?}")));
                    }
                }
                lines.push(Line {
                    id: LineId(id),
                    from: NodeId(from),
                    to: NodeId(to),
                    reactance,
                    capacity,
                });
            }
            other => return Err(parse_err(format!("unknown record type {other:?}"))),
        }
    }

    Grid::new(nodes, lines)
}

fn parse_scalar<S: Scalar>(text: &str, line_no: usize) -> Result<S, GridError> {
    let v: f64 = text.parse().map_err(|_| GridError::Parse {
        line_no,
        message: format!("bad number {text:?}"),
    })?;
    S::from_f64(v).ok_or_else(|| GridError::Parse {
        line_no,
        message: format!("number {text:?} not representable"),
    })
}

/// Load a grid from a file path.
pub fn load_grid<S: Scalar>(path: &Path) -> Result<Grid<S>, GridError> {
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_grid(&text)
}

/// Serialize a grid, records sorted by id, byte-stable.
pub fn grid_to_string<S: Scalar>(grid: &Grid<S>) -> String {
    let mut out = String::new();
    for node in grid.nodes() {
        let _ = write!(out, "node {} {} {}", node.id, node.coord.x, node.coord.y);
        match node.role {
            NodeRole::Supply { power } => {
                let _ = writeln!(out, " supply {power}");
            }
            NodeRole::Demand { demand } => {
                let _ = writeln!(out, " demand {demand}");
            }
            NodeRole::Neutral => {
                let _ = writeln!(out, " neutral");
            }
        }
    }
    for line in grid.lines() {
        let _ = write!(
            out,
            "line {} {} {} x={}",
            line.id, line.from, line.to, line.reactance
        );
        if let Some(u) = line.capacity {
            let _ = write!(out, " u={u}");
        }
        out.push('\n');
    }
    out
}

/// Write a grid to a file.
pub fn write_grid<S: Scalar>(grid: &Grid<S>, path: &Path) -> Result<(), GridError> {
    std::fs::write(path, grid_to_string(grid)).map_err(|source| GridError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-node injection vector: +P for supply, -D for demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Injection<S> {
    values: Vec<S>,
}

impl<S: Scalar> Injection<S> {
    pub fn new(values: Vec<S>) -> Self {
        Injection { values }
    }

    /// Injections implied by the grid's declared roles.
    pub fn from_roles(grid: &Grid<S>) -> Self {
        Injection {
            values: grid.nodes().iter().map(|n| n.role.injection()).collect(),
        }
    }

    /// Injections from effective (post-shedding) demand and supply vectors.
    pub fn from_effective(supply: &[S], demand: &[S]) -> Self {
        Injection {
            values: supply
                .iter()
                .zip(demand)
                .map(|(&p, &d)| p - d)
                .collect(),
        }
    }

    #[inline]
    pub fn value(&self, node: NodeId) -> S {
        self.values[node.index()]
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, factor: S) -> Injection<S> {
        Injection {
            values: self.values.iter().map(|&v| v * factor).collect(),
        }
    }

    pub fn linear_combination(a: S, x: &Injection<S>, b: S, y: &Injection<S>) -> Injection<S> {
        Injection {
            values: x
                .values
                .iter()
                .zip(&y.values)
                .map(|(&xi, &yi)| a * xi + b * yi)
                .collect(),
        }
    }
}
