//! Linearized power-flow solver.
//!
//! Line flow is eliminated via `f = (theta_i - theta_j) / x`, which turns
//! flow conservation into a weighted-Laplacian system `L theta = injection`
//! per connected component. One node per component (the smallest id by
//! default) is pinned to phase zero and the reduced symmetric
//! positive-definite system is solved by a dense LDL^T factorization.
//! Flows are unique; phases are unique up to the pinned constant.

use crate::gridcore::{components_with_alive, Grid, Injection, LineId, LineSet, NodeId};
use crate::scalar::{cast, default_tolerance, Scalar};

#[derive(Debug, thiserror::Error)]
pub enum DcflowError {
    #[error("component {component} injection imbalance {imbalance} exceeds tolerance")]
    UnbalancedComponent { component: usize, imbalance: f64 },
    #[error("singular system in component {component} (pivot {pivot})")]
    Singular { component: usize, pivot: f64 },
    #[error("conservation residual {residual} at node {node} exceeds tolerance")]
    ResidualExceeded { node: NodeId, residual: f64 },
    #[error("path leaves the alive subgraph at line {0}")]
    DeadLine(LineId),
    #[error("line {line} is not incident to node {node}")]
    DisconnectedPath { node: NodeId, line: LineId },
    #[error("injection length {got} does not match node count {want}")]
    BadInjection { got: usize, want: usize },
}

/// Which node of each component gets phase zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReferenceRule {
    #[default]
    SmallestId,
    LargestId,
}

/// Solver tolerances; `relative` scales with max(1, |injection|).
#[derive(Clone, Copy, Debug)]
pub struct Tolerances<S> {
    pub relative: S,
}

impl<S: Scalar> Default for Tolerances<S> {
    fn default() -> Self {
        Tolerances {
            relative: default_tolerance(),
        }
    }
}

/// Signed per-line flows and per-node phase angles.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSolution<S> {
    /// Flow along each line id; zero for lines outside the alive set.
    pub flow: Vec<S>,
    /// Phase angle per node; the reference node of each component is zero.
    pub phase: Vec<S>,
    alive: LineSet,
}

impl<S: Scalar> FlowSolution<S> {
    pub fn alive(&self) -> &LineSet {
        &self.alive
    }

    /// All-zero solution over an explicit alive set.
    pub fn zero(grid: &Grid<S>, alive: LineSet) -> Self {
        FlowSolution {
            flow: vec![S::zero(); grid.line_count()],
            phase: vec![S::zero(); grid.node_count()],
            alive,
        }
    }

    pub fn max_abs_flow(&self) -> S {
        self.flow
            .iter()
            .fold(S::zero(), |acc, &f| acc.max(f.abs()))
    }
}

/// Solve the flow equations on the alive subgraph for a balanced injection.
pub fn solve<S: Scalar>(
    grid: &Grid<S>,
    alive: &LineSet,
    injection: &Injection<S>,
) -> Result<FlowSolution<S>, DcflowError> {
    solve_with(grid, alive, injection, ReferenceRule::SmallestId, &Tolerances::default())
}

/// `solve` with an explicit reference-node rule and tolerances.
pub fn solve_with<S: Scalar>(
    grid: &Grid<S>,
    alive: &LineSet,
    injection: &Injection<S>,
    reference: ReferenceRule,
    tol: &Tolerances<S>,
) -> Result<FlowSolution<S>, DcflowError> {
    if injection.len() != grid.node_count() {
        return Err(DcflowError::BadInjection {
            got: injection.len(),
            want: grid.node_count(),
        });
    }
    let comps = components_with_alive(grid, alive);
    let members = comps.members();

    // Balance and triviality per component.
    let mut solve_component = vec![false; comps.count];
    for (c, nodes) in members.iter().enumerate() {
        let mut sum = S::zero();
        let mut total_abs = S::zero();
        for &n in nodes {
            let v = injection.value(n);
            sum = sum + v;
            total_abs = total_abs + v.abs();
        }
        if total_abs == S::zero() {
            continue; // zero injection forces the zero flow solution
        }
        let scale = S::one().max(total_abs * cast(0.5)); // ~ total demand
        if sum.abs() > tol.relative * scale {
            return Err(DcflowError::UnbalancedComponent {
                component: c,
                imbalance: sum.to_f64().unwrap_or(f64::NAN),
            });
        }
        solve_component[c] = true;
    }

    // Adjacency of alive lines per node.
    let mut incident: Vec<Vec<LineId>> = vec![Vec::new(); grid.node_count()];
    for line in grid.lines() {
        if alive.contains(line.id) {
            incident[line.from.index()].push(line.id);
            incident[line.to.index()].push(line.id);
        }
    }

    let mut phase = vec![S::zero(); grid.node_count()];
    for (c, nodes) in members.iter().enumerate() {
        if !solve_component[c] || nodes.len() < 2 {
            continue;
        }
        let reference_node = match reference {
            ReferenceRule::SmallestId => nodes[0],
            ReferenceRule::LargestId => *nodes.last().unwrap(),
        };
        // Local index map excluding the reference node.
        let mut local = vec![usize::MAX; grid.node_count()];
        let mut unknowns: Vec<NodeId> = Vec::with_capacity(nodes.len() - 1);
        for &n in nodes {
            if n != reference_node {
                local[n.index()] = unknowns.len();
                unknowns.push(n);
            }
        }
        let k = unknowns.len();
        let mut matrix = vec![S::zero(); k * k];
        let mut rhs: Vec<S> = unknowns.iter().map(|&n| injection.value(n)).collect();

        let mut seen = vec![false; grid.line_count()];
        for &n in nodes {
            for &lid in &incident[n.index()] {
                if seen[lid.index()] {
                    continue;
                }
                seen[lid.index()] = true;
                let line = grid.line(lid);
                let w = S::one() / line.reactance;
                let a = local[line.from.index()];
                let b = local[line.to.index()];
                if a != usize::MAX {
                    matrix[a * k + a] = matrix[a * k + a] + w;
                }
                if b != usize::MAX {
                    matrix[b * k + b] = matrix[b * k + b] + w;
                }
                if a != usize::MAX && b != usize::MAX {
                    matrix[a * k + b] = matrix[a * k + b] - w;
                    matrix[b * k + a] = matrix[b * k + a] - w;
                }
            }
        }

        ldlt_solve(&mut matrix, &mut rhs, k).map_err(|pivot| DcflowError::Singular {
            component: c,
            pivot,
        })?;
        for (i, &n) in unknowns.iter().enumerate() {
            phase[n.index()] = rhs[i];
        }
    }

    let mut flow = vec![S::zero(); grid.line_count()];
    for line in grid.lines() {
        if alive.contains(line.id) {
            flow[line.id.index()] =
                (phase[line.from.index()] - phase[line.to.index()]) / line.reactance;
        }
    }

    let solution = FlowSolution {
        flow,
        phase,
        alive: alive.clone(),
    };
    check_conservation(grid, &solution, injection, tol)?;
    Ok(solution)
}

/// In-place LDL^T factorization and solve of a dense SPD system.
///
/// Returns the offending pivot if the matrix is not positive definite.
fn ldlt_solve<S: Scalar>(a: &mut [S], b: &mut [S], n: usize) -> Result<(), f64> {
    if n == 0 {
        return Ok(());
    }
    let mut max_diag = S::zero();
    for i in 0..n {
        max_diag = max_diag.max(a[i * n + i].abs());
    }
    let pivot_floor = max_diag * cast(1e-14);

    // Factor A = L D L^T with L unit lower-triangular stored in-place.
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            let l = a[j * n + p];
            d = d - l * l * a[p * n + p];
        }
        if !(d > pivot_floor) {
            return Err(d.to_f64().unwrap_or(f64::NAN));
        }
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for p in 0..j {
                v = v - a[i * n + p] * a[j * n + p] * a[p * n + p];
            }
            a[i * n + j] = v / d;
        }
    }
    // Forward substitution L y = b.
    for i in 0..n {
        let mut v = b[i];
        for p in 0..i {
            v = v - a[i * n + p] * b[p];
        }
        b[i] = v;
    }
    // Diagonal D z = y.
    for i in 0..n {
        b[i] = b[i] / a[i * n + i];
    }
    // Back substitution L^T x = z.
    for i in (0..n).rev() {
        let mut v = b[i];
        for p in (i + 1)..n {
            v = v - a[p * n + i] * b[p];
        }
        b[i] = v;
    }
    Ok(())
}

fn check_conservation<S: Scalar>(
    grid: &Grid<S>,
    solution: &FlowSolution<S>,
    injection: &Injection<S>,
    tol: &Tolerances<S>,
) -> Result<(), DcflowError> {
    let mut residual = vec![S::zero(); grid.node_count()];
    for line in grid.lines() {
        if solution.alive.contains(line.id) {
            let f = solution.flow[line.id.index()];
            residual[line.from.index()] = residual[line.from.index()] + f;
            residual[line.to.index()] = residual[line.to.index()] - f;
        }
    }
    for node in grid.node_ids() {
        let inj = injection.value(node);
        let r = (residual[node.index()] - inj).abs();
        if r > tol.relative * S::one().max(inj.abs()) {
            return Err(DcflowError::ResidualExceeded {
                node,
                residual: r.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(())
}

/// A walk through the grid: a start node and the lines traversed in order.
#[derive(Clone, Debug)]
pub struct NodePath {
    pub start: NodeId,
    pub lines: Vec<LineId>,
}

impl NodePath {
    pub fn new(start: NodeId, lines: Vec<LineId>) -> Self {
        NodePath { start, lines }
    }
}

/// Signed sum of flow-reactance products along a path.
///
/// Flow sign is taken relative to the traversal direction, so for two paths
/// with the same endpoints the sums agree (they both equal the phase drop).
pub fn path_sum<S: Scalar>(
    solution: &FlowSolution<S>,
    grid: &Grid<S>,
    path: &NodePath,
) -> Result<S, DcflowError> {
    let mut current = path.start;
    let mut sum = S::zero();
    for &lid in &path.lines {
        if !solution.alive.contains(lid) {
            return Err(DcflowError::DeadLine(lid));
        }
        let line = grid.line(lid);
        let term = solution.flow[lid.index()] * line.reactance;
        if line.from == current {
            sum = sum + term;
            current = line.to;
        } else if line.to == current {
            sum = sum - term;
            current = line.from;
        } else {
            return Err(DcflowError::DisconnectedPath {
                node: current,
                line: lid,
            });
        }
    }
    Ok(sum)
}
