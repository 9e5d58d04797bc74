//! Agents on an undirected graph running the projected flow with explicit
//! message passing.
//!
//! Agent `i` owns `x_i`, its objective term, the equality rows it appears in
//! and, for rows it owns, the multiplier `λ_ℓ`. Each synchronous round:
//!
//! 1. every agent sends `x_i` to its neighbours;
//! 2. every agent evaluates its rows and its unprojected direction;
//! 3. multiplier owners step `λ_ℓ` and send it to the other row members;
//! 4. for each group of overlapping inequality constraints, members send their
//!    direction to the group leader (its lowest agent), which projects and
//!    returns the corrections;
//! 5. agents advance, members send tentative states to the leader, which pulls
//!    them back into the feasible set and returns them.
//!
//! Reads are served from per-agent inboxes only; reading a value that was
//! never delivered is reported as [`Error::LocalityViolation`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::dynamics::{
    advance, check_feasible, clip_group, coordinate_direction, group_constraints, project_group,
    run_steps, ConstraintGroup, Flow, IntegratorConfig, StepOutcome, Trajectory,
};
use crate::error::{check_len, Error, Result};
use crate::lagrangian::{check_mu, coordinate_drive, row_pull, PrimalDualState, ReferenceSaddle};
use crate::problem::{row_residual, ConvexProgram, ObjectiveTerm};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut sets = vec![BTreeSet::new(); n];
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::DimensionMismatch {
                    what: "edge endpoint",
                    expected: n,
                    got: a.max(b),
                });
            }
            if a == b {
                return Err(Error::InvalidParameter(format!("self-loop at vertex {a}")));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        Ok(Self {
            n,
            adj: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("path is well formed")
    }

    pub fn complete(n: usize) -> Self {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))).expect("complete graph")
    }

    /// Graph in which every constraint's variables form a clique; for a
    /// square equality matrix each agent is also linked to the variables of
    /// its own row.
    pub fn induced_by_program(prog: &ConvexProgram) -> Self {
        let mut edges = Vec::new();
        let mut clique = |vars: &[usize]| {
            for (a, &i) in vars.iter().enumerate() {
                for &j in &vars[a + 1..] {
                    edges.push((i, j));
                }
            }
        };
        for r in 0..prog.p() {
            clique(&prog.a().row_support(r));
        }
        for g in prog.inequalities() {
            clique(&g.support());
        }
        if prog.p() == prog.n() {
            for &(r, c, _) in prog.a().triplets() {
                if r != c {
                    edges.push((r, c));
                }
            }
        }
        Self::new(prog.n(), edges).expect("program indices are in range")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &self.adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// First missing edge inside `vars`, if any.
    fn missing_edge(&self, vars: &[usize]) -> Option<(usize, usize)> {
        for (a, &i) in vars.iter().enumerate() {
            for &j in &vars[a + 1..] {
                if !self.has_edge(i, j) {
                    return Some((i, j));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatibilityReport {
    pub connected: bool,
    /// Equality rows whose variables are not a clique, with a missing edge.
    pub bad_rows: Vec<(usize, (usize, usize))>,
    /// Inequalities whose variables are not a clique, with a missing edge.
    pub bad_inequalities: Vec<(usize, (usize, usize))>,
}

impl CompatibilityReport {
    pub fn is_compatible(&self) -> bool {
        self.bad_rows.is_empty() && self.bad_inequalities.is_empty()
    }
}

pub fn check_compatibility(prog: &ConvexProgram, graph: &Graph) -> Result<CompatibilityReport> {
    check_len("graph vertices", prog.n(), graph.n())?;
    let bad_rows = (0..prog.p())
        .filter_map(|r| graph.missing_edge(&prog.a().row_support(r)).map(|e| (r, e)))
        .collect();
    let bad_inequalities = prog
        .inequalities()
        .iter()
        .enumerate()
        .filter_map(|(k, g)| graph.missing_edge(&g.support()).map(|e| (k, e)))
        .collect();
    Ok(CompatibilityReport {
        connected: graph.is_connected(),
        bad_rows,
        bad_inequalities,
    })
}

/// Owner of each equality row: its lowest participating agent.
pub fn assign_multipliers(prog: &ConvexProgram, graph: &Graph) -> Result<Vec<usize>> {
    check_len("graph vertices", prog.n(), graph.n())?;
    (0..prog.p())
        .map(|r| {
            prog.a()
                .row(r)
                .next()
                .map(|(c, _)| c)
                .ok_or(Error::UncoveredRow { row: r })
        })
        .collect()
}

/// Scalars sent in one round: states to neighbours, multipliers to row
/// members, and four exchanges per non-leader member of each constraint
/// group (direction up, correction down, tentative state up, clipped state
/// down).
pub fn messages_per_round(prog: &ConvexProgram, graph: &Graph) -> usize {
    let rows: usize = (0..prog.p())
        .map(|r| prog.a().row(r).count().saturating_sub(1))
        .sum();
    let all: Vec<usize> = (0..prog.m()).collect();
    let groups: usize = group_constraints(prog.inequalities(), &all)
        .iter()
        .map(|g| 4 * (g.vars.len() - 1))
        .sum();
    2 * graph.edge_count() + rows + groups
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MessageStats {
    /// Scalars sent in each round, starting with round 1.
    pub scalars_per_round: Vec<usize>,
}

impl MessageStats {
    pub const BYTES_PER_SCALAR: usize = 8;

    pub fn total(&self) -> usize {
        self.scalars_per_round.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,scalars_sent,bytes_equiv\n");
        for (r, s) in self.scalars_per_round.iter().enumerate() {
            writeln!(out, "{},{},{}", r + 1, s, s * Self::BYTES_PER_SCALAR).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

#[derive(Debug, Clone)]
struct RowView {
    entries: Vec<(usize, f64)>,
    b: f64,
}

/// Everything agent `i` may read.
#[derive(Debug, Clone)]
struct Agent {
    id: usize,
    term: ObjectiveTerm,
    kinks: Vec<f64>,
    x: f64,
    /// `(row, a_ℓi)` ascending.
    column: Vec<(usize, f64)>,
    rows: BTreeMap<usize, RowView>,
    /// Latest multiplier for each row the agent appears in.
    lambda: BTreeMap<usize, f64>,
    owned: Vec<usize>,
    neighbors: Vec<usize>,
    inbox_x: BTreeMap<usize, f64>,
    inbox_lambda: BTreeMap<usize, f64>,
    inbox_dir: BTreeMap<usize, f64>,
}

impl Agent {
    fn read_x(&self, j: usize) -> Result<f64> {
        if j == self.id {
            return Ok(self.x);
        }
        self.inbox_x
            .get(&j)
            .copied()
            .ok_or(Error::LocalityViolation {
                agent: self.id,
                index: j,
            })
    }

    fn read_dir(&self, j: usize, own: f64) -> Result<f64> {
        if j == self.id {
            return Ok(own);
        }
        self.inbox_dir
            .get(&j)
            .copied()
            .ok_or(Error::LocalityViolation {
                agent: self.id,
                index: j,
            })
    }

    fn row_residual(&self, r: usize) -> Result<f64> {
        let row = &self.rows[&r];
        let vals: BTreeMap<usize, f64> = row
            .entries
            .iter()
            .map(|&(j, _)| self.read_x(j).map(|v| (j, v)))
            .collect::<Result<_>>()?;
        Ok(row_residual(row.entries.iter().copied(), row.b, |j| {
            vals[&j]
        }))
    }
}

struct Network<'a> {
    prog: &'a ConvexProgram,
    mu: f64,
    cfg: &'a IntegratorConfig,
    agents: Vec<Agent>,
    groups: Vec<ConstraintGroup>,
    /// Group index of each agent, if any.
    group_of: Vec<Option<usize>>,
    owners: Vec<usize>,
    stats: MessageStats,
}

impl<'a> Network<'a> {
    fn new(
        prog: &'a ConvexProgram,
        graph: &Graph,
        mu: f64,
        x0: &[f64],
        lambda0: &[f64],
        cfg: &'a IntegratorConfig,
    ) -> Result<Self> {
        let report = check_compatibility(prog, graph)?;
        if let Some((r, (i, j))) = report.bad_rows.first() {
            return Err(Error::IncompatibleTopology(format!(
                "equality row {r} needs edge {i}-{j}"
            )));
        }
        if let Some((k, (i, j))) = report.bad_inequalities.first() {
            return Err(Error::IncompatibleTopology(format!(
                "inequality {k} needs edge {i}-{j}"
            )));
        }
        let owners = assign_multipliers(prog, graph)?;
        let all: Vec<usize> = (0..prog.m()).collect();
        let groups = group_constraints(prog.inequalities(), &all);
        let mut group_of = vec![None; prog.n()];
        for (gi, g) in groups.iter().enumerate() {
            for &v in &g.vars {
                if v != g.leader() && !graph.has_edge(g.leader(), v) {
                    return Err(Error::IncompatibleTopology(format!(
                        "constraint group led by agent {} needs edge to agent {v}",
                        g.leader()
                    )));
                }
                group_of[v] = Some(gi);
            }
        }

        let a = prog.a();
        let agents = (0..prog.n())
            .map(|i| {
                let column = a.col(i).to_vec();
                let rows = column
                    .iter()
                    .map(|&(r, _)| {
                        (
                            r,
                            RowView {
                                entries: a.row(r).collect(),
                                b: prog.b()[r],
                            },
                        )
                    })
                    .collect();
                let lambda = column.iter().map(|&(r, _)| (r, lambda0[r])).collect();
                Agent {
                    id: i,
                    term: prog.terms()[i].clone(),
                    kinks: prog.terms()[i].kinks(),
                    x: x0[i],
                    column,
                    rows,
                    lambda,
                    owned: (0..prog.p()).filter(|&r| owners[r] == i).collect(),
                    neighbors: graph.neighbors(i).to_vec(),
                    inbox_x: BTreeMap::new(),
                    inbox_lambda: BTreeMap::new(),
                    inbox_dir: BTreeMap::new(),
                }
            })
            .collect();
        Ok(Self {
            prog,
            mu,
            cfg,
            agents,
            groups,
            group_of,
            owners,
            stats: MessageStats::default(),
        })
    }

    fn state(&self, t: f64) -> PrimalDualState {
        PrimalDualState {
            x: self.agents.iter().map(|a| a.x).collect(),
            lambda: (0..self.prog.p())
                .map(|r| self.agents[self.owners[r]].lambda[&r])
                .collect(),
            t,
        }
    }

    fn round(&mut self, t: f64) -> Result<StepOutcome> {
        let n = self.agents.len();
        let dt = self.cfg.dt;
        let mut sent = 0usize;

        // 1. states to neighbours
        for a in &mut self.agents {
            a.inbox_x.clear();
            a.inbox_lambda.clear();
            a.inbox_dir.clear();
        }
        for i in 0..n {
            let (x, nbrs) = (self.agents[i].x, self.agents[i].neighbors.clone());
            for j in nbrs {
                self.agents[j].inbox_x.insert(i, x);
                sent += 1;
            }
        }

        // 2. local rows and unprojected directions
        let mut h_local: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(n);
        let mut xi = vec![0.0; n];
        for (i, agent) in self.agents.iter().enumerate() {
            let mut hs = BTreeMap::new();
            for &(r, _) in &agent.column {
                hs.insert(r, agent.row_residual(r)?);
            }
            let pulls: BTreeMap<usize, f64> = hs
                .iter()
                .map(|(&r, &h)| (r, row_pull(h, agent.lambda[&r], self.mu)))
                .collect();
            let drive = coordinate_drive(&agent.column, |r| pulls[&r]);
            xi[i] = coordinate_direction(&agent.term, agent.x, drive);
            h_local.push(hs);
        }

        // 3. multiplier owners step and broadcast
        let mut h = vec![0.0; self.prog.p()];
        for (i, hs) in h_local.iter().enumerate() {
            for r in self.agents[i].owned.clone() {
                let hr = hs[&r];
                h[r] = hr;
                let new = self.agents[i].lambda[&r] + dt * hr;
                for (j, _) in self.agents[i].rows[&r].entries.clone() {
                    if j != i {
                        self.agents[j].inbox_lambda.insert(r, new);
                        sent += 1;
                    }
                }
                self.agents[i].inbox_lambda.insert(r, new);
            }
        }

        // 4. group projections at the leaders
        let mut d = xi.clone();
        let mut proj_active = false;
        for g in &self.groups {
            let leader = g.leader();
            for &v in &g.vars {
                if v != leader {
                    self.agents[leader].inbox_dir.insert(v, xi[v]);
                    sent += 1;
                }
            }
            let lead = &self.agents[leader];
            let gx: Vec<f64> = g
                .vars
                .iter()
                .map(|&v| lead.read_x(v))
                .collect::<Result<_>>()?;
            let gxi: Vec<f64> = g
                .vars
                .iter()
                .map(|&v| lead.read_dir(v, xi[leader]))
                .collect::<Result<_>>()?;
            let (gd, fired) = project_group(
                self.prog.inequalities(),
                g,
                &gx,
                &gxi,
                self.cfg.activity_tol,
            )?;
            proj_active |= fired;
            for (&v, dv) in g.vars.iter().zip(gd) {
                d[v] = dv;
                if v != leader {
                    sent += 1;
                }
            }
        }

        // 5. advance, then clip at the leaders
        let mut next: Vec<f64> = self
            .agents
            .iter()
            .map(|a| advance(a.x, d[a.id], dt, &a.kinks))
            .collect();
        for g in &self.groups {
            let mut gx: Vec<f64> = g.vars.iter().map(|&v| next[v]).collect();
            clip_group(self.prog.inequalities(), g, &mut gx);
            for (&v, xv) in g.vars.iter().zip(gx) {
                next[v] = xv;
            }
            sent += 2 * (g.vars.len() - 1);
        }
        debug_assert!(self.group_of.len() == n);

        // deliver multipliers and states
        for (a, xv) in self.agents.iter_mut().zip(&next) {
            let updates: Vec<(usize, f64)> = a.inbox_lambda.iter().map(|(&r, &v)| (r, v)).collect();
            for (r, v) in updates {
                a.lambda.insert(r, v);
            }
            a.x = *xv;
        }
        self.stats.scalars_per_round.push(sent);

        let residual = (crate::dynamics::dot(&d, &d) + crate::dynamics::dot(&h, &h)).sqrt();
        let next_state = self.state(t + dt);
        if !next_state
            .x
            .iter()
            .chain(&next_state.lambda)
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFiniteState { t: t + dt });
        }
        Ok(StepOutcome {
            next: next_state,
            residual,
            proj_active,
        })
    }
}

/// Run the projected flow as a synchronous message-passing protocol. The
/// returned trajectory matches [`crate::dynamics::integrate`] in
/// [`crate::dynamics::Mode::Spld`] bit for bit.
pub fn run_distributed(
    prog: &ConvexProgram,
    graph: &Graph,
    mu: f64,
    x0: &[f64],
    lambda0: &[f64],
    cfg: &IntegratorConfig,
    reference: Option<&ReferenceSaddle>,
) -> Result<(Trajectory, MessageStats)> {
    check_mu(mu)?;
    cfg.validate()?;
    check_len("primal state", prog.n(), x0.len())?;
    check_len("multiplier state", prog.p(), lambda0.len())?;
    check_feasible(prog, x0)?;
    let mut net = Network::new(prog, graph, mu, x0, lambda0, cfg)?;
    let traj = run_steps(
        prog,
        Flow::Spld { mu },
        x0,
        lambda0,
        cfg,
        reference,
        |state| {
            // agents hold the state; the driver's copy is only a consistency check
            debug_assert_eq!(net.state(state.t).x, state.x);
            net.round(state.t)
        },
    )?;
    let mut stats = net.stats;
    stats.scalars_per_round.truncate(traj.steps);
    Ok((traj, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate;
    use crate::problem::{
        generate_circulant, generate_tridiag_toeplitz, Builtin, InequalityConstraint,
    };
    use crate::sparse::SparseMatrix;

    #[test]
    fn graph_basics() {
        let g = Graph::new(3, vec![(0, 1), (1, 0), (1, 2)]).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert!(g.is_connected());
        assert!(Graph::new(2, vec![(1, 1)]).is_err());
        assert!(!Graph::new(3, vec![(0, 1)]).unwrap().is_connected());
    }

    #[test]
    fn circulant_induced_graph() {
        let prog = Builtin::QuarticAbsCirculant.build(10).unwrap();
        let g = Graph::induced_by_program(&prog);
        assert!(g.is_connected());
        assert_eq!(g.edge_count(), 20);
        assert!(check_compatibility(&prog, &g).unwrap().is_compatible());
    }

    #[test]
    fn path_breaks_far_row() {
        let a = SparseMatrix::from_triplets(1, 3, vec![(0, 0, 1.0), (0, 2, 1.0)]).unwrap();
        let prog = ConvexProgram::new(vec![ObjectiveTerm::Quartic; 3], a, vec![0.0], vec![], None)
            .unwrap();
        let rep = check_compatibility(&prog, &Graph::path(3)).unwrap();
        assert_eq!(rep.bad_rows, vec![(0, (0, 2))]);
        assert!(matches!(
            run_distributed(
                &prog,
                &Graph::path(3),
                0.5,
                &[0.0; 3],
                &[0.0],
                &IntegratorConfig::default(),
                None
            ),
            Err(Error::IncompatibleTopology(_))
        ));
    }

    #[test]
    fn bounds_always_compatible() {
        let prog = ConvexProgram::new(
            vec![ObjectiveTerm::Quartic; 2],
            SparseMatrix::identity(2),
            vec![0.0, 0.0],
            vec![InequalityConstraint::upper_bound(1, 0.5)],
            None,
        )
        .unwrap();
        let rep = check_compatibility(&prog, &Graph::new(2, vec![]).unwrap()).unwrap();
        assert!(rep.bad_inequalities.is_empty());
    }

    #[test]
    fn owners() {
        let quartic = |n| vec![ObjectiveTerm::Quartic; n];
        let circ = ConvexProgram::new(
            quartic(3),
            generate_circulant(3, 0.0, 1.0, 0.5).unwrap(),
            vec![0.0; 3],
            vec![],
            None,
        )
        .unwrap();
        let g = Graph::complete(3);
        // row 0 involves agents {1, 2}
        assert_eq!(assign_multipliers(&circ, &g).unwrap()[0], 1);
        let diag = ConvexProgram::new(
            quartic(4),
            SparseMatrix::identity(4),
            vec![0.0; 4],
            vec![],
            None,
        )
        .unwrap();
        assert_eq!(
            assign_multipliers(&diag, &Graph::complete(4)).unwrap(),
            vec![0, 1, 2, 3]
        );
        let trid = ConvexProgram::new(
            quartic(2),
            generate_tridiag_toeplitz(2, 0.5, 1.0, -0.1).unwrap(),
            vec![1.0; 2],
            vec![],
            None,
        )
        .unwrap();
        assert_eq!(
            assign_multipliers(&trid, &Graph::complete(2)).unwrap()[0],
            0
        );

        let empty_row = ConvexProgram::new(
            quartic(2),
            SparseMatrix::from_triplets(1, 2, vec![]).unwrap(),
            vec![0.0],
            vec![],
            None,
        )
        .unwrap();
        assert_eq!(
            assign_multipliers(&empty_row, &Graph::complete(2)),
            Err(Error::UncoveredRow { row: 0 })
        );
    }

    #[test]
    fn single_agent_matches_centralized() {
        let prog = ConvexProgram::new(
            vec![ObjectiveTerm::Quadratic { a: 1.0 }],
            SparseMatrix::identity(1),
            vec![0.5],
            vec![],
            None,
        )
        .unwrap();
        let g = Graph::new(1, vec![]).unwrap();
        let cfg = IntegratorConfig {
            t_end: 1.0,
            ..Default::default()
        };
        let (dist, stats) = run_distributed(&prog, &g, 0.5, &[2.0], &[0.0], &cfg, None).unwrap();
        let cen = integrate(&prog, Flow::Spld { mu: 0.5 }, &[2.0], &[0.0], &cfg, None).unwrap();
        assert_eq!(dist.to_csv(), cen.to_csv());
        assert_eq!(stats.total(), 0);
    }

    #[test]
    fn coupled_halfspaces_match_centralized() {
        // two overlapping halfspaces form a single group led by agent 0
        let prog = ConvexProgram::new(
            vec![ObjectiveTerm::Quadratic { a: 1.0 }; 3],
            SparseMatrix::from_triplets(1, 3, vec![(0, 0, 1.0), (0, 1, 1.0), (0, 2, 1.0)]).unwrap(),
            vec![3.0],
            vec![
                InequalityConstraint::halfspace(vec![(0, 1.0), (1, 1.0)], 1.0).unwrap(),
                InequalityConstraint::halfspace(vec![(1, 1.0), (2, -1.0)], 0.0).unwrap(),
            ],
            None,
        )
        .unwrap();
        let g = Graph::complete(3);
        let cfg = IntegratorConfig {
            t_end: 5.0,
            ..Default::default()
        };
        let x0 = [0.0, 0.0, 0.0];
        let (dist, stats) = run_distributed(&prog, &g, 0.5, &x0, &[0.0], &cfg, None).unwrap();
        let cen = integrate(&prog, Flow::Spld { mu: 0.5 }, &x0, &[0.0], &cfg, None).unwrap();
        assert_eq!(dist.to_csv(), cen.to_csv());
        assert!(dist.samples.iter().any(|s| s.proj_active));
        let per = messages_per_round(&prog, &g);
        assert_eq!(per, 2 * 3 + 2 + 4 * 2);
        assert!(stats.scalars_per_round.iter().all(|&s| s == per));
    }
}
