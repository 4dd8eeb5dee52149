//! Checkers comparing the analysis against enumerated concrete behaviour.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bytecode::{fmt_pc, Pc, Program};
use crate::cfg::{Cfg, Edge, ReplicaId};
use crate::domain::StackState;
use crate::equations::EquationSystem;
use crate::transfer::lambda;

use super::{ConcreteState, TraceSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// A reached concrete stack is not described by any state recorded at its pc.
    UncoveredState,
    /// An executed jump went somewhere the analysis did not predict.
    MissingJumpTarget,
    /// A recorded state's successor is absent from the target variable.
    MissingContext,
    /// Some trace has no matching walk through the CFG.
    NoWalk,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::UncoveredState => "uncovered_state",
            ViolationKind::MissingJumpTarget => "missing_jump_target",
            ViolationKind::MissingContext => "missing_context",
            ViolationKind::NoWalk => "no_walk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub pc: Pc,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub states: usize,
    pub transitions: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub verdict: Outcome,
    pub violations: Vec<Violation>,
    pub coverage: Coverage,
}

impl Verdict {
    fn new(mut violations: Vec<Violation>, ts: &TraceSet) -> Self {
        violations.sort();
        violations.dedup();
        let verdict = if !violations.is_empty() {
            Outcome::Fail
        } else if ts.truncated() {
            Outcome::Inconclusive
        } else {
            Outcome::Pass
        };
        Verdict {
            verdict,
            violations,
            coverage: Coverage {
                states: ts.states().len(),
                transitions: ts.transition_count(),
                truncated: ts.truncated(),
            },
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Outcome::Pass
    }

    /// Combines two verdicts over the same trace set.
    pub fn merge(mut self, other: Verdict) -> Verdict {
        self.violations.extend(other.violations);
        self.violations.sort();
        self.violations.dedup();
        self.verdict = match (self.violations.is_empty(), self.verdict, other.verdict) {
            (false, _, _) => Outcome::Fail,
            (true, Outcome::Pass, Outcome::Pass) => Outcome::Pass,
            _ => Outcome::Inconclusive,
        };
        self
    }
}

/// Recorded `(context, state)` pairs at `pc` that describe concrete stack `s`.
fn covering<'a>(
    sys: &'a EquationSystem,
    pc: Pc,
    s: &StackState,
) -> Vec<(&'a StackState, &'a StackState)> {
    sys.var(pc)
        .pairs()
        .filter(|(_, st)| s.covered_by(st))
        .collect()
}

/// The `(context, state)` a recorded pair must flow into at `to.pc` when the
/// concrete machine moves from `from` to `to`.
fn expected_flow(
    p: &Program,
    sys: &EquationSystem,
    from: &ConcreteState,
    to: &ConcreteState,
    ctx: &StackState,
    st: &StackState,
) -> Option<(StackState, StackState)> {
    let instr = p.at(from.pc)?;
    let after = lambda(instr, st, p.jumpdests()).ok()?;
    if sys.partition().is_block_start(to.pc) {
        Some((after.clone(), after))
    } else {
        Some((ctx.clone(), after))
    }
}

/// Checks that every reached state is described by the analysis, that every
/// executed jump target was predicted, and that recorded states covering a
/// concrete step have their successors recorded too.
pub fn check_jumps_to(p: &Program, sys: &EquationSystem, ts: &TraceSet) -> Verdict {
    let mut violations = Vec::new();

    for s in ts.states() {
        if p.at(s.pc).is_none() {
            continue;
        }
        if covering(sys, s.pc, &s.stack_state()).is_empty() {
            violations.push(Violation {
                kind: ViolationKind::UncoveredState,
                pc: s.pc,
                detail: format!(
                    "reached stack {} is not recorded at {}",
                    s.stack_state(),
                    fmt_pc(s.pc)
                ),
            });
        }
    }

    for (from, to) in ts.transitions() {
        let Some(instr) = p.at(from.pc) else { continue };
        let abs = from.stack_state();
        let pairs = covering(sys, from.pc, &abs);

        let is_target = instr.spec.is_jump() && from.slots.last().copied().flatten() == Some(to.pc);
        if is_target {
            let predicted = pairs
                .iter()
                .any(|(_, st)| st.top_destinations().is_some_and(|d| d.contains(&to.pc)));
            if !predicted {
                violations.push(Violation {
                    kind: ViolationKind::MissingJumpTarget,
                    pc: from.pc,
                    detail: format!(
                        "jump to {} is not among the recorded destinations",
                        fmt_pc(to.pc)
                    ),
                });
            }
        }

        for (ctx, st) in pairs {
            let Some((tctx, tst)) = expected_flow(p, sys, from, to, ctx, st) else {
                continue;
            };
            if !sys.var(to.pc).img(&tctx).contains(&tst) {
                violations.push(Violation {
                    kind: ViolationKind::MissingContext,
                    pc: from.pc,
                    detail: format!(
                        "state {st} under context {ctx} flows to {} as {tst} under context {tctx}, which is not recorded",
                        fmt_pc(to.pc)
                    ),
                });
            }
        }
    }
    Verdict::new(violations, ts)
}

/// Every `(block, context)` that some concrete step is predicted to enter.
/// Removing any of these from the system must make [`check_jumps_to`] fail.
pub fn trace_contexts(
    p: &Program,
    sys: &EquationSystem,
    ts: &TraceSet,
) -> BTreeSet<(Pc, StackState)> {
    let mut out = BTreeSet::new();
    if p.at(0).is_some() {
        out.insert((0, crate::equations::initial_context()));
    }
    for (from, to) in ts.transitions() {
        if !sys.partition().is_block_start(to.pc) {
            continue;
        }
        for (ctx, st) in covering(sys, from.pc, &from.stack_state()) {
            if let Some((tctx, _)) = expected_flow(p, sys, from, to, ctx, st) {
                out.insert((to.pc, tctx));
            }
        }
    }
    out
}

/// A state of the walk search: a concrete state paired with the replicas the
/// walk may currently be in.
type WalkNode = (usize, BTreeSet<ReplicaId>);

struct WalkSearch {
    nodes: Vec<WalkNode>,
    parent: Vec<Option<usize>>,
    used: BTreeSet<Edge>,
    orphan: Option<(usize, usize)>,
}

fn adjacency(cfg: &Cfg) -> BTreeMap<ReplicaId, Vec<ReplicaId>> {
    let mut adj: BTreeMap<ReplicaId, Vec<ReplicaId>> = BTreeMap::new();
    for (f, t) in cfg.edges() {
        adj.entry(*f).or_default().push(*t);
    }
    adj
}

/// Explores all traces at once, tracking for each prefix the set of replicas
/// a matching walk could be in. A prefix with no such replica has no walk.
fn walk_search(p: &Program, sys: &EquationSystem, cfg: &Cfg, ts: &TraceSet) -> WalkSearch {
    let adj = adjacency(cfg);
    let mut search = WalkSearch {
        nodes: Vec::new(),
        parent: Vec::new(),
        used: BTreeSet::new(),
        orphan: None,
    };
    let start: BTreeSet<ReplicaId> = cfg.entry.into_iter().collect();
    let mut seen: BTreeMap<WalkNode, usize> = BTreeMap::new();
    let mut queue = VecDeque::new();
    let root = (0usize, start);
    seen.insert(root.clone(), 0);
    search.nodes.push(root);
    search.parent.push(None);
    queue.push_back(0);
    if search.nodes[0].1.is_empty() && p.at(0).is_some() {
        search.orphan = Some((0, 0));
        return search;
    }

    while let Some(k) = queue.pop_front() {
        let (si, replicas) = search.nodes[k].clone();
        for &ti in ts.successors(si) {
            let to = ts.state(ti);
            let next: BTreeSet<ReplicaId> = if sys.partition().is_block_start(to.pc) {
                let mut next = BTreeSet::new();
                for r in &replicas {
                    for t in adj
                        .get(r)
                        .into_iter()
                        .flatten()
                        .filter(|t| t.block == to.pc)
                    {
                        search.used.insert((*r, *t));
                        next.insert(*t);
                    }
                }
                next
            } else {
                replicas.clone()
            };
            let node = (ti, next);
            if seen.contains_key(&node) {
                continue;
            }
            let idx = search.nodes.len();
            seen.insert(node.clone(), idx);
            let dead = node.1.is_empty();
            search.nodes.push(node);
            search.parent.push(Some(k));
            if dead {
                search.orphan.get_or_insert((idx, ti));
                continue;
            }
            queue.push_back(idx);
        }
    }
    search
}

/// Block-level projection of the trace prefix ending at search node `k`.
fn orphaned_blocks(sys: &EquationSystem, ts: &TraceSet, search: &WalkSearch, k: usize) -> Vec<Pc> {
    let mut pcs = Vec::new();
    let mut at = Some(k);
    while let Some(i) = at {
        pcs.push(ts.state(search.nodes[i].0).pc);
        at = search.parent[i];
    }
    pcs.reverse();
    let mut blocks = Vec::new();
    for (i, pc) in pcs.iter().enumerate() {
        if i == 0 || sys.partition().is_block_start(*pc) {
            blocks.push(*pc);
        }
    }
    blocks
}

/// Checks that every trace is matched by a walk from the entry replica that
/// visits replicas of the same blocks in the same order.
pub fn check_walk(p: &Program, cfg: &Cfg, sys: &EquationSystem, ts: &TraceSet) -> Verdict {
    let search = walk_search(p, sys, cfg, ts);
    let mut violations = Vec::new();
    if let Some((k, si)) = search.orphan {
        let blocks = orphaned_blocks(sys, ts, &search, k);
        let shown: Vec<String> = blocks.iter().map(|b| fmt_pc(*b)).collect();
        violations.push(Violation {
            kind: ViolationKind::NoWalk,
            pc: ts.state(si).pc,
            detail: format!("no walk follows the block sequence {}", shown.join(" -> ")),
        });
    }
    Verdict::new(violations, ts)
}

/// CFG edges traversed while matching traces to walks.
pub fn used_edges(cfg: &Cfg, sys: &EquationSystem, ts: &TraceSet) -> BTreeSet<Edge> {
    walk_search(sys.program(), sys, cfg, ts).used
}

/// A walk through `cfg` whose blocks follow `blocks`, by depth-first search
/// over replica choices.
pub fn find_walk(cfg: &Cfg, blocks: &[Pc]) -> Option<Vec<ReplicaId>> {
    let entry = cfg.entry?;
    if blocks.first() != Some(&entry.block) {
        return None;
    }
    let adj = adjacency(cfg);
    let mut walk = vec![entry];
    fn extend(
        adj: &BTreeMap<ReplicaId, Vec<ReplicaId>>,
        blocks: &[Pc],
        walk: &mut Vec<ReplicaId>,
    ) -> bool {
        let Some((&next, rest)) = blocks.split_first() else {
            return true;
        };
        let at = *walk.last().expect("non-empty walk");
        for t in adj
            .get(&at)
            .into_iter()
            .flatten()
            .filter(|t| t.block == next)
        {
            walk.push(*t);
            if extend(adj, rest, walk) {
                return true;
            }
            walk.pop();
        }
        false
    }
    extend(&adj, &blocks[1..], &mut walk).then_some(walk)
}

/// Block sequence visited by a trace.
pub fn block_sequence(sys: &EquationSystem, trace: &[ConcreteState]) -> Vec<Pc> {
    trace
        .iter()
        .enumerate()
        .filter(|(i, s)| *i == 0 || sys.partition().is_block_start(s.pc))
        .map(|(_, s)| s.pc)
        .collect()
}
