//! Concrete reference semantics and exhaustive bounded exploration.
//!
//! The machine only tracks what matters for jumps: the stack height and,
//! per slot, the jump destination it holds (if it was pushed as one). A
//! `JUMPI` always takes both branches since conditions are not modelled.
//! This module deliberately shares no stepping code with [`crate::transfer`]
//! so the two can be compared.

pub mod check;
pub mod generate;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::bytecode::{fmt_pc, Pc, Program, STACK_LIMIT};
use crate::domain::StackState;

pub use check::{
    check_jumps_to, check_walk, find_walk, trace_contexts, used_edges, Verdict, Violation,
};
pub use generate::{generate, generate_program, Generated, Shape};

/// A machine state `⟨pc, stack⟩`. `slots[0]` is the bottom of the stack;
/// `Some(d)` marks a slot holding jump destination `d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConcreteState {
    pub pc: Pc,
    pub slots: Vec<Option<Pc>>,
}

impl ConcreteState {
    pub fn initial() -> Self {
        ConcreteState {
            pc: 0,
            slots: Vec::new(),
        }
    }

    pub fn height(&self) -> usize {
        self.slots.len()
    }

    /// The stack as a `⟨n,σ⟩` with singleton destination sets.
    pub fn stack_state(&self) -> StackState {
        StackState::from_pairs(
            self.slots.len(),
            self.slots
                .iter()
                .enumerate()
                .filter_map(|(pos, slot)| slot.map(|d| (pos, [d]))),
        )
    }
}

impl fmt::Display for ConcreteState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {}>", fmt_pc(self.pc), self.stack_state())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("no instruction at {}", fmt_pc(*.0))]
    NoInstruction(Pc),
    #[error("stuck at {}: jump target is not a pushed destination", fmt_pc(*.0))]
    UntrackedTarget(Pc),
    #[error("jump at {} to {} which is not a JUMPDEST", fmt_pc(*.pc), fmt_pc(*.dest))]
    InvalidJump { pc: Pc, dest: Pc },
    #[error("stack underflow at {}: needs {needed}, has {height}", fmt_pc(*.pc))]
    Underflow {
        pc: Pc,
        needed: usize,
        height: usize,
    },
    #[error("stack overflow at {}", fmt_pc(*.0))]
    Overflow(Pc),
}

impl StepError {
    pub fn pc(&self) -> Pc {
        match self {
            StepError::NoInstruction(pc)
            | StepError::UntrackedTarget(pc)
            | StepError::Overflow(pc)
            | StepError::InvalidJump { pc, .. }
            | StepError::Underflow { pc, .. } => *pc,
        }
    }
}

/// Successors of `s`. Halting instructions and running off the end of the
/// code yield no successors.
pub fn step(p: &Program, s: &ConcreteState) -> Result<Vec<ConcreteState>, StepError> {
    let Some(instr) = p.at(s.pc) else {
        return if s.pc >= p.code_len() {
            Ok(Vec::new())
        } else {
            Err(StepError::NoInstruction(s.pc))
        };
    };
    let pc = s.pc;
    let n = s.slots.len();
    let byte = instr.spec.byte;
    let delta = usize::from(instr.spec.delta);
    let alpha = usize::from(instr.spec.alpha);
    if n < delta {
        return Err(StepError::Underflow {
            pc,
            needed: delta,
            height: n,
        });
    }
    if n - delta + alpha > STACK_LIMIT {
        return Err(StepError::Overflow(pc));
    }
    if instr.spec.is_end() {
        return Ok(Vec::new());
    }

    let next_pc = pc + instr.size();
    let mut slots = s.slots.clone();
    let fallthrough = |slots: Vec<Option<Pc>>| -> Vec<ConcreteState> {
        if next_pc < p.code_len() {
            vec![ConcreteState { pc: next_pc, slots }]
        } else {
            Vec::new()
        }
    };
    let target = |slot: Option<Pc>| -> Result<Pc, StepError> {
        let d = slot.ok_or(StepError::UntrackedTarget(pc))?;
        if p.jumpdests().contains(&d) {
            Ok(d)
        } else {
            Err(StepError::InvalidJump { pc, dest: d })
        }
    };

    let out = match byte {
        0x56 => {
            let d = target(slots.pop().expect("arity checked"))?;
            vec![ConcreteState { pc: d, slots }]
        }
        0x57 => {
            let d = target(slots.pop().expect("arity checked"))?;
            slots.pop();
            let mut out = vec![ConcreteState {
                pc: d,
                slots: slots.clone(),
            }];
            out.extend(fallthrough(slots));
            out
        }
        0x5f..=0x7f => {
            let v = instr.push_value().filter(|v| p.jumpdests().contains(v));
            slots.push(v);
            fallthrough(slots)
        }
        0x80..=0x8f => {
            let x = usize::from(byte - 0x7f);
            slots.push(slots[n - x]);
            fallthrough(slots)
        }
        0x90..=0x9f => {
            let x = usize::from(byte - 0x8f);
            slots.swap(n - 1, n - 1 - x);
            fallthrough(slots)
        }
        _ => {
            slots.truncate(n - delta);
            slots.resize(n - delta + alpha, None);
            fallthrough(slots)
        }
    };
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub max_steps: usize,
    pub max_states: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_steps: 100_000,
            max_states: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{source} (after {} step(s) from the initial state)", .path.len().saturating_sub(1))]
pub struct EnumerateError {
    #[source]
    pub source: StepError,
    /// States from the initial one to the state that failed to step.
    pub path: Vec<ConcreteState>,
}

/// Every state reachable from the initial one, with the transitions between
/// them. Index 0 is the initial state.
#[derive(Debug, Clone, Default)]
pub struct TraceSet {
    states: Vec<ConcreteState>,
    index: HashMap<ConcreteState, usize>,
    succ: Vec<Vec<usize>>,
    transitions: usize,
    truncated: bool,
}

impl TraceSet {
    pub fn initial(&self) -> &ConcreteState {
        &self.states[0]
    }

    pub fn states(&self) -> &[ConcreteState] {
        &self.states
    }

    pub fn state(&self, idx: usize) -> &ConcreteState {
        &self.states[idx]
    }

    pub fn index_of(&self, s: &ConcreteState) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn successors(&self, idx: usize) -> &[usize] {
        &self.succ[idx]
    }

    pub fn transitions(&self) -> impl Iterator<Item = (&ConcreteState, &ConcreteState)> {
        self.succ
            .iter()
            .enumerate()
            .flat_map(move |(i, ts)| ts.iter().map(move |&t| (&self.states[i], &self.states[t])))
    }

    pub fn transition_count(&self) -> usize {
        self.transitions
    }

    /// Whether a bound fired before the state space was closed.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Maximal traces from the initial state, up to `limit` of them. A trace
    /// ends at a state without successors or where it would revisit a state.
    pub fn maximal_traces(&self, limit: usize) -> Vec<Vec<ConcreteState>> {
        let mut out = Vec::new();
        let mut path = vec![0usize];
        let mut on_path = BTreeSet::from([0usize]);
        self.extend_traces(&mut path, &mut on_path, limit, &mut out);
        out
    }

    fn extend_traces(
        &self,
        path: &mut Vec<usize>,
        on_path: &mut BTreeSet<usize>,
        limit: usize,
        out: &mut Vec<Vec<ConcreteState>>,
    ) {
        if out.len() >= limit {
            return;
        }
        let last = *path.last().expect("non-empty path");
        let fresh: Vec<usize> = self.succ[last]
            .iter()
            .copied()
            .filter(|t| !on_path.contains(t))
            .collect();
        if fresh.is_empty() {
            out.push(path.iter().map(|&i| self.states[i].clone()).collect());
            return;
        }
        for t in fresh {
            path.push(t);
            on_path.insert(t);
            self.extend_traces(path, on_path, limit, out);
            on_path.remove(&t);
            path.pop();
        }
    }
}

/// Breadth-first closure of [`step`] from the initial state.
pub fn enumerate(p: &Program, bounds: Bounds) -> Result<TraceSet, EnumerateError> {
    let mut ts = TraceSet::default();
    let mut parent: Vec<Option<usize>> = Vec::new();
    let s0 = ConcreteState::initial();
    ts.index.insert(s0.clone(), 0);
    ts.states.push(s0);
    ts.succ.push(Vec::new());
    parent.push(None);

    let mut queue = VecDeque::from([0usize]);
    let mut steps = 0;
    while let Some(i) = queue.pop_front() {
        if steps >= bounds.max_steps {
            ts.truncated = true;
            break;
        }
        steps += 1;
        let next = step(p, &ts.states[i]).map_err(|source| {
            let mut path = Vec::new();
            let mut at = Some(i);
            while let Some(k) = at {
                path.push(ts.states[k].clone());
                at = parent[k];
            }
            path.reverse();
            EnumerateError { source, path }
        })?;
        let mut succ = BTreeSet::new();
        for s in next {
            let j = match ts.index.get(&s) {
                Some(&j) => j,
                None => {
                    if ts.states.len() >= bounds.max_states {
                        ts.truncated = true;
                        continue;
                    }
                    let j = ts.states.len();
                    ts.index.insert(s.clone(), j);
                    ts.states.push(s);
                    ts.succ.push(Vec::new());
                    parent.push(Some(i));
                    queue.push_back(j);
                    j
                }
            };
            succ.insert(j);
        }
        ts.transitions += succ.len();
        ts.succ[i] = succ.into_iter().collect();
    }
    log::debug!(
        "enumerated {} state(s), {} transition(s), truncated={}",
        ts.states.len(),
        ts.transitions,
        ts.truncated
    );
    Ok(ts)
}

/// Concrete stacks grouped by pc, handy for comparing against `X_pc`.
pub fn states_by_pc(ts: &TraceSet) -> BTreeMap<Pc, BTreeSet<StackState>> {
    let mut out: BTreeMap<Pc, BTreeSet<StackState>> = BTreeMap::new();
    for s in ts.states() {
        out.entry(s.pc).or_default().insert(s.stack_state());
    }
    out
}
