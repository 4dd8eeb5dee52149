//! The addresses equation system and its least-fixpoint solver.
//!
//! There is one variable `X_pc` per instruction, holding the stack states
//! that may reach `pc` (before `b_pc` executes) for each entry context of
//! the enclosing block. Each instruction contributes constraints on its
//! successors:
//!
//! 1. `JUMP`: `X_d ⊒ idmap(λ(b, s))` for every destination `d` on top of `s`.
//! 2. `JUMPI`: as for `JUMP`, plus `X_{pc+1} ⊒ idmap(λ(b, s))`.
//! 3. next instruction is `JUMPDEST`: `X_next ⊒ idmap(λ(b, s))`.
//! 4. any other non-halting instruction: `X_next ⊒ τ(b, X_pc)`.
//!
//! Halting instructions constrain nothing, and neither does an instruction
//! whose successor would lie past the end of the code.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use log::trace;
use thiserror::Error;

use crate::blocks::{partition_blocks, Partition};
use crate::bytecode::{fmt_pc, Instruction, OpClass, Pc, Program};
use crate::domain::{AbstractState, Lattice, StackState};
use crate::transfer::{lambda, tau, ArityError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("unresolved jump at {}: jump target is not a tracked constant in context {context} (state {state})", fmt_pc(*pc))]
    UnresolvedJump {
        pc: Pc,
        context: StackState,
        state: StackState,
    },
    #[error("jump at {} reaches {}, which is not a JUMPDEST", fmt_pc(*pc), fmt_pc(*dest))]
    InvalidTarget { pc: Pc, dest: Pc },
    #[error("in context {context}: {source}")]
    Arity {
        context: StackState,
        #[source]
        source: ArityError,
    },
}

impl SolveError {
    pub fn pc(&self) -> Pc {
        match self {
            SolveError::UnresolvedJump { pc, .. } | SolveError::InvalidTarget { pc, .. } => *pc,
            SolveError::Arity { source, .. } => source.pc(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SolveError::UnresolvedJump { .. } => "unresolved_jump",
            SolveError::InvalidTarget { .. } => "invalid_target",
            SolveError::Arity { .. } => "arity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMode {
    /// Worklist seeded with pc 0, first-in first-out.
    #[default]
    Worklist,
    /// Worklist, last-in first-out. Same fixpoint, different visiting order.
    WorklistLifo,
    /// Re-evaluate every constraint each round until nothing changes.
    Naive,
}

impl FromStr for SolverMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "worklist" | "fifo" => Ok(SolverMode::Worklist),
            "lifo" | "worklist-lifo" => Ok(SolverMode::WorklistLifo),
            "naive" => Ok(SolverMode::Naive),
            other => Err(format!(
                "unknown solver mode {other:?} (expected worklist, lifo or naive)"
            )),
        }
    }
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMode::Worklist => "worklist",
            SolverMode::WorklistLifo => "lifo",
            SolverMode::Naive => "naive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveStats {
    /// Naive rounds, or worklist pops.
    pub iterations: usize,
    /// Variable updates that strictly grew a value.
    pub updates: usize,
}

/// A solved equation system. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquationSystem {
    program: Program,
    partition: Partition,
    vars: BTreeMap<Pc, AbstractState>,
    stats: SolveStats,
}

/// `idmap(s) = {s ↦ {s}}`.
pub fn idmap(s: StackState) -> AbstractState {
    let mut pi = AbstractState::new();
    pi.insert(s.clone(), s);
    pi
}

/// One right-hand side: `target ⊒ value`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flow {
    pub target: Pc,
    pub value: AbstractState,
}

/// Evaluates every constraint generated by the instruction at `instr.pc`
/// against the current value of its variable.
pub fn outflows(
    program: &Program,
    instr: &Instruction,
    current: &AbstractState,
) -> Result<Vec<Flow>, SolveError> {
    let jumpdests = program.jumpdests();
    if instr.spec.is_end() || current.is_bottom() {
        return Ok(Vec::new());
    }
    let next = program.successor(instr.pc).map(|i| i.pc);
    let arity = |context: &StackState| {
        let context = context.clone();
        move |source| SolveError::Arity { context, source }
    };

    let mut flows = Vec::new();
    match instr.spec.class {
        OpClass::Jump | OpClass::JumpI => {
            for (ctx, state) in current.pairs() {
                let dests = state
                    .top_destinations()
                    .ok_or_else(|| SolveError::UnresolvedJump {
                        pc: instr.pc,
                        context: ctx.clone(),
                        state: state.clone(),
                    })?;
                let after = lambda(instr, state, jumpdests).map_err(arity(ctx))?;
                for &dest in dests {
                    if !jumpdests.contains(&dest) {
                        return Err(SolveError::InvalidTarget { pc: instr.pc, dest });
                    }
                    flows.push(Flow {
                        target: dest,
                        value: idmap(after.clone()),
                    });
                }
                if let (OpClass::JumpI, Some(next)) = (instr.spec.class, next) {
                    flows.push(Flow {
                        target: next,
                        value: idmap(after),
                    });
                }
            }
        }
        _ => {
            let Some(next) = next else {
                return Ok(flows);
            };
            if jumpdests.contains(&next) {
                for (ctx, state) in current.pairs() {
                    let after = lambda(instr, state, jumpdests).map_err(arity(ctx))?;
                    flows.push(Flow {
                        target: next,
                        value: idmap(after),
                    });
                }
            } else {
                let value = tau(instr, current, jumpdests).map_err(|e| SolveError::Arity {
                    context: e.context,
                    source: e.source,
                })?;
                flows.push(Flow {
                    target: next,
                    value,
                });
            }
        }
    }
    Ok(flows)
}

pub fn initial_context() -> StackState {
    StackState::untracked(0)
}

/// Solves with the default FIFO worklist.
pub fn solve(program: &Program) -> Result<EquationSystem, SolveError> {
    solve_with(program, SolverMode::Worklist)
}

pub fn solve_with(program: &Program, mode: SolverMode) -> Result<EquationSystem, SolveError> {
    solve_observed(program, mode, |_, _, _| {})
}

/// Solves while reporting every strict growth of a variable as
/// `(pc, old value, new value)`.
pub fn solve_observed<F>(
    program: &Program,
    mode: SolverMode,
    mut observe: F,
) -> Result<EquationSystem, SolveError>
where
    F: FnMut(Pc, &AbstractState, &AbstractState),
{
    let partition = partition_blocks(program);
    let mut vars: BTreeMap<Pc, AbstractState> = program
        .instructions()
        .iter()
        .map(|i| (i.pc, AbstractState::new()))
        .collect();
    let mut stats = SolveStats::default();

    if let Some(x0) = vars.get_mut(&0) {
        let seed = idmap(initial_context());
        observe(0, &AbstractState::new(), &seed);
        *x0 = seed;
        stats.updates += 1;
    }

    let mut apply =
        |vars: &mut BTreeMap<Pc, AbstractState>, flow: &Flow, stats: &mut SolveStats| {
            let slot = vars
                .get_mut(&flow.target)
                .expect("flow targets are instructions");
            if flow.value.leq(slot) {
                return false;
            }
            let old = slot.clone();
            slot.join_assign(&flow.value);
            observe(flow.target, &old, slot);
            stats.updates += 1;
            true
        };

    match mode {
        SolverMode::Worklist | SolverMode::WorklistLifo => {
            let mut queue: VecDeque<Pc> = VecDeque::new();
            let mut queued: BTreeSet<Pc> = BTreeSet::new();
            if vars.contains_key(&0) {
                queue.push_back(0);
                queued.insert(0);
            }
            loop {
                let next = match mode {
                    SolverMode::WorklistLifo => queue.pop_back(),
                    _ => queue.pop_front(),
                };
                let Some(pc) = next else { break };
                queued.remove(&pc);
                stats.iterations += 1;
                let instr = program.at(pc).expect("queued pcs are instructions");
                let flows = outflows(program, instr, &vars[&pc])?;
                for flow in &flows {
                    let before = vars[&flow.target].len();
                    if apply(&mut vars, flow, &mut stats) {
                        trace!(
                            "pop {} -> {} contexts {} -> {}",
                            fmt_pc(pc),
                            fmt_pc(flow.target),
                            before,
                            vars[&flow.target].len()
                        );
                        if queued.insert(flow.target) {
                            queue.push_back(flow.target);
                        }
                    }
                }
            }
        }
        // Round-robin: every constraint is re-evaluated in pc order each
        // round, with updates visible to the rest of the round.
        SolverMode::Naive => loop {
            stats.iterations += 1;
            let mut changed = false;
            for instr in program.instructions() {
                for flow in &outflows(program, instr, &vars[&instr.pc])? {
                    changed |= apply(&mut vars, flow, &mut stats);
                }
            }
            trace!("naive round {} changed={}", stats.iterations, changed);
            if !changed {
                break;
            }
        },
    }

    Ok(EquationSystem {
        program: program.clone(),
        partition,
        vars,
        stats,
    })
}

impl EquationSystem {
    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn stats(&self) -> SolveStats {
        self.stats
    }

    /// `X_pc`; bottom for pcs that are not instructions.
    pub fn var(&self, pc: Pc) -> &AbstractState {
        static BOTTOM: AbstractState = AbstractState::EMPTY;
        self.vars.get(&pc).unwrap_or(&BOTTOM)
    }

    pub fn vars(&self) -> &BTreeMap<Pc, AbstractState> {
        &self.vars
    }

    /// Pcs whose constraints are violated by the current values. Empty for
    /// any system produced by [`solve`].
    pub fn unsatisfied(&self) -> Result<Vec<Pc>, SolveError> {
        let mut bad = BTreeSet::new();
        for instr in self.program.instructions() {
            for flow in outflows(&self.program, instr, self.var(instr.pc))? {
                if !flow.value.leq(self.var(flow.target)) {
                    bad.insert(instr.pc);
                }
            }
        }
        Ok(bad.into_iter().collect())
    }

    /// A copy with `context` deleted from every variable of the block that
    /// starts at `block`. Used to check that the soundness checkers notice
    /// missing information.
    pub fn without_context(&self, block: Pc, context: &StackState) -> EquationSystem {
        let mut out = self.clone();
        if let Some(b) = self.partition.starting_at(block) {
            for instr in &b.body {
                if let Some(x) = out.vars.get_mut(&instr.pc) {
                    x.remove_context(context);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::decode_bytecode;

    fn s(height: usize, pairs: &[(usize, &[Pc])]) -> StackState {
        StackState::from_pairs(height, pairs.iter().map(|(p, d)| (*p, d.iter().copied())))
    }

    fn pi(pairs: &[(StackState, StackState)]) -> AbstractState {
        pairs.iter().cloned().collect()
    }

    #[test]
    fn idmap_examples() {
        let e = s(0, &[]);
        assert_eq!(idmap(e.clone()), pi(&[(e.clone(), e.clone())]));
        let c = s(7, &[(5, &[0x954])]);
        assert_eq!(idmap(c.clone()).img(&c), &BTreeSet::from([c.clone()]));
        assert!(idmap(c.clone()).leq(&idmap(c)));
    }

    #[test]
    fn linear_fixture() {
        let sys = solve(&decode_bytecode("6003565b00").unwrap()).unwrap();
        let e = s(0, &[]);
        assert_eq!(sys.var(0x00), &pi(&[(e.clone(), e.clone())]));
        assert_eq!(sys.var(0x02), &pi(&[(e.clone(), s(1, &[(0, &[3])]))]));
        assert_eq!(sys.var(0x03), &pi(&[(e.clone(), e.clone())]));
        assert_eq!(sys.var(0x04), &pi(&[(e.clone(), e)]));
        assert!(sys.unsatisfied().unwrap().is_empty());
    }

    #[test]
    fn shared_fn_fixture_has_two_contexts() {
        let sys = solve(&decode_bytecode("60056010565b600b6010565b00fefefe5b56").unwrap()).unwrap();
        let ctxs: Vec<StackState> = sys.var(0x10).contexts().cloned().collect();
        assert_eq!(ctxs, [s(1, &[(0, &[0x05])]), s(1, &[(0, &[0x0b])])]);
        for pc in [0x0d, 0x0e, 0x0f] {
            assert!(sys.var(pc).is_bottom());
        }
    }

    #[test]
    fn branch_fixture_flows_both_ways() {
        let p = decode_bytecode("6001600657005b00").unwrap();
        let jumpi = p.at(4).unwrap();
        let e = s(0, &[]);
        let at_jumpi = pi(&[(e.clone(), s(2, &[(1, &[6])]))]);
        let flows = outflows(&p, jumpi, &at_jumpi).unwrap();
        assert_eq!(
            flows,
            [
                Flow {
                    target: 6,
                    value: idmap(e.clone())
                },
                Flow {
                    target: 5,
                    value: idmap(e.clone())
                }
            ]
        );
        let sys = solve(&p).unwrap();
        assert_eq!(sys.var(4), &at_jumpi);
        assert_eq!(sys.var(5), &idmap(e.clone()));
        assert_eq!(sys.var(6), &idmap(e));
    }

    #[test]
    fn unresolved_jump_on_empty_stack_is_an_underflow() {
        // A bare JUMP has no target word at all.
        let err = solve(&decode_bytecode("56").unwrap()).unwrap_err();
        assert_eq!(err.pc(), 0);
    }

    #[test]
    fn unresolved_jump_on_untracked_word() {
        // PUSH1 0x07 (not a JUMPDEST) ; JUMP
        let err = solve(&decode_bytecode("600756").unwrap()).unwrap_err();
        assert!(
            matches!(err, SolveError::UnresolvedJump { pc: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn halting_instructions_have_no_successors() {
        // STOP ; JUMPDEST ; STOP -- the JUMPDEST is never reached
        let sys = solve(&decode_bytecode("005b00").unwrap()).unwrap();
        assert!(sys.var(1).is_bottom());
    }

    #[test]
    fn jumpi_as_last_instruction() {
        // PUSH1 1; PUSH1 5; JUMPI -- 5 is past the end, so the word is untracked
        let p = decode_bytecode("6001600557").unwrap();
        let err = solve(&p).unwrap_err();
        assert!(matches!(err, SolveError::UnresolvedJump { pc: 4, .. }));
        // PUSH1 1; PUSH1 5; JUMPI; JUMPDEST -- falls off the end afterwards
        let sys = solve(&decode_bytecode("60016005575b").unwrap()).unwrap();
        assert_eq!(sys.var(5), &idmap(s(0, &[])));
    }

    #[test]
    fn solver_modes_agree() {
        for hex in [
            "6003565b00",
            "6001600657005b00",
            "60056010565b600b6010565b00fefefe5b56",
        ] {
            let p = decode_bytecode(hex).unwrap();
            let a = solve_with(&p, SolverMode::Worklist).unwrap();
            let b = solve_with(&p, SolverMode::Naive).unwrap();
            let c = solve_with(&p, SolverMode::WorklistLifo).unwrap();
            assert_eq!(a.vars(), b.vars());
            assert_eq!(a.vars(), c.vars());
        }
    }

    #[test]
    fn observed_updates_are_monotone() {
        let p = decode_bytecode("60056010565b600b6010565b00fefefe5b56").unwrap();
        let mut count = 0;
        solve_observed(&p, SolverMode::Naive, |_, old, new| {
            assert!(old.leq(new) && old != new);
            count += 1;
        })
        .unwrap();
        assert!(count > 0);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("naive".parse::<SolverMode>(), Ok(SolverMode::Naive));
        assert_eq!("worklist".parse::<SolverMode>(), Ok(SolverMode::Worklist));
        assert!("fast".parse::<SolverMode>().is_err());
    }

    #[test]
    fn without_context_drops_from_whole_block() {
        let sys = solve(&decode_bytecode("60056010565b600b6010565b00fefefe5b56").unwrap()).unwrap();
        let ctx = s(1, &[(0, &[0x0b])]);
        let cut = sys.without_context(0x10, &ctx);
        assert!(!cut.var(0x10).contains_context(&ctx));
        assert!(!cut.var(0x11).contains_context(&ctx));
        assert_eq!(cut.var(0x10).len(), 1);
        assert_eq!(cut.unsatisfied().unwrap(), [0x0a]);
    }
}
