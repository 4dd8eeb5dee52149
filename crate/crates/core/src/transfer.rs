//! The per-instruction update `λ` on stack states and its lifting `τ` to
//! abstract states.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::bytecode::{fmt_pc, Instruction, OpClass, Pc, STACK_LIMIT};
use crate::domain::{AbstractState, StackState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArityError {
    #[error("stack underflow at {}: {mnemonic} needs {needed} word(s), stack has {height}", fmt_pc(*pc))]
    Underflow {
        pc: Pc,
        mnemonic: &'static str,
        needed: usize,
        height: usize,
    },
    #[error("stack overflow at {}: {mnemonic} would leave {height} words", fmt_pc(*pc))]
    Overflow {
        pc: Pc,
        mnemonic: &'static str,
        height: usize,
    },
}

impl ArityError {
    pub fn pc(&self) -> Pc {
        match self {
            ArityError::Underflow { pc, .. } | ArityError::Overflow { pc, .. } => *pc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("in context {context}: {source}")]
pub struct TransferError {
    pub context: StackState,
    #[source]
    pub source: ArityError,
}

fn check_arity(instr: &Instruction, height: usize) -> Result<usize, ArityError> {
    let delta = usize::from(instr.spec.delta);
    let alpha = usize::from(instr.spec.alpha);
    if height < delta {
        return Err(ArityError::Underflow {
            pc: instr.pc,
            mnemonic: instr.spec.mnemonic,
            needed: delta,
            height,
        });
    }
    let after = height - delta + alpha;
    if after > STACK_LIMIT {
        return Err(ArityError::Overflow {
            pc: instr.pc,
            mnemonic: instr.spec.mnemonic,
            height: after,
        });
    }
    Ok(after)
}

/// `λ(b, ⟨n,σ⟩)`: the stack state after executing `instr`.
///
/// Only the stack effect is modelled; for `JUMP`/`JUMPI` the consumed
/// destinations are read off the input state by the caller.
pub fn lambda(
    instr: &Instruction,
    state: &StackState,
    jumpdests: &BTreeSet<Pc>,
) -> Result<StackState, ArityError> {
    let n = state.height();
    let after = check_arity(instr, n)?;
    let mut out = state.clone();
    match instr.spec.class {
        OpClass::Push(_) => {
            out.set_height(after);
            let pushed = instr.push_value().filter(|v| jumpdests.contains(v));
            out.assign(n, pushed.map(|v| BTreeSet::from([v])));
        }
        OpClass::Dup(x) => {
            let copied = state.get(n - usize::from(x)).cloned();
            out.set_height(after);
            out.assign(n, copied);
        }
        OpClass::Swap(x) => {
            let top = n - 1;
            let other = n - usize::from(x) - 1;
            let top_dests = out.take(top);
            let other_dests = out.take(other);
            out.assign(top, other_dests);
            out.assign(other, top_dests);
        }
        // JUMP, JUMPI and everything else: drop the consumed positions, the
        // produced ones start untracked.
        _ => {
            let delta = usize::from(instr.spec.delta);
            out.set_height(n - delta);
            out.set_height(after);
        }
    }
    Ok(out)
}

/// `τ(b, π)`: applies `λ` to every state of every context.
pub fn tau(
    instr: &Instruction,
    pi: &AbstractState,
    jumpdests: &BTreeSet<Pc>,
) -> Result<AbstractState, TransferError> {
    let mut out = AbstractState::new();
    for (ctx, state) in pi.pairs() {
        let next = lambda(instr, state, jumpdests).map_err(|source| TransferError {
            context: ctx.clone(),
            source,
        })?;
        out.insert(ctx.clone(), next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::{decode_bytecode, decode_bytes, opcodes};
    use crate::domain::strategies::abstract_state;
    use crate::domain::Lattice;
    use proptest::prelude::*;

    fn s(height: usize, pairs: &[(usize, &[Pc])]) -> StackState {
        StackState::from_pairs(height, pairs.iter().map(|(p, d)| (*p, d.iter().copied())))
    }

    fn instr(hex: &str, pc: Pc) -> Instruction {
        let mut i = decode_bytecode(hex).unwrap().instructions()[0].clone();
        i.pc = pc;
        i
    }

    fn dests(list: &[Pc]) -> BTreeSet<Pc> {
        list.iter().copied().collect()
    }

    #[test]
    fn push_of_a_jumpdest_is_tracked() {
        let j = dests(&[0x142, 0x64b, 0x954]);
        let out = lambda(&instr("610954", 0x94a), &s(5, &[]), &j).unwrap();
        assert_eq!(out, s(6, &[(5, &[0x954])]));
    }

    #[test]
    fn push_of_data_is_not_tracked() {
        let j = dests(&[0x954]);
        let out = lambda(&instr("600a", 0x94d), &s(6, &[(5, &[0x954])]), &j).unwrap();
        assert_eq!(out, s(7, &[(5, &[0x954])]));
    }

    #[test]
    fn jump_consumes_top() {
        let out = lambda(
            &instr("56", 0x953),
            &s(8, &[(5, &[0x954]), (7, &[0x64b])]),
            &dests(&[]),
        )
        .unwrap();
        assert_eq!(out, s(7, &[(5, &[0x954])]));
    }

    #[test]
    fn jumpi_consumes_two() {
        let out = lambda(
            &instr("57", 4),
            &s(3, &[(0, &[9]), (1, &[9]), (2, &[6])]),
            &dests(&[]),
        )
        .unwrap();
        assert_eq!(out, s(1, &[(0, &[9])]));
    }

    #[test]
    fn pop_and_dup() {
        let none = dests(&[]);
        assert_eq!(
            lambda(&instr("50", 0x949), &s(6, &[]), &none).unwrap(),
            s(5, &[])
        );
        assert_eq!(
            lambda(&instr("80", 0x12a), &s(3, &[(1, &[0x142])]), &none).unwrap(),
            s(4, &[(1, &[0x142])])
        );
        // DUP2 copies a tracked position to the new top.
        assert_eq!(
            lambda(&instr("81", 0), &s(2, &[(0, &[7])]), &none).unwrap(),
            s(3, &[(0, &[7]), (2, &[7])])
        );
    }

    #[test]
    fn swap_cases() {
        let none = dests(&[]);
        let swap2 = instr("91", 0);
        // both tracked
        assert_eq!(
            lambda(&swap2, &s(3, &[(0, &[1]), (2, &[2])]), &none).unwrap(),
            s(3, &[(0, &[2]), (2, &[1])])
        );
        // only top tracked
        assert_eq!(
            lambda(&swap2, &s(3, &[(2, &[2])]), &none).unwrap(),
            s(3, &[(0, &[2])])
        );
        // only the deep one tracked
        assert_eq!(
            lambda(&swap2, &s(3, &[(0, &[1])]), &none).unwrap(),
            s(3, &[(2, &[1])])
        );
        // neither: identity on sigma
        assert_eq!(
            lambda(&swap2, &s(3, &[(1, &[4])]), &none).unwrap(),
            s(3, &[(1, &[4])])
        );
    }

    #[test]
    fn generic_ops_drop_consumed_positions() {
        let none = dests(&[]);
        // SLOAD: 1 -> 1, result is untracked
        assert_eq!(
            lambda(&instr("54", 0), &s(7, &[(5, &[9]), (6, &[9])]), &none).unwrap(),
            s(7, &[(5, &[9])])
        );
        // CALLDATASIZE: 0 -> 1
        assert_eq!(
            lambda(&instr("36", 0), &s(4, &[(1, &[9])]), &none).unwrap(),
            s(5, &[(1, &[9])])
        );
    }

    #[test]
    fn arity_errors() {
        let none = dests(&[]);
        assert_eq!(
            lambda(&instr("56", 0), &s(0, &[]), &none),
            Err(ArityError::Underflow {
                pc: 0,
                mnemonic: "JUMP",
                needed: 1,
                height: 0
            })
        );
        assert_eq!(
            lambda(&instr("6000", 3), &StackState::untracked(1024), &none),
            Err(ArityError::Overflow {
                pc: 3,
                mnemonic: "PUSH1",
                height: 1025
            })
        );
        assert!(matches!(
            lambda(&instr("92", 0), &s(3, &[]), &none),
            Err(ArityError::Underflow { needed: 4, .. })
        ));
    }

    #[test]
    fn tau_applies_elementwise() {
        let j = dests(&[0x142, 0x954]);
        let c1 = s(7, &[(5, &[0x954])]);
        let c2 = s(3, &[(1, &[0x142])]);
        let pi: AbstractState = [(c1.clone(), c1.clone()), (c2.clone(), c2.clone())]
            .into_iter()
            .collect();
        let out = tau(&instr("6000", 0x64c), &pi, &j).unwrap();
        let expected: AbstractState = [(c1, s(8, &[(5, &[0x954])])), (c2, s(4, &[(1, &[0x142])]))]
            .into_iter()
            .collect();
        assert_eq!(out, expected);

        assert!(tau(&instr("50", 0), &AbstractState::bottom(), &j)
            .unwrap()
            .is_bottom());

        let k = s(9, &[]);
        let two: AbstractState = [(k.clone(), s(2, &[])), (k.clone(), s(5, &[]))]
            .into_iter()
            .collect();
        let popped: AbstractState = [(k.clone(), s(1, &[])), (k, s(4, &[]))]
            .into_iter()
            .collect();
        assert_eq!(tau(&instr("50", 0), &two, &j).unwrap(), popped);
    }

    #[test]
    fn tau_reports_context() {
        let k = s(0, &[]);
        let pi: AbstractState = [(k.clone(), k.clone())].into_iter().collect();
        let err = tau(&instr("50", 7), &pi, &dests(&[])).unwrap_err();
        assert_eq!(err.context, k);
        assert_eq!(err.source.pc(), 7);
    }

    fn any_instruction() -> impl Strategy<Value = Instruction> {
        (any::<u8>(), any::<[u8; 2]>()).prop_map(|(op, imm)| {
            let op = if (0x62..=0x7f).contains(&op) {
                opcodes::PUSH2
            } else {
                op
            };
            decode_bytes(&[op, imm[0], imm[1]]).instructions()[0].clone()
        })
    }

    fn arb_state() -> impl Strategy<Value = StackState> {
        (0usize..20).prop_flat_map(|h| {
            proptest::collection::btree_map(
                0..h.max(1),
                proptest::collection::btree_set(0usize..8, 1..3),
                0..=h,
            )
            .prop_map(move |mut m| {
                m.retain(|p, _| *p < h);
                StackState::new(h, m).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn height_arithmetic(i in any_instruction(), st in arb_state()) {
            let j: BTreeSet<Pc> = (0..8).collect();
            if let Ok(out) = lambda(&i, &st, &j) {
                prop_assert_eq!(
                    out.height(),
                    st.height() - usize::from(i.spec.delta) + usize::from(i.spec.alpha)
                );
            } else {
                prop_assert!(st.height() < usize::from(i.spec.delta));
            }
        }

        #[test]
        fn never_invents_destinations(i in any_instruction(), st in arb_state()) {
            let j: BTreeSet<Pc> = (0..8).collect();
            if let Ok(out) = lambda(&i, &st, &j) {
                let mut allowed = st.destinations();
                if let Some(v) = i.push_value().filter(|v| j.contains(v)) {
                    allowed.insert(v);
                }
                prop_assert!(out.destinations().is_subset(&allowed));
            }
        }

        #[test]
        fn tau_is_monotone(a in abstract_state(), b in abstract_state(), i in any_instruction()) {
            let j: BTreeSet<Pc> = [3, 5, 11].into_iter().collect();
            let big = a.join(&b);
            if let (Ok(ta), Ok(tb)) = (tau(&i, &a, &j), tau(&i, &big, &j)) {
                prop_assert!(ta.leq(&tb));
            }
        }
    }
}
