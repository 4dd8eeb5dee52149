mod common;

use std::collections::BTreeSet;

use stackcfg::cfg::{get_sizes, CfgError};
use stackcfg::oracle::{check_jumps_to, check_walk, enumerate, Bounds};
use stackcfg::transfer::lambda;
use stackcfg::{build_cfg, get_id, get_size, get_stack, solve, ReplicaId, StackState};

fn s(height: usize, pairs: &[(usize, usize)]) -> StackState {
    StackState::from_pairs(height, pairs.iter().map(|(p, d)| (*p, [*d])))
}

#[test]
fn layout() {
    let p = common::shared_return();
    assert_eq!(
        p.jumpdests().iter().copied().collect::<Vec<_>>(),
        [0x123, 0x142, 0x64b, 0x941, 0x954]
    );
    assert_eq!(p.at(0x94a).unwrap().to_string(), "0x94a PUSH2 0x0954");
    assert_eq!(p.at(0x953).unwrap().spec.mnemonic, "JUMP");
    assert_eq!(p.at(0x656).unwrap().spec.mnemonic, "JUMP");
}

#[test]
fn two_contexts_reach_the_shared_block() {
    let sys = solve(&common::shared_return()).unwrap();
    let tall = s(7, &[(5, 0x954)]);
    let short = s(3, &[(1, 0x142)]);
    let contexts: Vec<StackState> = sys.var(0x64b).contexts().cloned().collect();
    assert_eq!(contexts, [tall.clone(), short.clone()]);

    assert_eq!(
        get_id(0x64b, &tall, &sys).unwrap(),
        ReplicaId::new(0x64b, 1)
    );
    assert_eq!(
        get_id(0x64b, &short, &sys).unwrap(),
        ReplicaId::new(0x64b, 2)
    );
    assert_eq!(get_stack(0x64b, 1, &sys).unwrap(), tall);
    assert_eq!(get_stack(0x64b, 2, &sys).unwrap(), short);
    assert_eq!(get_size(0x64b, ReplicaId::new(0x64b, 1), &sys), Ok(7));
    assert_eq!(get_size(0x64b, ReplicaId::new(0x64b, 2), &sys), Ok(3));
}

#[test]
fn states_along_the_callers() {
    let p = common::shared_return();
    let sys = solve(&p).unwrap();
    let caller = s(8, &[]);
    // Before the return address is pushed, then after.
    assert_eq!(sys.var(0x94a).img(&caller), &BTreeSet::from([s(5, &[])]));
    assert_eq!(
        sys.var(0x94d).img(&caller),
        &BTreeSet::from([s(6, &[(5, 0x954)])])
    );
    let jump = p.at(0x953).unwrap();
    let at_jump = sys.var(0x953).img(&caller).first().unwrap().clone();
    assert_eq!(at_jump, s(8, &[(5, 0x954), (7, 0x64b)]));
    assert_eq!(
        lambda(jump, &at_jump, p.jumpdests()).unwrap(),
        s(7, &[(5, 0x954)])
    );
}

#[test]
fn replicas_return_to_their_own_callers() {
    let sys = solve(&common::shared_return()).unwrap();
    let cfg = build_cfg(&sys).unwrap();
    let r = ReplicaId::new;
    assert!(cfg.jump_edges.contains(&(r(0x941, 1), r(0x64b, 1))));
    assert!(cfg.jump_edges.contains(&(r(0x123, 1), r(0x64b, 2))));
    let from_tall: Vec<ReplicaId> = cfg.successors(r(0x64b, 1)).collect();
    let from_short: Vec<ReplicaId> = cfg.successors(r(0x64b, 2)).collect();
    assert_eq!(from_tall, [r(0x954, 1)]);
    assert_eq!(from_short, [r(0x142, 1)]);
    assert_eq!(get_size(0x656, r(0x64b, 1), &sys), Ok(6));
    assert_eq!(get_sizes(0x656, r(0x64b, 2), &sys), Ok(BTreeSet::from([2])));
    assert!(matches!(
        get_size(0x954, r(0x64b, 1), &sys),
        Err(CfgError::NotReached { .. })
    ));
}

#[test]
fn oracle_agrees() {
    let p = common::shared_return();
    let sys = solve(&p).unwrap();
    let cfg = build_cfg(&sys).unwrap();
    let ts = enumerate(&p, Bounds::default()).unwrap();
    assert!(check_jumps_to(&p, &sys, &ts).passed());
    assert!(check_walk(&p, &cfg, &sys, &ts).passed());
}
