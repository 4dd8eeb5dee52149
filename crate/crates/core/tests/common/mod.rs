#![allow(dead_code)]

use stackcfg::asm::Assembler;
use stackcfg::bytecode::opcodes::*;
use stackcfg::oracle::Shape;
use stackcfg::Program;

pub const LINEAR: &str = "6003565b00";
pub const BRANCH: &str = "6001600657005b00";
pub const SHARED_FN: &str = "60056010565b600b6010565b00fefefe5b56";

/// A routine at 0x64b entered from two callers that leave different amounts
/// of stack below the return address: 0x941 (return to 0x954, 7 words) and
/// 0x123 (return to 0x142, 3 words).
pub fn shared_return() -> Program {
    let mut a = Assembler::new();
    for _ in 0..8 {
        a.push_bytes(&[0]);
    }
    a.push(1).push_label("l941").op(JUMPI);
    for _ in 0..6 {
        a.op(POP);
    }
    a.push_label("l123").op(JUMP);

    a.org(0x123).label("l123").op(POP);
    a.push_label("l142")
        .push(4)
        .op(DUP1)
        .op(CALLDATASIZE)
        .op(SUB)
        .op(POP);
    a.push_label("l64b").op(JUMP);

    a.org(0x142).label("l142").push(0).push(0).op(RETURN);

    a.org(0x64b).label("l64b");
    a.push(0)
        .op(DUP1)
        .push(0)
        .op(SWAP1)
        .op(POP)
        .op(POP)
        .op(POP)
        .op(POP);
    a.op(JUMP);

    a.org(0x941).label("l941").op(MOD).op(ADD);
    a.push(0x0a).op(DUP1 + 1).op(SWAP1).op(SSTORE).op(POP);
    a.push_label("l954").push(0x0a).op(SLOAD);
    a.push_label("l64b").op(JUMP);
    a.label("l954").op(STOP);

    a.program().expect("fixture assembles")
}

/// Generator shapes cycled through by seed.
pub fn shape_for(seed: u64) -> Shape {
    Shape {
        max_blocks: 30,
        max_call_depth: 1 + (seed / 4 % 3) as usize,
        max_stack: 16,
        functions: (seed % 4) as usize,
        call_sites: 2 + (seed / 12 % 2) as usize,
    }
}
