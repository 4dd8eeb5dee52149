//! Seeded random program generator.
//!
//! Programs are built from stack-neutral statements (straight-line filler,
//! branches, loops, jumps through held or shuffled destinations) plus
//! functions that are entered from several call sites, each pushing its own
//! return address. Every jump target is a pushed label, so the programs stay
//! within what the analysis can resolve.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asm::Assembler;
use crate::bytecode::opcodes::{
    ADD, CALLDATASIZE, DUP1, GT, INVALID, JUMP, JUMPDEST, JUMPI, LT, MLOAD, MOD, MSTORE, POP,
    RETURN, REVERT, SLOAD, SSTORE, STOP, SUB, SWAP1,
};
use crate::bytecode::{decode_bytes, Pc, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    /// Rough upper bound on optional blocks; call skeletons come on top.
    pub max_blocks: usize,
    /// Longest chain of nested calls from the main body.
    pub max_call_depth: usize,
    /// Soft limit on stack height for optional statements.
    pub max_stack: usize,
    pub functions: usize,
    /// Call sites per function.
    pub call_sites: usize,
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            max_blocks: 30,
            max_call_depth: 3,
            max_stack: 16,
            functions: 2,
            call_sites: 2,
        }
    }
}

impl Shape {
    pub fn minimal() -> Self {
        Shape {
            max_blocks: 4,
            max_call_depth: 1,
            max_stack: 4,
            functions: 1,
            call_sites: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub bytes: Vec<u8>,
    pub labels: BTreeMap<String, Pc>,
}

impl Generated {
    pub fn program(&self) -> Program {
        decode_bytes(&self.bytes)
    }

    /// Entry pc of function `i`.
    pub fn function(&self, i: usize) -> Option<Pc> {
        self.labels.get(&function_label(i)).copied()
    }
}

fn function_label(i: usize) -> String {
    format!("fn{i}")
}

#[derive(Debug, Clone)]
struct FnPlan {
    args: usize,
    returns: usize,
}

const MAX_NESTING: usize = 2;
const DEAD_FILLER: [u8; 5] = [INVALID, INVALID, STOP, JUMPDEST, POP];

struct Gen<'a> {
    rng: ChaCha8Rng,
    asm: Assembler,
    shape: &'a Shape,
    fns: Vec<FnPlan>,
    blocks_left: usize,
    next_label: usize,
}

impl Gen<'_> {
    fn fresh(&mut self) -> String {
        self.next_label += 1;
        format!("L{}", self.next_label)
    }

    fn data(&mut self) -> u64 {
        self.rng.gen_range(0..0x40)
    }

    fn take_blocks(&mut self, n: usize) -> bool {
        if self.blocks_left >= n {
            self.blocks_left -= n;
            true
        } else {
            false
        }
    }

    fn room(&self, h: usize, extra: usize) -> bool {
        h + extra <= self.shape.max_stack
    }

    fn dead_filler(&mut self) {
        let n = self.rng.gen_range(0..4);
        for _ in 0..n {
            let b = *DEAD_FILLER.choose(&mut self.rng).expect("non-empty");
            self.asm.op(b);
        }
    }

    fn halt(&mut self) {
        match self.rng.gen_range(0..4) {
            0 => {
                self.asm.op(STOP);
            }
            1 => {
                self.asm.push(0).push(0).op(RETURN);
            }
            2 => {
                self.asm.push(0).push(0).op(REVERT);
            }
            _ => {
                self.asm.op(INVALID);
            }
        }
    }

    fn filler(&mut self, h: usize) {
        let choice = self.rng.gen_range(0..8);
        match choice {
            1 if h >= 1 && self.room(h, 1) => {
                let k = self.rng.gen_range(1..=h.min(16)) as u8;
                self.asm.op(DUP1 + k - 1).op(POP);
            }
            2 if self.room(h, 2) => {
                let op = *[ADD, SUB, MOD, LT, GT]
                    .choose(&mut self.rng)
                    .expect("non-empty");
                let (a, b) = (self.data(), self.data());
                self.asm.push(a).push(b).op(op).op(POP);
            }
            3 if h >= 2 => {
                let k = self.rng.gen_range(1..=(h - 1).min(16)) as u8;
                self.asm.op(SWAP1 + k - 1).op(SWAP1 + k - 1);
            }
            4 if !self.fns.is_empty() && self.room(h, 1) => {
                let f = self.rng.gen_range(0..self.fns.len());
                self.asm.push_label(&function_label(f)).op(POP);
            }
            5 if self.room(h, 2) => {
                let (v, a) = (self.data(), self.data());
                match self.rng.gen_range(0..4) {
                    0 => self.asm.push(v).push(a).op(MSTORE),
                    1 => self.asm.push(a).op(MLOAD).op(POP),
                    2 => self.asm.push(a).op(SLOAD).op(POP),
                    _ => self.asm.push(v).push(a).op(SSTORE),
                };
            }
            6 if self.room(h, 1) => {
                self.asm.op(CALLDATASIZE).op(POP);
            }
            7 if h >= 1 && self.room(h, 1) => {
                // Copy something (possibly a held destination) and shuffle it.
                let k = self.rng.gen_range(1..=h.min(16)) as u8;
                self.asm.op(DUP1 + k - 1).op(SWAP1).op(SWAP1).op(POP);
            }
            _ if self.room(h, 1) => {
                let a = self.data();
                self.asm.push(a).op(POP);
            }
            _ => {}
        }
    }

    fn call(&mut self, callee: usize) {
        let plan = self.fns[callee].clone();
        let ret = self.fresh();
        for _ in 0..plan.args {
            let a = self.data();
            self.asm.push(a);
        }
        self.asm
            .push_label(&ret)
            .push_label(&function_label(callee))
            .op(JUMP);
        self.dead_filler();
        self.asm.label(&ret);
        for _ in 0..plan.returns {
            self.asm.op(POP);
        }
    }

    /// A stack-neutral statement at height `h`.
    fn statement(&mut self, h: usize, nesting: usize, calls: &mut Vec<usize>) {
        if !calls.is_empty() && self.rng.gen_bool(0.35) {
            let idx = self.rng.gen_range(0..calls.len());
            let callee = calls.swap_remove(idx);
            self.call(callee);
            return;
        }
        let nested = nesting < MAX_NESTING;
        match self.rng.gen_range(0..10) {
            0 if nested && self.room(h, 2) && self.take_blocks(2) => {
                let end = self.fresh();
                let c = self.data();
                self.asm.push(c).push_label(&end).op(JUMPI);
                self.statements(h, nesting + 1, calls);
                self.asm.label(&end);
            }
            1 if nested && self.room(h, 2) && self.take_blocks(3) => {
                let (then, end) = (self.fresh(), self.fresh());
                let c = self.data();
                self.asm.push(c).push_label(&then).op(JUMPI);
                self.statements(h, nesting + 1, calls);
                self.asm.push_label(&end).op(JUMP);
                self.dead_filler();
                self.asm.label(&then);
                self.statements(h, nesting + 1, calls);
                self.asm.label(&end);
            }
            2 if nested && self.room(h, 2) && self.take_blocks(3) => {
                // One branch halts.
                let (then, end) = (self.fresh(), self.fresh());
                let c = self.data();
                self.asm.push(c).push_label(&then).op(JUMPI);
                self.statements(h, nesting + 1, calls);
                self.asm.push_label(&end).op(JUMP);
                self.asm.label(&then);
                self.statements(h, nesting + 1, calls);
                self.halt();
                self.dead_filler();
                self.asm.label(&end);
            }
            3 if nested && self.room(h, 2) && self.take_blocks(2) => {
                let head = self.fresh();
                self.asm.label(&head);
                self.statements(h, nesting + 1, calls);
                let c = self.data();
                self.asm.push(c).push_label(&head).op(JUMPI);
            }
            4 if nested && self.room(h, 1) && self.take_blocks(1) => {
                // Hold a destination while other code runs, then jump to it.
                let after = self.fresh();
                self.asm.push_label(&after);
                self.statements(h + 1, nesting + 1, calls);
                self.asm.op(JUMP);
                self.dead_filler();
                self.asm.label(&after);
            }
            5 if self.room(h, 3) && self.take_blocks(1) => {
                let to = self.fresh();
                let a = self.data();
                if self.rng.gen_bool(0.5) {
                    self.asm.push(a).push_label(&to).op(SWAP1).op(POP).op(JUMP);
                } else {
                    self.asm
                        .push_label(&to)
                        .push(a)
                        .op(DUP1 + 1)
                        .op(SWAP1 + 1)
                        .op(POP)
                        .op(POP)
                        .op(JUMP);
                }
                self.dead_filler();
                self.asm.label(&to);
            }
            _ => self.filler(h),
        }
    }

    fn statements(&mut self, h: usize, nesting: usize, calls: &mut Vec<usize>) {
        let n = self.rng.gen_range(1..=3);
        for _ in 0..n {
            self.statement(h, nesting, calls);
        }
    }

    /// A full body: random statements, then any call sites not yet placed.
    fn body(&mut self, h: usize, mut calls: Vec<usize>) {
        calls.shuffle(&mut self.rng);
        self.statements(h, 0, &mut calls);
        while let Some(callee) = calls.pop() {
            self.call(callee);
            if self.rng.gen_bool(0.5) {
                self.filler(h);
            }
        }
    }

    fn function(&mut self, i: usize, calls: Vec<usize>) {
        let FnPlan { args, returns } = self.fns[i];
        self.asm.label(&function_label(i));
        // Stack on entry: args, then the return address on top.
        self.body(args + 1, calls);
        if returns == 1 {
            if !self.fns.is_empty() && self.rng.gen_bool(0.25) {
                let f = self.rng.gen_range(0..self.fns.len());
                self.asm.push_label(&function_label(f));
            } else {
                let v = self.data();
                self.asm.push(v);
            }
            self.asm.op(SWAP1);
            for _ in 0..args {
                // SWAP2; POP; SWAP1 drops the argument under (result, ret).
                self.asm.op(SWAP1 + 1).op(POP).op(SWAP1);
            }
        } else {
            for _ in 0..args {
                self.asm.op(SWAP1).op(POP);
            }
        }
        self.asm.op(JUMP);
        self.dead_filler();
    }
}

/// Assigns each function `call_sites` callers among main and higher-index
/// functions, respecting the depth bound. Returns the callees per body, with
/// body 0 being main and body `i + 1` function `i`.
fn plan_calls(rng: &mut ChaCha8Rng, shape: &Shape) -> Vec<Vec<usize>> {
    let nf = shape.functions;
    let max_depth = shape.max_call_depth.max(1);
    let mut depth = vec![0usize; nf];
    let mut calls = vec![Vec::new(); nf + 1];
    for j in (0..nf).rev() {
        let mut callers = vec![0usize];
        callers.extend((j + 1..nf).filter(|&i| depth[i] < max_depth).map(|i| i + 1));
        for _ in 0..shape.call_sites.max(1) {
            let body = *callers.choose(rng).expect("main is always a caller");
            let caller_depth = if body == 0 { 0 } else { depth[body - 1] };
            depth[j] = depth[j].max(caller_depth + 1);
            calls[body].push(j);
        }
    }
    calls
}

pub fn generate(seed: u64, shape: &Shape) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calls = plan_calls(&mut rng, shape);
    let fns = (0..shape.functions)
        .map(|_| FnPlan {
            args: rng.gen_range(0..=2),
            returns: rng.gen_range(0..=1),
        })
        .collect();
    let mut g = Gen {
        rng,
        asm: Assembler::new(),
        shape,
        fns,
        blocks_left: shape.max_blocks.saturating_sub(1),
        next_label: 0,
    };
    let mut calls = calls.into_iter();
    g.body(0, calls.next().unwrap_or_default());
    g.halt();
    g.dead_filler();
    for (i, c) in calls.enumerate() {
        g.function(i, c);
    }
    let bytes = g.asm.assemble().expect("generator emits consistent labels");
    let labels = g.asm.labels().expect("generator emits consistent labels");
    Generated { bytes, labels }
}

pub fn generate_program(seed: u64, shape: &Shape) -> Program {
    generate(seed, shape).program()
}
