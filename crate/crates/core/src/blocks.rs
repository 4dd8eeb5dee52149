//! Basic-block partitioning.
//!
//! A block opens at pc 0, at every `JUMPDEST`, and right after every `JUMPI`.
//! It closes at a jump, at a halting instruction, before a `JUMPDEST`, or at
//! the end of the code. Instructions that no block reaches (filler after a
//! halt or an unconditional jump) are reported separately.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytecode::{fmt_pc, Instruction, OpClass, Pc, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminator {
    Jump,
    JumpI,
    End,
    FallToJumpdest,
    CodeEnd,
}

impl fmt::Display for Terminator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Terminator::Jump => "jump",
            Terminator::JumpI => "jumpi",
            Terminator::End => "end",
            Terminator::FallToJumpdest => "fall_to_jumpdest",
            Terminator::CodeEnd => "code_end",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub start_pc: Pc,
    pub end_pc: Pc,
    pub body: Vec<Instruction>,
    pub terminator: Terminator,
}

impl Block {
    pub fn last(&self) -> &Instruction {
        self.body.last().expect("blocks are non-empty")
    }

    /// Whether an instruction of this block starts at `pc`. Immediate bytes
    /// of a push are not instruction pcs.
    pub fn contains(&self, pc: Pc) -> bool {
        (self.start_pc..=self.end_pc).contains(&pc)
            && self.body.binary_search_by_key(&pc, |i| i.pc).is_ok()
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BlockLookupError {
    #[error("pc {} is not covered by any block", fmt_pc(*.0))]
    NotCovered(Pc),
}

/// Blocks keyed by start pc, plus the pcs of instructions no block covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    blocks: BTreeMap<Pc, Block>,
    unreached: Vec<Pc>,
}

impl Partition {
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn unreached(&self) -> &[Pc] {
        &self.unreached
    }

    /// The block that starts exactly at `pc`.
    pub fn starting_at(&self, pc: Pc) -> Option<&Block> {
        self.blocks.get(&pc)
    }

    pub fn is_block_start(&self, pc: Pc) -> bool {
        self.blocks.contains_key(&pc)
    }

    pub fn block_at(&self, pc: Pc) -> Result<&Block, BlockLookupError> {
        block_at(self, pc)
    }
}

fn opens_block(prev: Option<&Instruction>, instr: &Instruction) -> bool {
    match prev {
        None => true,
        Some(p) => instr.spec.is_jumpdest() || p.spec.class == OpClass::JumpI,
    }
}

fn terminator_of(instr: &Instruction, next: Option<&Instruction>) -> Option<Terminator> {
    match instr.spec.class {
        OpClass::Jump => Some(Terminator::Jump),
        OpClass::JumpI => Some(Terminator::JumpI),
        OpClass::Halt => Some(Terminator::End),
        _ => match next {
            None => Some(Terminator::CodeEnd),
            Some(n) if n.spec.is_jumpdest() => Some(Terminator::FallToJumpdest),
            Some(_) => None,
        },
    }
}

pub fn partition_blocks(program: &Program) -> Partition {
    let instrs = program.instructions();
    let mut blocks = BTreeMap::new();
    let mut unreached = Vec::new();
    let mut current: Option<Vec<Instruction>> = None;

    for (idx, instr) in instrs.iter().enumerate() {
        let prev = idx.checked_sub(1).map(|i| &instrs[i]);
        if current.is_none() {
            if opens_block(prev, instr) {
                current = Some(Vec::new());
            } else {
                unreached.push(instr.pc);
                continue;
            }
        }
        let body = current.as_mut().expect("block open");
        body.push(instr.clone());
        if let Some(terminator) = terminator_of(instr, instrs.get(idx + 1)) {
            let body = current.take().expect("block open");
            let start_pc = body[0].pc;
            blocks.insert(
                start_pc,
                Block {
                    start_pc,
                    end_pc: instr.pc,
                    body,
                    terminator,
                },
            );
        }
    }
    Partition { blocks, unreached }
}

pub fn block_at(partition: &Partition, pc: Pc) -> Result<&Block, BlockLookupError> {
    partition
        .blocks
        .range(..=pc)
        .next_back()
        .map(|(_, b)| b)
        .filter(|b| b.contains(pc))
        .ok_or(BlockLookupError::NotCovered(pc))
}
