//! Stack-sensitive control-flow graph recovery for EVM bytecode.
//!
//! The pipeline decodes bytecode ([`bytecode`]), splits it into basic blocks
//! ([`blocks`]), solves a system of equations over abstract stack states to
//! find every jump target ([`domain`], [`transfer`], [`equations`]), and
//! clones blocks per entry stack to build the CFG ([`cfg`]). The [`oracle`]
//! module runs a concrete reference semantics to check the result.

pub mod asm;
pub mod blocks;
pub mod bytecode;
pub mod cfg;
pub mod cli;
pub mod domain;
pub mod equations;
pub mod oracle;
pub mod transfer;

pub use blocks::{partition_blocks, Block, Partition, Terminator};
pub use bytecode::{decode_bytecode, decode_bytes, Instruction, Pc, Program};
pub use cfg::{build_cfg, export_dot, export_json, get_id, get_size, get_stack, Cfg, ReplicaId};
pub use domain::{AbstractState, Lattice, StackState};
pub use equations::{solve, solve_with, EquationSystem, SolveError, SolverMode};
