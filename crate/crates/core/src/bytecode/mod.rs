//! Bytecode decoding.
//!
//! Turns hex text into an instruction stream keyed by program counter, and
//! records the set of valid jump destinations (the pcs of `JUMPDEST`s).

pub mod opcodes;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

pub use opcodes::{OpClass, OpSpec};

/// Byte offset into the code.
pub type Pc = usize;

/// Maximum EVM stack depth.
pub const STACK_LIMIT: usize = 1024;

/// Formats a pc the way every human-facing report does: `0x`-prefixed hex.
pub fn fmt_pc(pc: Pc) -> String {
    format!("{pc:#04x}")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("odd number of hex digits ({digits}); last digit at offset {offset}")]
    OddLength { digits: usize, offset: usize },
    #[error("invalid hex digit {ch:?} at offset {offset}")]
    InvalidDigit { ch: char, offset: usize },
}

/// The inline operand of a `PUSHx`, stored big-endian in `x` bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Immediate {
    bytes: Vec<u8>,
}

impl Immediate {
    pub fn new(bytes: Vec<u8>) -> Self {
        debug_assert!(!bytes.is_empty() && bytes.len() <= 32);
        Immediate { bytes }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// The value as a program counter, if it fits in one.
    pub fn as_pc(&self) -> Option<Pc> {
        let significant: Vec<u8> = self.bytes.iter().copied().skip_while(|b| *b == 0).collect();
        if significant.len() > std::mem::size_of::<Pc>() {
            return None;
        }
        Some(
            significant
                .iter()
                .fold(0usize, |acc, b| (acc << 8) | usize::from(*b)),
        )
    }
}

impl fmt::Display for Immediate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(&self.bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub pc: Pc,
    pub spec: OpSpec,
    pub immediate: Option<Immediate>,
}

impl Instruction {
    /// Number of bytes the instruction occupies: the opcode plus its immediate.
    pub fn size(&self) -> usize {
        instruction_size(self)
    }

    /// Pc of the instruction that textually follows this one.
    pub fn next_pc(&self) -> Pc {
        self.pc + self.size()
    }

    /// For pushes, the pushed value read as a program counter. `PUSH0` pushes 0.
    pub fn push_value(&self) -> Option<Pc> {
        match self.spec.class {
            OpClass::Push(0) => Some(0),
            OpClass::Push(_) => self.immediate.as_ref().and_then(Immediate::as_pc),
            _ => None,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", fmt_pc(self.pc), self.spec)?;
        if let Some(imm) = &self.immediate {
            write!(f, " {imm}")?;
        }
        Ok(())
    }
}

pub fn instruction_size(instr: &Instruction) -> usize {
    1 + usize::from(instr.spec.immediate_len)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    /// A trailing push ran past the end of the code and was zero-padded.
    TruncatedPush { pc: Pc, missing: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::TruncatedPush { pc, missing } => write!(
                f,
                "push at {} truncated by end of code; {missing} byte(s) zero-padded",
                fmt_pc(*pc)
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    instructions: Vec<Instruction>,
    code_len: usize,
    jumpdests: BTreeSet<Pc>,
    diagnostics: Vec<Diagnostic>,
}

impl Program {
    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn jumpdests(&self) -> &BTreeSet<Pc> {
        &self.jumpdests
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    /// Position of the instruction at `pc` in the instruction stream.
    pub fn index_of(&self, pc: Pc) -> Option<usize> {
        self.instructions.binary_search_by_key(&pc, |i| i.pc).ok()
    }

    pub fn at(&self, pc: Pc) -> Option<&Instruction> {
        self.index_of(pc).map(|i| &self.instructions[i])
    }

    /// The instruction following the one at `pc`, if the code continues.
    pub fn successor(&self, pc: Pc) -> Option<&Instruction> {
        self.index_of(pc).and_then(|i| self.instructions.get(i + 1))
    }

    /// Re-serializes the program. Zero padding added to a truncated final
    /// push is dropped, so this reproduces the decoded bytes exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.code_len);
        for instr in &self.instructions {
            out.push(instr.spec.byte);
            if let Some(imm) = &instr.immediate {
                out.extend_from_slice(imm.bytes());
            }
        }
        out.truncate(self.code_len);
        out
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }
}

/// Decodes hex text, tolerating an optional `0x` prefix and whitespace.
pub fn decode_bytecode(hex_text: &str) -> Result<Program, DecodeError> {
    let trimmed = hex_text.trim_start();
    let skip = hex_text.len() - trimmed.len();
    let (body, base) = match trimmed
        .strip_prefix("0x")
        .or_else(|| trimmed.strip_prefix("0X"))
    {
        Some(rest) => (rest, skip + 2),
        None => (trimmed, skip),
    };

    // Digits with their offsets in the original text, so errors can point there.
    let (digits, offsets): (String, Vec<usize>) = body
        .char_indices()
        .filter(|(_, ch)| !ch.is_whitespace())
        .map(|(i, ch)| (ch, base + i))
        .unzip();
    let bytes = hex::decode(&digits).map_err(|e| match e {
        // Everything before the first bad character is ASCII, so the byte
        // index is also a char index.
        hex::FromHexError::InvalidHexCharacter { index, .. } => DecodeError::InvalidDigit {
            ch: digits[index..].chars().next().unwrap_or('?'),
            offset: offsets[index],
        },
        _ => DecodeError::OddLength {
            digits: offsets.len(),
            offset: offsets.last().copied().unwrap_or(base),
        },
    })?;
    Ok(decode_bytes(&bytes))
}

/// Decodes raw bytes. Never fails: unknown bytes become INVALID-class
/// instructions and a truncated trailing push is zero-padded.
pub fn decode_bytes(code: &[u8]) -> Program {
    let mut instructions = Vec::new();
    let mut jumpdests = BTreeSet::new();
    let mut diagnostics = Vec::new();
    let mut pc = 0;
    while pc < code.len() {
        let spec = opcodes::spec_for(code[pc]);
        let width = usize::from(spec.immediate_len);
        let immediate = (width > 0).then(|| {
            let start = pc + 1;
            let end = (start + width).min(code.len());
            let mut imm = code[start.min(code.len())..end].to_vec();
            let missing = width - imm.len();
            if missing > 0 {
                imm.resize(width, 0);
                diagnostics.push(Diagnostic::TruncatedPush { pc, missing });
            }
            Immediate::new(imm)
        });
        if spec.is_jumpdest() {
            jumpdests.insert(pc);
        }
        instructions.push(Instruction {
            pc,
            spec,
            immediate,
        });
        pc += 1 + width;
    }
    Program {
        instructions,
        code_len: code.len(),
        jumpdests,
        diagnostics,
    }
}

pub fn jump_destinations(program: &Program) -> BTreeSet<Pc> {
    program.jumpdests.clone()
}
