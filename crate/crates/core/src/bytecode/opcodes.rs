//! Opcode catalogue with stack arities.
//!
//! `delta` is the number of words an opcode removes from the stack and
//! `alpha` the number it places back. `DUPx` and `SWAPx` carry their real EVM
//! arities (`x`/`x+1` and `x+1`/`x+1`), which double as their underflow bounds.

use std::fmt;

/// Semantic class of an opcode, as far as jump tracking is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpClass {
    /// `PUSH0`..`PUSH32`; the payload is the immediate width in bytes.
    Push(u8),
    /// `DUP1`..`DUP16`.
    Dup(u8),
    /// `SWAP1`..`SWAP16`.
    Swap(u8),
    Jump,
    JumpI,
    JumpDest,
    /// Halting opcodes: the `End` set used for block termination.
    Halt,
    /// Everything else, handled generically through its arities.
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpSpec {
    pub mnemonic: &'static str,
    pub byte: u8,
    pub delta: u16,
    pub alpha: u16,
    pub immediate_len: u8,
    pub class: OpClass,
}

impl OpSpec {
    pub fn is_jump(&self) -> bool {
        matches!(self.class, OpClass::Jump | OpClass::JumpI)
    }

    pub fn is_end(&self) -> bool {
        self.class == OpClass::Halt
    }

    pub fn is_jumpdest(&self) -> bool {
        self.class == OpClass::JumpDest
    }

    /// Whether this byte is a known opcode rather than an INVALID-class filler.
    pub fn is_defined(&self) -> bool {
        lookup_named(self.byte).is_some()
    }
}

impl fmt::Display for OpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_defined() {
            f.write_str(self.mnemonic)
        } else {
            write!(f, "{}(0x{:02x})", self.mnemonic, self.byte)
        }
    }
}

const fn op(mnemonic: &'static str, byte: u8, delta: u16, alpha: u16, class: OpClass) -> OpSpec {
    OpSpec {
        mnemonic,
        byte,
        delta,
        alpha,
        immediate_len: 0,
        class,
    }
}

use OpClass::{Halt, Other};

#[rustfmt::skip]
const NAMED: &[OpSpec] = &[
    op("STOP", 0x00, 0, 0, Halt),
    op("ADD", 0x01, 2, 1, Other),
    op("MUL", 0x02, 2, 1, Other),
    op("SUB", 0x03, 2, 1, Other),
    op("DIV", 0x04, 2, 1, Other),
    op("SDIV", 0x05, 2, 1, Other),
    op("MOD", 0x06, 2, 1, Other),
    op("SMOD", 0x07, 2, 1, Other),
    op("ADDMOD", 0x08, 3, 1, Other),
    op("MULMOD", 0x09, 3, 1, Other),
    op("EXP", 0x0a, 2, 1, Other),
    op("SIGNEXTEND", 0x0b, 2, 1, Other),
    op("LT", 0x10, 2, 1, Other),
    op("GT", 0x11, 2, 1, Other),
    op("SLT", 0x12, 2, 1, Other),
    op("SGT", 0x13, 2, 1, Other),
    op("EQ", 0x14, 2, 1, Other),
    op("ISZERO", 0x15, 1, 1, Other),
    op("AND", 0x16, 2, 1, Other),
    op("OR", 0x17, 2, 1, Other),
    op("XOR", 0x18, 2, 1, Other),
    op("NOT", 0x19, 1, 1, Other),
    op("BYTE", 0x1a, 2, 1, Other),
    op("SHL", 0x1b, 2, 1, Other),
    op("SHR", 0x1c, 2, 1, Other),
    op("SAR", 0x1d, 2, 1, Other),
    op("KECCAK256", 0x20, 2, 1, Other),
    op("ADDRESS", 0x30, 0, 1, Other),
    op("BALANCE", 0x31, 1, 1, Other),
    op("ORIGIN", 0x32, 0, 1, Other),
    op("CALLER", 0x33, 0, 1, Other),
    op("CALLVALUE", 0x34, 0, 1, Other),
    op("CALLDATALOAD", 0x35, 1, 1, Other),
    op("CALLDATASIZE", 0x36, 0, 1, Other),
    op("CALLDATACOPY", 0x37, 3, 0, Other),
    op("CODESIZE", 0x38, 0, 1, Other),
    op("CODECOPY", 0x39, 3, 0, Other),
    op("GASPRICE", 0x3a, 0, 1, Other),
    op("EXTCODESIZE", 0x3b, 1, 1, Other),
    op("EXTCODECOPY", 0x3c, 4, 0, Other),
    op("RETURNDATASIZE", 0x3d, 0, 1, Other),
    op("RETURNDATACOPY", 0x3e, 3, 0, Other),
    op("EXTCODEHASH", 0x3f, 1, 1, Other),
    op("BLOCKHASH", 0x40, 1, 1, Other),
    op("COINBASE", 0x41, 0, 1, Other),
    op("TIMESTAMP", 0x42, 0, 1, Other),
    op("NUMBER", 0x43, 0, 1, Other),
    op("PREVRANDAO", 0x44, 0, 1, Other),
    op("GASLIMIT", 0x45, 0, 1, Other),
    op("CHAINID", 0x46, 0, 1, Other),
    op("SELFBALANCE", 0x47, 0, 1, Other),
    op("BASEFEE", 0x48, 0, 1, Other),
    op("BLOBHASH", 0x49, 1, 1, Other),
    op("BLOBBASEFEE", 0x4a, 0, 1, Other),
    op("POP", 0x50, 1, 0, Other),
    op("MLOAD", 0x51, 1, 1, Other),
    op("MSTORE", 0x52, 2, 0, Other),
    op("MSTORE8", 0x53, 2, 0, Other),
    op("SLOAD", 0x54, 1, 1, Other),
    op("SSTORE", 0x55, 2, 0, Other),
    op("JUMP", 0x56, 1, 0, OpClass::Jump),
    op("JUMPI", 0x57, 2, 0, OpClass::JumpI),
    op("PC", 0x58, 0, 1, Other),
    op("MSIZE", 0x59, 0, 1, Other),
    op("GAS", 0x5a, 0, 1, Other),
    op("JUMPDEST", 0x5b, 0, 0, OpClass::JumpDest),
    op("TLOAD", 0x5c, 1, 1, Other),
    op("TSTORE", 0x5d, 2, 0, Other),
    op("MCOPY", 0x5e, 3, 0, Other),
    op("PUSH0", 0x5f, 0, 1, OpClass::Push(0)),
    op("LOG0", 0xa0, 2, 0, Other),
    op("LOG1", 0xa1, 3, 0, Other),
    op("LOG2", 0xa2, 4, 0, Other),
    op("LOG3", 0xa3, 5, 0, Other),
    op("LOG4", 0xa4, 6, 0, Other),
    op("CREATE", 0xf0, 3, 1, Other),
    op("CALL", 0xf1, 7, 1, Other),
    op("CALLCODE", 0xf2, 7, 1, Other),
    op("RETURN", 0xf3, 2, 0, Halt),
    op("DELEGATECALL", 0xf4, 6, 1, Other),
    op("CREATE2", 0xf5, 4, 1, Other),
    op("STATICCALL", 0xfa, 6, 1, Other),
    op("REVERT", 0xfd, 2, 0, Halt),
    op("INVALID", 0xfe, 0, 0, Halt),
    op("SELFDESTRUCT", 0xff, 1, 0, Halt),
];

#[rustfmt::skip]
const PUSH_NAMES: [&str; 32] = [
    "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8",
    "PUSH9", "PUSH10", "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16",
    "PUSH17", "PUSH18", "PUSH19", "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24",
    "PUSH25", "PUSH26", "PUSH27", "PUSH28", "PUSH29", "PUSH30", "PUSH31", "PUSH32",
];

#[rustfmt::skip]
const DUP_NAMES: [&str; 16] = [
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8",
    "DUP9", "DUP10", "DUP11", "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
];

#[rustfmt::skip]
const SWAP_NAMES: [&str; 16] = [
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8",
    "SWAP9", "SWAP10", "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
];

fn lookup_named(byte: u8) -> Option<OpSpec> {
    match byte {
        0x60..=0x7f => {
            let width = byte - 0x5f;
            Some(OpSpec {
                mnemonic: PUSH_NAMES[usize::from(width - 1)],
                byte,
                delta: 0,
                alpha: 1,
                immediate_len: width,
                class: OpClass::Push(width),
            })
        }
        0x80..=0x8f => {
            let x = byte - 0x7f;
            Some(OpSpec {
                mnemonic: DUP_NAMES[usize::from(x - 1)],
                byte,
                delta: u16::from(x),
                alpha: u16::from(x) + 1,
                immediate_len: 0,
                class: OpClass::Dup(x),
            })
        }
        0x90..=0x9f => {
            let x = byte - 0x8f;
            Some(OpSpec {
                mnemonic: SWAP_NAMES[usize::from(x - 1)],
                byte,
                delta: u16::from(x) + 1,
                alpha: u16::from(x) + 1,
                immediate_len: 0,
                class: OpClass::Swap(x),
            })
        }
        _ => NAMED.iter().find(|o| o.byte == byte).copied(),
    }
}

/// Returns the spec for any byte. Unassigned bytes decode as INVALID-class
/// halting instructions that keep their original byte value.
pub fn spec_for(byte: u8) -> OpSpec {
    lookup_named(byte).unwrap_or(OpSpec {
        mnemonic: "INVALID",
        byte,
        delta: 0,
        alpha: 0,
        immediate_len: 0,
        class: Halt,
    })
}

/// Looks an opcode up by mnemonic (case-insensitive).
pub fn by_mnemonic(name: &str) -> Option<OpSpec> {
    (0u8..=255)
        .filter_map(lookup_named)
        .find(|o| o.mnemonic.eq_ignore_ascii_case(name))
}

pub const STOP: u8 = 0x00;
pub const ADD: u8 = 0x01;
pub const SUB: u8 = 0x03;
pub const MOD: u8 = 0x06;
pub const LT: u8 = 0x10;
pub const GT: u8 = 0x11;
pub const CALLDATASIZE: u8 = 0x36;
pub const POP: u8 = 0x50;
pub const MLOAD: u8 = 0x51;
pub const MSTORE: u8 = 0x52;
pub const SLOAD: u8 = 0x54;
pub const SSTORE: u8 = 0x55;
pub const JUMP: u8 = 0x56;
pub const JUMPI: u8 = 0x57;
pub const JUMPDEST: u8 = 0x5b;
pub const PUSH1: u8 = 0x60;
pub const PUSH2: u8 = 0x61;
pub const DUP1: u8 = 0x80;
pub const SWAP1: u8 = 0x90;
pub const RETURN: u8 = 0xf3;
pub const REVERT: u8 = 0xfd;
pub const INVALID: u8 = 0xfe;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_byte_has_a_spec() {
        for b in 0u8..=255 {
            let s = spec_for(b);
            assert_eq!(s.byte, b);
            assert!(s.delta <= 1024 && s.alpha <= 1024);
            match s.class {
                OpClass::Push(w) => assert_eq!(s.immediate_len, w),
                _ => assert_eq!(s.immediate_len, 0),
            }
        }
    }

    #[test]
    fn immediates_only_on_push1_to_push32() {
        let with_imm: Vec<u8> = (0u8..=255)
            .filter(|b| spec_for(*b).immediate_len > 0)
            .collect();
        assert_eq!(with_imm, (0x60u8..=0x7f).collect::<Vec<_>>());
        assert_eq!(spec_for(0x62).immediate_len, 3);
    }

    #[test]
    fn unknown_bytes_are_invalid_class() {
        let s = spec_for(0x0c);
        assert_eq!(s.mnemonic, "INVALID");
        assert!(s.is_end());
        assert!(!s.is_defined());
        assert_eq!(s.to_string(), "INVALID(0x0c)");
        assert!(spec_for(INVALID).is_defined());
    }

    #[test]
    fn halting_set() {
        let halts: Vec<&str> = NAMED
            .iter()
            .filter(|o| o.is_end())
            .map(|o| o.mnemonic)
            .collect();
        assert_eq!(
            halts,
            ["STOP", "RETURN", "REVERT", "INVALID", "SELFDESTRUCT"]
        );
    }

    #[test]
    fn dup_swap_arities() {
        let dup3 = spec_for(0x82);
        assert_eq!((dup3.mnemonic, dup3.delta, dup3.alpha), ("DUP3", 3, 4));
        let swap16 = spec_for(0x9f);
        assert_eq!(
            (swap16.mnemonic, swap16.delta, swap16.alpha),
            ("SWAP16", 17, 17)
        );
    }

    #[test]
    fn mnemonic_lookup() {
        assert_eq!(by_mnemonic("jumpi").unwrap().byte, JUMPI);
        assert_eq!(by_mnemonic("PUSH32").unwrap().byte, 0x7f);
        assert!(by_mnemonic("NOPE").is_none());
    }
}
