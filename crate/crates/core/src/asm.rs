//! A tiny label-aware assembler for building test programs.
//!
//! Labels are placed as `JUMPDEST`s and referenced through `PUSH2`, so every
//! label reference is a tracked jump destination once decoded.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bytecode::opcodes::{self, INVALID, JUMPDEST, PUSH2};
use crate::bytecode::{decode_bytes, Pc, Program};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("label {0:?} is defined twice")]
    DuplicateLabel(String),
    #[error("label {0:?} is never defined")]
    UndefinedLabel(String),
    #[error("org {target:#x} is behind the current offset {at:#x}")]
    OrgBackwards { target: Pc, at: Pc },
    #[error("label {0:?} lies beyond the PUSH2 range")]
    LabelTooFar(String),
    #[error("unknown mnemonic {0:?}")]
    UnknownMnemonic(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Item {
    Bytes(Vec<u8>),
    PushLabel(String),
    Label(String),
    Org(Pc),
}

#[derive(Debug, Clone, Default)]
pub struct Assembler {
    items: Vec<Item>,
}

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn op(&mut self, byte: u8) -> &mut Self {
        self.items.push(Item::Bytes(vec![byte]));
        self
    }

    pub fn ops(&mut self, bytes: &[u8]) -> &mut Self {
        self.items.push(Item::Bytes(bytes.to_vec()));
        self
    }

    /// Emits an opcode by name, e.g. `"SWAP1"`.
    pub fn mnemonic(&mut self, name: &str) -> Result<&mut Self, AsmError> {
        let spec = opcodes::by_mnemonic(name)
            .ok_or_else(|| AsmError::UnknownMnemonic(name.to_string()))?;
        Ok(self.op(spec.byte))
    }

    /// Pushes `value` with the narrowest `PUSHn` that holds it (at least one byte).
    pub fn push(&mut self, value: u64) -> &mut Self {
        let raw = value.to_be_bytes();
        let skip = raw.iter().take_while(|b| **b == 0).count().min(7);
        self.push_bytes(&raw[skip..])
    }

    pub fn push_bytes(&mut self, imm: &[u8]) -> &mut Self {
        assert!((1..=32).contains(&imm.len()), "push width must be 1..=32");
        let mut bytes = vec![opcodes::PUSH1 + (imm.len() as u8 - 1)];
        bytes.extend_from_slice(imm);
        self.items.push(Item::Bytes(bytes));
        self
    }

    pub fn push_label(&mut self, name: &str) -> &mut Self {
        self.items.push(Item::PushLabel(name.to_string()));
        self
    }

    /// Places a `JUMPDEST` and binds `name` to its offset.
    pub fn label(&mut self, name: &str) -> &mut Self {
        self.items.push(Item::Label(name.to_string()));
        self
    }

    /// Pads with `INVALID` up to `target`.
    pub fn org(&mut self, target: Pc) -> &mut Self {
        self.items.push(Item::Org(target));
        self
    }

    fn layout(&self) -> Result<BTreeMap<String, Pc>, AsmError> {
        let mut labels = BTreeMap::new();
        let mut at = 0;
        for item in &self.items {
            match item {
                Item::Bytes(b) => at += b.len(),
                Item::PushLabel(_) => at += 3,
                Item::Label(name) => {
                    if labels.insert(name.clone(), at).is_some() {
                        return Err(AsmError::DuplicateLabel(name.clone()));
                    }
                    at += 1;
                }
                Item::Org(target) => {
                    if *target < at {
                        return Err(AsmError::OrgBackwards {
                            target: *target,
                            at,
                        });
                    }
                    at = *target;
                }
            }
        }
        Ok(labels)
    }

    pub fn assemble(&self) -> Result<Vec<u8>, AsmError> {
        let labels = self.layout()?;
        let mut out = Vec::new();
        for item in &self.items {
            match item {
                Item::Bytes(b) => out.extend_from_slice(b),
                Item::PushLabel(name) => {
                    let pc = *labels
                        .get(name)
                        .ok_or_else(|| AsmError::UndefinedLabel(name.clone()))?;
                    let pc = u16::try_from(pc).map_err(|_| AsmError::LabelTooFar(name.clone()))?;
                    out.push(PUSH2);
                    out.extend_from_slice(&pc.to_be_bytes());
                }
                Item::Label(_) => out.push(JUMPDEST),
                Item::Org(target) => out.resize(*target, INVALID),
            }
        }
        Ok(out)
    }

    pub fn program(&self) -> Result<Program, AsmError> {
        Ok(decode_bytes(&self.assemble()?))
    }

    pub fn labels(&self) -> Result<BTreeMap<String, Pc>, AsmError> {
        self.layout()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fixture() {
        let mut a = Assembler::new();
        a.push(3).op(opcodes::JUMP).label("end").op(opcodes::STOP);
        assert_eq!(hex::encode(a.assemble().unwrap()), "6003565b00");
    }

    #[test]
    fn labels_and_org() {
        let mut a = Assembler::new();
        a.push_label("f")
            .op(opcodes::JUMP)
            .org(0x10)
            .label("f")
            .op(opcodes::STOP);
        let code = a.assemble().unwrap();
        assert_eq!(hex::encode(&code[..4]), "61001056");
        assert!(code[4..0x10].iter().all(|b| *b == INVALID));
        assert_eq!(&code[0x10..], [JUMPDEST, opcodes::STOP]);
        assert_eq!(a.labels().unwrap()["f"], 0x10);
    }

    #[test]
    fn push_widths() {
        let mut a = Assembler::new();
        a.push(0).push(0xff).push(0x100).push(0x0954);
        assert_eq!(hex::encode(a.assemble().unwrap()), "600060ff610100610954");
    }

    #[test]
    fn errors() {
        let mut a = Assembler::new();
        a.label("x").label("x");
        assert_eq!(a.assemble(), Err(AsmError::DuplicateLabel("x".into())));
        let mut a = Assembler::new();
        a.push_label("nope");
        assert_eq!(a.assemble(), Err(AsmError::UndefinedLabel("nope".into())));
        let mut a = Assembler::new();
        a.ops(&[0; 4]).org(2);
        assert_eq!(
            a.assemble(),
            Err(AsmError::OrgBackwards { target: 2, at: 4 })
        );
        assert!(Assembler::new().mnemonic("FROB").is_err());
    }
}
