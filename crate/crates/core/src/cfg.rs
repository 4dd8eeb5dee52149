//! Stack-sensitive control-flow graph.
//!
//! Each block is cloned once per entry context in the domain of its first
//! variable. A replica `B_{i:id}` names the clone of block `i` for the
//! context numbered `id` (1-based, in replica order). Edges come from jumps
//! (`E_jump`) and from fallthrough into the next block (`E_next`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::Terminator;
use crate::bytecode::{fmt_pc, OpClass, Pc};
use crate::domain::StackState;
use crate::equations::EquationSystem;
use crate::transfer::{lambda, ArityError};

pub const JSON_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReplicaId {
    pub block: Pc,
    pub id: usize,
}

impl ReplicaId {
    pub fn new(block: Pc, id: usize) -> Self {
        ReplicaId { block, id }
    }

    /// DOT node name, `B_<hexpc>_<id>`.
    pub fn node_name(&self) -> String {
        format!("B_{:x}_{}", self.block, self.id)
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B_{}:{}", fmt_pc(self.block), self.id)
    }
}

pub type Edge = (ReplicaId, ReplicaId);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Cfg {
    pub vertices: BTreeSet<ReplicaId>,
    pub jump_edges: BTreeSet<Edge>,
    pub next_edges: BTreeSet<Edge>,
    /// `B_{0:1}`; absent only for empty code.
    pub entry: Option<ReplicaId>,
}

impl Cfg {
    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.jump_edges.iter().chain(self.next_edges.iter())
    }

    pub fn successors(&self, from: ReplicaId) -> impl Iterator<Item = ReplicaId> + '_ {
        self.edges()
            .filter(move |(f, _)| *f == from)
            .map(|(_, t)| *t)
    }

    pub fn replicas_of(&self, block: Pc) -> impl Iterator<Item = ReplicaId> + '_ {
        self.vertices
            .range(ReplicaId::new(block, 0)..ReplicaId::new(block + 1, 0))
            .copied()
    }

    /// Vertices reachable from the entry along any edge.
    pub fn reachable(&self) -> BTreeSet<ReplicaId> {
        let mut adj: BTreeMap<ReplicaId, Vec<ReplicaId>> = BTreeMap::new();
        for (f, t) in self.edges() {
            adj.entry(*f).or_default().push(*t);
        }
        let mut seen = BTreeSet::new();
        let mut stack: Vec<ReplicaId> = self.entry.into_iter().collect();
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                stack.extend(adj.get(&v).into_iter().flatten().copied());
            }
        }
        seen
    }

    pub fn without_edge(&self, edge: &Edge) -> Cfg {
        let mut out = self.clone();
        out.jump_edges.remove(edge);
        out.next_edges.remove(edge);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CfgError {
    #[error("{} is not an entry context of block {}", .context, fmt_pc(*.block))]
    UnknownContext { block: Pc, context: StackState },
    #[error("block {} has no replica {id}", fmt_pc(*.block))]
    UnknownReplica { block: Pc, id: usize },
    #[error("replica {replica} does not reach {}", fmt_pc(*.pc))]
    NotReached { pc: Pc, replica: ReplicaId },
    #[error("replica {replica} reaches {} with several stack heights {heights:?}", fmt_pc(*.pc))]
    AmbiguousHeight {
        pc: Pc,
        replica: ReplicaId,
        heights: BTreeSet<usize>,
    },
    #[error("edge from {from} to {}: target context {context} is missing (unsound system)", fmt_pc(*.target))]
    MissingTarget {
        from: ReplicaId,
        target: Pc,
        context: StackState,
    },
    #[error("replica {replica} jumps with no tracked target at {}", fmt_pc(*.pc))]
    UnresolvedJump { pc: Pc, replica: ReplicaId },
    #[error(transparent)]
    Arity(#[from] ArityError),
}

/// `getId(i, s)`.
pub fn get_id(
    block_start: Pc,
    s: &StackState,
    sys: &EquationSystem,
) -> Result<ReplicaId, CfgError> {
    sys.var(block_start)
        .contexts()
        .position(|c| c == s)
        .map(|idx| ReplicaId::new(block_start, idx + 1))
        .ok_or_else(|| CfgError::UnknownContext {
            block: block_start,
            context: s.clone(),
        })
}

/// `getStack(i, id)`, the inverse of [`get_id`].
pub fn get_stack(block_start: Pc, id: usize, sys: &EquationSystem) -> Result<StackState, CfgError> {
    id.checked_sub(1)
        .and_then(|idx| sys.var(block_start).contexts().nth(idx))
        .cloned()
        .ok_or(CfgError::UnknownReplica {
            block: block_start,
            id,
        })
}

/// Every stack height replica `replica` can have on reaching `pc`.
pub fn get_sizes(
    pc: Pc,
    replica: ReplicaId,
    sys: &EquationSystem,
) -> Result<BTreeSet<usize>, CfgError> {
    let ctx = get_stack(replica.block, replica.id, sys)?;
    let heights: BTreeSet<usize> = sys
        .var(pc)
        .img(&ctx)
        .iter()
        .map(StackState::height)
        .collect();
    if heights.is_empty() {
        return Err(CfgError::NotReached { pc, replica });
    }
    Ok(heights)
}

/// `getSize(pc, id)`: the unique stack height of `replica` at `pc`.
pub fn get_size(pc: Pc, replica: ReplicaId, sys: &EquationSystem) -> Result<usize, CfgError> {
    let heights = get_sizes(pc, replica, sys)?;
    if heights.len() > 1 {
        return Err(CfgError::AmbiguousHeight {
            pc,
            replica,
            heights,
        });
    }
    Ok(*heights.first().expect("non-empty"))
}

pub fn build_cfg(sys: &EquationSystem) -> Result<Cfg, CfgError> {
    let program = sys.program();
    let jumpdests = program.jumpdests();
    let mut cfg = Cfg::default();

    for block in sys.partition().blocks() {
        let i = block.start_pc;
        for (idx, _) in sys.var(i).contexts().enumerate() {
            cfg.vertices.insert(ReplicaId::new(i, idx + 1));
        }
    }

    let target = |from: ReplicaId, d: Pc, after: &StackState| -> Result<ReplicaId, CfgError> {
        get_id(d, after, sys).map_err(|_| CfgError::MissingTarget {
            from,
            target: d,
            context: after.clone(),
        })
    };

    for block in sys.partition().blocks() {
        let last = block.last();
        let j = last.pc;
        let falls_through = last.spec.class != OpClass::Jump && !last.spec.is_end();
        let next = program.successor(j).map(|n| n.pc);
        for (ctx, state) in sys.var(j).pairs() {
            let from = get_id(block.start_pc, ctx, sys)?;
            let after = lambda(last, state, jumpdests)?;
            if last.spec.is_jump() {
                let dests = state.top_destinations().ok_or(CfgError::UnresolvedJump {
                    pc: j,
                    replica: from,
                })?;
                for &d in dests {
                    cfg.jump_edges.insert((from, target(from, d, &after)?));
                }
            }
            if let (true, Some(d)) = (falls_through, next) {
                cfg.next_edges.insert((from, target(from, d, &after)?));
            }
        }
    }

    if sys.partition().is_block_start(0) && !sys.var(0).is_bottom() {
        cfg.entry = Some(ReplicaId::new(0, 1));
    }
    Ok(cfg)
}

fn dot_label(replica: ReplicaId, sys: &EquationSystem) -> String {
    let mut label = format!("{replica}");
    if let Some(block) = sys.partition().starting_at(replica.block) {
        let _ = write!(
            label,
            " [{}..{}]",
            fmt_pc(block.start_pc),
            fmt_pc(block.end_pc)
        );
        label.push_str("\\l");
        for instr in &block.body {
            let _ = write!(label, "{instr}\\l");
        }
    }
    label.replace('"', "\\\"")
}

/// Graphviz rendering: jump edges solid, fallthrough edges dashed.
pub fn export_dot(cfg: &Cfg, sys: &EquationSystem) -> String {
    let mut out = String::from("digraph cfg {\n");
    for v in &cfg.vertices {
        let _ = writeln!(
            out,
            "  {} [label=\"{}\"];",
            v.node_name(),
            dot_label(*v, sys)
        );
    }
    for (f, t) in &cfg.jump_edges {
        let _ = writeln!(out, "  {} -> {};", f.node_name(), t.node_name());
    }
    for (f, t) in &cfg.next_edges {
        let _ = writeln!(
            out,
            "  {} -> {} [style=dashed];",
            f.node_name(),
            t.node_name()
        );
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramDoc {
    pub code_len: usize,
    pub jumpdests: Vec<Pc>,
    pub unreached: Vec<Pc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionDoc {
    pub pc: Pc,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub immediate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDoc {
    pub start: Pc,
    pub end: Pc,
    pub terminator: Terminator,
    pub instructions: Vec<InstructionDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackDoc {
    pub n: usize,
    /// Stack position (as a decimal string key) to destinations.
    pub sigma: BTreeMap<String, Vec<Pc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexDoc {
    pub block: Pc,
    pub id: usize,
    pub entry: StackDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Jump,
    Next,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub kind: EdgeKind,
    pub from: ReplicaId,
    pub to: ReplicaId,
}

/// The JSON artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CfgDocument {
    pub format_version: u32,
    pub program: ProgramDoc,
    pub blocks: Vec<BlockDoc>,
    pub vertices: Vec<VertexDoc>,
    pub edges: Vec<EdgeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<ReplicaId>,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed CFG JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format_version {0}")]
    Version(u32),
    #[error("edge {0} -> {1} refers to an unknown vertex")]
    DanglingEdge(ReplicaId, ReplicaId),
}

impl StackDoc {
    pub fn from_state(s: &StackState) -> Self {
        StackDoc {
            n: s.height(),
            sigma: s
                .tracked()
                .iter()
                .map(|(pos, dests)| (pos.to_string(), dests.iter().copied().collect()))
                .collect(),
        }
    }
}

impl CfgDocument {
    pub fn new(cfg: &Cfg, sys: &EquationSystem) -> Self {
        let program = sys.program();
        let blocks = sys
            .partition()
            .blocks()
            .map(|b| BlockDoc {
                start: b.start_pc,
                end: b.end_pc,
                terminator: b.terminator,
                instructions: b
                    .body
                    .iter()
                    .map(|i| InstructionDoc {
                        pc: i.pc,
                        op: i.spec.to_string(),
                        immediate: i.immediate.as_ref().map(ToString::to_string),
                    })
                    .collect(),
            })
            .collect();
        let vertices = cfg
            .vertices
            .iter()
            .map(|v| VertexDoc {
                block: v.block,
                id: v.id,
                entry: get_stack(v.block, v.id, sys)
                    .map(|s| StackDoc::from_state(&s))
                    .unwrap_or(StackDoc {
                        n: 0,
                        sigma: BTreeMap::new(),
                    }),
            })
            .collect();
        let mut edges: Vec<EdgeDoc> = cfg
            .jump_edges
            .iter()
            .map(|(f, t)| EdgeDoc {
                kind: EdgeKind::Jump,
                from: *f,
                to: *t,
            })
            .chain(cfg.next_edges.iter().map(|(f, t)| EdgeDoc {
                kind: EdgeKind::Next,
                from: *f,
                to: *t,
            }))
            .collect();
        edges.sort_by_key(|e| (e.from, e.to, e.kind));
        CfgDocument {
            format_version: JSON_FORMAT_VERSION,
            program: ProgramDoc {
                code_len: program.code_len(),
                jumpdests: program.jumpdests().iter().copied().collect(),
                unreached: sys.partition().unreached().to_vec(),
            },
            blocks,
            vertices,
            edges,
            entry: cfg.entry,
        }
    }

    pub fn to_cfg(&self) -> Result<Cfg, ParseError> {
        if self.format_version != JSON_FORMAT_VERSION {
            return Err(ParseError::Version(self.format_version));
        }
        let mut cfg = Cfg {
            vertices: self
                .vertices
                .iter()
                .map(|v| ReplicaId::new(v.block, v.id))
                .collect(),
            entry: self.entry,
            ..Cfg::default()
        };
        for e in &self.edges {
            if !cfg.vertices.contains(&e.from) || !cfg.vertices.contains(&e.to) {
                return Err(ParseError::DanglingEdge(e.from, e.to));
            }
            match e.kind {
                EdgeKind::Jump => cfg.jump_edges.insert((e.from, e.to)),
                EdgeKind::Next => cfg.next_edges.insert((e.from, e.to)),
            };
        }
        Ok(cfg)
    }
}

/// Canonical JSON: keys sorted, arrays in a fixed order.
pub fn export_json(cfg: &Cfg, sys: &EquationSystem) -> String {
    let doc = CfgDocument::new(cfg, sys);
    // Round-tripping through `Value` sorts object keys.
    let value = serde_json::to_value(&doc).expect("document is serializable");
    let mut text = serde_json::to_string_pretty(&value).expect("value is serializable");
    text.push('\n');
    text
}

pub fn parse_json(text: &str) -> Result<Cfg, ParseError> {
    let doc: CfgDocument = serde_json::from_str(text)?;
    doc.to_cfg()
}
