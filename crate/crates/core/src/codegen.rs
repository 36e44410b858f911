//! Emission of the annotated translated program: per-block cycle
//! generation through the synchronization device, branch-outcome and
//! cache-miss correction code, the cache data region, mapping tables, and
//! the instruction-oriented debug variant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cachemodel::{partition_cabs, region_words, CacheAnalysisBlock};
use crate::frontend::{
    analyze_bases, build_cfg, decode_program, jal_return_targets, split_at_io, AluOp, BasicBlock,
    Cond, IrInstruction, IrOp, MemTarget, TranslateError,
};
use crate::image::{classify_address, BusMap, Classified, LoadedImage, MemoryMap};
use crate::procdesc::{CacheSpec, ProcessorDescription, Reg};
use crate::timing::{
    branch_correction, branch_direction, scoreboard_cycles, standalone_cost, BlockTiming,
    Direction, Outcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetailLevel {
    /// Purely static prediction.
    L1,
    /// Dynamic branch-outcome correction on top of L1.
    L2,
    /// Instruction-cache simulation on top of L2.
    L3,
}

impl DetailLevel {
    pub fn from_number(n: u8) -> Option<DetailLevel> {
        match n {
            1 => Some(DetailLevel::L1),
            2 => Some(DetailLevel::L2),
            3 => Some(DetailLevel::L3),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            DetailLevel::L1 => 1,
            DetailLevel::L2 => 2,
            DetailLevel::L3 => 3,
        }
    }

    pub fn models_branches(self) -> bool {
        self >= DetailLevel::L2
    }

    pub fn models_icache(self) -> bool {
        self >= DetailLevel::L3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    BlockOriented,
    InstructionOriented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondKind {
    Eq,
    Ne,
    Lt,
}

impl From<Cond> for CondKind {
    fn from(c: Cond) -> Self {
        match c {
            Cond::Eq => CondKind::Eq,
            Cond::Ne => CondKind::Ne,
            Cond::Lt => CondKind::Lt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCond {
    pub kind: CondKind,
    pub a: Reg,
    pub b: Reg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AluKind {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Addi,
}

impl From<AluOp> for AluKind {
    fn from(op: AluOp) -> Self {
        match op {
            AluOp::Add => AluKind::Add,
            AluOp::Sub => AluKind::Sub,
            AluOp::Mul => AluKind::Mul,
            AluOp::And => AluKind::And,
            AluOp::Or => AluKind::Or,
            AluOp::Xor => AluKind::Xor,
            AluOp::Shl => AluKind::Shl,
            AluOp::Shr => AluKind::Shr,
            AluOp::AddImm => AluKind::Addi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Load,
    Store,
}

/// One op of the translated program, serialized as a tagged record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TargetOp {
    /// Write the block's predicted cycle count to the synchronization
    /// device; generation then runs in parallel with the block body.
    SyncStart { cycles: u64 },
    /// Read the synchronization device, blocking until generation is done.
    SyncWait,
    /// Add cycles to the correction counter.
    CorrAdd { cycles: u64 },
    /// Generate the accumulated correction cycles and zero the counter.
    CorrFlush,
    /// Run the cache routine for one cache analysis block.
    CacheCheck { tag: u32, index: u32 },
    /// Compare the actual branch outcome against the static prediction and
    /// accrue the precomputed correction.
    BrCheck { cond: BranchCond, direction: Direction, corr_taken: u64, corr_not_taken: u64 },
    Nop,
    Alu { alu: AluKind, dst: Reg, a: Reg, b: Reg, #[serde(default, skip_serializing_if = "Option::is_none")] imm: Option<i32> },
    Movi { dst: Reg, imm: u32 },
    /// Load with a statically resolved memory address. base/offset/src_addr
    /// carry the analysis result for the debug-build soundness assertion.
    Load { dst: Reg, dst_addr: u32, base: Reg, offset: i32, src_addr: u32 },
    Store { src: Reg, dst_addr: u32, base: Reg, offset: i32, src_addr: u32 },
    BusRd { device: String, offset: u32, dst: Reg, base: Reg, reg_offset: i32, src_addr: u32 },
    BusWr { device: String, offset: u32, src: Reg, base: Reg, reg_offset: i32, src_addr: u32 },
    /// Classify the runtime effective address and route to memory or bus.
    AddrDispatch { access: AccessKind, reg: Reg, base: Reg, offset: i32 },
    Br { cond: BranchCond, taken: usize, not_taken: usize },
    Jmp { target: usize },
    /// Indirect jump through a register, dispatched over addr_map.
    JmpInd { reg: Reg },
    /// No-op outside debug sessions; marks the instruction boundary in the
    /// instruction-oriented translation.
    DebugTrap,
    Halt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslatedBlock {
    pub id: usize,
    #[serde(with = "crate::image::hex_u32")]
    pub src_start: u32,
    #[serde(with = "crate::image::hex_u32")]
    pub src_end: u32,
    pub ops: Vec<TargetOp>,
}

/// Descriptor of the cache data region appended to the translated program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRegion {
    pub spec: CacheSpec,
    /// sets * ways * (combined word + age word)
    pub words: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RamInit {
    #[serde(with = "crate::image::hex_u32")]
    pub dst_base: u32,
    #[serde(with = "hex_data")]
    pub data: Vec<u8>,
}

mod hex_data {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

mod addr_map_ser {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(map: &BTreeMap<u32, usize>, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(map.len()))?;
        for (addr, block) in map {
            seq.serialize_element(&(format!("{addr:#x}"), *block))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, usize>, D::Error> {
        let pairs: Vec<(String, usize)> = Vec::deserialize(d)?;
        pairs
            .into_iter()
            .map(|(a, b)| {
                let digits = a.strip_prefix("0x").ok_or_else(|| serde::de::Error::custom("bad addr"))?;
                u32::from_str_radix(digits, 16)
                    .map(|addr| (addr, b))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u32], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| format!("{x:#x}")))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u32>, D::Error> {
        let items: Vec<String> = Vec::deserialize(d)?;
        items
            .into_iter()
            .map(|a| {
                let digits = a.strip_prefix("0x").ok_or_else(|| serde::de::Error::custom("bad hex"))?;
                u32::from_str_radix(digits, 16).map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

/// The annotated program for the virtual target machine, self-contained so
/// `translate` and `run` can be separate invocations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslatedProgram {
    pub version: u32,
    pub description: String,
    pub level: DetailLevel,
    pub variant: Variant,
    pub entry_block: usize,
    pub blocks: Vec<TranslatedBlock>,
    /// Source block leader address -> block id.
    #[serde(with = "addr_map_ser")]
    pub addr_map: BTreeMap<u32, usize>,
    /// Source register -> target register (identity).
    pub reg_map: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_region: Option<CacheRegion>,
    /// Statically recorded JR dispatch targets; empty = dispatch over all
    /// leaders.
    #[serde(with = "hex_vec")]
    pub jr_targets: Vec<u32>,
    pub memory_map: MemoryMap,
    pub bus_map: BusMap,
    pub ram_init: Vec<RamInit>,
}

pub const PROGRAM_FORMAT_VERSION: u32 = 1;

impl TranslatedProgram {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).unwrap();
        s.push('\n');
        s
    }

    pub fn from_json(doc: &str) -> Result<Self, TranslateError> {
        let prog: TranslatedProgram = serde_json::from_str(doc)
            .map_err(|e| TranslateError::Illegal { addr: 0, word: 0, reason: format!("bad program document: {e}") })?;
        if prog.version != PROGRAM_FORMAT_VERSION {
            return Err(TranslateError::Illegal {
                addr: 0,
                word: 0,
                reason: format!("unsupported program format version {}", prog.version),
            });
        }
        Ok(prog)
    }
}

fn is_bus_capable(op: &TargetOp) -> bool {
    matches!(op, TargetOp::BusRd { .. } | TargetOp::BusWr { .. } | TargetOp::AddrDispatch { .. })
}

/// Mirrors one non-control-transfer IR instruction into target ops.
fn body_op(ins: &IrInstruction) -> Option<TargetOp> {
    match ins.op {
        IrOp::Nop => Some(TargetOp::Nop),
        IrOp::Alu(op) => Some(match op {
            AluOp::AddImm => TargetOp::Alu {
                alu: AluKind::Addi,
                dst: ins.dst.unwrap(),
                a: ins.srcs[0],
                b: 0,
                imm: Some(ins.imm.unwrap()),
            },
            _ => TargetOp::Alu {
                alu: op.into(),
                dst: ins.dst.unwrap(),
                a: ins.srcs[0],
                b: ins.srcs[1],
                imm: None,
            },
        }),
        IrOp::Movi => Some(TargetOp::Movi { dst: ins.dst.unwrap(), imm: ins.imm.unwrap() as u32 }),
        IrOp::Load => {
            let base = ins.srcs[0];
            let offset = ins.imm.unwrap_or(0);
            Some(match ins.io_target.as_ref().expect("analysis ran") {
                MemTarget::Ram { src_addr, dst_addr } => TargetOp::Load {
                    dst: ins.dst.unwrap(),
                    dst_addr: *dst_addr,
                    base,
                    offset,
                    src_addr: *src_addr,
                },
                MemTarget::Bus { src_addr, device, offset: dev_off } => TargetOp::BusRd {
                    device: device.clone(),
                    offset: *dev_off,
                    dst: ins.dst.unwrap(),
                    base,
                    reg_offset: offset,
                    src_addr: *src_addr,
                },
                MemTarget::Runtime => {
                    TargetOp::AddrDispatch { access: AccessKind::Load, reg: ins.dst.unwrap(), base, offset }
                }
            })
        }
        IrOp::Store => {
            let (src, base) = (ins.srcs[0], ins.srcs[1]);
            let offset = ins.imm.unwrap_or(0);
            Some(match ins.io_target.as_ref().expect("analysis ran") {
                MemTarget::Ram { src_addr, dst_addr } => TargetOp::Store {
                    src,
                    dst_addr: *dst_addr,
                    base,
                    offset,
                    src_addr: *src_addr,
                },
                MemTarget::Bus { src_addr, device, offset: dev_off } => TargetOp::BusWr {
                    device: device.clone(),
                    offset: *dev_off,
                    src,
                    base,
                    reg_offset: offset,
                    src_addr: *src_addr,
                },
                MemTarget::Runtime => {
                    TargetOp::AddrDispatch { access: AccessKind::Store, reg: src, base, offset }
                }
            })
        }
        // The JAL link write is a body op; the transfer itself is the
        // block terminator.
        IrOp::Call => Some(TargetOp::Movi { dst: ins.dst.unwrap(), imm: ins.src_addr + 4 }),
        IrOp::Branch(_) | IrOp::Jump | IrOp::JumpReg | IrOp::Halt => None,
    }
}

struct EdgeTargets {
    taken: Option<usize>,
    fallthrough: Option<usize>,
}

fn edge_targets(block: &BasicBlock) -> EdgeTargets {
    let mut t = EdgeTargets { taken: None, fallthrough: None };
    for (id, kind) in &block.successors {
        match kind {
            crate::frontend::EdgeKind::Taken | crate::frontend::EdgeKind::Call => t.taken = Some(*id),
            crate::frontend::EdgeKind::Fallthrough => t.fallthrough = Some(*id),
            crate::frontend::EdgeKind::ReturnUnknown => {}
        }
    }
    t
}

fn terminator_op(block: &BasicBlock) -> TargetOp {
    let targets = edge_targets(block);
    match block.terminator() {
        Some(term) => match term.op {
            IrOp::Branch(cond) => TargetOp::Br {
                cond: BranchCond { kind: cond.into(), a: term.srcs[0], b: term.srcs[1] },
                taken: targets.taken.unwrap(),
                not_taken: targets.fallthrough.unwrap(),
            },
            IrOp::Jump | IrOp::Call => TargetOp::Jmp { target: targets.taken.unwrap() },
            IrOp::JumpReg => TargetOp::JmpInd { reg: term.srcs[0] },
            IrOp::Halt => TargetOp::Halt,
            _ => unreachable!(),
        },
        None => TargetOp::Jmp { target: targets.fallthrough.expect("non-terminated block falls through") },
    }
}

fn br_check_op(term: &IrInstruction, desc: &ProcessorDescription) -> TargetOp {
    let IrOp::Branch(cond) = term.op else { unreachable!() };
    let direction = branch_direction(term);
    TargetOp::BrCheck {
        cond: BranchCond { kind: cond.into(), a: term.srcs[0], b: term.srcs[1] },
        direction,
        corr_taken: branch_correction(desc, direction, Outcome::Taken),
        corr_not_taken: branch_correction(desc, direction, Outcome::NotTaken),
    }
}

/// Annotates one basic block. Op order: SYNC_START first; one CACHE_CHECK
/// per cache analysis block ahead of that CAB's body ops (L3); body ops;
/// BR_CHECK just before the terminating conditional branch (L2+);
/// SYNC_WAIT; CORR_FLUSH (L2+); final control transfer. A bus-capable op
/// is instead placed after SYNC_WAIT/CORR_FLUSH so the access happens once
/// the block's cycles are fully generated; I/O splitting guarantees such an
/// op is alone in its block.
pub fn annotate_block(
    block: &BasicBlock,
    timing: &BlockTiming,
    cabs: Option<&[CacheAnalysisBlock]>,
    level: DetailLevel,
    desc: &ProcessorDescription,
) -> Result<TranslatedBlock, TranslateError> {
    if level.models_icache() && cabs.is_none() {
        return Err(TranslateError::MissingCacheSpec);
    }
    let mut ops = vec![TargetOp::SyncStart { cycles: timing.static_cycles }];
    let mut tail = Vec::new();

    for (pos, ins) in block.instrs.iter().enumerate() {
        if let Some(cabs) = cabs.filter(|_| level.models_icache()) {
            if let Some(cab) = cabs.iter().find(|c| c.first == pos) {
                ops.push(TargetOp::CacheCheck { tag: cab.tag, index: cab.index });
            }
        }
        if let Some(op) = body_op(ins) {
            if is_bus_capable(&op) {
                tail.push(op);
            } else {
                ops.push(op);
            }
        }
    }

    if level.models_branches() {
        if let Some(term) = block.terminator() {
            if matches!(term.op, IrOp::Branch(_)) {
                ops.push(br_check_op(term, desc));
            }
        }
    }
    ops.push(TargetOp::SyncWait);
    if level.models_branches() {
        ops.push(TargetOp::CorrFlush);
    }
    ops.extend(tail);
    ops.push(terminator_op(block));

    Ok(TranslatedBlock { id: block.id, src_start: block.start, src_end: block.end, ops })
}

/// Emits one instruction per translated block, each with its standalone
/// scoreboard cost and a debug trap; the single-step side of the dual
/// translation.
fn emit_instruction_oriented(
    blocks: &[BasicBlock],
    level: DetailLevel,
    desc: &ProcessorDescription,
) -> Result<(Vec<TranslatedBlock>, BTreeMap<u32, usize>), TranslateError> {
    let cache = desc.icache.as_ref();
    if level.models_icache() && cache.is_none() {
        return Err(TranslateError::MissingCacheSpec);
    }
    let instrs: Vec<&IrInstruction> = blocks.iter().flat_map(|b| b.instrs.iter()).collect();
    let addr_map: BTreeMap<u32, usize> =
        instrs.iter().enumerate().map(|(i, ins)| (ins.src_addr, i)).collect();
    // Block-id lookup by leader address for branch targets.
    let leader_block: BTreeMap<u32, &BasicBlock> = blocks.iter().map(|b| (b.start, b)).collect();

    let mut out = Vec::with_capacity(instrs.len());
    for (id, ins) in instrs.iter().enumerate() {
        let mut ops = vec![
            TargetOp::SyncStart { cycles: standalone_cost(ins, desc) },
            TargetOp::DebugTrap,
        ];
        let mut tail = Vec::new();
        if let Some(cache) = cache.filter(|_| level.models_icache()) {
            let (tag, index) = crate::cachemodel::cab_key(ins.src_addr, cache);
            ops.push(TargetOp::CacheCheck { tag, index });
        }
        if let Some(op) = body_op(ins) {
            if is_bus_capable(&op) {
                tail.push(op);
            } else {
                ops.push(op);
            }
        }
        if level.models_branches() && matches!(ins.op, IrOp::Branch(_)) {
            ops.push(br_check_op(ins, desc));
        }
        ops.push(TargetOp::SyncWait);
        if level.models_branches() {
            ops.push(TargetOp::CorrFlush);
        }
        ops.extend(tail);

        let next = ins.src_addr + 4;
        let term = match ins.op {
            IrOp::Branch(cond) => TargetOp::Br {
                cond: BranchCond { kind: cond.into(), a: ins.srcs[0], b: ins.srcs[1] },
                taken: addr_map[&ins.target.unwrap()],
                not_taken: addr_map[&next],
            },
            IrOp::Jump | IrOp::Call => TargetOp::Jmp { target: addr_map[&ins.target.unwrap()] },
            IrOp::JumpReg => TargetOp::JmpInd { reg: ins.srcs[0] },
            IrOp::Halt => TargetOp::Halt,
            _ => {
                // Straight-line fall into the next instruction; the CFG
                // guarantees it exists whenever the block does not end here.
                debug_assert!(addr_map.contains_key(&next) || leader_block.contains_key(&next));
                TargetOp::Jmp { target: addr_map[&next] }
            }
        };
        ops.push(term);
        out.push(TranslatedBlock { id, src_start: ins.src_addr, src_end: ins.src_addr + 4, ops });
    }
    Ok((out, addr_map))
}

/// Initial RAM contents: every image word that the memory map covers,
/// copied to its destination address.
pub fn ram_init_from_image(img: &LoadedImage) -> Vec<RamInit> {
    let mut out: Vec<RamInit> = Vec::new();
    for sec in &img.image.sections {
        for off in (0..sec.data.len()).step_by(4) {
            let src = sec.base + off as u32;
            if let Classified::Memory(dst) = classify_address(&img.memory, &img.bus, src) {
                let word = &sec.data[off..off + 4];
                match out.last_mut() {
                    Some(run) if run.dst_base + run.data.len() as u32 == dst => {
                        run.data.extend_from_slice(word)
                    }
                    _ => out.push(RamInit { dst_base: dst, data: word.to_vec() }),
                }
            }
        }
    }
    out.sort_by_key(|r| r.dst_base);
    out
}

/// Assembles the final program from analyzed blocks and their timings.
pub fn emit_program(
    blocks: &[BasicBlock],
    timings: &[BlockTiming],
    level: DetailLevel,
    desc: &ProcessorDescription,
    variant: Variant,
    img: &LoadedImage,
) -> Result<TranslatedProgram, TranslateError> {
    let cache_spec = desc.icache.as_ref();
    if level.models_icache() && cache_spec.is_none() {
        return Err(TranslateError::MissingCacheSpec);
    }

    let (translated, addr_map) = match variant {
        Variant::BlockOriented => {
            let mut out = Vec::with_capacity(blocks.len());
            for (block, timing) in blocks.iter().zip(timings) {
                let cabs = cache_spec
                    .filter(|_| level.models_icache())
                    .map(|c| partition_cabs(block, c));
                out.push(annotate_block(block, timing, cabs.as_deref(), level, desc)?);
            }
            let addr_map = blocks.iter().map(|b| (b.start, b.id)).collect();
            (out, addr_map)
        }
        Variant::InstructionOriented => emit_instruction_oriented(blocks, level, desc)?,
    };

    let entry = img.image.entry;
    Ok(TranslatedProgram {
        version: PROGRAM_FORMAT_VERSION,
        description: desc.name.clone(),
        level,
        variant,
        entry_block: addr_map[&entry],
        blocks: translated,
        addr_map,
        reg_map: (0..16).collect(),
        cache_region: cache_spec
            .filter(|_| level.models_icache())
            .map(|c| CacheRegion { spec: *c, words: region_words(c) }),
        jr_targets: jal_return_targets(blocks),
        memory_map: img.memory.clone(),
        bus_map: img.bus.clone(),
        ram_init: ram_init_from_image(img),
    })
}

/// The analyzed source program: final blocks after I/O splitting, with
/// timings. Shared by translation, the dump flags, and the oracle's
/// boundary computation.
pub struct AnalyzedProgram {
    pub blocks: Vec<BasicBlock>,
    pub timings: Vec<BlockTiming>,
}

pub fn analyze(img: &LoadedImage, desc: &ProcessorDescription) -> Result<AnalyzedProgram, TranslateError> {
    let ir = decode_program(&img.image, desc)?;
    let blocks = build_cfg(&ir, img.image.entry)?;
    let blocks = analyze_bases(blocks, &img.memory, &img.bus);
    let blocks = split_at_io(blocks);
    let timings = blocks.iter().map(|b| scoreboard_cycles(b, desc)).collect();
    Ok(AnalyzedProgram { blocks, timings })
}

/// Full pipeline: frontend, timing, cache partition, emission.
pub fn translate(
    img: &LoadedImage,
    desc: &ProcessorDescription,
    level: DetailLevel,
    variant: Variant,
) -> Result<TranslatedProgram, TranslateError> {
    let analyzed = analyze(img, desc)?;
    emit_program(&analyzed.blocks, &analyzed.timings, level, desc, variant, img)
}
