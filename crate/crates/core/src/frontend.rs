//! Frontend: decodes the image into IR, recovers basic blocks and the CFG,
//! resolves load/store base addresses where statically possible, classifies
//! I/O accesses, and splits blocks so every bus access sits at a block
//! boundary.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::image::{classify_address, BusMap, Classified, MemoryMap, ProgramImage};
use crate::procdesc::{lookup_decode, MicroOp, ProcessorDescription, Reg};

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("illegal instruction at {addr:#x}: {reason} (word {word:#010x})")]
    Illegal { addr: u32, word: u32, reason: String },
    #[error("control transfer at {at:#x} targets {target:#x}, outside the decoded range")]
    TargetOutOfRange { at: u32, target: u32 },
    #[error("detail level 3 requires an icache spec in the processor description")]
    MissingCacheSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    AddImm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrOp {
    Alu(AluOp),
    Movi,
    Load,
    Store,
    Branch(Cond),
    Jump,
    Call,
    JumpReg,
    Halt,
    Nop,
}

impl IrOp {
    pub fn is_control_transfer(self) -> bool {
        matches!(self, IrOp::Branch(_) | IrOp::Jump | IrOp::Call | IrOp::JumpReg | IrOp::Halt)
    }

    pub fn is_mem_access(self) -> bool {
        matches!(self, IrOp::Load | IrOp::Store)
    }
}

/// Result of the static base-address analysis for one load/store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemTarget {
    /// Effective address known; classified as memory, with the remapped
    /// destination address.
    Ram { src_addr: u32, dst_addr: u32 },
    /// Effective address known; classified as an I/O access.
    Bus { src_addr: u32, device: String, offset: u32 },
    /// No reaching constant for the base register; classified at runtime.
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrInstruction {
    pub src_addr: u32,
    pub op: IrOp,
    pub dst: Option<Reg>,
    pub srcs: Vec<Reg>,
    pub imm: Option<i32>,
    /// Absolute target address for branch/jump/call.
    pub target: Option<u32>,
    pub timing_class: String,
    /// Filled by `analyze_bases` for loads and stores.
    pub io_target: Option<MemTarget>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Fallthrough,
    Taken,
    Call,
    ReturnUnknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: usize,
    pub start: u32,
    /// Exclusive.
    pub end: u32,
    pub instrs: Vec<IrInstruction>,
    pub successors: Vec<(usize, EdgeKind)>,
}

impl BasicBlock {
    pub fn terminator(&self) -> Option<&IrInstruction> {
        self.instrs.last().filter(|i| i.op.is_control_transfer())
    }
}

/// Decodes every 32-bit word of the executable sections, in address order.
pub fn decode_program(
    image: &ProgramImage,
    desc: &ProcessorDescription,
) -> Result<Vec<IrInstruction>, TranslateError> {
    let mut out = Vec::new();
    let mut sections: Vec<_> = image.sections.iter().filter(|s| s.is_executable()).collect();
    sections.sort_by_key(|s| s.base);
    for sec in sections {
        for off in (0..sec.data.len()).step_by(4) {
            let addr = sec.base + off as u32;
            let word = u32::from_le_bytes(sec.data[off..off + 4].try_into().unwrap());
            let (def, f) = lookup_decode(desc, word)
                .map_err(|e| TranslateError::Illegal { addr, word, reason: e.reason })?;
            out.push(decode_one(addr, def.ir_op, &def.timing_class, f));
        }
    }
    Ok(out)
}

fn decode_one(
    addr: u32,
    op: MicroOp,
    class: &str,
    f: crate::procdesc::DecodedFields,
) -> IrInstruction {
    let mut ir = IrInstruction {
        src_addr: addr,
        op: IrOp::Nop,
        dst: None,
        srcs: Vec::new(),
        imm: None,
        target: None,
        timing_class: class.to_string(),
        io_target: None,
    };
    let branch_target = addr.wrapping_add(4).wrapping_add((f.imm16 as u32).wrapping_mul(4));
    let jump_target = addr.wrapping_add(4).wrapping_add((f.imm26 as u32).wrapping_mul(4));
    match op {
        MicroOp::Nop => {}
        MicroOp::Add | MicroOp::Sub | MicroOp::Mul | MicroOp::And | MicroOp::Or | MicroOp::Xor
        | MicroOp::Shl | MicroOp::Shr => {
            let alu = match op {
                MicroOp::Add => AluOp::Add,
                MicroOp::Sub => AluOp::Sub,
                MicroOp::Mul => AluOp::Mul,
                MicroOp::And => AluOp::And,
                MicroOp::Or => AluOp::Or,
                MicroOp::Xor => AluOp::Xor,
                MicroOp::Shl => AluOp::Shl,
                _ => AluOp::Shr,
            };
            ir.op = IrOp::Alu(alu);
            ir.dst = Some(f.rd);
            ir.srcs = vec![f.rs1, f.rs2];
        }
        MicroOp::Addi => {
            ir.op = IrOp::Alu(AluOp::AddImm);
            ir.dst = Some(f.rd);
            ir.srcs = vec![f.rs1];
            ir.imm = Some(f.imm16);
        }
        MicroOp::Lui => {
            ir.op = IrOp::Movi;
            ir.dst = Some(f.rd);
            ir.imm = Some(((f.imm16 as u32 & 0xffff) << 16) as i32);
        }
        MicroOp::Load => {
            ir.op = IrOp::Load;
            ir.dst = Some(f.rd);
            ir.srcs = vec![f.rs1];
            ir.imm = Some(f.imm16);
        }
        MicroOp::Store => {
            // rd field holds the stored register, rs1 the base.
            ir.op = IrOp::Store;
            ir.srcs = vec![f.rd, f.rs1];
            ir.imm = Some(f.imm16);
        }
        MicroOp::Beq | MicroOp::Bne | MicroOp::Blt => {
            let cond = match op {
                MicroOp::Beq => Cond::Eq,
                MicroOp::Bne => Cond::Ne,
                _ => Cond::Lt,
            };
            ir.op = IrOp::Branch(cond);
            ir.srcs = vec![f.rd, f.rs1];
            ir.imm = Some(f.imm16);
            ir.target = Some(branch_target);
        }
        MicroOp::Jump => {
            ir.op = IrOp::Jump;
            ir.imm = Some(f.imm26);
            ir.target = Some(jump_target);
        }
        MicroOp::Call => {
            ir.op = IrOp::Call;
            ir.dst = Some(15);
            ir.imm = Some(f.imm26);
            ir.target = Some(jump_target);
        }
        MicroOp::JumpReg => {
            ir.op = IrOp::JumpReg;
            ir.srcs = vec![f.rs1];
        }
        MicroOp::Halt => {
            ir.op = IrOp::Halt;
        }
    }
    ir
}

/// Partitions the decoded program into basic blocks and builds successor
/// edges. Leaders are the entry, every control-transfer target, and every
/// address following a control transfer.
pub fn build_cfg(ir: &[IrInstruction], entry: u32) -> Result<Vec<BasicBlock>, TranslateError> {
    let index: BTreeMap<u32, usize> = ir.iter().enumerate().map(|(i, ins)| (ins.src_addr, i)).collect();
    let in_range = |addr: u32| index.contains_key(&addr);

    if !in_range(entry) {
        return Err(TranslateError::TargetOutOfRange { at: entry, target: entry });
    }

    let mut leaders: BTreeSet<u32> = BTreeSet::new();
    leaders.insert(entry);
    for ins in ir {
        if let Some(target) = ins.target {
            if !in_range(target) {
                return Err(TranslateError::TargetOutOfRange { at: ins.src_addr, target });
            }
            leaders.insert(target);
        }
        if ins.op.is_control_transfer() {
            let next = ins.src_addr + 4;
            if in_range(next) {
                leaders.insert(next);
            }
        }
    }

    // JAL return addresses are the statically known JR dispatch targets.
    let jal_returns: Vec<u32> = ir
        .iter()
        .filter(|i| i.op == IrOp::Call)
        .map(|i| i.src_addr + 4)
        .filter(|a| in_range(*a))
        .collect();

    // Cut the instruction stream at leaders, non-contiguous addresses, and
    // control transfers.
    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut current: Vec<IrInstruction> = Vec::new();
    let flush = |current: &mut Vec<IrInstruction>, blocks: &mut Vec<BasicBlock>| {
        if let (Some(first), Some(last)) = (current.first(), current.last()) {
            let (start, end) = (first.src_addr, last.src_addr + 4);
            blocks.push(BasicBlock { id: blocks.len(), start, end, instrs: std::mem::take(current), successors: Vec::new() });
        }
    };
    for ins in ir {
        let contiguous = current.last().map_or(true, |p: &IrInstruction| p.src_addr + 4 == ins.src_addr);
        if leaders.contains(&ins.src_addr) || !contiguous {
            flush(&mut current, &mut blocks);
        }
        current.push(ins.clone());
        if ins.op.is_control_transfer() {
            flush(&mut current, &mut blocks);
        }
    }
    flush(&mut current, &mut blocks);

    let block_of: BTreeMap<u32, usize> = blocks.iter().map(|b| (b.start, b.id)).collect();
    let lookup_leader = |at: u32, target: u32| -> Result<usize, TranslateError> {
        block_of.get(&target).copied().ok_or(TranslateError::TargetOutOfRange { at, target })
    };

    for bi in 0..blocks.len() {
        let (end, term) = {
            let b = &blocks[bi];
            (b.end, b.terminator().cloned())
        };
        let succs = match term {
            Some(t) => match t.op {
                IrOp::Branch(_) => {
                    let taken = lookup_leader(t.src_addr, t.target.unwrap())?;
                    let fall = lookup_leader(t.src_addr, end)?;
                    vec![(taken, EdgeKind::Taken), (fall, EdgeKind::Fallthrough)]
                }
                IrOp::Jump => vec![(lookup_leader(t.src_addr, t.target.unwrap())?, EdgeKind::Taken)],
                IrOp::Call => vec![(lookup_leader(t.src_addr, t.target.unwrap())?, EdgeKind::Call)],
                IrOp::JumpReg => jal_returns
                    .iter()
                    .map(|a| (block_of[a], EdgeKind::ReturnUnknown))
                    .collect(),
                IrOp::Halt => Vec::new(),
                _ => unreachable!(),
            },
            // Plain fallthrough into the next leader; falling off the end of
            // the decoded range is a malformed program.
            None => {
                let at = end - 4;
                vec![(lookup_leader(at, end)?, EdgeKind::Fallthrough)]
            }
        };
        blocks[bi].successors = succs;
    }
    Ok(blocks)
}

/// Per-block forward constant propagation over MOVI/ADDI/ADD, classifying
/// each load/store as a known memory access, a known I/O access, or a
/// runtime-classified access.
pub fn analyze_bases(mut blocks: Vec<BasicBlock>, mem: &MemoryMap, bus: &BusMap) -> Vec<BasicBlock> {
    for block in &mut blocks {
        // r0 always reads as zero; everything else is unknown at entry.
        let mut known: [Option<u32>; 16] = [None; 16];
        known[0] = Some(0);
        for ins in &mut block.instrs {
            if ins.op.is_mem_access() {
                let base = ins.srcs[if ins.op == IrOp::Load { 0 } else { 1 }];
                let target = match known[base as usize] {
                    Some(v) => {
                        let eff = v.wrapping_add(ins.imm.unwrap_or(0) as u32);
                        match classify_address(mem, bus, eff) {
                            Classified::Memory(dst) => MemTarget::Ram { src_addr: eff, dst_addr: dst },
                            Classified::Io { device, offset } => {
                                MemTarget::Bus { src_addr: eff, device: device.to_string(), offset }
                            }
                            Classified::Unmapped => MemTarget::Runtime,
                        }
                    }
                    None => MemTarget::Runtime,
                };
                ins.io_target = Some(target);
            }
            // Transfer function: only MOVI, ADDI and ADD propagate constants.
            if let Some(dst) = ins.dst {
                if dst != 0 {
                    known[dst as usize] = match ins.op {
                        IrOp::Movi => Some(ins.imm.unwrap() as u32),
                        IrOp::Alu(AluOp::AddImm) => {
                            known[ins.srcs[0] as usize].map(|v| v.wrapping_add(ins.imm.unwrap() as u32))
                        }
                        IrOp::Alu(AluOp::Add) => match (known[ins.srcs[0] as usize], known[ins.srcs[1] as usize]) {
                            (Some(a), Some(b)) => Some(a.wrapping_add(b)),
                            _ => None,
                        },
                        _ => None,
                    };
                }
            }
        }
    }
    blocks
}

fn splits_block(ins: &IrInstruction) -> bool {
    matches!(ins.io_target, Some(MemTarget::Bus { .. }) | Some(MemTarget::Runtime))
}

/// Re-partitions blocks so that every statically known I/O access and every
/// runtime-classified load/store is the only instruction of its block. Bus
/// accesses then always happen after their block's cycles are fully
/// generated, which keeps bus timestamps exact.
pub fn split_at_io(blocks: Vec<BasicBlock>) -> Vec<BasicBlock> {
    // First pass: cut instruction runs; remember the original successor set
    // for each original block's last piece.
    struct Piece {
        start: u32,
        end: u32,
        instrs: Vec<IrInstruction>,
        /// Successors by original block id; None = fallthrough to next piece.
        orig_succs: Option<Vec<(usize, EdgeKind)>>,
    }
    let mut pieces: Vec<Piece> = Vec::new();
    // Leader address of each original block id, to rethread edges.
    let orig_leader: Vec<u32> = blocks.iter().map(|b| b.start).collect();

    for block in blocks {
        let mut runs: Vec<Vec<IrInstruction>> = vec![Vec::new()];
        for ins in block.instrs {
            if splits_block(&ins) {
                if runs.last().unwrap().is_empty() {
                    runs.pop();
                }
                runs.push(vec![ins]);
                runs.push(Vec::new());
            } else {
                runs.last_mut().unwrap().push(ins);
            }
        }
        if runs.last().unwrap().is_empty() {
            runs.pop();
        }
        let n = runs.len();
        for (i, instrs) in runs.into_iter().enumerate() {
            let start = instrs.first().unwrap().src_addr;
            let end = instrs.last().unwrap().src_addr + 4;
            pieces.push(Piece {
                start,
                end,
                instrs,
                orig_succs: (i == n - 1).then(|| block.successors.clone()),
            });
        }
    }

    let new_id: BTreeMap<u32, usize> = pieces.iter().enumerate().map(|(i, p)| (p.start, i)).collect();
    pieces
        .into_iter()
        .enumerate()
        .map(|(id, p)| {
            let successors = match &p.orig_succs {
                Some(succs) => succs
                    .iter()
                    .map(|(orig, kind)| (new_id[&orig_leader[*orig]], *kind))
                    .collect(),
                None => vec![(new_id[&p.end], EdgeKind::Fallthrough)],
            };
            BasicBlock { id, start: p.start, end: p.end, instrs: p.instrs, successors }
        })
        .collect()
}

/// Statically recorded JR dispatch targets: the return address of every JAL.
pub fn jal_return_targets(blocks: &[BasicBlock]) -> Vec<u32> {
    let mut out: Vec<u32> = blocks
        .iter()
        .flat_map(|b| b.instrs.iter())
        .filter(|i| i.op == IrOp::Call)
        .map(|i| i.src_addr + 4)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// One line per block: id, [start,end), successor ids.
pub fn dump_cfg(blocks: &[BasicBlock]) -> String {
    let mut out = String::new();
    for b in blocks {
        let succs: Vec<String> = b.successors.iter().map(|(id, _)| id.to_string()).collect();
        out.push_str(&format!("{} [{:#x},{:#x}) -> {}\n", b.id, b.start, b.end, succs.join(",")));
    }
    out
}
