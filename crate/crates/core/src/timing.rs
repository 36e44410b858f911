//! Static per-block cycle calculation on the source pipeline model: an
//! in-order scoreboard with an empty pipeline at block entry, plus the
//! static/dynamic cost split for conditional branches under BTFNT.

use serde::{Deserialize, Serialize};

use crate::frontend::{BasicBlock, IrInstruction, IrOp};
use crate::procdesc::ProcessorDescription;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockTiming {
    pub block: usize,
    /// Cycles generated by SYNC_START for this block.
    pub static_cycles: u64,
    /// Portion of static_cycles attributed to the terminating conditional
    /// branch (0 if the block does not end in one).
    pub branch_min: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Taken,
    NotTaken,
}

/// Branch direction for BTFNT: backward iff the target does not advance
/// past the branch.
pub fn branch_direction(branch: &IrInstruction) -> Direction {
    if branch.target.unwrap() <= branch.src_addr {
        Direction::Backward
    } else {
        Direction::Forward
    }
}

/// Full cost of a conditional branch for one outcome: issue cycles, plus
/// taken_extra when taken, plus the misprediction penalty when the BTFNT
/// prediction missed.
pub fn branch_cost(desc: &ProcessorDescription, direction: Direction, outcome: Outcome) -> u64 {
    let class = desc.timing_class(branch_class(desc));
    let predicted_taken = direction == Direction::Backward;
    let taken = outcome == Outcome::Taken;
    let mut cost = class.issue_cycles as u64;
    if taken {
        cost += desc.branch.taken_extra as u64;
    }
    if predicted_taken != taken {
        cost += desc.branch.mispredict_penalty as u64;
    }
    cost
}

/// Minimum branch cost over both outcomes; this part is billed statically.
pub fn branch_min(desc: &ProcessorDescription, direction: Direction) -> u64 {
    branch_cost(desc, direction, Outcome::Taken).min(branch_cost(desc, direction, Outcome::NotTaken))
}

/// Runtime correction for one outcome: cost(outcome) - branch_min. Never
/// negative.
pub fn branch_correction(desc: &ProcessorDescription, direction: Direction, outcome: Outcome) -> u64 {
    branch_cost(desc, direction, outcome) - branch_min(desc, direction)
}

fn branch_class(desc: &ProcessorDescription) -> &str {
    // All conditional branches of a description share one timing class by
    // construction of the decode tables; take it from any branch define.
    desc.instructions
        .iter()
        .find(|d| matches!(d.ir_op, crate::procdesc::MicroOp::Beq | crate::procdesc::MicroOp::Bne | crate::procdesc::MicroOp::Blt))
        .map(|d| d.timing_class.as_str())
        .unwrap_or("branch")
}

/// In-order issue scoreboard. Instruction k issues at the earliest cycle
/// respecting program order, a free issue lane (lanes stay busy for
/// issue_cycles), and the ready time of each source register; a producer
/// issuing at t with result latency L makes its destination ready at t+L.
/// Writes to r0 produce nothing.
struct Scoreboard {
    lanes: Vec<u64>,
    ready: [u64; 16],
    last_issue: u64,
    issued_any: bool,
}

impl Scoreboard {
    fn new(issue_width: u32) -> Self {
        Scoreboard { lanes: vec![0; issue_width as usize], ready: [0; 16], last_issue: 0, issued_any: false }
    }

    fn issue(&mut self, ins: &IrInstruction, desc: &ProcessorDescription) -> u64 {
        let class = desc.timing_class(&ins.timing_class);
        let lane = (0..self.lanes.len()).min_by_key(|&i| self.lanes[i]).unwrap();
        let mut t = self.lanes[lane];
        if self.issued_any {
            t = t.max(self.last_issue);
        }
        for &src in &ins.srcs {
            t = t.max(self.ready[src as usize]);
        }
        self.lanes[lane] = t + class.issue_cycles as u64;
        if let Some(dst) = ins.dst {
            if dst != 0 {
                self.ready[dst as usize] = t + class.result_latency as u64;
            }
        }
        self.last_issue = t;
        self.issued_any = true;
        t
    }
}

/// Scoreboards one basic block in isolation and returns its static cycle
/// count, including the statically billed minimum cost of a terminating
/// conditional branch.
pub fn scoreboard_cycles(block: &BasicBlock, desc: &ProcessorDescription) -> BlockTiming {
    assert!(!block.instrs.is_empty(), "blocks are non-empty");
    let mut sb = Scoreboard::new(desc.pipeline.issue_width);
    let mut t_last = 0;
    for ins in &block.instrs {
        t_last = sb.issue(ins, desc);
    }
    let last = block.instrs.last().unwrap();
    let (tail, bmin) = match last.op {
        IrOp::Branch(_) => {
            let min = branch_min(desc, branch_direction(last));
            (min, min)
        }
        _ => (desc.timing_class(&last.timing_class).issue_cycles as u64, 0),
    };
    let timing = BlockTiming { block: block.id, static_cycles: t_last + tail, branch_min: bmin };
    debug_assert!(
        timing.static_cycles
            >= (block.instrs.len() as u64).div_ceil(desc.pipeline.issue_width as u64)
    );
    debug_assert!(timing.branch_min <= timing.static_cycles);
    timing
}

/// Standalone cost of a single instruction, used by the instruction-
/// oriented debug translation: its one-instruction-block scoreboard cost.
pub fn standalone_cost(ins: &IrInstruction, desc: &ProcessorDescription) -> u64 {
    match ins.op {
        IrOp::Branch(_) => branch_min(desc, branch_direction(ins)),
        _ => desc.timing_class(&ins.timing_class).issue_cycles as u64,
    }
}

/// CSV of block id, static_cycles, branch_min.
pub fn dump_timing(timings: &[BlockTiming]) -> String {
    let mut out = String::from("block,static_cycles,branch_min\n");
    for t in timings {
        out.push_str(&format!("{},{},{}\n", t.block, t.static_cycles, t.branch_min));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{build_cfg, decode_program};
    use crate::image::{ProgramImage, Section};
    use crate::procdesc::{encode_i, encode_r, tk32};
    use proptest::prelude::*;

    fn block_of(words: &[u32]) -> BasicBlock {
        let image = ProgramImage {
            entry: 0,
            sections: vec![Section {
                name: ".text".into(),
                base: 0,
                data: words.iter().flat_map(|w| w.to_le_bytes()).collect(),
            }],
            symbols: Default::default(),
        };
        let ir = decode_program(&image, &tk32()).unwrap();
        let blocks = build_cfg(&ir, 0).unwrap();
        assert_eq!(blocks.len(), 1, "test program must be a single block");
        blocks.into_iter().next().unwrap()
    }

    #[test]
    fn single_nop_is_one_cycle() {
        // A lone NOP needs a terminator to form a block; use HALT and check
        // the two-instruction case, plus the direct single-NOP block.
        let block = BasicBlock {
            id: 0,
            start: 0,
            end: 4,
            instrs: vec![crate::frontend::IrInstruction {
                src_addr: 0,
                op: IrOp::Nop,
                dst: None,
                srcs: vec![],
                imm: None,
                target: None,
                timing_class: "nop".into(),
                io_target: None,
            }],
            successors: vec![],
        };
        assert_eq!(scoreboard_cycles(&block, &tk32()).static_cycles, 1);
    }

    #[test]
    fn independent_adds_issue_back_to_back() {
        // Hand scoreboard: issues at 0,1,2; static = 2 + 1 = 3.
        let words = [encode_r(1, 1, 2, 3), encode_r(1, 4, 5, 6), encode_r(1, 7, 1, 4)];
        // r1 ready at 1 and r4 at 2 never stall the slot-limited issues.
        let mut block = block_of(&[words[0], words[1], words[2], encode_r(19, 0, 0, 0)]);
        block.instrs.pop(); // drop HALT to scoreboard the three ADDs alone
        block.end -= 4;
        assert_eq!(scoreboard_cycles(&block, &tk32()).static_cycles, 3);
    }

    #[test]
    fn mul_latency_stalls_dependent_add() {
        // MUL r1 (mul {1,3}) issues at 0, r1 ready at 3; ADD stalls to 3;
        // static = 3 + 1 = 4.
        let mut block = block_of(&[encode_r(3, 1, 2, 3), encode_r(1, 4, 1, 1), encode_r(19, 0, 0, 0)]);
        block.instrs.pop();
        block.end -= 4;
        assert_eq!(scoreboard_cycles(&block, &tk32()).static_cycles, 4);
    }

    #[test]
    fn write_to_r0_produces_nothing() {
        let mut block = block_of(&[encode_r(3, 0, 2, 3), encode_r(1, 4, 0, 0), encode_r(19, 0, 0, 0)]);
        block.instrs.pop();
        block.end -= 4;
        // ADD reads r0 which is never made busy: issues at 1; static = 2.
        assert_eq!(scoreboard_cycles(&block, &tk32()).static_cycles, 2);
    }

    #[test]
    fn branch_cost_forward_not_taken() {
        let desc = tk32();
        assert_eq!(branch_cost(&desc, Direction::Forward, Outcome::NotTaken), 1);
        assert_eq!(branch_correction(&desc, Direction::Forward, Outcome::NotTaken), 0);
    }

    #[test]
    fn branch_cost_forward_taken() {
        let desc = tk32();
        assert_eq!(branch_cost(&desc, Direction::Forward, Outcome::Taken), 5);
        assert_eq!(branch_correction(&desc, Direction::Forward, Outcome::Taken), 4);
    }

    #[test]
    fn branch_cost_backward() {
        let desc = tk32();
        assert_eq!(branch_cost(&desc, Direction::Backward, Outcome::Taken), 2);
        assert_eq!(branch_cost(&desc, Direction::Backward, Outcome::NotTaken), 4);
        assert_eq!(branch_min(&desc, Direction::Backward), 2);
    }

    #[test]
    fn block_ending_in_branch_bills_branch_min() {
        // ADD at 0, BEQ (backward to 0) at 4: t_beq = 1, backward min = 2.
        let words = [encode_r(1, 1, 2, 3), encode_i(13, 1, 0, -2), encode_r(19, 0, 0, 0)];
        let image = ProgramImage {
            entry: 0,
            sections: vec![Section {
                name: ".text".into(),
                base: 0,
                data: words.iter().flat_map(|w| w.to_le_bytes()).collect(),
            }],
            symbols: Default::default(),
        };
        let ir = decode_program(&image, &tk32()).unwrap();
        let blocks = build_cfg(&ir, 0).unwrap();
        let t = scoreboard_cycles(&blocks[0], &tk32());
        assert_eq!(t.static_cycles, 3);
        assert_eq!(t.branch_min, 2);
    }

    proptest! {
        // Appending an instruction never decreases static_cycles.
        #[test]
        fn appending_never_decreases_cycles(seed in proptest::collection::vec((0u8..6, 1u8..16, 0u8..16, 0u8..16), 1..24)) {
            let desc = tk32();
            let opcodes = [1u8, 2, 3, 4, 5, 6]; // ADD..XOR incl. MUL
            let words: Vec<u32> = seed.iter()
                .map(|&(op, rd, rs1, rs2)| encode_r(opcodes[op as usize], rd % 16, rs1, rs2))
                .collect();
            let mk = |n: usize| -> BasicBlock {
                let instrs: Vec<_> = crate::frontend::decode_program(
                    &ProgramImage {
                        entry: 0,
                        sections: vec![Section {
                            name: ".text".into(),
                            base: 0,
                            data: words[..n].iter().flat_map(|w| w.to_le_bytes()).collect(),
                        }],
                        symbols: Default::default(),
                    },
                    &desc,
                ).unwrap();
                BasicBlock { id: 0, start: 0, end: 4 * n as u32, instrs, successors: vec![] }
            };
            let mut prev = 0;
            for n in 1..=words.len() {
                let c = scoreboard_cycles(&mk(n), &desc).static_cycles;
                prop_assert!(c >= prev);
                prev = c;
            }
        }

        // correction(outcome) >= 0 by construction for any penalties.
        #[test]
        fn corrections_are_non_negative(mp in 0u32..16, te in 0u32..16) {
            let mut desc = tk32();
            desc.branch.mispredict_penalty = mp;
            desc.branch.taken_extra = te;
            for dir in [Direction::Forward, Direction::Backward] {
                for out in [Outcome::Taken, Outcome::NotTaken] {
                    let min = branch_min(&desc, dir);
                    prop_assert!(branch_cost(&desc, dir, out) >= min);
                }
            }
        }
    }
}
