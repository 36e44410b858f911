//! Processor description: decode tables, pipeline timing classes, branch
//! and instruction-cache parameters. Loaded from a JSON document and
//! validated; immutable afterwards, so it can be shared read-only by every
//! later stage.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Register index, 0..15. r0 reads as zero and ignores writes.
pub type Reg = u8;

pub const REGISTER_COUNT: u8 = 16;
pub const WORD_SIZE_BITS: u32 = 32;

#[derive(Debug, Error)]
pub enum DescError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("semantic: {0}")]
    Semantic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    R,
    I,
    J,
}

/// Fixed micro-op vocabulary. Each instruction of a description maps to
/// exactly one micro-op, which fully determines operand decoding and
/// semantics for its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicroOp {
    Nop,
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Addi,
    Lui,
    Load,
    Store,
    Beq,
    Bne,
    Blt,
    Jump,
    Call,
    JumpReg,
    Halt,
}

impl MicroOp {
    /// The only instruction format this micro-op decodes from.
    pub fn expected_format(self) -> Format {
        use MicroOp::*;
        match self {
            Nop | Add | Sub | Mul | And | Or | Xor | Shl | Shr | JumpReg | Halt => Format::R,
            Addi | Lui | Load | Store | Beq | Bne | Blt => Format::I,
            Jump | Call => Format::J,
        }
    }

    fn expected_flag(self) -> Option<Flag> {
        use MicroOp::*;
        match self {
            Load => Some(Flag::Load),
            Store => Some(Flag::Store),
            Beq | Bne | Blt | Jump | JumpReg => Some(Flag::Branch),
            Call => Some(Flag::Call),
            Halt => Some(Flag::Halt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Branch,
    Load,
    Store,
    Call,
    Halt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionDef {
    pub mnemonic: String,
    pub opcode: u8,
    pub format: Format,
    pub ir_op: MicroOp,
    pub timing_class: String,
    pub flags: Vec<Flag>,
}

impl InstructionDef {
    pub fn is_branch(&self) -> bool {
        self.flags.contains(&Flag::Branch)
    }
    pub fn is_load(&self) -> bool {
        self.flags.contains(&Flag::Load)
    }
    pub fn is_store(&self) -> bool {
        self.flags.contains(&Flag::Store)
    }
    pub fn is_call(&self) -> bool {
        self.flags.contains(&Flag::Call)
    }
    pub fn is_halt(&self) -> bool {
        self.flags.contains(&Flag::Halt)
    }
}

/// Issue cost and result latency of one timing class, serialized as the
/// two-element array `[issue_cycles, result_latency]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct TimingClass {
    pub issue_cycles: u32,
    pub result_latency: u32,
}

impl From<(u32, u32)> for TimingClass {
    fn from((issue_cycles, result_latency): (u32, u32)) -> Self {
        TimingClass { issue_cycles, result_latency }
    }
}

impl From<TimingClass> for (u32, u32) {
    fn from(tc: TimingClass) -> Self {
        (tc.issue_cycles, tc.result_latency)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    #[serde(default = "default_issue_width")]
    pub issue_width: u32,
    pub timing_classes: BTreeMap<String, TimingClass>,
}

fn default_issue_width() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchPolicy {
    /// Static prediction: backward taken, forward not taken.
    Btfnt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub policy: BranchPolicy,
    pub mispredict_penalty: u32,
    pub taken_extra: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSpec {
    pub sets: u32,
    pub ways: u32,
    pub block_bytes: u32,
    pub miss_penalty: u32,
}

impl CacheSpec {
    pub fn offset_bits(&self) -> u32 {
        self.block_bytes.trailing_zeros()
    }
    pub fn index_bits(&self) -> u32 {
        self.sets.trailing_zeros()
    }
    pub fn tag_bits(&self) -> u32 {
        WORD_SIZE_BITS - self.offset_bits() - self.index_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorDescription {
    pub name: String,
    pub registers: u8,
    pub pipeline: PipelineSpec,
    pub branch: BranchSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icache: Option<CacheSpec>,
    pub instructions: Vec<InstructionDef>,
}

impl ProcessorDescription {
    pub fn instruction_by_opcode(&self, opcode: u8) -> Option<&InstructionDef> {
        self.instructions.iter().find(|i| i.opcode == opcode)
    }

    pub fn instruction_by_mnemonic(&self, mnemonic: &str) -> Option<&InstructionDef> {
        self.instructions.iter().find(|i| i.mnemonic == mnemonic)
    }

    pub fn timing_class(&self, name: &str) -> &TimingClass {
        &self.pipeline.timing_classes[name]
    }

    /// Checks every description invariant; the loader calls this after
    /// parsing, and programmatically built descriptions should call it too.
    pub fn validate(&self) -> Result<(), DescError> {
        if self.registers != REGISTER_COUNT {
            return Err(DescError::Semantic(format!(
                "registers must be {}, got {}",
                REGISTER_COUNT, self.registers
            )));
        }
        if self.pipeline.issue_width < 1 {
            return Err(DescError::Semantic("pipeline.issue_width must be >= 1".into()));
        }
        for (name, tc) in &self.pipeline.timing_classes {
            if tc.issue_cycles < 1 || tc.result_latency < 1 {
                return Err(DescError::Semantic(format!(
                    "timing class {name}: issue_cycles and result_latency must be >= 1"
                )));
            }
        }
        let mut opcodes = BTreeSet::new();
        let mut mnemonics = BTreeSet::new();
        for def in &self.instructions {
            if def.opcode >= 64 {
                return Err(DescError::Semantic(format!(
                    "{}: opcode {} does not fit in 6 bits",
                    def.mnemonic, def.opcode
                )));
            }
            if !opcodes.insert(def.opcode) {
                return Err(DescError::Semantic(format!(
                    "duplicate opcode {} ({})",
                    def.opcode, def.mnemonic
                )));
            }
            if !mnemonics.insert(def.mnemonic.as_str()) {
                return Err(DescError::Semantic(format!("duplicate mnemonic {}", def.mnemonic)));
            }
            if !self.pipeline.timing_classes.contains_key(&def.timing_class) {
                return Err(DescError::Semantic(format!(
                    "{}: undefined timing class {}",
                    def.mnemonic, def.timing_class
                )));
            }
            if def.flags.len() > 1 {
                return Err(DescError::Semantic(format!(
                    "{}: branch/load/store/call/halt flags are mutually exclusive",
                    def.mnemonic
                )));
            }
            if def.format != def.ir_op.expected_format() {
                return Err(DescError::Semantic(format!(
                    "{}: ir_op {:?} requires format {:?}",
                    def.mnemonic,
                    def.ir_op,
                    def.ir_op.expected_format()
                )));
            }
            let expected = def.ir_op.expected_flag();
            if def.flags.first().copied() != expected {
                return Err(DescError::Semantic(format!(
                    "{}: ir_op {:?} requires flags {:?}",
                    def.mnemonic,
                    def.ir_op,
                    expected.map(|f| vec![f]).unwrap_or_default()
                )));
            }
        }
        if let Some(cache) = &self.icache {
            if !cache.sets.is_power_of_two() {
                return Err(DescError::Semantic(format!("sets not a power of two: {}", cache.sets)));
            }
            if cache.ways < 1 {
                return Err(DescError::Semantic("ways must be >= 1".into()));
            }
            if !cache.block_bytes.is_power_of_two() || cache.block_bytes < 4 {
                return Err(DescError::Semantic(format!(
                    "block_bytes not a power of two >= 4: {}",
                    cache.block_bytes
                )));
            }
            if cache.block_bytes % 4 != 0 {
                return Err(DescError::Semantic("block_bytes must be a multiple of 4".into()));
            }
            let total = cache.sets as u64 * cache.ways as u64 * cache.block_bytes as u64;
            if total > 1 << 20 {
                return Err(DescError::Semantic(format!(
                    "cache size {total} exceeds 2^20 bytes"
                )));
            }
            if cache.tag_bits() > 31 {
                return Err(DescError::Semantic(
                    "cache tag wider than 31 bits cannot share a word with the valid bit".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Parses and validates a processor description document.
pub fn load_description(document: &str) -> Result<ProcessorDescription, DescError> {
    let desc: ProcessorDescription =
        serde_json::from_str(document).map_err(|e| DescError::Schema(e.to_string()))?;
    desc.validate()?;
    Ok(desc)
}

// Encoding layout: opcode [31:26], rd [25:21], rs1 [20:16], rs2 [15:11],
// imm16 [15:0], imm26 [25:0]. Register fields are 5 bits with the top bit
// required to be zero.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecodedFields {
    pub rd: Reg,
    pub rs1: Reg,
    pub rs2: Reg,
    pub imm16: i32,
    pub imm26: i32,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("illegal instruction word {word:#010x}: {reason}")]
pub struct IllegalInstruction {
    pub word: u32,
    pub reason: String,
}

/// Matches a 32-bit word against the description's opcode table and
/// extracts the operand fields of the matched format.
pub fn lookup_decode(
    desc: &ProcessorDescription,
    word: u32,
) -> Result<(&InstructionDef, DecodedFields), IllegalInstruction> {
    let opcode = (word >> 26) as u8;
    let def = desc.instruction_by_opcode(opcode).ok_or_else(|| IllegalInstruction {
        word,
        reason: format!("no instruction with opcode {opcode}"),
    })?;

    let rd = ((word >> 21) & 0x1f) as u8;
    let rs1 = ((word >> 16) & 0x1f) as u8;
    let rs2 = ((word >> 11) & 0x1f) as u8;
    let imm16 = (word & 0xffff) as u16 as i16 as i32;
    let imm26 = ((word & 0x03ff_ffff) as i32) << 6 >> 6;

    let check_reg = |name: &str, r: u8| -> Result<(), IllegalInstruction> {
        if r >= REGISTER_COUNT {
            Err(IllegalInstruction { word, reason: format!("register field {name}={r} out of range") })
        } else {
            Ok(())
        }
    };

    let mut fields = DecodedFields { imm16, imm26, ..Default::default() };
    match def.format {
        Format::R => {
            check_reg("rd", rd)?;
            check_reg("rs1", rs1)?;
            check_reg("rs2", rs2)?;
            fields.rd = rd;
            fields.rs1 = rs1;
            fields.rs2 = rs2;
        }
        Format::I => {
            check_reg("rd", rd)?;
            check_reg("rs1", rs1)?;
            fields.rd = rd;
            fields.rs1 = rs1;
        }
        Format::J => {}
    }
    Ok((def, fields))
}

pub fn encode_r(opcode: u8, rd: Reg, rs1: Reg, rs2: Reg) -> u32 {
    debug_assert!(opcode < 64 && rd < 16 && rs1 < 16 && rs2 < 16);
    (opcode as u32) << 26 | (rd as u32) << 21 | (rs1 as u32) << 16 | (rs2 as u32) << 11
}

pub fn encode_i(opcode: u8, rd: Reg, rs1: Reg, imm16: i32) -> u32 {
    debug_assert!(opcode < 64 && rd < 16 && rs1 < 16);
    debug_assert!((-(1 << 15)..1 << 15).contains(&imm16));
    (opcode as u32) << 26 | (rd as u32) << 21 | (rs1 as u32) << 16 | (imm16 as u32 & 0xffff)
}

pub fn encode_j(opcode: u8, imm26: i32) -> u32 {
    debug_assert!(opcode < 64);
    debug_assert!((-(1 << 25)..1 << 25).contains(&imm26));
    (opcode as u32) << 26 | (imm26 as u32 & 0x03ff_ffff)
}

/// The bundled default ISA. All timing numbers are free parameters fixed
/// here so that every test is deterministic.
pub fn tk32() -> ProcessorDescription {
    let classes: BTreeMap<String, TimingClass> = [
        ("alu", (1, 1)),
        ("mul", (1, 3)),
        ("mem", (1, 3)),
        ("branch", (1, 1)),
        ("nop", (1, 1)),
    ]
    .into_iter()
    .map(|(n, tc)| (n.to_string(), tc.into()))
    .collect();

    let mut instructions = Vec::new();
    let mut def = |mnemonic: &str, opcode: u8, ir_op: MicroOp, class: &str| {
        instructions.push(InstructionDef {
            mnemonic: mnemonic.into(),
            opcode,
            format: ir_op.expected_format(),
            ir_op,
            timing_class: class.into(),
            flags: ir_op.expected_flag().into_iter().collect(),
        });
    };
    def("NOP", 0, MicroOp::Nop, "nop");
    def("ADD", 1, MicroOp::Add, "alu");
    def("SUB", 2, MicroOp::Sub, "alu");
    def("MUL", 3, MicroOp::Mul, "mul");
    def("AND", 4, MicroOp::And, "alu");
    def("OR", 5, MicroOp::Or, "alu");
    def("XOR", 6, MicroOp::Xor, "alu");
    def("SHL", 7, MicroOp::Shl, "alu");
    def("SHR", 8, MicroOp::Shr, "alu");
    def("ADDI", 9, MicroOp::Addi, "alu");
    def("LUI", 10, MicroOp::Lui, "alu");
    def("LD", 11, MicroOp::Load, "mem");
    def("ST", 12, MicroOp::Store, "mem");
    def("BEQ", 13, MicroOp::Beq, "branch");
    def("BNE", 14, MicroOp::Bne, "branch");
    def("BLT", 15, MicroOp::Blt, "branch");
    def("J", 16, MicroOp::Jump, "branch");
    def("JAL", 17, MicroOp::Call, "branch");
    def("JR", 18, MicroOp::JumpReg, "branch");
    def("HALT", 19, MicroOp::Halt, "nop");

    ProcessorDescription {
        name: "TK32".into(),
        registers: REGISTER_COUNT,
        pipeline: PipelineSpec { issue_width: 1, timing_classes: classes },
        branch: BranchSpec { policy: BranchPolicy::Btfnt, mispredict_penalty: 3, taken_extra: 1 },
        icache: Some(CacheSpec { sets: 16, ways: 2, block_bytes: 16, miss_penalty: 10 }),
        instructions,
    }
}
