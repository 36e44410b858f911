//! Two-pass assembler for TK32 text programs. Development tooling: the
//! bundled test images are generated from auditable `.asm` sources with
//! this module (and the `tkbt asm` subcommand).
//!
//! Syntax: one statement per line; `;` or `#` starts a comment.
//!   .entry <label|addr>
//!   .section <name> <addr>           start/continue a section
//!   .word <value>                    32-bit data word
//!   .region <src> <end> <dst> ram|rom   memory-map region
//!   .io <base> <end> <device>           bus-map region
//!   label:                           (may share a line with a statement)
//!   ADD r1, r2, r3 / ADDI r1, r2, -4 / LUI r1, 0x12
//!   LD r1, [r2+4] / ST r1, [r2-8]
//!   BEQ r1, r2, label / J label / JAL label / JR r15 / NOP / HALT
//!   MOVI r1, value                   pseudo; expands to ADDI/LUI(+ADDI)
//!
//! Values are decimal or 0x-hex, optionally negative, or a label. MOVI
//! with a label operand always uses the two-instruction form so layout is
//! stable across passes.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::image::{BusMap, IoRegion, LoadedImage, MemRegion, MemoryMap, ProgramImage, RegionKind, Section};
use crate::procdesc::{encode_i, encode_j, encode_r, MicroOp, ProcessorDescription};

#[derive(Debug, Error)]
#[error("line {line}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, AsmError> {
    Err(AsmError { line, msg: msg.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Value {
    Literal(i64),
    Label(usize), // index into label name table
}

#[derive(Debug, Clone)]
enum Stmt {
    Word(Value),
    Instr { mnemonic: String, ops: Vec<Operand> },
    Movi { rd: u8, value: Value },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Operand {
    Reg(u8),
    Imm(Value),
    Mem { base: u8, offset: i64 },
}

struct Item {
    line: usize,
    section: usize,
    addr: u32,
    stmt: Stmt,
}

pub fn assemble(source: &str, desc: &ProcessorDescription) -> Result<LoadedImage, AsmError> {
    let mut labels: Vec<String> = Vec::new();
    let mut label_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut label_values: BTreeMap<usize, u32> = BTreeMap::new();
    let intern = |name: &str,
                      labels: &mut Vec<String>,
                      label_index: &mut BTreeMap<String, usize>|
     -> usize {
        *label_index.entry(name.to_string()).or_insert_with(|| {
            labels.push(name.to_string());
            labels.len() - 1
        })
    };

    let mut sections: Vec<(String, u32)> = Vec::new();
    let mut items: Vec<Item> = Vec::new();
    let mut memory = MemoryMap::default();
    let mut bus = BusMap::default();
    let mut entry: Option<Value> = None;
    let mut cur_section: Option<usize> = None;
    let mut cur_addr: u32 = 0;

    // Pass 1: parse, size, and record label addresses.
    for (lineno, raw) in source.lines().enumerate() {
        let line = lineno + 1;
        let mut text = raw;
        if let Some(i) = text.find([';', '#']) {
            text = &text[..i];
        }
        let mut text = text.trim();

        while let Some(colon) = text.find(':') {
            let (name, rest) = text.split_at(colon);
            let name = name.trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                break;
            }
            if cur_section.is_none() {
                return err(line, "label outside a section");
            }
            let id = intern(name, &mut labels, &mut label_index);
            if label_values.insert(id, cur_addr).is_some() {
                return err(line, format!("duplicate label {name}"));
            }
            text = rest[1..].trim();
        }
        if text.is_empty() {
            continue;
        }

        let (head, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        let rest = rest.trim();
        match head {
            ".entry" => {
                entry = Some(parse_value(rest, line, &mut |n| intern(n, &mut labels, &mut label_index))?);
            }
            ".section" => {
                let mut parts = rest.split_whitespace();
                let (Some(name), Some(base)) = (parts.next(), parts.next()) else {
                    return err(line, ".section needs a name and a base address");
                };
                let base = parse_literal(base, line)? as u32;
                if base % 4 != 0 {
                    return err(line, "section base must be 4-aligned");
                }
                sections.push((name.to_string(), base));
                cur_section = Some(sections.len() - 1);
                cur_addr = base;
            }
            ".region" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 4 {
                    return err(line, ".region needs src end dst kind");
                }
                let kind = match parts[3] {
                    "ram" => RegionKind::Ram,
                    "rom" => RegionKind::Rom,
                    other => return err(line, format!("unknown region kind {other}")),
                };
                memory.regions.push(MemRegion {
                    src_base: parse_literal(parts[0], line)? as u32,
                    src_end: parse_literal(parts[1], line)? as u32,
                    dst_base: parse_literal(parts[2], line)? as u32,
                    kind,
                });
            }
            ".io" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return err(line, ".io needs base end device");
                }
                bus.io_regions.push(IoRegion {
                    base: parse_literal(parts[0], line)? as u32,
                    end: parse_literal(parts[1], line)? as u32,
                    device: parts[2].to_string(),
                });
            }
            _ => {
                let Some(section) = cur_section else {
                    return err(line, "statement outside a section");
                };
                let stmt = parse_stmt(head, rest, line, desc, &mut |n| {
                    intern(n, &mut labels, &mut label_index)
                })?;
                let words = stmt_words(&stmt, line, desc)?;
                items.push(Item { line, section, addr: cur_addr, stmt });
                cur_addr += 4 * words;
            }
        }
    }

    // Pass 2: encode with resolved labels.
    let resolve = |v: Value, line: usize| -> Result<i64, AsmError> {
        match v {
            Value::Literal(x) => Ok(x),
            Value::Label(id) => label_values
                .get(&id)
                .map(|a| *a as i64)
                .ok_or(AsmError { line, msg: format!("undefined label {}", labels[id]) }),
        }
    };

    let mut section_bytes: Vec<Vec<u8>> = vec![Vec::new(); sections.len()];
    for item in &items {
        let words = encode_stmt(item, desc, &resolve)?;
        let buf = &mut section_bytes[item.section];
        debug_assert_eq!(sections[item.section].1 + buf.len() as u32, item.addr);
        for w in words {
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }

    let Some(entry) = entry else {
        return err(0, "missing .entry directive");
    };
    let entry = resolve(entry, 0)? as u32;

    let symbols: BTreeMap<String, u32> = label_values
        .iter()
        .map(|(id, addr)| (labels[*id].clone(), *addr))
        .collect();

    let image = LoadedImage {
        image: ProgramImage {
            entry,
            sections: sections
                .into_iter()
                .zip(section_bytes)
                .filter(|(_, bytes)| !bytes.is_empty())
                .map(|((name, base), data)| Section { name, base, data })
                .collect(),
            symbols,
        },
        memory,
        bus,
    };
    // Reuse the loader's validation so assembled images satisfy every
    // manifest invariant.
    crate::image::load_image(&crate::image::store_image(&image))
        .map_err(|e| AsmError { line: 0, msg: format!("assembled image invalid: {e}") })
}

fn parse_literal(token: &str, line: usize) -> Result<i64, AsmError> {
    let (neg, digits) = match token.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, token),
    };
    let value = if let Some(hex) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16)
    } else {
        digits.parse::<i64>()
    };
    match value {
        Ok(v) => Ok(if neg { -v } else { v }),
        Err(_) => err(line, format!("bad numeric literal {token}")),
    }
}

fn parse_value(
    token: &str,
    line: usize,
    intern: &mut dyn FnMut(&str) -> usize,
) -> Result<Value, AsmError> {
    if token.is_empty() {
        return err(line, "missing value");
    }
    if token.starts_with(|c: char| c.is_ascii_digit() || c == '-') {
        Ok(Value::Literal(parse_literal(token, line)?))
    } else if token.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        Ok(Value::Label(intern(token)))
    } else {
        err(line, format!("bad value {token}"))
    }
}

fn parse_reg(token: &str, line: usize) -> Result<u8, AsmError> {
    let t = token.trim();
    let digits = t
        .strip_prefix('r')
        .or_else(|| t.strip_prefix('R'))
        .ok_or(AsmError { line, msg: format!("expected register, got {t}") })?;
    match digits.parse::<u8>() {
        Ok(r) if r < 16 => Ok(r),
        _ => err(line, format!("bad register {t}")),
    }
}

fn parse_operand(
    token: &str,
    line: usize,
    intern: &mut dyn FnMut(&str) -> usize,
) -> Result<Operand, AsmError> {
    let t = token.trim();
    if let Some(inner) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
        let inner = inner.trim();
        let (base, off) = if let Some(i) = inner[1..].find(['+', '-']) {
            let (b, rest) = inner.split_at(i + 1);
            let sign = if rest.starts_with('-') { -1 } else { 1 };
            (b.trim(), sign * parse_literal(rest[1..].trim(), line)?)
        } else {
            (inner, 0)
        };
        return Ok(Operand::Mem { base: parse_reg(base, line)?, offset: off });
    }
    if t.starts_with(['r', 'R']) && t[1..].chars().all(|c| c.is_ascii_digit()) {
        return Ok(Operand::Reg(parse_reg(t, line)?));
    }
    Ok(Operand::Imm(parse_value(t, line, intern)?))
}

fn parse_stmt(
    head: &str,
    rest: &str,
    line: usize,
    desc: &ProcessorDescription,
    intern: &mut dyn FnMut(&str) -> usize,
) -> Result<Stmt, AsmError> {
    if head == ".word" {
        return Ok(Stmt::Word(parse_value(rest.trim(), line, intern)?));
    }
    let ops: Vec<Operand> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',')
            .map(|tok| parse_operand(tok, line, intern))
            .collect::<Result<_, _>>()?
    };
    let upper = head.to_ascii_uppercase();
    if upper == "MOVI" {
        let [Operand::Reg(rd), Operand::Imm(value)] = ops[..] else {
            return err(line, "MOVI needs a register and a value");
        };
        return Ok(Stmt::Movi { rd, value });
    }
    if desc.instruction_by_mnemonic(&upper).is_none() {
        return err(line, format!("unknown mnemonic {head}"));
    }
    Ok(Stmt::Instr { mnemonic: upper, ops })
}

fn movi_words(value: Value) -> u32 {
    match value {
        Value::Label(_) => 2,
        Value::Literal(v) => {
            let v = v as u32;
            if (v as i32) >= -(1 << 15) && (v as i32) < (1 << 15) {
                1
            } else if v & 0xffff == 0 {
                1
            } else {
                2
            }
        }
    }
}

fn stmt_words(stmt: &Stmt, _line: usize, _desc: &ProcessorDescription) -> Result<u32, AsmError> {
    Ok(match stmt {
        Stmt::Word(_) | Stmt::Instr { .. } => 1,
        Stmt::Movi { value, .. } => movi_words(*value),
    })
}

fn encode_movi(rd: u8, value: u32) -> Vec<u32> {
    const LUI: u8 = 10;
    const ADDI: u8 = 9;
    if (value as i32) >= -(1 << 15) && (value as i32) < (1 << 15) {
        vec![encode_i(ADDI, rd, 0, value as i32)]
    } else if value & 0xffff == 0 {
        vec![encode_i(LUI, rd, 0, (value >> 16) as u16 as i16 as i32)]
    } else {
        let lo = value as u16 as i16; // sign-extended by ADDI
        let hi = (value.wrapping_sub(lo as u32)) >> 16;
        vec![
            encode_i(LUI, rd, 0, hi as u16 as i16 as i32),
            encode_i(ADDI, rd, rd, lo as i32),
        ]
    }
}

fn encode_stmt(
    item: &Item,
    desc: &ProcessorDescription,
    resolve: &dyn Fn(Value, usize) -> Result<i64, AsmError>,
) -> Result<Vec<u32>, AsmError> {
    let line = item.line;
    match &item.stmt {
        Stmt::Word(v) => Ok(vec![resolve(*v, line)? as u32]),
        Stmt::Movi { rd, value } => {
            let v = resolve(*value, line)? as u32;
            let words = encode_movi(*rd, v);
            // Label-valued MOVI is sized at 2 words in pass 1; pad with the
            // canonical two-op form even if the value ended up small.
            if words.len() as u32 != movi_words(*value) {
                let lo = v as u16 as i16;
                let hi = (v.wrapping_sub(lo as u32)) >> 16;
                return Ok(vec![
                    encode_i(10, *rd, 0, hi as u16 as i16 as i32),
                    encode_i(9, *rd, *rd, lo as i32),
                ]);
            }
            Ok(words)
        }
        Stmt::Instr { mnemonic, ops } => {
            let def = desc.instruction_by_mnemonic(mnemonic).expect("checked in pass 1");
            let opc = def.opcode;
            let branch_offset = |target: i64, width: u32| -> Result<i32, AsmError> {
                let pc = item.addr as i64;
                let delta = target - (pc + 4);
                if delta % 4 != 0 {
                    return err(line, "branch target not word-aligned");
                }
                let off = delta / 4;
                let bound = 1i64 << (width - 1);
                if off < -bound || off >= bound {
                    return err(line, format!("branch offset {off} does not fit {width} bits"));
                }
                Ok(off as i32)
            };
            use MicroOp::*;
            let word = match (def.ir_op, &ops[..]) {
                (Nop | Halt, []) => encode_r(opc, 0, 0, 0),
                (Add | Sub | Mul | And | Or | Xor | Shl | Shr, [Operand::Reg(rd), Operand::Reg(a), Operand::Reg(b)]) => {
                    encode_r(opc, *rd, *a, *b)
                }
                (Addi, [Operand::Reg(rd), Operand::Reg(rs), Operand::Imm(v)]) => {
                    let v = resolve(*v, line)?;
                    if !(-(1 << 15)..1 << 15).contains(&v) {
                        return err(line, format!("immediate {v} does not fit 16 bits"));
                    }
                    encode_i(opc, *rd, *rs, v as i32)
                }
                (Lui, [Operand::Reg(rd), Operand::Imm(v)]) => {
                    let v = resolve(*v, line)?;
                    if !(0..1 << 16).contains(&v) {
                        return err(line, format!("LUI field {v} does not fit 16 bits"));
                    }
                    encode_i(opc, *rd, 0, v as u16 as i16 as i32)
                }
                (Load, [Operand::Reg(rd), Operand::Mem { base, offset }]) => {
                    encode_i(opc, *rd, *base, *offset as i32)
                }
                (Store, [Operand::Reg(rs), Operand::Mem { base, offset }]) => {
                    encode_i(opc, *rs, *base, *offset as i32)
                }
                (Beq | Bne | Blt, [Operand::Reg(a), Operand::Reg(b), Operand::Imm(t)]) => {
                    encode_i(opc, *a, *b, branch_offset(resolve(*t, line)?, 16)?)
                }
                (Jump | Call, [Operand::Imm(t)]) => encode_j(opc, branch_offset(resolve(*t, line)?, 26)?),
                (JumpReg, [Operand::Reg(rs)]) => encode_r(opc, 0, *rs, 0),
                _ => return err(line, format!("bad operands for {mnemonic}")),
            };
            Ok(vec![word])
        }
    }
}
