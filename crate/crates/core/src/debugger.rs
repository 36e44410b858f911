//! Source-level debugging of translated programs through the dual
//! translation: the block-oriented variant runs at full speed between
//! breakpoints, the instruction-oriented variant single-steps. Breakpoints
//! normalize to block leaders; reaching a mid-block address uses stepping
//! mode from the leader. Mode transitions happen only at block boundaries,
//! and the hardware clock accounting carries across switches because both
//! variants share one machine state.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::codegen::{translate, DetailLevel, TranslatedProgram, Variant};
use crate::frontend::TranslateError;
use crate::image::{classify_address, Classified, LoadedImage};
use crate::procdesc::ProcessorDescription;
use crate::vtm::{step_op, DeviceRegistry, RunError, RunLimits, VmState};

#[derive(Debug, Error)]
pub enum DebugError {
    #[error("address {addr:#x} outside the translated range")]
    AddressOutOfRange { addr: u32 },
    #[error("program already halted")]
    AlreadyHalted,
    #[error(transparent)]
    Run(#[from] RunError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    RunningBlock,
    SteppingInstr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Breakpoint(u32),
    Halted,
    OpLimit,
}

pub struct DebugSession {
    block_prog: TranslatedProgram,
    instr_prog: TranslatedProgram,
    state: VmState,
    devices: DeviceRegistry,
    /// Leader address -> exact requested addresses within that block.
    breakpoints: BTreeMap<u32, BTreeSet<u32>>,
    mode: Mode,
    limits: RunLimits,
    /// Address of the last reported breakpoint stop; suppresses an
    /// immediate re-trigger on the next cont().
    last_stop: Option<u32>,
}

impl DebugSession {
    pub fn new(
        img: &LoadedImage,
        desc: &ProcessorDescription,
        level: DetailLevel,
        devices: DeviceRegistry,
        limits: RunLimits,
    ) -> Result<DebugSession, TranslateError> {
        let block_prog = translate(img, desc, level, Variant::BlockOriented)?;
        let instr_prog = translate(img, desc, level, Variant::InstructionOriented)?;
        let state = VmState::new(&block_prog);
        Ok(DebugSession {
            block_prog,
            instr_prog,
            state,
            devices,
            breakpoints: BTreeMap::new(),
            mode: Mode::RunningBlock,
            limits,
            last_stop: None,
        })
    }

    pub fn halted(&self) -> bool {
        self.state.halted
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Source address of the next instruction to execute. Stops always sit
    /// at a block start of the active variant, so this is exact.
    pub fn current_addr(&self) -> u32 {
        let prog = self.active_prog();
        prog.blocks[self.state.pc.block].src_start
    }

    pub fn cycles(&self) -> u64 {
        self.state.sync.hwclock()
    }

    pub fn regs(&self) -> [u32; 16] {
        self.state.regs.snapshot()
    }

    pub fn memory_digest(&self) -> String {
        self.state.ram.digest()
    }

    /// Reads memory at source addresses, translated through the memory map.
    pub fn read_mem(&self, addr: u32, len: u32) -> Result<Vec<u8>, DebugError> {
        let mut out = Vec::with_capacity(len as usize);
        for i in 0..len {
            let src = addr.wrapping_add(i);
            match classify_address(&self.block_prog.memory_map, &self.block_prog.bus_map, src) {
                Classified::Memory(dst) => out.push(self.state.ram.read_u8(dst)?),
                _ => return Err(DebugError::AddressOutOfRange { addr: src }),
            }
        }
        Ok(out)
    }

    fn active_prog(&self) -> &TranslatedProgram {
        match self.mode {
            Mode::RunningBlock => &self.block_prog,
            Mode::SteppingInstr => &self.instr_prog,
        }
    }

    fn is_leader(&self, addr: u32) -> bool {
        self.block_prog.addr_map.contains_key(&addr)
    }

    /// Records a breakpoint at the leader of the block containing the
    /// address; returns the normalized (leader) address.
    pub fn set_breakpoint(&mut self, addr: u32) -> Result<u32, DebugError> {
        let block = self
            .block_prog
            .blocks
            .iter()
            .find(|b| addr >= b.src_start && addr < b.src_end)
            .ok_or(DebugError::AddressOutOfRange { addr })?;
        let leader = block.src_start;
        self.breakpoints.entry(leader).or_default().insert(addr & !3);
        Ok(leader)
    }

    /// Runs ops of the active variant until the pc lands on a block start
    /// again (one source block in block mode, one instruction in stepping
    /// mode) or the program halts.
    fn run_to_next_block(&mut self) -> Result<(), DebugError> {
        let prog = match self.mode {
            Mode::RunningBlock => &self.block_prog,
            Mode::SteppingInstr => &self.instr_prog,
        };
        loop {
            if self.state.host_ops >= self.limits.max_ops {
                return Err(DebugError::Run(RunError::OpLimitExceeded));
            }
            step_op(prog, &mut self.state, &mut self.devices)?;
            if self.state.halted || self.state.pc.op == 0 {
                return Ok(());
            }
        }
    }

    fn switch_to_stepping(&mut self, leader: u32) {
        debug_assert_eq!(self.mode, Mode::RunningBlock);
        self.state.pc = crate::vtm::Pc { block: self.instr_prog.addr_map[&leader], op: 0 };
        self.mode = Mode::SteppingInstr;
    }

    fn switch_to_block_mode(&mut self, leader: u32) {
        debug_assert_eq!(self.mode, Mode::SteppingInstr);
        self.state.pc = crate::vtm::Pc { block: self.block_prog.addr_map[&leader], op: 0 };
        self.mode = Mode::RunningBlock;
    }

    /// Executes exactly one source instruction via the instruction-oriented
    /// variant, including its cycle generation and corrections. Returns the
    /// address stopped at.
    pub fn step(&mut self) -> Result<u32, DebugError> {
        if self.state.halted {
            return Err(DebugError::AlreadyHalted);
        }
        if self.mode == Mode::RunningBlock {
            let leader = self.current_addr();
            self.switch_to_stepping(leader);
        }
        let before = self.current_addr();
        self.run_to_next_block()?;
        self.last_stop = None;
        Ok(if self.state.halted { before } else { self.current_addr() })
    }

    /// Runs until a breakpoint, completing any pending mid-block target via
    /// stepping mode, or until the program halts.
    pub fn cont(&mut self) -> Result<StopReason, DebugError> {
        if self.state.halted {
            return Ok(StopReason::Halted);
        }
        let mut skip_once = self.last_stop.take();

        // Catch up to the next block boundary if a previous step left the
        // session mid-block.
        while self.mode == Mode::SteppingInstr {
            let here = self.current_addr();
            if self.is_leader(here) {
                self.switch_to_block_mode(here);
                break;
            }
            if self.hits_exact_breakpoint(here) && skip_once != Some(here) {
                self.last_stop = Some(here);
                return Ok(StopReason::Breakpoint(here));
            }
            skip_once = None;
            match self.run_to_next_block() {
                Ok(()) => {}
                Err(DebugError::Run(RunError::OpLimitExceeded)) => return Ok(StopReason::OpLimit),
                Err(e) => return Err(e),
            }
            if self.state.halted {
                return Ok(StopReason::Halted);
            }
        }

        loop {
            let leader = self.current_addr();
            if let Some(exacts) = self.breakpoints.get(&leader) {
                if skip_once != Some(leader) {
                    if exacts.contains(&leader) {
                        self.last_stop = Some(leader);
                        return Ok(StopReason::Breakpoint(leader));
                    }
                    // Mid-block target: use the single-step program from the
                    // leader.
                    let targets = exacts.clone();
                    self.switch_to_stepping(leader);
                    loop {
                        match self.run_to_next_block() {
                            Ok(()) => {}
                            Err(DebugError::Run(RunError::OpLimitExceeded)) => {
                                return Ok(StopReason::OpLimit)
                            }
                            Err(e) => return Err(e),
                        }
                        if self.state.halted {
                            return Ok(StopReason::Halted);
                        }
                        let here = self.current_addr();
                        if targets.contains(&here) {
                            self.last_stop = Some(here);
                            return Ok(StopReason::Breakpoint(here));
                        }
                        if self.is_leader(here) {
                            // Left the block without hitting the target
                            // (e.g. a branch bypassed it).
                            self.switch_to_block_mode(here);
                            break;
                        }
                    }
                    skip_once = None;
                    continue;
                }
            }
            skip_once = None;
            match self.run_to_next_block() {
                Ok(()) => {}
                Err(DebugError::Run(RunError::OpLimitExceeded)) => return Ok(StopReason::OpLimit),
                Err(e) => return Err(e),
            }
            if self.state.halted {
                return Ok(StopReason::Halted);
            }
        }
    }

    fn hits_exact_breakpoint(&self, addr: u32) -> bool {
        self.breakpoints.values().any(|s| s.contains(&addr))
    }
}

/// Serves the line-oriented debug protocol over the given streams:
/// `b <hexaddr>`, `c`, `s`, `regs`, `mem <hexaddr> <len>`, `cycles`, `q`.
/// One line in, one line out.
pub fn serve<R: BufRead, W: Write>(
    session: &mut DebugSession,
    input: R,
    mut output: W,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let reply = match parts.next() {
            Some("b") => match parts.next().and_then(parse_hex) {
                Some(addr) => match session.set_breakpoint(addr) {
                    Ok(leader) => format!("ok {leader:08x}"),
                    Err(e) => error_reply(&e),
                },
                None => "err usage: b <hexaddr>".into(),
            },
            Some("c") => match session.cont() {
                Ok(StopReason::Breakpoint(addr)) => format!("stop breakpoint {addr:08x}"),
                Ok(StopReason::Halted) => "stop halted".into(),
                Ok(StopReason::OpLimit) => "stop op_limit".into(),
                Err(e) => error_reply(&e),
            },
            Some("s") => match session.step() {
                Ok(addr) => format!("stopped {addr:08x}"),
                Err(e) => error_reply(&e),
            },
            Some("regs") => {
                let regs = session.regs();
                let words: Vec<String> =
                    regs.iter().enumerate().map(|(i, v)| format!("r{i}={v:08x}")).collect();
                words.join(" ")
            }
            Some("mem") => {
                let addr = parts.next().and_then(parse_hex);
                let len = parts.next().and_then(|s| s.parse::<u32>().ok());
                match (addr, len) {
                    (Some(addr), Some(len)) => match session.read_mem(addr, len) {
                        Ok(bytes) => hex::encode(bytes),
                        Err(e) => error_reply(&e),
                    },
                    _ => "err usage: mem <hexaddr> <len>".into(),
                }
            }
            Some("cycles") => session.cycles().to_string(),
            Some("q") => {
                writeln!(output, "bye")?;
                output.flush()?;
                return Ok(());
            }
            Some(other) => format!("err unknown command {other}"),
            None => continue,
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}

fn parse_hex(token: &str) -> Option<u32> {
    let digits = token.strip_prefix("0x").unwrap_or(token);
    u32::from_str_radix(digits, 16).ok()
}

fn error_reply(e: &DebugError) -> String {
    match e {
        DebugError::AddressOutOfRange { .. } => "err out_of_range".into(),
        DebugError::AlreadyHalted => "err already_halted".into(),
        DebugError::Run(e) => format!("err runtime: {e}"),
    }
}
