//! The virtual target machine: executes translated programs op by op,
//! modeling the synchronization device as deferred cycle accounting, the
//! correction counter, the cache data region, and a bus with pluggable
//! devices. One VmState per run; runs are independent.

use std::any::Any;
use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cachemodel::{cache_access, init_cache_region, CacheState};
use crate::codegen::{AccessKind, AluKind, BranchCond, CondKind, TargetOp, TranslatedProgram};
use crate::image::{classify_address, Classified, MemRegion, MemoryMap, RegionKind};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("sync protocol violation: {0}")]
    SyncProtocol(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("device {0} already registered")]
    DuplicateDevice(String),
    #[error("op limit exceeded")]
    OpLimitExceeded,
    #[error("unmapped access at {addr:#x}")]
    Unmapped { addr: u32 },
    #[error("write to rom at {addr:#x}")]
    RomWrite { addr: u32 },
    #[error("indirect jump to {addr:#x} outside the dispatch table")]
    BadIndirectTarget { addr: u32 },
    #[error("malformed program: {0}")]
    BadProgram(String),
}

/// A bus device. Callbacks are synchronous and observe the hardware clock
/// at the time of the access.
pub trait Device {
    fn read(&mut self, hwclock: u64, offset: u32) -> u32;
    fn write(&mut self, hwclock: u64, offset: u32, value: u32);
    fn as_any(&self) -> &dyn Any;
}

#[derive(Default)]
pub struct DeviceRegistry {
    devices: BTreeMap<String, Box<dyn Device>>,
}

impl DeviceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, device: Box<dyn Device>) -> Result<(), RunError> {
        if self.devices.contains_key(name) {
            return Err(RunError::DuplicateDevice(name.to_string()));
        }
        self.devices.insert(name.to_string(), device);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn Device> {
        self.devices.get(name).map(|b| b.as_ref())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut (dyn Device + 'static)> {
        self.devices.get_mut(name).map(|b| b.as_mut())
    }

    fn require_mut(&mut self, name: &str) -> Result<&mut (dyn Device + 'static), RunError> {
        self.get_mut(name).ok_or_else(|| RunError::UnknownDevice(name.to_string()))
    }
}

/// Reads return 0, writes are ignored.
#[derive(Default)]
pub struct NullDevice;

impl Device for NullDevice {
    fn read(&mut self, _: u64, _: u32) -> u32 {
        0
    }
    fn write(&mut self, _: u64, _: u32, _: u32) {}
    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Reads return the number of prior accesses (reads and writes).
#[derive(Default)]
pub struct CounterDevice {
    count: u32,
}

impl Device for CounterDevice {
    fn read(&mut self, _: u64, _: u32) -> u32 {
        let prior = self.count;
        self.count += 1;
        prior
    }
    fn write(&mut self, _: u64, _: u32, _: u32) {
        self.count += 1;
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Capture UART: offset 0 is the data register (read pops scripted input,
/// write records a byte), offset 4 reads the remaining input count.
#[derive(Default)]
pub struct UartDevice {
    input: std::collections::VecDeque<u8>,
    output: Vec<u8>,
}

impl UartDevice {
    pub fn with_input(input: &[u8]) -> Self {
        UartDevice { input: input.iter().copied().collect(), output: Vec::new() }
    }

    pub fn output(&self) -> &[u8] {
        &self.output
    }
}

impl Device for UartDevice {
    fn read(&mut self, _: u64, offset: u32) -> u32 {
        match offset {
            0 => self.input.pop_front().map(u32::from).unwrap_or(0),
            4 => self.input.len() as u32,
            _ => 0,
        }
    }
    fn write(&mut self, _: u64, offset: u32, value: u32) {
        if offset == 0 {
            self.output.push(value as u8);
        }
    }
    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Emulated RAM in destination address space, one buffer per memory-map
/// region.
#[derive(Debug, Clone)]
pub struct Ram {
    regions: Vec<(MemRegion, Vec<u8>)>,
}

impl Ram {
    pub fn build(map: &MemoryMap, init: &[crate::codegen::RamInit]) -> Ram {
        let mut regions: Vec<(MemRegion, Vec<u8>)> = map
            .regions
            .iter()
            .map(|r| (r.clone(), vec![0u8; r.len() as usize]))
            .collect();
        regions.sort_by_key(|(r, _)| r.dst_base);
        let mut ram = Ram { regions };
        for chunk in init {
            for (i, &b) in chunk.data.iter().enumerate() {
                ram.write_u8(chunk.dst_base + i as u32, b).expect("ram_init covered by map");
            }
        }
        ram
    }

    fn region_mut(&mut self, addr: u32) -> Option<(&MemRegion, &mut Vec<u8>)> {
        self.regions
            .iter_mut()
            .find(|(r, _)| addr >= r.dst_base && addr < r.dst_end())
            .map(|(r, b)| (&*r, b))
    }

    fn write_u8(&mut self, addr: u32, value: u8) -> Result<(), RunError> {
        let (r, bytes) = self.region_mut(addr).ok_or(RunError::Unmapped { addr })?;
        let off = (addr - r.dst_base) as usize;
        bytes[off] = value;
        Ok(())
    }

    pub fn read_u8(&self, addr: u32) -> Result<u8, RunError> {
        let (r, bytes) = self
            .regions
            .iter()
            .find(|(r, _)| addr >= r.dst_base && addr < r.dst_end())
            .ok_or(RunError::Unmapped { addr })?;
        Ok(bytes[(addr - r.dst_base) as usize])
    }

    pub fn read_u32(&self, addr: u32) -> Result<u32, RunError> {
        let mut word = [0u8; 4];
        for (i, b) in word.iter_mut().enumerate() {
            *b = self.read_u8(addr.wrapping_add(i as u32))?;
        }
        Ok(u32::from_le_bytes(word))
    }

    pub fn write_u32(&mut self, addr: u32, value: u32) -> Result<(), RunError> {
        // Bounds and kind are checked on the first byte's region; the word
        // must stay within one region.
        let (r, _) = self.region_mut(addr).ok_or(RunError::Unmapped { addr })?;
        if r.kind == RegionKind::Rom {
            return Err(RunError::RomWrite { addr });
        }
        for (i, b) in value.to_le_bytes().into_iter().enumerate() {
            self.write_u8(addr.wrapping_add(i as u32), b)?;
        }
        Ok(())
    }

    /// SHA-256 over all regions in destination order: base, length, bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (r, bytes) in &self.regions {
            h.update(r.dst_base.to_le_bytes());
            h.update((bytes.len() as u32).to_le_bytes());
            h.update(bytes);
        }
        hex::encode(h.finalize())
    }
}

/// Source register mirrors; r0 reads as zero and drops writes.
#[derive(Debug, Clone, Default)]
pub struct RegisterFile([u32; 16]);

impl RegisterFile {
    pub fn read(&self, r: u8) -> u32 {
        self.0[r as usize]
    }

    pub fn write(&mut self, r: u8, value: u32) {
        if r != 0 {
            self.0[r as usize] = value;
        }
    }

    pub fn snapshot(&self) -> [u32; 16] {
        self.0
    }
}

/// The cycle-generation peripheral: written with a count at block entry,
/// read to complete generation. Modeled as deferred accounting; the only
/// observable effects of the hardware's parallelism are cycle totals and
/// bus timestamps, and I/O block splitting keeps both exact.
#[derive(Debug, Clone, Default)]
pub struct SyncDevice {
    pending: u64,
    hwclock: u64,
}

impl SyncDevice {
    pub fn start(&mut self, cycles: u64) -> Result<(), RunError> {
        if self.pending != 0 {
            return Err(RunError::SyncProtocol(format!(
                "SYNC_START with {} cycles still pending",
                self.pending
            )));
        }
        self.pending = cycles;
        Ok(())
    }

    pub fn wait(&mut self) -> u64 {
        let generated = self.pending;
        self.hwclock += generated;
        self.pending = 0;
        generated
    }

    pub fn pending(&self) -> u64 {
        self.pending
    }

    pub fn hwclock(&self) -> u64 {
        self.hwclock
    }

    fn add_corrections(&mut self, cycles: u64) {
        self.hwclock += cycles;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Breakdown {
    pub static_cycles_sum: u64,
    pub branch_correction_sum: u64,
    pub cache_correction_sum: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusRecord {
    pub hwclock: u64,
    pub device: String,
    pub offset: u32,
    pub write: bool,
    pub value: u32,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub hwclock: u64,
    /// Executed target ops for VTM runs; executed source instructions for
    /// oracle runs.
    pub host_ops: u64,
    pub bus_trace: Vec<BusRecord>,
    pub registers: [u32; 16],
    pub memory_digest: String,
    pub breakdown: Breakdown,
}

impl RunResult {
    pub fn check_ledger(&self) {
        assert_eq!(
            self.hwclock,
            self.breakdown.static_cycles_sum
                + self.breakdown.branch_correction_sum
                + self.breakdown.cache_correction_sum,
            "hardware clock must equal generated cycles plus flushed corrections"
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLimits {
    pub max_ops: u64,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits { max_ops: 100_000_000 }
    }
}

/// Position in the translated program: block id and op index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pc {
    pub block: usize,
    pub op: usize,
}

pub struct VmState {
    pub regs: RegisterFile,
    pub ram: Ram,
    pub sync: SyncDevice,
    pub pc: Pc,
    pub halted: bool,
    /// Correction counter halves, split by origin so the flushed cycles can
    /// be attributed in the breakdown. The architectural counter is their
    /// sum.
    corr_branch: u64,
    corr_cache: u64,
    pub cache: Option<CacheState>,
    pub scratch: u32,
    pub host_ops: u64,
    pub bus_trace: Vec<BusRecord>,
    breakdown: Breakdown,
}

impl VmState {
    pub fn new(prog: &TranslatedProgram) -> VmState {
        VmState {
            regs: RegisterFile::default(),
            ram: Ram::build(&prog.memory_map, &prog.ram_init),
            sync: SyncDevice::default(),
            pc: Pc { block: prog.entry_block, op: 0 },
            halted: false,
            corr_branch: 0,
            corr_cache: 0,
            cache: prog.cache_region.as_ref().map(|r| init_cache_region(&r.spec)),
            scratch: 0,
            host_ops: 0,
            bus_trace: Vec::new(),
            breakdown: Breakdown::default(),
        }
    }

    pub fn correction_counter(&self) -> u64 {
        self.corr_branch + self.corr_cache
    }

    pub fn result(&self) -> RunResult {
        let r = RunResult {
            hwclock: self.sync.hwclock(),
            host_ops: self.host_ops,
            bus_trace: self.bus_trace.clone(),
            registers: self.regs.snapshot(),
            memory_digest: self.ram.digest(),
            breakdown: self.breakdown,
        };
        r.check_ledger();
        r
    }
}

fn eval_cond(cond: &BranchCond, regs: &RegisterFile) -> bool {
    let a = regs.read(cond.a);
    let b = regs.read(cond.b);
    match cond.kind {
        CondKind::Eq => a == b,
        CondKind::Ne => a != b,
        CondKind::Lt => (a as i32) < (b as i32),
    }
}

fn alu(kind: AluKind, a: u32, b: u32, imm: Option<i32>) -> u32 {
    match kind {
        AluKind::Add => a.wrapping_add(b),
        AluKind::Sub => a.wrapping_sub(b),
        AluKind::Mul => a.wrapping_mul(b),
        AluKind::And => a & b,
        AluKind::Or => a | b,
        AluKind::Xor => a ^ b,
        AluKind::Shl => a.wrapping_shl(b & 31),
        AluKind::Shr => a.wrapping_shr(b & 31),
        AluKind::Addi => a.wrapping_add(imm.unwrap() as u32),
    }
}

fn bus_read(
    state: &mut VmState,
    devices: &mut DeviceRegistry,
    device: &str,
    offset: u32,
) -> Result<u32, RunError> {
    if state.sync.pending() != 0 {
        return Err(RunError::SyncProtocol("bus access during cycle generation".into()));
    }
    let hwclock = state.sync.hwclock();
    let value = devices.require_mut(device)?.read(hwclock, offset);
    state.bus_trace.push(BusRecord { hwclock, device: device.to_string(), offset, write: false, value });
    Ok(value)
}

fn bus_write(
    state: &mut VmState,
    devices: &mut DeviceRegistry,
    device: &str,
    offset: u32,
    value: u32,
) -> Result<(), RunError> {
    if state.sync.pending() != 0 {
        return Err(RunError::SyncProtocol("bus access during cycle generation".into()));
    }
    let hwclock = state.sync.hwclock();
    devices.require_mut(device)?.write(hwclock, offset, value);
    state.bus_trace.push(BusRecord { hwclock, device: device.to_string(), offset, write: true, value });
    Ok(())
}

fn dispatch_block(prog: &TranslatedProgram, state: &VmState, reg: u8) -> Result<usize, RunError> {
    let addr = state.regs.read(reg);
    if !prog.jr_targets.is_empty() && prog.jr_targets.binary_search(&addr).is_err() {
        return Err(RunError::BadIndirectTarget { addr });
    }
    prog.addr_map.get(&addr).copied().ok_or(RunError::BadIndirectTarget { addr })
}

/// Executes exactly one target op, advancing the pc.
pub fn step_op(
    prog: &TranslatedProgram,
    state: &mut VmState,
    devices: &mut DeviceRegistry,
) -> Result<(), RunError> {
    debug_assert!(!state.halted);
    let block = prog
        .blocks
        .get(state.pc.block)
        .ok_or_else(|| RunError::BadProgram(format!("no block {}", state.pc.block)))?;
    let op = block
        .ops
        .get(state.pc.op)
        .ok_or_else(|| RunError::BadProgram(format!("pc ran off block {}", block.id)))?;
    state.host_ops += 1;
    let mut next = Pc { block: state.pc.block, op: state.pc.op + 1 };

    match op {
        TargetOp::SyncStart { cycles } => {
            state.sync.start(*cycles)?;
        }
        TargetOp::SyncWait => {
            state.breakdown.static_cycles_sum += state.sync.wait();
        }
        TargetOp::CorrAdd { cycles } => {
            state.corr_branch += cycles;
        }
        TargetOp::CorrFlush => {
            state.breakdown.branch_correction_sum += state.corr_branch;
            state.breakdown.cache_correction_sum += state.corr_cache;
            state.sync.add_corrections(state.corr_branch + state.corr_cache);
            state.corr_branch = 0;
            state.corr_cache = 0;
        }
        TargetOp::CacheCheck { tag, index } => {
            let region = prog.cache_region.as_ref().ok_or_else(|| {
                RunError::BadProgram("CACHE_CHECK without a cache region".into())
            })?;
            let cache = state.cache.as_mut().expect("cache initialized with region");
            let r = cache_access(cache, *tag, *index, &region.spec);
            state.corr_cache += r.extra_cycles;
        }
        TargetOp::BrCheck { cond, corr_taken, corr_not_taken, .. } => {
            state.corr_branch +=
                if eval_cond(cond, &state.regs) { *corr_taken } else { *corr_not_taken };
        }
        TargetOp::Nop => {}
        TargetOp::Alu { alu: kind, dst, a, b, imm } => {
            let va = state.regs.read(*a);
            let vb = state.regs.read(*b);
            state.regs.write(*dst, alu(*kind, va, vb, *imm));
        }
        TargetOp::Movi { dst, imm } => {
            state.regs.write(*dst, *imm);
        }
        TargetOp::Load { dst, dst_addr, base, offset, src_addr } => {
            debug_assert_eq!(
                state.regs.read(*base).wrapping_add(*offset as u32),
                *src_addr,
                "static base analysis must be sound"
            );
            let value = state.ram.read_u32(*dst_addr)?;
            state.regs.write(*dst, value);
        }
        TargetOp::Store { src, dst_addr, base, offset, src_addr } => {
            debug_assert_eq!(
                state.regs.read(*base).wrapping_add(*offset as u32),
                *src_addr,
                "static base analysis must be sound"
            );
            state.ram.write_u32(*dst_addr, state.regs.read(*src))?;
        }
        TargetOp::BusRd { device, offset, dst, base, reg_offset, src_addr } => {
            debug_assert_eq!(state.regs.read(*base).wrapping_add(*reg_offset as u32), *src_addr);
            let value = bus_read(state, devices, device, *offset)?;
            state.regs.write(*dst, value);
        }
        TargetOp::BusWr { device, offset, src, base, reg_offset, src_addr } => {
            debug_assert_eq!(state.regs.read(*base).wrapping_add(*reg_offset as u32), *src_addr);
            bus_write(state, devices, device, *offset, state.regs.read(*src))?;
        }
        TargetOp::AddrDispatch { access, reg, base, offset } => {
            let eff = state.regs.read(*base).wrapping_add(*offset as u32);
            state.scratch = eff;
            match classify_address(&prog.memory_map, &prog.bus_map, eff) {
                Classified::Memory(dst_addr) => match access {
                    AccessKind::Load => {
                        let value = state.ram.read_u32(dst_addr)?;
                        state.regs.write(*reg, value);
                    }
                    AccessKind::Store => state.ram.write_u32(dst_addr, state.regs.read(*reg))?,
                },
                Classified::Io { device, offset } => {
                    let device = device.to_string();
                    match access {
                        AccessKind::Load => {
                            let value = bus_read(state, devices, &device, offset)?;
                            state.regs.write(*reg, value);
                        }
                        AccessKind::Store => {
                            bus_write(state, devices, &device, offset, state.regs.read(*reg))?
                        }
                    }
                }
                Classified::Unmapped => return Err(RunError::Unmapped { addr: eff }),
            }
        }
        TargetOp::Br { cond, taken, not_taken } => {
            next = Pc { block: if eval_cond(cond, &state.regs) { *taken } else { *not_taken }, op: 0 };
        }
        TargetOp::Jmp { target } => {
            next = Pc { block: *target, op: 0 };
        }
        TargetOp::JmpInd { reg } => {
            next = Pc { block: dispatch_block(prog, state, *reg)?, op: 0 };
        }
        TargetOp::DebugTrap => {}
        TargetOp::Halt => {
            state.halted = true;
        }
    }
    if !state.halted {
        state.pc = next;
    }
    Ok(())
}

/// Runs a translated program to completion.
pub fn vm_run(
    prog: &TranslatedProgram,
    devices: &mut DeviceRegistry,
    limits: RunLimits,
) -> Result<RunResult, RunError> {
    let mut state = VmState::new(prog);
    while !state.halted {
        if state.host_ops >= limits.max_ops {
            return Err(RunError::OpLimitExceeded);
        }
        step_op(prog, &mut state, devices)?;
    }
    Ok(state.result())
}

/// Bus trace as CSV: hwclock, device, offset, rw, value.
pub fn trace_to_csv(trace: &[BusRecord]) -> String {
    let mut out = String::from("hwclock,device,offset,rw,value\n");
    for r in trace {
        out.push_str(&format!(
            "{},{},{:#x},{},{:#x}\n",
            r.hwclock,
            r.device,
            r.offset,
            if r.write { "w" } else { "r" },
            r.value
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{DetailLevel, Variant};

    /// Hand-built single-block program around the given ops.
    fn program_of(ops: Vec<TargetOp>) -> TranslatedProgram {
        TranslatedProgram {
            version: 1,
            description: "TK32".into(),
            level: DetailLevel::L2,
            variant: Variant::BlockOriented,
            entry_block: 0,
            blocks: vec![crate::codegen::TranslatedBlock { id: 0, src_start: 0, src_end: 4, ops }],
            addr_map: [(0u32, 0usize)].into_iter().collect(),
            reg_map: (0..16).collect(),
            cache_region: None,
            jr_targets: vec![],
            memory_map: MemoryMap::default(),
            bus_map: crate::image::BusMap::default(),
            ram_init: vec![],
        }
    }

    #[test]
    fn sync_start_wait_counts_cycles() {
        let prog = program_of(vec![TargetOp::SyncStart { cycles: 5 }, TargetOp::SyncWait, TargetOp::Halt]);
        let r = vm_run(&prog, &mut DeviceRegistry::new(), RunLimits::default()).unwrap();
        assert_eq!(r.hwclock, 5);
        assert_eq!(r.host_ops, 3);
    }

    #[test]
    fn corrections_flush_into_the_ledger() {
        let prog = program_of(vec![
            TargetOp::SyncStart { cycles: 3 },
            TargetOp::CorrAdd { cycles: 4 },
            TargetOp::SyncWait,
            TargetOp::CorrFlush,
            TargetOp::Halt,
        ]);
        let r = vm_run(&prog, &mut DeviceRegistry::new(), RunLimits::default()).unwrap();
        assert_eq!(r.hwclock, 7);
        assert_eq!(r.breakdown.static_cycles_sum, 3);
        assert_eq!(r.breakdown.branch_correction_sum, 4);
        assert_eq!(r.breakdown.cache_correction_sum, 0);
    }

    #[test]
    fn nested_sync_start_is_protocol_violation() {
        let prog = program_of(vec![
            TargetOp::SyncStart { cycles: 1 },
            TargetOp::SyncStart { cycles: 1 },
            TargetOp::Halt,
        ]);
        let err = vm_run(&prog, &mut DeviceRegistry::new(), RunLimits::default()).unwrap_err();
        assert!(matches!(err, RunError::SyncProtocol(_)));
    }

    #[test]
    fn bus_access_with_pending_cycles_is_protocol_violation() {
        let prog = program_of(vec![
            TargetOp::SyncStart { cycles: 1 },
            TargetOp::BusWr { device: "null".into(), offset: 0, src: 1, base: 0, reg_offset: 0, src_addr: 0 },
            TargetOp::Halt,
        ]);
        let mut devices = DeviceRegistry::new();
        devices.register("null", Box::new(NullDevice)).unwrap();
        let err = vm_run(&prog, &mut devices, RunLimits::default()).unwrap_err();
        assert!(matches!(err, RunError::SyncProtocol(_)));
    }

    #[test]
    fn unknown_device_is_reported() {
        let prog = program_of(vec![
            TargetOp::BusRd { device: "dac".into(), offset: 0, dst: 1, base: 0, reg_offset: 0, src_addr: 0 },
            TargetOp::Halt,
        ]);
        let err = vm_run(&prog, &mut DeviceRegistry::new(), RunLimits::default()).unwrap_err();
        assert!(matches!(err, RunError::UnknownDevice(d) if d == "dac"));
    }

    #[test]
    fn duplicate_device_rejected() {
        let mut devices = DeviceRegistry::new();
        devices.register("uart", Box::new(NullDevice)).unwrap();
        let err = devices.register("uart", Box::new(NullDevice)).unwrap_err();
        assert!(matches!(err, RunError::DuplicateDevice(_)));
    }

    #[test]
    fn op_limit_detects_non_termination() {
        let prog = program_of(vec![TargetOp::Jmp { target: 0 }]);
        let err = vm_run(&prog, &mut DeviceRegistry::new(), RunLimits { max_ops: 100 }).unwrap_err();
        assert!(matches!(err, RunError::OpLimitExceeded));
    }

    #[test]
    fn counter_device_counts_prior_accesses() {
        let prog = program_of(vec![
            TargetOp::BusRd { device: "ctr".into(), offset: 0, dst: 1, base: 0, reg_offset: 0, src_addr: 0 },
            TargetOp::BusRd { device: "ctr".into(), offset: 0, dst: 2, base: 0, reg_offset: 0, src_addr: 0 },
            TargetOp::Halt,
        ]);
        let mut devices = DeviceRegistry::new();
        devices.register("ctr", Box::new(CounterDevice::default())).unwrap();
        let r = vm_run(&prog, &mut devices, RunLimits::default()).unwrap();
        assert_eq!(r.registers[1], 0);
        assert_eq!(r.registers[2], 1);
        assert_eq!(r.bus_trace.len(), 2);
    }

    #[test]
    fn determinism_across_runs() {
        let prog = program_of(vec![
            TargetOp::SyncStart { cycles: 2 },
            TargetOp::Movi { dst: 1, imm: 7 },
            TargetOp::SyncWait,
            TargetOp::CorrFlush,
            TargetOp::BusWr { device: "u".into(), offset: 0, src: 1, base: 0, reg_offset: 0, src_addr: 0 },
            TargetOp::Halt,
        ]);
        let run = || {
            let mut devices = DeviceRegistry::new();
            devices.register("u", Box::new(UartDevice::default())).unwrap();
            vm_run(&prog, &mut devices, RunLimits::default()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.hwclock, b.hwclock);
        assert_eq!(a.bus_trace, b.bus_trace);
        assert_eq!(a.registers, b.registers);
        assert_eq!(a.memory_digest, b.memory_digest);
    }

    #[test]
    fn writes_to_r0_are_dropped() {
        let prog = program_of(vec![TargetOp::Movi { dst: 0, imm: 99 }, TargetOp::Halt]);
        let r = vm_run(&prog, &mut DeviceRegistry::new(), RunLimits::default()).unwrap();
        assert_eq!(r.registers[0], 0);
    }
}
