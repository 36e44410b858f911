//! Interpretive cycle-accurate reference simulator of the source ISA. It
//! executes source instructions directly (never translated ops) and counts
//! cycles with its own incremental scoreboard, configurable to match each
//! translator detail level exactly (block-flush) or to carry pipeline
//! state across blocks (continuous) for deviation reporting.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cachemodel::{cab_key, cache_access, init_cache_region, CacheState};
use crate::codegen::{analyze, DetailLevel};
use crate::frontend::{decode_program, AluOp, Cond, IrInstruction, IrOp, TranslateError};
use crate::image::{classify_address, Classified, LoadedImage};
use crate::procdesc::ProcessorDescription;
use crate::timing::{branch_correction, branch_direction, branch_cost, branch_min, Outcome};
use crate::vtm::{
    Breakdown, BusRecord, DeviceRegistry, Ram, RegisterFile, RunError, RunLimits, RunResult,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle config: {0}")]
    Config(String),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Run(#[from] RunError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    /// Pipeline state cleared at basic-block boundaries, matching the
    /// translator's per-block timing assumption.
    pub block_flush: bool,
    /// Bill each conditional branch its actual-outcome cost instead of
    /// branch_min.
    pub model_branch: bool,
    /// Simulate the instruction cache at cache-line granularity.
    pub model_icache: bool,
    /// Carry pipeline state across blocks; mutually exclusive with
    /// block_flush.
    pub continuous: bool,
}

impl OracleConfig {
    /// The configuration that matches a translator detail level exactly.
    pub fn for_level(level: DetailLevel) -> OracleConfig {
        OracleConfig {
            block_flush: true,
            model_branch: level.models_branches(),
            model_icache: level.models_icache(),
            continuous: false,
        }
    }

    /// Block-flush with every dynamic effect modeled.
    pub fn full_flush() -> OracleConfig {
        OracleConfig::for_level(DetailLevel::L3)
    }

    /// The more realistic model used as the deviation-report reference.
    pub fn full_continuous() -> OracleConfig {
        OracleConfig { block_flush: false, model_branch: true, model_icache: true, continuous: true }
    }

    fn validate(&self) -> Result<(), OracleError> {
        if self.block_flush && self.continuous {
            return Err(OracleError::Config("continuous and block_flush are mutually exclusive".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct OracleOutcome {
    pub result: RunResult,
    /// Executed source instructions (same value as result.host_ops).
    pub executed: u64,
    /// Source addresses in execution order, when recording was requested.
    pub instr_trace: Option<Vec<u32>>,
}

/// In-order issue model, kept deliberately separate from the translator's
/// batch scoreboard so equality tests compare two implementations of the
/// issue rules.
struct IssueState {
    lanes: Vec<u64>,
    ready: [u64; 16],
    last_issue: u64,
    issued_any: bool,
    /// Earliest issue time for the next instruction (continuous mode:
    /// transfer costs and fetch stalls).
    floor: u64,
}

impl IssueState {
    fn new(width: u32) -> IssueState {
        IssueState { lanes: vec![0; width as usize], ready: [0; 16], last_issue: 0, issued_any: false, floor: 0 }
    }

    fn reset(&mut self) {
        let width = self.lanes.len() as u32;
        *self = IssueState::new(width);
    }

    fn issue(&mut self, ins: &IrInstruction, desc: &ProcessorDescription) -> u64 {
        let class = desc.timing_class(&ins.timing_class);
        let lane = (0..self.lanes.len()).min_by_key(|&i| self.lanes[i]).unwrap();
        let mut t = self.lanes[lane].max(self.floor);
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

struct Fetcher {
    cache: Option<CacheState>,
    prev: Option<u32>,
}

impl Fetcher {
    /// Charges one cache access when a line is entered: first fetch ever,
    /// any non-sequential fetch, or a sequential fetch crossing a line
    /// boundary. Returns the miss penalty, if any.
    fn fetch(&mut self, pc: u32, desc: &ProcessorDescription) -> u64 {
        let Some(cache) = self.cache.as_mut() else {
            self.prev = Some(pc);
            return 0;
        };
        let spec = desc.icache.as_ref().expect("icache modeling requires a spec");
        let entered = match self.prev {
            None => true,
            Some(p) => p.wrapping_add(4) != pc || cab_key(p, spec) != cab_key(pc, spec),
        };
        self.prev = Some(pc);
        if entered {
            let (tag, index) = cab_key(pc, spec);
            cache_access(cache, tag, index, spec).extra_cycles
        } else {
            0
        }
    }
}

enum BlockEnd {
    /// Terminating conditional branch with its actual outcome.
    Branch(Outcome),
    /// Unconditional transfer, halt, or fallthrough into a leader.
    Plain,
}

/// Runs the reference simulation. `stop_at` stops before the first
/// execution of that address, for debugger state comparisons.
pub fn reference_run_with_stop(
    img: &LoadedImage,
    desc: &ProcessorDescription,
    cfg: OracleConfig,
    devices: &mut DeviceRegistry,
    limits: RunLimits,
    record_trace: bool,
    stop_at: Option<u32>,
) -> Result<OracleOutcome, OracleError> {
    cfg.validate()?;
    if cfg.model_icache && desc.icache.is_none() {
        return Err(OracleError::Translate(TranslateError::MissingCacheSpec));
    }

    let ir = decode_program(&img.image, desc)?;
    let program: BTreeMap<u32, IrInstruction> = ir.into_iter().map(|i| (i.src_addr, i)).collect();
    // Flush boundaries are the translator's block leaders, including the
    // I/O split points.
    let boundaries: BTreeSet<u32> = if cfg.block_flush {
        analyze(img, desc)?.blocks.iter().map(|b| b.start).collect()
    } else {
        BTreeSet::new()
    };

    let mut regs = RegisterFile::default();
    let mut ram = Ram::build(&img.memory, &crate::codegen::ram_init_from_image(img));
    let mut sb = IssueState::new(desc.pipeline.issue_width);
    let mut fetcher = Fetcher {
        cache: cfg.model_icache.then(|| init_cache_region(desc.icache.as_ref().unwrap())),
        prev: None,
    };
    let mut cycles: u64 = 0;
    let mut breakdown = Breakdown::default();
    let mut block_cache_corr: u64 = 0;
    let mut bus_trace: Vec<BusRecord> = Vec::new();
    let mut trace: Vec<u32> = Vec::new();
    let mut executed: u64 = 0;
    let mut pc = img.image.entry;
    let mut halted = false;

    while !halted {
        if stop_at == Some(pc) {
            break;
        }
        if executed >= limits.max_ops {
            return Err(OracleError::Run(RunError::OpLimitExceeded));
        }
        let ins = program.get(&pc).ok_or(RunError::BadIndirectTarget { addr: pc })?;
        if record_trace {
            trace.push(pc);
        }

        let fetch_extra = fetcher.fetch(pc, desc);
        if cfg.continuous {
            // A fetch stall delays every later issue.
            if fetch_extra > 0 {
                sb.floor = sb.floor.max(sb.last_issue) + fetch_extra;
            }
        } else {
            block_cache_corr += fetch_extra;
        }

        let t = sb.issue(ins, desc);
        let issue_cycles = desc.timing_class(&ins.timing_class).issue_cycles as u64;
        executed += 1;

        // Bus accesses live in single-instruction blocks (the translator's
        // I/O split), so the stamp is this block's completed total.
        let bus_stamp = if cfg.continuous {
            t + issue_cycles
        } else {
            cycles + t + issue_cycles + block_cache_corr
        };

        let mut next = pc.wrapping_add(4);
        let mut end: Option<BlockEnd> = None;

        match ins.op {
            IrOp::Nop => {}
            IrOp::Alu(op) => {
                let a = regs.read(ins.srcs[0]);
                let value = match op {
                    AluOp::Add => a.wrapping_add(regs.read(ins.srcs[1])),
                    AluOp::Sub => a.wrapping_sub(regs.read(ins.srcs[1])),
                    AluOp::Mul => a.wrapping_mul(regs.read(ins.srcs[1])),
                    AluOp::And => a & regs.read(ins.srcs[1]),
                    AluOp::Or => a | regs.read(ins.srcs[1]),
                    AluOp::Xor => a ^ regs.read(ins.srcs[1]),
                    AluOp::Shl => a.wrapping_shl(regs.read(ins.srcs[1]) & 31),
                    AluOp::Shr => a.wrapping_shr(regs.read(ins.srcs[1]) & 31),
                    AluOp::AddImm => a.wrapping_add(ins.imm.unwrap() as u32),
                };
                regs.write(ins.dst.unwrap(), value);
            }
            IrOp::Movi => regs.write(ins.dst.unwrap(), ins.imm.unwrap() as u32),
            IrOp::Load | IrOp::Store => {
                let is_load = ins.op == IrOp::Load;
                let base = ins.srcs[if is_load { 0 } else { 1 }];
                let eff = regs.read(base).wrapping_add(ins.imm.unwrap_or(0) as u32);
                match classify_address(&img.memory, &img.bus, eff) {
                    Classified::Memory(dst) => {
                        if is_load {
                            let value = ram.read_u32(dst).map_err(OracleError::Run)?;
                            regs.write(ins.dst.unwrap(), value);
                        } else {
                            ram.write_u32(dst, regs.read(ins.srcs[0])).map_err(OracleError::Run)?;
                        }
                    }
                    Classified::Io { device, offset } => {
                        let dev = devices
                            .get_mut(device)
                            .ok_or_else(|| RunError::UnknownDevice(device.to_string()))?;
                        if is_load {
                            let value = dev.read(bus_stamp, offset);
                            bus_trace.push(BusRecord {
                                hwclock: bus_stamp,
                                device: device.to_string(),
                                offset,
                                write: false,
                                value,
                            });
                            regs.write(ins.dst.unwrap(), value);
                        } else {
                            let value = regs.read(ins.srcs[0]);
                            dev.write(bus_stamp, offset, value);
                            bus_trace.push(BusRecord {
                                hwclock: bus_stamp,
                                device: device.to_string(),
                                offset,
                                write: true,
                                value,
                            });
                        }
                    }
                    Classified::Unmapped => return Err(OracleError::Run(RunError::Unmapped { addr: eff })),
                }
            }
            IrOp::Branch(cond) => {
                let a = regs.read(ins.srcs[0]);
                let b = regs.read(ins.srcs[1]);
                let taken = match cond {
                    Cond::Eq => a == b,
                    Cond::Ne => a != b,
                    Cond::Lt => (a as i32) < (b as i32),
                };
                if taken {
                    next = ins.target.unwrap();
                }
                end = Some(BlockEnd::Branch(if taken { Outcome::Taken } else { Outcome::NotTaken }));
            }
            IrOp::Jump => {
                next = ins.target.unwrap();
                end = Some(BlockEnd::Plain);
            }
            IrOp::Call => {
                regs.write(ins.dst.unwrap(), pc.wrapping_add(4));
                next = ins.target.unwrap();
                end = Some(BlockEnd::Plain);
            }
            IrOp::JumpReg => {
                next = regs.read(ins.srcs[0]);
                end = Some(BlockEnd::Plain);
            }
            IrOp::Halt => {
                halted = true;
                end = Some(BlockEnd::Plain);
            }
        }

        if cfg.block_flush {
            let block_ends = end.is_some() || boundaries.contains(&next);
            if block_ends {
                let (static_tail, branch_part) = match &end {
                    Some(BlockEnd::Branch(outcome)) => {
                        let dir = branch_direction(ins);
                        let corr =
                            if cfg.model_branch { branch_correction(desc, dir, *outcome) } else { 0 };
                        (branch_min(desc, dir), corr)
                    }
                    _ => (issue_cycles, 0),
                };
                let static_part = t + static_tail;
                cycles += static_part + branch_part + block_cache_corr;
                breakdown.static_cycles_sum += static_part;
                breakdown.branch_correction_sum += branch_part;
                breakdown.cache_correction_sum += block_cache_corr;
                block_cache_corr = 0;
                sb.reset();
            }
        } else {
            // Continuous: a transfer's cost floors the next issue.
            if let Some(end) = &end {
                let cost = match end {
                    BlockEnd::Branch(outcome) => {
                        let dir = branch_direction(ins);
                        if cfg.model_branch {
                            branch_cost(desc, dir, *outcome)
                        } else {
                            branch_min(desc, dir)
                        }
                    }
                    BlockEnd::Plain => issue_cycles,
                };
                sb.floor = sb.floor.max(t + cost);
            }
            if halted {
                cycles = (t + issue_cycles).max(sb.floor);
                breakdown.static_cycles_sum = cycles;
            }
        }

        if !halted {
            pc = next;
        }
    }

    if cfg.continuous && !halted {
        // Stopped before halt (stop_at): account what has issued so far.
        cycles = sb.last_issue;
        breakdown.static_cycles_sum = cycles;
    }

    let result = RunResult {
        hwclock: cycles,
        host_ops: executed,
        bus_trace,
        registers: regs.snapshot(),
        memory_digest: ram.digest(),
        breakdown,
    };
    result.check_ledger();
    Ok(OracleOutcome { result, executed, instr_trace: record_trace.then_some(trace) })
}

pub fn reference_run(
    img: &LoadedImage,
    desc: &ProcessorDescription,
    cfg: OracleConfig,
    devices: &mut DeviceRegistry,
    limits: RunLimits,
) -> Result<OracleOutcome, OracleError> {
    reference_run_with_stop(img, desc, cfg, devices, limits, false, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{BusMap, MemoryMap, ProgramImage, Section};
    use crate::procdesc::{encode_i, encode_r, tk32};
    use crate::timing::scoreboard_cycles;

    fn image_of(words: &[u32]) -> LoadedImage {
        LoadedImage {
            image: ProgramImage {
                entry: 0,
                sections: vec![Section {
                    name: ".text".into(),
                    base: 0,
                    data: words.iter().flat_map(|w| w.to_le_bytes()).collect(),
                }],
                symbols: Default::default(),
            },
            memory: MemoryMap::default(),
            bus: BusMap::default(),
        }
    }

    fn flush_only() -> OracleConfig {
        OracleConfig { block_flush: true, model_branch: false, model_icache: false, continuous: false }
    }

    #[test]
    fn nop_halt_is_two_cycles() {
        let img = image_of(&[0, encode_r(19, 0, 0, 0)]);
        let out =
            reference_run(&img, &tk32(), flush_only(), &mut DeviceRegistry::new(), RunLimits::default())
                .unwrap();
        assert_eq!(out.result.hwclock, 2);
        assert_eq!(out.executed, 2);
    }

    #[test]
    fn straight_line_matches_batch_scoreboard() {
        let words = [
            encode_i(9, 1, 0, 5),
            encode_r(3, 2, 1, 1),
            encode_r(1, 3, 2, 2),
            encode_r(6, 4, 3, 1),
            encode_r(19, 0, 0, 0),
        ];
        let img = image_of(&words);
        let desc = tk32();
        let analyzed = crate::codegen::analyze(&img, &desc).unwrap();
        assert_eq!(analyzed.blocks.len(), 1);
        let expected = scoreboard_cycles(&analyzed.blocks[0], &desc).static_cycles;
        let out =
            reference_run(&img, &desc, flush_only(), &mut DeviceRegistry::new(), RunLimits::default())
                .unwrap();
        assert_eq!(out.result.hwclock, expected);
    }

    #[test]
    fn continuous_and_flush_conflict() {
        let cfg =
            OracleConfig { block_flush: true, model_branch: false, model_icache: false, continuous: true };
        let img = image_of(&[encode_r(19, 0, 0, 0)]);
        assert!(matches!(
            reference_run(&img, &tk32(), cfg, &mut DeviceRegistry::new(), RunLimits::default()),
            Err(OracleError::Config(_))
        ));
    }

    #[test]
    fn op_limit_fires_on_infinite_loop() {
        // J to self
        let img = image_of(&[crate::procdesc::encode_j(16, -1), encode_r(19, 0, 0, 0)]);
        let err = reference_run(
            &img,
            &tk32(),
            flush_only(),
            &mut DeviceRegistry::new(),
            RunLimits { max_ops: 50 },
        )
        .unwrap_err();
        assert!(matches!(err, OracleError::Run(RunError::OpLimitExceeded)));
    }

    #[test]
    fn continuous_never_exceeds_flush_on_straight_line() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..64 {
            let n = rng.random_range(1..24);
            let mut words: Vec<u32> = (0..n)
                .map(|_| {
                    let op = rng.random_range(0..7u8);
                    if op == 0 {
                        0
                    } else {
                        encode_r(op, rng.random_range(0..16), rng.random_range(0..16), rng.random_range(0..16))
                    }
                })
                .collect();
            words.push(encode_r(19, 0, 0, 0));
            let img = image_of(&words);
            let desc = tk32();
            let flush =
                reference_run(&img, &desc, flush_only(), &mut DeviceRegistry::new(), RunLimits::default())
                    .unwrap();
            let cont = OracleConfig {
                block_flush: false,
                model_branch: false,
                model_icache: false,
                continuous: true,
            };
            let cont =
                reference_run(&img, &desc, cont, &mut DeviceRegistry::new(), RunLimits::default()).unwrap();
            assert!(cont.result.hwclock <= flush.result.hwclock);
        }
    }
}
