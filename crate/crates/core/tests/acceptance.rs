//! Acceptance suite. Each test checks one criterion at its stated
//! tolerance and prints one pass line (visible with --nocapture); a failed
//! assertion is the fail line.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tkbt_core::cachemodel::{cache_access, init_cache_region, CacheState};
use tkbt_core::codegen::{translate, DetailLevel, Variant};
use tkbt_core::debugger::{DebugSession, StopReason};
use tkbt_core::frontend::{build_cfg, decode_program};
use tkbt_core::image::{LoadedImage, ProgramImage, Section};
use tkbt_core::oracle::{reference_run_with_stop, OracleConfig};
use tkbt_core::procdesc::{encode_i, encode_j, encode_r, CacheSpec, TimingClass};
use tkbt_core::report::{compare, to_csv};
use tkbt_core::timing::scoreboard_cycles;
use tkbt_core::vtm::{DeviceRegistry, RunLimits};

/// Criterion 1: for all six bundled programs and each level, VTM hardware
/// clock equals the oracle's cycle count under the matching configuration.
#[test]
fn acceptance_1_matched_level_exactness() {
    let start = Instant::now();
    for name in COMPARE_PROGRAMS {
        let img = load_fixture(name);
        for level in LEVELS {
            let vm = run_vm_at(name, &img, level);
            let oracle = run_oracle_at(name, &img, OracleConfig::for_level(level));
            assert_eq!(
                vm.hwclock, oracle.result.hwclock,
                "{name} at {level:?}: vm {} vs oracle {}",
                vm.hwclock, oracle.result.hwclock
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "suite took {elapsed:?}, budget 10 s");
    println!("acceptance 1 (matched-level exactness, 6 programs x 3 levels, tolerance 0): PASS in {elapsed:?}");
}

/// Criterion 2: final registers and memory digest of VTM and oracle agree
/// for every bundled program at every level.
#[test]
fn acceptance_2_functional_equivalence() {
    for name in ALL_PROGRAMS {
        let img = load_fixture(name);
        for level in LEVELS {
            let vm = run_vm_at(name, &img, level);
            let oracle = run_oracle_at(name, &img, OracleConfig::for_level(level));
            assert_eq!(vm.registers, oracle.result.registers, "{name} at {level:?}: registers differ");
            assert_eq!(
                vm.memory_digest, oracle.result.memory_digest,
                "{name} at {level:?}: memory differs"
            );
        }
    }
    println!("acceptance 2 (functional equivalence, 8 programs x 3 levels, tolerance 0): PASS");
}

/// Independent true-LRU set-associative simulator: per-set tag vector plus
/// an explicit recency order (front = most recently used).
struct BruteLru {
    tags: Vec<Vec<Option<u32>>>,
    recency: Vec<Vec<usize>>,
    miss_penalty: u64,
}

impl BruteLru {
    fn new(cfg: &CacheSpec) -> BruteLru {
        BruteLru {
            tags: vec![vec![None; cfg.ways as usize]; cfg.sets as usize],
            recency: vec![(0..cfg.ways as usize).collect(); cfg.sets as usize],
            miss_penalty: cfg.miss_penalty as u64,
        }
    }

    fn access(&mut self, tag: u32, index: u32) -> (bool, u64) {
        let set = &mut self.tags[index as usize];
        let order = &mut self.recency[index as usize];
        if let Some(way) = set.iter().position(|t| *t == Some(tag)) {
            let pos = order.iter().position(|w| *w == way).unwrap();
            let way = order.remove(pos);
            order.insert(0, way);
            (true, 0)
        } else {
            let victim = order.pop().unwrap();
            set[victim] = Some(tag);
            order.insert(0, victim);
            (false, self.miss_penalty)
        }
    }

    fn state_matches(&self, state: &CacheState) -> bool {
        for set in 0..self.tags.len() {
            for way in 0..self.tags[set].len() {
                let (valid, tag) = state.line(set as u32, way as u32);
                match self.tags[set][way] {
                    Some(t) => {
                        if !valid || tag != t {
                            return false;
                        }
                    }
                    None => {
                        if valid {
                            return false;
                        }
                    }
                }
                let pos = self.recency[set].iter().position(|w| *w == way).unwrap() as u32;
                if state.age(set as u32, way as u32) != pos {
                    return false;
                }
            }
        }
        true
    }
}

/// Criterion 3: the cache routine against a brute-force true-LRU simulator
/// over 10^5 random accesses on three configurations.
#[test]
fn acceptance_3_cache_oracle_equivalence() {
    let start = Instant::now();
    let configs = [
        CacheSpec { sets: 4, ways: 1, block_bytes: 16, miss_penalty: 10 },
        CacheSpec { sets: 16, ways: 2, block_bytes: 16, miss_penalty: 10 },
        CacheSpec { sets: 4, ways: 4, block_bytes: 32, miss_penalty: 7 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for cfg in configs {
        let mut state = init_cache_region(&cfg);
        let mut brute = BruteLru::new(&cfg);
        for i in 0..100_000u32 {
            let tag = rng.random_range(0..(cfg.ways * 3));
            let index = rng.random_range(0..cfg.sets);
            let got = cache_access(&mut state, tag, index, &cfg);
            let (hit, extra) = brute.access(tag, index);
            assert_eq!((got.hit, got.extra_cycles), (hit, extra), "access {i} of {cfg:?}");
        }
        assert!(brute.state_matches(&state), "final state differs for {cfg:?}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "cache oracle took {elapsed:?}, budget 5 s");
    println!("acceptance 3 (cache vs brute-force LRU, 3 configs x 1e5 accesses, tolerance 0): PASS in {elapsed:?}");
}

/// Criterion 4: 1,000 random straight-line blocks (<= 32 instructions,
/// random timing classes): the batch scoreboard equals the oracle's
/// block-flush count.
#[test]
fn acceptance_4_scoreboard_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xb10c);
    for case in 0..1000 {
        let mut desc = desc();
        desc.pipeline.issue_width = rng.random_range(1..=2);
        for class in ["alu", "mul", "mem", "nop", "branch"] {
            *desc.pipeline.timing_classes.get_mut(class).unwrap() = TimingClass {
                issue_cycles: rng.random_range(1..=3),
                result_latency: rng.random_range(1..=4),
            };
        }
        let n = rng.random_range(1..=32usize);
        let mut words: Vec<u32> = (0..n)
            .map(|_| {
                // NOP or a random two-source ALU op (ADD..SHR incl. MUL)
                match rng.random_range(0..9u8) {
                    0 => 0,
                    op => encode_r(op, rng.random_range(0..16), rng.random_range(0..16), rng.random_range(0..16)),
                }
            })
            .collect();
        words.push(encode_r(19, 0, 0, 0));

        let img = LoadedImage {
            image: ProgramImage {
                entry: 0,
                sections: vec![Section {
                    name: ".text".into(),
                    base: 0,
                    data: words.iter().flat_map(|w| w.to_le_bytes()).collect(),
                }],
                symbols: Default::default(),
            },
            memory: Default::default(),
            bus: Default::default(),
        };
        let analyzed = tkbt_core::codegen::analyze(&img, &desc).unwrap();
        assert_eq!(analyzed.blocks.len(), 1);
        let static_cycles = scoreboard_cycles(&analyzed.blocks[0], &desc).static_cycles;

        let cfg = OracleConfig { block_flush: true, model_branch: false, model_icache: false, continuous: false };
        let oracle = tkbt_core::oracle::reference_run(
            &img,
            &desc,
            cfg,
            &mut DeviceRegistry::new(),
            RunLimits::default(),
        )
        .unwrap();
        assert_eq!(static_cycles, oracle.result.hwclock, "case {case}: {words:08x?}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "scoreboard equivalence took {elapsed:?}, budget 5 s");
    println!("acceptance 4 (scoreboard vs oracle, 1000 random blocks, tolerance 0): PASS in {elapsed:?}");
}

/// Criterion 5: hwclock equals generated cycles plus flushed corrections on
/// every run (the RunResult constructor also asserts this on every run in
/// the whole suite).
#[test]
fn acceptance_5_ledger_conservation() {
    for name in ALL_PROGRAMS {
        let img = load_fixture(name);
        for level in LEVELS {
            for variant in [Variant::BlockOriented, Variant::InstructionOriented] {
                let prog = translate(&img, &desc(), level, variant).unwrap();
                let mut devices = devices_for(name);
                let r = tkbt_core::vtm::vm_run(&prog, &mut devices, RunLimits::default()).unwrap();
                assert_eq!(
                    r.hwclock,
                    r.breakdown.static_cycles_sum
                        + r.breakdown.branch_correction_sum
                        + r.breakdown.cache_correction_sum,
                    "{name} {level:?} {variant:?}"
                );
            }
        }
    }
    println!("acceptance 5 (ledger conservation, 8 programs x 3 levels x 2 variants): PASS");
}

/// Criterion 6: on 500 random programs, blocks partition the decoded
/// range, every edge targets a leader, and each block has at most one
/// control transfer, in last position.
#[test]
fn acceptance_6_cfg_partition_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xcf6);
    for case in 0..500 {
        let n = rng.random_range(2..=100usize);
        let mut words: Vec<u32> = Vec::with_capacity(n);
        for i in 0..n - 1 {
            let pick = rng.random_range(0..10u8);
            let word = match pick {
                // branch to a random instruction
                0 | 1 => {
                    let target = rng.random_range(0..n as i64);
                    let off = target - (i as i64 + 1);
                    encode_i(13 + rng.random_range(0..3u8), rng.random_range(0..16), rng.random_range(0..16), off as i32)
                }
                // jump or call to a random instruction
                2 => {
                    let target = rng.random_range(0..n as i64);
                    encode_j(16 + rng.random_range(0..2u8), (target - (i as i64 + 1)) as i32)
                }
                3 => encode_r(18, 0, rng.random_range(0..16), 0), // JR
                4 => 0,
                _ => encode_r(
                    rng.random_range(1..9u8),
                    rng.random_range(0..16),
                    rng.random_range(0..16),
                    rng.random_range(0..16),
                ),
            };
            words.push(word);
        }
        words.push(encode_r(19, 0, 0, 0));

        let image = ProgramImage {
            entry: 0,
            sections: vec![Section {
                name: ".text".into(),
                base: 0,
                data: words.iter().flat_map(|w| w.to_le_bytes()).collect(),
            }],
            symbols: Default::default(),
        };
        let ir = decode_program(&image, &desc()).unwrap();
        let blocks = build_cfg(&ir, 0).unwrap();

        let leaders: BTreeSet<u32> = blocks.iter().map(|b| b.start).collect();
        let mut covered = 0u64;
        let mut ranges: Vec<(u32, u32)> = Vec::new();
        for b in &blocks {
            assert!(!b.instrs.is_empty(), "case {case}: empty block");
            covered += (b.end - b.start) as u64;
            ranges.push((b.start, b.end));
            for (succ, _) in &b.successors {
                assert!(leaders.contains(&blocks[*succ].start), "case {case}: edge to non-leader");
            }
            let transfers = b.instrs.iter().filter(|i| i.op.is_control_transfer()).count();
            assert!(transfers <= 1, "case {case}: {transfers} transfers in one block");
            if transfers == 1 {
                assert!(
                    b.instrs.last().unwrap().op.is_control_transfer(),
                    "case {case}: transfer not last"
                );
            }
        }
        ranges.sort_unstable();
        for w in ranges.windows(2) {
            assert!(w[0].1 <= w[1].0, "case {case}: overlapping blocks");
        }
        assert_eq!(covered, words.len() as u64 * 4, "case {case}: blocks do not cover the range");
    }
    println!("acceptance 6 (CFG partition properties, 500 random programs): PASS");
}

/// Criterion 7: on the stall-free fixture, n single steps equal one
/// continue in hwclock and architectural state; on all fixtures, the state
/// after a debug trajectory equals the oracle's at the same stop address.
#[test]
fn acceptance_7_debug_consistency() {
    // n steps == one continue on the stall-free fixture, every level.
    let img = load_fixture("stepper");
    for level in LEVELS {
        let mut stepping =
            DebugSession::new(&img, &desc(), level, DeviceRegistry::new(), RunLimits::default()).unwrap();
        let mut steps = 0u64;
        while !stepping.halted() {
            stepping.step().unwrap();
            steps += 1;
        }
        let mut cont =
            DebugSession::new(&img, &desc(), level, DeviceRegistry::new(), RunLimits::default()).unwrap();
        assert_eq!(cont.cont().unwrap(), StopReason::Halted);
        assert_eq!(stepping.cycles(), cont.cycles(), "stepper {level:?}: {steps} steps vs continue");
        assert_eq!(stepping.regs(), cont.regs(), "stepper {level:?}");
        assert_eq!(stepping.memory_digest(), cont.memory_digest(), "stepper {level:?}");
    }

    // Both translations of the stall-free fixture produce identical totals
    // under plain execution too (the debug trap is a no-op there).
    for level in LEVELS {
        let block = translate(&img, &desc(), level, Variant::BlockOriented).unwrap();
        let instr = translate(&img, &desc(), level, Variant::InstructionOriented).unwrap();
        let a = tkbt_core::vtm::vm_run(&block, &mut DeviceRegistry::new(), RunLimits::default()).unwrap();
        let b = tkbt_core::vtm::vm_run(&instr, &mut DeviceRegistry::new(), RunLimits::default()).unwrap();
        assert_eq!(a.hwclock, b.hwclock, "variant totals at {level:?}");
        assert_eq!(a.registers, b.registers);
        assert_eq!(a.memory_digest, b.memory_digest);
    }

    // Mixed trajectories against the undisturbed interpreter on every
    // fixture: stop at the midpoint of the dynamic trace.
    for name in ALL_PROGRAMS {
        let img = load_fixture(name);
        let mut devices = devices_for(name);
        let traced = reference_run_with_stop(
            &img,
            &desc(),
            OracleConfig::for_level(DetailLevel::L2),
            &mut devices,
            RunLimits::default(),
            true,
            None,
        )
        .unwrap();
        let trace = traced.instr_trace.unwrap();
        let stop = trace[trace.len() / 2];

        let mut devices = devices_for(name);
        let reference = reference_run_with_stop(
            &img,
            &desc(),
            OracleConfig::for_level(DetailLevel::L2),
            &mut devices,
            RunLimits::default(),
            false,
            Some(stop),
        )
        .unwrap();

        let mut session =
            DebugSession::new(&img, &desc(), DetailLevel::L2, devices_for(name), RunLimits::default())
                .unwrap();
        // trajectory: a couple of single steps, then continue to the stop
        session.step().unwrap();
        if !session.halted() {
            session.step().unwrap();
        }
        session.set_breakpoint(stop).unwrap();
        match session.cont().unwrap() {
            StopReason::Breakpoint(at) => assert_eq!(at, stop, "{name}: stopped at wrong address"),
            other => panic!("{name}: expected breakpoint stop, got {other:?}"),
        }
        assert_eq!(session.regs(), reference.result.registers, "{name}: registers at {stop:#x}");
        assert_eq!(
            session.memory_digest(),
            reference.result.memory_digest,
            "{name}: memory at {stop:#x}"
        );
    }
    println!("acceptance 7 (debug consistency: steps==continue on stall-free fixture; trajectory state matches oracle on 8 fixtures): PASS");
}

/// Criterion 8: VTM bus-trace timestamps at L3 equal the block-flush full
/// oracle's transaction cycles for the I/O fixture.
#[test]
fn acceptance_8_bus_timing() {
    let img = load_fixture("uart_echo");
    let vm = run_vm_at("uart_echo", &img, DetailLevel::L3);
    let oracle = run_oracle_at("uart_echo", &img, OracleConfig::full_flush());
    assert!(!vm.bus_trace.is_empty(), "fixture must produce bus traffic");
    assert_eq!(vm.bus_trace, oracle.result.bus_trace, "bus traces differ");
    // Monotone timestamps over the recorded trace.
    for w in vm.bus_trace.windows(2) {
        assert!(w[0].hwclock <= w[1].hwclock);
    }
    println!(
        "acceptance 8 (bus timing, {} transactions, tolerance 0): PASS",
        vm.bus_trace.len()
    );
}

/// Criterion 9: the compare report shows zero deviation of L3 against the
/// block-flush full oracle, and host ops per instruction strictly increase
/// from L1 to L3.
#[test]
fn acceptance_9_report_sanity() {
    let programs: Vec<(String, LoadedImage)> = COMPARE_PROGRAMS
        .iter()
        .map(|n| (n.to_string(), load_fixture(n)))
        .collect();
    let reports = compare(&programs, &desc(), RunLimits::default()).unwrap();
    let csv = to_csv(&reports);
    assert_eq!(csv, to_csv(&compare(&programs, &desc(), RunLimits::default()).unwrap()), "CSV not deterministic");

    for (report, (name, img)) in reports.iter().zip(&programs) {
        let flush_full = run_oracle_at(name, img, OracleConfig::full_flush());
        assert_eq!(
            report.levels[2].cycles, flush_full.result.hwclock,
            "{name}: L3 deviates from the block-flush full oracle"
        );
        let per_instr: Vec<f64> =
            report.levels.iter().map(|l| l.host_ops as f64 / report.instr_count as f64).collect();
        assert!(
            per_instr[0] < per_instr[1] && per_instr[1] < per_instr[2],
            "{name}: host ops per instruction not strictly increasing: {per_instr:?}"
        );
    }
    println!("acceptance 9 (report sanity: L3 == block-flush oracle, host-op ordering): PASS");
}
