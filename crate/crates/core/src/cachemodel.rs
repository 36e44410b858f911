//! Instruction-cache model: cache analysis blocks (the slice of a basic
//! block that lies in one cache line), the runtime cache data layout
//! (valid|tag combined into one word, plus LRU ages per set), and the
//! hit/miss + true-LRU correction routine.

use crate::frontend::BasicBlock;
use crate::procdesc::CacheSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheAnalysisBlock {
    pub block: usize,
    pub tag: u32,
    pub index: u32,
    /// First and last instruction positions within the parent block,
    /// inclusive.
    pub first: usize,
    pub last: usize,
}

/// Splits an address into (tag, set index); the block offset is discarded.
pub fn cab_key(addr: u32, cfg: &CacheSpec) -> (u32, u32) {
    let line = addr >> cfg.offset_bits();
    let index = line & (cfg.sets - 1);
    let tag = line >> cfg.index_bits();
    (tag, index)
}

/// Partitions a block at every address where the (tag, index) pair
/// changes. Instruction addresses ascend by 4, so splits land exactly on
/// cache-line boundaries.
pub fn partition_cabs(block: &BasicBlock, cfg: &CacheSpec) -> Vec<CacheAnalysisBlock> {
    let mut out: Vec<CacheAnalysisBlock> = Vec::new();
    for (pos, ins) in block.instrs.iter().enumerate() {
        let (tag, index) = cab_key(ins.src_addr, cfg);
        match out.last_mut() {
            Some(cab) if cab.tag == tag && cab.index == index => cab.last = pos,
            _ => out.push(CacheAnalysisBlock { block: block.id, tag, index, first: pos, last: pos }),
        }
    }
    out
}

/// Runtime cache data: one combined word per way (bit 0 = valid, bits
/// [31:1] = tag) and one age word per way. Ages in a set are a permutation
/// of 0..ways-1 with 0 most recently used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheState {
    sets: u32,
    ways: u32,
    lines: Vec<u32>,
    ages: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessResult {
    pub hit: bool,
    pub extra_cycles: u64,
}

impl CacheState {
    pub fn line(&self, set: u32, way: u32) -> (bool, u32) {
        let w = self.lines[(set * self.ways + way) as usize];
        (w & 1 != 0, w >> 1)
    }

    pub fn age(&self, set: u32, way: u32) -> u32 {
        self.ages[(set * self.ways + way) as usize]
    }

    pub fn sets(&self) -> u32 {
        self.sets
    }

    pub fn ways(&self) -> u32 {
        self.ways
    }

    fn renew(&mut self, set: u32, way: u32) {
        let base = (set * self.ways) as usize;
        let old = self.ages[base + way as usize];
        for w in 0..self.ways as usize {
            if self.ages[base + w] < old {
                self.ages[base + w] += 1;
            }
        }
        self.ages[base + way as usize] = 0;
    }
}

/// All valid bits clear; ages initialized to the permutation 0..ways-1 per
/// set.
pub fn init_cache_region(cfg: &CacheSpec) -> CacheState {
    let n = (cfg.sets * cfg.ways) as usize;
    CacheState {
        sets: cfg.sets,
        ways: cfg.ways,
        lines: vec![0; n],
        ages: (0..n).map(|i| i as u32 % cfg.ways).collect(),
    }
}

/// Words reserved at the end of the translated program for the cache data:
/// one combined word plus one age word per way of every set.
pub fn region_words(cfg: &CacheSpec) -> usize {
    (cfg.sets * cfg.ways * 2) as usize
}

/// One lookup of the correction routine. On a hit the LRU information is
/// renewed and no extra cycles accrue; on a miss the LRU way is
/// overwritten with the new tag, its valid bit set, LRU renewed, and the
/// miss penalty is returned for the correction counter.
pub fn cache_access(state: &mut CacheState, tag: u32, index: u32, cfg: &CacheSpec) -> AccessResult {
    debug_assert!(index < state.sets);
    let base = (index * state.ways) as usize;
    for way in 0..state.ways {
        let word = state.lines[base + way as usize];
        if word & 1 != 0 && word >> 1 == tag {
            state.renew(index, way);
            return AccessResult { hit: true, extra_cycles: 0 };
        }
    }
    let victim = (0..state.ways)
        .find(|&w| state.ages[base + w as usize] == state.ways - 1)
        .expect("ages form a permutation");
    state.lines[base + victim as usize] = (tag << 1) | 1;
    state.renew(index, victim);
    AccessResult { hit: false, extra_cycles: cfg.miss_penalty as u64 }
}

/// CSV of block id, CAB index, tag, set.
pub fn dump_cabs(cabs_per_block: &[Vec<CacheAnalysisBlock>]) -> String {
    let mut out = String::from("block,cab,tag,set\n");
    for cabs in cabs_per_block {
        for (i, cab) in cabs.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", cab.block, i, cab.tag, cab.index));
        }
    }
    out
}
