//! Cycle-accurate static binary translation for the TK32 ISA.
//!
//! The pipeline turns a TK32 program image into an annotated program for a
//! sequential virtual target machine (VTM) that generates source-processor
//! clock cycles alongside execution: per-block cycle generation through a
//! synchronization device, plus optional runtime correction for branch
//! outcomes and instruction-cache misses. An interpretive reference
//! simulator with matching accuracy modes serves as the ground truth.
//!
//! Stages: [`procdesc`] loads the processor description, [`image`] the
//! program image, [`frontend`] recovers the CFG and classifies I/O,
//! [`timing`] runs the per-block pipeline scoreboard, [`cachemodel`]
//! partitions blocks into cache analysis blocks, [`codegen`] emits the
//! annotated program, [`vtm`] executes it, [`oracle`] cross-checks it, and
//! [`debugger`] drives the dual translation for source-level debugging.

pub mod asm;
pub mod cachemodel;
pub mod codegen;
pub mod debugger;
pub mod frontend;
pub mod image;
pub mod oracle;
pub mod procdesc;
pub mod report;
pub mod timing;
pub mod vtm;

pub use cachemodel::{CacheAnalysisBlock, CacheState};
pub use codegen::{DetailLevel, TargetOp, TranslatedProgram, Variant};
pub use frontend::{BasicBlock, EdgeKind, IrInstruction, IrOp};
pub use image::{BusMap, LoadedImage, MemoryMap, ProgramImage};
pub use oracle::OracleConfig;
pub use procdesc::{CacheSpec, InstructionDef, ProcessorDescription};
pub use timing::BlockTiming;
pub use vtm::{Device, DeviceRegistry, RunLimits, RunResult};
