//! Deviation and speed reporting: per program, the continuous full-model
//! oracle cycle count, the translated cycle count and host-op count at
//! every detail level, and the deviations, as a schema-stable CSV.

use crate::codegen::{translate, DetailLevel, Variant};
use crate::image::LoadedImage;
use crate::oracle::{reference_run, OracleConfig, OracleError};
use crate::procdesc::ProcessorDescription;
use crate::vtm::{vm_run, DeviceRegistry, RunLimits};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelFigures {
    pub cycles: u64,
    pub deviation: f64,
    pub host_ops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramReport {
    pub program: String,
    /// Dynamically executed source instructions (continuous full oracle).
    pub instr_count: u64,
    /// Continuous full-model oracle cycles, the deviation reference.
    pub oracle_cycles: u64,
    pub levels: [LevelFigures; 3],
}

pub const CSV_HEADER: &str = "program,instr_count,oracle_cycles,l1_cycles,l1_dev,l2_cycles,l2_dev,l3_cycles,l3_dev,l1_hostops,l2_hostops,l3_hostops";

/// Runs the full pipeline for one program at every level plus the oracle
/// reference. Programs must be self-contained (no bus devices needed).
pub fn report_program(
    name: &str,
    img: &LoadedImage,
    desc: &ProcessorDescription,
    limits: RunLimits,
) -> Result<ProgramReport, OracleError> {
    let oracle = reference_run(img, desc, OracleConfig::full_continuous(), &mut DeviceRegistry::new(), limits)?;
    let oracle_cycles = oracle.result.hwclock;

    let mut levels = Vec::with_capacity(3);
    for level in [DetailLevel::L1, DetailLevel::L2, DetailLevel::L3] {
        let prog = translate(img, desc, level, Variant::BlockOriented)?;
        let run = vm_run(&prog, &mut DeviceRegistry::new(), limits)?;
        let deviation = if oracle_cycles == 0 {
            0.0
        } else {
            (run.hwclock as f64 - oracle_cycles as f64).abs() / oracle_cycles as f64
        };
        levels.push(LevelFigures { cycles: run.hwclock, deviation, host_ops: run.host_ops });
    }

    Ok(ProgramReport {
        program: name.to_string(),
        instr_count: oracle.executed,
        oracle_cycles,
        levels: [levels[0], levels[1], levels[2]],
    })
}

pub fn compare(
    programs: &[(String, LoadedImage)],
    desc: &ProcessorDescription,
    limits: RunLimits,
) -> Result<Vec<ProgramReport>, OracleError> {
    programs
        .iter()
        .map(|(name, img)| report_program(name, img, desc, limits))
        .collect()
}

pub fn to_csv(reports: &[ProgramReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let [l1, l2, l3] = &r.levels;
        out.push_str(&format!(
            "{},{},{},{},{:.6},{},{:.6},{},{:.6},{},{},{}\n",
            r.program,
            r.instr_count,
            r.oracle_cycles,
            l1.cycles,
            l1.deviation,
            l2.cycles,
            l2.deviation,
            l3.cycles,
            l3.deviation,
            l1.host_ops,
            l2.host_ops,
            l3.host_ops,
        ));
    }
    out
}
