//! Shared helpers for the integration suites.

use std::fs;
use std::path::PathBuf;

use tkbt_core::codegen::{translate, DetailLevel, Variant};
use tkbt_core::image::{load_image, LoadedImage};
use tkbt_core::oracle::{reference_run, OracleConfig, OracleOutcome};
use tkbt_core::procdesc::{tk32, ProcessorDescription};
use tkbt_core::vtm::{vm_run, DeviceRegistry, RunLimits, RunResult, UartDevice};

pub const COMPARE_PROGRAMS: &[&str] = &["gcd", "sieve", "fir", "biquad", "dpcm", "subband_stub"];
pub const ALL_PROGRAMS: &[&str] =
    &["gcd", "sieve", "fir", "biquad", "dpcm", "subband_stub", "uart_echo", "stepper"];

pub const UART_SCRIPT: &[u8] = b"hello, tk32";

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn desc() -> ProcessorDescription {
    tk32()
}

pub fn load_fixture(name: &str) -> LoadedImage {
    let doc = fs::read_to_string(fixtures_dir().join(format!("{name}.img"))).unwrap();
    load_image(&doc).unwrap()
}

/// Device set for a fixture; uart_echo gets a scripted uart.
pub fn devices_for(name: &str) -> DeviceRegistry {
    let mut devices = DeviceRegistry::new();
    if name == "uart_echo" {
        devices.register("uart", Box::new(UartDevice::with_input(UART_SCRIPT))).unwrap();
    }
    devices
}

pub fn run_vm_at(name: &str, img: &LoadedImage, level: DetailLevel) -> RunResult {
    let prog = translate(img, &desc(), level, Variant::BlockOriented).unwrap();
    let mut devices = devices_for(name);
    vm_run(&prog, &mut devices, RunLimits::default()).unwrap()
}

pub fn run_oracle_at(name: &str, img: &LoadedImage, cfg: OracleConfig) -> OracleOutcome {
    let mut devices = devices_for(name);
    reference_run(img, &desc(), cfg, &mut devices, RunLimits::default()).unwrap()
}

pub const LEVELS: [DetailLevel; 3] = [DetailLevel::L1, DetailLevel::L2, DetailLevel::L3];
