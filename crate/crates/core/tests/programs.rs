//! Functional results of the bundled programs against independently
//! computed expectations (direct reimplementations of each algorithm, not
//! the simulator path).

mod common;

use common::*;
use tkbt_core::codegen::DetailLevel;
use tkbt_core::debugger::{DebugSession, StopReason};
use tkbt_core::vtm::{DeviceRegistry, RunLimits, UartDevice};

/// Runs a fixture to completion under the debugger (block mode only) and
/// reads back memory words through the source-address map.
fn run_and_read(name: &str, addr: u32, words: usize) -> Vec<u32> {
    let img = load_fixture(name);
    let mut session =
        DebugSession::new(&img, &desc(), DetailLevel::L1, devices_for(name), RunLimits::default())
            .unwrap();
    assert_eq!(session.cont().unwrap(), StopReason::Halted);
    let bytes = session.read_mem(addr, 4 * words as u32).unwrap();
    bytes.chunks(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while a != b {
        if a > b {
            a -= b;
        } else {
            b -= a;
        }
    }
    a
}

#[test]
fn gcd_results() {
    let expect = [gcd(252, 105), gcd(1071, 462), gcd(17, 5)];
    assert_eq!(expect, [21, 21, 1]);
    assert_eq!(run_and_read("gcd", 0x1100, 3), expect);
}

#[test]
fn sieve_prime_count() {
    let mut flags = [true; 48];
    let mut count = 0;
    for i in 2..48usize {
        if flags[i] {
            count += 1;
            let mut j = 2 * i;
            while j < 48 {
                flags[j] = false;
                j += i;
            }
        }
    }
    assert_eq!(count, 15);
    assert_eq!(run_and_read("sieve", 0x11f0, 1), [count]);
}

#[test]
fn fir_output() {
    let c = [1i64, 2, 3, 4];
    let x = [8i64, 12, 7, 3, 9, 14, 6, 2, 11, 5, 13, 4, 10, 1, 15, 8];
    let mut y = vec![0u32; 16];
    for n in 3..16 {
        let acc: i64 = (0..4).map(|k| c[k] * x[n - k]).sum();
        y[n] = acc as u32;
    }
    // data layout: coeffs at 0x1000 (16 bytes), input at 0x1010 (64 bytes),
    // output at 0x1050
    assert_eq!(run_and_read("fir", 0x1050, 16), y[..].to_vec());
}

#[test]
fn biquad_output() {
    let x = [64u32, 128, 192, 255, 224, 160, 96, 48, 32, 80, 144, 208, 240, 176, 112, 56];
    let (mut x1, mut x2, mut y1, mut y2) = (0u32, 0, 0, 0);
    let mut y = Vec::new();
    for &xn in &x {
        let acc = 3 * xn + 2 * x1 + x2 + y1 + y2;
        let yn = acc >> 4;
        x2 = x1;
        x1 = xn;
        y2 = y1;
        y1 = yn;
        y.push(yn);
    }
    assert_eq!(run_and_read("biquad", 0x1040, 16), y);
}

#[test]
fn dpcm_output() {
    let x = [0u32, 3, 9, 18, 30, 45, 63, 84, 108, 135, 165, 198, 234, 273, 315, 360];
    let mut pred = 0u32;
    let mut q = Vec::new();
    for &xn in &x {
        let d = xn - pred;
        let qn = d >> 2;
        q.push(qn);
        pred += qn << 2;
    }
    assert_eq!(run_and_read("dpcm", 0x1040, 16), q);
}

#[test]
fn subband_output() {
    let x = [4u32, 6, 10, 14, 20, 26, 34, 42, 52, 62, 74, 86, 100, 114, 130, 146];
    let mut low = Vec::new();
    let mut high = Vec::new();
    for i in 0..8 {
        low.push((x[2 * i] + x[2 * i + 1]) >> 1);
        high.push((x[2 * i + 1] - x[2 * i]) >> 1);
    }
    assert_eq!(run_and_read("subband_stub", 0x1040, 8), low);
    assert_eq!(run_and_read("subband_stub", 0x1060, 8), high);
}

#[test]
fn uart_echo_captures_banner_and_echo() {
    let img = load_fixture("uart_echo");
    let prog =
        tkbt_core::codegen::translate(&img, &desc(), DetailLevel::L2, tkbt_core::codegen::Variant::BlockOriented)
            .unwrap();
    let mut devices = DeviceRegistry::new();
    devices.register("uart", Box::new(UartDevice::with_input(UART_SCRIPT))).unwrap();
    tkbt_core::vtm::vm_run(&prog, &mut devices, RunLimits::default()).unwrap();
    let uart = devices.get("uart").unwrap().as_any().downcast_ref::<UartDevice>().unwrap();
    let mut expected = vec![0x42u8];
    expected.extend_from_slice(UART_SCRIPT);
    assert_eq!(uart.output(), expected.as_slice());
}
