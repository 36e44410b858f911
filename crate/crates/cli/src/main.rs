//! tkbt: cycle-accurate static binary translation for the TK32 ISA.
//!
//! Exit codes: 0 ok, 1 usage, 2 input error, 3 runtime error.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use tkbt_core::cachemodel::{dump_cabs, partition_cabs};
use tkbt_core::codegen::{analyze, emit_program, DetailLevel, TranslatedProgram, Variant};
use tkbt_core::debugger::{serve, DebugSession};
use tkbt_core::frontend::dump_cfg;
use tkbt_core::image::{load_image, store_image, LoadedImage};
use tkbt_core::oracle::{reference_run, OracleConfig};
use tkbt_core::procdesc::{load_description, ProcessorDescription};
use tkbt_core::report::{compare, to_csv};
use tkbt_core::timing::dump_timing;
use tkbt_core::vtm::{
    trace_to_csv, vm_run, CounterDevice, DeviceRegistry, NullDevice, RunLimits, RunResult,
    UartDevice,
};

#[derive(Parser)]
#[command(name = "tkbt", version, about = "Cycle-accurate static binary translator and virtual target machine for the TK32 ISA")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Translate a program image into an annotated program
    Translate(TranslateArgs),
    /// Execute a translated program on the virtual target machine
    Run(RunArgs),
    /// Run the interpretive reference simulator
    Oracle(OracleArgs),
    /// Report cycles, deviations and host-op counts per detail level
    Compare(CompareArgs),
    /// Interactive source-level debugging over stdio
    Debug(DebugArgs),
    /// Assemble a TK32 text program into an image manifest
    Asm(AsmArgs),
}

#[derive(Args)]
struct TranslateArgs {
    /// Program image manifest
    #[arg(long)]
    image: PathBuf,
    /// Processor description
    #[arg(long)]
    desc: PathBuf,
    /// Accuracy detail level (1 static, 2 +branch, 3 +icache)
    #[arg(long)]
    level: u8,
    /// block | instr
    #[arg(long, default_value = "block")]
    variant: String,
    /// Output path for the translated program (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print blocks and edges
    #[arg(long)]
    dump_cfg: bool,
    /// Print per-block static cycles as CSV
    #[arg(long)]
    dump_timing: bool,
    /// Print cache analysis blocks as CSV
    #[arg(long)]
    dump_cabs: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Previously translated program (JSON)
    #[arg(long, conflicts_with_all = ["image", "desc", "level"])]
    translated: Option<PathBuf>,
    /// Program image to translate and run
    #[arg(long, requires = "desc", requires = "level")]
    image: Option<PathBuf>,
    #[arg(long)]
    desc: Option<PathBuf>,
    #[arg(long)]
    level: Option<u8>,
    /// Register a bus device: name=null|counter|uart[:hexbytes]
    #[arg(long = "device")]
    devices: Vec<String>,
    /// Write the bus trace as CSV
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000_000)]
    max_ops: u64,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    desc: PathBuf,
    /// Clear pipeline state at block boundaries (default)
    #[arg(long, conflicts_with = "continuous")]
    flush: bool,
    /// Carry pipeline state across blocks
    #[arg(long)]
    continuous: bool,
    /// on | off
    #[arg(long, default_value = "off")]
    branch: String,
    /// on | off
    #[arg(long, default_value = "off")]
    icache: String,
    #[arg(long = "device")]
    devices: Vec<String>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000_000)]
    max_ops: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    desc: PathBuf,
    /// Output CSV path (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000_000)]
    max_ops: u64,
    /// Program images
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct DebugArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    desc: PathBuf,
    #[arg(long)]
    level: u8,
    #[arg(long = "device")]
    devices: Vec<String>,
    #[arg(long, default_value_t = 100_000_000)]
    max_ops: u64,
}

#[derive(Args)]
struct AsmArgs {
    /// Assembly source
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    desc: PathBuf,
    /// Output image manifest (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Input(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn load_desc(path: &Path) -> Result<ProcessorDescription, CliError> {
    load_description(&read_file(path)?).map_err(input_err)
}

fn load_img(path: &Path) -> Result<LoadedImage, CliError> {
    load_image(&read_file(path)?).map_err(input_err)
}

fn parse_level(n: u8) -> Result<DetailLevel, CliError> {
    DetailLevel::from_number(n).ok_or_else(|| input_err(format!("level must be 1, 2 or 3, got {n}")))
}

fn decode_hex(s: &str) -> Result<Vec<u8>, String> {
    if s.len() % 2 != 0 {
        return Err("odd number of hex digits".into());
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|e| e.to_string()))
        .collect()
}

fn parse_devices(specs: &[String]) -> Result<DeviceRegistry, CliError> {
    let mut registry = DeviceRegistry::new();
    for spec in specs {
        let (name, kind) = spec
            .split_once('=')
            .ok_or_else(|| input_err(format!("device spec {spec:?} is not name=kind")))?;
        let (kind, payload) = match kind.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (kind, None),
        };
        let device: Box<dyn tkbt_core::vtm::Device> = match kind {
            "null" => Box::new(NullDevice),
            "counter" => Box::new(CounterDevice::default()),
            "uart" => match payload {
                Some(hexbytes) => Box::new(UartDevice::with_input(
                    &decode_hex(hexbytes)
                        .map_err(|e| input_err(format!("device {name}: bad hex input: {e}")))?,
                )),
                None => Box::new(UartDevice::default()),
            },
            other => return Err(input_err(format!("unknown device kind {other}"))),
        };
        registry.register(name, device).map_err(input_err)?;
    }
    Ok(registry)
}

fn print_run_result(r: &RunResult) {
    println!("hwclock {}", r.hwclock);
    println!("host_ops {}", r.host_ops);
    println!(
        "static {} branch {} cache {}",
        r.breakdown.static_cycles_sum, r.breakdown.branch_correction_sum, r.breakdown.cache_correction_sum
    );
    let regs: Vec<String> =
        r.registers.iter().enumerate().map(|(i, v)| format!("r{i}={v:08x}")).collect();
    println!("{}", regs.join(" "));
    println!("memory {}", r.memory_digest);
}

fn write_trace(path: &Option<PathBuf>, r: &RunResult) -> Result<(), CliError> {
    if let Some(path) = path {
        write_file(path, &trace_to_csv(&r.bus_trace))?;
    }
    Ok(())
}

fn cmd_translate(args: &TranslateArgs) -> Result<(), CliError> {
    let desc = load_desc(&args.desc)?;
    let img = load_img(&args.image)?;
    let level = parse_level(args.level)?;
    let variant = match args.variant.as_str() {
        "block" => Variant::BlockOriented,
        "instr" => Variant::InstructionOriented,
        other => return Err(input_err(format!("variant must be block or instr, got {other}"))),
    };

    let analyzed = analyze(&img, &desc).map_err(input_err)?;
    if args.dump_cfg {
        print!("{}", dump_cfg(&analyzed.blocks));
    }
    if args.dump_timing {
        print!("{}", dump_timing(&analyzed.timings));
    }
    if args.dump_cabs {
        let cache = desc.icache.as_ref().ok_or_else(|| {
            input_err("--dump-cabs needs an icache spec in the processor description")
        })?;
        let cabs: Vec<_> = analyzed.blocks.iter().map(|b| partition_cabs(b, cache)).collect();
        print!("{}", dump_cabs(&cabs));
    }

    let prog = emit_program(&analyzed.blocks, &analyzed.timings, level, &desc, variant, &img)
        .map_err(input_err)?;
    let doc = prog.to_json();
    match &args.out {
        Some(path) => write_file(path, &doc)?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let prog = match (&args.translated, &args.image) {
        (Some(path), None) => TranslatedProgram::from_json(&read_file(path)?).map_err(input_err)?,
        (None, Some(image)) => {
            let desc = load_desc(args.desc.as_ref().expect("clap requires"))?;
            let img = load_img(image)?;
            let level = parse_level(args.level.expect("clap requires"))?;
            tkbt_core::codegen::translate(&img, &desc, level, Variant::BlockOriented)
                .map_err(input_err)?
        }
        _ => return Err(input_err("run needs exactly one of --translated or --image")),
    };
    let mut devices = parse_devices(&args.devices)?;
    let result =
        vm_run(&prog, &mut devices, RunLimits { max_ops: args.max_ops }).map_err(runtime_err)?;
    print_run_result(&result);
    write_trace(&args.trace_out, &result)
}

fn parse_switch(value: &str, flag: &str) -> Result<bool, CliError> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(input_err(format!("--{flag} must be on or off, got {other}"))),
    }
}

fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    let desc = load_desc(&args.desc)?;
    let img = load_img(&args.image)?;
    let cfg = OracleConfig {
        block_flush: !args.continuous,
        model_branch: parse_switch(&args.branch, "branch")?,
        model_icache: parse_switch(&args.icache, "icache")?,
        continuous: args.continuous,
    };
    let mut devices = parse_devices(&args.devices)?;
    let out = reference_run(&img, &desc, cfg, &mut devices, RunLimits { max_ops: args.max_ops })
        .map_err(runtime_err)?;
    println!("instructions {}", out.executed);
    print_run_result(&out.result);
    write_trace(&args.trace_out, &out.result)
}

fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let desc = load_desc(&args.desc)?;
    let mut programs = Vec::new();
    for path in &args.images {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        programs.push((name, load_img(path)?));
    }
    let reports =
        compare(&programs, &desc, RunLimits { max_ops: args.max_ops }).map_err(runtime_err)?;
    let csv = to_csv(&reports);
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_debug(args: &DebugArgs) -> Result<(), CliError> {
    let desc = load_desc(&args.desc)?;
    let img = load_img(&args.image)?;
    let level = parse_level(args.level)?;
    let devices = parse_devices(&args.devices)?;
    let mut session =
        DebugSession::new(&img, &desc, level, devices, RunLimits { max_ops: args.max_ops })
            .map_err(input_err)?;
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve(&mut session, BufReader::new(stdin.lock()), stdout.lock()).map_err(runtime_err)
}

fn cmd_asm(args: &AsmArgs) -> Result<(), CliError> {
    let desc = load_desc(&args.desc)?;
    let source = read_file(&args.input)?;
    let img = tkbt_core::asm::assemble(&source, &desc).map_err(input_err)?;
    let doc = store_image(&img);
    match &args.out {
        Some(path) => write_file(path, &doc)?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{e}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.cmd {
        Cmd::Translate(args) => cmd_translate(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Oracle(args) => cmd_oracle(args),
        Cmd::Compare(args) => cmd_compare(args),
        Cmd::Debug(args) => cmd_debug(args),
        Cmd::Asm(args) => cmd_asm(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "tkbt: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
