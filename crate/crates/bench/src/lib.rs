//! Fixture loading shared by the benchmark targets.

use std::fs;
use std::path::PathBuf;

use tkbt_core::image::{load_image, LoadedImage};
use tkbt_core::procdesc::{tk32, ProcessorDescription};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn load_fixture(name: &str) -> LoadedImage {
    let doc = fs::read_to_string(fixtures_dir().join(format!("{name}.img"))).unwrap();
    load_image(&doc).unwrap()
}

pub fn desc() -> ProcessorDescription {
    tk32()
}
