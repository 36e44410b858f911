//! Program images and the memory/bus maps used for address remapping and
//! I/O classification. An image file is a JSON manifest with hex-encoded
//! section bytes; sections whose name starts with `.text` are executable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("overlap: {0}")]
    Overlap(String),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("entry: {0}")]
    Entry(String),
    #[error("map: {0}")]
    Map(String),
}

pub(crate) mod hex_u32 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u32, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:#x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
        let s = String::deserialize(d)?;
        let digits = s
            .strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .ok_or_else(|| serde::de::Error::custom(format!("expected 0x-prefixed hex, got {s:?}")))?;
        u32::from_str_radix(digits, 16)
            .map_err(|e| serde::de::Error::custom(format!("bad hex value {s:?}: {e}")))
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(|e| serde::de::Error::custom(format!("bad hex data: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub name: String,
    #[serde(with = "hex_u32")]
    pub base: u32,
    #[serde(with = "hex_bytes")]
    pub data: Vec<u8>,
}

impl Section {
    pub fn end(&self) -> u32 {
        self.base + self.data.len() as u32
    }

    pub fn is_executable(&self) -> bool {
        self.name.starts_with(".text")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramImage {
    pub entry: u32,
    pub sections: Vec<Section>,
    pub symbols: BTreeMap<String, u32>,
}

impl ProgramImage {
    /// Reads the 32-bit little-endian word at `addr` from whichever section
    /// contains it.
    pub fn word_at(&self, addr: u32) -> Option<u32> {
        let sec = self.sections.iter().find(|s| addr >= s.base && addr + 4 <= s.end())?;
        let off = (addr - sec.base) as usize;
        Some(u32::from_le_bytes(sec.data[off..off + 4].try_into().unwrap()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Ram,
    Rom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemRegion {
    #[serde(with = "hex_u32")]
    pub src_base: u32,
    #[serde(with = "hex_u32")]
    pub src_end: u32,
    #[serde(with = "hex_u32")]
    pub dst_base: u32,
    pub kind: RegionKind,
}

impl MemRegion {
    pub fn len(&self) -> u32 {
        self.src_end - self.src_base
    }
    pub fn is_empty(&self) -> bool {
        self.src_end == self.src_base
    }
    pub fn dst_end(&self) -> u32 {
        self.dst_base + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryMap {
    pub regions: Vec<MemRegion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoRegion {
    #[serde(with = "hex_u32")]
    pub base: u32,
    #[serde(with = "hex_u32")]
    pub end: u32,
    pub device: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusMap {
    pub io_regions: Vec<IoRegion>,
}

/// A loaded image manifest: program bytes plus its address maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedImage {
    pub image: ProgramImage,
    pub memory: MemoryMap,
    pub bus: BusMap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classified<'a> {
    /// Address falls in a memory region; carries the remapped destination
    /// address.
    Memory(u32),
    /// Address falls in an I/O region; carries the device name and the
    /// offset within the region.
    Io { device: &'a str, offset: u32 },
    Unmapped,
}

/// Total classification of a source address against the two maps. Memory
/// and I/O regions are validated disjoint, so the result is a partition.
pub fn classify_address<'a>(mem: &MemoryMap, bus: &'a BusMap, addr: u32) -> Classified<'a> {
    for r in &mem.regions {
        if addr >= r.src_base && addr < r.src_end {
            return Classified::Memory(r.dst_base + (addr - r.src_base));
        }
    }
    for io in &bus.io_regions {
        if addr >= io.base && addr < io.end {
            return Classified::Io { device: &io.device, offset: addr - io.base };
        }
    }
    Classified::Unmapped
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageDoc {
    #[serde(with = "hex_u32")]
    entry: u32,
    sections: Vec<Section>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    symbols: BTreeMap<String, HexValue>,
    #[serde(default, skip_serializing_if = "MemoryMap::is_empty")]
    memory_map: MemoryMap,
    #[serde(default, skip_serializing_if = "BusMap::is_empty")]
    bus_map: BusMap,
}

impl MemoryMap {
    fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

impl BusMap {
    fn is_empty(&self) -> bool {
        self.io_regions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
struct HexValue(#[serde(with = "hex_u32")] u32);

fn ranges_overlap(a: (u32, u32), b: (u32, u32)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

fn validate(doc: &ImageDoc) -> Result<(), ImageError> {
    for s in &doc.sections {
        if s.base % 4 != 0 {
            return Err(ImageError::Alignment(format!("section {} base {:#x} not 4-aligned", s.name, s.base)));
        }
        if s.data.len() % 4 != 0 {
            return Err(ImageError::Alignment(format!(
                "section {} size {} not a multiple of 4",
                s.name,
                s.data.len()
            )));
        }
        if s.base.checked_add(s.data.len() as u32).is_none() {
            return Err(ImageError::Overlap(format!("section {} wraps the address space", s.name)));
        }
    }
    for (i, a) in doc.sections.iter().enumerate() {
        for b in &doc.sections[i + 1..] {
            if ranges_overlap((a.base, a.end()), (b.base, b.end())) {
                return Err(ImageError::Overlap(format!("sections {} and {} overlap", a.name, b.name)));
            }
        }
    }
    let entry_ok = doc
        .sections
        .iter()
        .any(|s| s.is_executable() && doc.entry >= s.base && doc.entry < s.end());
    if !entry_ok {
        return Err(ImageError::Entry(format!(
            "entry {:#x} is not inside an executable section",
            doc.entry
        )));
    }
    if doc.entry % 4 != 0 {
        return Err(ImageError::Alignment(format!("entry {:#x} not 4-aligned", doc.entry)));
    }

    let regions = &doc.memory_map.regions;
    for r in regions {
        if r.src_end < r.src_base {
            return Err(ImageError::Map(format!("region [{:#x},{:#x}) is inverted", r.src_base, r.src_end)));
        }
        if r.dst_base.checked_add(r.len()).is_none() {
            return Err(ImageError::Map(format!("region at {:#x} wraps destination space", r.src_base)));
        }
    }
    for (i, a) in regions.iter().enumerate() {
        for b in &regions[i + 1..] {
            if ranges_overlap((a.src_base, a.src_end), (b.src_base, b.src_end)) {
                return Err(ImageError::Map(format!(
                    "memory regions overlap in source space at {:#x}",
                    b.src_base.max(a.src_base)
                )));
            }
            if ranges_overlap((a.dst_base, a.dst_end()), (b.dst_base, b.dst_end())) {
                return Err(ImageError::Map(format!(
                    "memory regions overlap in destination space at {:#x}",
                    b.dst_base.max(a.dst_base)
                )));
            }
        }
    }
    let ios = &doc.bus_map.io_regions;
    for (i, a) in ios.iter().enumerate() {
        if a.end < a.base {
            return Err(ImageError::Map(format!("io region [{:#x},{:#x}) is inverted", a.base, a.end)));
        }
        for b in &ios[i + 1..] {
            if ranges_overlap((a.base, a.end), (b.base, b.end)) {
                return Err(ImageError::Map(format!("io regions {} and {} overlap", a.device, b.device)));
            }
        }
        for r in regions {
            if ranges_overlap((a.base, a.end), (r.src_base, r.src_end)) {
                return Err(ImageError::Map(format!(
                    "io region {} overlaps memory region at {:#x}",
                    a.device, r.src_base
                )));
            }
        }
    }
    Ok(())
}

/// Parses and validates an image manifest.
pub fn load_image(document: &str) -> Result<LoadedImage, ImageError> {
    let doc: ImageDoc = serde_json::from_str(document).map_err(|e| ImageError::Schema(e.to_string()))?;
    validate(&doc)?;
    Ok(LoadedImage {
        image: ProgramImage {
            entry: doc.entry,
            sections: doc.sections,
            symbols: doc.symbols.into_iter().map(|(k, v)| (k, v.0)).collect(),
        },
        memory: doc.memory_map,
        bus: doc.bus_map,
    })
}

/// Serializes a loaded image back to its manifest form. Output is
/// deterministic; `load_image(store_image(x)) == x`.
pub fn store_image(img: &LoadedImage) -> String {
    let doc = ImageDoc {
        entry: img.image.entry,
        sections: img.image.sections.clone(),
        symbols: img.image.symbols.iter().map(|(k, v)| (k.clone(), HexValue(*v))).collect(),
        memory_map: img.memory.clone(),
        bus_map: img.bus.clone(),
    };
    let mut out = serde_json::to_string_pretty(&doc).unwrap();
    out.push('\n');
    out
}
