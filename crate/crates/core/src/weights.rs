//! Named weight tensors and the `RTMD` binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RTMD" | u16 version (=1) | u32 entry count
//! per entry:
//!   u16 name length | UTF-8 name | u8 dtype (0 = f32, 1 = f16) | u8 rank
//!   rank x u32 extents | raw little-endian element data
//! ```
//!
//! Conv slots store two entries, `<slot>.weight` with extents (O, I, 3, 3)
//! and `<slot>.bias` with extents (O).

use std::collections::{HashMap, HashSet};
use std::path::Path;

use half::f16;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ArchConfig;
use crate::error::{BindError, ConfigError, WeightsError};
use crate::network::{layer_plan, Network};
use crate::tensor::ConvWeights;

pub const MAGIC: [u8; 4] = *b"RTMD";
pub const VERSION: u16 = 1;
pub const MAX_RANK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F16 = 1,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightData {
    F32(Vec<f32>),
    F16(Vec<f16>),
}

impl WeightData {
    pub fn dtype(&self) -> DType {
        match self {
            WeightData::F32(_) => DType::F32,
            WeightData::F16(_) => DType::F16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            WeightData::F32(v) => v.len(),
            WeightData::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to f32.
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            WeightData::F32(v) => v.clone(),
            WeightData::F16(v) => v.iter().map(|h| h.to_f32()).collect(),
        }
    }

    /// Bitwise equality (distinguishes NaN payloads and signed zeros).
    fn bits_eq(&self, other: &WeightData) -> bool {
        match (self, other) {
            (WeightData::F32(a), WeightData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (WeightData::F16(a), WeightData::F16(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub extents: Vec<usize>,
    pub data: WeightData,
}

impl WeightEntry {
    pub fn new(
        name: impl Into<String>,
        extents: Vec<usize>,
        data: WeightData,
    ) -> Result<Self, WeightsError> {
        let name = name.into();
        if extents.len() > MAX_RANK {
            return Err(WeightsError::Rank {
                name,
                rank: extents.len() as u8,
            });
        }
        let expected = extents
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| WeightsError::ExtentOverflow {
                name: name.clone(),
                extents: extents.iter().map(|&e| e as u64).collect(),
            })?;
        if expected != data.len() {
            return Err(WeightsError::DataLength {
                name,
                extents,
                expected,
                actual: data.len(),
            });
        }
        Ok(WeightEntry {
            name,
            extents,
            data,
        })
    }

    pub fn f32(
        name: impl Into<String>,
        extents: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self, WeightsError> {
        Self::new(name, extents, WeightData::F32(values))
    }
}

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, Default)]
pub struct WeightStore {
    entries: Vec<WeightEntry>,
    index: HashMap<String, usize>,
}

impl PartialEq for WeightStore {
    /// Bitwise comparison of names, extents, dtypes and payloads, in order.
    fn eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.extents == b.extents && a.data.bits_eq(&b.data))
    }
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: WeightEntry) -> Result<(), WeightsError> {
        if self.index.contains_key(&entry.name) {
            return Err(WeightsError::DuplicateName(entry.name));
        }
        self.index.insert(entry.name.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    /// Removes an entry, keeping the order of the rest.
    pub fn remove(&mut self, name: &str) -> Option<WeightEntry> {
        let i = self.index.remove(name)?;
        let entry = self.entries.remove(i);
        for idx in self.index.values_mut() {
            if *idx > i {
                *idx -= 1;
            }
        }
        Some(entry)
    }

    pub fn entries(&self) -> &[WeightEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Converts every f32 entry to f16 (round to nearest).
    pub fn to_f16(&self) -> WeightStore {
        let mut out = WeightStore::new();
        for e in &self.entries {
            let data = match &e.data {
                WeightData::F32(v) => {
                    WeightData::F16(v.iter().map(|&x| f16::from_f32(x)).collect())
                }
                other => other.clone(),
            };
            out.insert(WeightEntry {
                name: e.name.clone(),
                extents: e.extents.clone(),
                data,
            })
            .expect("names already unique");
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, WeightsError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            let name_len =
                u16::try_from(name.len()).map_err(|_| WeightsError::NameTooLong(e.name.clone()))?;
            buf.extend_from_slice(&name_len.to_le_bytes());
            buf.extend_from_slice(name);
            buf.push(e.data.dtype() as u8);
            buf.push(e.extents.len() as u8);
            for &x in &e.extents {
                let x = u32::try_from(x).map_err(|_| WeightsError::ExtentOverflow {
                    name: e.name.clone(),
                    extents: e.extents.iter().map(|&v| v as u64).collect(),
                })?;
                buf.extend_from_slice(&x.to_le_bytes());
            }
            match &e.data {
                WeightData::F32(v) => v
                    .iter()
                    .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
                WeightData::F16(v) => v
                    .iter()
                    .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(WeightsError::BadMagic(magic));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(WeightsError::Version(version));
        }
        let count = r.u32()?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| WeightsError::NameUtf8)?
                .to_string();
            let code = r.u8()?;
            let dtype = match code {
                0 => DType::F32,
                1 => DType::F16,
                code => return Err(WeightsError::Dtype { name, code }),
            };
            let rank = r.u8()?;
            if rank as usize > MAX_RANK {
                return Err(WeightsError::Rank { name, rank });
            }
            let extents: Vec<u64> = (0..rank)
                .map(|_| r.u32().map(u64::from))
                .collect::<Result<_, _>>()?;
            let overflow = || WeightsError::ExtentOverflow {
                name: name.clone(),
                extents: extents.clone(),
            };
            let elements = extents
                .iter()
                .try_fold(1u64, |acc, &e| acc.checked_mul(e))
                .ok_or_else(overflow)?;
            let byte_len = elements
                .checked_mul(dtype.size() as u64)
                .filter(|&n| n <= usize::MAX as u64)
                .ok_or_else(overflow)? as usize;
            let raw = r.take(byte_len)?;
            let data = match dtype {
                DType::F32 => WeightData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                DType::F16 => WeightData::F16(
                    raw.chunks_exact(2)
                        .map(|c| f16::from_le_bytes(c.try_into().expect("2 bytes")))
                        .collect(),
                ),
            };
            store.insert(WeightEntry {
                name,
                extents: extents.iter().map(|&e| e as usize).collect(),
                data,
            })?;
        }
        if r.pos != bytes.len() {
            return Err(WeightsError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(WeightsError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, WeightsError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WeightsError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let path = path.as_ref();
    let bytes = store.to_bytes()?;
    std::fs::write(path, bytes).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore, WeightsError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    WeightStore::from_bytes(&bytes)
}

pub fn weight_name(slot: &str) -> String {
    format!("{slot}.weight")
}

pub fn bias_name(slot: &str) -> String {
    format!("{slot}.bias")
}

/// 64-bit FNV-1a, used to give every slot its own PRNG stream.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// He-normal kernels (std `sqrt(2 / fan_in)`) and zero biases.
///
/// Each slot draws from a ChaCha8 stream seeded by `seed` and the slot name,
/// so a slot's values do not depend on which other slots the config has.
pub fn init_random(cfg: &ArchConfig, seed: u64) -> Result<WeightStore, ConfigError> {
    let mut store = WeightStore::new();
    for layer in layer_plan(cfg)? {
        let fan_in = layer.in_channels * 9;
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&layer.slot));
        let extents = layer.kernel_extents();
        let n: usize = extents.iter().product();
        let kernel: Vec<f32> = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
        let entries = [
            WeightEntry::f32(weight_name(&layer.slot), extents.to_vec(), kernel),
            WeightEntry::f32(
                bias_name(&layer.slot),
                vec![layer.out_channels],
                vec![0.0; layer.out_channels],
            ),
        ];
        for e in entries {
            store
                .insert(e.expect("extents match data"))
                .expect("slot names are unique");
        }
    }
    Ok(store)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BindOptions {
    /// Ignore (with a warning) store entries that match no slot.
    pub allow_extra: bool,
}

/// Attaches every slot's kernel and bias from `store`, checking extents exactly.
pub fn bind(
    mut net: Network,
    store: &WeightStore,
    opts: BindOptions,
) -> Result<Network, BindError> {
    let mut used = HashSet::new();
    for layer in net.slots_mut() {
        let slot = layer.info.slot.clone();
        let fetch = |name: String, expected: Vec<usize>| -> Result<Vec<f32>, BindError> {
            let entry = store.get(&name).ok_or_else(|| BindError::Missing {
                slot: slot.clone(),
                entry: name.clone(),
            })?;
            if entry.extents != expected {
                return Err(BindError::Extents {
                    slot: slot.clone(),
                    entry: name,
                    expected,
                    actual: entry.extents.clone(),
                });
            }
            Ok(entry.data.to_f32())
        };
        let wname = weight_name(&slot);
        let bname = bias_name(&slot);
        let kernel = fetch(wname.clone(), layer.info.kernel_extents().to_vec())?;
        let bias = fetch(bname.clone(), vec![layer.info.out_channels])?;
        let w = ConvWeights::new(
            layer.info.out_channels,
            layer.info.in_channels,
            kernel,
            bias,
        )
        .expect("extents checked above");
        layer.set_weights(w);
        used.insert(wname);
        used.insert(bname);
    }
    let extra: Vec<String> = store
        .entries()
        .iter()
        .filter(|e| !used.contains(&e.name))
        .map(|e| e.name.clone())
        .collect();
    if !extra.is_empty() {
        if !opts.allow_extra {
            return Err(BindError::Extra(extra));
        }
        log::warn!(
            "ignoring {} unused weight entries: {:?}",
            extra.len(),
            extra
        );
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ArchConfig {
        ArchConfig {
            variant: "tiny".into(),
            levels: 2,
            channels: vec![4, 8],
            convs_per_block: 2,
            fusion: "c".parse().unwrap(),
            supervision_scales: 2,
            width: 16,
            height: 8,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = init_random(&tiny(), 42).unwrap();
        let b = init_random(&tiny(), 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_random(&tiny(), 43).unwrap());
        for e in a.entries().iter().filter(|e| e.name.ends_with(".bias")) {
            assert!(e.data.to_f32().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_variance_matches_he() {
        let store = init_random(&ArchConfig::rt_monodepth(), 7).unwrap();
        let mut checked = 0;
        for e in store
            .entries()
            .iter()
            .filter(|e| e.name.ends_with(".weight"))
        {
            let v = e.data.to_f32();
            if v.len() < 1024 {
                continue;
            }
            let fan_in = (e.extents[1] * 9) as f64;
            let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
            let var =
                v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            let target = 2.0 / fan_in;
            assert!(
                var < 3.0 * target && var > target / 3.0,
                "{}: {var} vs {target}",
                e.name
            );
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn empty_store_round_trips() {
        let bytes = WeightStore::new().to_bytes().unwrap();
        assert_eq!(bytes, [b'R', b'T', b'M', b'D', 1, 0, 0, 0, 0, 0]);
        assert!(WeightStore::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn exact_byte_layout() {
        let mut store = WeightStore::new();
        store
            .insert(WeightEntry::f32("ab", vec![2], vec![1.0, -2.0]).unwrap())
            .unwrap();
        let bytes = store.to_bytes().unwrap();
        let mut expected = b"RTMD".to_vec();
        expected.extend([1, 0, 1, 0, 0, 0, 2, 0, b'a', b'b', 0, 1, 2, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn parse_errors_are_distinct() {
        let store = init_random(&tiny(), 1).unwrap();
        let good = store.to_bytes().unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            WeightStore::from_bytes(&bad_magic),
            Err(WeightsError::BadMagic(_))
        ));
        assert!(WeightStore::from_bytes(&bad_magic)
            .unwrap_err()
            .to_string()
            .contains("bad magic"));

        assert!(matches!(
            WeightStore::from_bytes(&good[..good.len() - 3]),
            Err(WeightsError::Truncated { .. })
        ));

        let mut version = good.clone();
        version[4] = 9;
        assert!(matches!(
            WeightStore::from_bytes(&version),
            Err(WeightsError::Version(9))
        ));

        // two entries with the same name
        let mut dup = WeightStore::new();
        dup.insert(WeightEntry::f32("x", vec![1], vec![0.0]).unwrap())
            .unwrap();
        let mut bytes = dup.to_bytes().unwrap();
        let entry = bytes[10..].to_vec();
        bytes.extend(entry);
        bytes[6] = 2;
        assert!(
            matches!(WeightStore::from_bytes(&bytes), Err(WeightsError::DuplicateName(n)) if n == "x")
        );

        // rank-4 entry with extents whose product overflows u64
        let mut over = b"RTMD".to_vec();
        over.extend([1, 0, 1, 0, 0, 0, 1, 0, b'o', 0, 4]);
        for _ in 0..4 {
            over.extend(u32::MAX.to_le_bytes());
        }
        assert!(matches!(
            WeightStore::from_bytes(&over),
            Err(WeightsError::ExtentOverflow { .. })
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            WeightStore::from_bytes(&trailing),
            Err(WeightsError::TrailingBytes(1))
        ));
    }

    #[test]
    fn bind_reports_missing_and_mismatched_slots() {
        let cfg = tiny();
        let store = init_random(&cfg, 3).unwrap();
        bind(
            Network::build(&cfg).unwrap(),
            &store,
            BindOptions::default(),
        )
        .unwrap();

        let mut missing = store.clone();
        missing.remove("head0.conv2.weight").unwrap();
        let err = bind(
            Network::build(&cfg).unwrap(),
            &missing,
            BindOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("head0.conv2"), "{err}");

        let mut transposed = WeightStore::new();
        for e in store.entries() {
            let mut e = e.clone();
            if e.name == "enc2.conv1.weight" {
                e.extents.swap(0, 1);
            }
            transposed.insert(e).unwrap();
        }
        let err = bind(
            Network::build(&cfg).unwrap(),
            &transposed,
            BindOptions::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            BindError::Extents {
                slot: "enc2.conv1".into(),
                entry: "enc2.conv1.weight".into(),
                expected: vec![8, 4, 3, 3],
                actual: vec![4, 8, 3, 3],
            }
        );
    }

    #[test]
    fn extra_entries_strict_by_default() {
        let cfg = tiny();
        let mut store = init_random(&cfg, 3).unwrap();
        store
            .insert(WeightEntry::f32("pose.fc", vec![2], vec![0.0, 0.0]).unwrap())
            .unwrap();
        let strict = bind(
            Network::build(&cfg).unwrap(),
            &store,
            BindOptions::default(),
        );
        assert!(matches!(strict, Err(BindError::Extra(v)) if v == ["pose.fc"]));
        let relaxed = bind(
            Network::build(&cfg).unwrap(),
            &store,
            BindOptions { allow_extra: true },
        )
        .unwrap();
        assert!(relaxed.is_bound());
    }

    #[test]
    fn f16_entries_widen_at_bind() {
        let cfg = tiny();
        let store = init_random(&cfg, 5).unwrap();
        let half = store.to_f16();
        let reparsed = WeightStore::from_bytes(&half.to_bytes().unwrap()).unwrap();
        assert_eq!(reparsed, half);
        let net = bind(
            Network::build(&cfg).unwrap(),
            &reparsed,
            BindOptions::default(),
        )
        .unwrap();
        let layer = net.slots().next().unwrap();
        let original = store.get("enc1.conv1.weight").unwrap().data.to_f32();
        for (a, b) in layer.weights().unwrap().kernel().iter().zip(&original) {
            assert_eq!(*a, f16::from_f32(*b).to_f32());
        }
    }
}
