//! Portable binary checkpoints.
//!
//! Every file starts with a 12-byte header; all integers and floats are
//! little-endian.
//!
//! ```text
//! offset size  field
//! 0      4     magic "SNNW"
//! 4      4     u32 format version (1)
//! 8      4     u32 payload kind: 0 network, 1 sample store, 2 weight bounds
//! ```
//!
//! Network payload:
//!
//! ```text
//! u32 input_channels, u32 input_height, u32 input_width
//! u32 classes, u32 per_group
//! u32 layer count L, then L layer records:
//!     u8 kind (0 conv, 1 pool), u8 pool mode (0 spike, 1 potential),
//!     u8 has_threshold, u8 pointwise_inhibition (0 or 1)
//!     u32 in_channels, u32 out_maps, u32 kernel, u32 stride,
//!     u32 inhibition_radius, u32 kwta
//!     f64 threshold (0.0 when has_threshold = 0)
//!     u32 name length n, n bytes of UTF-8
//! then, for every conv layer in order, out_maps*in_channels*kernel*kernel
//! f64 weights laid out map, channel, row, column
//! ```
//!
//! Sample-store payload (append-only, one record per snapshot):
//!
//! ```text
//! u32 out_maps, u32 in_channels, u32 kernel, u32 n_demix
//! u8 value width in bytes (8 = f64, 4 = f32), 3 reserved bytes (0)
//! records until end of file: u64 step index, then the snapshot values
//! ```
//!
//! Weight-bounds payload:
//!
//! ```text
//! u32 out_maps, u32 in_channels, u32 kernel
//! lower bounds (f64 each), then upper bounds (f64 each)
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::continual::{Precision, SampleStore, WeightBoundsMap};
use crate::error::{Error, Result};
use crate::snn::{LayerKind, LayerSpec, NetworkState, OutputGroups, PoolMode, WeightTensor};

pub const MAGIC: &[u8; 4] = b"SNNW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum PayloadKind {
    Network = 0,
    SampleStore = 1,
    Bounds = 2,
}

const HEADER: usize = 12;
const STORE_HEADER: usize = HEADER + 20;

fn header(kind: PayloadKind) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, kind as u32);
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))
}

/// Bounds-checked little-endian reader.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} ({} more needed)",
                self.pos,
                n - (self.bytes.len() - self.pos)
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn read_header(r: &mut Reader<'_>, expected: PayloadKind) -> Result<()> {
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("missing SNNW magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let kind = r.u32()?;
    if kind != expected as u32 {
        return Err(Error::Checkpoint(format!(
            "payload kind {kind}, expected {}",
            expected as u32
        )));
    }
    Ok(())
}

pub fn network_to_bytes(net: &NetworkState) -> Result<Vec<u8>> {
    let mut out = header(PayloadKind::Network);
    for v in [
        net.input_channels,
        net.input_height,
        net.input_width,
        net.groups.classes,
        net.groups.per_group,
        net.layers.len(),
    ] {
        put_u32(&mut out, to_u32(v, "dimension")?);
    }
    for l in &net.layers {
        out.push(match l.kind {
            LayerKind::Conv => 0,
            LayerKind::Pool => 1,
        });
        out.push(match l.pool_mode {
            PoolMode::Spike => 0,
            PoolMode::Potential => 1,
        });
        out.push(u8::from(l.threshold.is_some()));
        out.push(u8::from(l.pointwise_inhibition));
        for v in [l.in_channels, l.out_maps, l.kernel, l.stride, l.inhibition_radius, l.kwta] {
            put_u32(&mut out, to_u32(v, "layer field")?);
        }
        out.extend_from_slice(&l.threshold.unwrap_or(0.0).to_le_bytes());
        put_u32(&mut out, to_u32(l.name.len(), "name length")?);
        out.extend_from_slice(l.name.as_bytes());
    }
    for t in net.weights.iter().flatten() {
        put_f64s(&mut out, &t.data);
    }
    Ok(out)
}

pub fn network_from_bytes(bytes: &[u8]) -> Result<NetworkState> {
    let mut r = Reader { bytes, pos: 0 };
    read_header(&mut r, PayloadKind::Network)?;
    let (input_channels, input_height, input_width) = (r.usize()?, r.usize()?, r.usize()?);
    let groups = OutputGroups {
        classes: r.usize()?,
        per_group: r.usize()?,
    };
    let count = r.usize()?;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let kind = match r.u8()? {
            0 => LayerKind::Conv,
            1 => LayerKind::Pool,
            k => return Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
        };
        let pool_mode = match r.u8()? {
            0 => PoolMode::Spike,
            1 => PoolMode::Potential,
            m => return Err(Error::Checkpoint(format!("unknown pool mode {m}"))),
        };
        let has_threshold = r.u8()? != 0;
        let pointwise_inhibition = r.u8()? != 0;
        let (in_channels, out_maps, kernel, stride, inhibition_radius, kwta) =
            (r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?);
        let threshold = r.f64()?;
        let n = r.usize()?;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("layer name is not UTF-8".into()))?;
        layers.push(LayerSpec {
            name,
            kind,
            in_channels,
            out_maps,
            kernel,
            stride,
            threshold: has_threshold.then_some(threshold),
            inhibition_radius,
            pointwise_inhibition,
            kwta,
            pool_mode,
        });
    }
    let mut weights = Vec::with_capacity(layers.len());
    for l in &layers {
        weights.push(match l.kind {
            LayerKind::Conv => {
                let data = r.f64s(l.out_maps * l.fan_in())?;
                Some(WeightTensor {
                    out_maps: l.out_maps,
                    in_channels: l.in_channels,
                    kernel: l.kernel,
                    data,
                })
            }
            LayerKind::Pool => None,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }
    let net = NetworkState {
        input_channels,
        input_height,
        input_width,
        layers,
        weights,
        groups,
    };
    net.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(net)
}

pub fn save_network(net: &NetworkState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, network_to_bytes(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkState> {
    let path = path.as_ref();
    network_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn bounds_to_bytes(bounds: &WeightBoundsMap) -> Result<Vec<u8>> {
    let mut out = header(PayloadKind::Bounds);
    for v in [bounds.out_maps, bounds.in_channels, bounds.kernel] {
        put_u32(&mut out, to_u32(v, "dimension")?);
    }
    put_f64s(&mut out, &bounds.lower);
    put_f64s(&mut out, &bounds.upper);
    Ok(out)
}

pub fn bounds_from_bytes(bytes: &[u8]) -> Result<WeightBoundsMap> {
    let mut r = Reader { bytes, pos: 0 };
    read_header(&mut r, PayloadKind::Bounds)?;
    let (out_maps, in_channels, kernel) = (r.usize()?, r.usize()?, r.usize()?);
    let n = out_maps * in_channels * kernel * kernel;
    let lower = r.f64s(n)?;
    let upper = r.f64s(n)?;
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }
    Ok(WeightBoundsMap {
        out_maps,
        in_channels,
        kernel,
        lower,
        upper,
    })
}

pub fn save_bounds(bounds: &WeightBoundsMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bounds_to_bytes(bounds)?).map_err(|e| Error::io(path, e))
}

pub fn load_bounds(path: impl AsRef<Path>) -> Result<WeightBoundsMap> {
    let path = path.as_ref();
    bounds_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

fn store_header(store: &SampleStore) -> Result<Vec<u8>> {
    let mut out = header(PayloadKind::SampleStore);
    for v in [store.out_maps, store.in_channels, store.kernel, store.n_demix] {
        put_u32(&mut out, to_u32(v, "dimension")?);
    }
    out.extend_from_slice(&[store.precision().bytes() as u8, 0, 0, 0]);
    Ok(out)
}

fn record_bytes(step: u64, values: &[f64], precision: Precision) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + values.len() * precision.bytes());
    out.extend_from_slice(&step.to_le_bytes());
    for &v in values {
        match precision {
            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    out
}

pub fn store_to_bytes(store: &SampleStore) -> Result<Vec<u8>> {
    let mut out = store_header(store)?;
    for k in 0..store.len() {
        out.extend(record_bytes(store.step_indices[k], &store.snapshot(k), store.precision()));
    }
    Ok(out)
}

/// Parses a sample store. With `allow_partial_tail`, an incomplete final
/// record (an interrupted append) is ignored; otherwise it is an error.
/// Returns the store and the byte length of its complete records.
fn parse_store(bytes: &[u8], allow_partial_tail: bool) -> Result<(SampleStore, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    read_header(&mut r, PayloadKind::SampleStore)?;
    let (out_maps, in_channels, kernel, n_demix) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
    let precision = match r.u8()? {
        8 => Precision::F64,
        4 => Precision::F32,
        w => return Err(Error::Checkpoint(format!("unsupported value width {w}"))),
    };
    r.take(3)?;
    let shape = WeightTensor::filled(out_maps, in_channels, kernel, 0.0);
    let mut store = SampleStore::new(&shape, n_demix, precision);
    let record = 8 + store.synapses() * precision.bytes();
    let mut values = Vec::with_capacity(store.synapses());
    while r.remaining() >= record {
        let step = r.u64()?;
        values.clear();
        let raw = r.take(record - 8)?;
        match precision {
            Precision::F64 => values.extend(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()))),
            Precision::F32 => values.extend(
                raw.chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))),
            ),
        }
        store.push(step, &values)?;
    }
    if r.remaining() != 0 && !allow_partial_tail {
        return Err(Error::Checkpoint(format!(
            "incomplete trailing record ({} of {record} bytes)",
            r.remaining()
        )));
    }
    Ok((store, r.pos))
}

pub fn store_from_bytes(bytes: &[u8]) -> Result<SampleStore> {
    parse_store(bytes, false).map(|(s, _)| s)
}

pub fn save_store(store: &SampleStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, store_to_bytes(store)?).map_err(|e| Error::io(path, e))
}

pub fn load_store(path: impl AsRef<Path>) -> Result<SampleStore> {
    let path = path.as_ref();
    store_from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Appends snapshots to a sample-store file as they are taken, so a long
/// sampling run can be resumed from what reached the disk.
pub struct SampleStoreWriter {
    path: PathBuf,
    file: BufWriter<File>,
    precision: Precision,
    synapses: usize,
    /// Snapshots in the file, including any found on resume.
    pub recorded: usize,
    pub last_step: Option<u64>,
}

impl SampleStoreWriter {
    /// Starts a new file holding `store`'s header (and any snapshots it has).
    pub fn create(path: impl AsRef<Path>, store: &SampleStore) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        fs::write(&path, store_to_bytes(store)?).map_err(|e| Error::io(&path, e))?;
        Self::open(path, store.precision(), store.synapses(), store.len(), store.step_indices.last().copied())
    }

    /// Reopens an existing file for appending. An interrupted final record is
    /// cut off. Returns the writer and the snapshots already on disk.
    pub fn resume(path: impl AsRef<Path>) -> Result<(Self, SampleStore)> {
        let path = path.as_ref().to_path_buf();
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (store, complete) = parse_store(&bytes, true)?;
        if complete < bytes.len() {
            let f = OpenOptions::new().write(true).open(&path).map_err(|e| Error::io(&path, e))?;
            f.set_len(complete as u64).map_err(|e| Error::io(&path, e))?;
        }
        let w = Self::open(
            path,
            store.precision(),
            store.synapses(),
            store.len(),
            store.step_indices.last().copied(),
        )?;
        Ok((w, store))
    }

    fn open(path: PathBuf, precision: Precision, synapses: usize, recorded: usize, last_step: Option<u64>) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            file: BufWriter::new(file),
            precision,
            synapses,
            recorded,
            last_step,
        })
    }

    pub fn append(&mut self, step: u64, values: &[f64]) -> Result<()> {
        if values.len() != self.synapses {
            return Err(Error::Shape {
                expected: format!("{} weights", self.synapses),
                actual: format!("{}", values.len()),
            });
        }
        self.file
            .write_all(&record_bytes(step, values, self.precision))
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        self.recorded += 1;
        self.last_step = Some(step);
        Ok(())
    }
}

#[allow(dead_code)]
const _: () = assert!(STORE_HEADER == 32);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::EncoderConfig;
    use crate::snn::{default_layers, WeightInit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn network_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = NetworkState::new(
            &EncoderConfig::default(),
            (28, 28),
            default_layers(),
            OutputGroups::default(),
            WeightInit::default(),
            &mut rng,
        )
        .unwrap();
        let bytes = network_to_bytes(&net).unwrap();
        assert_eq!(&bytes[..4], b"SNNW");
        assert_eq!(network_from_bytes(&bytes).unwrap(), net);
        assert!(network_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn wrong_kind_rejected() {
        let b = WeightBoundsMap {
            out_maps: 1,
            in_channels: 1,
            kernel: 1,
            lower: vec![0.2],
            upper: vec![0.7],
        };
        let bytes = bounds_to_bytes(&b).unwrap();
        assert_eq!(bounds_from_bytes(&bytes).unwrap(), b);
        assert!(network_from_bytes(&bytes).is_err());
    }

    #[test]
    fn store_resume_drops_partial_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.snnw");
        let shape = WeightTensor::filled(1, 2, 1, 0.0);
        let store = SampleStore::new(&shape, 5, Precision::F64);
        let mut w = SampleStoreWriter::create(&path, &store).unwrap();
        w.append(5, &[0.3, 0.4]).unwrap();
        w.append(10, &[0.5, 0.6]).unwrap();
        drop(w);
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(&[1, 2, 3]);
        fs::write(&path, &bytes).unwrap();
        assert!(load_store(&path).is_err());
        let (mut w, got) = SampleStoreWriter::resume(&path).unwrap();
        assert_eq!(got.step_indices, vec![5, 10]);
        w.append(15, &[0.7, 0.8]).unwrap();
        drop(w);
        let all = load_store(&path).unwrap();
        assert_eq!(all.step_indices, vec![5, 10, 15]);
        assert_eq!(all.snapshot(2), vec![0.7, 0.8]);
    }
}
