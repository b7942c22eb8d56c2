//! Chunked binary dataset container.
//!
//! Layout:
//!
//! ```text
//! header   64 bytes   magic "CALODSET", version, format, flags, lattice size,
//!                     voxel group, geometry hash, event count, chunk size
//! chunk*              u32 events | u32 compressed length | deflate stream
//! ```
//!
//! The decompressed chunk is a sequence of `u32 length | payload` records.
//! Every payload starts with the incident particle (momentum, theta, phi as
//! f64). Point clouds then store `u32 n_hits` followed by zero-suppressed hits:
//! `u32 cell index | f64 energy` when discrete, four f64 when smeared. Images
//! store their dense f64 voxel grid. All integers are little-endian.

use std::fs::File;
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::geometry::{cell_center, quantize_clamped, CellHit, GeometrySpec};
use crate::repr::voxel::{FullImage, VoxelImage};
use crate::showergen::{IncidentParticle, PointCloudEvent};

pub const MAGIC: &[u8; 8] = b"CALODSET";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;
pub const CHUNK_EVENTS: u32 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    PointCloud,
    Image11,
    ImageFull,
}

impl DatasetFormat {
    fn code(self) -> u8 {
        match self {
            DatasetFormat::PointCloud => 0,
            DatasetFormat::Image11 => 1,
            DatasetFormat::ImageFull => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => DatasetFormat::PointCloud,
            1 => DatasetFormat::Image11,
            2 => DatasetFormat::ImageFull,
            _ => return Err(Error::format(format!("unknown dataset format code {c}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetFormat::PointCloud => "pointcloud",
            DatasetFormat::Image11 => "image_11",
            DatasetFormat::ImageFull => "image_full",
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointcloud" => Ok(DatasetFormat::PointCloud),
            "image_11" | "image" => Ok(DatasetFormat::Image11),
            "image_full" => Ok(DatasetFormat::ImageFull),
            _ => Err(Error::format(format!("unknown dataset format '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub version: u16,
    pub format: DatasetFormat,
    pub smeared: bool,
    pub n_cells_per_axis: u16,
    pub voxel_group: u16,
    pub geometry_hash: u64,
    pub count: u64,
    pub chunk_events: u32,
}

impl DatasetHeader {
    fn new(g: &GeometrySpec, format: DatasetFormat, smeared: bool, count: usize) -> Self {
        Self {
            version: FORMAT_VERSION,
            format,
            smeared,
            n_cells_per_axis: g.n_cells_per_axis as u16,
            voxel_group: g.voxel_group as u16,
            geometry_hash: g.hash(),
            count: count as u64,
            chunk_events: CHUNK_EVENTS,
        }
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..8].copy_from_slice(MAGIC);
        b[8..10].copy_from_slice(&self.version.to_le_bytes());
        b[10] = self.format.code();
        b[11] = self.smeared as u8;
        b[12..14].copy_from_slice(&self.n_cells_per_axis.to_le_bytes());
        b[14..16].copy_from_slice(&self.voxel_group.to_le_bytes());
        b[16..24].copy_from_slice(&self.geometry_hash.to_le_bytes());
        b[24..32].copy_from_slice(&self.count.to_le_bytes());
        b[32..36].copy_from_slice(&self.chunk_events.to_le_bytes());
        b
    }

    fn decode(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if &b[..8] != MAGIC {
            return Err(Error::format("not a dataset file (bad magic)"));
        }
        let version = u16::from_le_bytes([b[8], b[9]]);
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let chunk_events = u32::from_le_bytes(b[32..36].try_into().unwrap());
        if chunk_events == 0 {
            return Err(Error::Corrupt("zero chunk size in header".into()));
        }
        Ok(Self {
            version,
            format: DatasetFormat::from_code(b[10])?,
            smeared: b[11] & 1 == 1,
            n_cells_per_axis: u16::from_le_bytes([b[12], b[13]]),
            voxel_group: u16::from_le_bytes([b[14], b[15]]),
            geometry_hash: u64::from_le_bytes(b[16..24].try_into().unwrap()),
            count: u64::from_le_bytes(b[24..32].try_into().unwrap()),
            chunk_events,
        })
    }

    pub fn image_side(&self) -> usize {
        match self.format {
            DatasetFormat::ImageFull => self.n_cells_per_axis as usize,
            _ => (self.n_cells_per_axis / self.voxel_group.max(1)) as usize,
        }
    }
}

/// Decoded dataset contents.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    PointCloud(Vec<PointCloudEvent>),
    Image(Vec<VoxelImage>),
    FullImage(Vec<FullImage>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::PointCloud(v) => v.len(),
            Dataset::Image(v) => v.len(),
            Dataset::FullImage(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn put_incident(buf: &mut Vec<u8>, inc: &IncidentParticle) {
    for v in [inc.momentum, inc.theta, inc.phi] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_grid(buf: &mut Vec<u8>, energies: &[f64]) {
    buf.reserve(energies.len() * 8);
    for e in energies {
        buf.extend_from_slice(&e.to_le_bytes());
    }
}

fn encode_pointcloud(g: &GeometrySpec, ev: &PointCloudEvent, smeared: bool, buf: &mut Vec<u8>) {
    put_incident(buf, &ev.incident);
    buf.extend_from_slice(&(ev.hits.len() as u32).to_le_bytes());
    for h in &ev.hits {
        if smeared {
            for v in [h.position[0], h.position[1], h.position[2], h.energy] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        } else {
            let lin = g.linear_index(quantize_clamped(g, h.position)) as u32;
            buf.extend_from_slice(&lin.to_le_bytes());
            buf.extend_from_slice(&h.energy.to_le_bytes());
        }
    }
}

/// Streams `count` records into `out`, compressing every `CHUNK_EVENTS`
/// events. Returns the number of bytes written.
fn write_container<W, F>(out: W, header: &DatasetHeader, mut record: F) -> Result<u64>
where
    W: Write,
    F: FnMut(usize, &mut Vec<u8>) -> Result<()>,
{
    let mut out = CountingWriter::new(out);
    out.write_all(&header.encode())?;
    let count = header.count as usize;
    let chunk = header.chunk_events as usize;
    let mut payload = Vec::new();
    let mut start = 0;
    while start < count {
        let end = (start + chunk).min(count);
        let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
        for i in start..end {
            payload.clear();
            record(i, &mut payload)?;
            enc.write_all(&(payload.len() as u32).to_le_bytes())?;
            enc.write_all(&payload)?;
        }
        let compressed = enc.finish()?;
        out.write_all(&((end - start) as u32).to_le_bytes())?;
        out.write_all(&(compressed.len() as u32).to_le_bytes())?;
        out.write_all(&compressed)?;
        start = end;
    }
    out.flush()?;
    Ok(out.count)
}

fn pointcloud_smeared(events: &[PointCloudEvent]) -> Result<bool> {
    let smeared = events.iter().find(|e| !e.hits.is_empty()).is_some_and(|e| e.is_smeared());
    let mixed = events.iter().flat_map(|e| e.hits.iter()).any(|h| h.is_smeared != smeared);
    if mixed {
        return Err(Error::contract("dataset mixes smeared and discrete hits"));
    }
    Ok(smeared)
}

/// Encodes `events` in `format` into `out`; returns the encoded size.
pub fn encode_events<W: Write>(
    out: W,
    g: &GeometrySpec,
    events: &[PointCloudEvent],
    format: DatasetFormat,
) -> Result<u64> {
    let smeared = pointcloud_smeared(events)?;
    match format {
        DatasetFormat::PointCloud => {
            let header = DatasetHeader::new(g, format, smeared, events.len());
            write_container(out, &header, |i, buf| {
                encode_pointcloud(g, &events[i], smeared, buf);
                Ok(())
            })
        }
        DatasetFormat::Image11 => {
            let header = DatasetHeader::new(g, format, false, events.len());
            write_container(out, &header, |i, buf| {
                let img = crate::repr::voxel::voxelize(g, &events[i]);
                put_incident(buf, &img.incident);
                put_grid(buf, &img.energies);
                Ok(())
            })
        }
        DatasetFormat::ImageFull => {
            let header = DatasetHeader::new(g, format, false, events.len());
            write_container(out, &header, |i, buf| {
                let full = crate::repr::voxel::voxelize_full(g, &events[i]);
                put_incident(buf, &full.incident);
                put_grid(buf, &full.energies);
                Ok(())
            })
        }
    }
}

pub fn encode_images<W: Write>(out: W, g: &GeometrySpec, images: &[VoxelImage]) -> Result<u64> {
    let side = g.voxels_per_axis();
    if let Some(bad) = images.iter().find(|img| img.side != side) {
        return Err(Error::contract(format!("image side {} != {side}", bad.side)));
    }
    let header = DatasetHeader::new(g, DatasetFormat::Image11, false, images.len());
    write_container(out, &header, |i, buf| {
        put_incident(buf, &images[i].incident);
        put_grid(buf, &images[i].energies);
        Ok(())
    })
}

/// Size in bytes of `events` encoded in `format`, without touching disk.
pub fn encoded_size(g: &GeometrySpec, events: &[PointCloudEvent], format: DatasetFormat) -> Result<u64> {
    encode_events(io::sink(), g, events, format)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_events(
    path: &Path,
    g: &GeometrySpec,
    events: &[PointCloudEvent],
    format: DatasetFormat,
) -> Result<()> {
    encode_events(create(path)?, g, events, format).map(|_| ())
}

pub fn write_pointclouds(path: &Path, g: &GeometrySpec, events: &[PointCloudEvent]) -> Result<()> {
    write_events(path, g, events, DatasetFormat::PointCloud)
}

pub fn write_images(path: &Path, g: &GeometrySpec, images: &[VoxelImage]) -> Result<()> {
    encode_images(create(path)?, g, images).map(|_| ())
}

struct CountingWriter<W> {
    inner: W,
    count: u64,
}

impl<W> CountingWriter<W> {
    fn new(inner: W) -> Self {
        Self { inner, count: 0 }
    }
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.count += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[derive(Clone, Copy, Debug)]
struct ChunkEntry {
    offset: u64,
    events: u32,
    compressed_len: u32,
}

/// Random access to the chunks of a dataset file. Each read opens its own
/// handle, so a reader can be shared across threads.
#[derive(Debug)]
pub struct DatasetReader {
    path: PathBuf,
    pub header: DatasetHeader,
    chunks: Vec<ChunkEntry>,
}

impl DatasetReader {
    /// Opens `path`, checking the geometry fingerprint when `expected` is given.
    pub fn open(path: &Path, expected: Option<&GeometrySpec>) -> Result<Self> {
        let mut f = File::open(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let len = f.metadata()?.len();
        let mut hb = [0u8; HEADER_LEN];
        f.read_exact(&mut hb)
            .map_err(|_| Error::Corrupt(format!("{}: truncated header", path.display())))?;
        let header = DatasetHeader::decode(&hb)?;
        if let Some(g) = expected {
            if header.geometry_hash != g.hash() {
                return Err(Error::format(format!(
                    "{}: geometry mismatch (file {:016x}, expected {:016x})",
                    path.display(),
                    header.geometry_hash,
                    g.hash()
                )));
            }
        }

        let mut chunks = Vec::new();
        let mut offset = HEADER_LEN as u64;
        let mut seen = 0u64;
        while seen < header.count {
            let mut cb = [0u8; 8];
            f.seek(SeekFrom::Start(offset))?;
            f.read_exact(&mut cb).map_err(|_| {
                Error::Corrupt(format!("{}: truncated after {seen} events", path.display()))
            })?;
            let events = u32::from_le_bytes(cb[..4].try_into().unwrap());
            let compressed_len = u32::from_le_bytes(cb[4..].try_into().unwrap());
            if events == 0 || offset + 8 + compressed_len as u64 > len {
                return Err(Error::Corrupt(format!("{}: truncated chunk", path.display())));
            }
            chunks.push(ChunkEntry { offset: offset + 8, events, compressed_len });
            seen += events as u64;
            offset += 8 + compressed_len as u64;
        }
        if seen != header.count {
            return Err(Error::Corrupt(format!("{}: event count mismatch", path.display())));
        }
        Ok(Self { path: path.to_path_buf(), header, chunks })
    }

    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }

    fn chunk_bytes(&self, i: usize) -> Result<Vec<u8>> {
        let c = self.chunks.get(i).ok_or_else(|| Error::contract(format!("no chunk {i}")))?;
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(c.offset))?;
        let mut compressed = vec![0u8; c.compressed_len as usize];
        f.read_exact(&mut compressed)?;
        let mut raw = Vec::new();
        DeflateDecoder::new(&compressed[..])
            .read_to_end(&mut raw)
            .map_err(|e| Error::Corrupt(format!("chunk {i}: {e}")))?;
        Ok(raw)
    }

    /// Decodes chunk `i`.
    pub fn read_chunk(&self, i: usize, g: &GeometrySpec) -> Result<Dataset> {
        let raw = self.chunk_bytes(i)?;
        let mut cur = Cursor { buf: &raw, pos: 0 };
        let n = self.chunks[i].events as usize;
        let side = self.header.image_side();
        match self.header.format {
            DatasetFormat::PointCloud => {
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut rec = cur.record()?;
                    out.push(decode_pointcloud(&mut rec, g, self.header.smeared)?);
                    rec.finish()?;
                }
                Ok(Dataset::PointCloud(out))
            }
            DatasetFormat::Image11 => {
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut rec = cur.record()?;
                    let incident = rec.incident()?;
                    let energies = rec.grid(side.pow(3))?;
                    rec.finish()?;
                    out.push(VoxelImage { side, energies, incident });
                }
                Ok(Dataset::Image(out))
            }
            DatasetFormat::ImageFull => {
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut rec = cur.record()?;
                    let incident = rec.incident()?;
                    let energies = rec.grid(side.pow(3))?;
                    rec.finish()?;
                    out.push(FullImage { side, energies, incident });
                }
                Ok(Dataset::FullImage(out))
            }
        }
    }

    pub fn read_all(&self, g: &GeometrySpec) -> Result<Dataset> {
        let mut all = None;
        for i in 0..self.chunks.len() {
            let part = self.read_chunk(i, g)?;
            all = Some(match (all, part) {
                (None, p) => p,
                (Some(Dataset::PointCloud(mut a)), Dataset::PointCloud(b)) => {
                    a.extend(b);
                    Dataset::PointCloud(a)
                }
                (Some(Dataset::Image(mut a)), Dataset::Image(b)) => {
                    a.extend(b);
                    Dataset::Image(a)
                }
                (Some(Dataset::FullImage(mut a)), Dataset::FullImage(b)) => {
                    a.extend(b);
                    Dataset::FullImage(a)
                }
                _ => unreachable!("chunks of one file share a format"),
            });
        }
        Ok(all.unwrap_or(match self.header.format {
            DatasetFormat::PointCloud => Dataset::PointCloud(Vec::new()),
            DatasetFormat::Image11 => Dataset::Image(Vec::new()),
            DatasetFormat::ImageFull => Dataset::FullImage(Vec::new()),
        }))
    }
}

/// Reads a whole dataset, checking it was written for geometry `g`.
pub fn read_dataset(path: &Path, g: &GeometrySpec) -> Result<Dataset> {
    DatasetReader::open(path, Some(g))?.read_all(g)
}

pub fn read_pointclouds(path: &Path, g: &GeometrySpec) -> Result<Vec<PointCloudEvent>> {
    match read_dataset(path, g)? {
        Dataset::PointCloud(v) => Ok(v),
        _ => Err(Error::format(format!("{} is not a point-cloud dataset", path.display()))),
    }
}

/// Reads images, voxelizing point clouds on the fly.
pub fn read_images(path: &Path, g: &GeometrySpec) -> Result<Vec<VoxelImage>> {
    match read_dataset(path, g)? {
        Dataset::Image(v) => Ok(v),
        Dataset::PointCloud(v) => Ok(v.iter().map(|e| crate::repr::voxel::voxelize(g, e)).collect()),
        Dataset::FullImage(_) => {
            Err(Error::format("full-granularity images cannot be used as 11^3 images"))
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt("record truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<Cursor<'a>> {
        let len = self.u32()? as usize;
        Ok(Cursor { buf: self.take(len)?, pos: 0 })
    }

    fn incident(&mut self) -> Result<IncidentParticle> {
        Ok(IncidentParticle { momentum: self.f64()?, theta: self.f64()?, phi: self.f64()? })
    }

    fn grid(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corrupt("trailing bytes in record".into()));
        }
        Ok(())
    }
}

fn decode_pointcloud(rec: &mut Cursor<'_>, g: &GeometrySpec, smeared: bool) -> Result<PointCloudEvent> {
    let incident = rec.incident()?;
    let n = rec.u32()? as usize;
    let mut hits = Vec::with_capacity(n);
    for _ in 0..n {
        if smeared {
            let position = [rec.f64()?, rec.f64()?, rec.f64()?];
            hits.push(CellHit { position, energy: rec.f64()?, is_smeared: true });
        } else {
            let idx = g.from_linear(rec.u32()? as usize).map_err(|_| {
                Error::Corrupt("cell index outside the lattice".into())
            })?;
            let energy = rec.f64()?;
            hits.push(CellHit { position: cell_center(g, idx)?, energy, is_smeared: false });
        }
    }
    Ok(PointCloudEvent { incident, hits })
}
