//! Record container format.
//!
//! A container file is a 16-byte header followed by a stream of records:
//!
//! ```text
//! header:  "PRESTOC1" | version u8 (=1) | compression u8 | 6 zero bytes
//! record:  len u64 LE | crc32(len bytes) u32 LE | payload | crc32(payload) u32 LE
//! ```
//!
//! With compression the whole record stream after the header is one gzip or
//! zlib stream. A payload usually holds one encoded tensor:
//! `dtype u8 | rank u8 | rank x dim u64 LE | row-major data`.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use flate2::read::{GzDecoder, ZlibDecoder};
use flate2::write::{GzEncoder, ZlibEncoder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Compression, DType, ModelError, Tensor, MAX_RANK};
use crate::storage::{Storage, StorageError};

pub const MAGIC: [u8; 8] = *b"PRESTOC1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
/// Framing bytes around every payload.
pub const RECORD_OVERHEAD: usize = 8 + 4 + 4;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("bad container magic")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown compression code {0}")]
    UnknownCompression(u8),
    #[error("container is {found}-compressed but {expected} was requested")]
    CompressionMismatch {
        expected: Compression,
        found: Compression,
    },
    #[error("reserved header bytes are not zero")]
    NonZeroReserved,
    #[error("{field} checksum mismatch in record at stream offset {offset}")]
    CrcMismatch { field: &'static str, offset: u64 },
    #[error("record at stream offset {offset} is truncated")]
    TruncatedRecord { offset: u64 },
    #[error("corrupt compressed stream near offset {offset}: {message}")]
    CorruptStream { offset: u64, message: String },
    #[error("malformed tensor payload: {0}")]
    BadTensor(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("space saving is undefined for an original size of zero")]
    ZeroOriginal,
    #[error("shard count must be at least 1")]
    NoShards,
}

pub fn encode_header(compression: Compression) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(&MAGIC);
    h[8] = VERSION;
    h[9] = compression.code();
    h
}

pub fn decode_header(h: &[u8; HEADER_LEN]) -> Result<Compression, RecordError> {
    if h[..8] != MAGIC {
        return Err(RecordError::BadMagic);
    }
    if h[8] != VERSION {
        return Err(RecordError::UnsupportedVersion(h[8]));
    }
    let c = Compression::from_code(h[9]).ok_or(RecordError::UnknownCompression(h[9]))?;
    if h[10..].iter().any(|&b| b != 0) {
        return Err(RecordError::NonZeroReserved);
    }
    Ok(c)
}

/// Encoded size of `t` as a record payload.
pub fn encoded_len(t: &Tensor) -> usize {
    2 + 8 * t.rank() + t.byte_len()
}

pub fn encode_tensor_into(t: &Tensor, out: &mut Vec<u8>) {
    out.reserve(encoded_len(t));
    out.push(t.dtype().code());
    out.push(t.rank() as u8);
    for d in t.shape() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(t.data());
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut v = Vec::with_capacity(encoded_len(t));
    encode_tensor_into(t, &mut v);
    v
}

pub fn decode_tensor(payload: &[u8]) -> Result<Tensor, RecordError> {
    let (dtype, shape, data_at) = decode_head(payload)?;
    Ok(Tensor::new(dtype, shape, payload[data_at..].to_vec())?)
}

/// [`decode_tensor`] reusing the payload buffer for the tensor data.
pub fn decode_tensor_owned(mut payload: Vec<u8>) -> Result<Tensor, RecordError> {
    let (dtype, shape, data_at) = decode_head(&payload)?;
    payload.drain(..data_at);
    Ok(Tensor::new(dtype, shape, payload)?)
}

fn decode_head(payload: &[u8]) -> Result<(DType, Vec<u64>, usize), RecordError> {
    if payload.len() < 2 {
        return Err(RecordError::BadTensor("payload shorter than 2 bytes".into()));
    }
    let dtype = DType::from_code(payload[0])
        .ok_or_else(|| RecordError::BadTensor(format!("unknown dtype code {}", payload[0])))?;
    let rank = payload[1] as usize;
    if rank > MAX_RANK {
        return Err(ModelError::RankTooLarge(rank).into());
    }
    let data_at = 2 + 8 * rank;
    if payload.len() < data_at {
        return Err(RecordError::BadTensor("payload shorter than its shape".into()));
    }
    let shape = payload[2..data_at]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dtype, shape, data_at))
}

/// `Write` adapter that counts bytes passed through.
struct Counted<W> {
    inner: W,
    bytes: u64,
}

impl<W: Write> Write for Counted<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

enum Encoder<W: Write> {
    Plain(Counted<W>),
    Gzip(GzEncoder<Counted<W>>),
    Zlib(ZlibEncoder<Counted<W>>),
}

impl<W: Write> Encoder<W> {
    fn stream(&mut self) -> &mut dyn Write {
        match self {
            Encoder::Plain(w) => w,
            Encoder::Gzip(w) => w,
            Encoder::Zlib(w) => w,
        }
    }
}

/// Streams records into one container.
pub struct ContainerWriter<W: Write> {
    enc: Encoder<W>,
    records: u64,
    payload_bytes: u64,
}

impl<W: Write> ContainerWriter<W> {
    pub fn new(inner: W, compression: Compression) -> io::Result<ContainerWriter<W>> {
        let mut out = Counted { inner, bytes: 0 };
        out.write_all(&encode_header(compression))?;
        let level = flate2::Compression::default();
        let enc = match compression {
            Compression::None => Encoder::Plain(out),
            Compression::Gzip => Encoder::Gzip(GzEncoder::new(out, level)),
            Compression::Zlib => Encoder::Zlib(ZlibEncoder::new(out, level)),
        };
        Ok(ContainerWriter {
            enc,
            records: 0,
            payload_bytes: 0,
        })
    }

    pub fn write_record(&mut self, payload: &[u8]) -> io::Result<()> {
        let len = (payload.len() as u64).to_le_bytes();
        let w = self.enc.stream();
        w.write_all(&len)?;
        w.write_all(&crc32fast::hash(&len).to_le_bytes())?;
        w.write_all(payload)?;
        w.write_all(&crc32fast::hash(payload).to_le_bytes())?;
        self.records += 1;
        self.payload_bytes += payload.len() as u64;
        Ok(())
    }

    pub fn write_tensor(&mut self, t: &Tensor) -> io::Result<()> {
        self.write_record(&encode_tensor(t))
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    /// Finishes the compressed stream and flushes. Returns the sink and
    /// the number of bytes written to it.
    pub fn finish(self) -> io::Result<(W, u64)> {
        let mut out = match self.enc {
            Encoder::Plain(w) => w,
            Encoder::Gzip(w) => w.finish()?,
            Encoder::Zlib(w) => w.finish()?,
        };
        out.flush()?;
        Ok((out.inner, out.bytes))
    }
}

enum Decoder<R: Read> {
    Plain(R),
    Gzip(GzDecoder<R>),
    Zlib(ZlibDecoder<R>),
}

impl<R: Read> Read for Decoder<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Decoder::Plain(r) => r.read(buf),
            Decoder::Gzip(r) => r.read(buf),
            Decoder::Zlib(r) => r.read(buf),
        }
    }
}

/// One record payload split after the tensor header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordParts {
    pub head: Vec<u8>,
    pub data: Vec<u8>,
}

impl RecordParts {
    pub fn len(&self) -> usize {
        self.head.len() + self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_payload(mut self) -> Vec<u8> {
        if self.head.is_empty() {
            return self.data;
        }
        self.head.extend_from_slice(&self.data);
        self.head
    }

    pub fn into_tensor(self) -> Result<Tensor, RecordError> {
        match decode_head(&self.head) {
            Ok((dtype, shape, data_at)) if data_at == self.head.len() => Ok(Tensor::new(dtype, shape, self.data)?),
            _ => decode_tensor_owned(self.into_payload()),
        }
    }
}

/// Payloads are read and checksummed in pieces of this size while cache-hot.
const READ_CHUNK: u64 = 1 << 20;

/// Sequential record reader over one container.
pub struct ContainerReader<R: Read> {
    dec: Decoder<R>,
    compression: Compression,
    /// Offset of the next record in the uncompressed stream, header included.
    offset: u64,
    done: bool,
}

impl<R: Read> ContainerReader<R> {
    /// Reads and checks the header. `expected` must match the stored compression.
    pub fn new(mut inner: R, expected: Compression) -> Result<ContainerReader<R>, RecordError> {
        let mut h = [0u8; HEADER_LEN];
        read_exact_or(&mut inner, &mut h, || RecordError::BadMagic)?;
        let found = decode_header(&h)?;
        if found != expected {
            return Err(RecordError::CompressionMismatch { expected, found });
        }
        let dec = match found {
            Compression::None => Decoder::Plain(inner),
            Compression::Gzip => Decoder::Gzip(GzDecoder::new(inner)),
            Compression::Zlib => Decoder::Zlib(ZlibDecoder::new(inner)),
        };
        Ok(ContainerReader {
            dec,
            compression: found,
            offset: HEADER_LEN as u64,
            done: false,
        })
    }

    /// Next record payload, or `None` at a clean end of stream.
    pub fn next_record(&mut self) -> Result<Option<Vec<u8>>, RecordError> {
        Ok(self.next_record_parts()?.map(RecordParts::into_payload))
    }

    /// Next record with the tensor header and data in separate buffers, so
    /// the data becomes a tensor without another copy.
    pub fn next_record_parts(&mut self) -> Result<Option<RecordParts>, RecordError> {
        if self.done {
            return Ok(None);
        }
        let at = self.offset;
        let mut len = [0u8; 8];
        let got = self.fill(&mut len, at)?;
        if got == 0 {
            self.done = true;
            return Ok(None);
        }
        if got < len.len() {
            return self.fail(RecordError::TruncatedRecord { offset: at });
        }
        let mut crc = [0u8; 4];
        self.fill_all(&mut crc, at)?;
        if u32::from_le_bytes(crc) != crc32fast::hash(&len) {
            return self.fail(RecordError::CrcMismatch {
                field: "length",
                offset: at,
            });
        }
        let n = u64::from_le_bytes(len);
        let mut hasher = crc32fast::Hasher::new();
        let mut head = Vec::new();
        self.read_into(&mut head, n.min(2), &mut hasher, at)?;
        if head.len() == 2 {
            let dims = 8 * (head[1] as u64).min(MAX_RANK as u64 + 1);
            self.read_into(&mut head, dims.min(n - 2), &mut hasher, at)?;
        }
        let mut data = Vec::new();
        self.read_into(&mut data, n - head.len() as u64, &mut hasher, at)?;
        self.fill_all(&mut crc, at)?;
        if u32::from_le_bytes(crc) != hasher.finalize() {
            return self.fail(RecordError::CrcMismatch {
                field: "payload",
                offset: at,
            });
        }
        self.offset += RECORD_OVERHEAD as u64 + n;
        Ok(Some(RecordParts { head, data }))
    }

    /// Appends `count` stream bytes to `out`, checksumming each piece while hot.
    fn read_into(
        &mut self,
        out: &mut Vec<u8>,
        count: u64,
        hasher: &mut crc32fast::Hasher,
        at: u64,
    ) -> Result<(), RecordError> {
        let mut left = count;
        while left > 0 {
            let want = left.min(READ_CHUNK) as usize;
            let start = out.len();
            // Grow as bytes arrive so a corrupt length cannot trigger a huge allocation.
            if out.capacity() - start < want {
                out.reserve_exact((left as usize).min(start.max(want).max(1 << 24)));
            }
            out.resize(start + want, 0);
            if self.fill(&mut out[start..], at)? < want {
                return self.fail(RecordError::TruncatedRecord { offset: at });
            }
            hasher.update(&out[start..]);
            left -= want as u64;
        }
        Ok(())
    }

    pub fn next_tensor(&mut self) -> Result<Option<Tensor>, RecordError> {
        self.next_record_parts()?.map(RecordParts::into_tensor).transpose()
    }

    pub fn compression(&self) -> Compression {
        self.compression
    }

    fn fail<T>(&mut self, e: RecordError) -> Result<T, RecordError> {
        self.done = true;
        Err(e)
    }

    fn stream_error(&self, e: io::Error, at: u64) -> RecordError {
        match (self.compression, e.kind()) {
            (Compression::None, io::ErrorKind::UnexpectedEof) => RecordError::TruncatedRecord { offset: at },
            (Compression::None, _) => RecordError::Storage(StorageError::from_io(Path::new(""), e)),
            (_, io::ErrorKind::UnexpectedEof) => RecordError::TruncatedRecord { offset: at },
            (_, io::ErrorKind::InvalidInput | io::ErrorKind::InvalidData) => RecordError::CorruptStream {
                offset: at,
                message: e.to_string(),
            },
            _ => RecordError::Storage(StorageError::from_io(Path::new(""), e)),
        }
    }

    /// Reads until `buf` is full or EOF; returns bytes read.
    fn fill(&mut self, buf: &mut [u8], at: u64) -> Result<usize, RecordError> {
        let mut n = 0;
        while n < buf.len() {
            match self.dec.read(&mut buf[n..]) {
                Ok(0) => break,
                Ok(k) => n += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    let err = self.stream_error(e, at);
                    return self.fail(err);
                }
            }
        }
        Ok(n)
    }

    fn fill_all(&mut self, buf: &mut [u8], at: u64) -> Result<(), RecordError> {
        if self.fill(buf, at)? < buf.len() {
            return self.fail(RecordError::TruncatedRecord { offset: at });
        }
        Ok(())
    }
}

impl<R: Read> Iterator for ContainerReader<R> {
    type Item = Result<Tensor, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_tensor().transpose()
    }
}

fn read_exact_or<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    on_short: impl FnOnce() -> RecordError,
) -> Result<(), RecordError> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(on_short()),
        Err(e) => Err(StorageError::from_io(Path::new(""), e).into()),
    }
}

/// File name of shard `index` out of `shards`.
pub fn shard_name(index: u32, shards: u32, compression: Compression) -> String {
    format!("shard-{index:05}-of-{shards:05}.{}", compression.extension())
}

pub fn shard_paths(dir: &Path, shards: u32, compression: Compression) -> Vec<PathBuf> {
    (0..shards)
        .map(|i| dir.join(shard_name(i, shards, compression)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteStats {
    /// Total on-store bytes over all shards.
    pub bytes: u64,
    pub records: u64,
    /// Encoded tensor bytes before framing and compression.
    pub payload_bytes: u64,
    pub seconds: f64,
    pub paths: Vec<PathBuf>,
    pub per_shard_records: Vec<u64>,
}

/// Round-robin writer over `shards` containers in `dir`.
pub struct ShardedWriter {
    writers: Vec<ContainerWriter<BufWriter<Box<dyn Write + Send>>>>,
    paths: Vec<PathBuf>,
    next: usize,
    started: Instant,
}

impl ShardedWriter {
    pub fn create(
        storage: Arc<dyn Storage>,
        dir: &Path,
        compression: Compression,
        shards: u32,
    ) -> Result<ShardedWriter, RecordError> {
        if shards == 0 {
            return Err(RecordError::NoShards);
        }
        let started = Instant::now();
        let paths = shard_paths(dir, shards, compression);
        let mut writers = Vec::with_capacity(paths.len());
        for p in &paths {
            let sink = BufWriter::with_capacity(1 << 20, storage.open_write(p)?);
            writers.push(ContainerWriter::new(sink, compression).map_err(|e| io_err(p, e))?);
        }
        Ok(ShardedWriter {
            writers,
            paths,
            next: 0,
            started,
        })
    }

    pub fn write_payload(&mut self, payload: &[u8]) -> Result<(), RecordError> {
        let i = self.next;
        self.next = (self.next + 1) % self.writers.len();
        self.writers[i]
            .write_record(payload)
            .map_err(|e| io_err(&self.paths[i], e))
    }

    pub fn write_tensor(&mut self, t: &Tensor) -> Result<(), RecordError> {
        self.write_payload(&encode_tensor(t))
    }

    pub fn finish(self) -> Result<WriteStats, RecordError> {
        let mut stats = WriteStats {
            bytes: 0,
            records: 0,
            payload_bytes: 0,
            seconds: 0.0,
            paths: self.paths.clone(),
            per_shard_records: Vec::new(),
        };
        for (w, p) in self.writers.into_iter().zip(&self.paths) {
            stats.records += w.records;
            stats.payload_bytes += w.payload_bytes;
            stats.per_shard_records.push(w.records);
            let (mut sink, n) = w.finish().map_err(|e| io_err(p, e))?;
            sink.flush().map_err(|e| io_err(p, e))?;
            drop(sink);
            stats.bytes += n;
        }
        stats.seconds = self.started.elapsed().as_secs_f64();
        Ok(stats)
    }
}

fn io_err(path: &Path, e: io::Error) -> RecordError {
    RecordError::Storage(StorageError::from_io(path, e))
}

/// Writes `samples` round-robin into `shards` containers under `dir`.
pub fn write_container<I>(
    storage: &Arc<dyn Storage>,
    samples: I,
    dir: &Path,
    compression: Compression,
    shards: u32,
) -> Result<WriteStats, RecordError>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<Tensor>,
{
    let mut w = ShardedWriter::create(Arc::clone(storage), dir, compression, shards)?;
    for t in samples {
        w.write_tensor(std::borrow::Borrow::borrow(&t))?;
    }
    w.finish()
}

type ShardReader = ContainerReader<BufReader<Box<dyn Read + Send>>>;

/// Round-robin interleaving over shard readers. Reproduces the write
/// order of [`write_container`].
pub struct ContainerStream {
    readers: Vec<Option<ShardReader>>,
    next: usize,
    live: usize,
}

impl Iterator for ContainerStream {
    type Item = Result<Tensor, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.live > 0 {
            let i = self.next;
            self.next = (self.next + 1) % self.readers.len();
            let Some(r) = self.readers[i].as_mut() else {
                continue;
            };
            match r.next_tensor() {
                Ok(Some(t)) => return Some(Ok(t)),
                Ok(None) => {
                    self.readers[i] = None;
                    self.live -= 1;
                }
                Err(e) => {
                    self.readers[i] = None;
                    self.live -= 1;
                    return Some(Err(e));
                }
            }
        }
        None
    }
}

pub fn read_container(
    storage: &Arc<dyn Storage>,
    paths: &[PathBuf],
    compression: Compression,
) -> Result<ContainerStream, RecordError> {
    let mut readers = Vec::with_capacity(paths.len());
    for p in paths {
        let raw = BufReader::with_capacity(1 << 20, storage.open_read(p)?);
        readers.push(Some(ContainerReader::new(raw, compression)?));
    }
    Ok(ContainerStream {
        live: readers.len(),
        readers,
        next: 0,
    })
}

/// `1 - compressed / original`. Negative when compression inflates.
pub fn space_saving(original_bytes: u64, compressed_bytes: u64) -> Result<f64, RecordError> {
    if original_bytes == 0 {
        return Err(RecordError::ZeroOriginal);
    }
    Ok(1.0 - compressed_bytes as f64 / original_bytes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::LocalFs;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn t(dtype: DType, shape: Vec<u64>) -> Tensor {
        let n: u64 = shape.iter().product::<u64>() * dtype.width() as u64;
        Tensor::new(dtype, shape, (0..n).map(|i| (i * 37 % 251) as u8).collect()).unwrap()
    }

    fn container(tensors: &[Tensor], c: Compression) -> Vec<u8> {
        let mut w = ContainerWriter::new(Vec::new(), c).unwrap();
        for x in tensors {
            w.write_tensor(x).unwrap();
        }
        w.finish().unwrap().0
    }

    fn read_all(bytes: &[u8], c: Compression) -> Result<Vec<Tensor>, RecordError> {
        ContainerReader::new(Cursor::new(bytes), c)?.collect()
    }

    #[test]
    fn empty_container_is_header_only() {
        let bytes = container(&[], Compression::None);
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..8], b"PRESTOC1");
        assert_eq!(bytes[8], 1);
        assert_eq!(bytes[9], 0);
        assert!(bytes[10..].iter().all(|&b| b == 0));
    }

    #[test]
    fn golden_layout_for_2x2_u8() {
        let x = Tensor::new(DType::U8, vec![2, 2], vec![1, 2, 3, 4]).unwrap();
        let bytes = container(&[x], Compression::None);
        assert_eq!(bytes.len(), 54);
        let payload_len = 1 + 1 + 16 + 4;
        assert_eq!(&bytes[16..24], &(payload_len as u64).to_le_bytes());
        assert_eq!(&bytes[24..28], &crc32fast::hash(&bytes[16..24]).to_le_bytes());
        let payload = &bytes[28..28 + payload_len];
        assert_eq!(payload[0], 0);
        assert_eq!(payload[1], 2);
        assert_eq!(&payload[2..10], &2u64.to_le_bytes());
        assert_eq!(&payload[10..18], &2u64.to_le_bytes());
        assert_eq!(&payload[18..], &[1, 2, 3, 4]);
        assert_eq!(&bytes[50..], &crc32fast::hash(payload).to_le_bytes());
    }

    #[test]
    fn crc32_matches_reference_vector() {
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn header_rejections() {
        let mut h = encode_header(Compression::Gzip);
        assert_eq!(decode_header(&h).unwrap(), Compression::Gzip);
        h[8] = 2;
        assert!(matches!(decode_header(&h), Err(RecordError::UnsupportedVersion(2))));
        let mut h = encode_header(Compression::None);
        h[9] = 9;
        assert!(matches!(decode_header(&h), Err(RecordError::UnknownCompression(9))));
        let mut h = encode_header(Compression::None);
        h[0] = b'X';
        assert!(matches!(decode_header(&h), Err(RecordError::BadMagic)));
        let mut h = encode_header(Compression::None);
        h[15] = 1;
        assert!(matches!(decode_header(&h), Err(RecordError::NonZeroReserved)));
    }

    #[test]
    fn compression_mismatch_rejected() {
        let bytes = container(&[], Compression::Zlib);
        assert!(matches!(
            ContainerReader::new(Cursor::new(&bytes), Compression::Gzip),
            Err(RecordError::CompressionMismatch { .. })
        ));
    }

    #[test]
    fn flipped_payload_byte_names_offset() {
        let xs = vec![t(DType::U8, vec![10]), t(DType::U8, vec![10])];
        let mut bytes = container(&xs, Compression::None);
        let second = 16 + RECORD_OVERHEAD + encoded_len(&xs[0]);
        bytes[second + 12 + 3] ^= 0x40;
        match read_all(&bytes, Compression::None) {
            Err(RecordError::CrcMismatch { field, offset }) => {
                assert_eq!(field, "payload");
                assert_eq!(offset, second as u64);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_detected() {
        let bytes = container(&[t(DType::F32, vec![4, 4])], Compression::None);
        for cut in 17..bytes.len() {
            assert!(read_all(&bytes[..cut], Compression::None).is_err(), "cut {cut}");
        }
        assert!(matches!(
            read_all(&bytes[..10], Compression::None),
            Err(RecordError::BadMagic)
        ));
    }

    #[test]
    fn gzip_shrinks_zero_payloads() {
        let zeros = Tensor::new(DType::U8, vec![100_000], vec![0; 100_000]).unwrap();
        let plain = container(std::slice::from_ref(&zeros), Compression::None);
        for c in [Compression::Gzip, Compression::Zlib] {
            let packed = container(std::slice::from_ref(&zeros), c);
            assert!(packed.len() < plain.len() / 10);
            assert_eq!(read_all(&packed, c).unwrap(), vec![zeros.clone()]);
        }
    }

    #[test]
    fn space_saving_arithmetic() {
        assert!((space_saving(5_000_000_000, 1_000_000_000).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(space_saving(77, 77).unwrap(), 0.0);
        assert_eq!(space_saving(100, 25).unwrap(), 0.75);
        assert!(space_saving(100, 150).unwrap() < 0.0);
        assert!(matches!(space_saving(0, 1), Err(RecordError::ZeroOriginal)));
    }

    #[test]
    fn sharded_write_is_round_robin_and_balanced() {
        let dir = tempfile::tempdir().unwrap();
        let s: Arc<dyn Storage> = Arc::new(LocalFs::new(dir.path()));
        let xs: Vec<Tensor> = (1..=11).map(|n| t(DType::I16, vec![n])).collect();
        let stats = write_container(&s, &xs, Path::new("c"), Compression::None, 4).unwrap();
        assert_eq!(stats.per_shard_records, vec![3, 3, 3, 2]);
        assert_eq!(stats.bytes, s.counters().bytes_written);
        let on_disk: u64 = stats.paths.iter().map(|p| s.size(p).unwrap()).sum();
        assert_eq!(stats.bytes, on_disk);
        let first: Vec<Tensor> = read_container(&s, &stats.paths[..1], Compression::None)
            .unwrap()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(first, vec![xs[0].clone(), xs[4].clone(), xs[8].clone()]);
        let all: Vec<Tensor> = read_container(&s, &stats.paths, Compression::None)
            .unwrap()
            .map(|r| r.unwrap())
            .collect();
        assert_eq!(all, xs);
    }

    #[test]
    fn shard_names() {
        assert_eq!(shard_name(3, 8, Compression::Gzip), "shard-00003-of-00008.prc.gz");
        assert_eq!(shard_name(0, 1, Compression::None), "shard-00000-of-00001.prc");
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (0usize..5, proptest::collection::vec(0u64..6, 0..4)).prop_flat_map(|(d, shape)| {
            let dtype = DType::ALL[d];
            let n = shape.iter().product::<u64>() as usize * dtype.width();
            proptest::collection::vec(any::<u8>(), n)
                .prop_map(move |data| Tensor::new(dtype, shape.clone(), data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn roundtrip(xs in proptest::collection::vec(arb_tensor(), 0..20), c in 0u8..3) {
            let c = Compression::from_code(c).unwrap();
            let bytes = container(&xs, c);
            prop_assert_eq!(read_all(&bytes, c).unwrap(), xs);
        }

        #[test]
        fn single_byte_corruption_detected(
            xs in proptest::collection::vec(arb_tensor(), 1..6),
            pos in any::<prop::sample::Index>(),
            flip in 1u8..=255,
        ) {
            let mut bytes = container(&xs, Compression::None);
            let i = pos.index(bytes.len());
            bytes[i] ^= flip;
            prop_assert!(read_all(&bytes, Compression::None).is_err());
        }
    }
}
