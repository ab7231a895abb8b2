//! Length-delimited, checksummed record files and their sharding.
//!
//! Each record on disk is
//!
//! ```text
//! u64  length            (little-endian)
//! u32  masked_crc32c(length bytes)
//! [u8] payload
//! u32  masked_crc32c(payload)
//! ```
//!
//! which is the framing used by TFRecord files, so shards written here can be
//! consumed by existing training input pipelines.
//!
//! Payloads produced by [`encode_example`] use the canonical example layout
//! (all integers and floats little-endian):
//!
//! ```text
//! [u8; 4]  tag "CNPX"
//! u32      version (1)
//! u32      file_name length, then UTF-8 bytes
//! u32      width
//! u32      height
//! u64      image byte length, then the bytes
//! u32      box count
//! per box:
//!   u64    category_id
//!   f64    xmin, ymin, xmax, ymax
//!   u32    label length, then UTF-8 bytes
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crc::{Crc, CRC_32_ISCSI};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;

const CASTAGNOLI: Crc<u32> = Crc::<u32>::new(&CRC_32_ISCSI);
const MASK_DELTA: u32 = 0xa282_ead8;

pub const EXAMPLE_TAG: [u8; 4] = *b"CNPX";
pub const EXAMPLE_VERSION: u32 = 1;

/// Bytes of framing around every payload.
pub const RECORD_OVERHEAD: u64 = 16;

pub fn crc32c(data: &[u8]) -> u32 {
    CASTAGNOLI.checksum(data)
}

pub fn mask_crc(crc: u32) -> u32 {
    crc.rotate_right(15).wrapping_add(MASK_DELTA)
}

pub fn unmask_crc(masked: u32) -> u32 {
    masked.wrapping_sub(MASK_DELTA).rotate_left(15)
}

pub fn masked_crc32c(data: &[u8]) -> u32 {
    mask_crc(crc32c(data))
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("I/O error at byte offset {offset}: {source}")]
    Io { offset: u64, source: io::Error },
    #[error("corrupt record at byte offset {offset}: length checksum mismatch")]
    LengthChecksum { offset: u64 },
    #[error("corrupt record at byte offset {offset}: payload checksum mismatch")]
    PayloadChecksum { offset: u64 },
    #[error("corrupt record at byte offset {offset}: truncated {part}")]
    Truncated { offset: u64, part: &'static str },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: Box<RecordError>,
    },
    #[error(transparent)]
    Payload(#[from] PayloadError),
    #[error("num_shards must be at least 1")]
    NoShards,
}

impl RecordError {
    fn in_file(self, path: &Path) -> Self {
        RecordError::File {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

pub struct RecordWriter<W: Write> {
    inner: W,
    offset: u64,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, offset: 0 }
    }

    /// Bytes written so far.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Frames and writes one payload; returns the number of bytes emitted.
    pub fn write_record(&mut self, payload: &[u8]) -> Result<u64, RecordError> {
        let len = (payload.len() as u64).to_le_bytes();
        let io_err = |offset, source| RecordError::Io { offset, source };
        let start = self.offset;
        self.inner
            .write_all(&len)
            .and_then(|_| self.inner.write_all(&masked_crc32c(&len).to_le_bytes()))
            .and_then(|_| self.inner.write_all(payload))
            .and_then(|_| self.inner.write_all(&masked_crc32c(payload).to_le_bytes()))
            .map_err(|e| io_err(start, e))?;
        let n = payload.len() as u64 + RECORD_OVERHEAD;
        self.offset += n;
        Ok(n)
    }

    pub fn flush(&mut self) -> Result<(), RecordError> {
        self.inner.flush().map_err(|source| RecordError::Io {
            offset: self.offset,
            source,
        })
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub struct RecordReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> RecordReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    /// Fills `buf` completely; returns how many bytes were read before EOF.
    fn fill(&mut self, buf: &mut [u8]) -> Result<usize, RecordError> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => break,
                Ok(n) => read += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(RecordError::Io {
                        offset: self.offset + read as u64,
                        source,
                    })
                }
            }
        }
        Ok(read)
    }

    fn exact(&mut self, buf: &mut [u8], start: u64, part: &'static str) -> Result<(), RecordError> {
        if self.fill(buf)? < buf.len() {
            return Err(RecordError::Truncated {
                offset: start,
                part,
            });
        }
        Ok(())
    }

    /// Next payload, or `None` at a clean end of stream. Both checksums are
    /// verified before anything is returned.
    pub fn read_record(&mut self) -> Result<Option<Vec<u8>>, RecordError> {
        let start = self.offset;
        let mut header = [0u8; 12];
        match self.fill(&mut header)? {
            0 => return Ok(None),
            12 => {}
            _ => {
                return Err(RecordError::Truncated {
                    offset: start,
                    part: "header",
                })
            }
        }
        let (len_bytes, len_crc) = header.split_at(8);
        if masked_crc32c(len_bytes) != u32::from_le_bytes(len_crc.try_into().unwrap()) {
            return Err(RecordError::LengthChecksum { offset: start });
        }
        let len = u64::from_le_bytes(len_bytes.try_into().unwrap());
        // grow gradually so a huge but checksum-valid length cannot force one
        // giant allocation before we discover the stream is short
        let mut payload = Vec::new();
        let mut remaining = len;
        let mut chunk = vec![0u8; 64 * 1024];
        while remaining > 0 {
            let n = remaining.min(chunk.len() as u64) as usize;
            self.exact(&mut chunk[..n], start, "payload")?;
            payload.extend_from_slice(&chunk[..n]);
            remaining -= n as u64;
        }
        let mut crc = [0u8; 4];
        self.exact(&mut crc, start, "payload checksum")?;
        if masked_crc32c(&payload) != u32::from_le_bytes(crc) {
            return Err(RecordError::PayloadChecksum { offset: start });
        }
        self.offset = start + len + RECORD_OVERHEAD;
        Ok(Some(payload))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<Vec<u8>, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_record().transpose()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PayloadError {
    #[error("boxes ({boxes}) and labels ({labels}) differ in length")]
    LengthMismatch { boxes: usize, labels: usize },
    #[error("box {index}: {message}")]
    InvalidBox { index: usize, message: String },
    #[error("bad format tag")]
    BadTag,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("field {0}: unexpected end of data")]
    Truncated(String),
    #[error("field {0}: invalid UTF-8")]
    InvalidUtf8(String),
    #[error("{0} trailing bytes after example")]
    TrailingBytes(usize),
    #[error("field {0}: length exceeds 32 bits")]
    TooLong(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub category_id: u64,
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

/// One training example: image metadata, optional encoded image bytes, and
/// aligned box/label lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExamplePayload {
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub image_bytes: Vec<u8>,
    pub boxes: Vec<BoxRecord>,
    pub labels: Vec<String>,
}

impl ExamplePayload {
    pub fn check(&self) -> Result<(), PayloadError> {
        if self.boxes.len() != self.labels.len() {
            return Err(PayloadError::LengthMismatch {
                boxes: self.boxes.len(),
                labels: self.labels.len(),
            });
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for (index, b) in self.boxes.iter().enumerate() {
            let bad = |message: &str| PayloadError::InvalidBox {
                index,
                message: message.to_string(),
            };
            if ![b.xmin, b.ymin, b.xmax, b.ymax]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(bad("non-finite coordinate"));
            }
            if b.xmin < 0.0 || b.ymin < 0.0 || b.xmin >= b.xmax || b.ymin >= b.ymax {
                return Err(bad("coordinates must satisfy 0 <= min < max"));
            }
            if b.xmax > w || b.ymax > h {
                return Err(bad("box exceeds image bounds"));
            }
            if b.category_id == 0 {
                return Err(bad("category id 0 is reserved for background"));
            }
        }
        Ok(())
    }
}

fn put_len32(out: &mut Vec<u8>, len: usize, field: &'static str) -> Result<(), PayloadError> {
    let len = u32::try_from(len).map_err(|_| PayloadError::TooLong(field))?;
    out.extend_from_slice(&len.to_le_bytes());
    Ok(())
}

// -0.0 and 0.0 compare equal, so both must encode identically
fn canonical(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

pub fn encode_example(p: &ExamplePayload) -> Result<Vec<u8>, PayloadError> {
    p.check()?;
    let mut out = Vec::with_capacity(64 + p.image_bytes.len() + p.boxes.len() * 48);
    out.extend_from_slice(&EXAMPLE_TAG);
    out.extend_from_slice(&EXAMPLE_VERSION.to_le_bytes());
    put_len32(&mut out, p.file_name.len(), "file_name")?;
    out.extend_from_slice(p.file_name.as_bytes());
    out.extend_from_slice(&p.width.to_le_bytes());
    out.extend_from_slice(&p.height.to_le_bytes());
    out.extend_from_slice(&(p.image_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&p.image_bytes);
    put_len32(&mut out, p.boxes.len(), "boxes")?;
    for (b, label) in p.boxes.iter().zip(&p.labels) {
        out.extend_from_slice(&b.category_id.to_le_bytes());
        for v in [b.xmin, b.ymin, b.xmax, b.ymax] {
            out.extend_from_slice(&canonical(v).to_le_bytes());
        }
        put_len32(&mut out, label.len(), "label")?;
        out.extend_from_slice(label.as_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8], PayloadError> {
        if self.data.len() - self.pos < n {
            return Err(PayloadError::Truncated(field.to_string()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, field: &str) -> Result<[u8; N], PayloadError> {
        Ok(self.take(N, field)?.try_into().unwrap())
    }

    fn u32(&mut self, field: &str) -> Result<u32, PayloadError> {
        Ok(u32::from_le_bytes(self.array(field)?))
    }

    fn u64(&mut self, field: &str) -> Result<u64, PayloadError> {
        Ok(u64::from_le_bytes(self.array(field)?))
    }

    fn f64(&mut self, field: &str) -> Result<f64, PayloadError> {
        Ok(f64::from_le_bytes(self.array(field)?))
    }

    fn string(&mut self, field: &str) -> Result<String, PayloadError> {
        let len = self.u32(field)? as usize;
        let bytes = self.take(len, field)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| PayloadError::InvalidUtf8(field.to_string()))
    }
}

pub fn decode_example(data: &[u8]) -> Result<ExamplePayload, PayloadError> {
    let mut c = Cursor { data, pos: 0 };
    if c.take(4, "tag")? != EXAMPLE_TAG {
        return Err(PayloadError::BadTag);
    }
    let version = c.u32("version")?;
    if version != EXAMPLE_VERSION {
        return Err(PayloadError::UnsupportedVersion(version));
    }
    let file_name = c.string("file_name")?;
    let width = c.u32("width")?;
    let height = c.u32("height")?;
    let image_len = c.u64("image_bytes")?;
    let image_len =
        usize::try_from(image_len).map_err(|_| PayloadError::Truncated("image_bytes".into()))?;
    let image_bytes = c.take(image_len, "image_bytes")?.to_vec();
    let count = c.u32("boxes")? as usize;
    // every box needs at least 44 bytes; reject impossible counts before allocating
    if count > (data.len() - c.pos) / 44 {
        return Err(PayloadError::Truncated("boxes".into()));
    }
    let mut boxes = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let field = |name: &str| format!("boxes[{i}].{name}");
        boxes.push(BoxRecord {
            category_id: c.u64(&field("category_id"))?,
            xmin: c.f64(&field("xmin"))?,
            ymin: c.f64(&field("ymin"))?,
            xmax: c.f64(&field("xmax"))?,
            ymax: c.f64(&field("ymax"))?,
        });
        labels.push(c.string(&field("label"))?);
    }
    if c.pos != data.len() {
        return Err(PayloadError::TrailingBytes(data.len() - c.pos));
    }
    let p = ExamplePayload {
        file_name,
        width,
        height,
        image_bytes,
        boxes,
        labels,
    };
    p.check()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordShard {
    pub path: PathBuf,
    pub record_count: usize,
}

pub fn shard_file_name(base: &str, shard: usize, num_shards: usize) -> String {
    format!("{base}-{shard:05}-of-{num_shards:05}")
}

/// Writes already-encoded payloads round-robin: payload `i` goes to shard
/// `i % num_shards`. Every shard file is created, even when empty, and each
/// one is written atomically.
pub fn write_encoded_shards(
    payloads: &[Vec<u8>],
    dir: &Path,
    base: &str,
    num_shards: usize,
) -> Result<Vec<RecordShard>, RecordError> {
    if num_shards == 0 {
        return Err(RecordError::NoShards);
    }
    let mut shards = Vec::with_capacity(num_shards);
    for s in 0..num_shards {
        let path = dir.join(shard_file_name(base, s, num_shards));
        let mut count = 0;
        fsutil::write_atomic_with(&path, |file| {
            let mut w = RecordWriter::new(BufWriter::new(file));
            for p in payloads.iter().skip(s).step_by(num_shards) {
                w.write_record(p).map_err(|e| match e {
                    RecordError::Io { source, .. } => source,
                    other => io::Error::other(other),
                })?;
                count += 1;
            }
            w.into_inner().into_inner().map_err(|e| e.into_error())?;
            Ok(())
        })
        .map_err(|source| RecordError::Io { offset: 0, source }.in_file(&path))?;
        shards.push(RecordShard {
            path,
            record_count: count,
        });
    }
    Ok(shards)
}

pub fn write_shards(
    examples: &[ExamplePayload],
    dir: &Path,
    base: &str,
    num_shards: usize,
) -> Result<Vec<RecordShard>, RecordError> {
    let encoded = examples
        .iter()
        .map(encode_example)
        .collect::<Result<Vec<_>, _>>()?;
    write_encoded_shards(&encoded, dir, base, num_shards)
}

/// Reads every record of one file.
pub fn read_record_file(path: &Path) -> Result<Vec<Vec<u8>>, RecordError> {
    let file =
        File::open(path).map_err(|source| RecordError::Io { offset: 0, source }.in_file(path))?;
    RecordReader::new(BufReader::new(file))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.in_file(path))
}

/// Reads a shard set written by [`write_shards`] and restores the original
/// example order.
pub fn read_shards(
    dir: &Path,
    base: &str,
    num_shards: usize,
) -> Result<Vec<ExamplePayload>, RecordError> {
    if num_shards == 0 {
        return Err(RecordError::NoShards);
    }
    let per_shard = (0..num_shards)
        .map(|s| read_record_file(&dir.join(shard_file_name(base, s, num_shards))))
        .collect::<Result<Vec<_>, _>>()?;
    let total: usize = per_shard.iter().map(Vec::len).sum();
    let mut iters: Vec<_> = per_shard.into_iter().map(Vec::into_iter).collect();
    let mut out = Vec::with_capacity(total);
    for i in 0..total {
        let bytes = iters[i % num_shards].next().ok_or_else(|| {
            RecordError::Truncated {
                offset: 0,
                part: "shard set (uneven record counts)",
            }
            .in_file(&dir.join(shard_file_name(base, i % num_shards, num_shards)))
        })?;
        out.push(decode_example(&bytes)?);
    }
    Ok(out)
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("cannot split an empty id list")]
    Empty,
    #[error("eval fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("duplicate image id {0}")]
    DuplicateId(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub train: Vec<u64>,
    pub eval: Vec<u64>,
}

/// Seeded train/eval split. The ids are shuffled with ChaCha8 seeded from
/// `seed`; the first `round(N * eval_fraction)` (half away from zero) go to
/// eval. Both lists are returned in ascending id order.
pub fn split_train_eval(
    image_ids: &[u64],
    eval_fraction: f64,
    seed: u64,
) -> Result<SplitPlan, SplitError> {
    if image_ids.is_empty() {
        return Err(SplitError::Empty);
    }
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(SplitError::BadFraction(eval_fraction));
    }
    let mut ids = image_ids.to_vec();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(SplitError::DuplicateId(w[0]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_eval = (ids.len() as f64 * eval_fraction).round() as usize;
    let mut eval = ids[..n_eval].to_vec();
    let mut train = ids[n_eval..].to_vec();
    eval.sort_unstable();
    train.sort_unstable();
    Ok(SplitPlan { seed, train, eval })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    /// Reflected bitwise CRC-32C, polynomial 0x82F63B78.
    fn crc32c_bitwise(data: &[u8]) -> u32 {
        let mut crc = !0u32;
        for &b in data {
            crc ^= b as u32;
            for _ in 0..8 {
                crc = if crc & 1 != 0 {
                    (crc >> 1) ^ 0x82f6_3b78
                } else {
                    crc >> 1
                };
            }
        }
        !crc
    }

    #[test]
    fn crc_check_values() {
        assert_eq!(crc32c_bitwise(b"123456789"), 0xe306_9283);
        assert_eq!(crc32c(b"123456789"), 0xe306_9283);
        assert_eq!(crc32c(b""), 0);
        assert_eq!(masked_crc32c(b""), 0xa282_ead8);
        let data: Vec<u8> = (0..=255u8).cycle().take(1000).collect();
        assert_eq!(crc32c(&data), crc32c_bitwise(&data));
    }

    #[test]
    fn mask_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let c: u32 = rand::Rng::gen(&mut rng);
            assert_eq!(unmask_crc(mask_crc(c)), c);
        }
    }

    #[test]
    fn framing_sizes() {
        let mut w = RecordWriter::new(Vec::new());
        assert_eq!(w.write_record(&[]).unwrap(), 16);
        assert_eq!(w.write_record(&[7u8; 100]).unwrap(), 116);
        let buf = w.into_inner();
        assert_eq!(buf.len(), 132);
        let mut r = RecordReader::new(buf.as_slice());
        assert_eq!(r.read_record().unwrap(), Some(vec![]));
        assert_eq!(r.read_record().unwrap(), Some(vec![7u8; 100]));
        assert_eq!(r.read_record().unwrap(), None);
    }

    #[test]
    fn corruption_detected() {
        let mut w = RecordWriter::new(Vec::new());
        w.write_record(b"hello").unwrap();
        w.write_record(b"world!").unwrap();
        let buf = w.into_inner();

        let mut bad = buf.clone();
        bad[14] ^= 0x01;
        let e = RecordReader::new(bad.as_slice()).read_record().unwrap_err();
        assert!(matches!(e, RecordError::PayloadChecksum { offset: 0 }));

        let mut bad = buf.clone();
        bad[21 + 3] ^= 0x80;
        let mut r = RecordReader::new(bad.as_slice());
        r.read_record().unwrap();
        assert!(matches!(
            r.read_record().unwrap_err(),
            RecordError::LengthChecksum { offset: 21 }
        ));

        let cut = &buf[..21 + 14];
        let mut r = RecordReader::new(cut);
        r.read_record().unwrap();
        assert!(matches!(
            r.read_record().unwrap_err(),
            RecordError::Truncated { offset: 21, .. }
        ));
        let cut = &buf[..21 + 5];
        let mut r = RecordReader::new(cut);
        r.read_record().unwrap();
        assert!(matches!(
            r.read_record().unwrap_err(),
            RecordError::Truncated {
                offset: 21,
                part: "header"
            }
        ));
    }

    fn sample(n_boxes: usize) -> ExamplePayload {
        ExamplePayload {
            file_name: "leaf_001.jpg".into(),
            width: 640,
            height: 480,
            image_bytes: vec![0xff, 0xd8, 0xff, 0xe0],
            boxes: (0..n_boxes)
                .map(|i| BoxRecord {
                    category_id: i as u64 + 1,
                    xmin: 10.0 * i as f64,
                    ymin: 5.0,
                    xmax: 10.0 * i as f64 + 7.5,
                    ymax: 50.0,
                })
                .collect(),
            labels: (0..n_boxes).map(|i| format!("class_{i}")).collect(),
        }
    }

    #[test]
    fn example_codec() {
        for n in [0, 3] {
            let p = sample(n);
            let bytes = encode_example(&p).unwrap();
            assert_eq!(decode_example(&bytes).unwrap(), p);
            assert_eq!(encode_example(&p.clone()).unwrap(), bytes);
        }
        let mut p = sample(3);
        p.labels.pop();
        assert_eq!(
            encode_example(&p),
            Err(PayloadError::LengthMismatch {
                boxes: 3,
                labels: 2
            })
        );
        let mut p = sample(1);
        p.boxes[0].xmax = 700.0;
        assert!(matches!(
            encode_example(&p),
            Err(PayloadError::InvalidBox { index: 0, .. })
        ));
    }

    #[test]
    fn negative_zero_is_canonical() {
        let mut a = sample(1);
        a.boxes[0].xmin = 0.0;
        let mut b = a.clone();
        b.boxes[0].xmin = -0.0;
        assert_eq!(a, b);
        assert_eq!(encode_example(&a).unwrap(), encode_example(&b).unwrap());
    }

    #[test]
    fn decode_names_broken_field() {
        let bytes = encode_example(&sample(2)).unwrap();
        let e = decode_example(&bytes[..bytes.len() - 3]).unwrap_err();
        assert_eq!(e, PayloadError::Truncated("boxes[1].label".into()));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(decode_example(&extra), Err(PayloadError::TrailingBytes(1)));
        let mut tag = bytes.clone();
        tag[0] = b'X';
        assert_eq!(decode_example(&tag), Err(PayloadError::BadTag));
    }

    #[test]
    fn shard_distribution() {
        let dir = tempfile::tempdir().unwrap();
        let examples: Vec<_> = (0..10)
            .map(|i| ExamplePayload {
                file_name: format!("{i}.jpg"),
                width: 10,
                height: 10,
                ..Default::default()
            })
            .collect();
        let shards = write_shards(&examples, dir.path(), "train", 3).unwrap();
        assert_eq!(
            shards.iter().map(|s| s.record_count).collect::<Vec<_>>(),
            vec![4, 3, 3]
        );
        assert_eq!(
            shards[1].path.file_name().unwrap().to_str().unwrap(),
            "train-00001-of-00003"
        );
        assert_eq!(read_shards(dir.path(), "train", 3).unwrap(), examples);

        let shards = write_shards(&examples, dir.path(), "one", 1).unwrap();
        assert_eq!(shards[0].record_count, 10);
        assert_eq!(read_shards(dir.path(), "one", 1).unwrap(), examples);

        let shards = write_shards(&[], dir.path(), "empty", 2).unwrap();
        assert_eq!(shards.len(), 2);
        for s in &shards {
            assert_eq!(std::fs::metadata(&s.path).unwrap().len(), 0);
        }
        assert!(read_shards(dir.path(), "empty", 2).unwrap().is_empty());
        assert!(matches!(
            write_shards(&[], dir.path(), "x", 0),
            Err(RecordError::NoShards)
        ));
    }

    #[test]
    fn split_counts_and_determinism() {
        let ids: Vec<u64> = (1..=1500).collect();
        let a = split_train_eval(&ids, 0.1, 42).unwrap();
        assert_eq!((a.train.len(), a.eval.len()), (1350, 150));
        assert_eq!(a, split_train_eval(&ids, 0.1, 42).unwrap());
        let b = split_train_eval(&ids, 0.1, 1).unwrap();
        let c = split_train_eval(&ids, 0.1, 2).unwrap();
        assert_ne!(b.eval, c.eval);
        assert_eq!(split_train_eval(&[], 0.1, 1), Err(SplitError::Empty));
        assert_eq!(
            split_train_eval(&[1], 1.0, 1),
            Err(SplitError::BadFraction(1.0))
        );
        assert_eq!(
            split_train_eval(&[1, 1], 0.5, 1),
            Err(SplitError::DuplicateId(1))
        );
    }

    proptest! {
        #[test]
        fn split_partitions(n in 1usize..300, frac in 0.01f64..0.99, seed in any::<u64>()) {
            let ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
            let plan = split_train_eval(&ids, frac, seed).unwrap();
            let train: HashSet<_> = plan.train.iter().collect();
            let eval: HashSet<_> = plan.eval.iter().collect();
            prop_assert!(train.is_disjoint(&eval));
            prop_assert_eq!(train.len() + eval.len(), n);
            prop_assert_eq!(plan.eval.len(), (n as f64 * frac).round() as usize);
        }

        #[test]
        fn records_roundtrip(payloads in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..200), 0..20)) {
            let mut w = RecordWriter::new(Vec::new());
            for p in &payloads {
                w.write_record(p).unwrap();
            }
            let buf = w.into_inner();
            let back: Vec<Vec<u8>> = RecordReader::new(buf.as_slice()).collect::<Result<_, _>>().unwrap();
            prop_assert_eq!(back, payloads);
        }
    }
}
