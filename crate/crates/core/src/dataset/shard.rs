//! Binary shard container.
//!
//! ```text
//! "NLTO" | u16 version | u32 header length | header (UTF-8 key=value lines)
//! record*: u8 kind | u32 meta length | meta (JSON) | payload | u32 CRC32
//! ```
//!
//! Kind 0 is a sample whose payload holds the input planes followed by the
//! target plane as little-endian f32, row-major. Kind 1 is a tombstone with
//! no payload. The CRC covers every preceding byte of the record. All
//! integers are little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::channels::{channel_names, ChannelTensor, CANVAS};
use crate::error::{Error, Result};
use crate::problem::{ProblemSpec, Scenario};

pub const SHARD_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"NLTO";
const PLANE: usize = CANVAS * CANVAS;

#[derive(Debug, Clone, PartialEq)]
pub struct ShardHeader {
    pub scenario: Scenario,
    pub channels: Vec<String>,
    pub count: usize,
    pub fingerprint: String,
    pub engine_version: String,
}

impl ShardHeader {
    pub fn new(scenario: Scenario, count: usize) -> Self {
        Self {
            scenario,
            channels: channel_names(scenario),
            count,
            fingerprint: crate::fingerprint(),
            engine_version: crate::ENGINE_VERSION.to_string(),
        }
    }

    fn to_text(&self) -> String {
        let mut kv = BTreeMap::new();
        kv.insert("canvas", format!("{CANVAS}x{CANVAS}"));
        kv.insert("channels", self.channels.join(","));
        kv.insert("count", self.count.to_string());
        kv.insert("dtype", "f32le".into());
        kv.insert("engine_version", self.engine_version.clone());
        kv.insert("fingerprint", self.fingerprint.clone());
        kv.insert("layout", "top-left,zero-fill,row-major".into());
        kv.insert("payload", "inputs,target".into());
        kv.insert("scenario", self.scenario.name().into());
        kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Header(format!("line without '=': {line:?}")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Header(format!("missing key {k}")))
        };
        if get("canvas")? != format!("{CANVAS}x{CANVAS}") || get("dtype")? != "f32le" {
            return Err(Error::Header("unsupported canvas or dtype".into()));
        }
        let scenario = Scenario::parse(get("scenario")?).map_err(|e| Error::Header(e.to_string()))?;
        let channels: Vec<String> = get("channels")?.split(',').map(String::from).collect();
        let count = get("count")?
            .parse()
            .map_err(|e| Error::Header(format!("count: {e}")))?;
        Ok(Self {
            scenario,
            channels,
            count,
            fingerprint: get("fingerprint")?.to_string(),
            engine_version: get("engine_version")?.to_string(),
        })
    }

    fn payload_len(&self) -> usize {
        (self.channels.len() + 1) * PLANE
    }
}

/// Per-sample record metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: u64,
    pub spec: ProblemSpec,
    pub compliance: f64,
    pub g1: f64,
    pub g2: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TombstoneMeta {
    index: u64,
    error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Sample { meta: SampleMeta, tensor: ChannelTensor },
    Tombstone { index: u64, error: String },
}

impl Record {
    pub fn index(&self) -> u64 {
        match self {
            Record::Sample { meta, .. } => meta.index,
            Record::Tombstone { index, .. } => *index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub version: u16,
    pub header: ShardHeader,
    pub records: Vec<Record>,
}

/// Streams records to a shard; the header announces `count` records up
/// front and [`ShardWriter::finish`] checks that many were written.
pub struct ShardWriter<W: Write> {
    out: W,
    header: ShardHeader,
    written: usize,
}

impl ShardWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: ShardHeader) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> ShardWriter<W> {
    pub fn new(mut out: W, header: ShardHeader) -> Result<Self> {
        let text = header.to_text();
        out.write_all(MAGIC)?;
        out.write_all(&SHARD_VERSION.to_le_bytes())?;
        out.write_all(&(text.len() as u32).to_le_bytes())?;
        out.write_all(text.as_bytes())?;
        Ok(Self {
            out,
            header,
            written: 0,
        })
    }

    pub fn write_record(&mut self, record: &Record) -> Result<()> {
        if self.written == self.header.count {
            return Err(Error::InvalidArgument("more records than announced".into()));
        }
        let mut buf = Vec::new();
        match record {
            Record::Sample { meta, tensor } => {
                if tensor.names != self.header.channels {
                    return Err(Error::InvalidArgument(format!(
                        "record channels {:?} do not match shard channels {:?}",
                        tensor.names, self.header.channels
                    )));
                }
                let text = json(meta)?;
                buf.push(0u8);
                buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
                buf.extend_from_slice(text.as_bytes());
                for v in tensor.inputs.iter().chain(&tensor.target) {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            Record::Tombstone { index, error } => {
                let text = json(&TombstoneMeta {
                    index: *index,
                    error: error.clone(),
                })?;
                buf.push(1u8);
                buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
                buf.extend_from_slice(text.as_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        self.out.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.count {
            return Err(Error::InvalidArgument(format!(
                "announced {} records, wrote {}",
                self.header.count, self.written
            )));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

impl Shard {
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let mut v = [0u8; 2];
        read_exact(&mut r, &mut v, "version")?;
        let version = u16::from_le_bytes(v);
        if version != SHARD_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: SHARD_VERSION,
            });
        }
        let len = read_u32(&mut r, "header length")? as usize;
        let mut text = vec![0u8; len];
        read_exact(&mut r, &mut text, "header")?;
        let text = String::from_utf8(text).map_err(|e| Error::Header(e.to_string()))?;
        let header = ShardHeader::from_text(&text)?;
        let payload_len = header.payload_len();

        let mut records = Vec::with_capacity(header.count);
        for i in 0..header.count {
            let what = format!("record {i}");
            let mut buf = vec![0u8; 5];
            read_exact(&mut r, &mut buf, &what)?;
            let kind = buf[0];
            let meta_len = u32::from_le_bytes(buf[1..5].try_into().unwrap()) as usize;
            let body_len = meta_len
                + match kind {
                    0 => 4 * payload_len,
                    1 => 0,
                    k => return Err(Error::Header(format!("record {i} has unknown kind {k}"))),
                };
            buf.resize(5 + body_len, 0);
            read_exact(&mut r, &mut buf[5..], &what)?;
            let crc = read_u32(&mut r, &what)?;
            if crc32fast::hash(&buf) != crc {
                return Err(Error::Checksum { record: i });
            }
            let meta = std::str::from_utf8(&buf[5..5 + meta_len])
                .map_err(|e| Error::Header(format!("record {i}: {e}")))?;
            let bad_meta = |e: serde_json::Error| Error::Header(format!("record {i}: {e}"));
            let record = if kind == 0 {
                let meta: SampleMeta = serde_json::from_str(meta).map_err(bad_meta)?;
                let mut floats = buf[5 + meta_len..]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
                let inputs: Vec<f32> = floats.by_ref().take(payload_len - PLANE).collect();
                let target: Vec<f32> = floats.collect();
                let tensor = ChannelTensor {
                    names: header.channels.clone(),
                    nx: meta.spec.nx,
                    ny: meta.spec.ny,
                    inputs,
                    target,
                };
                Record::Sample { meta, tensor }
            } else {
                let t: TombstoneMeta = serde_json::from_str(meta).map_err(bad_meta)?;
                Record::Tombstone {
                    index: t.index,
                    error: t.error,
                }
            };
            records.push(record);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Header("trailing bytes after the last record".into()));
        }
        Ok(Shard {
            version,
            header,
            records,
        })
    }

    pub fn samples(&self) -> impl Iterator<Item = (&SampleMeta, &ChannelTensor)> {
        self.records.iter().filter_map(|r| match r {
            Record::Sample { meta, tensor } => Some((meta, tensor)),
            Record::Tombstone { .. } => None,
        })
    }
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<Shard> {
    Shard::read_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::encode_channels;
    use crate::problem::sample_problem;

    fn records(n: u64) -> Vec<Record> {
        (0..n)
            .map(|i| {
                let spec = sample_problem(5, i, Scenario::Stress);
                let d: Vec<f64> = (0..spec.nx * spec.ny).map(|k| ((k as u64 * 31 + i) % 97) as f64 / 96.0).collect();
                let tensor = encode_channels(&spec, &d).unwrap();
                Record::Sample {
                    meta: SampleMeta {
                        index: i,
                        spec,
                        compliance: 1.0 / 3.0 + i as f64,
                        g1: -1e-9,
                        g2: Some(-0.2),
                        iterations: 17,
                        converged: true,
                    },
                    tensor,
                }
            })
            .collect()
    }

    fn write(records: &[Record]) -> Vec<u8> {
        let mut w = ShardWriter::new(Vec::new(), ShardHeader::new(Scenario::Stress, records.len())).unwrap();
        for r in records {
            w.write_record(r).unwrap();
        }
        w.finish().unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut recs = records(3);
        recs.insert(1, Record::Tombstone {
            index: 9,
            error: "newton solve did not converge".into(),
        });
        let bytes = write(&recs);
        assert_eq!(&bytes[..4], b"NLTO");
        let shard = Shard::read_from(&bytes[..]).unwrap();
        assert_eq!(shard.version, SHARD_VERSION);
        assert_eq!(shard.header, ShardHeader::new(Scenario::Stress, 4));
        assert_eq!(shard.records, recs);
        assert_eq!(shard.samples().count(), 3);
        assert_eq!(write(&shard.records), bytes);
    }

    #[test]
    fn empty_shard() {
        let bytes = write(&[]);
        let shard = Shard::read_from(&bytes[..]).unwrap();
        assert!(shard.records.is_empty());
        assert_eq!(shard.header.count, 0);
    }

    #[test]
    fn distinct_errors() {
        let bytes = write(&records(2));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Shard::read_from(&bad[..]), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(matches!(
            Shard::read_from(&bad[..]),
            Err(Error::VersionMismatch { found: 7, expected: 1 })
        ));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 100] ^= 0x01;
        assert!(matches!(Shard::read_from(&bad[..]), Err(Error::Checksum { record: 1 })));
        for cut in [3, 9, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(Shard::read_from(&bytes[..cut]), Err(Error::Truncated(_))),
                "cut {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Shard::read_from(&extra[..]), Err(Error::Header(_))));
    }

    #[test]
    fn writer_checks_counts_and_channels() {
        let recs = records(2);
        let mut w = ShardWriter::new(Vec::new(), ShardHeader::new(Scenario::Stress, 1)).unwrap();
        w.write_record(&recs[0]).unwrap();
        assert!(w.write_record(&recs[1]).is_err());
        let w = ShardWriter::new(Vec::new(), ShardHeader::new(Scenario::Stress, 2)).unwrap();
        assert!(w.finish().is_err());
        let mut w = ShardWriter::new(Vec::new(), ShardHeader::new(Scenario::Linear, 2)).unwrap();
        assert!(w.write_record(&recs[0]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.nlto");
        let recs = records(2);
        let mut w = ShardWriter::create(&path, ShardHeader::new(Scenario::Stress, 2)).unwrap();
        for r in &recs {
            w.write_record(r).unwrap();
        }
        w.finish().unwrap();
        assert_eq!(read_shard(&path).unwrap().records, recs);
    }
}
