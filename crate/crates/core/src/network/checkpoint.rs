//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "AUIF" | version u32 | layers u32 | channels u32 | ablation u32 | tensor count u32
//! per tensor: name_len u16 | name | rank u8 | dims u64 * rank | f32 * prod(dims)
//! crc32 of everything above
//! ```

use std::path::Path;

use crate::error::{Error, Result};

use super::{init_network, Ablation, NetworkConfig, NetworkParams};

pub const MAGIC: &[u8; 4] = b"AUIF";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &NetworkParams<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let c = params.config;
    for v in [c.layers as u32, c.channels as u32, c.ablation.bits()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let slots = params.slots();
    out.extend_from_slice(&(slots.len() as u32).to_le_bytes());
    for s in &slots {
        out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.push(s.dims.len() as u8);
        for &d in &s.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in s.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn fail<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset,
            message: message.into(),
        })
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<NetworkParams<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return r.fail(0, "bad magic");
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return r.fail(4, format!("unsupported version {version}"));
    }
    let layers = r.u32("layer count")? as usize;
    let channels = r.u32("channel count")? as usize;
    let ab_at = r.pos;
    let ablation =
        Ablation::from_bits(r.u32("ablation flags")?).or_else(|e| r.fail(ab_at, e.to_string()))?;
    if channels == 0 || channels > 1 << 16 || layers > 1 << 16 {
        return r.fail(
            8,
            format!("implausible config: {layers} layers, {channels} channels"),
        );
    }
    if bytes.len() < r.pos + 8 {
        return r.fail(r.pos, "truncated while reading tensor count");
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
    let body = &bytes[..body_len];

    let mut params = init_network(
        NetworkConfig {
            layers,
            channels,
            ablation,
        },
        0,
    )?;
    let count_at = r.pos;
    let count = r.u32("tensor count")? as usize;
    let mut r = Reader {
        buf: body,
        pos: r.pos.min(body_len),
    };
    let mut slots = params.slots_mut();
    if count != slots.len() {
        return r.fail(
            count_at,
            format!("expected {} tensors, found {count}", slots.len()),
        );
    }
    for slot in slots.iter_mut() {
        let at = r.pos;
        let len = r.u16("tensor name length")? as usize;
        let name = r.take(len, "tensor name")?;
        if name != slot.name.as_bytes() {
            return r.fail(
                at,
                format!(
                    "expected tensor {:?}, found {:?}",
                    slot.name,
                    String::from_utf8_lossy(name)
                ),
            );
        }
        let at = r.pos;
        let rank = r.u8("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("tensor dim")? as usize);
        }
        if dims != slot.dims {
            return r.fail(
                at,
                format!(
                    "tensor {} has dims {dims:?}, expected {:?}",
                    slot.name, slot.dims
                ),
            );
        }
        let raw = r.take(4 * slot.data.len(), "tensor payload")?;
        for (v, b) in slot.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
    }
    drop(slots);
    if r.pos != body_len {
        return r.fail(
            r.pos,
            format!("{} unexpected trailing bytes", body_len - r.pos),
        );
    }
    let computed = crc32fast::hash(body);
    if computed != stored {
        return r.fail(
            body_len,
            format!("checksum mismatch: stored {stored:08x}, computed {computed:08x}"),
        );
    }
    Ok(params)
}

pub fn save(params: &NetworkParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkParams<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NetworkParams<f32> {
        let mut p = init_network(
            NetworkConfig {
                layers: 2,
                channels: 3,
                ablation: Ablation::NO_INIT,
            },
            9,
        )
        .unwrap();
        p.base[1].bn.running_mean = vec![0.125];
        p.detail[0].bn.running_var = vec![3.5];
        p.decoder_bn.running_mean = vec![-1.0e-7];
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let q = from_bytes(&to_bytes(&p)).unwrap();
        assert_eq!(p, q);
        let bits = |p: &NetworkParams<f32>| {
            p.slots()
                .iter()
                .flat_map(|s| s.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&p), bits(&q));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.auif");
        let p = init_network(NetworkConfig::default(), 1).unwrap();
        save(&p, &path).unwrap();
        assert_eq!(load(&path).unwrap(), p);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut b = to_bytes(&sample());
        b[0] = b'X';
        match from_bytes(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_version_and_flags() {
        let mut b = to_bytes(&sample());
        b[4] = 2;
        assert!(matches!(
            from_bytes(&b),
            Err(Error::Format { offset: 4, .. })
        ));
        let mut b = to_bytes(&sample());
        b[16..20].copy_from_slice(&(1u32 << 30).to_le_bytes());
        assert!(matches!(
            from_bytes(&b),
            Err(Error::Format { offset: 16, .. })
        ));
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let b = to_bytes(&sample());
        for n in 0..b.len() {
            assert!(
                matches!(from_bytes(&b[..n]), Err(Error::Format { .. })),
                "len {n}"
            );
        }
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut b = to_bytes(&sample());
        let i = b.len() - 6;
        b[i] ^= 1;
        match from_bytes(&b) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, b.len() - 4);
                assert!(message.contains("checksum"));
            }
            other => panic!("{other:?}"),
        }
    }
}
