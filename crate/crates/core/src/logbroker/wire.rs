//! Frame format shared by the broker server and client.
//!
//! ```text
//! [u32 BE header_len][header_len bytes of UTF-8 JSON][u32 BE payload_len][payload]
//! ```
//!
//! Record batches travel in the payload as repeated
//! `[u64 BE offset][i64 BE timestamp_ms][u32 BE key_len][key][u32 BE value_len][value]`.
//! A key length of `u32::MAX` encodes an absent key.

use std::io::{self, Read, Write};

use serde_json::Value;

use super::Record;

pub const MAX_FRAME_PART: u32 = 64 * 1024 * 1024;
pub const ABSENT_KEY: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: Value,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(header: Value) -> Self {
        Self {
            header,
            payload: Vec::new(),
        }
    }

    pub fn with_payload(header: Value, payload: Vec<u8>) -> Self {
        Self { header, payload }
    }
}

fn read_part<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_PART {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "frame part too large",
        ));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Reads one frame. `Ok(None)` on a clean EOF before the first byte.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read(&mut len[..1]) {
        Ok(0) => return Ok(None),
        Ok(_) => {}
        Err(e) => return Err(e),
    }
    r.read_exact(&mut len[1..])?;
    let hlen = u32::from_be_bytes(len);
    if hlen > MAX_FRAME_PART {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "frame header too large",
        ));
    }
    let mut header = vec![0u8; hlen as usize];
    r.read_exact(&mut header)?;
    let header: Value = serde_json::from_slice(&header)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let payload = read_part(r)?;
    Ok(Some(Frame { header, payload }))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    let header = serde_json::to_vec(&frame.header)?;
    let mut buf = Vec::with_capacity(8 + header.len() + frame.payload.len());
    buf.extend_from_slice(&(header.len() as u32).to_be_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(&frame.payload);
    w.write_all(&buf)?;
    w.flush()
}

pub fn encode_records<'a>(records: impl IntoIterator<Item = &'a Record>, out: &mut Vec<u8>) {
    for r in records {
        out.extend_from_slice(&r.offset.to_be_bytes());
        out.extend_from_slice(&r.timestamp_ms.to_be_bytes());
        match &r.key {
            Some(k) => {
                out.extend_from_slice(&(k.len() as u32).to_be_bytes());
                out.extend_from_slice(k);
            }
            None => out.extend_from_slice(&ABSENT_KEY.to_be_bytes()),
        }
        out.extend_from_slice(&(r.value.len() as u32).to_be_bytes());
        out.extend_from_slice(&r.value);
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> io::Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "truncated record batch",
            ));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes exactly `count` records from the front of `buf`, returning the rest.
pub fn decode_records(buf: &[u8], count: usize) -> io::Result<(Vec<Record>, &[u8])> {
    let mut c = Cursor { buf };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let offset = c.u64()?;
        let timestamp_ms = c.u64()? as i64;
        let key_len = c.u32()?;
        let key = if key_len == ABSENT_KEY {
            None
        } else {
            Some(c.take(key_len as usize)?.to_vec())
        };
        let value_len = c.u32()? as usize;
        let value = c.take(value_len)?.to_vec();
        out.push(Record {
            offset,
            timestamp_ms,
            key,
            value,
        });
    }
    Ok((out, c.buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn frame_layout_is_length_prefixed_big_endian() {
        let frame = Frame::with_payload(json!({"op":"fetch","corr":1}), vec![9, 8, 7]);
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame).unwrap();
        let hlen = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
        let header: Value = serde_json::from_slice(&buf[4..4 + hlen]).unwrap();
        assert_eq!(header["op"], "fetch");
        let plen = u32::from_be_bytes(buf[4 + hlen..8 + hlen].try_into().unwrap());
        assert_eq!(plen, 3);
        assert_eq!(&buf[8 + hlen..], &[9, 8, 7]);
        let back = read_frame(&mut buf.as_slice()).unwrap().unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn eof_before_frame_is_clean() {
        assert!(read_frame(&mut [].as_slice()).unwrap().is_none());
        assert!(read_frame(&mut [0u8, 0].as_slice()).is_err());
    }

    #[test]
    fn record_batch_layout() {
        let recs = vec![
            Record {
                offset: 1,
                timestamp_ms: 2,
                key: None,
                value: vec![5],
            },
            Record {
                offset: 2,
                timestamp_ms: 3,
                key: Some(vec![]),
                value: vec![],
            },
        ];
        let mut buf = Vec::new();
        encode_records(&recs, &mut buf);
        assert_eq!(buf.len(), (8 + 8 + 4 + 4 + 1) + (8 + 8 + 4 + 4));
        assert_eq!(&buf[16..20], &[0xff; 4]);
        let (back, rest) = decode_records(&buf, 2).unwrap();
        assert_eq!(back, recs);
        assert!(rest.is_empty());
        assert!(decode_records(&buf[..10], 1).is_err());
    }
}
