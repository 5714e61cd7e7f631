//! Length-prefixed little-endian frame format for moving tagged payloads
//! over byte streams (used by the loopback-socket transport test and
//! available for external tooling).
//!
//! Frame layout: u32 tag, u64 payload byte count, payload bytes.

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};

/// Refuse frames larger than this to bound memory on corrupt input.
pub const MAX_FRAME_BYTES: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub tag: u32,
    pub payload: Vec<u8>,
}

pub fn write_frame<W: Write>(w: &mut W, tag: u32, payload: &[u8]) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(tag)?;
    w.write_u64::<LittleEndian>(payload.len() as u64)?;
    w.write_all(payload)?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Frame> {
    let tag = r.read_u32::<LittleEndian>()?;
    let len = r.read_u64::<LittleEndian>()?;
    if len > MAX_FRAME_BYTES {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok(Frame { tag, payload })
}

/// Frame a slice of f64s (raw IEEE-754 little-endian bits).
pub fn write_f64_frame<W: Write>(w: &mut W, tag: u32, data: &[f64]) -> std::io::Result<()> {
    let mut payload = vec![0u8; data.len() * 8];
    byteorder::LittleEndian::write_f64_into(data, &mut payload);
    write_frame(w, tag, &payload)
}

pub fn frame_to_f64s(frame: &Frame) -> std::io::Result<Vec<f64>> {
    if frame.payload.len() % 8 != 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "payload length not a multiple of 8",
        ));
    }
    let mut out = vec![0.0; frame.payload.len() / 8];
    byteorder::LittleEndian::read_f64_into(&frame.payload, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;
    use std::net::{TcpListener, TcpStream};

    #[test]
    fn roundtrip_in_memory() {
        let mut buf = Vec::new();
        write_frame(&mut buf, 42, b"hello").unwrap();
        write_f64_frame(&mut buf, 7, &[1.5, -0.0, f64::MIN_POSITIVE]).unwrap();
        let mut c = Cursor::new(buf);
        let f1 = read_frame(&mut c).unwrap();
        assert_eq!(f1.tag, 42);
        assert_eq!(f1.payload, b"hello");
        let f2 = read_frame(&mut c).unwrap();
        let vals = frame_to_f64s(&f2).unwrap();
        assert_eq!(vals, vec![1.5, -0.0, f64::MIN_POSITIVE]);
        assert_eq!(vals[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn truncated_frame_errors() {
        let mut buf = Vec::new();
        write_frame(&mut buf, 1, &[0u8; 16]).unwrap();
        buf.truncate(buf.len() - 4);
        let mut c = Cursor::new(buf);
        assert!(read_frame(&mut c).is_err());
    }

    #[test]
    fn loopback_tcp_transport() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let data: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let sent = data.clone();
        let server = std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            write_f64_frame(&mut s, 3, &sent).unwrap();
        });
        let mut client = TcpStream::connect(addr).unwrap();
        let frame = read_frame(&mut client).unwrap();
        server.join().unwrap();
        assert_eq!(frame.tag, 3);
        let back = frame_to_f64s(&frame).unwrap();
        assert_eq!(back.len(), data.len());
        for (a, b) in back.iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
