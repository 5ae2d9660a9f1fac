//! Binary container shared by field realizations, path bundles and
//! backward solutions.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic    8 bytes  b"BDSDECT1"
//! hlen     u64      length of the JSON header in bytes
//! header   hlen     UTF-8 JSON object; "kind" names the payload type
//! plen     u64      number of f64 values in the payload
//! payload  plen * 8 little-endian IEEE-754 binary64
//! ```

use std::io::{Read, Write};

use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BDSDECT1";

pub fn write_container<W: Write>(mut w: W, header: &Value, payload: &[f64]) -> Result<()> {
    let head = serde_json::to_vec(header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(head.len() as u64).to_le_bytes())?;
    w.write_all(&head)?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<(Value, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let hlen = read_u64(&mut r)? as usize;
    let mut head = vec![0u8; hlen];
    r.read_exact(&mut head)?;
    let header: Value = serde_json::from_slice(&head)?;
    let plen = read_u64(&mut r)? as usize;
    let mut raw = vec![0u8; plen * 8];
    r.read_exact(&mut raw)?;
    let payload = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, payload))
}

pub fn to_bytes(header: &Value, payload: &[f64]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_container(&mut out, header, payload)?;
    Ok(out)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn expect_kind(header: &Value, kind: &str) -> Result<()> {
    match header.get("kind").and_then(Value::as_str) {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::Format(format!("expected container kind {kind}, found {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let header = serde_json::json!({"kind": "test", "n": 3});
        let payload = [0.1, -0.0, f64::MIN_POSITIVE, 1e300];
        let bytes = to_bytes(&header, &payload).unwrap();
        let (h, p) = read_container(bytes.as_slice()).unwrap();
        assert_eq!(h, header);
        assert_eq!(p.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), payload.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"NOTMAGIC\0\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(read_container(bytes.as_slice()), Err(Error::Format(_))));
    }
}
