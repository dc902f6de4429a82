//! The `NEMELAST/1` container: a length-prefixed `key = value` header, a
//! tensor directory and raw little-endian row-major payloads.
//!
//! ```text
//! u32 header_len | header (UTF-8)
//! u32 count | count × { u16 name_len, name, u8 dtype, u8 rank, rank × u64 extent, u64 offset }
//! payload
//! ```
//!
//! Offsets are relative to the start of the payload.

use std::str::FromStr;

use elastic_core::numerics::{Scalar, Tensor};

pub const FORMAT: &str = "NEMELAST/1";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("checkpoint version `{found}` is not supported (this build reads `{expected}`)")]
    Version { found: String, expected: &'static str },
    #[error("truncated file: {0}")]
    Truncated(&'static str),
    #[error("header line {line}: {detail}")]
    HeaderLine { line: usize, detail: String },
    #[error("missing header key `{0}`")]
    MissingKey(String),
    #[error("header key `{key}`: {detail}")]
    BadValue { key: String, detail: String },
    #[error("tensor directory: {0}")]
    Directory(String),
    #[error("tensor `{name}` holds {found}, expected {expected}")]
    DType { name: String, found: &'static str, expected: &'static str },
    #[error(transparent)]
    Core(#[from] elastic_core::Error),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

/// Ordered `key = value` pairs. Keys are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Header::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        assert!(key != "format" && !key.contains(['=', '\n']) && !value.contains('\n'), "header entry {key:?} = {value:?} cannot be encoded");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| FormatError::MissingKey(key.into()))
    }

    pub fn parse<V: FromStr>(&self, key: &str) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        self.require(key)?.parse().map_err(|e: V::Err| FormatError::BadValue { key: key.into(), detail: e.to_string() })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn encode(&self) -> String {
        let mut s = format!("format = {FORMAT}\n");
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    fn decode(text: &str) -> Result<Self> {
        let mut h = Header::new();
        let mut version = None;
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| FormatError::HeaderLine { line: i + 1, detail: format!("expected `key = value`, got {line:?}") })?;
            if i == 0 {
                if k != "format" {
                    return Err(FormatError::HeaderLine { line: 1, detail: "first key must be `format`".into() });
                }
                version = Some(v);
                continue;
            }
            if h.get(k).is_some() {
                return Err(FormatError::HeaderLine { line: i + 1, detail: format!("duplicate key `{k}`") });
            }
            h.entries.push((k.into(), v.into()));
        }
        match version {
            Some(FORMAT) => Ok(h),
            Some(v) => Err(FormatError::Version { found: v.into(), expected: FORMAT }),
            None => Err(FormatError::HeaderLine { line: 1, detail: "empty header".into() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl Payload {
    fn code(&self) -> u8 {
        match self {
            Payload::F32(_) => 0,
            Payload::F64(_) => 1,
            Payload::U32(_) => 2,
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Payload::F32(_) => "f32",
            Payload::F64(_) => "f64",
            Payload::U32(_) => "u32",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn byte_len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len() * 8,
            _ => self.len() * 4,
        }
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        match self {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read(code: u8, bytes: &[u8]) -> Result<Self> {
        Ok(match code {
            0 => Payload::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => Payload::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            2 => Payload::U32(bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
            c => return Err(FormatError::Directory(format!("unknown dtype code {c}"))),
        })
    }

    fn elem_bytes(code: u8) -> usize {
        if code == 1 {
            8
        } else {
            4
        }
    }
}

/// One named array.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

impl Entry {
    /// Store a float tensor at its own precision.
    pub fn float<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let payload = if T::BYTES == 4 {
            Payload::F32(t.data().iter().map(|v| v.as_f64() as f32).collect())
        } else {
            Payload::F64(t.data().iter().map(|v| v.as_f64()).collect())
        };
        Entry { name: name.into(), shape: t.shape().to_vec(), payload }
    }

    pub fn indices(name: impl Into<String>, v: &[usize]) -> Self {
        let data = v.iter().map(|&i| u32::try_from(i).expect("index fits in u32")).collect();
        Entry { name: name.into(), shape: vec![v.len()], payload: Payload::U32(data) }
    }

    /// Float payload as a tensor of `T`; the other float width is converted.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| T::from_f64(x as f64)).collect(),
            Payload::F64(v) => v.iter().map(|&x| T::from_f64(x)).collect(),
            Payload::U32(_) => return Err(FormatError::DType { name: self.name.clone(), found: "u32", expected: "float" }),
        };
        Ok(Tensor::new(self.shape.clone(), data)?)
    }

    pub fn to_indices(&self) -> Result<Vec<usize>> {
        match &self.payload {
            Payload::U32(v) if self.shape.len() == 1 => Ok(v.iter().map(|&x| x as usize).collect()),
            p => Err(FormatError::DType { name: self.name.clone(), found: p.type_name(), expected: "u32 vector" }),
        }
    }
}

/// Serialize a header and entries into one buffer.
pub fn encode(header: &Header, entries: &[Entry]) -> Vec<u8> {
    let text = header.encode();
    let mut out = Vec::new();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for e in entries {
        assert_eq!(e.shape.iter().product::<usize>(), e.payload.len(), "tensor `{}` shape and payload disagree", e.name);
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.payload.code());
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += e.payload.byte_len() as u64;
    }
    for e in entries {
        e.payload.write_to(&mut out);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(FormatError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decode only the header; the version is checked here.
pub fn decode_header(bytes: &[u8]) -> Result<Header> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let n = r.u32("header length")? as usize;
    let text = std::str::from_utf8(r.take(n, "header")?).map_err(|e| FormatError::HeaderLine { line: 0, detail: e.to_string() })?;
    Header::decode(text)
}

pub fn decode(bytes: &[u8]) -> Result<(Header, Vec<Entry>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let n = r.u32("header length")? as usize;
    let text = std::str::from_utf8(r.take(n, "header")?).map_err(|e| FormatError::HeaderLine { line: 0, detail: e.to_string() })?;
    let header = Header::decode(text)?;
    let count = r.u32("tensor count")? as usize;
    let mut dir = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u16("tensor name")? as usize;
        let name = String::from_utf8(r.take(len, "tensor name")?.to_vec()).map_err(|e| FormatError::Directory(e.to_string()))?;
        let code = r.u8("dtype")?;
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.u64("extent").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = r.u64("offset")? as usize;
        dir.push((name, code, shape, offset));
    }
    let payload = &bytes[r.pos..];
    let mut entries = Vec::with_capacity(dir.len());
    for (name, code, shape, offset) in dir {
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let span = numel
            .and_then(|n| n.checked_mul(Payload::elem_bytes(code)))
            .and_then(|b| offset.checked_add(b).map(|end| (offset, end)))
            .filter(|&(_, end)| end <= payload.len())
            .ok_or_else(|| FormatError::Directory(format!("tensor `{name}` runs past the end of the file")))?;
        if entries.iter().any(|e: &Entry| e.name == name) {
            return Err(FormatError::Directory(format!("duplicate tensor `{name}`")));
        }
        let payload = Payload::read(code, &payload[span.0..span.1])?;
        entries.push(Entry { name, shape, payload });
    }
    Ok((header, entries))
}

/// Encode an index list as `1,2,3`.
pub fn join<V: ToString>(v: &[V]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Parse `1,2,3`; an empty string is an empty list.
pub fn split<V: FromStr>(s: &str) -> std::result::Result<Vec<V>, V::Err> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}
