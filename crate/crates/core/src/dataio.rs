//! The NODF binary container for datasets and checkpoints.
//!
//! ```text
//! magic      6 bytes  "NODF1\0"
//! version    u16      1
//! metadata   u32 length, then UTF-8 "key=value\n" lines
//! directory  u32 count, then per component:
//!              u16 name length, name, u8 role, u8 dtype, u8 rank, u32 dims[rank]
//! payload    each component little-endian row-major, starting on an
//!            8-byte file offset (zero padding in between)
//! ```
//!
//! All integers are little-endian. The metadata always ends with a
//! `header_crc32` line: CRC-32 of the header bytes (magic through the padding
//! before the first payload) with the eight hex digits of that line read as
//! `0`. Readers reject any header whose checksum does not match, so every
//! single-byte header corruption is detected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"NODF1\0";
pub const VERSION: u16 = 1;
pub const CRC_KEY: &str = "header_crc32";
/// Metadata key excluded from content comparisons.
pub const TIMESTAMP_KEY: &str = "created";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Input = 0,
    Output = 1,
    Aux = 2,
}

impl Role {
    fn from_u8(v: u8) -> Option<Role> {
        match v {
            0 => Some(Role::Input),
            1 => Some(Role::Output),
            2 => Some(Role::Aux),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Data {
    F64(Vec<f64>),
    U32(Vec<u32>),
    Bytes(Vec<u8>),
}

impl Data {
    fn dtype(&self) -> u8 {
        match self {
            Data::F64(_) => 0,
            Data::U32(_) => 1,
            Data::Bytes(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Data::F64(v) => v.len(),
            Data::U32(v) => v.len(),
            Data::Bytes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn byte_len(&self) -> usize {
        match self {
            Data::F64(v) => v.len() * 8,
            Data::U32(v) => v.len() * 4,
            Data::Bytes(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub name: String,
    pub role: Role,
    pub dims: Vec<usize>,
    pub data: Data,
}

impl Component {
    pub fn f64(name: impl Into<String>, role: Role, dims: &[usize], data: Vec<f64>) -> Self {
        Component {
            name: name.into(),
            role,
            dims: dims.to_vec(),
            data: Data::F64(data),
        }
    }

    pub fn u32(name: impl Into<String>, role: Role, dims: &[usize], data: Vec<u32>) -> Self {
        Component {
            name: name.into(),
            role,
            dims: dims.to_vec(),
            data: Data::U32(data),
        }
    }

    pub fn bytes(name: impl Into<String>, data: Vec<u8>) -> Self {
        Component {
            name: name.into(),
            role: Role::Aux,
            dims: vec![data.len()],
            data: Data::Bytes(data),
        }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            Data::F64(v) => Ok(v),
            _ => Err(Error::format(format!("component '{}' is not f64", self.name))),
        }
    }

    pub fn as_u32(&self) -> Result<&[u32]> {
        match &self.data {
            Data::U32(v) => Ok(v),
            _ => Err(Error::format(format!("component '{}' is not u32", self.name))),
        }
    }

    pub fn as_bytes(&self) -> Result<&[u8]> {
        match &self.data {
            Data::Bytes(v) => Ok(v),
            _ => Err(Error::format(format!("component '{}' is not raw bytes", self.name))),
        }
    }

    /// Entries per sample (product of dims after the first).
    pub fn sample_len(&self) -> usize {
        self.dims[1..].iter().product()
    }

    /// Slice of sample `i` of a per-sample f64 component.
    pub fn sample(&self, i: usize) -> Result<&[f64]> {
        let n = self.sample_len();
        Ok(&self.as_f64()?[i * n..(i + 1) * n])
    }
}

/// Ordered `key=value` metadata.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.retain(|(k, _)| k != key);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format(format!("metadata key '{key}' missing")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::format(format!("metadata '{key}={raw}' is not valid")))
    }

    fn without(&self, key: &str) -> Metadata {
        Metadata {
            entries: self.entries.iter().filter(|(k, _)| k != key).cloned().collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodfFile {
    pub metadata: Metadata,
    pub components: Vec<Component>,
}

impl NodfFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn component(&self, name: &str) -> Result<&Component> {
        self.components
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::format(format!("component '{name}' not found")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.components.iter().any(|c| c.name == name)
    }

    pub fn push(&mut self, c: Component) {
        self.components.push(c);
    }

    pub fn by_role(&self, role: Role) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(move |c| c.role == role)
    }

    /// Sample count shared by input and output components, if any.
    pub fn n_samples(&self) -> Option<usize> {
        self.components.iter().find(|c| c.role != Role::Aux).map(|c| c.dims[0])
    }

    /// Equality ignoring the creation timestamp.
    pub fn same_content(&self, other: &NodfFile) -> bool {
        self.components == other.components
            && self.metadata.without(TIMESTAMP_KEY) == other.metadata.without(TIMESTAMP_KEY)
    }
}

fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

fn validate(file: &NodfFile) -> Result<()> {
    for (k, v) in file.metadata.iter() {
        if k.is_empty() || k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(contract(format!("invalid metadata entry '{k}'")));
        }
        if k == CRC_KEY {
            return Err(contract(format!("metadata key '{CRC_KEY}' is reserved")));
        }
    }
    let mut samples: Option<usize> = None;
    for c in &file.components {
        if c.name.len() > u16::MAX as usize {
            return Err(contract(format!("component name of {} bytes", c.name.len())));
        }
        if c.dims.len() > u8::MAX as usize || c.dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(contract(format!(
                "component '{}' dims {:?} not representable",
                c.name, c.dims
            )));
        }
        let numel: usize = c.dims.iter().product();
        if numel != c.data.len() {
            return Err(contract(format!(
                "component '{}' dims {:?} need {numel} values, has {}",
                c.name,
                c.dims,
                c.data.len()
            )));
        }
        if c.role != Role::Aux {
            let Some(&n) = c.dims.first() else {
                return Err(contract(format!("per-sample component '{}' has rank 0", c.name)));
            };
            match samples {
                None => samples = Some(n),
                Some(m) if m != n => {
                    return Err(contract(format!(
                        "component '{}' has {n} samples, expected {m}",
                        c.name
                    )));
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn pad_to_8(buf: &mut Vec<u8>) {
    while buf.len() % 8 != 0 {
        buf.push(0);
    }
}

/// Serializes `file` to bytes.
pub fn to_bytes(file: &NodfFile) -> Result<Vec<u8>> {
    validate(file)?;
    let mut meta = String::new();
    for (k, v) in file.metadata.iter() {
        meta.push_str(k);
        meta.push('=');
        meta.push_str(v);
        meta.push('\n');
    }
    meta.push_str(CRC_KEY);
    meta.push('=');
    let crc_value_at = MAGIC.len() + 2 + 4 + meta.len();
    meta.push_str("00000000\n");

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta.as_bytes());
    buf.extend_from_slice(&(file.components.len() as u32).to_le_bytes());
    for c in &file.components {
        buf.extend_from_slice(&(c.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(c.name.as_bytes());
        buf.push(c.role as u8);
        buf.push(c.data.dtype());
        buf.push(c.dims.len() as u8);
        for &d in &c.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    pad_to_8(&mut buf);
    let crc = crc32fast::hash(&buf);
    buf[crc_value_at..crc_value_at + 8].copy_from_slice(format!("{crc:08x}").as_bytes());

    for c in &file.components {
        pad_to_8(&mut buf);
        buf.reserve(c.data.byte_len());
        match &c.data {
            Data::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            Data::U32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            Data::Bytes(v) => buf.extend_from_slice(v),
        }
    }
    Ok(buf)
}

pub fn write_nodf(file: &NodfFile, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(file)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_nodf(path: impl AsRef<Path>) -> Result<NodfFile> {
    from_bytes(&fs::read(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(format!("{field} truncated")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

fn parse_metadata(raw: &[u8]) -> Result<(Metadata, Option<(usize, String)>)> {
    let text = std::str::from_utf8(raw).map_err(|_| Error::format("metadata is not UTF-8"))?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::format("metadata does not end with a newline"));
    }
    let mut meta = Metadata::new();
    let mut crc = None;
    let mut offset = 0;
    for line in text.split_terminator('\n') {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("metadata line '{line}' has no '='")))?;
        if k.is_empty() {
            return Err(Error::format("metadata key is empty"));
        }
        if k == CRC_KEY {
            if crc.is_some() {
                return Err(Error::format("metadata repeats header_crc32"));
            }
            crc = Some((offset + k.len() + 1, v.to_string()));
        } else {
            if meta.get(k).is_some() {
                return Err(Error::format(format!("metadata repeats key '{k}'")));
            }
            meta.entries.push((k.to_string(), v.to_string()));
        }
        offset += line.len() + 1;
    }
    Ok((meta, crc))
}

/// Parses and fully validates a NODF byte image.
pub fn from_bytes(bytes: &[u8]) -> Result<NodfFile> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::format("bad magic"));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let meta_len = cur.u32("metadata length")? as usize;
    let meta_start = cur.pos;
    let raw_meta = cur.take(meta_len, "metadata")?;
    let (metadata, crc) = parse_metadata(raw_meta)?;
    let (crc_off, crc_text) = crc.ok_or_else(|| Error::format("header_crc32 missing"))?;
    let stored = (crc_text.len() == 8
        && crc_text
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
    .then(|| u32::from_str_radix(&crc_text, 16).ok())
    .flatten()
    .ok_or_else(|| Error::format("header_crc32 is not 8 lowercase hex digits"))?;

    let count = cur.u32("component count")? as usize;
    struct Entry {
        name: String,
        role: Role,
        dtype: u8,
        dims: Vec<usize>,
    }
    let mut entries = Vec::new();
    for i in 0..count {
        let name_len = cur.u16("component name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "component name")?)
            .map_err(|_| Error::format(format!("component {i} name is not UTF-8")))?
            .to_string();
        let role = Role::from_u8(cur.u8("component role")?)
            .ok_or_else(|| Error::format(format!("component '{name}' role invalid")))?;
        let dtype = cur.u8("component dtype")?;
        if dtype > 2 {
            return Err(Error::format(format!("component '{name}' dtype {dtype} invalid")));
        }
        let rank = cur.u8("component rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("component dims")? as usize);
        }
        entries.push(Entry {
            name,
            role,
            dtype,
            dims,
        });
    }
    let header_end = cur.pos.div_ceil(8) * 8;
    let padding = cur.take(header_end - cur.pos, "header padding")?;
    if padding.iter().any(|&b| b != 0) {
        return Err(Error::format("header padding is not zero"));
    }
    let mut header = bytes[..header_end].to_vec();
    let at = meta_start + crc_off;
    header[at..at + 8].copy_from_slice(b"00000000");
    if crc32fast::hash(&header) != stored {
        return Err(Error::format("header checksum mismatch"));
    }

    let mut components = Vec::with_capacity(entries.len());
    let mut samples: Option<usize> = None;
    for e in entries {
        let numel = e
            .dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(format!("component '{}' dims overflow", e.name)))?;
        if e.role != Role::Aux {
            let n = *e
                .dims
                .first()
                .ok_or_else(|| Error::format(format!("component '{}' has rank 0", e.name)))?;
            if samples.is_some_and(|m| m != n) {
                return Err(Error::format(format!("component '{}' sample count mismatch", e.name)));
            }
            samples = Some(n);
        }
        let pad = cur.pos.div_ceil(8) * 8 - cur.pos;
        let gap = cur.take(pad, "payload").map_err(|_| Error::format("payload short"))?;
        if gap.iter().any(|&b| b != 0) {
            return Err(Error::format(format!("padding before '{}' is not zero", e.name)));
        }
        let width = [8usize, 4, 1][e.dtype as usize];
        let nbytes = numel
            .checked_mul(width)
            .ok_or_else(|| Error::format(format!("component '{}' size overflow", e.name)))?;
        let raw = cur
            .take(nbytes, "payload")
            .map_err(|_| Error::format("payload short"))?;
        let data = match e.dtype {
            0 => Data::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => Data::U32(
                raw.chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => Data::Bytes(raw.to_vec()),
        };
        components.push(Component {
            name: e.name,
            role: e.role,
            dims: e.dims,
            data,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after payload",
            bytes.len() - cur.pos
        )));
    }
    Ok(NodfFile { metadata, components })
}

/// Length in bytes of the checksummed header of a serialized file.
pub fn header_len(bytes: &[u8]) -> Result<usize> {
    let file = from_bytes(bytes)?;
    let mut len = MAGIC.len() + 2 + 4 + 4;
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    len += meta_len;
    for c in &file.components {
        len += 2 + c.name.len() + 3 + 4 * c.dims.len();
    }
    Ok(len.div_ceil(8) * 8)
}
