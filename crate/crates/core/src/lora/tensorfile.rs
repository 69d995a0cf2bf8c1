//! Tensor container reader/writer.
//!
//! Layout: bytes 0–7 hold an unsigned 64-bit little-endian header length N;
//! bytes 8..8+N hold a UTF-8 JSON object mapping tensor name to
//! `{"dtype", "shape", "data_offsets": [begin, end]}` plus an optional
//! `__metadata__` object; the rest is the data section, with offsets
//! relative to its start. Entries must tile the data section exactly:
//! no overlaps, no gaps, no trailing bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor file io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("tensor file parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },
    #[error("tensor not found: {0}")]
    NotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
    F16,
    BF16,
}

impl Dtype {
    pub fn size(&self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Dtype::F64 => "F64",
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "F64" => Some(Dtype::F64),
            "F32" => Some(Dtype::F32),
            "F16" => Some(Dtype::F16),
            "BF16" => Some(Dtype::BF16),
            _ => None,
        }
    }
}

/// Table-of-contents entry; data lives in the file until loaded.
#[derive(Debug, Clone)]
pub struct TensorMeta {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Offsets into the data section.
    pub begin: u64,
    pub end: u64,
}

impl TensorMeta {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// One named tensor with its payload widened to 64-bit floats.
#[derive(Debug, Clone)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

/// Lazy access: parse and validate the table of contents up front, load
/// tensor payloads one at a time.
#[derive(Debug)]
pub struct TensorFileReader {
    path: PathBuf,
    file: File,
    data_start: u64,
    metas: Vec<TensorMeta>,
    pub metadata: Option<BTreeMap<String, String>>,
}

impl TensorFileReader {
    pub fn open(path: &Path) -> Result<Self, TensorError> {
        let io_err = |source| TensorError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = File::open(path).map_err(io_err)?;
        let file_len = file.metadata().map_err(io_err)?.len();
        if file_len < 8 {
            return Err(TensorError::Parse {
                offset: 0,
                message: format!("file is {file_len} bytes; need 8 for the header length"),
            });
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes).map_err(io_err)?;
        let header_len = u64::from_le_bytes(len_bytes);
        let data_start = 8u64.checked_add(header_len).ok_or(TensorError::Parse {
            offset: 0,
            message: "header length overflows".to_string(),
        })?;
        if data_start > file_len {
            return Err(TensorError::Parse {
                offset: 0,
                message: format!(
                    "header length {header_len} exceeds file size {file_len}"
                ),
            });
        }
        let mut header_bytes = vec![0u8; header_len as usize];
        file.read_exact(&mut header_bytes).map_err(io_err)?;
        let header: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&header_bytes)
            .map_err(|e| TensorError::Parse {
                offset: 8,
                message: format!("header json: {e}"),
            })?;

        let data_len = file_len - data_start;
        let mut metadata = None;
        let mut metas = Vec::new();
        for (name, value) in header {
            if name == "__metadata__" {
                let map: BTreeMap<String, String> =
                    serde_json::from_value(value).map_err(|e| TensorError::Parse {
                        offset: 8,
                        message: format!("__metadata__: {e}"),
                    })?;
                metadata = Some(map);
                continue;
            }
            let entry: HeaderEntry =
                serde_json::from_value(value).map_err(|e| TensorError::Parse {
                    offset: 8,
                    message: format!("tensor {name}: {e}"),
                })?;
            let dtype = Dtype::parse(&entry.dtype).ok_or_else(|| TensorError::Parse {
                offset: 8,
                message: format!("tensor {name}: unknown dtype {:?}", entry.dtype),
            })?;
            let [begin, end] = entry.data_offsets;
            if begin > end {
                return Err(TensorError::Parse {
                    offset: data_start + begin.min(data_len),
                    message: format!("tensor {name}: non-monotone offsets [{begin}, {end}]"),
                });
            }
            let numel: usize = entry.shape.iter().product();
            let expected = (numel * dtype.size()) as u64;
            if end - begin != expected {
                return Err(TensorError::Parse {
                    offset: data_start + begin,
                    message: format!(
                        "tensor {name}: shape {:?} as {} needs {expected} bytes, offsets give {}",
                        entry.shape,
                        dtype.as_str(),
                        end - begin
                    ),
                });
            }
            if end > data_len {
                return Err(TensorError::Parse {
                    offset: file_len,
                    message: format!(
                        "tensor {name}: data end {end} exceeds data section length {data_len} (truncated file?)"
                    ),
                });
            }
            metas.push(TensorMeta {
                name,
                dtype,
                shape: entry.shape,
                begin,
                end,
            });
        }

        metas.sort_by_key(|m| m.begin);
        let mut cursor = 0u64;
        for meta in &metas {
            if meta.begin < cursor {
                return Err(TensorError::Parse {
                    offset: data_start + meta.begin,
                    message: format!("tensor {}: overlapping offsets", meta.name),
                });
            }
            if meta.begin > cursor {
                return Err(TensorError::Parse {
                    offset: data_start + cursor,
                    message: format!("gap in data section before tensor {}", meta.name),
                });
            }
            cursor = meta.end;
        }
        if cursor != data_len {
            return Err(TensorError::Parse {
                offset: data_start + cursor,
                message: format!(
                    "data section has {data_len} bytes but tensors describe {cursor}"
                ),
            });
        }

        Ok(Self {
            path: path.to_path_buf(),
            file,
            data_start,
            metas,
            metadata,
        })
    }

    /// Table of contents in data order.
    pub fn metas(&self) -> &[TensorMeta] {
        &self.metas
    }

    pub fn meta(&self, name: &str) -> Option<&TensorMeta> {
        self.metas.iter().find(|m| m.name == name)
    }

    /// Load one tensor, widening its payload to f64.
    pub fn load(&mut self, name: &str) -> Result<TensorEntry, TensorError> {
        let meta = self
            .metas
            .iter()
            .find(|m| m.name == name)
            .cloned()
            .ok_or_else(|| TensorError::NotFound(name.to_string()))?;
        let io_err = |source| TensorError::Io {
            path: self.path.clone(),
            source,
        };
        self.file
            .seek(SeekFrom::Start(self.data_start + meta.begin))
            .map_err(io_err)?;
        let mut raw = vec![0u8; (meta.end - meta.begin) as usize];
        self.file.read_exact(&mut raw).map_err(io_err)?;
        let data = widen(&raw, meta.dtype);
        Ok(TensorEntry {
            name: meta.name,
            dtype: meta.dtype,
            shape: meta.shape,
            data,
        })
    }

    pub fn load_all(&mut self) -> Result<Vec<TensorEntry>, TensorError> {
        let names: Vec<String> = self.metas.iter().map(|m| m.name.clone()).collect();
        names.into_iter().map(|n| self.load(&n)).collect()
    }
}

/// Eager convenience: every tensor in the file, widened to f64.
pub fn read_tensor_file(path: &Path) -> Result<Vec<TensorEntry>, TensorError> {
    TensorFileReader::open(path)?.load_all()
}

fn widen(raw: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        Dtype::BF16 => raw
            .chunks_exact(2)
            .map(|c| {
                let bits = u16::from_le_bytes(c.try_into().expect("2-byte chunk"));
                f32::from_bits((bits as u32) << 16) as f64
            })
            .collect(),
        Dtype::F16 => raw
            .chunks_exact(2)
            .map(|c| f16_to_f64(u16::from_le_bytes(c.try_into().expect("2-byte chunk"))))
            .collect(),
    }
}

fn f16_to_f64(bits: u16) -> f64 {
    let sign = if bits >> 15 == 1 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let frac = (bits & 0x3ff) as f64;
    let magnitude = match exp {
        0 => frac * 2f64.powi(-24),
        0x1f => {
            if frac == 0.0 {
                f64::INFINITY
            } else {
                f64::NAN
            }
        }
        _ => (1.0 + frac / 1024.0) * 2f64.powi(exp - 15),
    };
    sign * magnitude
}

fn f32_to_f16_bits(value: f32) -> u16 {
    let x = value.to_bits();
    let sign = ((x >> 16) & 0x8000) as u16;
    let exp = ((x >> 23) & 0xff) as i32;
    let frac = x & 0x7f_ffff;
    if exp == 0xff {
        // Inf or NaN.
        return sign | 0x7c00 | if frac != 0 { 0x200 } else { 0 };
    }
    let unbiased = exp - 127 + 15;
    if unbiased >= 0x1f {
        return sign | 0x7c00;
    }
    if unbiased <= 0 {
        if unbiased < -10 {
            return sign;
        }
        let full = frac | 0x80_0000;
        let shift = (14 - unbiased) as u32;
        let mut out = full >> shift;
        let rem = full & ((1 << shift) - 1);
        let half = 1u32 << (shift - 1);
        if rem > half || (rem == half && out & 1 == 1) {
            out += 1;
        }
        return sign | out as u16;
    }
    let mut out = ((unbiased as u32) << 10) | (frac >> 13);
    let rem = frac & 0x1fff;
    if rem > 0x1000 || (rem == 0x1000 && out & 1 == 1) {
        out += 1;
    }
    sign | out as u16
}

fn f32_to_bf16_bits(value: f32) -> u16 {
    let x = value.to_bits();
    if value.is_nan() {
        return ((x >> 16) as u16) | 0x40;
    }
    // Round to nearest even.
    let rounded = x.wrapping_add(0x7fff + ((x >> 16) & 1));
    (rounded >> 16) as u16
}

/// One tensor to serialize.
pub struct TensorWrite<'a> {
    pub name: &'a str,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

/// Write a container with tensors laid out in argument order.
///
/// F64 and F32 payloads round-trip bit-exactly for values representable at
/// that width; F16/BF16 narrow with round-to-nearest-even.
pub fn write_tensor_file(
    path: &Path,
    tensors: &[TensorWrite<'_>],
    metadata: Option<&BTreeMap<String, String>>,
) -> Result<(), TensorError> {
    let mut header = String::from("{");
    let mut first = true;
    if let Some(meta) = metadata {
        header.push_str("\"__metadata__\":");
        header.push_str(&serde_json::to_string(meta).expect("string map serializes"));
        first = false;
    }
    let mut offset = 0u64;
    let mut payload: Vec<u8> = Vec::new();
    for t in tensors {
        let numel: usize = t.shape.iter().product();
        assert_eq!(
            numel,
            t.values.len(),
            "tensor {}: shape does not match value count",
            t.name
        );
        let begin = offset;
        match t.dtype {
            Dtype::F64 => {
                for v in t.values {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
            Dtype::F32 => {
                for v in t.values {
                    payload.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            Dtype::F16 => {
                for v in t.values {
                    payload.extend_from_slice(&f32_to_f16_bits(*v as f32).to_le_bytes());
                }
            }
            Dtype::BF16 => {
                for v in t.values {
                    payload.extend_from_slice(&f32_to_bf16_bits(*v as f32).to_le_bytes());
                }
            }
        }
        offset += (numel * t.dtype.size()) as u64;
        if !first {
            header.push(',');
        }
        first = false;
        header.push_str(&serde_json::to_string(t.name).expect("name serializes"));
        header.push_str(&format!(
            ":{{\"dtype\":\"{}\",\"shape\":{},\"data_offsets\":[{begin},{offset}]}}",
            t.dtype.as_str(),
            serde_json::to_string(&t.shape).expect("shape serializes"),
        ));
    }
    header.push('}');

    let io_err = |source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::create(path).map_err(io_err)?;
    file.write_all(&(header.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    file.write_all(header.as_bytes()).map_err(io_err)?;
    file.write_all(&payload).map_err(io_err)?;
    Ok(())
}
