//! Binary codecs for the two on-disk artifacts: `PCDS` dataset files and
//! `PMLP` parameter checkpoints.
//!
//! Both formats are little-endian and fixed-layout so a roundtrip is bit
//! exact. Writers reject non-finite values up front; readers classify every
//! failure as one of the designated [`FormatError`] kinds (bad magic,
//! unsupported version, truncation, malformed payload) rather than crashing.
//!
//! A checkpoint is a pair of files: `<path>` holds the named tensors in the
//! `PMLP` layout and `<path>.toml` (extension swapped) holds the
//! architecture as a structured text document. [`load_checkpoint`] rebuilds
//! the model from the sidecar and refuses tensor lists that do not match the
//! architecture name-for-name and shape-for-shape.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use pointmlp_core::data::Dataset;
use pointmlp_core::geometry::PointCloud;
use pointmlp_core::model::{Model, ModelConfig};
use pointmlp_core::rng::Xoshiro256StarStar;

/// Leading bytes of a dataset file.
pub const PCDS_MAGIC: [u8; 4] = *b"PCDS";
/// Leading bytes of a checkpoint tensor file.
pub const PMLP_MAGIC: [u8; 4] = *b"PMLP";
/// The single layout revision this build reads and writes.
pub const FORMAT_VERSION: u32 = 1;

/// Everything that can go wrong encoding or decoding an artifact file.
#[derive(Debug)]
pub enum FormatError {
    /// Underlying filesystem failure (open, create, read, write).
    Io(io::Error),
    /// The file does not start with the expected four magic bytes.
    BadMagic {
        /// Magic the decoder was looking for.
        expected: [u8; 4],
        /// Bytes actually present.
        found: [u8; 4],
    },
    /// The file declares a layout revision this build does not understand.
    UnsupportedVersion {
        /// Version found in the header.
        found: u32,
        /// Version this build supports.
        supported: u32,
    },
    /// The payload ended before the declared contents were read.
    Truncated {
        /// Which field was being read when the bytes ran out.
        context: &'static str,
    },
    /// A value was rejected at write time because it is NaN or infinite.
    NonFinite {
        /// Where the offending value sits.
        context: String,
    },
    /// Structurally invalid contents: bad UTF-8, out-of-range label,
    /// inconsistent counts, trailing garbage, or an unparsable sidecar.
    Malformed {
        /// What was inconsistent.
        context: String,
    },
    /// Checkpoint tensors do not match the architecture in the sidecar.
    Mismatch {
        /// Which tensor (or count) disagreed and how.
        context: String,
    },
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::Io(e) => write!(f, "io error: {e}"),
            FormatError::BadMagic { expected, found } => write!(
                f,
                "bad magic: expected {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(found)
            ),
            FormatError::UnsupportedVersion { found, supported } => {
                write!(f, "unsupported format version {found} (this build reads {supported})")
            }
            FormatError::Truncated { context } => {
                write!(f, "truncated file: ran out of bytes reading {context}")
            }
            FormatError::NonFinite { context } => {
                write!(f, "refusing to write non-finite value at {context}")
            }
            FormatError::Malformed { context } => write!(f, "malformed file: {context}"),
            FormatError::Mismatch { context } => {
                write!(f, "checkpoint does not match its architecture: {context}")
            }
        }
    }
}

// `Display` already embeds the underlying io error, so no `source` chain —
// reporters would print the same message twice.
impl std::error::Error for FormatError {}

impl From<io::Error> for FormatError {
    fn from(e: io::Error) -> Self {
        FormatError::Io(e)
    }
}

/// Reads exactly `buf.len()` bytes, classifying a short read as truncation.
fn read_exact(r: &mut impl Read, buf: &mut [u8], context: &'static str) -> Result<(), FormatError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FormatError::Truncated { context }
        } else {
            FormatError::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read, context: &'static str) -> Result<u32, FormatError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, context)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f32(r: &mut impl Read, context: &'static str) -> Result<f32, FormatError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, context)?;
    Ok(f32::from_le_bytes(buf))
}

fn read_string(r: &mut impl Read, context: &'static str) -> Result<String, FormatError> {
    let len = read_u32(r, context)? as usize;
    let mut bytes = vec![0u8; len];
    read_exact(r, &mut bytes, context)?;
    String::from_utf8(bytes).map_err(|_| FormatError::Malformed {
        context: format!("{context}: name is not valid UTF-8"),
    })
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<(), FormatError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_string(w: &mut impl Write, s: &str) -> Result<(), FormatError> {
    let len = u32::try_from(s.len()).map_err(|_| FormatError::Malformed {
        context: format!("name longer than u32: {} bytes", s.len()),
    })?;
    write_u32(w, len)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn as_u32(n: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(n).map_err(|_| FormatError::Malformed {
        context: format!("{what} ({n}) exceeds the u32 field"),
    })
}

/// Checks the magic/version header shared by both formats.
fn read_header(r: &mut impl Read, magic: [u8; 4]) -> Result<(), FormatError> {
    let mut found = [0u8; 4];
    read_exact(r, &mut found, "magic")?;
    if found != magic {
        return Err(FormatError::BadMagic {
            expected: magic,
            found,
        });
    }
    let version = read_u32(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// After the declared contents, any extra byte means the file was not
/// produced by this writer.
fn expect_eof(r: &mut impl Read) -> Result<(), FormatError> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(FormatError::Malformed {
            context: "trailing bytes after the declared contents".into(),
        }),
    }
}

/// Writes `ds` to `path` in the `PCDS` layout: magic, version, class names,
/// then per sample a label and little-endian `f32` coordinate triples.
/// Non-finite coordinates and datasets violating their own invariants
/// (missing or out-of-range labels) are rejected before any bytes are
/// written.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    ds.validate().map_err(|e| FormatError::Malformed {
        context: format!("dataset fails its invariants: {e}"),
    })?;
    for (i, s) in ds.samples.iter().enumerate() {
        for (j, p) in s.coords.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(FormatError::NonFinite {
                    context: format!("sample {i}, point {j}"),
                });
            }
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&PCDS_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, as_u32(ds.class_names.len(), "class count")?)?;
    for name in &ds.class_names {
        write_string(&mut w, name)?;
    }
    write_u32(&mut w, as_u32(ds.samples.len(), "sample count")?)?;
    for s in &ds.samples {
        let label = s.label.expect("validated above");
        write_u32(&mut w, label)?;
        write_u32(&mut w, as_u32(s.coords.len(), "point count")?)?;
        for p in &s.coords {
            for &v in p {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `PCDS` file back into a [`Dataset`]. Labels are checked against
/// the class table and the file must end exactly where its counts say it
/// does.
pub fn read_dataset(path: &Path) -> Result<Dataset, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, PCDS_MAGIC)?;
    let class_count = read_u32(&mut r, "class count")? as usize;
    let mut class_names = Vec::new();
    for _ in 0..class_count {
        class_names.push(read_string(&mut r, "class name")?);
    }
    let sample_count = read_u32(&mut r, "sample count")? as usize;
    let mut samples = Vec::new();
    for i in 0..sample_count {
        let label = read_u32(&mut r, "sample label")?;
        if (label as usize) >= class_count {
            return Err(FormatError::Malformed {
                context: format!("sample {i}: label {label} >= class count {class_count}"),
            });
        }
        let points = read_u32(&mut r, "point count")? as usize;
        let mut coords = Vec::with_capacity(points.min(1 << 16));
        for _ in 0..points {
            let x = read_f32(&mut r, "coordinates")?;
            let y = read_f32(&mut r, "coordinates")?;
            let z = read_f32(&mut r, "coordinates")?;
            coords.push([x, y, z]);
        }
        samples.push(PointCloud {
            coords,
            features: None,
            label: Some(label),
        });
    }
    expect_eof(&mut r)?;
    Ok(Dataset {
        samples,
        class_names,
    })
}

/// One named tensor from a `PMLP` file.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    /// Dotted parameter path, e.g. `stage1.pre0.fc1.weight`.
    pub name: String,
    /// Dimensions; the payload holds their product in row-major order.
    pub shape: Vec<usize>,
    /// Little-endian `f32` payload, decoded.
    pub data: Vec<f32>,
}

/// Writes named tensors to `path` in the `PMLP` layout: magic, version,
/// entry count, then per entry a name, a rank-prefixed shape, and the raw
/// little-endian `f32` payload. Non-finite values are rejected.
pub fn write_tensors(
    entries: &[(String, Vec<usize>, &[f32])],
    path: &Path,
) -> Result<(), FormatError> {
    for (name, shape, data) in entries {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(FormatError::Malformed {
                context: format!(
                    "tensor {name}: shape {shape:?} implies {numel} values, got {}",
                    data.len()
                ),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite {
                context: format!("tensor {name}, element {pos}"),
            });
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&PMLP_MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    write_u32(&mut w, as_u32(entries.len(), "entry count")?)?;
    for (name, shape, data) in entries {
        write_string(&mut w, name)?;
        write_u32(&mut w, as_u32(shape.len(), "rank")?)?;
        for &d in shape {
            write_u32(&mut w, as_u32(d, "dimension")?)?;
        }
        for &v in data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every tensor from a `PMLP` file, in file order.
pub fn read_tensors(path: &Path) -> Result<Vec<TensorEntry>, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r, PMLP_MAGIC)?;
    let count = read_u32(&mut r, "entry count")? as usize;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name = read_string(&mut r, "tensor name")?;
        let rank = read_u32(&mut r, "tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(read_u32(&mut r, "tensor shape")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| FormatError::Malformed {
                context: format!("tensor {name}: shape {shape:?} overflows"),
            })?;
        let mut data = Vec::with_capacity(numel.min(1 << 22));
        for _ in 0..numel {
            data.push(read_f32(&mut r, "tensor payload")?);
        }
        entries.push(TensorEntry { name, shape, data });
    }
    expect_eof(&mut r)?;
    Ok(entries)
}

/// The architecture sidecar written next to a checkpoint: same path with the
/// extension swapped to `toml`.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("toml")
}

/// Saves `model` as a checkpoint pair: tensors at `path` (`PMLP`) and the
/// architecture at [`sidecar_path`] as TOML. Tensor order follows the
/// model's canonical walk, so identical models produce identical bytes.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), FormatError> {
    let entries = model.tensors();
    write_tensors(&entries, path)?;
    let text = toml::to_string_pretty(model.config()).map_err(|e| FormatError::Malformed {
        context: format!("architecture does not serialize: {e}"),
    })?;
    fs::write(sidecar_path(path), text)?;
    Ok(())
}

/// Reads the architecture sidecar alone.
pub fn load_config(checkpoint: &Path) -> Result<ModelConfig, FormatError> {
    let text = fs::read_to_string(sidecar_path(checkpoint))?;
    toml::from_str(&text).map_err(|e| FormatError::Malformed {
        context: format!("architecture sidecar: {e}"),
    })
}

/// Rebuilds a model from a checkpoint pair. The tensor list must match the
/// architecture's canonical walk exactly — same count, names, and shapes —
/// otherwise the checkpoint and sidecar belong to different models.
pub fn load_checkpoint(path: &Path) -> Result<Model, FormatError> {
    let config = load_config(path)?;
    let mut model =
        Model::new(config, &mut Xoshiro256StarStar::seed_from_u64(0)).map_err(|e| {
            FormatError::Malformed {
                context: format!("architecture sidecar is not buildable: {e}"),
            }
        })?;
    let entries = read_tensors(path)?;
    {
        let slots = model.tensors_mut();
        if slots.len() != entries.len() {
            return Err(FormatError::Mismatch {
                context: format!(
                    "architecture has {} tensors, checkpoint holds {}",
                    slots.len(),
                    entries.len()
                ),
            });
        }
        for ((name, shape, slot), entry) in slots.into_iter().zip(&entries) {
            if name != entry.name {
                return Err(FormatError::Mismatch {
                    context: format!("expected tensor {name}, checkpoint has {}", entry.name),
                });
            }
            if shape != entry.shape {
                return Err(FormatError::Mismatch {
                    context: format!(
                        "tensor {name}: architecture shape {shape:?}, checkpoint shape {:?}",
                        entry.shape
                    ),
                });
            }
            slot.copy_from_slice(&entry.data);
        }
    }
    Ok(model)
}
