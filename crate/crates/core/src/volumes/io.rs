//! NIfTI-1 (single file, `.nii`) and raw-blob readers and writers.
//!
//! Only the header subset needed for pre-aligned volumes is honoured: grid
//! dimensions, data type, voxel sizes and intensity scaling. Orientation
//! matrices are read and, when they are not the identity, ignored with a
//! warning.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::field_ops::DisplacementField;
use crate::volumes::{numel, LabelMap, Shape, Volume};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;
const INTENT_VECTOR: i16 = 1007;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    Nifti1,
    Raw,
}

impl FileFormat {
    /// `.nii` selects NIfTI-1, anything else the raw blob format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("nii") => FileFormat::Nifti1,
            _ => FileFormat::Raw,
        }
    }
}

impl std::str::FromStr for FileFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nifti1" | "nifti" | "nii" => Ok(FileFormat::Nifti1),
            "raw" => Ok(FileFormat::Raw),
            other => Err(Error::Config(format!("unknown file format `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Dtype {
    fn nifti_code(self) -> i16 {
        match self {
            Dtype::U8 => 2,
            Dtype::I16 => 4,
            Dtype::I32 => 8,
            Dtype::F32 => 16,
            Dtype::F64 => 64,
        }
    }

    fn from_nifti_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Dtype::U8,
            4 => Dtype::I16,
            8 => Dtype::I32,
            16 => Dtype::F32,
            64 => Dtype::F64,
            _ => return None,
        })
    }

    fn bytes(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::I32 | Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "uint8",
            Dtype::I16 => "int16",
            Dtype::I32 => "int32",
            Dtype::F32 => "float32",
            Dtype::F64 => "float64",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "uint8" => Dtype::U8,
            "int16" => Dtype::I16,
            "int32" => Dtype::I32,
            "float32" => Dtype::F32,
            "float64" => Dtype::F64,
            _ => return None,
        })
    }
}

/// Decoded voxel payload: channel-major, x fastest within a channel.
#[derive(Clone, Debug)]
struct Grid {
    shape: Shape,
    channels: usize,
    values: Vec<f64>,
}

fn decode<B: ByteOrder>(bytes: &[u8], dtype: Dtype, count: usize) -> Vec<f64> {
    let mut cur = Cursor::new(bytes);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        // Length was checked by the caller.
        let v = match dtype {
            Dtype::U8 => cur.read_u8().map(f64::from),
            Dtype::I16 => cur.read_i16::<B>().map(f64::from),
            Dtype::I32 => cur.read_i32::<B>().map(f64::from),
            Dtype::F32 => cur.read_f32::<B>().map(f64::from),
            Dtype::F64 => cur.read_f64::<B>(),
        };
        out.push(v.expect("payload length checked"));
    }
    out
}

fn encode(values: &[f64], dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * dtype.bytes());
    for &v in values {
        // Writes into a Vec cannot fail.
        let _ = match dtype {
            Dtype::U8 => out.write_u8(v as u8),
            Dtype::I16 => out.write_i16::<LittleEndian>(v as i16),
            Dtype::I32 => out.write_i32::<LittleEndian>(v as i32),
            Dtype::F32 => out.write_f32::<LittleEndian>(v as f32),
            Dtype::F64 => out.write_f64::<LittleEndian>(v),
        };
    }
    out
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_nifti(path: &Path) -> Result<Grid> {
    let bytes = read_file(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(path, "shorter than a NIfTI-1 header"));
    }
    let hdr = &bytes[..HEADER_SIZE];
    if LittleEndian::read_i32(&hdr[0..4]) == HEADER_SIZE as i32 {
        parse_nifti::<LittleEndian>(path, &bytes)
    } else if BigEndian::read_i32(&hdr[0..4]) == HEADER_SIZE as i32 {
        parse_nifti::<BigEndian>(path, &bytes)
    } else {
        Err(Error::format(path, "sizeof_hdr is not 348"))
    }
}

fn parse_nifti<B: ByteOrder>(path: &Path, bytes: &[u8]) -> Result<Grid> {
    let hdr = &bytes[..HEADER_SIZE];
    let magic = &hdr[344..348];
    let paired = match magic {
        b"n+1\0" => false,
        b"ni1\0" => true,
        _ => return Err(Error::format(path, "bad magic (expected \"n+1\" or \"ni1\")")),
    };
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = B::read_i16(&hdr[40 + 2 * i..42 + 2 * i]);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(path, format!("dim[0] = {ndim} out of range")));
    }
    let extent = |i: usize| -> usize {
        if (i as i16) <= ndim {
            dim[i].max(1) as usize
        } else {
            1
        }
    };
    if (1..=ndim as usize).any(|i| dim[i] < 1) {
        return Err(Error::format(path, "non-positive grid dimension"));
    }
    let (nx, ny, nz) = (extent(1), extent(2), extent(3));
    let channels: usize = (4..=7).map(extent).product();
    let code = B::read_i16(&hdr[70..72]);
    let dtype = Dtype::from_nifti_code(code).ok_or(Error::UnsupportedDtype {
        path: path.to_path_buf(),
        code,
    })?;
    let vox_offset = B::read_f32(&hdr[108..112]);
    let slope = B::read_f32(&hdr[112..116]);
    let inter = B::read_f32(&hdr[116..120]);
    warn_on_affine::<B>(path, hdr);

    let shape = [nz, ny, nx];
    let count = numel(shape) * channels;
    let payload_owned;
    let payload: &[u8] = if paired {
        payload_owned = read_file(&path.with_extension("img"))?;
        &payload_owned
    } else {
        let start = (vox_offset.max(DATA_OFFSET as f32)) as usize;
        bytes.get(start..).unwrap_or(&[])
    };
    if payload.len() < count * dtype.bytes() {
        return Err(Error::format(
            path,
            format!("payload holds {} bytes, need {}", payload.len(), count * dtype.bytes()),
        ));
    }
    let mut values = decode::<B>(payload, dtype, count);
    if slope != 0.0 && (slope != 1.0 || inter != 0.0) {
        for v in &mut values {
            *v = *v * f64::from(slope) + f64::from(inter);
        }
    }
    Ok(Grid {
        shape,
        channels,
        values,
    })
}

fn warn_on_affine<B: ByteOrder>(path: &Path, hdr: &[u8]) {
    let f = |o: usize| B::read_f32(&hdr[o..o + 4]);
    let sform = B::read_i16(&hdr[254..256]);
    let qform = B::read_i16(&hdr[252..254]);
    let mut identity = true;
    if sform > 0 {
        for r in 0..3 {
            for c in 0..4 {
                let want = if r == c { 1.0 } else { 0.0 };
                if (f(280 + 16 * r + 4 * c) - want).abs() > 1e-6 {
                    identity = false;
                }
            }
        }
    } else if qform > 0 {
        identity = (256..280).step_by(4).all(|o| f(o) == 0.0);
    }
    if !identity {
        log::warn!(
            "{}: non-identity orientation affine ignored; data used in stored voxel order",
            path.display()
        );
    }
}

fn write_nifti(path: &Path, grid: &Grid, dtype: Dtype) -> Result<()> {
    let mut hdr = vec![0u8; DATA_OFFSET];
    LittleEndian::write_i32(&mut hdr[0..4], HEADER_SIZE as i32);
    hdr[38] = b'r';
    let [nz, ny, nx] = grid.shape;
    let dims: [i16; 8] = if grid.channels == 1 {
        [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1]
    } else {
        [5, nx as i16, ny as i16, nz as i16, 1, grid.channels as i16, 1, 1]
    };
    if grid.shape.iter().chain([&grid.channels]).any(|&n| n > i16::MAX as usize) {
        return Err(Error::Shape(format!("{:?} exceeds NIfTI-1 limits", grid.shape)));
    }
    for (i, d) in dims.iter().enumerate() {
        LittleEndian::write_i16(&mut hdr[40 + 2 * i..42 + 2 * i], *d);
    }
    if grid.channels > 1 {
        LittleEndian::write_i16(&mut hdr[68..70], INTENT_VECTOR);
    }
    LittleEndian::write_i16(&mut hdr[70..72], dtype.nifti_code());
    LittleEndian::write_i16(&mut hdr[72..74], (dtype.bytes() * 8) as i16);
    for i in 0..8 {
        LittleEndian::write_f32(&mut hdr[76 + 4 * i..80 + 4 * i], 1.0);
    }
    LittleEndian::write_f32(&mut hdr[108..112], DATA_OFFSET as f32);
    LittleEndian::write_f32(&mut hdr[112..116], 1.0);
    hdr[123] = 2; // spatial units: mm
    LittleEndian::write_i16(&mut hdr[254..256], 1);
    for r in 0..3 {
        LittleEndian::write_f32(&mut hdr[280 + 16 * r + 4 * r..284 + 16 * r + 4 * r], 1.0);
    }
    hdr[344..348].copy_from_slice(b"n+1\0");
    hdr.extend_from_slice(&encode(&grid.values, dtype));
    write_atomic(path, &hdr)
}

fn descriptor_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

fn write_raw(path: &Path, grid: &Grid, dtype: Dtype) -> Result<()> {
    let desc = format!(
        "dtype {}\nshape {} {} {}\nchannels {}\norder x-fastest\nendian little\n",
        dtype.name(),
        grid.shape[0],
        grid.shape[1],
        grid.shape[2],
        grid.channels
    );
    write_atomic(path, &encode(&grid.values, dtype))?;
    write_atomic(&descriptor_path(path), desc.as_bytes())
}

fn read_raw(path: &Path) -> Result<Grid> {
    let desc_path = descriptor_path(path);
    let mut text = String::new();
    fs::File::open(&desc_path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(&desc_path, e))?;
    let mut dtype = None;
    let mut shape = None;
    let mut channels = 1usize;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        let bad = |what: &str| Error::format(&desc_path, format!("bad `{what}` line: {line}"));
        match key {
            "dtype" => {
                let name = rest.first().ok_or_else(|| bad("dtype"))?;
                dtype = Some(Dtype::from_name(name).ok_or_else(|| {
                    Error::format(&desc_path, format!("unsupported dtype `{name}`"))
                })?);
            }
            "shape" => {
                let dims: Vec<usize> = rest
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad("shape")))
                    .collect::<Result<_>>()?;
                if dims.len() != 3 || dims.contains(&0) {
                    return Err(bad("shape"));
                }
                shape = Some([dims[0], dims[1], dims[2]]);
            }
            "channels" => {
                channels = rest
                    .first()
                    .and_then(|s| s.parse().ok())
                    .filter(|&c| c >= 1)
                    .ok_or_else(|| bad("channels"))?;
            }
            "order" => {
                if rest.first() != Some(&"x-fastest") {
                    return Err(bad("order"));
                }
            }
            "endian" => {
                if rest.first() != Some(&"little") {
                    return Err(bad("endian"));
                }
            }
            _ => return Err(Error::format(&desc_path, format!("unknown key `{key}`"))),
        }
    }
    let dtype = dtype.ok_or_else(|| Error::format(&desc_path, "missing dtype"))?;
    let shape = shape.ok_or_else(|| Error::format(&desc_path, "missing shape"))?;
    let bytes = read_file(path)?;
    let count = numel(shape) * channels;
    if bytes.len() != count * dtype.bytes() {
        return Err(Error::format(
            path,
            format!("{} bytes, descriptor implies {}", bytes.len(), count * dtype.bytes()),
        ));
    }
    Ok(Grid {
        shape,
        channels,
        values: decode::<LittleEndian>(&bytes, dtype, count),
    })
}

fn read_grid(path: &Path, format: FileFormat) -> Result<Grid> {
    match format {
        FileFormat::Nifti1 => read_nifti(path),
        FileFormat::Raw => read_raw(path),
    }
}

fn write_grid(path: &Path, format: FileFormat, grid: &Grid, dtype: Dtype) -> Result<()> {
    match format {
        FileFormat::Nifti1 => write_nifti(path, grid, dtype),
        FileFormat::Raw => write_raw(path, grid, dtype),
    }
}

pub fn load_volume(path: impl AsRef<Path>, format: FileFormat) -> Result<Volume> {
    let path = path.as_ref();
    let grid = read_grid(path, format)?;
    if grid.channels != 1 {
        return Err(Error::format(path, format!("expected 1 channel, found {}", grid.channels)));
    }
    let data = grid.values.iter().map(|&v| v as f32).collect();
    Volume::new(grid.shape, data).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes float32 voxels.
pub fn save_volume(vol: &Volume, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let grid = Grid {
        shape: vol.shape(),
        channels: 1,
        values: vol.data().iter().map(|&v| f64::from(v)).collect(),
    };
    write_grid(path.as_ref(), format, &grid, Dtype::F32)
}

pub fn load_labels(path: impl AsRef<Path>, format: FileFormat) -> Result<LabelMap> {
    let path = path.as_ref();
    let grid = read_grid(path, format)?;
    if grid.channels != 1 {
        return Err(Error::format(path, format!("expected 1 channel, found {}", grid.channels)));
    }
    let data = grid
        .values
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
                Ok(v as u32)
            } else {
                Err(Error::format(path, format!("label value {v} is not a non-negative integer")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(grid.shape, data)
}

/// Writes the narrowest integer type that holds every label.
pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let max = labels.data().iter().copied().max().unwrap_or(0);
    let dtype = if max <= u8::MAX as u32 {
        Dtype::U8
    } else if max <= i16::MAX as u32 {
        Dtype::I16
    } else if max <= i32::MAX as u32 {
        Dtype::I32
    } else {
        Dtype::F64
    };
    let grid = Grid {
        shape: labels.shape(),
        channels: 1,
        values: labels.data().iter().map(|&v| f64::from(v)).collect(),
    };
    write_grid(path.as_ref(), format, &grid, dtype)
}

/// Loads a 3-channel displacement field (components planar, x then y then z).
pub fn load_field(path: impl AsRef<Path>, format: FileFormat) -> Result<DisplacementField> {
    let path = path.as_ref();
    let grid = read_grid(path, format)?;
    if grid.channels != 3 {
        return Err(Error::format(path, format!("expected 3 channels, found {}", grid.channels)));
    }
    let data = grid.values.iter().map(|&v| v as f32).collect();
    DisplacementField::new(grid.shape, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_field(field: &DisplacementField, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let grid = Grid {
        shape: field.shape(),
        channels: 3,
        values: field.data().iter().map(|&v| f64::from(v)).collect(),
    };
    write_grid(path.as_ref(), format, &grid, Dtype::F32)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled NIfTI-1 file, independent of the writer above.
    fn reference_nifti(dims: [i16; 3], datatype: i16, bitpix: i16, payload: &[u8], magic: &[u8; 4]) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        b[0..4].copy_from_slice(&348i32.to_le_bytes());
        b[40..42].copy_from_slice(&3i16.to_le_bytes());
        for (i, d) in dims.iter().enumerate() {
            b[42 + 2 * i..44 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        b[70..72].copy_from_slice(&datatype.to_le_bytes());
        b[72..74].copy_from_slice(&bitpix.to_le_bytes());
        b[108..112].copy_from_slice(&352f32.to_le_bytes());
        b[344..348].copy_from_slice(magic);
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn reads_independent_float32_nifti() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.nii");
        let values: Vec<f32> = (0..64).map(|i| i as f32 * 0.25 - 3.0).collect();
        let payload: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&path, reference_nifti([4, 4, 4], 16, 32, &payload, b"n+1\0")).unwrap();
        let vol = load_volume(&path, FileFormat::Nifti1).unwrap();
        assert_eq!(vol.shape(), [4, 4, 4]);
        assert_eq!(vol.data(), values.as_slice());
    }

    #[test]
    fn reads_big_endian_and_x_fastest_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.nii");
        let mut b = vec![0u8; 352];
        b[0..4].copy_from_slice(&348i32.to_be_bytes());
        for (i, d) in [3i16, 3, 2, 1].iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_be_bytes());
        }
        b[70..72].copy_from_slice(&4i16.to_be_bytes());
        b[108..112].copy_from_slice(&352f32.to_be_bytes());
        b[344..348].copy_from_slice(b"n+1\0");
        for v in 0i16..6 {
            b.extend_from_slice(&v.to_be_bytes());
        }
        fs::write(&path, b).unwrap();
        let vol = load_volume(&path, FileFormat::Nifti1).unwrap();
        assert_eq!(vol.shape(), [1, 2, 3]);
        assert_eq!(vol.get(2, 1, 0), 5.0);
        assert_eq!(vol.get(1, 0, 0), 1.0);
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nii");
        fs::write(&path, reference_nifti([2, 2, 2], 16, 32, &[0u8; 32], b"xx1\0")).unwrap();
        assert!(matches!(load_volume(&path, FileFormat::Nifti1), Err(Error::Format { .. })));
        fs::write(&path, reference_nifti([2, 2, 2], 32, 64, &[0u8; 128], b"n+1\0")).unwrap();
        assert!(matches!(
            load_volume(&path, FileFormat::Nifti1),
            Err(Error::UnsupportedDtype { code: 32, .. })
        ));
        fs::write(&path, [0u8; 100]).unwrap();
        assert!(matches!(load_volume(&path, FileFormat::Nifti1), Err(Error::Format { .. })));
    }

    #[test]
    fn paired_header_reads_img() {
        let dir = tempfile::tempdir().unwrap();
        let hdr = dir.path().join("pair.hdr");
        let mut b = reference_nifti([2, 1, 1], 2, 8, &[], b"ni1\0");
        b.truncate(348);
        fs::write(&hdr, b).unwrap();
        fs::write(dir.path().join("pair.img"), [7u8, 9]).unwrap();
        let l = load_labels(&hdr, FileFormat::Nifti1).unwrap();
        assert_eq!(l.data(), &[7, 9]);
    }

    #[test]
    fn raw_round_trip_and_descriptor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.raw");
        let vol = Volume::new([2, 2, 2], (0..8).map(|i| i as f32 * 1.5).collect()).unwrap();
        save_volume(&vol, &path, FileFormat::Raw).unwrap();
        let text = fs::read_to_string(dir.path().join("v.raw.txt")).unwrap();
        assert!(text.contains("dtype float32"));
        assert!(text.contains("shape 2 2 2"));
        assert_eq!(load_volume(&path, FileFormat::Raw).unwrap(), vol);
    }

    #[test]
    fn constant_and_label_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        for format in [FileFormat::Nifti1, FileFormat::Raw] {
            let path = dir.path().join(match format {
                FileFormat::Nifti1 => "c.nii",
                FileFormat::Raw => "c.raw",
            });
            let vol = Volume::filled([4, 4, 4], 0.5f32);
            save_volume(&vol, &path, format).unwrap();
            assert_eq!(load_volume(&path, format).unwrap(), vol);

            let labels = LabelMap::from_fn([4, 4, 4], |x, y, z| ((x + y * z) % 5) as u32 * 100);
            save_labels(&labels, &path, format).unwrap();
            let back = load_labels(&path, format).unwrap();
            assert_eq!(back.histogram(), labels.histogram());
            assert_eq!(back, labels);
        }
    }

    #[test]
    fn field_round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let field = DisplacementField::from_fn([2, 3, 4], |x, y, z| {
            [x as f32 * 0.5, -(y as f32), z as f32 + 0.25]
        });
        for name in ["f.nii", "f.raw"] {
            let path = dir.path().join(name);
            let format = FileFormat::from_path(&path);
            save_field(&field, &path, format).unwrap();
            assert_eq!(load_field(&path, format).unwrap(), field);
        }
        assert!(load_volume(dir.path().join("f.nii"), FileFormat::Nifti1).is_err());
    }

    #[test]
    fn missing_file_has_path_context() {
        let err = load_volume("/nonexistent/dir/x.nii", FileFormat::Nifti1).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.nii"));
        let err = save_volume(&Volume::filled([1, 1, 1], 0.0), "/nonexistent/dir/y.nii", FileFormat::Nifti1)
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
