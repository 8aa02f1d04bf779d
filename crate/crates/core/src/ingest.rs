//! File formats: PNG rasters, the `.unr` unary container, and dataset pairing.
//!
//! `.unr` layout (all little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `UNR1`                            |
//! | 4      | 4    | width (`u32`)                           |
//! | 8      | 4    | height (`u32`)                          |
//! | 12     | 4    | num_classes (`u32`)                     |
//! | 16     | 4·N  | `f32` scores, row-major, class fastest  |

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::types::{ClassPalette, DepthImage, LabelMap, RgbImage, UnaryField};

pub const UNARY_MAGIC: &[u8; 4] = b"UNR1";
pub const UNARY_HEADER_LEN: usize = 16;

/// Magic of the `f32` raster written for normalized depth.
pub const DEPTH_RASTER_MAGIC: &[u8; 4] = b"NDP1";

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct DecodedPng {
    width: usize,
    height: usize,
    color: png::ColorType,
    bit_depth: png::BitDepth,
    data: Vec<u8>,
}

fn malformed(path: &Path, e: impl ToString) -> Error {
    Error::MalformedPng {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn decode_png(path: &Path) -> Result<DecodedPng> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::NotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| malformed(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| malformed(path, "image too large"))?;
    let mut data = vec![0; size];
    let info = reader.next_frame(&mut data).map_err(|e| malformed(path, e))?;
    data.truncate(info.buffer_size());
    Ok(DecodedPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        bit_depth: info.bit_depth,
        data,
    })
}

fn encode_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(depth);
        if let Some(p) = palette {
            encoder.set_palette(p);
        }
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

/// Loads an 8-bit RGB or RGBA PNG; alpha is discarded.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let png = decode_png(path)?;
    if png.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            expected: "8-bit RGB/RGBA",
            found: png.bit_depth as u8,
        });
    }
    let data = match png.color {
        png::ColorType::Rgb => png.data,
        png::ColorType::Rgba => png
            .data
            .chunks_exact(4)
            .flat_map(|px| [px[0], px[1], px[2]])
            .collect(),
        other => {
            return Err(Error::UnsupportedColorType {
                path: path.to_path_buf(),
                expected: "RGB or RGBA",
                found: format!("{other:?}"),
            })
        }
    };
    RgbImage::new(png.width, png.height, data)
}

pub fn save_rgb(image: &RgbImage, path: &Path) -> Result<()> {
    let bytes = encode_png(
        image.width(),
        image.height(),
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        None,
        image.data(),
    )?;
    write_atomic(path, &bytes)
}

/// Loads a single-channel 16-bit grayscale PNG with samples preserved exactly.
pub fn load_depth(path: &Path) -> Result<DepthImage> {
    let png = decode_png(path)?;
    if png.color != png::ColorType::Grayscale {
        return Err(Error::UnsupportedColorType {
            path: path.to_path_buf(),
            expected: "single-channel 16-bit grayscale",
            found: format!("{:?}", png.color),
        });
    }
    if png.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            expected: "16-bit grayscale",
            found: png.bit_depth as u8,
        });
    }
    let data = png
        .data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    DepthImage::new(png.width, png.height, data)
}

pub fn save_depth(depth: &DepthImage, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = depth.data().iter().flat_map(|d| d.to_be_bytes()).collect();
    let png = encode_png(
        depth.width(),
        depth.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        None,
        &bytes,
    )?;
    write_atomic(path, &png)
}

pub fn encode_unary(field: &UnaryField) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(UNARY_HEADER_LEN + 4 * field.scores().len());
    out.extend_from_slice(UNARY_MAGIC);
    for dim in [field.width(), field.height(), field.num_classes()] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Dimension(format!("{dim} does not fit in u32")))?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    for (index, &s) in field.scores().iter().enumerate() {
        let v = s as f32;
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_unary(bytes: &[u8]) -> Result<UnaryField> {
    if bytes.len() < UNARY_HEADER_LEN {
        return Err(Error::Truncated {
            expected: UNARY_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != UNARY_MAGIC {
        return Err(Error::BadMagic {
            expected: "UNR1",
            found: magic,
        });
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (width, height, k) = (word(4), word(8), word(12));
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(k))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Dimension("unary header sizes overflow".into()))?;
    let payload = &bytes[UNARY_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let mut scores = Vec::with_capacity(expected / 4);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        scores.push(v as f64);
    }
    UnaryField::new(width, height, k, scores)
}

pub fn load_unary(path: &Path) -> Result<UnaryField> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => e.into(),
    })?;
    decode_unary(&bytes)
}

/// Scores are stored as `f32`; values are rounded on the way out.
pub fn save_unary(field: &UnaryField, path: &Path) -> Result<()> {
    write_atomic(path, &encode_unary(field)?)
}

/// Loads an 8-bit grayscale or indexed PNG whose sample values are class indices.
pub fn load_label_map(path: &Path, palette: &ClassPalette) -> Result<LabelMap> {
    let png = decode_png(path)?;
    match png.color {
        png::ColorType::Grayscale | png::ColorType::Indexed => {}
        other => {
            return Err(Error::UnsupportedColorType {
                path: path.to_path_buf(),
                expected: "8-bit grayscale or indexed",
                found: format!("{other:?}"),
            })
        }
    }
    if png.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth {
            path: path.to_path_buf(),
            expected: "8-bit labels",
            found: png.bit_depth as u8,
        });
    }
    let map = LabelMap::new(png.width, png.height, png.data)?;
    map.check_range(palette.len())?;
    Ok(map)
}

/// Writes the index map as 8-bit grayscale and, when `rendered` is given, a
/// palette-colored RGB companion.
pub fn save_label_map(
    map: &LabelMap,
    palette: &ClassPalette,
    path: &Path,
    rendered: Option<&Path>,
) -> Result<()> {
    map.check_range(palette.len())?;
    let png = encode_png(
        map.width(),
        map.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        None,
        map.labels(),
    )?;
    write_atomic(path, &png)?;
    if let Some(out) = rendered {
        let data = map
            .labels()
            .iter()
            .flat_map(|&l| palette.color(l))
            .collect();
        save_rgb(&RgbImage::new(map.width(), map.height(), data)?, out)?;
    }
    Ok(())
}

/// Writes a `NDP1` raster: magic, `u32` width, `u32` height, then `f32`
/// samples, little-endian and row-major.
pub fn save_depth_raster(width: usize, height: usize, data: &[f64], path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(12 + 4 * data.len());
    out.extend_from_slice(DEPTH_RASTER_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &out)
}

pub fn load_depth_raster(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != DEPTH_RASTER_MAGIC {
        return Err(Error::BadMagic {
            expected: "NDP1",
            found: magic,
        });
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + 4 * w * h {
        return Err(Error::Truncated {
            expected: 12 + 4 * w * h,
            found: bytes.len(),
        });
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((w, h, data))
}

/// One RGB-D frame with its unary scores and optional ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSample {
    pub id: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub unary: PathBuf,
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct Pairing {
    pub samples: Vec<DatasetSample>,
    /// Ids skipped because an input was missing.
    pub warnings: Vec<String>,
}

fn ids_in(dir: &Path, ext: &str) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Pairs `rgb/<id>.png`, `depth/<id>.png`, `unary/<id>.unr` and optional
/// `gt/<id>.png` under `root`. Samples come back sorted by id.
pub fn pair_dataset(root: &Path) -> Result<Pairing> {
    fs::read_dir(root)?;
    let rgb = ids_in(&root.join("rgb"), "png")?;
    let depth = ids_in(&root.join("depth"), "png")?;
    let unary = ids_in(&root.join("unary"), "unr")?;
    let gt = ids_in(&root.join("gt"), "png")?;

    let mut all: Vec<&String> = rgb.iter().chain(&depth).chain(&unary).collect();
    all.sort();
    all.dedup();

    let mut pairing = Pairing::default();
    for id in all {
        let has = |v: &[String]| v.binary_search(id).is_ok();
        let missing: Vec<&str> = [("rgb", has(&rgb)), ("depth", has(&depth)), ("unary", has(&unary))]
            .into_iter()
            .filter(|(_, present)| !present)
            .map(|(name, _)| name)
            .collect();
        if !missing.is_empty() {
            let msg = format!("sample {id} skipped: missing {}", missing.join(", "));
            warn!("{msg}");
            pairing.warnings.push(msg);
            continue;
        }
        pairing.samples.push(DatasetSample {
            id: id.clone(),
            rgb: root.join("rgb").join(format!("{id}.png")),
            depth: root.join("depth").join(format!("{id}.png")),
            unary: root.join("unary").join(format!("{id}.unr")),
            gt: has(&gt).then(|| root.join("gt").join(format!("{id}.png"))),
        });
    }
    Ok(pairing)
}
