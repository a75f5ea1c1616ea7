//! VOC-2012-style dataset ingestion.
//!
//! Layout under the dataset root:
//!
//! ```text
//! JPEGImages/<stem>.{jpg,jpeg,png}
//! SegmentationObject/<stem>.png   instance ids (0 = background, 255 = void)
//! SegmentationClass/<stem>.png    class ids    (0 = background, 255 = void)
//! ```
//!
//! Annotation PNGs are read as raw palette indices (or 8-bit gray values),
//! never through the palette colours.

pub mod synth;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::ImageSample;

pub const IMAGE_DIR: &str = "JPEGImages";
pub const OBJECT_DIR: &str = "SegmentationObject";
pub const CLASS_DIR: &str = "SegmentationClass";

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub const VOID_INDEX: u8 = 255;

pub const VOC_CLASSES: [&str; 21] = [
    "background",
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

pub fn class_name(index: u8) -> String {
    VOC_CLASSES
        .get(index as usize)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("class{index}"))
}

pub fn class_index(name: &str) -> Option<u8> {
    VOC_CLASSES.iter().position(|c| *c == name).map(|i| i as u8)
}

/// The standard VOC colour map (index -> RGB).
pub fn voc_palette() -> Vec<u8> {
    let mut pal = Vec::with_capacity(768);
    for i in 0..256u32 {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = i;
        for j in 0..8 {
            r |= (((c >> 0) & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        pal.extend_from_slice(&[r, g, b]);
    }
    pal
}

/// One annotated object instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: u8,
    pub label: String,
    /// H×W, entries in {0, 1}
    pub mask: Array2<u8>,
}

#[derive(Clone, Debug)]
pub struct VocDataset {
    root: PathBuf,
    size: Option<(usize, usize)>,
}

impl VocDataset {
    /// Opens a dataset root; images and annotations are resized to `size`
    /// (bilinear for pixels, nearest for labels) when given.
    pub fn open(root: impl Into<PathBuf>, size: Option<(usize, usize)>) -> Result<Self> {
        let root = root.into();
        if !root.join(IMAGE_DIR).is_dir() {
            return Err(Error::MissingArtifact(root.join(IMAGE_DIR)));
        }
        Ok(Self { root, size })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn size(&self) -> Option<(usize, usize)> {
        self.size
    }

    /// Sorted image stems.
    pub fn stems(&self) -> Result<Vec<String>> {
        let mut stems = Vec::new();
        for entry in std::fs::read_dir(self.root.join(IMAGE_DIR))? {
            let path = entry?.path();
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    stems.push(stem.to_owned());
                }
            }
        }
        stems.sort();
        stems.dedup();
        Ok(stems)
    }

    pub fn image_path(&self, stem: &str) -> Result<PathBuf> {
        IMAGE_EXTENSIONS
            .iter()
            .map(|ext| self.root.join(IMAGE_DIR).join(format!("{stem}.{ext}")))
            .find(|p| p.is_file())
            .ok_or_else(|| Error::MissingArtifact(self.root.join(IMAGE_DIR).join(stem)))
    }

    pub fn load_image(&self, stem: &str) -> Result<ImageSample> {
        let mut img = ImageSample::load(&self.image_path(stem)?, self.size)?;
        img.source_id = stem.to_owned();
        Ok(img)
    }

    /// Annotated instances of `stem`, in increasing instance-id order.
    pub fn instances(&self, stem: &str) -> Result<Vec<Instance>> {
        let obj_path = self.root.join(OBJECT_DIR).join(format!("{stem}.png"));
        let cls_path = self.root.join(CLASS_DIR).join(format!("{stem}.png"));
        let classes = if cls_path.is_file() {
            Some(self.resize_labels(read_index_png(&cls_path)?))
        } else {
            None
        };
        if obj_path.is_file() {
            let objects = self.resize_labels(read_index_png(&obj_path)?);
            Ok(instances_from_maps(&objects, classes.as_ref()))
        } else if let Some(classes) = classes {
            // Class map only: one segment per class present.
            Ok(instances_from_maps(&classes, Some(&classes)))
        } else {
            Err(Error::MissingAnnotation { stem: stem.to_owned(), path: obj_path })
        }
    }

    fn resize_labels(&self, labels: Array2<u8>) -> Array2<u8> {
        match self.size {
            Some((h, w)) if labels.dim() != (h, w) => resize_nearest(&labels, h, w),
            _ => labels,
        }
    }
}

fn instances_from_maps(objects: &Array2<u8>, classes: Option<&Array2<u8>>) -> Vec<Instance> {
    let mut ids: Vec<u8> =
        objects.iter().copied().filter(|&v| v != 0 && v != VOID_INDEX).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let mask = objects.mapv(|v| u8::from(v == id));
            let label = match classes {
                Some(cls) => {
                    let mut counts = [0usize; 256];
                    for (m, c) in mask.iter().zip(cls.iter()) {
                        if *m == 1 && *c != VOID_INDEX {
                            counts[*c as usize] += 1;
                        }
                    }
                    let best = (1..255).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
                    if counts[best] == 0 {
                        "unknown".to_owned()
                    } else {
                        class_name(best as u8)
                    }
                }
                None => "object".to_owned(),
            };
            Instance { id, label, mask }
        })
        .collect()
}

pub fn resize_nearest(labels: &Array2<u8>, h: usize, w: usize) -> Array2<u8> {
    let (sh, sw) = labels.dim();
    Array2::from_shape_fn((h, w), |(y, x)| labels[[y * sh / h, x * sw / w]])
}

/// Reads an 8-bit (or packed sub-byte) indexed or grayscale PNG as raw
/// indices.
pub fn read_index_png(path: &Path) -> Result<Array2<u8>> {
    let bad = |reason: String| Error::Format { path: path.to_owned(), reason };
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    match info.color_type {
        png::ColorType::Indexed | png::ColorType::Grayscale => {}
        other => return Err(bad(format!("expected indexed or grayscale PNG, got {other:?}"))),
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let bits = info.bit_depth as usize;
    if bits == 16 {
        return Err(bad("16-bit label maps are not supported".into()));
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        let row = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w {
            let v = match bits {
                8 => row[x],
                1 | 2 | 4 => {
                    let per_byte = 8 / bits;
                    let byte = row[x / per_byte];
                    let shift = 8 - bits * (x % per_byte + 1);
                    (byte >> shift) & ((1u8 << bits) - 1)
                }
                _ => return Err(bad(format!("unsupported bit depth {bits}"))),
            };
            out[[y, x]] = v;
        }
    }
    Ok(out)
}

/// Writes raw indices as a palette PNG with the VOC colour map.
pub fn write_index_png(path: &Path, labels: &Array2<u8>) -> Result<()> {
    let (h, w) = labels.dim();
    let file = std::io::BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(voc_palette());
    let fmt = |e: png::EncodingError| Error::Format { path: path.to_owned(), reason: e.to_string() };
    let mut writer = enc.write_header().map_err(fmt)?;
    let data: Vec<u8> = labels.iter().copied().collect();
    writer.write_image_data(&data).map_err(fmt)?;
    writer.finish().map_err(fmt)?;
    Ok(())
}
