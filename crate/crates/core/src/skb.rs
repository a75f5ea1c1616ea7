//! Segmentation knowledge base: splits an image into per-object segments via
//! a pluggable backend and checks that recovered images keep those objects.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::VocDataset;
use crate::error::{Error, Result};
use crate::image::ImageSample;

pub const DEFAULT_K_MAX: usize = 8;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
/// Largest per-pixel deviation from the annotated source at which the oracle
/// still attributes a pixel to its object.
pub const DEFAULT_ORACLE_TOLERANCE: f64 = 0.25;

pub const ADAPTER_INDEX: &str = "index.jsonl";

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentMask {
    /// H×W, entries in {0, 1}
    pub mask: Array2<u8>,
    pub label: Option<String>,
    pub score: f64,
}

impl SegmentMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self { mask: Array2::ones((height, width)), label: None, score: 1.0 }
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&v| v != 0).count()
    }
}

#[derive(Clone, Debug)]
pub struct SegmentSet {
    pub masks: Vec<SegmentMask>,
    pub source: ImageSample,
    pub backend_name: String,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Writes one PNG per mask plus an `index.jsonl` in the adapter format.
    pub fn write_masks(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        let mut index = std::fs::File::create(dir.join(ADAPTER_INDEX))?;
        for (i, m) in self.masks.iter().enumerate() {
            let name = format!("mask_{i:02}.png");
            let (h, w) = m.mask.dim();
            let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([if m.mask[[y as usize, x as usize]] != 0 { 255 } else { 0 }])
            });
            let path = dir.join(&name);
            img.save(&path)?;
            let entry = AdapterEntry { mask_path: name, label: m.label.clone(), score: m.score };
            writeln!(index, "{}", serde_json::to_string(&entry)?)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub per_segment_iou: Vec<f64>,
    pub preserved: Vec<bool>,
    pub labels: Vec<Option<String>>,
    pub threshold: f64,
}

impl IntegrityReport {
    pub fn preserved_fraction(&self) -> f64 {
        if self.preserved.is_empty() {
            return 0.0;
        }
        self.preserved.iter().filter(|&&p| p).count() as f64 / self.preserved.len() as f64
    }
}

/// One line of the adapter's JSON-lines index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdapterEntry {
    pub mask_path: String,
    #[serde(default)]
    pub label: Option<String>,
    pub score: f64,
}

/// Segmentation backends.
pub enum Backend {
    /// A single whole-image segment.
    Trivial,
    /// Dataset annotations; see [`OracleBackend`].
    Oracle(OracleBackend),
    /// External segmenter process; see [`AdapterBackend`].
    Adapter(AdapterBackend),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Trivial => "trivial",
            Backend::Oracle(_) => "oracle",
            Backend::Adapter(_) => "foundation-adapter",
        }
    }

    /// Raw detections for `image`; may be empty.
    pub fn detect(&self, image: &ImageSample) -> Result<Vec<SegmentMask>> {
        match self {
            Backend::Trivial => Ok(vec![SegmentMask::full(image.height(), image.width())]),
            Backend::Oracle(o) => o.detect(image),
            Backend::Adapter(a) => a.detect(image),
        }
    }
}

/// Annotation-driven segmenter.
///
/// Objects come from the dataset's instance maps, looked up by the image's
/// `source_id`. A pixel of an annotated object is reported only if the image
/// still shows the object there: every channel within `tolerance` of the
/// annotated source. The annotated source itself therefore segments to the
/// exact annotation bitmaps, and an erased object segments to nothing.
pub struct OracleBackend {
    dataset: VocDataset,
    tolerance: f64,
}

impl OracleBackend {
    pub fn new(dataset: VocDataset, tolerance: f64) -> Self {
        Self { dataset, tolerance }
    }

    pub fn dataset(&self) -> &VocDataset {
        &self.dataset
    }

    fn detect(&self, image: &ImageSample) -> Result<Vec<SegmentMask>> {
        let instances = self.dataset.instances(&image.source_id)?;
        let source = self.dataset.load_image(&image.source_id)?;
        if source.shape() != image.shape() {
            return Err(Error::ShapeMismatch(format!(
                "image {:?} vs annotated source {:?}",
                image.shape(),
                source.shape()
            )));
        }
        let dev = (&image.pixels - &source.pixels)
            .mapv(f64::abs)
            .fold_axis(Axis(2), 0.0f64, |m: &f64, v: &f64| m.max(*v));
        let mut out = Vec::new();
        for inst in instances {
            let total = inst.mask.iter().filter(|&&v| v != 0).count();
            let mut mask = inst.mask.clone();
            ndarray::Zip::from(&mut mask).and(&dev).for_each(|m, &d| {
                if d > self.tolerance {
                    *m = 0;
                }
            });
            let kept = mask.iter().filter(|&&v| v != 0).count();
            if kept == 0 {
                continue;
            }
            out.push(SegmentMask {
                mask,
                label: Some(inst.label),
                score: kept as f64 / total.max(1) as f64,
            });
        }
        Ok(out)
    }
}

/// Out-of-process segmenter.
///
/// Invoked as `command [args..] <image.png> <output_dir>`; it must write one
/// mask image per segment (nonzero = inside) and an `index.jsonl` with
/// `{mask_path, label, score}` per line. Nonzero exit status is a failure.
pub struct AdapterBackend {
    command: PathBuf,
    args: Vec<String>,
    lock: Mutex<()>,
}

impl AdapterBackend {
    pub fn new(command: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self { command: command.into(), args, lock: Mutex::new(()) }
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Backend { backend: "foundation-adapter".into(), reason: reason.into() }
    }

    fn detect(&self, image: &ImageSample) -> Result<Vec<SegmentMask>> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let work = tempfile::tempdir()?;
        let img_path = work.path().join("input.png");
        let out_dir = work.path().join("segments");
        std::fs::create_dir_all(&out_dir)?;
        image.save_png(&img_path)?;
        let output = Command::new(&self.command)
            .args(&self.args)
            .arg(&img_path)
            .arg(&out_dir)
            .output()
            .map_err(|e| self.fail(format!("cannot launch {}: {e}", self.command.display())))?;
        if !output.status.success() {
            return Err(self.fail(format!(
                "exit status {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let index = out_dir.join(ADAPTER_INDEX);
        let file = std::fs::File::open(&index)
            .map_err(|e| self.fail(format!("missing {}: {e}", index.display())))?;
        let mut masks = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: AdapterEntry = serde_json::from_str(&line)
                .map_err(|e| self.fail(format!("index line {}: {e}", lineno + 1)))?;
            if !(0.0..=1.0).contains(&entry.score) {
                return Err(self.fail(format!("index line {}: score {} outside [0,1]", lineno + 1, entry.score)));
            }
            let path = out_dir.join(&entry.mask_path);
            let img = image::open(&path)
                .map_err(|e| self.fail(format!("mask {}: {e}", path.display())))?
                .to_luma8();
            let (w, h) = img.dimensions();
            if (h as usize, w as usize) != (image.height(), image.width()) {
                return Err(self.fail(format!(
                    "mask {} is {h}x{w}, image is {}x{}",
                    entry.mask_path,
                    image.height(),
                    image.width()
                )));
            }
            let mask = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
                u8::from(img.get_pixel(x as u32, y as u32)[0] != 0)
            });
            masks.push(SegmentMask { mask, label: entry.label, score: entry.score });
        }
        Ok(masks)
    }
}

/// Segments `image`, keeping at most `k_max` highest-score non-empty masks.
pub fn segment(image: &ImageSample, backend: &Backend, k_max: usize) -> Result<SegmentSet> {
    image.validate()?;
    let mut masks: Vec<SegmentMask> = backend
        .detect(image)?
        .into_iter()
        .filter(|m| m.area() > 0)
        .collect();
    for m in &masks {
        if m.mask.dim() != (image.height(), image.width()) {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs image {}x{}",
                m.mask.dim(),
                image.height(),
                image.width()
            )));
        }
    }
    if masks.is_empty() {
        return Err(Error::NoSegments(image.source_id.clone()));
    }
    masks.sort_by(|a, b| b.score.total_cmp(&a.score));
    masks.truncate(k_max.max(1));
    Ok(SegmentSet { masks, source: image.clone(), backend_name: backend.name().to_owned() })
}

/// Keeps pixels under the mask and zeroes the rest.
pub fn extract_segment(image: &ImageSample, mask: &SegmentMask) -> Result<ImageSample> {
    let (h, w, _) = image.shape();
    if mask.mask.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!("mask {:?} vs image {h}x{w}", mask.mask.dim())));
    }
    let mut pixels = image.pixels.clone();
    for ((y, x, _), v) in pixels.indexed_iter_mut() {
        if mask.mask[[y, x]] == 0 {
            *v = 0.0;
        }
    }
    Ok(ImageSample { pixels, source_id: image.source_id.clone() })
}

/// Intersection over union; 0 when both masks are empty.
pub fn iou(a: &Array2<u8>, b: &Array2<u8>) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in a.iter().zip(b.iter()) {
        let (x, y) = (*x != 0, *y != 0);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Re-segments `recovered` and scores each reference segment by its best IoU
/// among the recovered segments.
pub fn verify_recovery(
    recovered: &ImageSample,
    reference: &SegmentSet,
    backend: &Backend,
    threshold: f64,
) -> Result<IntegrityReport> {
    let (h, w) = (reference.source.height(), reference.source.width());
    if (recovered.height(), recovered.width()) != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "recovered {}x{} vs reference {h}x{w}",
            recovered.height(),
            recovered.width()
        )));
    }
    let found = backend.detect(recovered)?;
    let per_segment_iou: Vec<f64> = reference
        .masks
        .iter()
        .map(|r| found.iter().map(|f| iou(&r.mask, &f.mask)).fold(0.0, f64::max))
        .collect();
    let preserved = per_segment_iou.iter().map(|&v| v >= threshold).collect();
    Ok(IntegrityReport {
        per_segment_iou,
        preserved,
        labels: reference.masks.iter().map(|m| m.label.clone()).collect(),
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, seed: u64) -> ImageSample {
        let px = Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            (((y * 31 + x * 17 + c * 7) as u64 ^ seed) % 97) as f64 / 96.0
        });
        ImageSample::new(px, "t").unwrap()
    }

    #[test]
    fn trivial_backend_gives_one_full_mask() {
        let set = segment(&img(8, 10, 1), &Backend::Trivial, 8).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.masks[0].area(), 80);
        assert_eq!(set.backend_name, "trivial");
    }

    #[test]
    fn tiny_image_is_rejected() {
        let px = ImageSample { pixels: Array3::zeros((4, 4, 3)), source_id: "s".into() };
        assert!(matches!(segment(&px, &Backend::Trivial, 8), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn extract_with_full_mask_is_identity_and_single_pixel_mask_keeps_one() {
        let x = img(8, 8, 3);
        assert_eq!(extract_segment(&x, &SegmentMask::full(8, 8)).unwrap(), x);
        let mut m = SegmentMask::full(8, 8);
        m.mask.fill(0);
        m.mask[[2, 5]] = 1;
        let out = extract_segment(&x, &m).unwrap();
        for ((y, xx, _), v) in out.pixels.indexed_iter() {
            if (y, xx) != (2, 5) {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(extract_segment(&x, &SegmentMask::full(8, 9)).is_err());
    }

    #[test]
    fn extract_matches_elementwise_product() {
        let x = img(8, 8, 11);
        let mut m = SegmentMask::full(8, 8);
        for ((y, xx), v) in m.mask.indexed_iter_mut() {
            *v = u8::from((y * 5 + xx * 3) % 4 == 0);
        }
        let out = extract_segment(&x, &m).unwrap();
        for y in 0..8 {
            for xx in 0..8 {
                for c in 0..3 {
                    assert_eq!(out.pixels[[y, xx, c]], x.pixels[[y, xx, c]] * m.mask[[y, xx]] as f64);
                }
            }
        }
    }

    #[test]
    fn iou_edge_cases() {
        let a = Array2::from_shape_vec((2, 2), vec![1, 1, 0, 0]).unwrap();
        let b = Array2::from_shape_vec((2, 2), vec![0, 1, 1, 0]).unwrap();
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&Array2::zeros((2, 2)), &Array2::zeros((2, 2))), 0.0);
    }

    fn mask_strategy() -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(0u8..2, 64)
    }

    proptest! {
        #[test]
        fn extraction_is_idempotent(bits in mask_strategy(), seed in 0u64..1000) {
            let x = img(8, 8, seed);
            let m = SegmentMask { mask: Array2::from_shape_vec((8, 8), bits).unwrap(), label: None, score: 1.0 };
            let once = extract_segment(&x, &m).unwrap();
            let twice = extract_segment(&once, &m).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn disjoint_extractions_sum_to_union(labels in proptest::collection::vec(0u8..3, 64), seed in 0u64..1000) {
            let x = img(8, 8, seed);
            let lab = Array2::from_shape_vec((8, 8), labels).unwrap();
            let mk = |f: &dyn Fn(u8) -> bool| SegmentMask { mask: lab.mapv(|v| u8::from(f(v))), label: None, score: 1.0 };
            let a = extract_segment(&x, &mk(&|v| v == 1)).unwrap();
            let b = extract_segment(&x, &mk(&|v| v == 2)).unwrap();
            let u = extract_segment(&x, &mk(&|v| v != 0)).unwrap();
            prop_assert_eq!(&a.pixels + &b.pixels, u.pixels);
        }
    }
}
