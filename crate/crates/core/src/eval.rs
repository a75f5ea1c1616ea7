//! Fidelity metrics, transmission-size accounting, SNR sweeps and the
//! CSV/plot artifacts built from them.

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, ChannelKind};
use crate::codec::{FeatureTensor, MaskMatrix};
use crate::error::{Error, Result};
use crate::image::ImageSample;
use crate::pipeline::{Pipeline, StagedSource};
use crate::plot::{LinePlot, Series};
use crate::training::{LossRecord, Variant};

pub const PSNR_CAP_DB: f64 = 100.0;
const PSNR_MSE_FLOOR: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
pub const DEFAULT_BITS_PER_ELEMENT: u64 = 8;
pub const METRICS_SCHEMA: &str = "# lamsc-metrics v1";

fn same_shape(a: &ImageSample, b: &ImageSample) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse(a: &ImageSample, b: &ImageSample) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.pixels.len() as f64;
    Ok(a.pixels.iter().zip(b.pixels.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at 100 dB.
pub fn psnr(a: &ImageSample, b: &ImageSample) -> Result<f64> {
    let m = mse(a, b)?;
    if m < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Array2<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    Array2::from_shape_fn((SSIM_WINDOW, SSIM_WINDOW), |(y, x)| g[y] * g[x] / (s * s))
}

/// Valid-mode 2-D filter with a separable window given as its outer product.
fn filter_valid(img: &ArrayView2<f64>, w: &Array2<f64>) -> Array2<f64> {
    let (h, wd) = img.dim();
    let k = w.nrows();
    let row = w.row(k / 2).to_owned();
    let col = w.column(k / 2).to_owned();
    let scale = w[[k / 2, k / 2]];
    // w[y][x] = col[y] * row[x] / w[c][c]
    let mut tmp = Array2::zeros((h, wd + 1 - k));
    for y in 0..h {
        for x in 0..wd + 1 - k {
            let mut s = 0.0;
            for j in 0..k {
                s += img[[y, x + j]] * row[j];
            }
            tmp[[y, x]] = s;
        }
    }
    let mut out = Array2::zeros((h + 1 - k, wd + 1 - k));
    for y in 0..h + 1 - k {
        for x in 0..wd + 1 - k {
            let mut s = 0.0;
            for j in 0..k {
                s += tmp[[y + j, x]] * col[j];
            }
            out[[y, x]] = s / scale;
        }
    }
    out
}

/// Mean structural similarity (11×11 Gaussian window, σ = 1.5, unit
/// dynamic range), averaged over channels.
pub fn ssim(a: &ImageSample, b: &ImageSample) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w, c) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { height: h, width: w, min: SSIM_WINDOW });
    }
    let win = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ch in 0..c {
        let x = a.pixels.index_axis(Axis(2), ch);
        let y = b.pixels.index_axis(Axis(2), ch);
        let mx = filter_valid(&x, &win);
        let my = filter_valid(&y, &win);
        let xx = filter_valid(&(&x * &x).view(), &win);
        let yy = filter_valid(&(&y * &y).view(), &win);
        let xy = filter_valid(&(&x * &y).view(), &win);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (mx, my) = (mx.as_slice().unwrap()[i], my.as_slice().unwrap()[i]);
            let vx = xx.as_slice().unwrap()[i] - mx * mx;
            let vy = yy.as_slice().unwrap()[i] - my * my;
            let cxy = xy.as_slice().unwrap()[i] - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / c as f64)
}

/// Element and bit counts for one transmission.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitReport {
    pub original_elements: u64,
    pub feature_elements: u64,
    pub retained_elements: u64,
    pub bits_per_element: u64,
    /// One bit per mask entry.
    pub mask_side_info_bits: u64,
    pub original_bits: u64,
    pub feature_bits: u64,
    pub retained_bits: u64,
    pub retained_bits_with_side_info: u64,
}

pub fn bit_account(
    image: &ImageSample,
    features: &FeatureTensor,
    mask: &MaskMatrix,
    bits_per_element: u64,
) -> Result<BitReport> {
    if mask.bits.dim() != features.data.dim() {
        return Err(Error::ShapeMismatch(format!(
            "mask {:?} does not match features {:?}",
            mask.bits.dim(),
            features.data.dim()
        )));
    }
    let original = image.num_elements() as u64;
    let feats = features.data.len() as u64;
    let retained = mask.bits.iter().filter(|&&b| b == 1).count() as u64;
    let side = mask.bits.len() as u64;
    Ok(BitReport {
        original_elements: original,
        feature_elements: feats,
        retained_elements: retained,
        bits_per_element,
        mask_side_info_bits: side,
        original_bits: original * bits_per_element,
        feature_bits: feats * bits_per_element,
        retained_bits: retained * bits_per_element,
        retained_bits_with_side_info: retained * bits_per_element + side,
    })
}

/// One aggregated sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: Variant,
    pub snr_db: f64,
    pub seed: u64,
    pub images: u64,
    /// Against the variant's own source (semantic-aware image for LAM-SC,
    /// the original for the baseline).
    pub psnr_db: f64,
    pub ssim: f64,
    pub psnr_vs_original_db: f64,
    pub ssim_vs_original: f64,
    /// Mean squared error against the variant's own source.
    pub loss: f64,
    pub mask_ratio: f64,
    pub elements_original: u64,
    pub elements_features: u64,
    pub elements_retained: u64,
    pub bits_at_precision: u64,
    pub bits_with_side_info: u64,
    pub config_digest: String,
}

/// Per-image sweep result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub variant: Variant,
    pub snr_db: f64,
    pub seed: u64,
    pub source_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub psnr_vs_original_db: f64,
    pub ssim_vs_original: f64,
    pub mse: f64,
    pub elements_retained: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<MetricsRow>,
    pub per_image: Vec<ImageMetrics>,
}

/// Channel seed for one (sweep seed, image) pair.
pub fn channel_seed(seed: u64, image_index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(image_index as u64)
}

/// Runs both variants over `images` for every SNR and seed. Rows are
/// ordered by (snr, seed, variant).
pub fn snr_sweep(
    pipeline: &Pipeline,
    images: &[ImageSample],
    snr_list: &[f64],
    seeds: &[u64],
    kind: ChannelKind,
    bits_per_element: u64,
    config_digest: &str,
) -> Result<SweepTable> {
    if snr_list.is_empty() {
        return Err(Error::Config("snr list is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset("no evaluation images".into()));
    }
    // Segmentation and integration do not depend on the channel.
    let staged: Vec<StagedSource> =
        images.iter().map(|img| pipeline.stage(img)).collect::<Result<_>>()?;
    let mut table = SweepTable::default();
    for &snr in snr_list {
        for &seed in seeds {
            for variant in [Variant::Lamsc, Variant::Baseline] {
                let mut acc = Vec::with_capacity(images.len());
                let mut bits = None;
                let (mut ratio, mut retained, mut with_side) = (0.0, 0u64, 0u64);
                for (i, (img, st)) in images.iter().zip(&staged).enumerate() {
                    let ch = ChannelConfig { kind, snr_db: snr, seed: channel_seed(seed, i) };
                    let (source, out) = match variant {
                        Variant::Lamsc => (&st.semantic, pipeline.transmit_lamsc(&st.semantic, &ch, false)?),
                        Variant::Baseline => (img, pipeline.transmit_baseline(img, &ch)?),
                    };
                    let report = bit_account(img, &out.features, &out.mask, bits_per_element)?;
                    ratio += crate::codec::mask_ratio(&out.mask);
                    retained += report.retained_elements;
                    with_side += report.retained_bits_with_side_info;
                    let m = ImageMetrics {
                        variant,
                        snr_db: snr,
                        seed,
                        source_id: img.source_id.clone(),
                        psnr_db: psnr(source, &out.recovered)?,
                        ssim: ssim(source, &out.recovered)?,
                        psnr_vs_original_db: psnr(img, &out.recovered)?,
                        ssim_vs_original: ssim(img, &out.recovered)?,
                        mse: mse(source, &out.recovered)?,
                        elements_retained: report.retained_elements,
                    };
                    bits.get_or_insert(report);
                    acc.push(m);
                }
                let n = acc.len() as f64;
                let mean = |f: fn(&ImageMetrics) -> f64| acc.iter().map(f).sum::<f64>() / n;
                let first = bits.expect("non-empty image list");
                let count = acc.len() as u64;
                table.rows.push(MetricsRow {
                    variant,
                    snr_db: snr,
                    seed,
                    images: count,
                    psnr_db: mean(|m| m.psnr_db),
                    ssim: mean(|m| m.ssim),
                    psnr_vs_original_db: mean(|m| m.psnr_vs_original_db),
                    ssim_vs_original: mean(|m| m.ssim_vs_original),
                    loss: mean(|m| m.mse),
                    mask_ratio: ratio / n,
                    elements_original: first.original_elements,
                    elements_features: first.feature_elements,
                    // Mean per image, rounded down to stay an exact count.
                    elements_retained: retained / count,
                    bits_at_precision: retained / count * bits_per_element,
                    bits_with_side_info: with_side / count,
                    config_digest: config_digest.to_owned(),
                });
                table.per_image.extend(acc);
            }
        }
    }
    Ok(table)
}

fn write_csv_with_schema<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(schema.as_bytes());
    buf.push(b'\n');
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

fn read_csv_with_schema<T: serde::de::DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("");
    if first != schema {
        return Err(Error::Format { path: path.to_owned(), reason: format!("expected schema line `{schema}`") });
    }
    let body = &text[first.len()..].trim_start_matches(['\r', '\n']);
    let mut r = csv::Reader::from_reader(body.as_bytes());
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_csv_with_schema(path, METRICS_SCHEMA, rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    read_csv_with_schema(path, METRICS_SCHEMA)
}

pub const PER_IMAGE_SCHEMA: &str = "# lamsc-per-image v1";

pub fn write_per_image_csv(path: &Path, rows: &[ImageMetrics]) -> Result<()> {
    write_csv_with_schema(path, PER_IMAGE_SCHEMA, rows)
}

pub fn read_per_image_csv(path: &Path) -> Result<Vec<ImageMetrics>> {
    read_csv_with_schema(path, PER_IMAGE_SCHEMA)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurveArtifacts {
    pub metrics_csv: PathBuf,
    pub per_image_csv: PathBuf,
    pub loss_plot: PathBuf,
    pub psnr_plot: PathBuf,
    pub ssim_plot: PathBuf,
}

fn variant_series(rows: &[MetricsRow], variant: Variant, value: fn(&MetricsRow) -> f64) -> Vec<(f64, f64)> {
    // Average over seeds at each SNR, keeping first-seen SNR order.
    let mut pts: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.variant == variant && r.snr_db.is_finite()) {
        match pts.iter_mut().find(|p| p.0 == r.snr_db) {
            Some(p) => {
                p.1 += value(r);
                p.2 += 1;
            }
            None => pts.push((r.snr_db, value(r), 1)),
        }
    }
    let mut out: Vec<(f64, f64)> = pts.into_iter().map(|(x, s, n)| (x, s / n as f64)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Writes the metrics CSV, the per-image CSV and three PNG plots:
/// loss per trace step, PSNR vs SNR and SSIM vs SNR. Output is a pure
/// function of the inputs.
pub fn emit_curves(
    table: &SweepTable,
    loss_trace: &[LossRecord],
    output_dir: &Path,
    config_digest: &str,
    seed: u64,
) -> Result<CurveArtifacts> {
    if table.rows.is_empty() {
        return Err(Error::EmptyDataset("metrics table is empty".into()));
    }
    std::fs::create_dir_all(output_dir)?;
    let arts = CurveArtifacts {
        metrics_csv: output_dir.join("metrics.csv"),
        per_image_csv: output_dir.join("per_image.csv"),
        loss_plot: output_dir.join("loss_curve.png"),
        psnr_plot: output_dir.join("psnr_vs_snr.png"),
        ssim_plot: output_dir.join("ssim_vs_snr.png"),
    };
    write_metrics_csv(&arts.metrics_csv, &table.rows)?;
    write_per_image_csv(&arts.per_image_csv, &table.per_image)?;

    let meta = |title: &str, x: &str, y: &str| LinePlot {
        title: title.into(),
        x_label: x.into(),
        y_label: y.into(),
        config_digest: config_digest.into(),
        seed,
        series: Vec::new(),
    };
    let mut loss = meta("training loss", "step", "loss");
    let mut phases: Vec<&str> = Vec::new();
    for r in loss_trace {
        if !phases.contains(&r.phase.as_str()) {
            phases.push(&r.phase);
        }
    }
    for ph in phases {
        let points = loss_trace.iter().filter(|r| r.phase == ph).map(|r| (r.step as f64, r.loss)).collect();
        loss.series.push(Series { name: ph.into(), points });
    }
    loss.render(&arts.loss_plot)?;

    for (path, title, label, f) in [
        (&arts.psnr_plot, "PSNR vs SNR", "psnr_db", (|r: &MetricsRow| r.psnr_db) as fn(&MetricsRow) -> f64),
        (&arts.ssim_plot, "SSIM vs SNR", "ssim", |r: &MetricsRow| r.ssim),
    ] {
        let mut p = meta(title, "snr_db", label);
        for v in [Variant::Lamsc, Variant::Baseline] {
            p.series.push(Series { name: v.to_string(), points: variant_series(&table.rows, v, f) });
        }
        p.render(path)?;
    }
    Ok(arts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(p: Array3<f64>) -> ImageSample {
        ImageSample::new_unchecked_size(p, "t").unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageSample {
        img(Array3::from_shape_simple_fn((h, w, c), || rng.random_range(0.0..1.0)))
    }

    /// Direct formula over flattened pixels.
    fn psnr_reference(a: &ImageSample, b: &ImageSample) -> f64 {
        let mut s = 0.0f64;
        let mut n = 0usize;
        for y in 0..a.height() {
            for x in 0..a.width() {
                for c in 0..a.channels() {
                    let d = a.pixels[[y, x, c]] - b.pixels[[y, x, c]];
                    s += d * d;
                    n += 1;
                }
            }
        }
        -10.0 * (s / n as f64).log10()
    }

    /// Sliding window with an explicit 2-D Gaussian and a two-pass
    /// (mean-centred) variance, independent of the separable filter.
    fn ssim_reference(a: &ImageSample, b: &ImageSample) -> f64 {
        let k = 11usize;
        let mut w = vec![vec![0.0; k]; k];
        let mut tot = 0.0;
        for (y, row) in w.iter_mut().enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                let dy = y as f64 - 5.0;
                let dx = x as f64 - 5.0;
                *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
                tot += *v;
            }
        }
        let (c1, c2) = (1e-4, 9e-4);
        let (h, wd, ch) = a.shape();
        let mut acc = 0.0;
        for c in 0..ch {
            let mut s = 0.0;
            let mut cnt = 0;
            for oy in 0..=h - k {
                for ox in 0..=wd - k {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for y in 0..k {
                        for x in 0..k {
                            let wt = w[y][x] / tot;
                            ma += wt * a.pixels[[oy + y, ox + x, c]];
                            mb += wt * b.pixels[[oy + y, ox + x, c]];
                        }
                    }
                    let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
                    for y in 0..k {
                        for x in 0..k {
                            let wt = w[y][x] / tot;
                            let da = a.pixels[[oy + y, ox + x, c]] - ma;
                            let db = b.pixels[[oy + y, ox + x, c]] - mb;
                            va += wt * da * da;
                            vb += wt * db * db;
                            cab += wt * da * db;
                        }
                    }
                    s += ((2.0 * ma * mb + c1) * (2.0 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    cnt += 1;
                }
            }
            acc += s / cnt as f64;
        }
        acc / ch as f64
    }

    #[test]
    fn psnr_examples() {
        let a = img(Array3::zeros((8, 8, 3)));
        let b = img(Array3::ones((8, 8, 3)));
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
        let c = img(Array3::zeros((8, 9, 3)));
        assert!(matches!(psnr(&a, &c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn metrics_match_reference_implementations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random(&mut rng, 16, 16, 3);
            let b = random(&mut rng, 16, 16, 3);
            assert!((psnr(&a, &b).unwrap() - psnr_reference(&a, &b)).abs() < 1e-9);
            assert!((ssim(&a, &b).unwrap() - ssim_reference(&a, &b)).abs() < 1e-6);
            assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_constants() {
        let a = img(Array3::zeros((16, 16, 1)));
        let b = img(Array3::ones((16, 16, 1)));
        let expected = 1e-4 / (1.0 + 1e-4);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert!((ssim(&b, &b).unwrap() - 1.0).abs() < 1e-12);
        let small = img(Array3::zeros((10, 16, 1)));
        assert!(matches!(ssim(&small, &small), Err(Error::ImageTooSmall { .. })));
    }

    fn mask_of(bits: Array3<u8>) -> MaskMatrix {
        MaskMatrix::from_bits(bits)
    }

    #[test]
    fn bit_accounting_examples() {
        let image = ImageSample::zeros(128, 128, 3, "x");
        let feats = FeatureTensor { data: Array3::zeros((13, 13, 128)), source_shape: (128, 128, 3) };
        let mut bits = Array3::<u8>::zeros((13, 13, 128));
        bits.iter_mut().take(8960).for_each(|b| *b = 1);
        let r = bit_account(&image, &feats, &mask_of(bits), 8).unwrap();
        assert_eq!((r.original_elements, r.feature_elements, r.retained_elements), (49_152, 21_632, 8_960));
        assert_eq!(r.retained_bits_with_side_info, 8_960 * 8 + 21_632);

        let r = bit_account(&image, &feats, &mask_of(Array3::zeros((13, 13, 128))), 8).unwrap();
        assert_eq!(r.retained_elements, 0);

        let small = ImageSample::zeros(32, 32, 3, "x");
        let feats = FeatureTensor { data: Array3::zeros((8, 8, 4)), source_shape: (32, 32, 3) };
        let checker = Array3::from_shape_fn((8, 8, 4), |(y, x, c)| ((y + x + c) % 2) as u8);
        let r = bit_account(&small, &feats, &mask_of(checker), 8).unwrap();
        assert_eq!(r.retained_elements, 128);
        assert_eq!(r.retained_bits, 1024);
        assert!(r.retained_elements <= r.feature_elements);
    }

    fn row(snr: f64, variant: Variant) -> MetricsRow {
        MetricsRow {
            variant,
            snr_db: snr,
            seed: 3,
            images: 2,
            psnr_db: 21.123456789012345,
            ssim: 0.1 + 0.2,
            psnr_vs_original_db: 12.5,
            ssim_vs_original: -0.25,
            loss: 1e-17,
            mask_ratio: 0.4142,
            elements_original: 3072,
            elements_features: 4096,
            elements_retained: 1700,
            bits_at_precision: 13600,
            bits_with_side_info: 17696,
            config_digest: "abc".into(),
        }
    }

    #[test]
    fn metrics_csv_roundtrips_exactly_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row(0.0, Variant::Lamsc), row(f64::INFINITY, Variant::Baseline)];
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &rows).unwrap();
        let first = std::fs::read(&p).unwrap();
        assert_eq!(read_metrics_csv(&p).unwrap(), rows);
        write_metrics_csv(&p, &rows).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn single_row_table_emits_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let table = SweepTable { rows: vec![row(10.0, Variant::Lamsc)], per_image: vec![] };
        let arts = emit_curves(&table, &[], dir.path(), "abc", 3).unwrap();
        let text = std::fs::read_to_string(&arts.metrics_csv).unwrap();
        assert_eq!(text.lines().count(), 3); // schema, header, one row
        for p in [&arts.loss_plot, &arts.psnr_plot, &arts.ssim_plot] {
            assert!(image::open(p).is_ok());
        }
        let bytes = std::fs::read(&arts.psnr_plot).unwrap();
        emit_curves(&table, &[], dir.path(), "abc", 3).unwrap();
        assert_eq!(std::fs::read(&arts.psnr_plot).unwrap(), bytes);
        assert!(emit_curves(&SweepTable::default(), &[], dir.path(), "abc", 3).is_err());
    }
}
