//! Minimal line-plot rasterizer writing RGB PNGs.
//!
//! Axes carry numeric tick labels drawn with a built-in 3×5 digit font;
//! title, axis names, series legend, config digest and seed are stored as
//! PNG text chunks.

use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: usize = 640;
const HEIGHT: usize = 400;
const LEFT: usize = 70;
const RIGHT: usize = 20;
const TOP: usize = 20;
const BOTTOM: usize = 40;

const PALETTE: [[u8; 3]; 6] =
    [[214, 39, 40], [31, 119, 180], [44, 160, 44], [255, 127, 14], [148, 103, 189], [140, 86, 75]];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub config_digest: String,
    pub seed: u64,
    pub series: Vec<Series>,
}

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Self { px: vec![255; WIDTH * HEIGHT * 3] }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < WIDTH && (y as usize) < HEIGHT {
            let i = (y as usize * WIDTH + x as usize) * 3;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3], thick: i64) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            for ox in 0..thick {
                for oy in 0..thick {
                    self.set(x + ox - thick / 2, y + oy - thick / 2, c);
                }
            }
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn text(&mut self, s: &str, x: i64, y: i64, c: [u8; 3]) {
        let mut cx = x;
        for ch in s.chars() {
            if let Some(rows) = glyph(ch) {
                for (ry, bits) in rows.iter().enumerate() {
                    for rx in 0..3 {
                        if bits & (0b100 >> rx) != 0 {
                            for sx in 0..2 {
                                for sy in 0..2 {
                                    self.set(cx + rx * 2 + sx, y + ry as i64 * 2 + sy, c);
                                }
                            }
                        }
                    }
                }
            }
            cx += 8;
        }
    }
}

fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        'e' => [0b000, 0b111, 0b111, 0b100, 0b111],
        _ => return None,
    })
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

impl LinePlot {
    pub fn render(&self, path: &Path) -> Result<()> {
        let mut cv = Canvas::new();
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = bounds(pts().map(|p| p.0));
        let (y0, y1) = bounds(pts().map(|p| p.1));
        let (pw, ph) = ((WIDTH - LEFT - RIGHT) as f64, (HEIGHT - TOP - BOTTOM) as f64);
        let map = |x: f64, y: f64| -> (i64, i64) {
            (
                (LEFT as f64 + (x - x0) / (x1 - x0) * pw).round() as i64,
                (TOP as f64 + (1.0 - (y - y0) / (y1 - y0)) * ph).round() as i64,
            )
        };
        let grid = [225, 225, 225];
        let axis = [40, 40, 40];
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let gy = TOP as i64 + (f * ph).round() as i64;
            cv.line((LEFT as i64, gy), ((WIDTH - RIGHT) as i64, gy), grid, 1);
            let gx = LEFT as i64 + (f * pw).round() as i64;
            cv.line((gx, TOP as i64), (gx, (HEIGHT - BOTTOM) as i64), grid, 1);
            cv.text(&tick_label(y1 - f * (y1 - y0)), 4, gy - 5, axis);
            let xl = tick_label(x0 + f * (x1 - x0));
            cv.text(&xl, gx - 4 * xl.len() as i64, (HEIGHT - BOTTOM) as i64 + 8, axis);
        }
        let origin = (LEFT as i64, (HEIGHT - BOTTOM) as i64);
        cv.line(origin, ((WIDTH - RIGHT) as i64, origin.1), axis, 2);
        cv.line(origin, (origin.0, TOP as i64), axis, 2);
        for (i, s) in self.series.iter().enumerate() {
            let c = PALETTE[i % PALETTE.len()];
            let finite: Vec<(i64, i64)> =
                s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).map(|p| map(p.0, p.1)).collect();
            for w in finite.windows(2) {
                cv.line(w[0], w[1], c, 2);
            }
            for &(x, y) in &finite {
                for ox in -2..=2 {
                    for oy in -2..=2 {
                        cv.set(x + ox, y + oy, c);
                    }
                }
            }
        }
        self.write_png(path, &cv.px)
    }

    fn write_png(&self, path: &Path, px: &[u8]) -> Result<()> {
        let fmt = |e: png::EncodingError| Error::Format { path: path.to_owned(), reason: e.to_string() };
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut enc = png::Encoder::new(file, WIDTH as u32, HEIGHT as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let legend: Vec<String> = self
            .series
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let c = PALETTE[i % PALETTE.len()];
                format!("{}=#{:02x}{:02x}{:02x}", s.name, c[0], c[1], c[2])
            })
            .collect();
        for (k, v) in [
            ("Title", self.title.clone()),
            ("XLabel", self.x_label.clone()),
            ("YLabel", self.y_label.clone()),
            ("Legend", legend.join(", ")),
            ("ConfigDigest", self.config_digest.clone()),
            ("Seed", self.seed.to_string()),
        ] {
            enc.add_text_chunk(k.to_owned(), v).map_err(fmt)?;
        }
        let mut w = enc.write_header().map_err(fmt)?;
        w.write_image_data(px).map_err(fmt)?;
        w.finish().map_err(fmt)?;
        Ok(())
    }
}
