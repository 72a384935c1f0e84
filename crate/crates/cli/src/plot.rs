//! Minimal raster charts: grouped bars with error bars, line plots and
//! heatmaps, labelled with an 8x8 bitmap font.

use std::path::Path;

use anyhow::{Context, Result};
use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};
use ndarray::Array2;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GREY: Rgb<u8> = Rgb([200, 200, 200]);

pub const PALETTE: [Rgb<u8>; 8] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
    Rgb([127, 127, 127]),
];

pub struct Canvas {
    img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Canvas {
            img: RgbImage::from_pixel(width, height, WHITE),
        }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    /// Filled rectangle with inclusive corners in any order.
    pub fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
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

    pub fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
        for (i, ch) in s.chars().enumerate() {
            let glyph = BASIC_FONTS.get(ch).or_else(|| BASIC_FONTS.get('?')).unwrap_or([0; 8]);
            let ox = x + i as i64 * 8 * scale;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8 {
                    if bits >> col & 1 == 1 {
                        let (px, py) = (ox + col * scale, y + row as i64 * scale);
                        self.rect(px, py, px + scale - 1, py + scale - 1, c);
                    }
                }
            }
        }
    }

    pub fn blit(&mut self, x: i64, y: i64, img: &RgbImage) {
        for (ix, iy, p) in img.enumerate_pixels() {
            self.put(x + ix as i64, y + iy as i64, *p);
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.img
            .save(path)
            .with_context(|| format!("writing {}", path.display()))
    }
}

pub fn text_width(s: &str, scale: i64) -> i64 {
    s.chars().count() as i64 * 8 * scale
}

/// Plot area in pixels plus the value range mapped onto it.
struct Frame {
    left: i64,
    top: i64,
    right: i64,
    bottom: i64,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn y(&self, v: f64) -> i64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        self.bottom - (t * (self.bottom - self.top) as f64).round() as i64
    }

    fn draw_y_axis(&self, c: &mut Canvas, label: &str) {
        for i in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
            let y = self.y(v);
            c.line(self.left, y, self.right, y, GREY);
            let t = format!("{v:.2}");
            c.text(self.left - text_width(&t, 1) - 6, y - 4, &t, 1, BLACK);
        }
        c.line(self.left, self.top, self.left, self.bottom, BLACK);
        c.line(self.left, self.bottom, self.right, self.bottom, BLACK);
        c.text(4, self.top - 14, label, 1, BLACK);
    }
}

fn nice_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.08 * (hi - lo);
    (if lo < 0.0 { lo - pad } else { 0.0 }, hi + pad)
}

/// One cluster of bars; `bars[i]` belongs to series `i`.
pub struct BarGroup {
    pub label: String,
    pub bars: Vec<Option<(f64, f64)>>,
}

/// Grouped bar chart; each bar is (value, half-height of its error bar).
pub fn bar_chart(title: &str, y_label: &str, groups: &[BarGroup], series: &[String]) -> Canvas {
    let n_series = series.len().max(1) as i64;
    let bar_w = 14i64;
    let label_w = groups.iter().map(|g| text_width(&g.label, 1)).max().unwrap_or(0);
    let group_w = (n_series * bar_w).max(label_w) + 16;
    let legend_w = series.iter().map(|s| text_width(s, 1)).max().unwrap_or(0) + 40;
    let width = (90 + groups.len() as i64 * group_w + legend_w).max(320);
    let height = 290;
    let mut c = Canvas::new(width as u32, height as u32);
    let (lo, hi) = nice_range(
        groups
            .iter()
            .flat_map(|g| g.bars.iter().flatten().flat_map(|(v, e)| [v + e, v - e])),
    );
    let f = Frame {
        left: 70,
        top: 40,
        right: width - legend_w,
        bottom: 260,
        lo,
        hi,
    };
    c.text(f.left, 8, title, 1, BLACK);
    f.draw_y_axis(&mut c, y_label);
    let zero = f.y(0.0);
    for (gi, g) in groups.iter().enumerate() {
        let gx = f.left + 12 + gi as i64 * group_w;
        for (si, bar) in g.bars.iter().enumerate() {
            let Some((v, e)) = *bar else { continue };
            let x = gx + si as i64 * bar_w;
            c.rect(x, zero, x + bar_w - 3, f.y(v), PALETTE[si % PALETTE.len()]);
            if e > 0.0 {
                let mid = x + (bar_w - 3) / 2;
                let (top, bottom) = (f.y(v + e), f.y(v - e));
                c.line(mid, top, mid, bottom, BLACK);
                c.line(mid - 3, top, mid + 3, top, BLACK);
                c.line(mid - 3, bottom, mid + 3, bottom, BLACK);
            }
        }
        c.text(gx, f.bottom + 10, &g.label, 1, BLACK);
    }
    for (si, s) in series.iter().enumerate() {
        let y = f.top + si as i64 * 14;
        c.rect(f.right + 10, y, f.right + 20, y + 8, PALETTE[si % PALETTE.len()]);
        c.text(f.right + 26, y, s, 1, BLACK);
    }
    c
}

/// Line plot of (x, y) series on [0, 1] x [0, 1].
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Canvas {
    let mut c = Canvas::new(420, 360);
    let f = Frame {
        left: 60,
        top: 40,
        right: 400,
        bottom: 320,
        lo: 0.0,
        hi: 1.0,
    };
    c.text(f.left, 8, title, 1, BLACK);
    f.draw_y_axis(&mut c, y_label);
    let x = |v: f64| f.left + (v.clamp(0.0, 1.0) * (f.right - f.left) as f64).round() as i64;
    for i in 0..=4 {
        let t = format!("{:.2}", i as f64 / 4.0);
        c.text(x(i as f64 / 4.0) - 16, f.bottom + 6, &t, 1, BLACK);
    }
    c.text(f.right - text_width(x_label, 1), f.bottom + 20, x_label, 1, BLACK);
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for w in pts.windows(2) {
            c.line(x(w[0].0), f.y(w[0].1), x(w[1].0), f.y(w[1].1), color);
        }
        c.text(f.right - text_width(name, 1), f.top + 4 + si as i64 * 12, name, 1, color);
    }
    c
}

/// Perceptually ordered dark-blue to yellow ramp.
pub fn colormap(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 } * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let ch = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([ch(0), ch(1), ch(2)])
}

/// Heatmap of `m` with row 0 at the top (or at the bottom when `flip`),
/// each cell `scale` pixels, colours spanning the matrix's own range.
pub fn heatmap(m: &Array2<f64>, scale: u32, flip: bool) -> RgbImage {
    let (rows, cols) = m.dim();
    let (lo, hi) = m
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    RgbImage::from_fn(cols as u32 * scale, rows as u32 * scale, |x, y| {
        let r = (y / scale) as usize;
        let r = if flip { rows - 1 - r } else { r };
        colormap((m[[r, (x / scale) as usize]] - lo) / span)
    })
}

/// Spectrogram (low frequencies at the bottom) beside a frame-similarity matrix.
pub fn spectrogram_and_gram(title: &str, spec: &Array2<f64>, gram: &Array2<f64>) -> Canvas {
    let s = heatmap(spec, 1, true);
    let s = image::imageops::resize(&s, s.width(), 256, image::imageops::FilterType::Nearest);
    let g = heatmap(gram, 1, false);
    let width = s.width() + g.width() + 60;
    let height = g.height().max(s.height()) + 60;
    let mut c = Canvas::new(width, height);
    c.text(20, 8, title, 1, BLACK);
    c.text(20, 26, "log-mel spectrogram", 1, BLACK);
    c.text(40 + s.width() as i64, 26, "frame similarity", 1, BLACK);
    c.blit(20, 40, &s);
    c.blit(40 + s.width() as i64, 40, &g);
    c
}
