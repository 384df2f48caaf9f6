//! Just enough rendering for the harness: a seeded line chart with error
//! bars for sweeps, and the original / adversarial / amplified-difference
//! panel strip. Acceptance checks parse the companion CSVs, never pixels,
//! so these stay deliberately small.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{LabError, Result};
use crate::grid::ImageGrid;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([20, 20, 20]);
const LINE: Rgb<u8> = Rgb([31, 119, 180]);
const BAR: Rgb<u8> = Rgb([140, 140, 140]);

/// One plotted point; `spread` draws a symmetric error bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub spread: f64,
}

/// 5×7 bitmap glyphs for tick labels; anything unknown renders as space.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
        '1' => [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
        '2' => [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
        '3' => [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
        '4' => [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
        '5' => [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
        '6' => [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
        '7' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
        '9' => [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
        '-' => [0x00, 0x00, 0x00, 0x0e, 0x00, 0x00, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c],
        'e' => [0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e],
        _ => [0; 7],
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    for (k, c) in text.chars().enumerate() {
        let rows = glyph(c);
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..5 {
                if row & (1 << (4 - dx)) != 0 {
                    put(img, x + k as i64 * 6 + dx as i64, y + dy as i64, color);
                }
            }
        }
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, mut x0: i64, mut y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, color);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Compact tick label: plain decimal where it fits, scientific otherwise.
fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let magnitude = v.abs();
    if !(0.001..=9999.0).contains(&magnitude) {
        return format!("{v:.0e}");
    }
    let text = format!("{v:.2}");
    let trimmed = text.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}

struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Self { lo: 0.0, hi: 1.0 };
        }
        if lo == hi {
            // A degenerate (single-value) sweep still gets a sensible axis.
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.05 * (hi - lo);
        Self { lo: lo - pad, hi: hi + pad }
    }

    fn at(&self, v: f64, lo_px: i64, hi_px: i64) -> i64 {
        let t = (v - self.lo) / (self.hi - self.lo);
        lo_px + ((hi_px - lo_px) as f64 * t).round() as i64
    }
}

/// Render a line chart with error bars to a PNG. Points are drawn in the
/// order given; callers sort by x.
pub fn render_line_plot(points: &[PlotPoint], path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(LabError::Config("a plot needs at least one point".into()));
    }
    let (width, height) = (440u32, 320u32);
    let (left, right, top, bottom) = (56i64, 16i64, 16i64, 36i64);
    let (x0, x1) = (left, width as i64 - right);
    let (y0, y1) = (height as i64 - bottom, top);

    let xr = Range::of(points.iter().map(|p| p.x));
    let yr = Range::of(points.iter().flat_map(|p| [p.y - p.spread, p.y + p.spread]));

    let mut img = RgbImage::from_pixel(width, height, WHITE);
    draw_line(&mut img, x0, y0, x1, y0, BLACK);
    draw_line(&mut img, x0, y0, x0, y1, BLACK);

    for k in 0..=4 {
        let fy = yr.lo + (yr.hi - yr.lo) * f64::from(k) / 4.0;
        let py = yr.at(fy, y0, y1);
        draw_line(&mut img, x0 - 3, py, x0, py, BLACK);
        let label = format_tick(fy);
        draw_text(&mut img, x0 - 5 - 6 * label.len() as i64, py - 3, &label, BLACK);

        let fx = xr.lo + (xr.hi - xr.lo) * f64::from(k) / 4.0;
        let px = xr.at(fx, x0, x1);
        draw_line(&mut img, px, y0, px, y0 + 3, BLACK);
        let label = format_tick(fx);
        draw_text(&mut img, px - 3 * label.len() as i64, y0 + 6, &label, BLACK);
    }

    for pair in points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        draw_line(
            &mut img,
            xr.at(a.x, x0, x1),
            yr.at(a.y, y0, y1),
            xr.at(b.x, x0, x1),
            yr.at(b.y, y0, y1),
            LINE,
        );
    }
    for p in points {
        let px = xr.at(p.x, x0, x1);
        if p.spread > 0.0 {
            let lo = yr.at(p.y - p.spread, y0, y1);
            let hi = yr.at(p.y + p.spread, y0, y1);
            draw_line(&mut img, px, lo, px, hi, BAR);
            draw_line(&mut img, px - 2, lo, px + 2, lo, BAR);
            draw_line(&mut img, px - 2, hi, px + 2, hi, BAR);
        }
        let py = yr.at(p.y, y0, y1);
        for dy in -1..=1 {
            for dx in -1..=1i64 {
                put(&mut img, px + dx, py + dy, LINE);
            }
        }
    }

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| LabError::Format(format!("{}: png encode failed: {e}", path.display())))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Gap between triptych panels, in pixels.
pub const TRIPTYCH_GAP: u32 = 2;

/// Compose original, adversarial, and the amplified difference into one
/// strip: `clamp(0.5 + amplification·(adv − orig))`, centered at mid-gray.
pub fn render_triptych(
    original: &ImageGrid,
    adversarial: &ImageGrid,
    amplification: f64,
) -> Result<RgbImage> {
    let dims = original.dims();
    if dims != adversarial.dims() {
        return Err(LabError::ShapeMismatch {
            expected: format!("{dims:?}"),
            got: format!("{:?}", adversarial.dims()),
        });
    }
    let (c, h, w) = dims;
    if c != 3 {
        return Err(LabError::ShapeMismatch {
            expected: "3-channel images".into(),
            got: format!("{c} channels"),
        });
    }
    if !(amplification.is_finite() && amplification > 0.0) {
        return Err(LabError::Config(format!(
            "amplification must be a positive number, got {amplification}"
        )));
    }

    let (h, w) = (h as u32, w as u32);
    let mut img = RgbImage::from_pixel(3 * w + 2 * TRIPTYCH_GAP, h, WHITE);
    for y in 0..h {
        for x in 0..w {
            let mut panels = [[0u8; 3]; 3];
            for ch in 0..3 {
                let orig = original.get(ch, y as usize, x as usize);
                let adv = adversarial.get(ch, y as usize, x as usize);
                panels[0][ch] = quantize(orig);
                panels[1][ch] = quantize(adv);
                panels[2][ch] = quantize(0.5 + amplification * (adv - orig));
            }
            for (k, panel) in panels.iter().enumerate() {
                img.put_pixel(k as u32 * (w + TRIPTYCH_GAP) + x, y, Rgb(*panel));
            }
        }
    }
    Ok(img)
}

/// Render and save a triptych PNG, creating parent directories.
pub fn save_triptych(
    path: &Path,
    original: &ImageGrid,
    adversarial: &ImageGrid,
    amplification: f64,
) -> Result<()> {
    let img = render_triptych(original, adversarial, amplification)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| LabError::Format(format!("{}: png encode failed: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn ramp(offset: f64) -> ImageGrid {
        ImageGrid::new(Array3::from_shape_fn((3, 4, 6), |(c, y, x)| {
            (offset + (c * 24 + y * 6 + x) as f64 / 96.0).clamp(0.0, 1.0)
        }))
    }

    #[test]
    fn triptych_panels_follow_the_amplification_formula() {
        let original = ramp(0.3);
        let mut adversarial = original.clone();
        adversarial.set(0, 1, 2, original.get(0, 1, 2) + 0.004);
        adversarial.set(2, 3, 5, original.get(2, 3, 5) - 0.004);

        let img = render_triptych(&original, &adversarial, 40.0).unwrap();
        assert_eq!(img.width(), 3 * 6 + 2 * TRIPTYCH_GAP);
        assert_eq!(img.height(), 4);
        for y in 0..4usize {
            for x in 0..6usize {
                let left = img.get_pixel(x as u32, y as u32);
                let mid = img.get_pixel((6 + TRIPTYCH_GAP as usize + x) as u32, y as u32);
                let right =
                    img.get_pixel((2 * (6 + TRIPTYCH_GAP as usize) + x) as u32, y as u32);
                for c in 0..3usize {
                    let orig = original.get(c, y, x);
                    let adv = adversarial.get(c, y, x);
                    assert_eq!(left.0[c], quantize(orig));
                    assert_eq!(mid.0[c], quantize(adv));
                    assert_eq!(right.0[c], quantize(0.5 + 40.0 * (adv - orig)));
                }
            }
        }
    }

    #[test]
    fn unit_amplification_is_the_raw_difference_panel() {
        let original = ramp(0.1);
        let mut adversarial = original.clone();
        adversarial.set(1, 0, 0, original.get(1, 0, 0) + 0.2);
        let img = render_triptych(&original, &adversarial, 1.0).unwrap();
        let x0 = 2 * (6 + TRIPTYCH_GAP);
        for y in 0..4usize {
            for x in 0..6usize {
                let px = img.get_pixel(x0 + x as u32, y as u32);
                for c in 0..3usize {
                    let diff = adversarial.get(c, y, x) - original.get(c, y, x);
                    assert_eq!(px.0[c], quantize(0.5 + diff));
                }
            }
        }
    }

    #[test]
    fn triptych_rejects_mismatched_shapes_and_bad_factors() {
        let a = ramp(0.0);
        let b = ImageGrid::zeros(3, 4, 5);
        assert!(render_triptych(&a, &b, 40.0).is_err());
        assert_eq!(render_triptych(&a, &a, 0.0).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn line_plot_renders_deterministically() {
        let tmp = tempfile::tempdir().unwrap();
        let points: Vec<PlotPoint> = (0..5)
            .map(|k| PlotPoint { x: k as f64, y: 10.0 + 3.0 * k as f64, spread: 1.5 })
            .collect();
        let first = tmp.path().join("a.png");
        let second = tmp.path().join("b.png");
        render_line_plot(&points, &first).unwrap();
        render_line_plot(&points, &second).unwrap();
        let a = std::fs::read(&first).unwrap();
        let b = std::fs::read(&second).unwrap();
        assert_eq!(a, b);
        let decoded = image::open(&first).unwrap().to_rgb8();
        assert_eq!((decoded.width(), decoded.height()), (440, 320));
    }

    #[test]
    fn single_point_plot_degenerates_without_error() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("one.png");
        render_line_plot(&[PlotPoint { x: 20.0, y: 55.0, spread: 0.0 }], &path).unwrap();
        assert!(path.is_file());
        assert!(render_line_plot(&[], &path).is_err());
    }

    #[test]
    fn tick_labels_stay_compact() {
        assert_eq!(format_tick(0.0), "0");
        assert_eq!(format_tick(20.0), "20");
        assert_eq!(format_tick(0.25), "0.25");
        assert_eq!(format_tick(-3.5), "-3.5");
        assert_eq!(format_tick(0.00039), "4e-4");
        assert_eq!(format_tick(52341.0), "5e4");
    }
}
