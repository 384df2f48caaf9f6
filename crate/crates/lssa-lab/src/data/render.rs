//! Scene rasterization.
//!
//! Shapes are painted with hard edges from an 8-bit palette onto a uniform
//! background, so every pixel value is exactly k/255 for integer k and the
//! dataset survives PNG round trips bit-for-bit.

use ndarray::Array3;

use crate::data::scene::{Shape, ShapeScene};
use crate::grid::ImageGrid;

pub const BACKGROUND: [u8; 3] = [232, 232, 232];

/// Is the normalized in-cell point (u, v) ∈ (0,1)² inside the shape?
fn inside(shape: Shape, u: f64, v: f64) -> bool {
    match shape {
        Shape::Circle => {
            let (du, dv) = (u - 0.5, v - 0.5);
            du * du + dv * dv <= 0.42 * 0.42
        }
        // Inset well past the circle radius so the two shapes differ in
        // many pixels even when a cell is only a few pixels wide.
        Shape::Square => (0.25..=0.75).contains(&u) && (0.25..=0.75).contains(&v),
        Shape::Triangle => {
            // apex at (0.5, 0.08), base corners at (0.1, 0.92) and (0.9, 0.92)
            if !(0.08..=0.92).contains(&v) {
                return false;
            }
            (u - 0.5).abs() <= 0.4 * (v - 0.08) / 0.84
        }
    }
}

/// Rasterize a scene into a 3×H×W grid.
pub fn render_scene(scene: &ShapeScene) -> ImageGrid {
    let (h, w) = scene.image_size();
    let (cell_h, cell_w) = ((h - 2) / 3, (w - 2) / 3);
    let mut out = Array3::<f64>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let mut rgb = BACKGROUND;
            for obj in scene.objects() {
                let (row, col) = (obj.cell.0 as usize, obj.cell.1 as usize);
                let (y0, x0) = (1 + row * cell_h, 1 + col * cell_w);
                if y < y0 || y >= y0 + cell_h || x < x0 || x >= x0 + cell_w {
                    continue;
                }
                let u = (x - x0) as f64 + 0.5;
                let v = (y - y0) as f64 + 0.5;
                if inside(obj.shape, u / cell_w as f64, v / cell_h as f64) {
                    rgb = obj.color.rgb();
                    break; // cells are disjoint; first hit wins
                }
            }
            for c in 0..3 {
                out[[c, y, x]] = rgb[c] as f64 / 255.0;
            }
        }
    }
    ImageGrid::new(out)
}
