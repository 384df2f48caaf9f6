//! Shape scenes: the latent content behind each synthetic image.
//!
//! A scene is two or three colored shapes on a 3×3 cell layout. Scenes are
//! what the renderer draws and what the caption grammar describes, so the
//! same struct feeds both sides of the image–text pairing.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Orange,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Orange,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Orange => "orange",
        }
    }

    /// sRGB palette entry; every channel is an exact u8 so rendered pixels
    /// survive 8-bit image round trips bit-for-bit.
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [204, 41, 41],
            Color::Green => [41, 176, 61],
            Color::Blue => [39, 92, 204],
            Color::Yellow => [235, 211, 32],
            Color::Purple => [140, 51, 194],
            Color::Orange => [240, 135, 31],
        }
    }
}

/// One placed object: what it is and which 3×3 cell it occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    /// (row, col) on the 3×3 layout, both in 0..3.
    pub cell: (u8, u8),
}

/// A renderable scene: 2–3 objects on distinct cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeScene {
    objects: Vec<SceneObject>,
    image_size: (usize, usize),
}

impl ShapeScene {
    pub fn new(objects: Vec<SceneObject>, image_size: (usize, usize)) -> Result<Self> {
        if objects.is_empty() || objects.len() > 3 {
            return Err(LabError::Config(format!(
                "a scene holds 1–3 objects, got {}",
                objects.len()
            )));
        }
        for (i, a) in objects.iter().enumerate() {
            if a.cell.0 >= 3 || a.cell.1 >= 3 {
                return Err(LabError::Config(format!("cell {:?} outside the 3×3 layout", a.cell)));
            }
            if objects[..i].iter().any(|b| b.cell == a.cell) {
                return Err(LabError::Config(format!("two objects share cell {:?}", a.cell)));
            }
        }
        let (h, w) = image_size;
        if h < 12 || w < 12 {
            return Err(LabError::Config(format!(
                "{h}×{w} is too small to render 3×3 cells (need ≥ 12 px per side)"
            )));
        }
        Ok(Self { objects, image_size })
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    /// Canonical content key: order-independent, used to keep sampled
    /// scenes distinct across a dataset.
    pub fn signature(&self) -> String {
        let mut parts: Vec<String> = self
            .objects
            .iter()
            .map(|o| format!("{}:{}:{}{}", o.color.word(), o.shape.word(), o.cell.0, o.cell.1))
            .collect();
        parts.sort();
        parts.join("|")
    }
}

/// Draw a random 2–3 object scene on distinct cells.
pub fn sample_scene<R: Rng>(rng: &mut R, image_size: (usize, usize)) -> Result<ShapeScene> {
    let count = rng.gen_range(2..=3usize);
    let mut cells: Vec<(u8, u8)> = (0..3u8)
        .flat_map(|r| (0..3u8).map(move |c| (r, c)))
        .collect();
    cells.shuffle(rng);
    let objects = cells[..count]
        .iter()
        .map(|&cell| SceneObject {
            shape: *Shape::ALL.choose(rng).expect("non-empty"),
            color: *Color::ALL.choose(rng).expect("non-empty"),
            cell,
        })
        .collect();
    ShapeScene::new(objects, image_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_shared_cells_and_tiny_canvases() {
        let o = |cell| SceneObject { shape: Shape::Circle, color: Color::Red, cell };
        assert!(ShapeScene::new(vec![o((0, 0)), o((0, 0))], (32, 32)).is_err());
        assert!(ShapeScene::new(vec![], (32, 32)).is_err());
        assert!(ShapeScene::new(vec![o((0, 0))], (11, 32)).is_err());
        assert!(ShapeScene::new(vec![o((0, 0)), o((3, 1))], (32, 32)).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = sample_scene(&mut r1, (32, 32)).unwrap();
            let b = sample_scene(&mut r2, (32, 32)).unwrap();
            assert_eq!(a, b);
            assert!((2..=3).contains(&a.objects().len()));
        }
    }

    #[test]
    fn signature_is_order_independent() {
        let a = SceneObject { shape: Shape::Circle, color: Color::Red, cell: (0, 0) };
        let b = SceneObject { shape: Shape::Square, color: Color::Blue, cell: (2, 1) };
        let s1 = ShapeScene::new(vec![a, b], (32, 32)).unwrap();
        let s2 = ShapeScene::new(vec![b, a], (32, 32)).unwrap();
        assert_eq!(s1.signature(), s2.signature());
    }
}
