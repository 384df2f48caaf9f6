//! Flat parameter storage shared by all encoder architectures.
//!
//! Every weight of a model lives in one contiguous `Vec<f64>` addressed by
//! named segments. Optimizers walk the flat vector, checkpoints dump it
//! verbatim, and the networks view segments through ndarray shapes.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    name: &'static str,
    offset: usize,
    shape: Vec<usize>,
}

/// Named segments over one flat value vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    segments: Vec<Segment>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn builder() -> StoreBuilder {
        StoreBuilder { segments: Vec::new(), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn load_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(LabError::ShapeMismatch {
                expected: format!("{} parameters", self.values.len()),
                got: format!("{}", values.len()),
            });
        }
        self.values = values;
        Ok(())
    }

    fn segment(&self, name: &str) -> &Segment {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("unknown parameter segment {name:?}"))
    }

    pub fn range(&self, name: &str) -> std::ops::Range<usize> {
        let s = self.segment(name);
        s.offset..s.offset + s.shape.iter().product::<usize>()
    }

    pub fn shape(&self, name: &str) -> &[usize] {
        &self.segment(name).shape
    }

    pub fn slice(&self, name: &str) -> &[f64] {
        &self.values[self.range(name)]
    }

    /// Xavier-style uniform init for every segment: U(−s, s) with
    /// s = √(6 / (fan_in + fan_out)), fans taken from the segment shape
    /// (last axis = fan_in, first = fan_out; vectors use their length).
    pub fn init_xavier<R: Rng>(&mut self, rng: &mut R) {
        let segs = self.segments.clone();
        for seg in segs {
            let range = seg.offset..seg.offset + seg.shape.iter().product::<usize>();
            let (fan_out, fan_in) = match seg.shape.len() {
                0 | 1 => (seg.shape.first().copied().unwrap_or(1), 1),
                _ => (
                    seg.shape[0],
                    seg.shape[1..].iter().product::<usize>(),
                ),
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for v in &mut self.values[range] {
                *v = dist.sample(rng);
            }
        }
    }
}

pub struct StoreBuilder {
    segments: Vec<Segment>,
    next: usize,
}

impl StoreBuilder {
    pub fn add(mut self, name: &'static str, shape: &[usize]) -> Self {
        let len: usize = shape.iter().product();
        self.segments.push(Segment {
            name,
            offset: self.next,
            shape: shape.to_vec(),
        });
        self.next += len;
        self
    }

    pub fn build(self) -> ParamStore {
        ParamStore {
            segments: self.segments,
            values: vec![0.0; self.next],
        }
    }
}

/// Gradient buffer aligned with a [`ParamStore`] layout.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    values: Vec<f64>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { values: vec![0.0; store.len()] }
    }

    pub fn reset(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slice_mut(&mut self, store: &ParamStore, name: &str) -> &mut [f64] {
        &mut self.values[store.range(name)]
    }
}
