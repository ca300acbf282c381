//! Flat numeric state vectors.
//!
//! A [`State`] is a point `x_t` of the process: a flat `f64` buffer plus a
//! shape. Images are flattened row-major; scalars and 1-D toys use shape
//! `[n]`. All process math is per-component, so the shape only matters for
//! I/O and shape checking.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl State {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![len],
                got: vec![data.len()],
            });
        }
        Ok(State { data, shape })
    }

    /// 1-D state of length `n`.
    pub fn vector(data: Vec<f64>) -> Self {
        let shape = vec![data.len()];
        State { data, shape }
    }

    /// Single-component state.
    pub fn scalar(value: f64) -> Self {
        State {
            data: vec![value],
            shape: vec![1],
        }
    }

    pub fn zeros_like(other: &State) -> Self {
        State {
            data: vec![0.0; other.len()],
            shape: other.shape.clone(),
        }
    }

    pub fn filled(value: f64, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        State {
            data: vec![value; len],
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn check_same_shape(&self, other: &State) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Componentwise `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &State) -> State {
        debug_assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + c * b)
            .collect();
        State {
            data,
            shape: self.shape.clone(),
        }
    }

    /// Componentwise `self - other`.
    pub fn sub(&self, other: &State) -> State {
        self.add_scaled(-1.0, other)
    }

    pub fn scale(&self, c: f64) -> State {
        State {
            data: self.data.iter().map(|v| c * v).collect(),
            shape: self.shape.clone(),
        }
    }

    /// Componentwise linear combination `a * self + b * other`.
    pub fn lincomb(&self, a: f64, b: f64, other: &State) -> State {
        debug_assert_eq!(self.shape, other.shape);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        State {
            data,
            shape: self.shape.clone(),
        }
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> State {
        State {
            data: self.data.iter().map(|v| v.clamp(lo, hi)).collect(),
            shape: self.shape.clone(),
        }
    }

    pub fn max_abs_diff(&self, other: &State) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean_sq_diff(&self, other: &State) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        if self.data.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sum / self.data.len() as f64
    }
}
