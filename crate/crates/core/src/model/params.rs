//! Flat parameter storage. Every tensor of the network lives in one `Vec<f64>`
//! so the optimizer, gradient checks and checkpoints can treat the model as
//! a single vector.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A `rows x cols` row-major tensor inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a>(&self, data: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &data[self.range()]).expect("slot shape")
    }

    pub fn mat_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut data[self.range()]).expect("slot shape")
    }

    /// Bias vectors are stored as `1 x cols` slots.
    pub fn vec<'a>(&self, data: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&data[self.range()])
    }

    pub fn vec_mut<'a>(&self, data: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut data[self.range()])
    }
}

/// Named slots in allocation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub slots: Vec<(String, Slot)>,
    fan_in: Vec<usize>,
    pub total: usize,
}

impl Layout {
    /// A `rows x cols` weight matrix; its fan-in is `rows`.
    pub fn matrix(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Slot {
        self.push(name.into(), rows, cols, rows)
    }

    /// A bias of width `cols` feeding from `fan_in` inputs.
    pub fn bias(&mut self, name: impl Into<String>, cols: usize, fan_in: usize) -> Slot {
        self.push(name.into(), 1, cols, fan_in)
    }

    fn push(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> Slot {
        let slot = Slot {
            offset: self.total,
            rows,
            cols,
        };
        self.total += slot.len();
        self.slots.push((name, slot));
        self.fan_in.push(fan_in.max(1));
        slot
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for every tensor.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut data = vec![0.0; self.total];
        for ((_, slot), fan_in) in self.slots.iter().zip(&self.fan_in) {
            let bound = 1.0 / (*fan_in as f64).sqrt();
            for v in &mut data[slot.range()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        data
    }
}
