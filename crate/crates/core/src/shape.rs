use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 8;

/// Row-major extents of a tensor. Rank 0 is a scalar with one element.
#[derive(Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Shape> {
        let dims = dims.into();
        if dims.len() > MAX_RANK {
            return Err(Error::shape(format!(
                "rank {} exceeds the maximum of {MAX_RANK}",
                dims.len()
            )));
        }
        Ok(Shape(dims))
    }

    pub fn scalar() -> Shape {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dim(&self, axis: usize) -> Result<usize> {
        self.0.get(axis).copied().ok_or(Error::Axis {
            axis,
            rank: self.rank(),
        })
    }

    pub fn check_axis(&self, axis: usize) -> Result<()> {
        self.dim(axis).map(|_| ())
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.rank()];
        for i in (0..self.rank().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    /// Numpy broadcasting: align right, stretch extent-1 axes.
    pub fn broadcast(&self, other: &Shape) -> Result<Shape> {
        let rank = self.rank().max(other.rank());
        let mut dims = vec![0; rank];
        for (i, d) in dims.iter_mut().enumerate() {
            let a = self.extent_from_right(rank - 1 - i);
            let b = other.extent_from_right(rank - 1 - i);
            *d = match (a, b) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(Error::shape(format!("shapes {self} and {other} are not broadcastable"))),
            };
        }
        Shape::new(dims)
    }

    fn extent_from_right(&self, k: usize) -> usize {
        if k < self.rank() {
            self.0[self.rank() - 1 - k]
        } else {
            1
        }
    }

    /// Strides for reading `self` as if broadcast up to `target`; stretched
    /// axes get stride 0.
    pub fn broadcast_strides(&self, target: &Shape) -> Vec<usize> {
        let own = self.strides();
        let offset = target.rank() - self.rank();
        (0..target.rank())
            .map(|i| {
                if i < offset || self.0[i - offset] == 1 {
                    0
                } else {
                    own[i - offset]
                }
            })
            .collect()
    }

    /// The same shape with `axis` set to extent 1 (or removed).
    pub fn reduced(&self, axis: usize, keep_dims: bool) -> Shape {
        let mut dims = self.0.clone();
        if keep_dims {
            dims[axis] = 1;
        } else {
            dims.remove(axis);
        }
        Shape(dims)
    }
}

impl From<&[usize]> for Shape {
    /// Panics on rank > 8; use [`Shape::new`] for untrusted input.
    fn from(dims: &[usize]) -> Self {
        Shape::new(dims.to_vec()).expect("rank exceeds MAX_RANK")
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(dims: [usize; N]) -> Self {
        Shape::new(dims.to_vec()).expect("rank exceeds MAX_RANK")
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}
