use serde::{Deserialize, Serialize};

use crate::envs::Direction;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorPos {
    First,
    Last,
}

impl AnchorPos {
    pub fn index(self, horizon: usize) -> usize {
        match self {
            AnchorPos::First => 0,
            AnchorPos::Last => horizon - 1,
        }
    }
}

impl From<Direction> for AnchorPos {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Forward => AnchorPos::First,
            Direction::Backward => AnchorPos::Last,
        }
    }
}

/// `H` states of dimension `dim`, stored row-major, with one anchor row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateWindow {
    horizon: usize,
    dim: usize,
    values: Vec<f64>,
    anchor: AnchorPos,
}

impl StateWindow {
    pub fn new(horizon: usize, dim: usize, values: Vec<f64>, anchor: AnchorPos) -> Result<Self> {
        if horizon == 0 || dim == 0 {
            return Err(Error::InvalidArgument("window needs at least one state of positive dimension".into()));
        }
        if values.len() != horizon * dim {
            return Err(Error::shape("StateWindow", &[horizon, dim], &[values.len()]));
        }
        Ok(Self {
            horizon,
            dim,
            values,
            anchor,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], anchor: AnchorPos) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.as_ref().len() != dim {
                return Err(Error::shape("StateWindow::from_rows", &[dim], &[r.as_ref().len()]));
            }
            values.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), dim, values, anchor)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn anchor(&self) -> AnchorPos {
        self.anchor
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor.index(self.horizon)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn anchor_row(&self) -> &[f64] {
        self.row(self.anchor_index())
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) {
        self.values[i * self.dim..(i + 1) * self.dim].copy_from_slice(row);
    }

    pub fn set_anchor_row(&mut self, row: &[f64]) {
        self.set_row(self.anchor_index(), row);
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }
}
