use std::collections::HashMap;

use rand::Rng;

use super::grid::ValueGrid;
use crate::error::{DginError, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable grid together with its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub grid: ValueGrid,
    pub gradient: ValueGrid,
    pub adam_m: ValueGrid,
    pub adam_v: ValueGrid,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, grid: ValueGrid) -> Self {
        let (r, c) = grid.shape();
        Self {
            name: name.into(),
            grid,
            gradient: ValueGrid::zeros(r, c),
            adam_m: ValueGrid::zeros(r, c),
            adam_v: ValueGrid::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }
}

/// How a freshly registered parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` using the grid shape.
    Glorot,
    /// Uniform in `±scale`.
    Uniform(f64),
}

/// Ordered, name-unique collection of parameters for one model.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, param: Parameter) -> Result<ParamId> {
        if self.by_name.contains_key(&param.name) {
            return Err(DginError::Config(format!("duplicate parameter name `{}`", param.name)));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(param.name.clone(), id);
        self.params.push(param);
        Ok(id)
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let mut grid = ValueGrid::zeros(rows, cols);
        match init {
            Init::Zeros => {}
            Init::Ones => grid.fill(1.0),
            Init::Glorot => {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                grid.values_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-limit..=limit));
            }
            Init::Uniform(scale) => {
                grid.values_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-scale..=scale));
            }
        }
        self.insert(Parameter::new(name, grid))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.gradient.fill(0.0);
        }
    }

    /// Number of scalar coordinates across all parameters.
    pub fn coordinate_count(&self) -> usize {
        self.params.iter().map(|p| p.grid.values().len()).sum()
    }
}
