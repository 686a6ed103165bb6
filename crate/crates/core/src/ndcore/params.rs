use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Flat parameter vector with named, contiguous slices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    slices: Vec<(String, Range<usize>)>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a named slice and returns its range.
    pub fn push_slice(&mut self, name: impl Into<String>, values: &[f64]) -> Range<usize> {
        let start = self.values.len();
        self.values.extend_from_slice(values);
        let range = start..self.values.len();
        self.slices.push((name.into(), range.clone()));
        range
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

    pub fn set_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.values.len(), "parameter length");
        self.values.copy_from_slice(values);
    }

    pub fn slices(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.slices.iter().map(|(n, r)| (n.as_str(), r.clone()))
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.slices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.range(name).map(|r| &self.values[r])
    }

    /// Slices partition `0..len` in order with no gaps or overlaps.
    pub fn is_partitioned(&self) -> bool {
        let mut next = 0;
        for (_, r) in &self.slices {
            if r.start != next || r.end < r.start {
                return false;
            }
            next = r.end;
        }
        next == self.values.len()
    }
}
