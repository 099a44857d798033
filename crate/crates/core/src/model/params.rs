use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Names, shapes and offsets of the tensors packed into a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
}

impl Layout {
    pub fn from_shapes<'a>(shapes: impl IntoIterator<Item = (&'a str, &'a [usize])>) -> Self {
        let mut offset = 0;
        let entries = shapes
            .into_iter()
            .map(|(name, shape)| {
                let e = LayoutEntry {
                    name: name.to_string(),
                    offset,
                    shape: shape.to_vec(),
                };
                offset += e.len();
                e
            })
            .collect();
        Self { entries }
    }

    pub fn total(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.len())
    }
}

/// Flat `f64` view of every trainable weight, the unit of weight-space averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub layout: Arc<Layout>,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Checkpoint(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total();
        Self {
            layout,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn compatible(&self, other: &ParameterVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_compatible(&self, other: &ParameterVector) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(Error::Checkpoint("parameter layouts differ".into()))
        }
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.values[e.offset..e.offset + e.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_cumulative() {
        let l = Layout::from_shapes([("a", &[2, 3][..]), ("b", &[4][..])]);
        assert_eq!(l.entries[1].offset, 6);
        assert_eq!(l.total(), 10);
        let v = ParameterVector::new(Arc::new(l.clone()), (0..10).map(f64::from).collect()).unwrap();
        assert_eq!(v.slice("b").unwrap(), &[6.0, 7.0, 8.0, 9.0]);
        assert!(ParameterVector::new(Arc::new(l), vec![0.0; 3]).is_err());
    }
}
