use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `J x d` matrix of test locations, one location per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestLocations(Array2<f64>);

impl TestLocations {
    pub fn new(locations: Array2<f64>) -> Result<Self> {
        if locations.nrows() == 0 || locations.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "test locations need at least one row and one column".into(),
            ));
        }
        if let Some(((j, i), v)) = locations.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "test location {j} has non-finite coordinate {i} ({v})"
            )));
        }
        Ok(Self(locations.as_standard_layout().into_owned()))
    }

    /// Single location given as a vector.
    pub fn single(location: ArrayView1<f64>) -> Result<Self> {
        Self::new(location.to_owned().insert_axis(ndarray::Axis(0)))
    }

    /// Number of locations `J`.
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.0.row(j)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}
