use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::sum::csum;
use super::CoreError;

/// Ordered coordinate identifiers shared between vectors of one payoff.
pub type Labels = Arc<[String]>;

pub fn labels_from<I, S>(it: I) -> Labels
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    it.into_iter().map(Into::into).collect::<Vec<String>>().into()
}

/// A labelled payoff vector together with the bound on its squared norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffVector {
    labels: Labels,
    values: Vec<f64>,
    bound: f64,
}

impl PayoffVector {
    pub fn new(labels: Labels, values: Vec<f64>, bound: f64) -> Result<Self, CoreError> {
        if labels.len() != values.len() {
            return Err(CoreError::Shape {
                edges: labels.len(),
                masses: values.len(),
            });
        }
        Ok(Self { labels, values, bound })
    }

    pub fn zeros(labels: Labels, bound: f64) -> Self {
        let values = vec![0.0; labels.len()];
        Self { labels, values, bound }
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_labels(&self, other: &PayoffVector) -> Result<(), CoreError> {
        if Arc::ptr_eq(&self.labels, &other.labels) || self.labels == other.labels {
            Ok(())
        } else {
            Err(CoreError::LabelMismatch {
                left: self.labels.len(),
                right: other.labels.len(),
            })
        }
    }

    pub fn inner_product(&self, other: &PayoffVector) -> Result<f64, CoreError> {
        self.check_labels(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, s: f64) -> PayoffVector {
        PayoffVector {
            labels: self.labels.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
            bound: self.bound * s * s,
        }
    }
}

/// Compensated dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    csum(a.iter().zip(b).map(|(x, y)| x * y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(vals: &[f64]) -> PayoffVector {
        let labels = labels_from((0..vals.len()).map(|i| format!("c{i}")));
        PayoffVector::new(labels, vals.to_vec(), 100.0).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        assert_eq!(v(&[1.0, 0.0]).inner_product(&v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(v(&[3.0, 4.0]).inner_product(&v(&[3.0, 4.0])).unwrap(), 25.0);
        assert_eq!(v(&[1.0, -2.0, 3.0]).inner_product(&v(&[-1.0, 1.0, 1.0])).unwrap(), 0.0);
        assert_eq!(v(&[3.0, 4.0]).norm(), 5.0);
    }

    #[test]
    fn mismatched_labels_are_rejected() {
        let a = v(&[1.0, 2.0]);
        let b = PayoffVector::new(labels_from(["x", "y"]), vec![1.0, 2.0], 1.0).unwrap();
        assert!(matches!(a.inner_product(&b), Err(CoreError::LabelMismatch { .. })));
        assert!(a.inner_product(&v(&[1.0, 2.0, 3.0])).is_err());
    }
}
