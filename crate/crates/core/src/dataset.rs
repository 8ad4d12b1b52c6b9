use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Samples with features, class labels and per-attribute value annotations.
///
/// Features are stored flat, `len() × sample_width()`, in `sample_shape`
/// layout. Attribute annotations hold one value index per attribute
/// (`0/1` for binary attributes, `0..k` for k-way ones).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    features: Vec<f32>,
    labels: Vec<usize>,
    attributes: Vec<u32>,
    attribute_count: usize,
}

/// Borrowed view of one sample.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub x: &'a [f32],
    pub label: usize,
    pub attributes: &'a [u32],
}

impl Dataset {
    pub fn new(
        sample_shape: Vec<usize>,
        features: Vec<f32>,
        labels: Vec<usize>,
        attributes: Vec<u32>,
        attribute_count: usize,
    ) -> Result<Self> {
        let width: usize = sample_shape.iter().product();
        let n = labels.len();
        if width == 0 || features.len() != n * width {
            return Err(Error::Config(format!(
                "{} feature values for {n} samples of shape {sample_shape:?}",
                features.len()
            )));
        }
        if attributes.len() != n * attribute_count {
            return Err(Error::Config(format!(
                "{} attribute values for {n} samples × {attribute_count} attributes",
                attributes.len()
            )));
        }
        Ok(Self {
            sample_shape,
            features,
            labels,
            attributes,
            attribute_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_width(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn attribute_count(&self) -> usize {
        self.attribute_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        let w = self.sample_width();
        let m = self.attribute_count;
        Sample {
            x: &self.features[i * w..(i + 1) * w],
            label: self.labels[i],
            attributes: &self.attributes[i * m..(i + 1) * m],
        }
    }

    /// Flat `len × attribute_count` annotation matrix.
    pub fn annotations(&self) -> &[u32] {
        &self.attributes
    }

    /// Attribute `attr` of sample `i`.
    pub fn attribute(&self, i: usize, attr: usize) -> u32 {
        self.attributes[i * self.attribute_count + attr]
    }

    /// Stack the given samples into a `[batch, sample_shape...]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let w = self.sample_width();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(&self.features[i * w..(i + 1) * w]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(shape, data).expect("batch shape")
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let m = self.attribute_count;
        let mut attributes = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            attributes.extend_from_slice(&self.attributes[i * m..(i + 1) * m]);
        }
        Self {
            sample_shape: self.sample_shape.clone(),
            features: self.batch(indices).into_data(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            attributes,
            attribute_count: m,
        }
    }

    /// Indices of samples whose label passes `keep`, in dataset order.
    pub fn indices_where(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| keep(self.labels[i])).collect()
    }

    /// Replace class labels (e.g. to check that a stage never reads them).
    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Config("label count differs from sample count".into()));
        }
        self.labels = labels;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn views_and_subsets_line_up() {
        let d = Dataset::new(vec![2], vec![0., 1., 2., 3., 4., 5.], vec![7, 8, 9], vec![1, 0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(d.sample(1).x, &[2., 3.]);
        assert_eq!(d.sample(1).attributes, &[0, 1]);
        let s = d.subset(&[2, 0]);
        assert_eq!(s.labels(), &[9, 7]);
        assert_eq!(s.sample(0).x, &[4., 5.]);
        assert_eq!(s.attribute(1, 0), 1);
        assert_eq!(d.indices_where(|l| l != 8), vec![0, 2]);
    }

    #[test]
    fn inconsistent_lengths_are_rejected() {
        assert!(Dataset::new(vec![2], vec![0.; 5], vec![0, 1, 2], vec![], 0).is_err());
        assert!(Dataset::new(vec![2], vec![0.; 6], vec![0, 1, 2], vec![0; 5], 2).is_err());
    }
}
