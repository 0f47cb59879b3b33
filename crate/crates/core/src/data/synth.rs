use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SplitTag, VerticalDataset};
use crate::error::{Error, Result};
use crate::nd::Tensor2;
use crate::rng::Rng;

/// Gaussian blobs, one per class, with unit-norm means in the joint space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub class_count: usize,
    pub client_dims: usize,
    pub host_dims: usize,
    pub n_per_class: usize,
    pub cluster_spread: f64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.client_dims == 0 || self.host_dims == 0 || self.n_per_class == 0 {
            return Err(Error::Config(format!("blob counts must all be >= 1: {self:?}")));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::Config(format!("cluster_spread must be >= 0, got {}", self.cluster_spread)));
        }
        Ok(())
    }
}

/// Rows are emitted class by class; shuffle via the split if order matters.
pub fn synth_blobs(spec: &BlobSpec, rng: &mut Rng) -> Result<VerticalDataset> {
    spec.validate()?;
    let dims = spec.client_dims + spec.host_dims;
    let means: Vec<Vec<f64>> = (0..spec.class_count)
        .map(|_| {
            let v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let n = spec.class_count * spec.n_per_class;
    let mut joint = Tensor2::zeros(n, dims);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for k in 0..spec.n_per_class {
            let r = class * spec.n_per_class + k;
            for (c, m) in mean.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                joint.set(r, c, m + spec.cluster_spread * z);
            }
            labels.push(class);
        }
    }
    let client = joint.slice_cols(0, spec.client_dims)?;
    let host = joint.slice_cols(spec.client_dims, dims)?;
    VerticalDataset::new(client, host, labels, spec.class_count, SplitTag::Train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn spec(spread: f64) -> BlobSpec {
        BlobSpec { class_count: 2, client_dims: 3, host_dims: 2, n_per_class: 100, cluster_spread: spread }
    }

    #[test]
    fn balanced_and_shaped() {
        let ds = synth_blobs(&spec(0.3), &mut stream(1, Stream::Data)).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.class_histogram(), vec![100, 100]);
        assert_eq!((ds.client_width(), ds.host_width()), (3, 2));
    }

    #[test]
    fn deterministic() {
        let a = synth_blobs(&spec(0.3), &mut stream(9, Stream::Data)).unwrap();
        let b = synth_blobs(&spec(0.3), &mut stream(9, Stream::Data)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_spread_is_nearest_centroid_separable() {
        let s = BlobSpec { class_count: 4, ..spec(0.0) };
        let ds = synth_blobs(&s, &mut stream(2, Stream::Data)).unwrap();
        let joint = Tensor2::hcat(&[&ds.client_features, &ds.host_features]).unwrap();
        let centroid = |c: usize| joint.row(c * s.n_per_class).to_vec();
        let centroids: Vec<Vec<f64>> = (0..4).map(centroid).collect();
        let pred: Vec<usize> = (0..ds.len())
            .map(|r| {
                let d = |m: &Vec<f64>| joint.row(r).iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                (0..4).min_by(|&a, &b| d(&centroids[a]).partial_cmp(&d(&centroids[b])).unwrap()).unwrap()
            })
            .collect();
        assert_eq!(crate::stats::accuracy(&pred, &ds.labels).unwrap(), 1.0);
    }

    #[test]
    fn rejects_zero_counts() {
        let s = BlobSpec { n_per_class: 0, ..spec(0.1) };
        assert!(synth_blobs(&s, &mut stream(1, Stream::Data)).is_err());
    }
}
