//! Synthetic labelled data: Gaussian clusters around per-class centers, split
//! per class into disjoint train, query and gallery parts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{HbctError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub cluster_spread: f64,
    pub class_center_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            samples_per_class: 60,
            input_dim: 16,
            cluster_spread: 1.0,
            class_center_scale: 4.0,
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.input_dim == 0 {
            return Err(HbctError::invalid(
                "class count and input dimension must be positive",
            ));
        }
        if self.samples_per_class < 3 {
            return Err(HbctError::invalid(format!(
                "need at least 3 samples per class to split three ways, got {}",
                self.samples_per_class
            )));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(HbctError::invalid("cluster spread must be positive"));
        }
        if !(self.class_center_scale >= 0.0 && self.class_center_scale.is_finite()) {
            return Err(HbctError::invalid(
                "class center scale must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Labelled feature vectors. `ids` identify samples across splits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub ids: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn push(&mut self, features: Vec<f64>, label: usize, id: usize) {
        self.features.push(features);
        self.labels.push(label);
        self.ids.push(id);
    }

    /// Samples whose label is below `num_classes`.
    pub fn first_classes(&self, num_classes: usize) -> Samples {
        self.filter(|_, label| label < num_classes)
    }

    pub fn filter(&self, keep: impl Fn(usize, usize) -> bool) -> Samples {
        let mut out = Samples::default();
        for i in 0..self.len() {
            if keep(i, self.labels[i]) {
                out.push(self.features[i].clone(), self.labels[i], self.ids[i]);
            }
        }
        out
    }

    /// A seeded random subset holding `fraction` of the samples (at least one).
    pub fn random_fraction(&self, fraction: f64, seed: u64) -> Samples {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let keep = ((self.len() as f64 * fraction).round() as usize).clamp(1, self.len());
        let mut chosen = idx[..keep].to_vec();
        chosen.sort_unstable();
        let mut out = Samples::default();
        for i in chosen {
            out.push(self.features[i].clone(), self.labels[i], self.ids[i]);
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub input_dim: usize,
    pub train: Samples,
    pub query: Samples,
    pub gallery: Samples,
}

/// Draws class centers at radius `class_center_scale` in random directions,
/// then `samples_per_class` points per class with isotropic noise of scale
/// `cluster_spread`. Per class, the first half goes to training and the rest
/// is split evenly between queries and gallery.
pub fn generate_dataset(spec: &SyntheticDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut centers = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        let mut c: Vec<f64> = (0..spec.input_dim).map(|_| normal(&mut rng)).collect();
        let n = c
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        c.iter_mut().for_each(|v| *v *= spec.class_center_scale / n);
        centers.push(c);
    }

    let n = spec.samples_per_class;
    let n_train = n / 2;
    let n_query = (n - n_train) / 2;
    let mut ds = Dataset {
        num_classes: spec.num_classes,
        input_dim: spec.input_dim,
        train: Samples::default(),
        query: Samples::default(),
        gallery: Samples::default(),
    };
    let mut id = 0;
    for (label, center) in centers.iter().enumerate() {
        for k in 0..n {
            let x: Vec<f64> = center
                .iter()
                .map(|c| c + spec.cluster_spread * normal(&mut rng))
                .collect();
            let split = if k < n_train {
                &mut ds.train
            } else if k < n_train + n_query {
                &mut ds.query
            } else {
                &mut ds.gallery
            };
            split.push(x, label, id);
            id += 1;
        }
    }
    Ok(ds)
}
