//! Synthetic binary task with LFs of known precision.
//!
//! Two balanced classes. Each row has `num_features` binary features: the
//! first `clean + noisy` are LF triggers that fire with a class-dependent
//! rate, the rest are thresholded Gaussian latents whose mean shifts with the
//! class. LF `j` fires on feature `j` and votes for class `j % 2`.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bilevel::{SplitData, TrainingData};
use crate::corpus::{labeled_count, FeatureMode};
use crate::error::{Error, Result};
use crate::harness::Experiment;
use crate::lf::{apply_lfs, LabelingFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedNoiseConfig {
    pub num_features: usize,
    /// Labeled rows, split evenly into supervised and validation halves.
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub clean_lfs: usize,
    pub noisy_lfs: usize,
    /// Firing rate of a clean LF's feature on its target class and on the
    /// other class.
    pub clean_rates: (f64, f64),
    pub noisy_rates: (f64, f64),
    /// Class-conditional latent mean `+shift` / `-shift` for the remaining
    /// features.
    pub latent_shift: f64,
}

impl Default for PlantedNoiseConfig {
    fn default() -> Self {
        PlantedNoiseConfig {
            num_features: 20,
            labeled: 400,
            unlabeled: 4000,
            test: 500,
            clean_lfs: 4,
            noisy_lfs: 2,
            clean_rates: (0.45, 0.05),
            noisy_rates: (0.33, 0.27),
            latent_shift: 0.25,
        }
    }
}

impl PlantedNoiseConfig {
    /// Default generator with a train pool of `pool` rows of which
    /// `fraction` are labeled.
    pub fn with_labeled_fraction(pool: usize, fraction: f64) -> Self {
        let labeled = labeled_count(pool, fraction);
        PlantedNoiseConfig {
            labeled,
            unlabeled: pool - labeled,
            ..PlantedNoiseConfig::default()
        }
    }

    pub fn num_lfs(&self) -> usize {
        self.clean_lfs + self.noisy_lfs
    }

    /// Population precision of LF `j` under balanced classes.
    pub fn precision(&self, j: usize) -> f64 {
        let (on, off) = self.rates(j);
        on / (on + off)
    }

    pub fn is_noisy(&self, j: usize) -> bool {
        j >= self.clean_lfs
    }

    fn rates(&self, j: usize) -> (f64, f64) {
        if self.is_noisy(j) {
            self.noisy_rates
        } else {
            self.clean_rates
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_lfs() > self.num_features {
            return Err(Error::Config("more LFs than features".into()));
        }
        if self.labeled < 4 || self.test == 0 {
            return Err(Error::Config("need at least 4 labeled rows and 1 test row".into()));
        }
        Ok(())
    }
}

fn sample_rows<R: Rng>(cfg: &PlantedNoiseConfig, n: usize, rng: &mut R) -> (Array2<f64>, Vec<usize>) {
    let latent = [
        Normal::new(-cfg.latent_shift, 1.0).expect("finite shift"),
        Normal::new(cfg.latent_shift, 1.0).expect("finite shift"),
    ];
    let m = cfg.num_lfs();
    let mut x = Array2::zeros((n, cfg.num_features));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(rng.gen::<bool>());
        for j in 0..cfg.num_features {
            let on = if j < m {
                let (hit, miss) = cfg.rates(j);
                rng.gen::<f64>() < if j % 2 == class { hit } else { miss }
            } else {
                latent[class].sample(rng) > 0.0
            };
            x[[i, j]] = f64::from(u8::from(on));
        }
        y.push(class);
    }
    (x, y)
}

fn planted_lfs(cfg: &PlantedNoiseConfig, x: &Array2<f64>, y: &[usize]) -> Vec<LabelingFunction> {
    (0..cfg.num_lfs())
        .map(|j| {
            let target = j % 2;
            let fired: Vec<usize> = (0..y.len()).filter(|&i| x[[i, j]] > 0.0).collect();
            let correct = fired.iter().filter(|&&i| y[i] == target).count();
            LabelingFunction {
                id: j,
                propositions: vec![j],
                target_class: target,
                train_precision: if fired.is_empty() {
                    0.0
                } else {
                    correct as f64 / fired.len() as f64
                },
                train_coverage: fired.len() as f64 / y.len() as f64,
            }
        })
        .collect()
}

/// Draws one experiment. The LFs' recorded training precision is measured on
/// the labeled rows.
pub fn planted_noise(cfg: &PlantedNoiseConfig, seed: u64) -> Result<Experiment> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lx, ly) = sample_rows(cfg, cfg.labeled, &mut rng);
    let (ux, _) = sample_rows(cfg, cfg.unlabeled, &mut rng);
    let (tx, ty) = sample_rows(cfg, cfg.test, &mut rng);
    let lfs = planted_lfs(cfg, &lx, &ly);
    let d = cfg.num_features;
    let fire = |x: &Array2<f64>| apply_lfs(&lfs, x, d).map(|t| t.fired);
    let half = cfg.labeled / 2;
    let split = |x: Array2<f64>, labels: Vec<usize>| -> Result<SplitData> {
        Ok(SplitData {
            fired: fire(&x)?,
            x,
            labels,
        })
    };
    let test = split(tx, ty)?;
    let data = TrainingData {
        num_classes: 2,
        supervised: split(lx.slice(s![..half, ..]).to_owned(), ly[..half].to_vec())?,
        validation: split(lx.slice(s![half.., ..]).to_owned(), ly[half..].to_vec())?,
        unlabeled: split(ux, Vec::new())?,
        lfs,
    };
    Ok(Experiment {
        dataset: "planted_noise".into(),
        feature_mode: FeatureMode::Raw,
        labeled_fraction: cfg.labeled as f64 / (cfg.labeled + cfg.unlabeled) as f64,
        data,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_precisions() {
        let cfg = PlantedNoiseConfig::default();
        assert!((cfg.precision(0) - 0.9).abs() < 1e-12);
        assert!((cfg.precision(5) - 0.55).abs() < 1e-12);
        assert!(cfg.is_noisy(4) && !cfg.is_noisy(3));
    }

    #[test]
    fn sizes_and_empirical_precision() {
        let cfg = PlantedNoiseConfig {
            labeled: 4000,
            ..Default::default()
        };
        let exp = planted_noise(&cfg, 3).unwrap();
        assert_eq!(exp.data.supervised.len(), 2000);
        assert_eq!(exp.data.validation.len(), 2000);
        assert_eq!(exp.data.unlabeled.len(), 4000);
        assert_eq!(exp.test.len(), 500);
        assert_eq!(exp.data.lfs.len(), 6);
        for (j, lf) in exp.data.lfs.iter().enumerate() {
            assert!((lf.train_precision - cfg.precision(j)).abs() < 0.05, "lf {j}: {}", lf.train_precision);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = PlantedNoiseConfig::default();
        let a = planted_noise(&cfg, 1).unwrap();
        let b = planted_noise(&cfg, 1).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data.supervised.x, planted_noise(&cfg, 2).unwrap().data.supervised.x);
    }
}
