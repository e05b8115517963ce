use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::DescriptorTriple;
use crate::exec::Exec;
use crate::merger::{merger_backward_acc, merger_loss, MergerError, MergerParams};
use crate::vector::UnitVector;

/// Samples per gradient-accumulation chunk. Fixed so the summation order of
/// a batch gradient does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub triple: DescriptorTriple,
    pub target: UnitVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 15, step_size: 1e-4, batch_size: 64, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub params: MergerParams,
    /// Mean training loss of every epoch, accumulated while the epoch ran.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, p: &mut MergerParams, g: &MergerParams, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((x, &gi), m), v) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
            *x -= cfg.step_size * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Trains from the standard initialization drawn with `cfg.seed`.
pub fn train_merger(data: &[TrainSample], cfg: &TrainConfig, exec: Exec) -> Result<TrainReport, MergerError> {
    let dim = data.first().ok_or(MergerError::EmptyDataset)?.target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = MergerParams::init(dim, &mut rng);
    train_from(init, data, cfg, exec)
}

/// Mini-batch Adam on mean `1 - cos` loss. Batches are reshuffled every
/// epoch from a generator seeded with `cfg.seed`.
pub fn train_from(
    mut params: MergerParams,
    data: &[TrainSample],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainReport, MergerError> {
    if data.is_empty() {
        return Err(MergerError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_ba7c);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = Adam::new(params.len());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, idx) in order.chunks(batch).enumerate() {
            let (loss, mut grad) = batch_gradient(&params, data, idx, exec)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(MergerError::NonFiniteLoss { epoch, step, loss });
            }
            total += loss;
            grad.scale(1.0 / idx.len() as f64);
            adam.step(&mut params, &grad, cfg);
        }
        let mean = total / data.len() as f64;
        log::debug!("merger epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainReport { params, epoch_losses })
}

/// Summed loss and summed gradient over `data[idx]`.
fn batch_gradient(
    params: &MergerParams,
    data: &[TrainSample],
    idx: &[usize],
    exec: Exec,
) -> Result<(f64, MergerParams), MergerError> {
    let zero = || Ok((0.0, MergerParams::zeros(params.dim())));
    let acc = exec.chunked_fold(
        idx,
        GRAD_CHUNK,
        zero,
        |acc: &mut Result<(f64, MergerParams), MergerError>, &i| {
            if let Ok((loss, grad)) = acc {
                let s = &data[i];
                match merger_backward_acc(params, &s.triple, &s.target, grad) {
                    Ok(l) => *loss += l,
                    Err(e) => *acc = Err(e),
                }
            }
        },
        |acc, part| match (acc.as_mut(), part) {
            (Ok((l, g)), Ok((pl, pg))) => {
                *l += pl;
                g.add_scaled(&pg, 1.0);
            }
            (Ok(_), Err(e)) => *acc = Err(e),
            (Err(_), _) => {}
        },
    );
    acc
}

/// Mean loss of `params` over `data`.
pub fn mean_loss(params: &MergerParams, data: &[TrainSample], exec: Exec) -> Result<f64, MergerError> {
    if data.is_empty() {
        return Err(MergerError::EmptyDataset);
    }
    let losses = exec.map(data, |s| merger_loss(params, &s.triple, &s.target));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> UnitVector {
        UnitVector::new((0..d).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap()
    }

    fn sample(rng: &mut ChaCha8Rng, d: usize) -> TrainSample {
        let triple = DescriptorTriple::new(random_unit(rng, d), random_unit(rng, d), random_unit(rng, d)).unwrap();
        let target = triple.masked.clone();
        TrainSample { triple, target }
    }

    #[test]
    fn zero_epochs_leave_params_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<_> = (0..4).map(|_| sample(&mut rng, 4)).collect();
        let p0 = MergerParams::init(4, &mut rng);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let r = train_from(p0.clone(), &data, &cfg, Exec::Sequential).unwrap();
        assert_eq!(r.params, p0);
        assert!(r.epoch_losses.is_empty());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert_eq!(train_merger(&[], &TrainConfig::default(), Exec::Sequential).unwrap_err(), MergerError::EmptyDataset);
    }

    #[test]
    fn single_sample_loss_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = vec![sample(&mut rng, 6)];
        let cfg = TrainConfig { epochs: 30, step_size: 1e-3, seed: 9, ..Default::default() };
        let r = train_merger(&data, &cfg, Exec::Sequential).unwrap();
        for w in r.epoch_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "{:?}", r.epoch_losses);
        }
        assert!(r.epoch_losses.last().unwrap() < &r.epoch_losses[0]);
    }

    #[test]
    fn training_is_deterministic_across_exec_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<_> = (0..100).map(|_| sample(&mut rng, 4)).collect();
        let cfg = TrainConfig { epochs: 2, step_size: 1e-3, batch_size: 32, seed: 5, ..Default::default() };
        let a = train_merger(&data, &cfg, Exec::Sequential).unwrap();
        let b = train_merger(&data, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_loss_of_untrained_net_matches_uniform_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<_> = (0..10).map(|_| sample(&mut rng, 5)).collect();
        let p = MergerParams::init(5, &mut rng);
        let expect: f64 = data
            .iter()
            .map(|s| {
                let t = &s.triple;
                let avg: Vec<f64> = (0..5).map(|j| t.global[j] + t.masked[j] + t.bbox[j]).collect();
                1.0 - UnitVector::new(avg).unwrap().cosine(&s.target)
            })
            .sum::<f64>()
            / 10.0;
        assert!((mean_loss(&p, &data, Exec::Parallel).unwrap() - expect).abs() < 1e-12);
    }
}
