use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{backward, build_network, forward, infer, Mode, NetworkConfig, NetworkParameters};
use super::optim::{rmsprop_step, RmsState, TrainConfig};
use super::tensor::{mse_loss, Tensor4};
use crate::error::{Error, Result};
use crate::volume::Image2D;

/// Input/target image pairs of one common size.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(height: usize, width: usize) -> Self {
        Dataset {
            height,
            width,
            ..Default::default()
        }
    }

    pub fn push(&mut self, input: &Image2D, target: &Image2D) -> Result<()> {
        for img in [input, target] {
            if (img.height(), img.width()) != (self.height, self.width) {
                return Err(Error::Dimension(format!(
                    "pair image is {}x{}, dataset expects {}x{}",
                    img.height(),
                    img.width(),
                    self.height,
                    self.width
                )));
            }
        }
        self.inputs.push(input.data().to_vec());
        self.targets.push(target.data().to_vec());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> (Tensor4, Tensor4) {
        let shape = [idx.len(), 1, self.height, self.width];
        let gather = |src: &[Vec<f64>]| idx.iter().flat_map(|&i| src[i].iter().copied()).collect();
        (
            Tensor4::from_parts(shape, gather(&self.inputs)),
            Tensor4::from_parts(shape, gather(&self.targets)),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Validation("training set is empty".into()));
        }
        let n = self.height * self.width;
        for (a, b) in self.inputs.iter().zip(&self.targets) {
            if a.len() != n || b.len() != n {
                return Err(Error::Dimension("pair length does not match dataset size".into()));
            }
            if a.iter().chain(b).any(|v| !v.is_finite()) {
                return Err(Error::Validation("training pair holds non-finite values".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub parameters: NetworkParameters,
    /// Mini-batch loss of every iteration, measured before that iteration's update.
    pub loss_history: Vec<f64>,
}

/// Shuffled mini-batches drawn without replacement; the order is redrawn
/// each time the pool runs out.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        let mut s = BatchSampler {
            rng,
            order: (0..n).collect(),
            pos: n,
        };
        s.reshuffle_if_needed();
        s
    }

    fn reshuffle_if_needed(&mut self) {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                self.reshuffle_if_needed();
                let i = self.order[self.pos];
                self.pos += 1;
                i
            })
            .collect()
    }
}

pub fn train(data: &Dataset, net_cfg: &NetworkConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(data, build_network(net_cfg, cfg.seed)?, cfg, |_, _| {})
}

/// Trains from given initial parameters, calling `progress(iteration, loss)`.
pub fn train_with(
    data: &Dataset,
    mut p: NetworkParameters,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    p.validate()?;
    p.config.check_input(data.height, data.width)?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shuffle_rng = ChaCha8Rng::from_rng(&mut master);
    let mut dropout_rng = ChaCha8Rng::from_rng(&mut master);
    let mut sampler = BatchSampler::new(data.len(), shuffle_rng);
    let mut state = RmsState::new(&p);
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let idx = sampler.next(cfg.batch_size);
        let (x, y) = data.batch(&idx);
        let fwd = forward(&p, &x, Mode::Train, &mut dropout_rng, &[])?;
        let loss = mse_loss(&fwd.output, &y)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                reason: format!("loss became {loss}"),
            });
        }
        let grads = backward(&p, &fwd.cache, &y)?;
        rmsprop_step(&mut p, &grads, &mut state, cfg).map_err(|e| match e {
            Error::Divergence { reason, .. } => Error::Divergence { iteration: it, reason },
            other => other,
        })?;
        history.push(loss);
        progress(it, loss);
    }
    Ok(TrainOutcome {
        parameters: p,
        loss_history: history,
    })
}

/// Infer-mode pass over one image.
pub fn correct(p: &NetworkParameters, img: &Image2D) -> Result<Image2D> {
    let x = Tensor4::new([1, 1, img.height(), img.width()], img.data().to_vec())?;
    let out = infer(p, &x)?;
    img.with_data(out.into_data())
}

pub fn write_loss_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(f, "iteration,loss").map_err(|e| Error::io(path, e))?;
    for (i, l) in history.iter().enumerate() {
        writeln!(f, "{i},{l:e}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_history(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad loss row {l:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_visits_everything_before_repeating() {
        let mut s = BatchSampler::new(5, ChaCha8Rng::seed_from_u64(3));
        let mut first: Vec<usize> = s.next(5);
        first.sort();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next(7).len(), 7);
    }

    #[test]
    fn empty_dataset_rejected() {
        let d = Dataset::new(8, 8);
        assert!(train(&d, &NetworkConfig::default(), &TrainConfig::default()).is_err());
    }
}
