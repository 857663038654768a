use crate::autodiff::{BackwardOp, Element, Graph, Mode, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// False until the first train-mode forward pass.
    pub initialized: bool,
    pub momentum: T,
    pub eps: T,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            initialized: false,
            momentum: T::from_f64_lossy(BN_MOMENTUM),
            eps: T::from_f64_lossy(BN_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn cast<U: Element>(&self) -> BatchNormState<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect();
        BatchNormState {
            running_mean: conv(&self.running_mean),
            running_var: conv(&self.running_var),
            initialized: self.initialized,
            momentum: U::from_f64_lossy(self.momentum.to_f64_lossy()),
            eps: U::from_f64_lossy(self.eps.to_f64_lossy()),
        }
    }
}

struct BatchNormBackward<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
    batch: usize,
    channels: usize,
    length: usize,
}

impl<T: Element> BackwardOp<T> for BatchNormBackward<T> {
    fn name(&self) -> &'static str {
        "batch_norm1d"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (n, c_count, l) = (self.batch, self.channels, self.length);
        let gamma = inputs[1].data();
        let m = T::from_usize(n * l).unwrap();
        let mut dgamma = vec![T::zero(); c_count];
        let mut dbeta = vec![T::zero(); c_count];
        let mut dx = needs[0].then(|| vec![T::zero(); grad_out.len()]);
        for c in 0..c_count {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for s in 0..n {
                let base = (s * c_count + c) * l;
                for i in base..base + l {
                    sum_dy += grad_out[i];
                    sum_dy_xhat += grad_out[i] * self.xhat[i];
                }
            }
            dgamma[c] = sum_dy_xhat;
            dbeta[c] = sum_dy;
            if let Some(dx) = dx.as_mut() {
                let scale = gamma[c] * self.inv_std[c];
                for s in 0..n {
                    let base = (s * c_count + c) * l;
                    for i in base..base + l {
                        dx[i] = if self.train {
                            scale / m * (m * grad_out[i] - sum_dy - self.xhat[i] * sum_dy_xhat)
                        } else {
                            scale * grad_out[i]
                        };
                    }
                }
            }
        }
        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
    }
}

impl<T: Element> Graph<T> {
    /// Batch normalization over `[N, C, L]`, per channel across batch and length.
    ///
    /// Train mode normalizes with batch statistics (biased variance) and updates
    /// the running statistics with the unbiased variance; eval mode uses the
    /// running statistics only.
    pub fn batch_norm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        mode: Mode,
        layer: &str,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [batch, channels, length] = shape[..] else {
            return Err(Error::shape(
                "batch_norm1d",
                format!("input must be [N, C, L], got {shape:?}"),
            ));
        };
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [channels] {
                return Err(Error::shape(
                    "batch_norm1d",
                    format!("{what} shape {:?}, expected [{channels}]", self.shape(v)),
                ));
            }
        }
        if state.channels() != channels {
            return Err(Error::shape(
                "batch_norm1d",
                format!("state tracks {} channels, input has {channels}", state.channels()),
            ));
        }
        let m = batch * length;
        let xv = self.value(x).data();
        let (mean, inv_std) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(Error::invalid(
                        "batch_norm1d",
                        format!("train mode needs N·L >= 2 per channel, got {m}"),
                    ));
                }
                let mf = T::from_usize(m).unwrap();
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                for c in 0..channels {
                    let mut sum = T::zero();
                    for s in 0..batch {
                        let base = (s * channels + c) * length;
                        sum += xv[base..base + length].iter().copied().sum::<T>();
                    }
                    let mu = sum / mf;
                    let mut sq = T::zero();
                    for s in 0..batch {
                        let base = (s * channels + c) * length;
                        for &v in &xv[base..base + length] {
                            sq += (v - mu) * (v - mu);
                        }
                    }
                    mean[c] = mu;
                    var[c] = sq / mf;
                }
                let one = T::one();
                let unbias = mf / (mf - one);
                for c in 0..channels {
                    state.running_mean[c] = (one - state.momentum) * state.running_mean[c] + state.momentum * mean[c];
                    state.running_var[c] =
                        (one - state.momentum) * state.running_var[c] + state.momentum * var[c] * unbias;
                }
                state.initialized = true;
                let inv_std: Vec<T> = var.iter().map(|&v| one / (v + state.eps).sqrt()).collect();
                (mean, inv_std)
            }
            Mode::Eval => {
                if !state.initialized {
                    return Err(Error::UninitializedStats {
                        layer: layer.to_string(),
                    });
                }
                let inv_std = state
                    .running_var
                    .iter()
                    .map(|&v| T::one() / (v + state.eps).sqrt())
                    .collect();
                (state.running_mean.clone(), inv_std)
            }
        };
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for s in 0..batch {
            for c in 0..channels {
                let base = (s * channels + c) * length;
                for i in base..base + length {
                    xhat[i] = (xv[i] - mean[c]) * inv_std[c];
                    out[i] = gv[c] * xhat[i] + bv[c];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let rule = BatchNormBackward {
            xhat,
            inv_std,
            train: mode == Mode::Train,
            batch,
            channels,
            length,
        };
        self.record(value, vec![x, gamma, beta], Box::new(rule))
    }
}
