use crate::autodiff::ops::conv::conv_out_len;
use crate::autodiff::{BackwardOp, Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

struct ReluBackward;

impl<T: Element> BackwardOp<T> for ReluBackward {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let dx = output
            .data()
            .iter()
            .zip(grad_out)
            .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
            .collect();
        vec![Some(dx)]
    }
}

struct MaxPoolBackward {
    /// Flat input index feeding each output element.
    argmax: Vec<usize>,
    input_len: usize,
}

impl<T: Element> BackwardOp<T> for MaxPoolBackward {
    fn name(&self) -> &'static str {
        "max_pool1d"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); self.input_len];
        for (&src, &g) in self.argmax.iter().zip(grad_out) {
            dx[src] += g;
        }
        vec![Some(dx)]
    }
}

struct GlobalAvgPoolBackward {
    length: usize,
}

impl<T: Element> BackwardOp<T> for GlobalAvgPoolBackward {
    fn name(&self) -> &'static str {
        "global_avg_pool1d"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let inv = T::one() / T::from_usize(self.length).unwrap();
        let mut dx = Vec::with_capacity(grad_out.len() * self.length);
        for &g in grad_out {
            dx.extend(std::iter::repeat_n(g * inv, self.length));
        }
        vec![Some(dx)]
    }
}

impl<T: Element> Graph<T> {
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        self.record(value, vec![x], Box::new(ReluBackward))
    }

    /// Windowed max over the last axis of `[N, C, L]`; padded positions never win.
    pub fn max_pool1d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [batch, channels, length] = shape[..] else {
            return Err(Error::shape(
                "max_pool1d",
                format!("input must be [N, C, L], got {shape:?}"),
            ));
        };
        if 2 * padding > kernel {
            return Err(Error::invalid(
                "max_pool1d",
                format!("padding {padding} exceeds half the window {kernel}"),
            ));
        }
        let lout = conv_out_len("max_pool1d", length, kernel, stride, padding)?;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(batch * channels * lout);
        let mut argmax = Vec::with_capacity(batch * channels * lout);
        for row in 0..batch * channels {
            let base = row * length;
            for t in 0..lout {
                let start = (t * stride) as isize - padding as isize;
                let lo = start.max(0) as usize;
                let hi = ((start + kernel as isize) as usize).min(length);
                let mut best = lo;
                for i in lo + 1..hi {
                    if xv[base + i] > xv[base + best] {
                        best = i;
                    }
                }
                out.push(xv[base + best]);
                argmax.push(base + best);
            }
        }
        let value = Tensor::new(vec![batch, channels, lout], out)?;
        let rule = MaxPoolBackward {
            argmax,
            input_len: xv.len(),
        };
        self.record(value, vec![x], Box::new(rule))
    }

    /// Mean over the temporal axis: `[N, C, L]` → `[N, C]`.
    pub fn global_avg_pool1d(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let [batch, channels, length] = shape[..] else {
            return Err(Error::shape(
                "global_avg_pool1d",
                format!("input must be [N, C, L], got {shape:?}"),
            ));
        };
        if length == 0 {
            return Err(Error::shape("global_avg_pool1d", "empty temporal axis"));
        }
        let inv = T::one() / T::from_usize(length).unwrap();
        let data = self
            .value(x)
            .data()
            .chunks(length)
            .map(|row| row.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![batch, channels], data)?;
        self.record(value, vec![x], Box::new(GlobalAvgPoolBackward { length }))
    }
}
