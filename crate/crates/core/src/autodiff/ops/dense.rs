use rand::Rng;

use crate::autodiff::{BackwardOp, Element, Graph, Mode, Tensor, Var};
use crate::error::{Error, Result};

struct LinearBackward {
    batch: usize,
    din: usize,
    dout: usize,
}

impl<T: Element> BackwardOp<T> for LinearBackward {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let (n, din, dout) = (self.batch, self.din, self.dout);
        let x = inputs[0].data();
        let w = inputs[1].data();
        let dx = needs[0].then(|| {
            let mut dx = vec![T::zero(); n * din];
            T::gemm(n, dout, din, grad_out, false, w, false, T::zero(), &mut dx);
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![T::zero(); dout * din];
            T::gemm(dout, n, din, grad_out, true, x, false, T::zero(), &mut dw);
            dw
        });
        let mut out = vec![dx, dw];
        if inputs.len() > 2 {
            out.push(needs[2].then(|| {
                let mut db = vec![T::zero(); dout];
                for row in grad_out.chunks(dout) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += *g;
                    }
                }
                db
            }));
        }
        out
    }
}

struct AddBackward;

impl<T: Element> BackwardOp<T> for AddBackward {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        needs.iter().map(|&n| n.then(|| grad_out.to_vec())).collect()
    }
}

struct ScaleBackward<T> {
    factor: T,
}

impl<T: Element> BackwardOp<T> for ScaleBackward<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![Some(grad_out.iter().map(|&g| g * self.factor).collect())]
    }
}

struct MulConstBackward<T> {
    factor: Vec<T>,
    name: &'static str,
}

impl<T: Element> BackwardOp<T> for MulConstBackward<T> {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        vec![Some(grad_out.iter().zip(&self.factor).map(|(&g, &f)| g * f).collect())]
    }
}

struct ConcatBackward {
    batch: usize,
    widths: Vec<usize>,
}

impl<T: Element> BackwardOp<T> for ConcatBackward {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let total: usize = self.widths.iter().sum();
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.widths.len());
        for (&w, &need) in self.widths.iter().zip(needs) {
            out.push(need.then(|| {
                let mut g = Vec::with_capacity(self.batch * w);
                for n in 0..self.batch {
                    g.extend_from_slice(&grad_out[n * total + offset..n * total + offset + w]);
                }
                g
            }));
            offset += w;
        }
        out
    }
}

struct SliceRowsBackward {
    start: usize,
    row_len: usize,
    input_len: usize,
}

impl<T: Element> BackwardOp<T> for SliceRowsBackward {
    fn name(&self) -> &'static str {
        "slice_rows"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); self.input_len];
        let off = self.start * self.row_len;
        dx[off..off + grad_out.len()].copy_from_slice(grad_out);
        vec![Some(dx)]
    }
}

struct WeightedSumBackward<T> {
    weights: Vec<T>,
}

impl<T: Element> BackwardOp<T> for WeightedSumBackward<T> {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let g = grad_out[0];
        vec![Some(self.weights.iter().map(|&w| w * g).collect())]
    }
}

impl<T: Element> Graph<T> {
    /// Affine map `x · Wᵀ + b` for `x: [N, Din]`, `W: [Dout, Din]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let [batch, din] = xs[..] else {
            return Err(Error::shape("linear", format!("input must be [N, Din], got {xs:?}")));
        };
        let [dout, w_in] = ws[..] else {
            return Err(Error::shape(
                "linear",
                format!("weight must be [Dout, Din], got {ws:?}"),
            ));
        };
        if w_in != din {
            return Err(Error::shape(
                "linear",
                format!("Din: input has {din} features, weight expects {w_in}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [dout] {
                return Err(Error::shape(
                    "linear",
                    format!("Dout: bias shape {:?}, expected [{dout}]", self.shape(b)),
                ));
            }
        }
        let mut out = vec![T::zero(); batch * dout];
        let beta = match bias {
            Some(b) => {
                let bv = self.value(b).data();
                for row in out.chunks_mut(dout) {
                    row.copy_from_slice(bv);
                }
                T::one()
            }
            None => T::zero(),
        };
        T::gemm(
            batch,
            din,
            dout,
            self.value(x).data(),
            false,
            self.value(weight).data(),
            true,
            beta,
            &mut out,
        );
        let value = Tensor::new(vec![batch, dout], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record(value, inputs, Box::new(LinearBackward { batch, din, dout }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        self.record(value, vec![a, b], Box::new(AddBackward))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.record(value, vec![x], Box::new(ScaleBackward { factor }))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, factor: Vec<T>) -> Result<Var> {
        self.mul_const_named(x, factor, "mul_const")
    }

    fn mul_const_named(&mut self, x: Var, factor: Vec<T>, name: &'static str) -> Result<Var> {
        if factor.len() != self.value(x).numel() {
            return Err(Error::shape(
                name,
                format!("{} factors for {} values", factor.len(), self.value(x).numel()),
            ));
        }
        let data = self.value(x).data().iter().zip(&factor).map(|(&v, &f)| v * f).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        self.record(value, vec![x], Box::new(MulConstBackward { factor, name }))
    }

    /// Concatenates `[N, D_i]` tensors along the feature axis, in order.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::invalid("concat", "empty input list"))?;
        let batch = self.shape(*first)[0];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != 2 {
                return Err(Error::shape("concat", format!("inputs must be [N, D], got {s:?}")));
            }
            if s[0] != batch {
                return Err(Error::shape(
                    "concat",
                    format!("N: batch {} differs from {batch}", s[0]),
                ));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(batch * total);
        for n in 0..batch {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[n * w..(n + 1) * w]);
            }
        }
        let value = Tensor::new(vec![batch, total], data)?;
        self.record(value, xs.to_vec(), Box::new(ConcatBackward { batch, widths }))
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(x).slice_rows(start, end)?;
        let rows = self.shape(x)[0];
        let input_len = self.value(x).numel();
        let row_len = input_len.checked_div(rows).unwrap_or(0);
        let rule = SliceRowsBackward {
            start,
            row_len,
            input_len,
        };
        self.record(value, vec![x], Box::new(rule))
    }

    /// Scalar `Σ x_i · w_i` against constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(x).numel() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), self.value(x).numel()),
            ));
        }
        let s = self.value(x).data().iter().zip(&weights).map(|(&v, &w)| v * w).sum();
        self.record(Tensor::scalar(s), vec![x], Box::new(WeightedSumBackward { weights }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        self.weighted_sum(x, vec![T::one(); n])
    }

    /// Channel dropout over `[N, C, L]`: whole `(sample, channel)` rows are
    /// zeroed with probability `rate`, survivors scaled by `1 / (1 − rate)`.
    /// Identity in eval mode.
    pub fn spatial_dropout1d<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
            return Err(Error::invalid(
                "spatial_dropout1d",
                format!("rate {rate} outside [0, 1]"),
            ));
        }
        let shape = self.shape(x).to_vec();
        let [batch, channels, length] = shape[..] else {
            return Err(Error::shape(
                "spatial_dropout1d",
                format!("input must be [N, C, L], got {shape:?}"),
            ));
        };
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = if rate >= 1.0 {
            T::zero()
        } else {
            T::from_f64_lossy(1.0 / (1.0 - rate))
        };
        let mut mask = Vec::with_capacity(batch * channels * length);
        for _ in 0..batch * channels {
            let dropped = rng.random::<f64>() < rate;
            let m = if dropped { T::zero() } else { keep };
            mask.extend(std::iter::repeat_n(m, length));
        }
        self.mul_const_named(x, mask, "spatial_dropout1d")
    }
}
