use crate::autodiff::{BackwardOp, Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Geometry of one 1D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub length: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_len(&self) -> usize {
        (self.length + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output length of a convolution or pooling window, validating the inputs.
pub fn conv_out_len(op: &'static str, length: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be >= 1"));
    }
    if kernel == 0 {
        return Err(Error::invalid(op, "kernel size must be >= 1"));
    }
    let padded = length + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(
            op,
            format!("padded length {padded} (L={length}, padding={padding}) shorter than kernel {kernel}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Unfolds sample `x` (`[Cin, L]`) into columns `[Cin·K, Lout]`.
fn im2col<T: Element>(x: &[T], g: &ConvGeometry, lout: usize, cols: &mut [T]) {
    for ci in 0..g.in_channels {
        let row_base = &x[ci * g.length..(ci + 1) * g.length];
        for k in 0..g.kernel {
            let dst = &mut cols[(ci * g.kernel + k) * lout..(ci * g.kernel + k + 1) * lout];
            for (t, d) in dst.iter_mut().enumerate() {
                let pos = (t * g.stride + k) as isize - g.padding as isize;
                *d = if pos >= 0 && (pos as usize) < g.length {
                    row_base[pos as usize]
                } else {
                    T::zero()
                };
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeometry, lout: usize, dx: &mut [T]) {
    for ci in 0..g.in_channels {
        for k in 0..g.kernel {
            let src = &cols[(ci * g.kernel + k) * lout..(ci * g.kernel + k + 1) * lout];
            for (t, s) in src.iter().enumerate() {
                let pos = (t * g.stride + k) as isize - g.padding as isize;
                if pos >= 0 && (pos as usize) < g.length {
                    dx[ci * g.length + pos as usize] += *s;
                }
            }
        }
    }
}

/// Cross-correlation forward on raw buffers. `out` is `[N, Cout, Lout]`.
pub fn conv1d_forward<T: Element>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeometry) -> Vec<T> {
    let lout = g.out_len();
    let ck = g.in_channels * g.kernel;
    let mut out = vec![T::zero(); g.batch * g.out_channels * lout];
    let mut cols = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); ck * lout]
    };
    for n in 0..g.batch {
        let xn = &x[n * g.in_channels * g.length..(n + 1) * g.in_channels * g.length];
        let yn = &mut out[n * g.out_channels * lout..(n + 1) * g.out_channels * lout];
        if let Some(b) = b {
            for (co, row) in yn.chunks_mut(lout).enumerate() {
                row.fill(b[co]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        let cols_ref: &[T] = if g.pointwise() {
            xn
        } else {
            im2col(xn, g, lout, &mut cols);
            &cols
        };
        T::gemm(g.out_channels, ck, lout, w, false, cols_ref, false, beta, yn);
    }
    out
}

struct Conv1dBackward {
    geometry: ConvGeometry,
}

impl<T: Element> BackwardOp<T> for Conv1dBackward {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let g = &self.geometry;
        let lout = g.out_len();
        let ck = g.in_channels * g.kernel;
        let x = inputs[0].data();
        let w = inputs[1].data();
        let mut dx = needs[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = needs[1].then(|| vec![T::zero(); w.len()]);
        let mut db = (inputs.len() > 2 && needs[2]).then(|| vec![T::zero(); g.out_channels]);
        let mut cols = vec![T::zero(); ck * lout];
        let mut dcols = vec![T::zero(); ck * lout];
        for n in 0..g.batch {
            let xn = &x[n * g.in_channels * g.length..(n + 1) * g.in_channels * g.length];
            let dy = &grad_out[n * g.out_channels * lout..(n + 1) * g.out_channels * lout];
            if let Some(db) = db.as_mut() {
                for (co, row) in dy.chunks(lout).enumerate() {
                    db[co] += row.iter().copied().sum::<T>();
                }
            }
            if let Some(dw) = dw.as_mut() {
                let cols_ref: &[T] = if g.pointwise() {
                    xn
                } else {
                    im2col(xn, g, lout, &mut cols);
                    &cols
                };
                // dW[Cout, CK] += dY[Cout, Lout] · colsᵀ
                T::gemm(g.out_channels, lout, ck, dy, false, cols_ref, true, T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx[n * g.in_channels * g.length..(n + 1) * g.in_channels * g.length];
                if g.pointwise() {
                    T::gemm(ck, g.out_channels, lout, w, true, dy, false, T::zero(), dxn);
                } else {
                    T::gemm(ck, g.out_channels, lout, w, true, dy, false, T::zero(), &mut dcols);
                    col2im(&dcols, g, lout, dxn);
                }
            }
        }
        let mut out = vec![dx, dw];
        if inputs.len() > 2 {
            out.push(db);
        }
        out
    }
}

impl<T: Element> Graph<T> {
    /// 1D cross-correlation (no kernel flip).
    ///
    /// `x: [N, Cin, L]`, `weight: [Cout, Cin, K]`, `bias: [Cout]` → `[N, Cout, Lout]`
    /// with `Lout = floor((L + 2·padding − K) / stride) + 1`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let [batch, in_channels, length] = xs[..] else {
            return Err(Error::shape("conv1d", format!("input must be [N, Cin, L], got {xs:?}")));
        };
        let [out_channels, w_in, kernel] = ws[..] else {
            return Err(Error::shape(
                "conv1d",
                format!("weight must be [Cout, Cin, K], got {ws:?}"),
            ));
        };
        if w_in != in_channels {
            return Err(Error::shape(
                "conv1d",
                format!("Cin: input has {in_channels} channels, weight expects {w_in}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [out_channels] {
                return Err(Error::shape(
                    "conv1d",
                    format!("Cout: bias shape {:?}, expected [{out_channels}]", self.shape(b)),
                ));
            }
        }
        let lout = conv_out_len("conv1d", length, kernel, stride, padding)?;
        let geometry = ConvGeometry {
            batch,
            in_channels,
            out_channels,
            length,
            kernel,
            stride,
            padding,
        };
        let data = conv1d_forward(
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geometry,
        );
        let value = Tensor::new(vec![batch, out_channels, lout], data)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record(value, inputs, Box::new(Conv1dBackward { geometry }))
    }
}
