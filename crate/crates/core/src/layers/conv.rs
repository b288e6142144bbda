use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Element, Padding, Tensor, WindowView};

use super::{check_same_dims, glorot_uniform, missing_cache, Layer, LayerKind, Mode, ParamSlot};

/// 2-D convolution over `(N, H, W, Cin)` with a `(kh, kw, Cin, Cout)` kernel,
/// lowered to a matrix product over im2col patches.
pub struct Conv2d<T: Element> {
    kernel: (usize, usize),
    in_channels: usize,
    out_channels: usize,
    stride: (usize, usize),
    padding: Padding,
    params: Vec<ParamSlot<T>>,
    cache: Option<ConvCache<T>>,
}

struct ConvCache<T> {
    input_dims: Vec<usize>,
    window: WindowView,
    cols: Vec<T>,
}

impl<T: Element> Conv2d<T> {
    pub fn new(
        kernel: (usize, usize),
        in_channels: usize,
        out_channels: usize,
        stride: (usize, usize),
        padding: Padding,
        seed: u64,
    ) -> Result<Self> {
        if kernel.0 == 0 || kernel.1 == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("conv2d extents must be positive".into()));
        }
        if !(1..=2).contains(&stride.0) || !(1..=2).contains(&stride.1) {
            return Err(Error::Config(format!("conv2d stride {stride:?} not in 1..=2")));
        }
        let (kh, kw) = kernel;
        let weights = glorot_uniform(
            &[kh, kw, in_channels, out_channels],
            kh * kw * in_channels,
            kh * kw * out_channels,
            seed,
        )?;
        let bias = Tensor::zeros(&[out_channels])?;
        Ok(Conv2d {
            kernel,
            in_channels,
            out_channels,
            stride,
            padding,
            params: vec![ParamSlot::learned("kernel", weights), ParamSlot::learned("bias", bias)],
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn window(&self, dims: &[usize]) -> Result<WindowView> {
        if dims.len() != 4 {
            return Err(Error::Shape(format!("conv2d expects (N,H,W,C), got {dims:?}")));
        }
        if dims[3] != self.in_channels {
            return Err(Error::Shape(format!(
                "conv2d expects {} input channels, got {}",
                self.in_channels, dims[3]
            )));
        }
        WindowView::new((dims[1], dims[2]), self.kernel, self.stride, self.padding)
    }

    fn patch_len(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.in_channels
    }

    /// Rows are output positions `(n, i, j)`, columns are taps `(a, b, c)`.
    fn im2col(&self, x: &Tensor<T>, w: &WindowView) -> Vec<T> {
        let dims = x.dims();
        let (n, h, wd, c) = (dims[0], dims[1], dims[2], dims[3]);
        let k = self.patch_len();
        let xs = x.data();
        let mut cols = vec![T::zero(); n * w.out_h * w.out_w * k];
        let mut row = 0;
        for b in 0..n {
            for i in 0..w.out_h {
                for j in 0..w.out_w {
                    let dst = &mut cols[row * k..(row + 1) * k];
                    for ka in 0..self.kernel.0 {
                        for kb in 0..self.kernel.1 {
                            if let Some((y, xx)) = w.source(i, j, ka, kb) {
                                let src = ((b * h + y) * wd + xx) * c;
                                let off = (ka * self.kernel.1 + kb) * c;
                                dst[off..off + c].copy_from_slice(&xs[src..src + c]);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        cols
    }

    fn project(&self, cols: &[T], rows: usize) -> Vec<T> {
        let k = self.patch_len();
        let co = self.out_channels;
        let mut out = vec![T::zero(); rows * co];
        matmul_into(cols, self.params[0].value.data(), &mut out, rows, k, co);
        let bias = self.params[1].value.data();
        for r in out.chunks_exact_mut(co) {
            for (v, &b) in r.iter_mut().zip(bias) {
                *v = *v + b;
            }
        }
        out
    }
}

impl<T: Element> Layer<T> for Conv2d<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Conv2d
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let w = self.window(input)?;
        Ok(vec![input[0], w.out_h, w.out_w, self.out_channels])
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let w = self.window(x.dims())?;
        let cols = self.im2col(x, &w);
        let rows = x.dims()[0] * w.out_h * w.out_w;
        let out = self.project(&cols, rows);
        self.cache = Some(ConvCache {
            input_dims: x.dims().to_vec(),
            window: w,
            cols,
        });
        Tensor::from_vec(&[x.dims()[0], w.out_h, w.out_w, self.out_channels], out)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w = self.window(x.dims())?;
        let cols = self.im2col(x, &w);
        let rows = x.dims()[0] * w.out_h * w.out_w;
        let out = self.project(&cols, rows);
        Tensor::from_vec(&[x.dims()[0], w.out_h, w.out_w, self.out_channels], out)
    }

    fn backward(&mut self, d_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache(LayerKind::Conv2d))?;
        let w = cache.window;
        let dims = &cache.input_dims;
        let (n, h, wd, c) = (dims[0], dims[1], dims[2], dims[3]);
        check_same_dims(LayerKind::Conv2d, d_out, &[n, w.out_h, w.out_w, self.out_channels])?;
        let rows = n * w.out_h * w.out_w;
        let k = self.patch_len();
        let co = self.out_channels;
        let dy = d_out.data();

        // dW = cols^T . dY
        let cols_t = Tensor::from_vec(&[rows, k], cache.cols.clone())?.transpose2()?;
        let mut dw = vec![T::zero(); k * co];
        matmul_into(cols_t.data(), dy, &mut dw, k, rows, co);
        let mut db = vec![T::zero(); co];
        for r in dy.chunks_exact(co) {
            for (acc, &g) in db.iter_mut().zip(r) {
                *acc = *acc + g;
            }
        }

        // dCols = dY . W^T, then scatter back onto the input grid
        let w_t = self.params[0].value.reshape(&[k, co])?.transpose2()?;
        let mut dcols = vec![T::zero(); rows * k];
        matmul_into(dy, w_t.data(), &mut dcols, rows, co, k);
        let mut dx = vec![T::zero(); n * h * wd * c];
        let mut row = 0;
        for b in 0..n {
            for i in 0..w.out_h {
                for j in 0..w.out_w {
                    let src = &dcols[row * k..(row + 1) * k];
                    for ka in 0..self.kernel.0 {
                        for kb in 0..self.kernel.1 {
                            if let Some((y, xx)) = w.source(i, j, ka, kb) {
                                let dst = ((b * h + y) * wd + xx) * c;
                                let off = (ka * self.kernel.1 + kb) * c;
                                for ch in 0..c {
                                    dx[dst + ch] = dx[dst + ch] + src[off + ch];
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }

        self.params[0].write_grad(&dw);
        self.params[1].write_grad(&db);
        Tensor::from_vec(dims, dx)
    }

    fn params(&self) -> &[ParamSlot<T>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [ParamSlot<T>] {
        &mut self.params
    }
}
