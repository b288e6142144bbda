use crate::error::{Error, Result};
use crate::tensor::{Element, Padding, Tensor, WindowView};

use super::{check_same_dims, missing_cache, Layer, LayerKind, Mode};

/// Max pooling with valid padding. Backward routes each output gradient to
/// the first maximal input in row-major window order.
pub struct MaxPool2d<T: Element> {
    pool: (usize, usize),
    stride: (usize, usize),
    cache: Option<PoolCache>,
    _marker: std::marker::PhantomData<T>,
}

struct PoolCache {
    input_dims: Vec<usize>,
    argmax: Vec<usize>,
}

impl<T: Element> MaxPool2d<T> {
    pub fn new(pool: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        if pool.0 == 0 || pool.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Config("maxpool extents must be positive".into()));
        }
        Ok(MaxPool2d {
            pool,
            stride,
            cache: None,
            _marker: std::marker::PhantomData,
        })
    }

    fn window(&self, dims: &[usize]) -> Result<WindowView> {
        if dims.len() != 4 {
            return Err(Error::Shape(format!("maxpool2d expects (N,H,W,C), got {dims:?}")));
        }
        WindowView::new((dims[1], dims[2]), self.pool, self.stride, Padding::Valid)
    }

    fn pool_with_index(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let w = self.window(x.dims())?;
        let d = x.dims();
        let (n, h, wd, c) = (d[0], d[1], d[2], d[3]);
        let xs = x.data();
        let mut out = Vec::with_capacity(n * w.out_h * w.out_w * c);
        let mut idx = Vec::with_capacity(out.capacity());
        for b in 0..n {
            for i in 0..w.out_h {
                for j in 0..w.out_w {
                    for ch in 0..c {
                        let mut best: Option<(T, usize)> = None;
                        for a in 0..self.pool.0 {
                            for e in 0..self.pool.1 {
                                let (y, xx) = w.source(i, j, a, e).expect("valid window");
                                let off = ((b * h + y) * wd + xx) * c + ch;
                                let v = xs[off];
                                if best.is_none_or(|(m, _)| v > m) {
                                    best = Some((v, off));
                                }
                            }
                        }
                        let (v, off) = best.expect("non-empty window");
                        out.push(v);
                        idx.push(off);
                    }
                }
            }
        }
        Ok((Tensor::from_vec(&[n, w.out_h, w.out_w, c], out)?, idx))
    }
}

impl<T: Element> Layer<T> for MaxPool2d<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::MaxPool2d
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let w = self.window(input)?;
        Ok(vec![input[0], w.out_h, w.out_w, input[3]])
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (y, argmax) = self.pool_with_index(x)?;
        self.cache = Some(PoolCache {
            input_dims: x.dims().to_vec(),
            argmax,
        });
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.pool_with_index(x)?.0)
    }

    fn backward(&mut self, d_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| missing_cache(LayerKind::MaxPool2d))?;
        let out_dims = self.output_dims(&cache.input_dims)?;
        check_same_dims(LayerKind::MaxPool2d, d_out, &out_dims)?;
        let mut dx = Tensor::zeros(&cache.input_dims)?;
        let buf = dx.data_mut();
        for (&g, &off) in d_out.data().iter().zip(&cache.argmax) {
            buf[off] = buf[off] + g;
        }
        Ok(dx)
    }
}

/// `(N, H, W, C) -> (N, H*W*C)` in row-major order.
#[derive(Default)]
pub struct Flatten<T: Element> {
    input_dims: Option<Vec<usize>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Element> Flatten<T> {
    pub fn new() -> Self {
        Flatten {
            input_dims: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Element> Layer<T> for Flatten<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Flatten
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 4 {
            return Err(Error::Shape(format!("flatten expects (N,H,W,C), got {input:?}")));
        }
        Ok(vec![input[0], input[1] * input[2] * input[3]])
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input_dims = Some(x.dims().to_vec());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.reshape(&self.output_dims(x.dims())?)
    }

    fn backward(&mut self, d_out: &Tensor<T>) -> Result<Tensor<T>> {
        let dims = self
            .input_dims
            .as_ref()
            .ok_or_else(|| missing_cache(LayerKind::Flatten))?;
        check_same_dims(LayerKind::Flatten, d_out, &self.output_dims(dims)?)?;
        d_out.reshape(dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FillRule;

    #[test]
    fn pooling_chain_of_the_head() {
        let p = MaxPool2d::<f32>::new((2, 2), (2, 2)).unwrap();
        assert_eq!(p.output_dims(&[1, 10, 10, 32]).unwrap(), vec![1, 5, 5, 32]);
        assert_eq!(p.output_dims(&[1, 5, 5, 64]).unwrap(), vec![1, 2, 2, 64]);
        assert!(matches!(p.output_dims(&[1, 1, 1, 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn ties_route_to_first_element() {
        let mut p = MaxPool2d::<f64>::new((2, 2), (2, 2)).unwrap();
        let x = Tensor::<f64>::create(&[1, 4, 4, 1], FillRule::Constant(3.0)).unwrap();
        let y = p.forward(&x, Mode::Training).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
        let g = p
            .backward(&Tensor::create(&[1, 2, 2, 1], FillRule::Constant(1.0)).unwrap())
            .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i % 2 == 0 && j % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(g.get(&[0, i, j, 0]).unwrap(), want);
            }
        }
    }

    #[test]
    fn flatten_matches_head_shape_and_round_trips() {
        let mut f = Flatten::<f64>::new();
        assert_eq!(f.output_dims(&[3, 2, 2, 64]).unwrap(), vec![3, 256]);
        let x = Tensor::<f64>::create(
            &[2, 2, 3, 4],
            FillRule::Uniform {
                lo: 0.0,
                hi: 1.0,
                seed: 4,
            },
        )
        .unwrap();
        let y = f.forward(&x, Mode::Training).unwrap();
        for n in 0..2 {
            for i in 0..2 {
                for j in 0..3 {
                    for c in 0..4 {
                        let col = i * 12 + j * 4 + c;
                        assert_eq!(y.get(&[n, col]).unwrap(), x.get(&[n, i, j, c]).unwrap());
                    }
                }
            }
        }
        assert_eq!(f.backward(&y).unwrap(), x);
    }
}
