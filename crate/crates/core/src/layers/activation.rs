use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::{check_same_dims, missing_cache, Layer, LayerKind, Mode};

/// `max(0, x)`; the subgradient at 0 is taken as 0.
#[derive(Default)]
pub struct Relu<T: Element> {
    input: Option<Tensor<T>>,
}

impl<T: Element> Relu<T> {
    pub fn new() -> Self {
        Relu { input: None }
    }
}

impl<T: Element> Layer<T> for Relu<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Relu
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    fn backward(&mut self, d_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache(LayerKind::Relu))?;
        check_same_dims(LayerKind::Relu, d_out, x.dims())?;
        let data = x
            .data()
            .iter()
            .zip(d_out.data())
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect();
        Tensor::from_vec(x.dims(), data)
    }
}

/// Row-wise softmax over `(N, K)` logits with max subtraction.
#[derive(Default)]
pub struct Softmax<T: Element> {
    output: Option<Tensor<T>>,
}

impl<T: Element> Softmax<T> {
    pub fn new() -> Self {
        Softmax { output: None }
    }
}

pub fn softmax_rows<T: Element>(z: &Tensor<T>) -> Result<Tensor<T>> {
    if z.rank() != 2 {
        return Err(Error::Shape(format!("softmax expects (N, K), got {:?}", z.dims())));
    }
    let k = z.dims()[1];
    let mut out = Vec::with_capacity(z.len());
    for row in z.data().chunks_exact(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total = total + e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|v| *v = *v / total);
    }
    Tensor::from_vec(z.dims(), out)
}

impl<T: Element> Layer<T> for Softmax<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Softmax
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 2 {
            return Err(Error::Shape(format!("softmax expects (N, K), got {input:?}")));
        }
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = softmax_rows(x)?;
        self.output = Some(y.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        softmax_rows(x)
    }

    fn backward(&mut self, d_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.as_ref().ok_or_else(|| missing_cache(LayerKind::Softmax))?;
        check_same_dims(LayerKind::Softmax, d_out, y.dims())?;
        let k = y.dims()[1];
        let mut dx = Vec::with_capacity(y.len());
        for (yr, gr) in y.data().chunks_exact(k).zip(d_out.data().chunks_exact(k)) {
            let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &g)| a + p * g);
            dx.extend(yr.iter().zip(gr).map(|(&p, &g)| p * (g - dot)));
        }
        Tensor::from_vec(y.dims(), dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_formula() {
        let mut r = Relu::<f64>::new();
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(r.forward(&x, Mode::Training).unwrap().data(), &[0.0, 0.0, 2.0]);
        let g = r
            .backward(&Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_symmetric_and_shift_invariant() {
        let z = Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap();
        assert_eq!(softmax_rows(&z).unwrap().data(), &[0.5, 0.5]);
        let a = Tensor::<f64>::from_vec(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let b = a.map(|v| v + 1000.0);
        let (sa, sb) = (softmax_rows(&a).unwrap(), softmax_rows(&b).unwrap());
        for (x, y) in sa.data().iter().zip(sb.data()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let z = Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = softmax_rows(&z).unwrap();
        let denom: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (j, &v) in s.data().iter().enumerate() {
            assert!((v - ((j + 1) as f64).exp() / denom).abs() <= 1e-10);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let z = Tensor::<f32>::from_vec(&[1, 2], vec![1e30, -1e30]).unwrap();
        let s = softmax_rows(&z).unwrap();
        assert!(s.all_finite());
        assert_eq!(s.data(), &[1.0, 0.0]);
    }
}
