use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Element, Tensor};

use super::{check_same_dims, glorot_uniform, missing_cache, Layer, LayerKind, Mode, ParamSlot};

/// Fully connected layer: `y = x W + b` with `W` of shape `(in, out)`.
pub struct Dense<T: Element> {
    inputs: usize,
    outputs: usize,
    params: Vec<ParamSlot<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Element> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, seed: u64) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Config("dense extents must be positive".into()));
        }
        let w = glorot_uniform(&[inputs, outputs], inputs, outputs, seed)?;
        let b = Tensor::zeros(&[outputs])?;
        Ok(Dense {
            inputs,
            outputs,
            params: vec![ParamSlot::learned("kernel", w), ParamSlot::learned("bias", b)],
            input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    fn check(&self, dims: &[usize]) -> Result<()> {
        if dims.len() != 2 || dims[1] != self.inputs {
            return Err(Error::Shape(format!(
                "dense expects (N, {}), got {dims:?}",
                self.inputs
            )));
        }
        Ok(())
    }
}

impl<T: Element> Layer<T> for Dense<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.check(input)?;
        Ok(vec![input[0], self.outputs])
    }

    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x.dims())?;
        let y = x.matmul(&self.params[0].value)?;
        y.add(&self.params[1].value)
    }

    fn backward(&mut self, d_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(|| missing_cache(LayerKind::Dense))?;
        let n = x.dims()[0];
        check_same_dims(LayerKind::Dense, d_out, &[n, self.outputs])?;
        let xt = x.transpose2()?;
        let mut dw = vec![T::zero(); self.inputs * self.outputs];
        matmul_into(xt.data(), d_out.data(), &mut dw, self.inputs, n, self.outputs);
        let db = d_out.reduce(&[0], crate::tensor::Stat::Sum)?;
        let wt = self.params[0].value.transpose2()?;
        let dx = d_out.matmul(&wt)?;
        self.params[0].write_grad(&dw);
        self.params[1].write_grad(db.data());
        Ok(dx)
    }

    fn params(&self) -> &[ParamSlot<T>] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [ParamSlot<T>] {
        &mut self.params
    }
}
