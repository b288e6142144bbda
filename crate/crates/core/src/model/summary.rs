use std::fmt;

use crate::error::Result;
use crate::layers::{LayerKind, ParamCount};
use crate::tensor::Element;

use super::ModelGraph;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub name: String,
    pub type_name: &'static str,
    /// Output dims without the batch axis.
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub connected_to: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub backbone: String,
    pub backbone_output: Vec<usize>,
    pub backbone_params: ParamCount,
    pub rows: Vec<SummaryRow>,
    pub totals: ParamCount,
}

fn type_name(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv2d => "Conv2D",
        LayerKind::BatchNorm => "BatchNormalization",
        LayerKind::Relu | LayerKind::Softmax => "Activation",
        LayerKind::MaxPool2d => "MaxPooling2D",
        LayerKind::Flatten => "Flatten",
        LayerKind::Dense => "Dense",
        LayerKind::Dropout => "Dropout",
    }
}

pub(crate) fn shape_str(dims: &[usize]) -> String {
    let mut s = String::from("(None");
    for d in dims {
        s.push_str(&format!(", {d}"));
    }
    s.push(')');
    s
}

pub(crate) fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl Summary {
    pub fn of<T: Element>(model: &ModelGraph<T>) -> Result<Self> {
        let backbone_name = model.backbone().output_name();
        let mut dims = model.backbone().output_dims(&model.input_dims(1))?;
        let backbone_output = dims[1..].to_vec();
        let mut prev = backbone_name.clone();
        let mut rows = Vec::with_capacity(model.head().len());
        for hl in model.head() {
            dims = hl.layer.output_dims(&dims)?;
            rows.push(SummaryRow {
                name: hl.name.clone(),
                type_name: type_name(hl.layer.kind()),
                output_shape: dims[1..].to_vec(),
                params: hl.layer.param_count().total,
                connected_to: format!("{prev}[0][0]"),
            });
            prev = hl.name.clone();
        }
        Ok(Summary {
            backbone: backbone_name,
            backbone_output,
            backbone_params: model.backbone().param_count(),
            rows,
            totals: model.param_count(),
        })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    format!("{} ({})", r.name, r.type_name),
                    shape_str(&r.output_shape),
                    r.params.to_string(),
                    r.connected_to.clone(),
                ]
            })
            .collect();
        let header = ["Layer (type)", "Output Shape", "Param #", "Connected to"];
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line_len = widths.iter().sum::<usize>() + 3 * 4;
        let line = |f: &mut fmt::Formatter<'_>, cols: [&str; 4]| {
            writeln!(
                f,
                "{:<w0$}   {:<w1$}   {:<w2$}   {}",
                cols[0],
                cols[1],
                cols[2],
                cols[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2]
            )
        };
        writeln!(
            f,
            "Backbone: {} {} ({} params)",
            self.backbone,
            shape_str(&self.backbone_output),
            thousands(self.backbone_params.total)
        )?;
        writeln!(f, "{}", "_".repeat(line_len))?;
        line(f, header)?;
        writeln!(f, "{}", "=".repeat(line_len))?;
        for row in &cells {
            line(f, [&row[0], &row[1], &row[2], &row[3]])?;
        }
        writeln!(f, "{}", "=".repeat(line_len))?;
        writeln!(f, "Total params: {}", thousands(self.totals.total))?;
        writeln!(f, "Trainable params: {}", thousands(self.totals.trainable))?;
        writeln!(f, "Non-trainable params: {}", thousands(self.totals.frozen))
    }
}
