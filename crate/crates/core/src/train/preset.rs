use crate::model::ModelSpec;
use crate::optim::OptimizerConfig;

use super::{InitFrom, TrainConfig};

/// A named experiment setting from the results grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub conv_blocks: usize,
    pub stage1_epochs: usize,
    /// `(epochs, init_from)`; `None` skips fine-tuning.
    pub stage2: Option<(usize, InitFrom)>,
    pub stage2_lr: Option<f64>,
}

pub const PRESETS: [Preset; 5] = [
    Preset {
        name: "one-block",
        description: "one conv/batchnorm/relu/pool set, no fine-tuning, 50 epochs",
        conv_blocks: 1,
        stage1_epochs: 50,
        stage2: None,
        stage2_lr: None,
    },
    Preset {
        name: "two-block",
        description: "two conv/batchnorm/relu/pool sets, no fine-tuning, 100 epochs",
        conv_blocks: 2,
        stage1_epochs: 100,
        stage2: None,
        stage2_lr: None,
    },
    Preset {
        name: "two-block-finetune",
        description: "two sets, 100 epochs, then 50 fine-tuning epochs from the last stage-1 model",
        conv_blocks: 2,
        stage1_epochs: 100,
        stage2: Some((50, InitFrom::Last)),
        stage2_lr: None,
    },
    Preset {
        name: "two-block-finetune-best",
        description: "two sets, 100 epochs, then 31 fine-tuning epochs from the best stage-1 model",
        conv_blocks: 2,
        stage1_epochs: 100,
        stage2: Some((31, InitFrom::Best)),
        stage2_lr: None,
    },
    Preset {
        name: "finetune-fast-sgd",
        description: "as two-block-finetune-best but with SGD learning rate 0.001",
        conv_blocks: 2,
        stage1_epochs: 100,
        stage2: Some((31, InitFrom::Best)),
        stage2_lr: Some(0.001),
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    pub fn apply(&self, model: &mut ModelSpec, train: &mut TrainConfig) {
        model.conv_blocks = self.conv_blocks;
        train.stage1.epochs = self.stage1_epochs;
        match self.stage2 {
            Some((epochs, init_from)) => {
                train.stage2.enabled = true;
                train.stage2.epochs = epochs;
                train.stage2.init_from = init_from;
            }
            None => train.stage2.enabled = false,
        }
        if let (Some(new_lr), OptimizerConfig::Sgd { lr, .. }) = (self.stage2_lr, &mut train.stage2.optimizer) {
            *lr = new_lr;
        }
    }

    /// Total epochs across both stages.
    pub fn total_epochs(&self) -> usize {
        self.stage1_epochs + self.stage2.map_or(0, |s| s.0)
    }
}
