use tsonet_tensor::{Real, Var};

use crate::nn::{ConvNormAct, Init, Params};

/// Two conv-norm-GELU stages.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub first: ConvNormAct,
    pub second: ConvNormAct,
}

impl ConvBlock {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, max_groups: usize) -> Self {
        Self {
            first: ConvNormAct::new(&mut init.sub("0"), c_in, c_out, max_groups),
            second: ConvNormAct::new(&mut init.sub("1"), c_out, c_out, max_groups),
        }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        self.second.forward(p, self.first.forward(p, x))
    }
}

/// Five-level U-Net style encoder; every level after the first halves
/// the resolution with 2x2 average pooling.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub levels: Vec<ConvBlock>,
    pub channels: Vec<usize>,
}

impl Encoder {
    pub fn new(init: &mut Init, in_bands: usize, channels: &[usize], max_groups: usize) -> Self {
        let mut c_in = in_bands;
        let levels = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let block = ConvBlock::new(&mut init.sub(i), c_in, c, max_groups);
                c_in = c;
                block
            })
            .collect();
        Self {
            levels,
            channels: channels.to_vec(),
        }
    }

    /// Finest level first.
    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, image: Var<'g, T>) -> Vec<Var<'g, T>> {
        let mut out = Vec::with_capacity(self.levels.len());
        let mut x = image;
        for (i, level) in self.levels.iter().enumerate() {
            if i > 0 {
                x = x.avg_pool2();
            }
            x = level.forward(p, x);
            out.push(x);
        }
        out
    }
}
