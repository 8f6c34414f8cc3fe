use tsonet_tensor::{Real, Var};

use crate::nn::{Conv2d, ConvNormAct, Init, Params};

/// Top-down feature pyramid over encoder levels `first..`.
#[derive(Clone, Debug)]
pub struct Fpn {
    pub first: usize,
    pub laterals: Vec<Conv2d>,
    pub smooth: Vec<ConvNormAct>,
}

impl Fpn {
    pub fn new(init: &mut Init, encoder_channels: &[usize], first: usize, channels: usize, max_groups: usize) -> Self {
        let levels = &encoder_channels[first..];
        let laterals = levels
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv2d::new(&mut init.sub(format!("lateral{i}")), c, channels, 1, 1, true))
            .collect();
        let smooth = (0..levels.len())
            .map(|i| ConvNormAct::new(&mut init.sub(format!("smooth{i}")), channels, channels, max_groups))
            .collect();
        Self { first, laterals, smooth }
    }

    /// Returns the decoded pyramid, finest (stream resolution) first.
    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, encoded: &[Var<'g, T>]) -> Vec<Var<'g, T>> {
        let feats = &encoded[self.first..];
        let n = feats.len();
        let mut merged: Vec<Option<Var<'g, T>>> = vec![None; n];
        let mut top = self.laterals[n - 1].forward(p, feats[n - 1]);
        merged[n - 1] = Some(top);
        for i in (0..n - 1).rev() {
            let s = feats[i].shape();
            let up = top.resize_bilinear(s[2], s[3]);
            top = self.laterals[i].forward(p, feats[i]) + up;
            merged[i] = Some(top);
        }
        merged
            .into_iter()
            .zip(&self.smooth)
            .map(|(m, s)| s.forward(p, m.expect("every level merged")))
            .collect()
    }
}
