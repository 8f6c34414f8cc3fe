use serde::{Deserialize, Serialize};
use tsonet_tensor::{Real, Var};

use crate::nn::{gcd, Conv2d, Init, Params};

/// How exchanged terms combine with the incoming stream features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsemMode {
    /// `F + exchanged`
    #[default]
    Residual,
    /// `exchanged` alone
    Replace,
}

/// Depth-wise 3x3 followed by a standard 1x1.
#[derive(Clone, Debug)]
pub struct DwPw {
    pub dw: Conv2d,
    pub pw: Conv2d,
}

impl DwPw {
    fn new(init: &mut Init, c: usize, c_out: usize, zero_pw: bool) -> Self {
        let dw = Conv2d::new(&mut init.sub("dw"), c, c, 3, c, true);
        let pw = if zero_pw {
            Conv2d::zeroed(&mut init.sub("pw"), c, c_out, 1, 1)
        } else {
            Conv2d::new(&mut init.sub("pw"), c, c_out, 1, 1, true)
        };
        Self { dw, pw }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        self.pw.forward(p, self.dw.forward(p, x))
    }
}

/// `x + pw_group(gelu(dw3x3(x)))`.
#[derive(Clone, Debug)]
pub struct GroupResidual {
    pub dw: Conv2d,
    pub pw: Conv2d,
}

impl GroupResidual {
    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x + self.pw.forward(p, self.dw.forward(p, x).gelu())
    }
}

/// Bottlenecked residual trunk over the concatenated streams.
#[derive(Clone, Debug)]
pub struct Lrgt {
    pub reduce: Conv2d,
    pub blocks: Vec<GroupResidual>,
    pub restore: Conv2d,
}

impl Lrgt {
    pub fn new(init: &mut Init, c_in: usize, c_out: usize, reduction: usize, blocks: usize, groups: usize) -> Self {
        let mid = c_out / reduction;
        let g_reduce = gcd(groups, gcd(c_in, mid));
        let g_block = gcd(groups, mid);
        let reduce = Conv2d::new(&mut init.sub("reduce"), c_in, mid, 1, g_reduce, true);
        let blocks = (0..blocks)
            .map(|i| {
                let mut b = init.sub(format!("block{i}"));
                GroupResidual {
                    dw: Conv2d::new(&mut b.sub("dw"), mid, mid, 3, mid, true),
                    pw: Conv2d::new(&mut b.sub("pw"), mid, mid, 1, g_block, true),
                }
            })
            .collect();
        let restore = Conv2d::new(&mut init.sub("restore"), mid, c_out, 1, 1, true);
        Self { reduce, blocks, restore }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let mut z = self.reduce.forward(p, x);
        for b in &self.blocks {
            z = b.forward(p, z);
        }
        self.restore.forward(p, z)
    }
}

/// Gated, confidence-masked exchange between the footprint and height
/// streams.
#[derive(Clone, Debug)]
pub struct Csem {
    pub confidence: DwPw,
    pub trunk: Lrgt,
    pub gate: Conv2d,
    pub fp_proj: Conv2d,
    pub h_proj: DwPw,
    pub mode: CsemMode,
}

pub struct CsemOutputs<'g, T: Real> {
    pub fp: Var<'g, T>,
    pub h: Var<'g, T>,
    pub confidence: Var<'g, T>,
    pub gate: Var<'g, T>,
}

impl Csem {
    /// The two output projections start at zero, so a fresh module in
    /// residual mode passes both streams through unchanged.
    pub fn new(init: &mut Init, c: usize, reduction: usize, blocks: usize, groups: usize, mode: CsemMode) -> Self {
        Self {
            confidence: DwPw::new(&mut init.sub("confidence"), c, 1, false),
            trunk: Lrgt::new(&mut init.sub("trunk"), 2 * c, c, reduction, blocks, groups),
            gate: Conv2d::new(&mut init.sub("gate"), c, c, 1, 1, true),
            fp_proj: Conv2d::zeroed(&mut init.sub("fp_proj"), c, c, 1, 1),
            h_proj: DwPw::new(&mut init.sub("h_proj"), c, c, true),
            mode,
        }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, f_fp: Var<'g, T>, f_h: Var<'g, T>) -> CsemOutputs<'g, T> {
        assert_eq!(f_fp.shape(), f_h.shape(), "stream features must share a shape");
        let confidence = self.confidence.forward(p, f_fp).sigmoid();
        let z = self.trunk.forward(p, p.graph().concat(&[f_fp, f_h], 1));
        let gate = self.gate.forward(p, z).sigmoid();
        let ex_fp = self.fp_proj.forward(p, z) * gate;
        let ex_h = self.h_proj.forward(p, z) * gate * confidence;
        let (fp, h) = match self.mode {
            CsemMode::Residual => (f_fp + ex_fp, f_h + ex_h),
            CsemMode::Replace => (ex_fp, ex_h),
        };
        CsemOutputs {
            fp,
            h,
            confidence,
            gate,
        }
    }
}
