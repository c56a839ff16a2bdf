use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::layers::{ConvSpec, FieldLayer};

/// Layer specification of the hierarchical-fusion dilated network.
///
/// The body is a stem (3x3/2 conv + BN + ReLU + 2x2/2 max-pool) followed by
/// four stages of residual blocks. With `dilation` on, stages 3 and 4 run at
/// the same 1/4 resolution as stages 1-2 with dilation 2 and 4. With it off,
/// a max-pool follows stage 2, stages 3-4 run undilated at 1/8 resolution,
/// and the head upsamples by 4 instead of 2.
///
/// With `concat` on, the outputs of all four stages are concatenated before
/// the 1x1 scoring conv; otherwise only stage 4 feeds it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetArch {
    pub num_bins: usize,
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: usize,
    pub dilation: bool,
    pub concat: bool,
}

impl NetArch {
    pub fn new(num_bins: usize) -> Self {
        NetArch {
            num_bins,
            stem_channels: 16,
            stage_channels: [16, 32, 32, 32],
            blocks_per_stage: 2,
            dilation: true,
            concat: true,
        }
    }

    /// One block per stage, 8 channels everywhere; used for gradient checks.
    pub fn reduced(num_bins: usize) -> Self {
        NetArch {
            num_bins,
            stem_channels: 8,
            stage_channels: [8; 4],
            blocks_per_stage: 1,
            dilation: true,
            concat: true,
        }
    }

    pub fn with_dilation(mut self, on: bool) -> Self {
        self.dilation = on;
        self
    }

    pub fn with_concat(mut self, on: bool) -> Self {
        self.concat = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_bins < 2 {
            return Err(Error::invalid(format!(
                "network needs >= 2 bins, got {}",
                self.num_bins
            )));
        }
        if self.stem_channels == 0 || self.stage_channels.contains(&0) || self.blocks_per_stage == 0
        {
            return Err(Error::invalid(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    pub fn stage_dilations(&self) -> [usize; 4] {
        if self.dilation {
            [1, 1, 2, 4]
        } else {
            [1, 1, 1, 1]
        }
    }

    /// Spatial sizes must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        if self.dilation {
            4
        } else {
            8
        }
    }

    pub fn fused_channels(&self) -> usize {
        if self.concat {
            self.stage_channels.iter().sum()
        } else {
            self.stage_channels[3]
        }
    }

    pub fn stem_spec(&self) -> ConvSpec {
        ConvSpec {
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            pad: 1,
            dilation: 1,
            in_channels: 3,
            out_channels: self.stem_channels,
        }
    }

    pub fn fuse_spec(&self) -> ConvSpec {
        ConvSpec::same(1, 1, self.fused_channels(), self.num_bins)
    }

    /// Transposed-conv head: x2 upsampling (or x4 without dilation).
    pub fn head_spec(&self) -> ConvSpec {
        let (kernel, stride, pad) = if self.dilation { (4, 2, 1) } else { (8, 4, 2) };
        ConvSpec {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
            dilation: 1,
            in_channels: self.num_bins,
            out_channels: self.num_bins,
        }
    }

    /// Forward layer sequence along the deepest path, from the image to the
    /// 1x1 scoring conv, for receptive-field analysis.
    pub fn field_layers(&self) -> Vec<FieldLayer> {
        let mut layers = vec![FieldLayer::new(3, 2, 1), FieldLayer::new(2, 2, 1)];
        for (stage, &d) in self.stage_dilations().iter().enumerate() {
            if stage == 2 && !self.dilation {
                layers.push(FieldLayer::new(2, 2, 1));
            }
            for _ in 0..self.blocks_per_stage {
                layers.push(FieldLayer::new(3, 1, d));
                layers.push(FieldLayer::new(3, 1, d));
            }
        }
        layers.push(FieldLayer::new(1, 1, 1));
        layers
    }

    /// `key=value` lines, parsed back by [`NetArch::from_descriptor`].
    pub fn descriptor(&self) -> String {
        let mut s = String::new();
        let c = self.stage_channels;
        let _ = writeln!(s, "num_bins={}", self.num_bins);
        let _ = writeln!(s, "stem_channels={}", self.stem_channels);
        let _ = writeln!(s, "stage_channels={},{},{},{}", c[0], c[1], c[2], c[3]);
        let _ = writeln!(s, "blocks_per_stage={}", self.blocks_per_stage);
        let _ = writeln!(s, "dilation={}", self.dilation);
        let _ = writeln!(s, "concat={}", self.concat);
        s
    }

    pub fn from_descriptor(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let get = |k: &str| {
            lookup(k).ok_or_else(|| Error::invalid(format!("architecture descriptor lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            let v = get(k)?;
            v.parse()
                .map_err(|_| Error::invalid(format!("architecture `{k}`: bad integer `{v}`")))
        };
        let flag = |k: &str| -> Result<bool> {
            let v = get(k)?;
            v.parse()
                .map_err(|_| Error::invalid(format!("architecture `{k}`: bad flag `{v}`")))
        };
        let chans = get("stage_channels")?;
        let parsed: Vec<usize> = chans
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::invalid(format!("bad stage_channels `{chans}`")))?;
        let stage_channels: [usize; 4] = parsed
            .try_into()
            .map_err(|_| Error::invalid(format!("stage_channels needs 4 entries: `{chans}`")))?;
        let arch = NetArch {
            num_bins: num("num_bins")?,
            stem_channels: num("stem_channels")?,
            stage_channels,
            blocks_per_stage: num("blocks_per_stage")?,
            dilation: flag("dilation")?,
            concat: flag("concat")?,
        };
        arch.validate()?;
        Ok(arch)
    }
}
