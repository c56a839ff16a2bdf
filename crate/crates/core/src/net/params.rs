//! Named parameter registry for the network.
//!
//! Every tensor (weights, biases, BN scale/shift and BN running statistics)
//! lives in one flat list addressed by index. A [`Plan`] built from the
//! architecture maps each layer to its indices, so the optimizer and the
//! checkpoint code can walk parameters uniformly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::NetArch;
use crate::error::{Error, Result};
use crate::layers::ConvSpec;
use crate::tensor::{Real, Shape4, Tensor4};

const HEAD_WEIGHT: &str = "head.deconv.weight";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    BnRunningMean,
    BnRunningVar,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        !matches!(self, ParamKind::BnRunningMean | ParamKind::BnRunningVar)
    }

    /// BN scale/shift are exempt from weight decay.
    pub fn decayed(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor4<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvRef {
    pub spec: ConvSpec,
    pub weight: usize,
    pub bias: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnRef {
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRef {
    pub conv1: ConvRef,
    pub bn1: BnRef,
    pub conv2: ConvRef,
    pub bn2: BnRef,
    pub proj: Option<(ConvRef, BnRef)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub stem: ConvRef,
    pub stem_bn: BnRef,
    pub stages: Vec<Vec<BlockRef>>,
    pub fuse: ConvRef,
    pub head: ConvRef,
}

struct Builder<T> {
    tensors: Vec<ParamTensor<T>>,
}

impl<T: Real> Builder<T> {
    fn push(&mut self, name: String, kind: ParamKind, value: Tensor4<T>) -> usize {
        self.tensors.push(ParamTensor { name, kind, value });
        self.tensors.len() - 1
    }

    fn vector(c: usize, v: T) -> Tensor4<T> {
        Tensor4::full(Shape4::new(1, c, 1, 1), v)
    }

    fn conv(&mut self, name: &str, spec: ConvSpec, bias: bool, transposed: bool) -> ConvRef {
        let shape = if transposed {
            spec.deconv_weight_shape()
        } else {
            spec.weight_shape()
        };
        let out = spec.out_channels;
        let weight = self.push(format!("{name}.weight"), ParamKind::Weight, Tensor4::zeros(shape));
        let bias = bias.then(|| {
            self.push(
                format!("{name}.bias"),
                ParamKind::Bias,
                Self::vector(out, T::zero()),
            )
        });
        ConvRef { spec, weight, bias }
    }

    fn bn(&mut self, name: &str, c: usize) -> BnRef {
        BnRef {
            gamma: self.push(format!("{name}.gamma"), ParamKind::BnScale, Self::vector(c, T::one())),
            beta: self.push(format!("{name}.beta"), ParamKind::BnShift, Self::vector(c, T::zero())),
            mean: self.push(
                format!("{name}.running_mean"),
                ParamKind::BnRunningMean,
                Self::vector(c, T::zero()),
            ),
            var: self.push(
                format!("{name}.running_var"),
                ParamKind::BnRunningVar,
                Self::vector(c, T::one()),
            ),
        }
    }
}

fn build<T: Real>(arch: &NetArch) -> (Plan, Vec<ParamTensor<T>>) {
    let mut b = Builder { tensors: Vec::new() };
    let stem = b.conv("stem.conv", arch.stem_spec(), false, false);
    let stem_bn = b.bn("stem.bn", arch.stem_channels);
    let mut width = arch.stem_channels;
    let mut stages = Vec::with_capacity(4);
    for (s, (&out, &d)) in arch
        .stage_channels
        .iter()
        .zip(&arch.stage_dilations())
        .enumerate()
    {
        let mut blocks = Vec::with_capacity(arch.blocks_per_stage);
        for k in 0..arch.blocks_per_stage {
            let p = format!("stage{}.block{}", s + 1, k + 1);
            let conv1 = b.conv(&format!("{p}.conv1"), ConvSpec::same(3, d, width, out), false, false);
            let bn1 = b.bn(&format!("{p}.bn1"), out);
            let conv2 = b.conv(&format!("{p}.conv2"), ConvSpec::same(3, d, out, out), false, false);
            let bn2 = b.bn(&format!("{p}.bn2"), out);
            let proj = (width != out).then(|| {
                (
                    b.conv(&format!("{p}.proj"), ConvSpec::same(1, 1, width, out), false, false),
                    b.bn(&format!("{p}.proj_bn"), out),
                )
            });
            blocks.push(BlockRef {
                conv1,
                bn1,
                conv2,
                bn2,
                proj,
            });
            width = out;
        }
        stages.push(blocks);
    }
    let fuse = b.conv("fuse.conv", arch.fuse_spec(), true, false);
    let head = b.conv("head.deconv", arch.head_spec(), true, true);
    (
        Plan {
            stem,
            stem_bn,
            stages,
            fuse,
            head,
        },
        b.tensors,
    )
}

/// All parameters of one network instance plus its layer plan.
#[derive(Debug, Clone)]
pub struct NetParams<T> {
    arch: NetArch,
    plan: Plan,
    tensors: Vec<ParamTensor<T>>,
    version: u64,
}

impl<T: PartialEq> PartialEq for NetParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.plan == other.plan && self.tensors == other.tensors
    }
}

impl<T: Real> NetParams<T> {
    /// Zero weights, unit BN scale; see [`init_params`] for random init.
    pub fn zeroed(arch: NetArch) -> Result<Self> {
        arch.validate()?;
        let (plan, tensors) = build(&arch);
        Ok(NetParams {
            arch,
            plan,
            tensors,
            version: 0,
        })
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn get(&self, idx: usize) -> &Tensor4<T> {
        &self.tensors[idx].value
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor4<T> {
        self.version += 1;
        &mut self.tensors[idx].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    /// Incremented on every mutable access; forward caches record it so a
    /// backward pass against modified parameters is rejected.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [ParamTensor<T>] {
        self.version += 1;
        &mut self.tensors
    }

    /// Running BN statistics do not enter the backward pass, so updating
    /// them leaves the version unchanged.
    pub(crate) fn running_pair_mut(&mut self, mean: usize, var: usize) -> (&mut [T], &mut [T]) {
        assert!(mean < var, "running mean is registered before running var");
        let (lo, hi) = self.tensors.split_at_mut(var);
        (lo[mean].value.data_mut(), hi[0].value.data_mut())
    }

    pub fn learnable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.kind.learnable())
            .map(|t| t.value.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        NetParams {
            arch: self.arch,
            plan: self.plan.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    kind: t.kind,
                    value: t.value.cast(),
                })
                .collect(),
            version: 0,
        }
    }

    /// Replaces every tensor's data from `(name, shape, values)` records.
    /// Names and shapes must match this architecture exactly.
    pub fn load_values<'a>(
        &mut self,
        mut lookup: impl FnMut(&str) -> Option<(Shape4, &'a [f32])>,
    ) -> Result<()> {
        self.version += 1;
        for t in &mut self.tensors {
            let (shape, data) = lookup(&t.name)
                .ok_or_else(|| Error::invalid(format!("missing parameter `{}`", t.name)))?;
            if shape != t.value.shape() {
                return Err(Error::shape(
                    "load_values",
                    format!("`{}` is {shape}, expected {}", t.name, t.value.shape()),
                ));
            }
            for (d, &v) in t.value.data_mut().iter_mut().zip(data) {
                *d = T::of(v as f64);
            }
        }
        Ok(())
    }
}

/// Deterministic He initialization: conv and deconv weights ~ N(0, 2/fan_in)
/// with `fan_in = in_channels * kh * kw`, biases zero, BN scale one.
pub fn init_params<T: Real>(seed: u64, arch: NetArch) -> Result<NetParams<T>> {
    let mut params = NetParams::zeroed(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        if t.kind != ParamKind::Weight {
            continue;
        }
        let s = t.value.shape();
        // conv weights are (out, in, kh, kw); the deconv head is (in, out, kh, kw)
        let fan_in = if t.name == HEAD_WEIGHT {
            s.n * s.h * s.w
        } else {
            s.c * s.h * s.w
        };
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
            .map_err(|e| Error::invalid(format!("init distribution: {e}")))?;
        for v in t.value.data_mut() {
            *v = T::of(normal.sample(&mut rng));
        }
    }
    params.version = 0;
    Ok(params)
}
