//! Decoder building blocks.

use candle_core::Tensor;

use super::config::DecoderBlockSpec;
use super::layers::{global_avg_pool, sigmoid, BatchNorm, Conv2d, ConvOptions, ConvTranspose2d, Mode};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// `relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))`-style block with a
/// post-addition ReLU. The shortcut is identity unless the channel count
/// or stride changes, in which case it is a 1×1 projection.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub projection: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::strided(store, name, in_channels, out_channels, 1)
    }

    pub fn strided(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(
            store,
            &format!("{name}.conv1"),
            in_channels,
            out_channels,
            3,
            ConvOptions::same(3, 1).stride(stride).no_bias(),
        )?;
        let bn1 = BatchNorm::new(store, &format!("{name}.bn1"), out_channels)?;
        let conv2 = Conv2d::new(
            store,
            &format!("{name}.conv2"),
            out_channels,
            out_channels,
            3,
            ConvOptions::same(3, 1).no_bias(),
        )?;
        let bn2 = BatchNorm::new(store, &format!("{name}.bn2"), out_channels)?;
        let projection = if in_channels != out_channels || stride != 1 {
            Some(Conv2d::new(
                store,
                &format!("{name}.projection"),
                in_channels,
                out_channels,
                1,
                ConvOptions::default().stride(stride),
            )?)
        } else {
            None
        };
        Ok(Self {
            conv1,
            bn1,
            conv2,
            bn2,
            projection,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, mode)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?, mode)?.relu()?;
        let shortcut = match &self.projection {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        Ok((h + shortcut)?.relu()?)
    }
}

/// Parallel dilated 3×3 convolutions plus an optional image-pooling branch,
/// concatenated and projected back with a 1×1 convolution.
#[derive(Debug, Clone)]
pub struct Aspp {
    pub branches: Vec<Conv2d>,
    pub pooling: Option<Conv2d>,
    pub projection: Conv2d,
}

impl Aspp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rates: &[usize],
        pooling: bool,
    ) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::InvalidConfig("ASPP needs at least one dilation rate".into()));
        }
        let branches = rates
            .iter()
            .map(|&r| {
                Conv2d::new(
                    store,
                    &format!("{name}.rate{r}"),
                    in_channels,
                    out_channels,
                    3,
                    ConvOptions::same(3, r),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let pooling = if pooling {
            Some(Conv2d::new(
                store,
                &format!("{name}.pool"),
                in_channels,
                out_channels,
                1,
                ConvOptions::default(),
            )?)
        } else {
            None
        };
        let n_branches = branches.len() + usize::from(pooling.is_some());
        let projection = Conv2d::new(
            store,
            &format!("{name}.projection"),
            n_branches * out_channels,
            out_channels,
            1,
            ConvOptions::default(),
        )?;
        Ok(Self {
            branches,
            pooling,
            projection,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, h, w) = x.dims4()?;
        let mut outs = self.branches.iter().map(|c| c.forward(x)).collect::<Result<Vec<_>>>()?;
        if let Some(pool) = &self.pooling {
            let pooled = pool.forward(&global_avg_pool(x)?)?;
            let c = pooled.dim(1)?;
            outs.push(pooled.broadcast_as((b, c, h, w))?.contiguous()?);
        }
        let cat = Tensor::cat(&outs, 1)?;
        self.projection.forward(&cat)
    }
}

/// Channel gate `sigmoid(W2 relu(W1 avgpool(x)))` applied multiplicatively.
#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl SqueezeExcite {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::InvalidConfig(format!(
                "SE reduction {reduction} does not divide {channels} channels"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            reduce: Conv2d::new(store, &format!("{name}.reduce"), channels, hidden, 1, ConvOptions::default())?,
            expand: Conv2d::new(store, &format!("{name}.expand"), hidden, channels, 1, ConvOptions::default())?,
        })
    }

    pub fn gate(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.reduce.forward(&global_avg_pool(x)?)?.relu()?;
        sigmoid(&self.expand.forward(&s)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.gate(x)?)?)
    }
}

/// Transposed conv (2×) → skip concat → 2 residual blocks → BN/ReLU →
/// ASPP → BN/ReLU → SE.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub upsample: ConvTranspose2d,
    pub residual: [ResidualBlock; 2],
    pub bn_mid: BatchNorm,
    pub aspp: Aspp,
    pub bn_out: BatchNorm,
    pub se: SqueezeExcite,
    pub skip_channels: usize,
    pub out_channels: usize,
}

impl DecoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        skip_channels: usize,
        spec: &DecoderBlockSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let c = spec.out_channels;
        let upsample = ConvTranspose2d::new(store, &format!("{name}.upsample"), in_channels, c)?;
        let res1 = ResidualBlock::new(store, &format!("{name}.res1"), c + skip_channels, c)?;
        let res2 = ResidualBlock::new(store, &format!("{name}.res2"), c, c)?;
        let bn_mid = BatchNorm::new(store, &format!("{name}.bn_mid"), c)?;
        let aspp = Aspp::new(
            store,
            &format!("{name}.aspp"),
            c,
            c,
            &spec.aspp_dilation_rates,
            spec.aspp_pooling,
        )?;
        let bn_out = BatchNorm::new(store, &format!("{name}.bn_out"), c)?;
        let se = SqueezeExcite::new(store, &format!("{name}.se"), c, spec.se_reduction)?;
        Ok(Self {
            upsample,
            residual: [res1, res2],
            bn_mid,
            aspp,
            bn_out,
            se,
            skip_channels,
            out_channels: c,
        })
    }

    pub fn forward(&self, x: &Tensor, skip: Option<&Tensor>, mode: Mode) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let up = self.upsample.forward(x)?;
        let joined = match skip {
            Some(s) => {
                let (_, sc, sh, sw) = s.dims4()?;
                if (sh, sw) != (2 * h, 2 * w) {
                    return Err(Error::SkipShapeMismatch {
                        skip: (sh, sw),
                        expected: (2 * h, 2 * w),
                    });
                }
                if sc != self.skip_channels {
                    return Err(Error::Shape(format!(
                        "skip has {sc} channels, block expects {}",
                        self.skip_channels
                    )));
                }
                Tensor::cat(&[&up, s], 1)?
            }
            None if self.skip_channels > 0 => {
                return Err(Error::Shape("decoder block expects a skip connection".into()));
            }
            None => up,
        };
        let mut h = joined;
        for r in &self.residual {
            h = r.forward(&h, mode)?;
        }
        let h = self.bn_mid.forward(&h, mode)?.relu()?;
        let h = self.aspp.forward(&h)?;
        let h = self.bn_out.forward(&h, mode)?.relu()?;
        self.se.forward(&h)
    }
}
