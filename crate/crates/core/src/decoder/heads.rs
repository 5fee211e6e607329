use std::io::{Read, Write};

use super::{DecodeError, DecoderConfig};
use crate::mlp::{MlpError, TinyMlp};
use crate::rng::SplitMix64;

/// The six per-anchor prediction heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Offset,
    Opacity,
    Scale,
    Rotation,
    Dc,
    Rest,
}

impl Head {
    pub const ALL: [Head; 6] = [Head::Offset, Head::Opacity, Head::Scale, Head::Rotation, Head::Dc, Head::Rest];

    pub fn output_dim(self, sh_degree: u8) -> usize {
        match self {
            Head::Offset | Head::Scale | Head::Dc => 3,
            Head::Opacity => 1,
            Head::Rotation => 4,
            Head::Rest => 3 * super::sh_rest_count(sh_degree),
        }
    }

    /// Output gain and bias used by [`DecoderHeads::seeded`]. The biases put
    /// an untrained decoder at a usable operating point: nearly opaque,
    /// scale about a third of the default grid's lateral cell width,
    /// identity rotation, colors close to the anchor color.
    fn seed_profile(self) -> (f64, &'static [f64]) {
        match self {
            Head::Offset => (0.01, &[0.0, 0.0, 0.0]),
            Head::Opacity => (0.01, &[3.0]),
            Head::Scale => (0.01, &[-1.6, -1.6, -1.6]),
            Head::Rotation => (0.01, &[1.0, 0.0, 0.0, 0.0]),
            Head::Dc => (0.001, &[0.0, 0.0, 0.0]),
            Head::Rest => (0.001, &[]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderHeads {
    pub offset: TinyMlp,
    pub opacity: TinyMlp,
    pub scale: TinyMlp,
    pub rotation: TinyMlp,
    pub dc: TinyMlp,
    /// Absent when the SH degree is 0.
    pub rest: Option<TinyMlp>,
}

impl DecoderHeads {
    pub fn get(&self, head: Head) -> Option<&TinyMlp> {
        match head {
            Head::Offset => Some(&self.offset),
            Head::Opacity => Some(&self.opacity),
            Head::Scale => Some(&self.scale),
            Head::Rotation => Some(&self.rotation),
            Head::Dc => Some(&self.dc),
            Head::Rest => self.rest.as_ref(),
        }
    }

    /// Hidden layer He-uniform, small output weights plus the head's bias
    /// profile. One hidden layer of `hidden` units.
    pub fn seeded(cfg: &DecoderConfig, anchor_dim: usize, hidden: usize, rng: &mut SplitMix64) -> Self {
        let mut make = |head: Head| -> Option<TinyMlp> {
            let out = head.output_dim(cfg.sh_degree);
            if out == 0 {
                return None;
            }
            let mut mlp = TinyMlp::seeded(&[cfg.head_input_dim(head, anchor_dim), hidden, out], rng);
            let (gain, bias) = head.seed_profile();
            mlp.scale_output_weights(gain);
            if !bias.is_empty() {
                mlp.set_output_bias(bias);
            }
            mlp.quantize_f32();
            Some(mlp)
        };
        Self {
            offset: make(Head::Offset).expect("non-empty head"),
            opacity: make(Head::Opacity).expect("non-empty head"),
            scale: make(Head::Scale).expect("non-empty head"),
            rotation: make(Head::Rotation).expect("non-empty head"),
            dc: make(Head::Dc).expect("non-empty head"),
            rest: make(Head::Rest),
        }
    }

    /// Checks every head's input and output width against the config.
    pub fn check(&self, cfg: &DecoderConfig, anchor_dim: usize) -> Result<(), DecodeError> {
        for head in Head::ALL {
            let out = head.output_dim(cfg.sh_degree);
            match (self.get(head), out) {
                (None, 0) => {}
                (None, _) => return Err(DecodeError::InvalidConfig(format!("missing {head:?} head"))),
                (Some(_), 0) => {
                    return Err(DecodeError::InvalidConfig(format!("{head:?} head present for SH degree 0")))
                }
                (Some(m), _) => {
                    let want = cfg.head_input_dim(head, anchor_dim);
                    if m.input_dim() != want {
                        return Err(MlpError::DimensionMismatch { expected: want, got: m.input_dim() }.into());
                    }
                    if m.output_dim() != out {
                        return Err(MlpError::DimensionMismatch { expected: out, got: m.output_dim() }.into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for head in Head::ALL {
            match self.get(head) {
                Some(m) => {
                    w.write_all(&[1])?;
                    m.write_to(w)?;
                }
                None => w.write_all(&[0])?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, max_params: usize) -> Result<Self, MlpError> {
        let mut heads: Vec<Option<TinyMlp>> = Vec::with_capacity(6);
        for _ in Head::ALL {
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag).map_err(|_| MlpError::Truncated)?;
            heads.push(match flag[0] {
                0 => None,
                1 => Some(TinyMlp::read_from(r, max_params)?),
                f => return Err(MlpError::InvalidLayout(format!("bad head flag {f}"))),
            });
        }
        let mut it = heads.into_iter();
        let mut required = |name: &str| {
            it.next().flatten().ok_or_else(|| MlpError::InvalidLayout(format!("missing {name} head")))
        };
        let offset = required("offset")?;
        let opacity = required("opacity")?;
        let scale = required("scale")?;
        let rotation = required("rotation")?;
        let dc = required("dc")?;
        let rest = it.next().flatten();
        Ok(Self { offset, opacity, scale, rotation, dc, rest })
    }
}
