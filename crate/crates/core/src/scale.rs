//! Separator choice shared by pairs, training and sampling.

use std::fmt;
use std::str::FromStr;

use crate::blur::{self, BlurSpec};
use crate::error::{Error, Result};
use crate::fields::FieldStack;
use crate::spectral::{self, SpectralCutoff};

/// How a field is split into shared large scales and a residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Separator {
    Fourier(SpectralCutoff),
    Blur(BlurSpec),
}

/// Additive split `input = low + high`, tagged with its separator.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub low: FieldStack,
    pub high: FieldStack,
    pub separator: Separator,
}

impl Separator {
    pub fn split(&self, stack: &FieldStack) -> Result<Decomposition> {
        match self {
            Separator::Fourier(cut) => spectral::lowpass(stack, cut),
            Separator::Blur(spec) => blur::blur_split(stack, spec),
        }
    }

    /// Shared (large-scale) component only.
    pub fn shared(&self, stack: &FieldStack) -> Result<FieldStack> {
        match self {
            Separator::Fourier(cut) => spectral::lowpass_component(stack, cut),
            Separator::Blur(spec) => blur::gaussian_blur_masked(stack, spec),
        }
    }

    /// Standard normal noise with its shared component removed.
    pub fn highpass_noise(&self, template: &FieldStack, seed: u64) -> Result<FieldStack> {
        let eps = blur::white_noise_like(template, seed)?;
        Ok(self.split(&eps)?.high)
    }

    /// Fails early when the separator cannot run on this stack.
    pub fn check(&self, stack: &FieldStack) -> Result<()> {
        match self {
            Separator::Fourier(cut) => {
                if !stack.is_fully_valid() {
                    return Err(Error::MaskUnsupported("the Fourier separator"));
                }
                cut.check_resolvable(stack.grid())
            }
            Separator::Blur(spec) => spec.sigma_cells(stack.grid()).map(|_| ()),
        }
    }

    pub fn is_fourier(&self) -> bool {
        matches!(self, Separator::Fourier(_))
    }
}

impl fmt::Display for Separator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Separator::Fourier(cut) => write!(f, "fourier:{}", cut.wavelength_km()),
            Separator::Blur(spec) => write!(f, "blur:{}", spec.sigma_km()),
        }
    }
}

/// Parses `fourier:<wavelength_km>` or `blur:<sigma_km>`.
impl FromStr for Separator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Spec(format!("separator `{s}` is not of the form kind:km")))?;
        let km: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Spec(format!("separator `{s}`: `{value}` is not a number")))?;
        match kind.trim() {
            "fourier" => Ok(Separator::Fourier(SpectralCutoff::new(km)?)),
            "blur" => Ok(Separator::Blur(BlurSpec::new(km)?)),
            other => Err(Error::Spec(format!("unknown separator kind `{other}`"))),
        }
    }
}
