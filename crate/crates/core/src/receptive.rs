//! Receptive field of a stack of (possibly dilated, strided) convolutions.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub fn new(kernel: usize, dilation: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "kernel size must be odd and positive, got {kernel}"
            )));
        }
        if dilation == 0 || stride == 0 {
            return Err(Error::InvalidParameter(format!(
                "dilation and stride must be >= 1, got {dilation} and {stride}"
            )));
        }
        Ok(Self {
            kernel,
            dilation,
            stride,
        })
    }
}

impl fmt::Display for ConvLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kernel, self.dilation, self.stride)
    }
}

/// Parses `k`, `k:d` or `k:d:s`; missing fields default to 1.
impl FromStr for ConvLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.trim().split(':').collect();
        if fields.len() > 3 {
            return Err(Error::InvalidParameter(format!("bad layer {s:?}, expected k[:d[:s]]")));
        }
        let mut nums = [1usize; 3];
        for (slot, field) in nums.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad layer {s:?}, expected k[:d[:s]]")))?;
        }
        ConvLayer::new(nums[0], nums[1], nums[2])
    }
}

/// Side length, in input pixels, seen by one output unit of the stack.
pub fn receptive_field(layers: &[ConvLayer]) -> Result<usize> {
    let mut r = 1usize;
    let mut jump = 1usize;
    for layer in layers {
        let layer = ConvLayer::new(layer.kernel, layer.dilation, layer.stride)?;
        r = (layer.kernel - 1)
            .checked_mul(layer.dilation)
            .and_then(|g| g.checked_mul(jump))
            .and_then(|g| g.checked_add(r))
            .ok_or_else(|| Error::InvalidParameter("receptive field overflows".into()))?;
        jump = jump
            .checked_mul(layer.stride)
            .ok_or_else(|| Error::InvalidParameter("receptive field overflows".into()))?;
    }
    Ok(r)
}
