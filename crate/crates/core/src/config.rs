//! Architecture description covering every ablation axis: pyramid depth,
//! channel widths, block depth, fusion pattern and supervision scales.
//!
//! Configs are stored as TOML:
//!
//! ```toml
//! variant = "rt-monodepth"
//! levels = 4
//! channels = [32, 64, 128, 256]
//! convs_per_block = 3
//! fusion = "++c"
//! supervision_scales = 4
//! width = 640
//! height = 192
//! ```
//!
//! `fusion` lists one symbol per fusion point, deepest first. `+` adds the
//! skip feature, `c` concatenates it, `·` (or `.`) skips fusion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ConfigError;

pub const MIN_LEVELS: usize = 2;
pub const MAX_LEVELS: usize = 5;
pub const MAX_SUPERVISION_SCALES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    Add,
    Concat,
    None,
}

impl Fusion {
    pub fn symbol(self) -> char {
        match self {
            Fusion::Add => '+',
            Fusion::Concat => 'c',
            Fusion::None => '·',
        }
    }

    fn from_symbol(c: char) -> Result<Self, ConfigError> {
        match c {
            '+' => Ok(Fusion::Add),
            'c' | 'C' => Ok(Fusion::Concat),
            '·' | '.' | '-' => Ok(Fusion::None),
            other => Err(ConfigError::FusionSymbol(other)),
        }
    }
}

/// Fusion symbols ordered from the deepest fusion point to the shallowest.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct FusionPattern(Vec<Fusion>);

impl FusionPattern {
    pub fn new(symbols: Vec<Fusion>) -> Self {
        FusionPattern(symbols)
    }

    pub fn uniform(fusion: Fusion, len: usize) -> Self {
        FusionPattern(vec![fusion; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> &[Fusion] {
        &self.0
    }

    /// Every pattern of the given length over the three symbols.
    pub fn enumerate(len: usize) -> Vec<FusionPattern> {
        const ALL: [Fusion; 3] = [Fusion::Add, Fusion::Concat, Fusion::None];
        let mut out = vec![FusionPattern::default()];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|p| {
                    ALL.iter().map(move |&f| {
                        let mut next = p.0.clone();
                        next.push(f);
                        FusionPattern(next)
                    })
                })
                .collect();
        }
        out
    }
}

impl FromStr for FusionPattern {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(Fusion::from_symbol)
            .collect::<Result<Vec<_>, _>>()
            .map(FusionPattern)
    }
}

impl fmt::Display for FusionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|s| write!(f, "{}", s.symbol()))
    }
}

impl Serialize for FusionPattern {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FusionPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    RtMonoDepth,
    RtMonoDepthS,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::RtMonoDepth => "rt-monodepth",
            Variant::RtMonoDepthS => "rt-monodepth-s",
        }
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rt-monodepth" | "rtmonodepth" | "full" => Ok(Variant::RtMonoDepth),
            "rt-monodepth-s" | "rtmonodepth-s" | "small" | "s" => Ok(Variant::RtMonoDepthS),
            _ => Err(ConfigError::UnknownVariant(s.to_string())),
        }
    }
}

/// Input resolution, parsed from and printed as `WxH`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const KITTI: Resolution = Resolution {
        height: 192,
        width: 640,
    };

    pub fn new(height: usize, width: usize) -> Self {
        Resolution { height, width }
    }
}

impl FromStr for Resolution {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::ResolutionSyntax(s.to_string());
        let (w, h) = s.split_once(['x', 'X', '×']).ok_or_else(bad)?;
        let width: usize = w.trim().parse().map_err(|_| bad())?;
        let height: usize = h.trim().parse().map_err(|_| bad())?;
        if width == 0 || height == 0 {
            return Err(bad());
        }
        Ok(Resolution { height, width })
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchConfig {
    #[serde(default = "custom_variant")]
    pub variant: String,
    pub levels: usize,
    pub channels: Vec<usize>,
    pub convs_per_block: usize,
    pub fusion: FusionPattern,
    pub supervision_scales: usize,
    pub width: usize,
    pub height: usize,
}

fn custom_variant() -> String {
    "custom".to_string()
}

/// Channel bookkeeping for one decoder stage, deepest stage first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderStage {
    /// Pyramid level whose resolution the stage's upconv reads (1/2^level).
    pub level: usize,
    pub upconv_in: usize,
    pub upconv_out: usize,
    /// Fusion applied after upsampling, `None` for the last stage.
    pub fusion: Option<Fusion>,
    /// Width after fusion; this feeds the next stage and the head at `level - 1`.
    pub fused: usize,
}

impl ArchConfig {
    pub fn preset(variant: Variant) -> Self {
        match variant {
            Variant::RtMonoDepth => ArchConfig {
                variant: variant.name().to_string(),
                levels: 4,
                channels: vec![32, 64, 128, 256],
                convs_per_block: 3,
                fusion: "++c".parse().expect("static pattern"),
                supervision_scales: 4,
                width: Resolution::KITTI.width,
                height: Resolution::KITTI.height,
            },
            // No fusion, two convs per block, deepest level narrowed to 192.
            Variant::RtMonoDepthS => ArchConfig {
                variant: variant.name().to_string(),
                levels: 4,
                channels: vec![32, 64, 128, 192],
                convs_per_block: 2,
                fusion: FusionPattern::uniform(Fusion::None, 3),
                supervision_scales: 4,
                width: Resolution::KITTI.width,
                height: Resolution::KITTI.height,
            },
        }
    }

    pub fn rt_monodepth() -> Self {
        Self::preset(Variant::RtMonoDepth)
    }

    pub fn rt_monodepth_s() -> Self {
        Self::preset(Variant::RtMonoDepthS)
    }

    /// Channel widths `32 * 2^(n-1)` for levels `1..=levels`.
    pub fn default_channels(levels: usize) -> Vec<usize> {
        (0..levels).map(|i| 32usize << i).collect()
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    pub fn with_resolution(mut self, res: Resolution) -> Self {
        self.height = res.height;
        self.width = res.width;
        self
    }

    pub fn with_supervision_scales(mut self, scales: usize) -> Self {
        self.supervision_scales = scales;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.decoder_stages().map(|_| ())
    }

    /// Walks the decoder from the deepest level up, checking every width rule.
    pub fn decoder_stages(&self) -> Result<Vec<DecoderStage>, ConfigError> {
        let levels = self.levels;
        if !(MIN_LEVELS..=MAX_LEVELS).contains(&levels) {
            return Err(ConfigError::Levels(levels));
        }
        if self.channels.len() != levels {
            return Err(ConfigError::ChannelCount {
                expected: levels,
                actual: self.channels.len(),
            });
        }
        if let Some(i) = self.channels.iter().position(|&c| c == 0) {
            return Err(ConfigError::ZeroChannels { level: i + 1 });
        }
        if self.convs_per_block == 0 {
            return Err(ConfigError::ConvsPerBlock);
        }
        if self.fusion.len() != levels - 1 {
            return Err(ConfigError::FusionLength {
                pattern: self.fusion.to_string(),
                expected: levels - 1,
                actual: self.fusion.len(),
            });
        }
        let max_scales = levels.min(MAX_SUPERVISION_SCALES);
        if !(1..=max_scales).contains(&self.supervision_scales) {
            return Err(ConfigError::SupervisionScales {
                max: max_scales,
                actual: self.supervision_scales,
            });
        }
        let divisor = 1usize << levels;
        if self.width == 0
            || self.height == 0
            || !self.width.is_multiple_of(divisor)
            || !self.height.is_multiple_of(divisor)
        {
            return Err(ConfigError::Resolution {
                width: self.width,
                height: self.height,
                levels,
                divisor,
            });
        }

        let mut stages = Vec::with_capacity(levels);
        let mut width = self.channels[levels - 1];
        for level in (1..=levels).rev() {
            let upconv_out = width / 2;
            if upconv_out == 0 {
                return Err(ConfigError::UpconvWidth {
                    level,
                    channels: width,
                });
            }
            let skip_level = level - 1;
            let (fusion, fused) = if skip_level >= 1 {
                let f = self.fusion.symbols()[levels - level];
                let skip = self.channels[skip_level - 1];
                let fused = match f {
                    Fusion::Add if upconv_out != skip => {
                        return Err(ConfigError::AddWidth {
                            scale: 1 << skip_level,
                            level: skip_level,
                            decoder: upconv_out,
                            skip,
                        })
                    }
                    Fusion::Add | Fusion::None => upconv_out,
                    Fusion::Concat => upconv_out + skip,
                };
                (Some(f), fused)
            } else {
                (None, upconv_out)
            };
            stages.push(DecoderStage {
                level,
                upconv_in: width,
                upconv_out,
                fusion,
                fused,
            });
            width = fused;
        }
        Ok(stages)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("ArchConfig always serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ArchConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short hex digest of the canonical TOML form.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
