//! Declarative description of the architecture shape.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::ModelError;
use crate::kv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    MlpAdd,
    CrossAttention,
}

impl FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mlp_add" => Ok(FusionMode::MlpAdd),
            "cross_attention" => Ok(FusionMode::CrossAttention),
            other => Err(format!("unknown fusion mode {other:?}")),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::MlpAdd => "mlp_add",
            FusionMode::CrossAttention => "cross_attention",
        })
    }
}

/// Component switches mirroring the ablation grid: focal-part separation,
/// the context-impression branch, the conditional sine field (off swaps in a
/// plain spatial-attention head), and the band-pass filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationToggles {
    pub focal: bool,
    pub context_impression: bool,
    pub cond_sine: bool,
    pub band_pass: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        AblationToggles { focal: true, context_impression: true, cond_sine: true, band_pass: true }
    }
}

impl AblationToggles {
    /// Parses the compact grid syntax, e.g. `focal=off,ci=on,sine=on,band=off`.
    pub fn parse_compact(spec: &str) -> Result<Self, ModelError> {
        let mut t = AblationToggles::default();
        for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("toggle {part:?} is not key=state")))?;
            let state = match value.trim() {
                "on" => true,
                "off" => false,
                other => {
                    return Err(ModelError::Config(format!("toggle state {other:?}")));
                }
            };
            match key.trim() {
                "focal" => t.focal = state,
                "ci" => t.context_impression = state,
                "sine" => t.cond_sine = state,
                "band" => t.band_pass = state,
                other => return Err(ModelError::Config(format!("unknown toggle {other:?}"))),
            }
        }
        Ok(t)
    }

    pub fn compact(&self) -> String {
        let s = |b: bool| if b { "on" } else { "off" };
        format!(
            "focal={},ci={},sine={},band={}",
            s(self.focal),
            s(self.context_impression),
            s(self.cond_sine),
            s(self.band_pass)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Backbone stage count; gaze shifts sit between consecutive stages.
    pub stages: usize,
    /// Channel width per stage; each gaze shift doubles the width.
    pub widths: Vec<usize>,
    /// Residual block count per stage.
    pub blocks: Vec<usize>,
    /// Saliency patch grid extent p (constant across stages).
    pub patch_grid: usize,
    pub fusion: FusionMode,
    pub classes: usize,
    pub image_size: usize,
    /// Cross-attention head count and hidden width.
    pub heads: usize,
    pub hidden: usize,
    pub fusion_width: usize,
    pub toggles: AblationToggles,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: 4,
            widths: vec![16, 32, 64, 128],
            blocks: vec![2, 2, 2, 2],
            patch_grid: 4,
            fusion: FusionMode::MlpAdd,
            classes: 4,
            image_size: 64,
            heads: 4,
            hidden: 128,
            fusion_width: 128,
            toggles: AblationToggles::default(),
        }
    }
}

impl ModelConfig {
    /// Spatial extent of the feature map entering stage `s` (0-based). The
    /// stem preserves resolution; every gaze shift halves it.
    pub fn stage_extent(&self, s: usize) -> usize {
        self.image_size >> s
    }

    /// Patch size used by the gaze shift after stage `s`, chosen so the patch
    /// grid stays `p x p` at every stage.
    pub fn patch_k(&self, s: usize) -> usize {
        self.stage_extent(s) / self.patch_grid
    }

    pub fn gaze_count(&self) -> usize {
        self.stages - 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.stages < 2 {
            return fail(format!("stages must be >= 2, got {}", self.stages));
        }
        if self.widths.len() != self.stages || self.blocks.len() != self.stages {
            return fail(format!(
                "widths ({}) and blocks ({}) must list one entry per stage ({})",
                self.widths.len(),
                self.blocks.len(),
                self.stages
            ));
        }
        for (s, pair) in self.widths.windows(2).enumerate() {
            if pair[1] != 2 * pair[0] {
                return fail(format!(
                    "stage {} width {} must double to {} at stage {}, got {}",
                    s,
                    pair[0],
                    2 * pair[0],
                    s + 1,
                    pair[1]
                ));
            }
        }
        if self.blocks.iter().any(|&b| b == 0) || self.widths[0] == 0 {
            return fail("blocks and widths must be positive".into());
        }
        if self.patch_grid < 2 {
            return fail(format!("patch_grid must be >= 2, got {}", self.patch_grid));
        }
        if self.classes < 2 {
            return fail(format!("classes must be >= 2, got {}", self.classes));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return fail(format!(
                "hidden {} must be divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if self.fusion_width == 0 {
            return fail("fusion_width must be positive".into());
        }
        for s in 0..self.gaze_count() {
            let extent = self.stage_extent(s);
            if extent % 2 != 0 {
                return fail(format!("stage {s} extent {extent} is not poolable by stride 2"));
            }
            if extent % self.patch_grid != 0 || extent < self.patch_grid {
                return fail(format!(
                    "stage {s} extent {extent} is not divisible into a {0}x{0} patch grid",
                    self.patch_grid
                ));
            }
        }
        if self.stage_extent(self.stages - 1) == 0 {
            return fail("image too small for the stage count".into());
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        vec![
            ("stages".into(), self.stages.to_string()),
            ("widths".into(), list(&self.widths)),
            ("blocks".into(), list(&self.blocks)),
            ("patch_grid".into(), self.patch_grid.to_string()),
            ("fusion".into(), self.fusion.to_string()),
            ("classes".into(), self.classes.to_string()),
            ("image_size".into(), self.image_size.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("fusion_width".into(), self.fusion_width.to_string()),
            ("toggles".into(), self.toggles.compact()),
        ]
    }

    /// Builds a config from parsed key=value pairs, consuming the keys it
    /// understands. Unspecified keys keep their defaults.
    pub fn from_kv(map: &mut BTreeMap<String, String>) -> Result<Self, ModelError> {
        let mut cfg = ModelConfig::default();
        let err = ModelError::Config;
        if let Some(v) = kv::take::<usize>(map, "stages").map_err(err)? {
            cfg.stages = v;
        }
        let parse_list = |raw: &str| -> Result<Vec<usize>, ModelError> {
            raw.split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| ModelError::Config(format!("bad extent list {raw:?}")))
        };
        if let Some(raw) = map.remove("widths") {
            cfg.widths = parse_list(&raw)?;
        } else if cfg.stages != 4 {
            cfg.widths = (0..cfg.stages).map(|s| 16 << s).collect();
        }
        if let Some(raw) = map.remove("blocks") {
            cfg.blocks = parse_list(&raw)?;
        } else {
            cfg.blocks = vec![2; cfg.stages];
        }
        if let Some(v) = kv::take::<usize>(map, "patch_grid").map_err(err)? {
            cfg.patch_grid = v;
        }
        if let Some(v) = kv::take::<FusionMode>(map, "fusion").map_err(|e| err(e.to_string()))? {
            cfg.fusion = v;
        }
        if let Some(v) = kv::take::<usize>(map, "classes").map_err(err)? {
            cfg.classes = v;
        }
        if let Some(v) = kv::take::<usize>(map, "image_size").map_err(err)? {
            cfg.image_size = v;
        }
        if let Some(v) = kv::take::<usize>(map, "heads").map_err(err)? {
            cfg.heads = v;
        }
        if let Some(v) = kv::take::<usize>(map, "hidden").map_err(err)? {
            cfg.hidden = v;
        }
        if let Some(v) = kv::take::<usize>(map, "fusion_width").map_err(err)? {
            cfg.fusion_width = v;
        }
        if let Some(raw) = map.remove("toggles") {
            cfg.toggles = AblationToggles::parse_compact(&raw)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a config file body; every key must be understood.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut map = kv::parse(text).map_err(ModelError::Config)?;
        let cfg = Self::from_kv(&mut map)?;
        kv::reject_unknown(&map, "model config").map_err(ModelError::Config)?;
        Ok(cfg)
    }
}
