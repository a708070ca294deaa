//! Progressive training stages, stored as TOML with one `[[stage]]` table per row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "L")]
    pub frames: usize,
    /// Maximum views per sample.
    #[serde(rename = "V")]
    pub views: usize,
    /// Minimum views per sample; each step draws a count in `min_views..=views`.
    #[serde(rename = "V_min", default, skip_serializing_if = "Option::is_none")]
    pub min_views: Option<usize>,
    /// Supervised frames per trajectory.
    #[serde(rename = "S")]
    pub supervised: usize,
    #[serde(rename = "B")]
    pub batch: usize,
    pub steps: usize,
    #[serde(default)]
    pub dynamic: bool,
}

impl Stage {
    pub fn view_range(&self) -> (usize, usize) {
        (self.min_views.unwrap_or(self.views), self.views)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.view_range();
        if self.height == 0 || self.width == 0 || self.frames == 0 || self.supervised == 0 || self.batch == 0 {
            return invalid(format!("stage has a zero dimension: {self:?}"));
        }
        if self.steps == 0 {
            return invalid("stage step count must be positive");
        }
        if lo == 0 || lo > hi {
            return invalid(format!("stage view range {lo}..={hi}"));
        }
        if self.supervised > self.frames {
            return invalid(format!("S = {} exceeds L = {}", self.supervised, self.frames));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    #[serde(rename = "stage")]
    pub stages: Vec<Stage>,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return invalid("schedule has no stages");
        }
        self.stages.iter().try_for_each(Stage::validate)
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }

    /// The full-scale seven-stage schedule (six static stages, one dynamic).
    pub fn reference() -> Self {
        let st = |h, w, l, v, vmin, s, b, steps, dynamic| Stage {
            height: h,
            width: w,
            frames: l,
            views: v,
            min_views: vmin,
            supervised: s,
            batch: b,
            steps,
            dynamic,
        };
        Self {
            stages: vec![
                st(176, 320, 17, 1, None, 17, 4, 10_000, false),
                st(176, 320, 49, 1, None, 49, 4, 2_500, false),
                st(352, 640, 49, 1, None, 49, 2, 2_500, false),
                st(704, 1280, 49, 1, None, 49, 1, 2_500, false),
                st(704, 1280, 121, 1, None, 9, 1, 57_500, false),
                st(704, 1280, 121, 6, Some(1), 9, 1, 7_000, false),
                st(704, 1280, 121, 6, None, 12, 1, 10_000, true),
            ],
        }
    }

    /// Three static stages at 64×64, L = 9, growing the view count.
    pub fn desk(steps: [usize; 3]) -> Self {
        let st = |v, s, steps| Stage {
            height: 64,
            width: 64,
            frames: 9,
            views: v,
            min_views: None,
            supervised: s,
            batch: 1,
            steps,
            dynamic: false,
        };
        Self {
            stages: vec![st(1, 4, steps[0]), st(2, 3, steps[1]), st(4, 2, steps[2])],
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_table() {
        let r = StageConfig::reference();
        r.validate().unwrap();
        assert_eq!(r.stages.len(), 7);
        let last_static = &r.stages[5];
        assert_eq!((last_static.height, last_static.width, last_static.frames), (704, 1280, 121));
        assert_eq!(last_static.view_range(), (1, 6));
        assert_eq!(last_static.supervised, 9);
        let dynamic = &r.stages[6];
        assert!(dynamic.dynamic);
        assert_eq!((dynamic.views, dynamic.supervised), (6, 12));
        assert!(r.stages[..6].iter().all(|s| !s.dynamic));
        assert_eq!(r.total_steps(), 92_000);
    }

    #[test]
    fn toml_round_trip() {
        let r = StageConfig::reference();
        let text = r.to_toml().unwrap();
        assert!(text.contains("[[stage]]"));
        assert!(text.contains("H = 176"));
        assert_eq!(StageConfig::from_toml(&text).unwrap(), r);
    }

    #[test]
    fn rejects_bad_stages() {
        let mut d = StageConfig::desk([1, 1, 1]);
        d.stages[0].supervised = 10;
        assert!(d.validate().is_err());
        assert!(StageConfig::from_toml("[[stage]]\nH = 8\n").is_err());
        assert!(StageConfig { stages: vec![] }.validate().is_err());
    }
}
