use serde::{Deserialize, Serialize};

use super::{ColorOp, GeoOp};
use crate::error::{Error, Result};

/// Canonical names of the seven ablation settings, in table order.
pub const CANONICAL_POLICIES: [&str; 7] =
    ["cutout", "ra-color", "ra-color-cutout", "ra-geo", "ra-geo-cutout", "ra-colorgeo", "ra-colorgeo-cutout"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugPolicy {
    pub use_randaugment: bool,
    /// Colour transforms are in the RandAugment pool.
    pub color: bool,
    /// Geometric transforms are in the RandAugment pool.
    pub geometric: bool,
    pub use_cutout: bool,
    pub ops_per_image: usize,
    /// Cutout side as a fraction of the image side.
    pub cutout_fraction: f64,
}

impl Default for AugPolicy {
    fn default() -> Self {
        Self { use_randaugment: true, color: true, geometric: true, use_cutout: true, ops_per_image: 2, cutout_fraction: 0.5 }
    }
}

impl AugPolicy {
    pub fn from_name(name: &str) -> Result<Self> {
        let base = Self::default();
        let (ra, color, geometric, cutout) = match name {
            "cutout" => (false, false, false, true),
            "ra-color" => (true, true, false, false),
            "ra-color-cutout" => (true, true, false, true),
            "ra-geo" => (true, false, true, false),
            "ra-geo-cutout" => (true, false, true, true),
            "ra-colorgeo" => (true, true, true, false),
            "ra-colorgeo-cutout" => (true, true, true, true),
            other => return Err(Error::Policy(format!("unknown policy name {other:?}"))),
        };
        Ok(Self { use_randaugment: ra, color, geometric, use_cutout: cutout, ..base })
    }

    /// The canonical name, if the switches match one of the seven settings.
    pub fn name(&self) -> Option<&'static str> {
        CANONICAL_POLICIES.iter().copied().find(|n| {
            let p = Self::from_name(n).expect("canonical");
            let same_pool = !self.use_randaugment || (p.color == self.color && p.geometric == self.geometric);
            p.use_randaugment == self.use_randaugment && p.use_cutout == self.use_cutout && same_pool
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_randaugment {
            if self.pool_size() == 0 {
                return Err(Error::Policy("randaugment enabled with an empty transform pool".into()));
            }
            if self.ops_per_image == 0 {
                return Err(Error::Policy("ops_per_image must be at least 1".into()));
            }
        }
        if !(self.cutout_fraction > 0.0 && self.cutout_fraction <= 1.0) {
            return Err(Error::Policy(format!("cutout_fraction {} must be in (0, 1]", self.cutout_fraction)));
        }
        Ok(())
    }

    pub fn pool_size(&self) -> usize {
        usize::from(self.color) * ColorOp::KINDS + usize::from(self.geometric) * GeoOp::KINDS
    }

    /// Compact description of every switch, used to tag log lines.
    pub fn fingerprint(&self) -> String {
        let pool = match (self.use_randaugment, self.color, self.geometric) {
            (false, _, _) => "none",
            (true, true, true) => "color+geo",
            (true, true, false) => "color",
            (true, false, true) => "geo",
            (true, false, false) => "empty",
        };
        let cutout = if self.use_cutout { format!("{}", self.cutout_fraction) } else { "off".into() };
        format!("ra={};pool={pool};ops={};cutout={cutout}", u8::from(self.use_randaugment), self.ops_per_image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_names_round_trip() {
        for name in CANONICAL_POLICIES {
            let p = AugPolicy::from_name(name).unwrap();
            p.validate().unwrap();
            assert_eq!(p.name(), Some(name));
        }
        assert!(AugPolicy::from_name("ra-everything").is_err());
    }

    #[test]
    fn cutout_only_has_no_randaugment() {
        let p = AugPolicy::from_name("cutout").unwrap();
        assert!(!p.use_randaugment && p.use_cutout);
        assert_ne!(p.fingerprint(), AugPolicy::from_name("ra-colorgeo-cutout").unwrap().fingerprint());
    }

    #[test]
    fn fingerprints_are_distinct() {
        let mut prints: Vec<String> =
            CANONICAL_POLICIES.iter().map(|n| AugPolicy::from_name(n).unwrap().fingerprint()).collect();
        prints.sort();
        prints.dedup();
        assert_eq!(prints.len(), 7);
    }

    #[test]
    fn invalid_switches() {
        assert!(AugPolicy { ops_per_image: 0, ..AugPolicy::default() }.validate().is_err());
        assert!(AugPolicy { cutout_fraction: 0.0, ..AugPolicy::default() }.validate().is_err());
        assert!(AugPolicy { color: false, geometric: false, ..AugPolicy::default() }.validate().is_err());
    }
}
