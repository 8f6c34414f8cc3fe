use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub name: &'static str,
    pub center_nm: f64,
    pub bandwidth_nm: f64,
}

/// The seven multispectral bands of the imager, in storage order.
pub static PHISAT2_BANDS: [Band; 7] = [
    Band { name: "MS1", center_nm: 490.0, bandwidth_nm: 65.0 },
    Band { name: "MS2", center_nm: 560.0, bandwidth_nm: 35.0 },
    Band { name: "MS3", center_nm: 665.0, bandwidth_nm: 30.0 },
    Band { name: "MS4", center_nm: 705.0, bandwidth_nm: 15.0 },
    Band { name: "MS5", center_nm: 740.0, bandwidth_nm: 15.0 },
    Band { name: "MS6", center_nm: 783.0, bandwidth_nm: 20.0 },
    Band { name: "MS7", center_nm: 842.0, bandwidth_nm: 115.0 },
];

pub fn band(name: &str) -> Option<&'static Band> {
    PHISAT2_BANDS.iter().find(|b| b.name == name)
}

pub(crate) fn default_band_order() -> Vec<String> {
    PHISAT2_BANDS.iter().map(|b| b.name.to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BandSet {
    All7,
    RgbNir,
    Rgb,
}

impl BandSet {
    /// Band names in output order. RGB is red, green, blue.
    pub fn names(self) -> &'static [&'static str] {
        match self {
            Self::All7 => &["MS1", "MS2", "MS3", "MS4", "MS5", "MS6", "MS7"],
            Self::RgbNir => &["MS3", "MS2", "MS1", "MS7"],
            Self::Rgb => &["MS3", "MS2", "MS1"],
        }
    }

    pub fn len(self) -> usize {
        self.names().len()
    }
}

impl std::str::FromStr for BandSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', '+'], "_").as_str() {
            "ALL7" | "ALL" => Ok(Self::All7),
            "RGB_NIR" | "RGBNIR" => Ok(Self::RgbNir),
            "RGB" => Ok(Self::Rgb),
            _ => Err(Error::config(format!("unknown band set `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_sorted_and_complete() {
        assert_eq!(PHISAT2_BANDS.len(), 7);
        assert!(PHISAT2_BANDS.windows(2).all(|w| w[0].center_nm < w[1].center_nm));
        assert_eq!(PHISAT2_BANDS[0].center_nm, 490.0);
        assert_eq!(PHISAT2_BANDS[6].center_nm, 842.0);
    }

    #[test]
    fn parse_sets() {
        assert_eq!("rgb+nir".parse::<BandSet>().unwrap(), BandSet::RgbNir);
        assert!("cmyk".parse::<BandSet>().is_err());
    }
}
