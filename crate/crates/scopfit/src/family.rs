//! Exponential-family response distributions with canonical links.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Gaussian,
    Binomial,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
    Log,
}

/// Response distribution paired with its link. Only canonical pairs are
/// supported: gaussian/identity, binomial/logit, poisson/log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Family {
    pub kind: FamilyKind,
    pub link: Link,
}

impl Family {
    pub fn new(kind: FamilyKind, link: Link) -> Result<Self> {
        let ok = matches!(
            (kind, link),
            (FamilyKind::Gaussian, Link::Identity)
                | (FamilyKind::Binomial, Link::Logit)
                | (FamilyKind::Poisson, Link::Log)
        );
        if !ok {
            return Err(Error::InvalidFamilyLink {
                family: format!("{kind:?}").to_lowercase(),
                link: format!("{link:?}").to_lowercase(),
            });
        }
        Ok(Family { kind, link })
    }

    pub fn gaussian() -> Self {
        Family {
            kind: FamilyKind::Gaussian,
            link: Link::Identity,
        }
    }

    pub fn binomial() -> Self {
        Family {
            kind: FamilyKind::Binomial,
            link: Link::Logit,
        }
    }

    pub fn poisson() -> Self {
        Family {
            kind: FamilyKind::Poisson,
            link: Link::Log,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(Family::gaussian()),
            "binomial" => Ok(Family::binomial()),
            "poisson" => Ok(Family::poisson()),
            other => Err(Error::Invalid(format!("unknown family `{other}`"))),
        }
    }

    /// True when the scale parameter is fixed at one.
    pub fn scale_known(&self) -> bool {
        !matches!(self.kind, FamilyKind::Gaussian)
    }

    /// Inverse link: mean from the linear predictor.
    pub fn mean(&self, eta: f64) -> f64 {
        match self.link {
            Link::Identity => eta,
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
            Link::Log => eta.min(30.0).exp(),
        }
    }

    /// Link function applied to a mean value.
    pub fn link_of(&self, mu: f64) -> f64 {
        match self.link {
            Link::Identity => mu,
            Link::Logit => {
                let m = mu.clamp(1e-8, 1.0 - 1e-8);
                (m / (1.0 - m)).ln()
            }
            Link::Log => mu.max(1e-8).ln(),
        }
    }

    /// Variance function V(mu).
    pub fn variance(&self, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Binomial => (mu * (1.0 - mu)).max(1e-10),
            FamilyKind::Poisson => mu.max(1e-10),
        }
    }

    /// Unit deviance contribution d_i(y, mu) >= 0, with mu clamped away
    /// from the boundary of the mean space.
    pub fn unit_deviance(&self, y: f64, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => (y - mu) * (y - mu),
            FamilyKind::Binomial => {
                let m = mu.clamp(1e-10, 1.0 - 1e-10);
                let a = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
                let b = if y < 1.0 {
                    (1.0 - y) * ((1.0 - y) / (1.0 - m)).ln()
                } else {
                    0.0
                };
                2.0 * (a + b)
            }
            FamilyKind::Poisson => {
                let m = mu.max(1e-10);
                let a = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
                2.0 * (a - (y - m))
            }
        }
    }
}

/// Total deviance over observations with optional prior weights.
pub fn deviance(family: &Family, y: &[f64], mu: &[f64], weights: Option<&[f64]>) -> f64 {
    y.iter()
        .zip(mu.iter())
        .enumerate()
        .map(|(i, (&yi, &mi))| {
            let w = weights.map_or(1.0, |w| w[i]);
            w * family.unit_deviance(yi, mi)
        })
        .sum()
}
