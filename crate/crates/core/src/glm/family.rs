use serde::{Deserialize, Serialize};

/// Response family of a generalized linear model with canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Logistic,
    Linear,
}

impl Family {
    /// Inverse link `μ(u)`.
    #[inline]
    pub fn mean(self, u: f64) -> f64 {
        match self {
            Family::Logistic => logistic(u),
            Family::Linear => u,
        }
    }

    /// Derivative `μ'(u)`, which for canonical links is also the variance function.
    #[inline]
    pub fn mean_deriv(self, u: f64) -> f64 {
        match self {
            Family::Logistic => {
                let m = logistic(u);
                m * (1.0 - m)
            }
            Family::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Logistic => "logistic",
            Family::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" | "binomial" | "logit" => Ok(Family::Logistic),
            "linear" | "gaussian" => Ok(Family::Linear),
            other => Err(format!("unknown family `{other}`")),
        }
    }
}

/// Overflow-free `exp(u) / (1 + exp(u))`.
#[inline]
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_mean_stays_in_unit_interval() {
        for u in [-800.0, -30.0, -1.0, 0.0, 1.0, 30.0, 800.0] {
            let m = Family::Logistic.mean(u);
            assert!((0.0..=1.0).contains(&m));
        }
        assert_eq!(Family::Logistic.mean(0.0), 0.5);
        assert_eq!(Family::Logistic.mean_deriv(0.0), 0.25);
        assert_eq!(Family::Linear.mean(3.5), 3.5);
        assert_eq!(Family::Linear.mean_deriv(-2.0), 1.0);
    }

    #[test]
    fn parses_aliases() {
        assert_eq!("binomial".parse::<Family>().unwrap(), Family::Logistic);
        assert_eq!("Gaussian".parse::<Family>().unwrap(), Family::Linear);
        assert!("poisson".parse::<Family>().is_err());
    }
}
