use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// The five experimental configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Orig,
    Gen5,
    Dis3,
    L11Gan100,
    L150Gan50,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Orig,
        Variant::Gen5,
        Variant::Dis3,
        Variant::L11Gan100,
        Variant::L150Gan50,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Orig => "orig",
            Variant::Gen5 => "gen5",
            Variant::Dis3 => "dis3",
            Variant::L11Gan100 => "l11gan100",
            Variant::L150Gan50 => "l150gan50",
        }
    }

    pub fn config(self) -> VariantConfig {
        let (generator_kernel, discriminator_kernel, lambda_gan, lambda_l1) = match self {
            Variant::Orig => (4, 4, 1.0, 100.0),
            Variant::Gen5 => (5, 4, 1.0, 100.0),
            Variant::Dis3 => (4, 3, 1.0, 100.0),
            Variant::L11Gan100 => (4, 4, 100.0, 1.0),
            Variant::L150Gan50 => (4, 4, 50.0, 50.0),
        };
        VariantConfig {
            variant: self,
            generator_kernel,
            discriminator_kernel,
            lambda_gan,
            lambda_l1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Kernel sizes and loss weights of one variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariantConfig {
    pub variant: Variant,
    pub generator_kernel: usize,
    pub discriminator_kernel: usize,
    pub lambda_gan: f64,
    pub lambda_l1: f64,
}

impl VariantConfig {
    pub fn name(&self) -> &'static str {
        self.variant.name()
    }
}

impl From<Variant> for VariantConfig {
    fn from(v: Variant) -> Self {
        v.config()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table() {
        let rows: Vec<_> = Variant::ALL
            .iter()
            .map(|v| {
                let c = v.config();
                (
                    c.generator_kernel,
                    c.discriminator_kernel,
                    c.lambda_gan,
                    c.lambda_l1,
                )
            })
            .collect();
        assert_eq!(
            rows,
            vec![
                (4, 4, 1.0, 100.0),
                (5, 4, 1.0, 100.0),
                (4, 3, 1.0, 100.0),
                (4, 4, 100.0, 1.0),
                (4, 4, 50.0, 50.0),
            ]
        );
    }

    #[test]
    fn parse_round_trip_and_unknown() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        let err = "pix2pix".parse::<Variant>().unwrap_err().to_string();
        for v in Variant::ALL {
            assert!(err.contains(v.name()));
        }
    }
}
