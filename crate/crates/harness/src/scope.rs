//! The four quantization scopes of the bitwidth sensitivity sweep.

use std::fmt;
use std::str::FromStr;

use qpolicy_core::QuantConfig;
use serde::{Deserialize, Serialize};

/// Bitwidth of every quantizer a scope does not sweep.
pub const FIXED_BITS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    All,
    Input,
    Output,
    Core,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::All, Scope::Input, Scope::Output, Scope::Core];

    pub fn quant(self, bits: u32) -> QuantConfig {
        let f = FIXED_BITS;
        match self {
            Scope::All => QuantConfig::uniform(bits),
            Scope::Input => QuantConfig { input_bits: bits, weight_bits: f, act_bits: f, output_bits: f },
            Scope::Output => QuantConfig { input_bits: f, weight_bits: f, act_bits: f, output_bits: bits },
            Scope::Core => QuantConfig::core(bits, f, f),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::All => "all",
            Scope::Input => "input",
            Scope::Output => "output",
            Scope::Core => "core",
        })
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Scope::All),
            "input" => Ok(Scope::Input),
            "output" => Ok(Scope::Output),
            "core" => Ok(Scope::Core),
            other => Err(format!("unknown scope '{other}' (expected all, input, output or core)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scopes_vary_only_their_quantizers() {
        assert_eq!(Scope::All.quant(3), QuantConfig::uniform(3));
        let i = Scope::Input.quant(2);
        assert_eq!((i.input_bits, i.weight_bits, i.act_bits, i.output_bits), (2, 8, 8, 8));
        let o = Scope::Output.quant(2);
        assert_eq!((o.input_bits, o.weight_bits, o.act_bits, o.output_bits), (8, 8, 8, 2));
        let c = Scope::Core.quant(2);
        assert_eq!((c.input_bits, c.weight_bits, c.act_bits, c.output_bits), (8, 2, 2, 8));
        for s in Scope::ALL {
            assert_eq!(s.to_string().parse::<Scope>().unwrap(), s);
            assert_eq!(s.quant(8), QuantConfig::uniform(8));
        }
    }
}
