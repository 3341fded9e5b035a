//! Reals serialized as decimal strings.
//!
//! `{:?}` on `f64` prints the shortest representation that parses back to the
//! identical bit pattern, so documents round-trip exactly.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serializer};

pub fn to_string(x: f64) -> String {
    format!("{x:?}")
}

pub fn parse(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a real: {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite real: {s:?}"))
    }
}

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !x.is_finite() {
        return Err(serde::ser::Error::custom("non-finite real"));
    }
    s.serialize_str(&to_string(*x))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let s = String::deserialize(d)?;
    parse(&s).map_err(D::Error::custom)
}

pub mod vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for x in xs {
            if !x.is_finite() {
                return Err(serde::ser::Error::custom("non-finite real"));
            }
            seq.serialize_element(&to_string(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter().map(|s| parse(s).map_err(D::Error::custom)).collect()
    }
}

pub mod matrix {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(rows.len()))?;
        for row in rows {
            let strs = row
                .iter()
                .map(|x| {
                    if x.is_finite() {
                        Ok(to_string(*x))
                    } else {
                        Err(serde::ser::Error::custom("non-finite real"))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            seq.serialize_element(&strs)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let raw = Vec::<Vec<String>>::deserialize(d)?;
        raw.iter()
            .map(|row| row.iter().map(|s| parse(s).map_err(D::Error::custom)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_strings_round_trip_bit_exactly() {
        for x in [0.1, 1.0 / 3.0, 1e-8, -2.5e300, 5e-324, 123456.789] {
            assert_eq!(parse(&to_string(x)).unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(parse("NaN").is_err());
        assert!(parse("inf").is_err());
        assert!(parse("abc").is_err());
    }
}
