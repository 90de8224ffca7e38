//! Exact percentages. All arithmetic stays on integer fractions; rounding to
//! two decimals (half-up) happens only when rendering.

use std::cmp::Ordering;
use std::fmt;

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fraction `num / den` in `[0, 1]`, displayed as a percentage.
///
/// Count-based values keep their raw `(flagged, total)` pair; derived values
/// (averages, parsed literals) are kept in lowest terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Percentage {
    num: u128,
    den: u128,
}

impl PartialEq for Percentage {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Percentage {}

impl PartialOrd for Percentage {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Percentage {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

fn overflow() -> Error {
    Error::InvalidArgument("percentage arithmetic overflow".into())
}

impl Percentage {
    pub const ZERO: Percentage = Percentage { num: 0, den: 1 };

    /// `flagged / total`, rendered as a percentage.
    pub fn from_counts(flagged: u64, total: u64) -> Result<Self> {
        if total == 0 {
            return Err(Error::InvalidArgument("percentage of zero total".into()));
        }
        if flagged > total {
            return Err(Error::InvalidArgument(format!(
                "flagged count {flagged} exceeds total {total}"
            )));
        }
        Ok(Percentage {
            num: flagged as u128,
            den: total as u128,
        })
    }

    /// Parses a decimal percentage literal such as `"13.91"` or `"6.155%"`.
    pub fn parse_percent(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("not a percentage: {s:?}"));
        let t = s.trim().trim_end_matches('%').trim();
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if int.is_empty() && frac.is_empty()
            || !int.chars().all(|c| c.is_ascii_digit())
            || !frac.chars().all(|c| c.is_ascii_digit())
            || frac.len() > 30
        {
            return Err(bad());
        }
        let scale = 10u128.checked_pow(frac.len() as u32).ok_or_else(bad)?;
        let int_v: u128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_v: u128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int_v
            .checked_mul(scale)
            .and_then(|v| v.checked_add(frac_v))
            .ok_or_else(bad)?;
        let den = scale.checked_mul(100).ok_or_else(bad)?;
        if num > den {
            return Err(bad());
        }
        Ok(Percentage { num, den }.reduced())
    }

    fn reduced(self) -> Self {
        let g = self.num.gcd(&self.den);
        if g <= 1 {
            return self;
        }
        Percentage {
            num: self.num / g,
            den: self.den / g,
        }
    }

    pub fn num(&self) -> u128 {
        self.num
    }

    pub fn den(&self) -> u128 {
        self.den
    }

    /// Value in percent as a float, for plotting and logs only.
    pub fn as_percent_f64(&self) -> f64 {
        self.num as f64 * 100.0 / self.den as f64
    }

    /// The percentage rounded half-up to hundredths of a percent.
    pub fn hundredths(&self) -> u128 {
        // floor(100 * 100 * num / den + 1/2)
        (20_000 * self.num + self.den) / (2 * self.den)
    }

    /// Two-decimal, half-up, locale-independent rendering without a `%` sign.
    pub fn rendered(&self) -> String {
        let h = self.hundredths();
        format!("{}.{:02}", h / 100, h % 100)
    }

    fn checked_add(self, other: Percentage) -> Option<Percentage> {
        let l = self.den.lcm(&other.den);
        let a = self.num.checked_mul(l / self.den)?;
        let b = other.num.checked_mul(l / other.den)?;
        Some(
            Percentage {
                num: a.checked_add(b)?,
                den: l,
            }
            .reduced(),
        )
    }

    /// Arithmetic mean of percentage values (each study weighs the same).
    pub fn mean(values: &[Percentage]) -> Result<Percentage> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut acc = Percentage::ZERO;
        for v in values {
            acc = acc.checked_add(v.reduced()).ok_or_else(overflow)?;
        }
        let den = acc
            .den
            .checked_mul(values.len() as u128)
            .ok_or_else(overflow)?;
        Ok(Percentage { num: acc.num, den }.reduced())
    }

    /// Pooled rate `sum(flagged) / sum(total)`.
    pub fn pooled(counts: &[(u64, u64)]) -> Result<Percentage> {
        if counts.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut flagged: u64 = 0;
        let mut total: u64 = 0;
        for &(f, t) in counts {
            // validates each pair
            Percentage::from_counts(f, t)?;
            flagged += f;
            total += t;
        }
        Percentage::from_counts(flagged, total)
    }
}

impl fmt::Display for Percentage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}%", self.rendered())
    }
}

/// Serialized form: exact fraction plus rendered string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PercentageRecord {
    pub num: u128,
    pub den: u128,
    pub rendered: String,
}

impl From<Percentage> for PercentageRecord {
    fn from(p: Percentage) -> Self {
        PercentageRecord {
            num: p.num,
            den: p.den,
            rendered: p.rendered(),
        }
    }
}

impl TryFrom<PercentageRecord> for Percentage {
    type Error = Error;

    fn try_from(r: PercentageRecord) -> Result<Self> {
        if r.den == 0 || r.num > r.den {
            return Err(Error::InvalidArgument(format!(
                "invalid percentage fraction {}/{}",
                r.num, r.den
            )));
        }
        Ok(Percentage { num: r.num, den: r.den })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str) -> Percentage {
        Percentage::parse_percent(s).unwrap()
    }

    #[test]
    fn count_percentages() {
        assert_eq!(Percentage::from_counts(27, 170).unwrap().rendered(), "15.88");
        assert_eq!(Percentage::from_counts(0, 160).unwrap().rendered(), "0.00");
        assert_eq!(Percentage::from_counts(1, 3).unwrap().rendered(), "33.33");
        assert_eq!(Percentage::from_counts(2, 3).unwrap().rendered(), "66.67");
        assert_eq!(Percentage::from_counts(10, 10).unwrap().rendered(), "100.00");
        assert_eq!(Percentage::from_counts(2, 10).unwrap().to_string(), "20.00%");
        assert!(Percentage::from_counts(1, 0).is_err());
        assert!(Percentage::from_counts(3, 2).is_err());
    }

    #[test]
    fn half_up_rendering() {
        assert_eq!(p("6.155").rendered(), "6.16");
        assert_eq!(p("6.145").rendered(), "6.15");
        assert_eq!(p("6.1549999").rendered(), "6.15");
        assert_eq!(p("0.005").rendered(), "0.01");
        assert_eq!(p("99.995").rendered(), "100.00");
        // 1/8 = 12.5%
        assert_eq!(Percentage::from_counts(1, 8).unwrap().rendered(), "12.50");
    }

    #[test]
    fn unweighted_means() {
        // (13.91 + 1.18 + 7.03 + 2.50) / 4 = 24.62 / 4 = 6.155
        let m = Percentage::mean(&[p("13.91"), p("1.18"), p("7.03"), p("2.50")]).unwrap();
        assert_eq!(m, p("6.155"));
        assert_eq!(m.rendered(), "6.16");
        // (48.71 + 18.18 + 24.76) / 3 = 91.65 / 3 = 30.55
        let m = Percentage::mean(&[p("48.71"), p("18.18"), p("24.76")]).unwrap();
        assert_eq!(m.rendered(), "30.55");
        assert_eq!(Percentage::mean(&[p("42.5")]).unwrap(), p("42.5"));
        assert!(Percentage::mean(&[]).is_err());
    }

    #[test]
    fn pooled_rates() {
        let a = Percentage::pooled(&[(27, 170), (23, 313), (21, 160)]).unwrap();
        assert_eq!((a.num(), a.den()), (71, 643));
        assert_eq!(a.rendered(), "11.04");
        let b = Percentage::pooled(&[(15, 1166), (0, 198), (25, 520)]).unwrap();
        assert_eq!((b.num(), b.den()), (40, 1884));
        assert_eq!(b.rendered(), "2.12");
        assert_eq!(Percentage::pooled(&[(0, 10), (0, 10)]).unwrap().rendered(), "0.00");
        assert!(Percentage::pooled(&[]).is_err());
        assert!(Percentage::pooled(&[(1, 0)]).is_err());
    }

    #[test]
    fn parse_rejects_garbage() {
        for bad in ["", ".", "abc", "-1", "1e3", "100.01", "1.2.3"] {
            assert!(Percentage::parse_percent(bad).is_err(), "{bad}");
        }
        assert_eq!(p("13.91%"), p("13.910"));
    }

    proptest! {
        #[test]
        fn averages_are_bounded(counts in prop::collection::vec((0u64..500, 1u64..500), 1..8)) {
            let counts: Vec<(u64, u64)> = counts.into_iter().map(|(f, t)| (f.min(t), t)).collect();
            let per: Vec<Percentage> = counts.iter().map(|&(f, t)| Percentage::from_counts(f, t).unwrap()).collect();
            let lo = *per.iter().min().unwrap();
            let hi = *per.iter().max().unwrap();
            let pooled = Percentage::pooled(&counts).unwrap();
            let mean = Percentage::mean(&per).unwrap();
            prop_assert!(lo <= pooled && pooled <= hi);
            prop_assert!(lo <= mean && mean <= hi);
        }

        #[test]
        fn rendering_matches_float_away_from_ties(f in 0u64..10_000, extra in 1u64..10_000) {
            let t = f + extra;
            let pct = Percentage::from_counts(f, t).unwrap();
            let x = f as f64 * 10_000.0 / t as f64;
            // away from .5 ties, float rounding agrees with the exact rule
            if (x - x.floor() - 0.5).abs() > 1e-6 {
                prop_assert_eq!(pct.hundredths(), x.round() as u128);
            }
        }
    }
}
