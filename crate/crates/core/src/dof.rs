//! Closed-form sum-DoF evaluators, regime selection and sweeps.
//!
//! All values are exact rationals so regime boundaries never depend on
//! floating-point rounding.

use std::fmt;

use num_rational::Ratio;
use serde::{Serialize, Serializer};

use crate::config::CsiType;
use crate::error::{Error, Result};
use crate::scheme::SchemeId;

pub type Dof = Ratio<i64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Regime {
    #[serde(rename = "noCSI")]
    NoCsi,
    #[serde(rename = "icsi-full")]
    IcsiFull,
    #[serde(rename = "icsi-deficient")]
    IcsiDeficient,
    #[serde(rename = "icsi-fallback")]
    IcsiFallback,
    #[serde(rename = "dcsi-spacetime")]
    DcsiSpacetime,
    #[serde(rename = "dcsi-fallback")]
    DcsiFallback,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::NoCsi => "noCSI",
            Regime::IcsiFull => "icsi-full",
            Regime::IcsiDeficient => "icsi-deficient",
            Regime::IcsiFallback => "icsi-fallback",
            Regime::DcsiSpacetime => "dcsi-spacetime",
            Regime::DcsiFallback => "dcsi-fallback",
        }
    }

    /// The construction that actually runs in this regime.
    pub fn scheme(self) -> SchemeId {
        match self {
            Regime::NoCsi | Regime::IcsiFallback | Regime::DcsiFallback => SchemeId::NoCsi,
            Regime::IcsiFull | Regime::IcsiDeficient => SchemeId::Icsi,
            Regime::DcsiSpacetime => SchemeId::Dcsi,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DofPoint {
    pub kd: usize,
    pub n: usize,
    pub ms: usize,
    pub csi: CsiType,
    #[serde(serialize_with = "serialize_ratio")]
    pub dof: Dof,
    pub regime: Regime,
}

fn serialize_ratio<S: Serializer>(r: &Dof, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

fn int(x: usize) -> i64 {
    i64::try_from(x).expect("dimension fits in i64")
}

fn ratio(x: usize) -> Dof {
    Dof::from_integer(int(x))
}

/// `ψ = (kd+1)·⌊n/2⌋`, the largest `ms` at which the no-CSI scheme wins.
pub fn psi(kd: usize, n: usize) -> usize {
    (kd + 1) * (n / 2)
}

/// No CSI: `(kd+1)·n/2`.
pub fn dof_t1(kd: usize, n: usize) -> Dof {
    Dof::new(int((kd + 1) * n), 2)
}

/// Instantaneous or moderately delayed CSI.
pub fn dof_t2(ms: usize, kd: usize, n: usize) -> DofPoint {
    let full = (kd + 1) * n;
    let (dof, regime) = if ms <= psi(kd, n) {
        (dof_t1(kd, n), Regime::IcsiFallback)
    } else if ms < full {
        (ratio(ms.div_ceil(kd + 1) * (kd + 1)), Regime::IcsiDeficient)
    } else {
        (ratio(full), Regime::IcsiFull)
    };
    DofPoint {
        kd,
        n,
        ms,
        csi: CsiType::Instantaneous,
        dof,
        regime,
    }
}

/// Space-time value `(ms + (⌈φ⌉−1)(kd−1)n)/(⌈φ⌉+1)` with `φ = ms/n`,
/// before the fallback test.
pub fn dof_t3_spacetime(ms: usize, kd: usize, n: usize) -> Dof {
    let c = int(ms.div_ceil(n));
    Dof::new(int(ms) + (c - 1) * (int(kd) - 1) * int(n), c + 1)
}

/// Whether `3kd − 1 ≤ 2φ + (kd−3)⌈φ⌉`.
pub fn dcsi_condition(ms: usize, kd: usize, n: usize) -> bool {
    let phi = Dof::new(int(ms), int(n));
    let c = Dof::from_integer(int(ms.div_ceil(n)));
    let lhs = Dof::from_integer(3 * int(kd) - 1);
    lhs <= phi * 2 + c * (int(kd) - 3)
}

/// Delayed CSI.
pub fn dof_t3(ms: usize, kd: usize, n: usize) -> DofPoint {
    let (dof, regime) = if dcsi_condition(ms, kd, n) {
        (dof_t3_spacetime(ms, kd, n), Regime::DcsiSpacetime)
    } else {
        (dof_t1(kd, n), Regime::DcsiFallback)
    };
    DofPoint {
        kd,
        n,
        ms,
        csi: CsiType::Delayed,
        dof,
        regime,
    }
}

/// Scheme and DoF for a CSI type.
pub fn select_scheme(csi: CsiType, ms: usize, kd: usize, n: usize) -> (SchemeId, DofPoint) {
    let point = match csi {
        CsiType::None => DofPoint {
            kd,
            n,
            ms,
            csi,
            dof: dof_t1(kd, n),
            regime: Regime::NoCsi,
        },
        CsiType::Instantaneous | CsiType::ModeratelyDelayed => DofPoint {
            csi,
            ..dof_t2(ms, kd, n)
        },
        CsiType::Delayed => dof_t3(ms, kd, n),
    };
    (point.regime.scheme(), point)
}

/// Relative gain `(to − from)/from`.
pub fn gain(from: Dof, to: Dof) -> Dof {
    (to - from) / from
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepAxis {
    N(Vec<usize>),
    Kd(Vec<usize>),
    Ms(Vec<usize>),
}

/// One axis varies; the others are fixed. `ms = None` ties the satellite
/// to `(kd+1)·n` antennas at every point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub kd: usize,
    pub n: usize,
    pub ms: Option<usize>,
}

/// A sweep row: which scheme runs and the point it achieves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub scheme: SchemeId,
    pub point: DofPoint,
}

impl SweepRow {
    /// RIS elements the running scheme needs per slot.
    pub fn l(&self) -> usize {
        let (kd, n) = (self.point.kd, self.point.n);
        match self.scheme {
            SchemeId::Dcsi => (kd * kd + 1) * n * n,
            SchemeId::NoCsi | SchemeId::Icsi => kd * kd * n * n,
        }
    }

    pub fn csv_line(&self) -> String {
        let p = &self.point;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.scheme,
            p.csi,
            p.kd,
            p.n,
            p.ms,
            self.l(),
            p.dof.numer(),
            p.dof.denom(),
            p.regime
        )
    }
}

pub const CSV_HEADER: &str = "scheme,csi,kd,n,ms,l,dof_num,dof_den,regime";

/// Evaluates no-CSI, instantaneous and delayed CSI at every axis point.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let points: Vec<(usize, usize, Option<usize>)> = match &spec.axis {
        SweepAxis::N(v) => v.iter().map(|&n| (spec.kd, n, spec.ms)).collect(),
        SweepAxis::Kd(v) => v.iter().map(|&kd| (kd, spec.n, spec.ms)).collect(),
        SweepAxis::Ms(v) => v.iter().map(|&ms| (spec.kd, spec.n, Some(ms))).collect(),
    };
    if points.is_empty() {
        return Err(Error::InvalidConfig("sweep axis is empty".into()));
    }
    let mut rows = Vec::with_capacity(points.len() * 3);
    for (kd, n, ms) in points {
        if kd == 0 || n == 0 {
            return Err(Error::InvalidConfig("sweep needs kd, n ≥ 1".into()));
        }
        let ms = ms.unwrap_or((kd + 1) * n);
        for csi in [CsiType::None, CsiType::Instantaneous, CsiType::Delayed] {
            let (scheme, point) = select_scheme(csi, ms, kd, n);
            rows.push(SweepRow { scheme, point });
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(a: i64, b: i64) -> Dof {
        Dof::new(a, b)
    }

    #[test]
    fn t1_examples() {
        assert_eq!(dof_t1(6, 3), r(21, 2));
        assert_eq!(dof_t1(1, 2), r(2, 1));
        assert_eq!(dof_t1(10, 2), r(11, 1));
        assert_eq!(gain(dof_t1(2, 2), dof_t1(10, 2)), r(8, 3));
    }

    #[test]
    fn t2_examples() {
        let p = dof_t2(21, 6, 3);
        assert_eq!((p.dof, p.regime), (r(21, 1), Regime::IcsiFull));
        let p = dof_t2(10, 6, 3);
        assert_eq!((p.dof, p.regime), (r(14, 1), Regime::IcsiDeficient));
        let p = dof_t2(3, 6, 3);
        assert_eq!((p.dof, p.regime), (r(21, 2), Regime::IcsiFallback));
        assert_eq!(dof_t2(7, 6, 3).regime, Regime::IcsiFallback);
        assert_eq!(dof_t2(20, 6, 3).dof, r(21, 1));
        assert_eq!(dof_t2(14, 6, 3).dof, r(14, 1));
    }

    #[test]
    fn t3_examples() {
        let p = dof_t3(21, 6, 3);
        assert_eq!((p.dof, p.regime), (r(111, 8), Regime::DcsiSpacetime));
        assert_eq!(dof_t3(99, 6, 3).dof, r(579, 34));
        let p = dof_t3(3, 6, 3);
        assert_eq!((p.dof, p.regime), (r(21, 2), Regime::DcsiFallback));
    }

    #[test]
    fn two_pairs_fall_back_at_full_antennas() {
        // 3kd − 1 = 5 > 2φ − ⌈φ⌉ = 3 at φ = 3
        for n in 1..6 {
            let p = dof_t3(3 * n, 2, n);
            assert_eq!(p.regime, Regime::DcsiFallback);
            assert_eq!(dof_t3_spacetime(3 * n, 2, n), r(5 * n as i64, 4));
        }
        let g = gain(dof_t3(6, 2, 2).dof, dof_t3(22, 10, 2).dof);
        assert_eq!(g, r(83, 18));
        let g = gain(dof_t3_spacetime(6, 2, 2), dof_t3_spacetime(22, 10, 2));
        assert_eq!(g, r(86, 15));
    }

    #[test]
    fn select_examples() {
        let (s, p) = select_scheme(CsiType::Delayed, 21, 6, 3);
        assert_eq!((s, p.regime, p.dof), (SchemeId::Dcsi, Regime::DcsiSpacetime, r(111, 8)));
        let (s, p) = select_scheme(CsiType::None, 99, 6, 3);
        assert_eq!((s, p.dof), (SchemeId::NoCsi, r(21, 2)));
        let (s, p) = select_scheme(CsiType::Instantaneous, 7, 6, 3);
        assert_eq!((s, p.dof, p.regime), (SchemeId::NoCsi, r(21, 2), Regime::IcsiFallback));
        let (_, p) = select_scheme(CsiType::ModeratelyDelayed, 21, 6, 3);
        assert_eq!((p.csi, p.dof), (CsiType::ModeratelyDelayed, r(21, 1)));
    }

    #[test]
    fn ms_sweep_shape() {
        let rows = sweep(&SweepSpec {
            axis: SweepAxis::Ms((3..=99).collect()),
            kd: 6,
            n: 3,
            ms: None,
        })
        .unwrap();
        let of = |csi| -> Vec<DofPoint> {
            rows.iter().filter(|r| r.point.csi == csi).map(|r| r.point).collect()
        };
        let icsi = of(CsiType::Instantaneous);
        let dcsi = of(CsiType::Delayed);
        let none = of(CsiType::None);
        assert!(icsi.windows(2).all(|w| w[0].dof <= w[1].dof));
        assert!(icsi.iter().filter(|p| p.ms >= 21).all(|p| p.dof == r(21, 1)));
        for (i, d) in icsi.iter().zip(&dcsi) {
            assert!(d.dof <= r(21, 1));
            assert!(d.dof <= i.dof);
        }
        assert!(none.iter().all(|p| p.dof == r(21, 2)));
    }

    #[test]
    fn n_sweep_ratio() {
        let rows = sweep(&SweepSpec {
            axis: SweepAxis::N((2..=8).collect()),
            kd: 6,
            n: 0,
            ms: None,
        })
        .unwrap();
        for chunk in rows.chunks(3) {
            assert_eq!(chunk[1].point.dof / chunk[0].point.dof, r(2, 1));
        }
    }

    #[test]
    fn empty_axis_rejected() {
        let spec = SweepSpec {
            axis: SweepAxis::Kd(vec![]),
            kd: 1,
            n: 2,
            ms: None,
        };
        assert!(sweep(&spec).is_err());
    }

    #[test]
    fn csv_format() {
        let rows = sweep(&SweepSpec {
            axis: SweepAxis::Ms(vec![21]),
            kd: 6,
            n: 3,
            ms: None,
        })
        .unwrap();
        let csv = to_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "nocsi,none,6,3,21,324,21,2,noCSI");
        assert_eq!(lines[2], "icsi,inst,6,3,21,324,21,1,icsi-full");
        assert_eq!(lines[3], "dcsi,delayed,6,3,21,333,111,8,dcsi-spacetime");
    }

    proptest! {
        #[test]
        fn t2_monotone_in_ms(kd in 1usize..12, n in 1usize..9, ms in 1usize..200) {
            prop_assert!(dof_t2(ms, kd, n).dof <= dof_t2(ms + 1, kd, n).dof);
        }

        #[test]
        fn fallbacks_equal_t1(kd in 1usize..12, n in 1usize..9, ms in 1usize..200) {
            if ms <= psi(kd, n) {
                prop_assert_eq!(dof_t2(ms, kd, n).dof, dof_t1(kd, n));
            }
            if !dcsi_condition(ms, kd, n) {
                prop_assert_eq!(dof_t3(ms, kd, n).dof, dof_t1(kd, n));
            }
        }

        #[test]
        fn psi_boundary(kd in 1usize..12, n in 1usize..9) {
            let p = psi(kd, n);
            if p >= 1 {
                prop_assert!(dof_t1(kd, n) >= ratio(p.div_ceil(kd + 1) * (kd + 1)));
            }
        }

        #[test]
        fn ordering_at_full_antennas(kd in 2usize..12, n in 1usize..9) {
            let ms = (kd + 1) * n;
            let t3 = dof_t3(ms, kd, n).dof;
            prop_assert!(dof_t1(kd, n) <= t3);
            prop_assert!(t3 <= dof_t2(ms, kd, n).dof);
        }

        #[test]
        fn spacetime_at_full_antennas(kd in 2usize..12, n in 1usize..9) {
            let want = Dof::new(((kd * kd + 1) * n) as i64, (kd + 2) as i64);
            prop_assert_eq!(dof_t3_spacetime((kd + 1) * n, kd, n), want);
            if kd >= 3 {
                prop_assert_eq!(dof_t3((kd + 1) * n, kd, n).dof, want);
            }
        }
    }
}
