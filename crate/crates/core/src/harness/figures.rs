//! DoF tables for the three evaluation sweeps.

use std::fmt;
use std::str::FromStr;

use crate::dof::{self, SweepAxis, SweepRow, SweepSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// `n = 2..8` at `kd = 6`, `ms = (kd+1)·n`.
    Fig3,
    /// `kd = 2..10` for `n ∈ {2, 3}`, `ms = (kd+1)·n`.
    Fig4,
    /// `ms = 3..99` at `kd = 6`, `n = 3`.
    Fig5,
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
        })
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            "fig5" => Ok(Figure::Fig5),
            other => Err(Error::InvalidConfig(format!("unknown figure {other:?}"))),
        }
    }
}

pub fn figure_data(which: Figure) -> Result<Vec<SweepRow>> {
    match which {
        Figure::Fig3 => dof::sweep(&SweepSpec {
            axis: SweepAxis::N((2..=8).collect()),
            kd: 6,
            n: 0,
            ms: None,
        }),
        Figure::Fig4 => {
            let mut rows = Vec::new();
            for n in [2, 3] {
                rows.extend(dof::sweep(&SweepSpec {
                    axis: SweepAxis::Kd((2..=10).collect()),
                    kd: 0,
                    n,
                    ms: None,
                })?);
            }
            Ok(rows)
        }
        Figure::Fig5 => dof::sweep(&SweepSpec {
            axis: SweepAxis::Ms((3..=99).collect()),
            kd: 6,
            n: 3,
            ms: None,
        }),
    }
}

pub fn figure_csv(which: Figure) -> Result<String> {
    Ok(dof::to_csv(&figure_data(which)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CsiType;
    use num_rational::Ratio;

    fn at(rows: &[SweepRow], csi: CsiType, pick: impl Fn(&SweepRow) -> bool) -> Ratio<i64> {
        rows.iter()
            .find(|r| r.point.csi == csi && pick(r))
            .unwrap()
            .point
            .dof
    }

    #[test]
    fn fig5_endpoints() {
        let rows = figure_data(Figure::Fig5).unwrap();
        assert_eq!(rows.len(), 97 * 3);
        for csi in [CsiType::None, CsiType::Instantaneous, CsiType::Delayed] {
            assert_eq!(at(&rows, csi, |r| r.point.ms == 3), Ratio::new(21, 2));
        }
        assert_eq!(at(&rows, CsiType::Instantaneous, |r| r.point.ms == 99), Ratio::from(21));
        assert_eq!(at(&rows, CsiType::Delayed, |r| r.point.ms == 99), Ratio::new(579, 34));
        assert_eq!(at(&rows, CsiType::None, |r| r.point.ms == 99), Ratio::new(21, 2));
    }

    #[test]
    fn fig3_row() {
        let rows = figure_data(Figure::Fig3).unwrap();
        assert_eq!(at(&rows, CsiType::Instantaneous, |r| r.point.n == 3), Ratio::from(21));
        assert_eq!(at(&rows, CsiType::Delayed, |r| r.point.n == 3), Ratio::new(111, 8));
        assert_eq!(at(&rows, CsiType::None, |r| r.point.n == 3), Ratio::new(21, 2));
    }

    #[test]
    fn fig4_shape() {
        let csv = figure_csv(Figure::Fig4).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 9 * 3);
        assert!(csv.starts_with(dof::CSV_HEADER));
        assert!("fig9".parse::<Figure>().is_err());
    }
}
