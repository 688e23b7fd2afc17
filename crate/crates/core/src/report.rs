//! Tabular reports: one row per entity, metric and grid point, with the
//! mean and interval bounds.

use std::io::Write;

use crate::metrics::{L1Sweep, SweepCell};
use crate::simulator::CriterionSeries;

const FLOAT_DIGITS: usize = 10;

fn fmt(v: f64) -> String {
    format!("{v:.FLOAT_DIGITS$}")
}

/// Write an L1 sweep as CSV: `entity,metric,n,mean,ci_low,ci_high,groups`.
/// Missing cells are written with empty value fields.
pub fn write_sweep_csv<W: Write>(out: W, sweep: &L1Sweep) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "entity", "metric", "n", "mean", "ci_low", "ci_high", "groups",
    ])?;
    for series in &sweep.series {
        for (metric, cells) in [
            ("reward_l1", &series.reward),
            ("transition_l1", &series.transition),
        ] {
            let Some(cells) = cells else { continue };
            for (n, cell) in sweep.n_grid.iter().zip(cells) {
                let n = n.to_string();
                match cell {
                    Some(SweepCell {
                        mean,
                        ci_low,
                        ci_high,
                        groups,
                    }) => w.write_record([
                        series.entity.as_str(),
                        metric,
                        &n,
                        &fmt(*mean),
                        &fmt(*ci_low),
                        &fmt(*ci_high),
                        &groups.to_string(),
                    ])?,
                    None => {
                        w.write_record([series.entity.as_str(), metric, &n, "", "", "", "0"])?
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write criterion series as CSV: `entity,metric,t,mean,ci_low,ci_high,std_err`,
/// with `t` counted from 1.
pub fn write_series_csv<W: Write>(out: W, rows: &[(String, CriterionSeries)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "entity", "metric", "t", "mean", "ci_low", "ci_high", "std_err",
    ])?;
    for (entity, s) in rows {
        let metric = s.criterion.tag();
        for t in 0..s.timesteps {
            w.write_record([
                entity.as_str(),
                metric,
                &(t + 1).to_string(),
                &fmt(s.mean[t]),
                &fmt(s.ci_low[t]),
                &fmt(s.ci_high[t]),
                &fmt(s.std_err[t]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{EntityKind, SweepSeries};
    use crate::study::Criterion;

    #[test]
    fn sweep_rows() {
        let sweep = L1Sweep {
            n_grid: vec![10, 20],
            series: vec![SweepSeries {
                entity: "llm".into(),
                kind: EntityKind::Source,
                reward: Some(vec![
                    Some(SweepCell {
                        mean: 0.5,
                        ci_low: 0.25,
                        ci_high: 0.75,
                        groups: 3,
                    }),
                    None,
                ]),
                transition: None,
            }],
        };
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &sweep).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[1],
            "llm,reward_l1,10,0.5000000000,0.2500000000,0.7500000000,3"
        );
        assert_eq!(lines[2], "llm,reward_l1,20,,,,0");
    }

    #[test]
    fn series_rows() {
        let s = CriterionSeries {
            criterion: Criterion::MeanReward,
            timesteps: 2,
            mean: vec![0.1, 0.2],
            ci_low: vec![0.0, 0.1],
            ci_high: vec![0.2, 0.3],
            std_err: vec![0.05, 0.05],
        };
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &[("optimal".into(), s)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text
            .lines()
            .nth(2)
            .unwrap()
            .starts_with("optimal,mean_reward,2,0.2000000000"));
    }
}
