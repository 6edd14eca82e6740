//! CSV tables for experiment results. Missing values are empty fields.

use std::fmt::Display;
use std::io::{BufRead, Write};

use super::cluster::ClusterResult;
use super::detection::SweepEntry;
use super::fragility::FragilityResult;
use super::pure_shape::{PureShapeResult, ToyResult};
use crate::roc::RocCurve;
use crate::{Error, Result};

fn opt<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_pure_shape_scores<W: Write>(mut out: W, r: &PureShapeResult) -> Result<()> {
    let second = if r.control {
        "benign_control"
    } else {
        "malicious"
    };
    writeln!(out, "bins,class,index,score")?;
    for o in &r.outcomes {
        for (i, s) in o.benign.iter().enumerate() {
            writeln!(out, "{},benign,{i},{s}", o.bins)?;
        }
        for (i, s) in o.malicious.iter().enumerate() {
            writeln!(out, "{},{second},{i},{s}", o.bins)?;
        }
    }
    Ok(())
}

pub fn write_pure_shape_summary<W: Write>(mut out: W, r: &PureShapeResult) -> Result<()> {
    writeln!(out, "bins,gamma,fp_rate,tp_rate,max_benign,min_second,gap")?;
    for o in &r.outcomes {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            o.bins,
            o.gamma,
            o.fp_rate,
            o.tp_rate,
            o.max_benign(),
            o.min_malicious(),
            o.gap()
        )?;
    }
    Ok(())
}

pub fn write_toy<W: Write>(mut out: W, r: &ToyResult) -> Result<()> {
    writeln!(out, "quantity,value")?;
    writeln!(out, "draws,{}", r.draws)?;
    writeln!(out, "fp_rate,{}", r.measured.fp_rate)?;
    writeln!(out, "tp_rate,{}", r.measured.tp_rate)?;
    writeln!(out, "threshold_n100,{}", r.threshold_n100)?;
    writeln!(out, "decision_n100,{}", r.decision_n100)?;
    writeln!(out, "threshold_n1000,{}", r.threshold_n1000)?;
    writeln!(out, "decision_n1000,{}", r.decision_n1000)?;
    writeln!(out, "log10_tail_90_of_100,{}", r.log10_tail_90_of_100)?;
    Ok(())
}

pub fn write_runs<W: Write>(mut out: W, entries: &[SweepEntry]) -> Result<()> {
    writeln!(
        out,
        "scenario,ntw,groups,infection,repetition,detection_time,infected_at_detection,false_alarms,decided_checks,clean_checks,infected_at_end,population"
    )?;
    for e in entries {
        let p = &e.point;
        for r in &e.runs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                p.scenario,
                p.ntw,
                p.groups,
                p.infection,
                r.repetition,
                opt(r.detection_time),
                opt(r.infected_at_detection),
                r.false_alarms,
                r.decided_checks,
                r.clean_checks,
                r.infected_at_end,
                r.population
            )?;
        }
    }
    Ok(())
}

pub fn write_sweep_summary<W: Write>(mut out: W, entries: &[SweepEntry]) -> Result<()> {
    writeln!(
        out,
        "scenario,ntw,groups,infection,repetitions,detected,censored,median_infected,p01_infected,p99_infected,median_time,p01_time,p99_time,false_alarm_rate"
    )?;
    for e in entries {
        let (p, s) = (&e.point, &e.summary);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.scenario,
            p.ntw,
            p.groups,
            p.infection,
            s.repetitions,
            s.detected,
            s.censored,
            opt(s.median_infected),
            opt(s.p01_infected),
            opt(s.p99_infected),
            opt(s.median_time),
            opt(s.p01_time),
            opt(s.p99_time),
            opt(s.false_alarm_rate)
        )?;
    }
    Ok(())
}

pub fn write_fragility<W: Write>(mut out: W, r: &FragilityResult) -> Result<()> {
    writeln!(
        out,
        "relative_error,true_fv_count,estimated_fv_count,threshold,count_fp,count_tp,shape_fp,shape_tp"
    )?;
    for row in &r.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.relative_error,
            r.true_fv_count,
            row.estimated_fv_count,
            row.threshold,
            row.count_fp,
            row.count_tp,
            r.shape_fp,
            r.shape_tp
        )?;
    }
    Ok(())
}

pub fn write_cluster_scores<W: Write>(mut out: W, r: &ClusterResult) -> Result<()> {
    writeln!(
        out,
        "repetition,eval_time,infected,class,shape_score,cluster_score"
    )?;
    for p in &r.pairs {
        writeln!(
            out,
            "{},{},{},infected,{},{}",
            p.repetition, p.eval_time, p.infected, p.infected_shape, p.infected_cluster
        )?;
        writeln!(
            out,
            "{},{},0,benign,{},{}",
            p.repetition, p.eval_time, p.benign_shape, p.benign_cluster
        )?;
    }
    Ok(())
}

pub fn write_cluster_auc<W: Write>(mut out: W, r: &ClusterResult) -> Result<()> {
    writeln!(out, "detector,auc,pairs,skipped")?;
    let n = r.pairs.len();
    writeln!(out, "shape_gd,{},{n},{}", opt(r.shape_auc), r.skipped)?;
    writeln!(out, "cluster_gd,{},{n},{}", opt(r.cluster_auc), r.skipped)?;
    Ok(())
}

pub fn write_roc<W: Write>(mut out: W, r: &RocCurve) -> Result<()> {
    writeln!(out, "fp_rate,tp_rate")?;
    for (fp, tp) in &r.points {
        writeln!(out, "{fp},{tp}")?;
    }
    Ok(())
}

/// Reads `class,score` rows (header required, extra columns ignored) and
/// splits them into positive and negative scores.
pub fn read_labeled_scores<R: BufRead>(input: R, positive: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = input.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(Error::EmptyInput("score file")),
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::parse(1, format!("missing column `{name}`")))
    };
    let (ci, si) = (find("class")?, find("score")?);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let (Some(class), Some(score)) = (f.get(ci), f.get(si)) else {
            return Err(Error::parse(i + 1, "too few fields"));
        };
        let score: f64 = score
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("bad score `{score}`")))?;
        if *class == positive {
            pos.push(score);
        } else {
            neg.push(score);
        }
    }
    Ok((pos, neg))
}
