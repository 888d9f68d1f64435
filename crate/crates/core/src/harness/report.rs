//! Donor × receiver score grids and calibration curves.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::aggregate::AggregateCell;
use crate::harness::catalog::natural_cmp;

/// `value · 100` rounded to an integer, halves away from zero. The product
/// is first snapped to 1e-9 so decimal halves such as `0.285` are not lost
/// to binary representation.
pub fn percent(value: f64) -> i64 {
    let scaled = ((value * 100.0) * 1e9).round() / 1e9;
    scaled.round() as i64
}

/// Rows are donors, columns receivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGrid {
    pub analysis: String,
    pub k: usize,
    pub donors: Vec<String>,
    pub receivers: Vec<String>,
    /// `None` where the cell is missing.
    pub values: Vec<Vec<Option<i64>>>,
    /// Column maxima of the rounded values; ties all flagged.
    pub bold: Vec<Vec<bool>>,
}

impl ScoreGrid {
    /// Delimited grid; a blank field is a missing cell, a trailing `*` marks
    /// a column maximum.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("donor");
        for r in &self.receivers {
            out.push(',');
            out.push_str(r);
        }
        out.push('\n');
        for (i, d) in self.donors.iter().enumerate() {
            out.push_str(d);
            for j in 0..self.receivers.len() {
                out.push(',');
                if let Some(v) = self.values[i][j] {
                    let _ = write!(out, "{v}{}", if self.bold[i][j] { "*" } else { "" });
                }
            }
            out.push('\n');
        }
        out
    }

    /// Markdown table with column maxima in bold.
    pub fn to_markdown(&self) -> String {
        let mut out = format!("Scores, {} with {} calibration examples per class\n\n", self.analysis, self.k);
        out.push_str("| pretraining \\ test |");
        for r in &self.receivers {
            let _ = write!(out, " {r} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.receivers.len()));
        out.push('\n');
        for (i, d) in self.donors.iter().enumerate() {
            let _ = write!(out, "| {d} |");
            for j in 0..self.receivers.len() {
                match self.values[i][j] {
                    Some(v) if self.bold[i][j] => {
                        let _ = write!(out, " **{v}** |");
                    }
                    Some(v) => {
                        let _ = write!(out, " {v} |");
                    }
                    None => out.push_str("  |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn ordered(ids: impl IntoIterator<Item = String>, order: Option<&[String]>) -> Vec<String> {
    let set: BTreeSet<String> = ids.into_iter().collect();
    match order {
        Some(o) => {
            let mut v: Vec<String> = o.iter().filter(|x| set.contains(*x)).cloned().collect();
            let mut rest: Vec<String> = set.into_iter().filter(|x| !o.contains(x)).collect();
            rest.sort_by(|a, b| natural_cmp(a, b));
            v.extend(rest);
            v
        }
        None => {
            let mut v: Vec<String> = set.into_iter().collect();
            v.sort_by(|a, b| natural_cmp(a, b));
            v
        }
    }
}

/// Builds the grid of one analysis at one `k`. Row and column order follow
/// `donor_order` / `receiver_order` when given, else sorted ids.
pub fn emit_score_table(
    cells: &[AggregateCell],
    analysis: &str,
    k: usize,
    donor_order: Option<&[String]>,
    receiver_order: Option<&[String]>,
) -> Result<ScoreGrid> {
    let selected: Vec<&AggregateCell> = cells.iter().filter(|c| c.analysis == analysis && c.k == k).collect();
    if selected.is_empty() {
        return Err(Error::invalid("cells", format!("no cells for {analysis} at k = {k}")));
    }
    let donors = ordered(selected.iter().map(|c| c.donor.clone()), donor_order);
    let receivers = ordered(selected.iter().map(|c| c.receiver.clone()), receiver_order);
    let lookup: BTreeMap<(&str, &str), f64> = selected
        .iter()
        .map(|c| ((c.donor.as_str(), c.receiver.as_str()), c.mean))
        .collect();
    let values: Vec<Vec<Option<i64>>> = donors
        .iter()
        .map(|d| {
            receivers
                .iter()
                .map(|r| lookup.get(&(d.as_str(), r.as_str())).map(|&v| percent(v)))
                .collect()
        })
        .collect();
    let col_max: Vec<Option<i64>> = (0..receivers.len())
        .map(|j| values.iter().filter_map(|row| row[j]).max())
        .collect();
    let bold = values
        .iter()
        .map(|row| {
            row.iter()
                .zip(&col_max)
                .map(|(v, m)| v.is_some() && v == m)
                .collect()
        })
        .collect();
    Ok(ScoreGrid {
        analysis: analysis.to_string(),
        k,
        donors,
        receivers,
        values,
        bold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// One series per donor, averaged over receivers.
    AcrossReceivers,
    /// One series per receiver, averaged over donors.
    AcrossDonors,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::AcrossReceivers => "across-receivers",
            Direction::AcrossDonors => "across-donors",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub label: String,
    pub k_values: Vec<usize>,
    /// Equal-weight mean over datasets; `None` where no dataset contributes.
    pub mean: Vec<Option<f64>>,
    pub count: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub direction: Direction,
    pub analysis: String,
    pub k_values: Vec<usize>,
    pub series: Vec<CurveSeries>,
    /// Datasets averaged over at each `k`, over all series.
    pub dataset_count: Vec<usize>,
}

/// Calibration curves of one analysis. Every dataset on the averaged axis
/// carries the same weight regardless of its subject count.
pub fn emit_curves(cells: &[AggregateCell], direction: Direction, analysis: &str) -> CurveSet {
    let selected: Vec<&AggregateCell> = cells.iter().filter(|c| c.analysis == analysis).collect();
    let k_values: Vec<usize> = selected.iter().map(|c| c.k).collect::<BTreeSet<_>>().into_iter().collect();
    let (series_of, averaged_of): (fn(&AggregateCell) -> &str, fn(&AggregateCell) -> &str) = match direction {
        Direction::AcrossReceivers => (|c| &c.donor, |c| &c.receiver),
        Direction::AcrossDonors => (|c| &c.receiver, |c| &c.donor),
    };
    let labels = ordered(selected.iter().map(|c| series_of(c).to_string()), None);
    let series = labels
        .iter()
        .map(|label| {
            let mut mean = Vec::new();
            let mut count = Vec::new();
            for &k in &k_values {
                let mut vals: Vec<f64> = selected
                    .iter()
                    .filter(|c| c.k == k && series_of(c) == label)
                    .map(|c| c.mean)
                    .collect();
                count.push(vals.len());
                vals.sort_by(f64::total_cmp);
                mean.push((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64));
            }
            CurveSeries {
                label: label.clone(),
                k_values: k_values.clone(),
                mean,
                count,
            }
        })
        .collect();
    let dataset_count = k_values
        .iter()
        .map(|&k| {
            selected
                .iter()
                .filter(|c| c.k == k)
                .map(|c| averaged_of(c))
                .collect::<BTreeSet<_>>()
                .len()
        })
        .collect();
    CurveSet {
        direction,
        analysis: analysis.to_string(),
        k_values,
        series,
        dataset_count,
    }
}

impl CurveSet {
    /// Long format: one row per (series, k), plus the dataset-count rows
    /// under the label `n_datasets`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("direction,analysis,series,k,mean,n_datasets\n");
        for s in &self.series {
            for (i, &k) in s.k_values.iter().enumerate() {
                let mean = s.mean[i].map(|m| m.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{k},{mean},{}", self.direction.name(), self.analysis, s.label, s.count[i]);
            }
        }
        for (i, &k) in self.k_values.iter().enumerate() {
            let _ = writeln!(out, "{},{},n_datasets,{k},,{}", self.direction.name(), self.analysis, self.dataset_count[i]);
        }
        out
    }

    /// Line plot: mean score (×100) against k on a log₂ axis, with the
    /// dataset count drawn as a step line on the right axis.
    pub fn to_svg(&self) -> String {
        const W: f64 = 720.0;
        const H: f64 = 420.0;
        const L: f64 = 60.0;
        const R: f64 = 60.0;
        const T: f64 = 40.0;
        const B: f64 = 50.0;
        const PALETTE: [&str; 10] = [
            "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
        ];
        let pw = W - L - R;
        let ph = H - T - B;
        let lk: Vec<f64> = self.k_values.iter().map(|&k| (k as f64).log2()).collect();
        let (kmin, kmax) = match (lk.first(), lk.last()) {
            (Some(&a), Some(&b)) if b > a => (a, b),
            (Some(&a), _) => (a - 0.5, a + 0.5),
            _ => (0.0, 1.0),
        };
        let x = |v: f64| L + (v - kmin) / (kmax - kmin) * pw;
        let scores: Vec<f64> = self.series.iter().flat_map(|s| s.mean.iter().flatten().map(|m| m * 100.0)).collect();
        let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (ylo, yhi) = if scores.is_empty() {
            (0.0, 100.0)
        } else {
            (((lo - 5.0) / 10.0).floor() * 10.0, ((hi + 5.0) / 10.0).ceil() * 10.0)
        };
        let y = |v: f64| T + (1.0 - (v - ylo) / (yhi - ylo)) * ph;
        let cmax = self.dataset_count.iter().copied().max().unwrap_or(1).max(1) as f64;
        let yc = |v: f64| T + (1.0 - v / cmax) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} ({})</text>"#,
            W / 2.0,
            self.analysis,
            self.direction.name()
        );
        let _ = writeln!(
            s,
            r##"<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
        );
        for (i, &k) in self.k_values.iter().enumerate() {
            let xi = x(lk[i]);
            let _ = writeln!(
                s,
                r##"<line x1="{xi:.1}" y1="{}" x2="{xi:.1}" y2="{}" stroke="#333"/><text x="{xi:.1}" y="{}" text-anchor="middle">{k}</text>"##,
                T + ph,
                T + ph + 5.0,
                T + ph + 18.0
            );
        }
        let mut v = ylo;
        while v <= yhi + 1e-9 {
            let yi = y(v);
            let _ = writeln!(
                s,
                r##"<line x1="{}" y1="{yi:.1}" x2="{L}" y2="{yi:.1}" stroke="#333"/><text x="{}" y="{:.1}" text-anchor="end">{v}</text>"##,
                L - 5.0,
                L - 8.0,
                yi + 4.0
            );
            v += 10.0;
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">calibration examples per class</text>"#,
            L + pw / 2.0,
            H - 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">mean score</text>"#,
            T + ph / 2.0,
            T + ph / 2.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" transform="rotate(90 {} {})">datasets</text>"#,
            W - 15.0,
            T + ph / 2.0,
            W - 15.0,
            T + ph / 2.0
        );

        // dataset-count step line
        let mut d = String::new();
        for (i, &c) in self.dataset_count.iter().enumerate() {
            let xi = x(lk[i]);
            let yi = yc(c as f64);
            if i == 0 {
                let _ = write!(d, "M{xi:.1},{yi:.1}");
            } else {
                let _ = write!(d, " H{xi:.1} V{yi:.1}");
            }
        }
        if !d.is_empty() {
            let _ = writeln!(
                s,
                r##"<path d="{d}" fill="none" stroke="#999" stroke-dasharray="4 3"/>"##
            );
        }
        for c in 0..=cmax as usize {
            let yi = yc(c as f64);
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{:.1}" fill="#777">{c}</text>"##,
                L + pw + 6.0,
                yi + 4.0
            );
        }

        for (si, series) in self.series.iter().enumerate() {
            let colour = PALETTE[si % PALETTE.len()];
            let pts: Vec<String> = series
                .mean
                .iter()
                .enumerate()
                .filter_map(|(i, m)| m.map(|m| format!("{:.1},{:.1}", x(lk[i]), y(m * 100.0))))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            let ly = T + 14.0 + 16.0 * si as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly:.1}" x2="{}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{:.1}">{}</text>"#,
                L + 10.0,
                L + 30.0,
                L + 35.0,
                ly + 4.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Aggregate cells as delimited text.
pub fn cells_to_csv(cells: &[AggregateCell]) -> String {
    let mut out = String::from("donor,receiver,analysis,k,mean,n_scores,n_subjects,n_sessions\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.donor, c.receiver, c.analysis, c.k, c.mean, c.n_scores, c.n_subjects, c.n_sessions
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(donor: &str, receiver: &str, k: usize, mean: f64) -> AggregateCell {
        AggregateCell {
            donor: donor.into(),
            receiver: receiver.into(),
            analysis: "rh-f".into(),
            k,
            mean,
            n_scores: 16,
            n_subjects: 1,
            n_sessions: 1,
        }
    }

    #[test]
    fn rounding() {
        assert_eq!(percent(0.9467), 95);
        assert_eq!(percent(0.945), 95);
        assert_eq!(percent(0.285), 29);
        assert_eq!(percent(0.944_999), 94);
        assert_eq!(percent(1.0), 100);
        assert_eq!(percent(0.0), 0);
    }

    #[test]
    fn column_max_and_blank() {
        let cells = [
            cell("A", "X", 16, 0.63),
            cell("B", "X", 16, 0.73),
            cell("C", "X", 16, 0.70),
            cell("A", "Y", 16, 0.5),
        ];
        let g = emit_score_table(&cells, "rh-f", 16, None, None).unwrap();
        assert_eq!(g.values[1][0], Some(73));
        assert!(g.bold[1][0] && !g.bold[0][0] && !g.bold[2][0]);
        assert_eq!(g.values[1][1], None);
        assert!(g.to_csv().contains("B,73*,\n"));
        assert!(g.to_markdown().contains("| B | **73** |  |"));
        assert!(emit_score_table(&cells, "lh-rh", 16, None, None).is_err());
    }

    #[test]
    fn curve_counts_step_down() {
        let cells = [
            cell("A", "X", 16, 0.8),
            cell("A", "Y", 16, 0.6),
            cell("A", "X", 32, 0.9),
        ];
        let c = emit_curves(&cells, Direction::AcrossReceivers, "rh-f");
        assert_eq!(c.k_values, [16, 32]);
        assert_eq!(c.dataset_count, [2, 1]);
        assert!((c.series[0].mean[0].unwrap() - 0.7).abs() < 1e-12);
        assert!(c.to_svg().starts_with("<svg"));
        assert!(c.to_csv().contains("across-receivers,rh-f,n_datasets,32,,1"));
    }
}
