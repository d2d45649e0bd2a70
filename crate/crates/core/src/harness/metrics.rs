use std::io::{self, Write};

use serde::Serialize;

use crate::net::FlopCount;

/// Accounting for one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchMetrics {
    pub iteration: u64,
    pub epoch: usize,
    pub retained: usize,
    /// Mean importance over the batch; NaN when no scoring happened.
    pub mean_importance: f64,
    /// Pruning threshold; `-inf` when nothing was pruned.
    pub threshold: f64,
    pub mean_loss: f64,
    pub flops: FlopCount,
    pub pruning_active: bool,
    /// Retained samples per ground-truth component.
    pub comp_retained: Vec<u64>,
    /// Drawn samples per ground-truth component.
    pub comp_drawn: Vec<u64>,
}

/// Decimal rendering with nine significant digits.
///
/// `1234.5` becomes `1234.50000`, `0.000123` becomes `0.000123000000`.
pub fn format_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0.00000000".into();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let point = exp + 1;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}", digits, "0".repeat(point as usize - digits.len()))
    } else {
        let (int, frac) = digits.split_at(point as usize);
        format!("{int}.{frac}")
    };
    format!("{sign}{body}")
}

/// CSV sink for [`BatchMetrics`].
pub struct MetricsWriter<W: Write> {
    out: W,
    components: usize,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W, components: usize) -> Self {
        Self { out, components }
    }

    pub fn header(components: usize) -> String {
        let mut cols = vec![
            "iter",
            "epoch",
            "retained",
            "mean_importance",
            "threshold",
            "mean_loss",
            "shallow_flops",
            "deep_flops",
            "saved_flops",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        cols.extend((0..components).map(|k| format!("comp_retained_{k}")));
        cols.join(",")
    }

    pub fn write_header(&mut self) -> io::Result<()> {
        writeln!(self.out, "{}", Self::header(self.components))
    }

    pub fn write_row(&mut self, m: &BatchMetrics) -> io::Result<()> {
        write!(
            self.out,
            "{},{},{},{},{},{},{},{},{}",
            m.iteration,
            m.epoch,
            m.retained,
            format_sig9(m.mean_importance),
            format_sig9(m.threshold),
            format_sig9(m.mean_loss),
            m.flops.shallow,
            m.flops.deep,
            m.flops.saved
        )?;
        for k in 0..self.components {
            write!(self.out, ",{}", m.comp_retained.get(k).copied().unwrap_or(0))?;
        }
        writeln!(self.out)
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Per-component retention over a slice of history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionSummary {
    pub retained: Vec<u64>,
    pub drawn: Vec<u64>,
}

impl RetentionSummary {
    /// Sums over iterations where pruning was active.
    pub fn over_pruning(history: &[BatchMetrics]) -> Self {
        Self::over(history.iter().filter(|m| m.pruning_active))
    }

    pub fn over<'a>(history: impl IntoIterator<Item = &'a BatchMetrics>) -> Self {
        let mut retained: Vec<u64> = Vec::new();
        let mut drawn: Vec<u64> = Vec::new();
        for m in history {
            if retained.len() < m.comp_retained.len() {
                retained.resize(m.comp_retained.len(), 0);
                drawn.resize(m.comp_drawn.len(), 0);
            }
            for (acc, v) in retained.iter_mut().zip(&m.comp_retained) {
                *acc += v;
            }
            for (acc, v) in drawn.iter_mut().zip(&m.comp_drawn) {
                *acc += v;
            }
        }
        Self { retained, drawn }
    }

    /// Retained / drawn per component; NaN for never-drawn components.
    pub fn rates(&self) -> Vec<f64> {
        self.retained
            .iter()
            .zip(&self.drawn)
            .map(|(&r, &d)| if d == 0 { f64::NAN } else { r as f64 / d as f64 })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(1.0), "1.00000000");
        assert_eq!(format_sig9(1234.5), "1234.50000");
        assert_eq!(format_sig9(-0.000123), "-0.000123000000");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(2.0f64.ln()), "0.693147181");
        assert_eq!(format_sig9(123456789012.0), "123456789000");
        assert_eq!(format_sig9(9.9999999999), "10.0000000");
        assert_eq!(format_sig9(0.0), "0.00000000");
        assert_eq!(format_sig9(f64::NEG_INFINITY), "-inf");
        assert_eq!(format_sig9(f64::NAN), "nan");
    }

    fn sample() -> BatchMetrics {
        BatchMetrics {
            iteration: 3,
            epoch: 1,
            retained: 5,
            mean_importance: 2.5,
            threshold: f64::NEG_INFINITY,
            mean_loss: 0.125,
            flops: FlopCount { shallow: 10, deep: 20, saved: 4 },
            pruning_active: true,
            comp_retained: vec![4, 1],
            comp_drawn: vec![6, 2],
        }
    }

    #[test]
    fn csv_row_layout() {
        let mut w = MetricsWriter::new(Vec::new(), 2);
        w.write_header().unwrap();
        w.write_row(&sample()).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert_eq!(
            text,
            "iter,epoch,retained,mean_importance,threshold,mean_loss,shallow_flops,deep_flops,saved_flops,\
             comp_retained_0,comp_retained_1\n\
             3,1,5,2.50000000,-inf,0.125000000,10,20,4,4,1\n"
        );
    }

    #[test]
    fn retention_rates() {
        let mut idle = sample();
        idle.pruning_active = false;
        let s = RetentionSummary::over_pruning(&[sample(), idle, sample()]);
        assert_eq!(s.retained, vec![8, 2]);
        assert_eq!(s.drawn, vec![12, 4]);
        assert_eq!(s.rates(), vec![8.0 / 12.0, 0.5]);
    }
}
