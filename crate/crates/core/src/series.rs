//! Uniformly sampled throttle/thrust records and their CSV form.

use std::io::{Read, Write};

use thiserror::Error;

/// Relative tolerance on the sampling step.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("column `{column}` has {len} samples, expected {expected}")]
    LengthMismatch {
        column: &'static str,
        len: usize,
        expected: usize,
    },
    #[error("time grid is not uniform at sample {index}")]
    NonUniformGrid { index: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("unexpected CSV header `{0}`")]
    BadHeader(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Time (s), throttle (%) and thrust (N), optionally with the first and second
/// thrust derivatives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub time: Vec<f64>,
    pub throttle: Vec<f64>,
    pub thrust: Vec<f64>,
    pub thrust_dot: Option<Vec<f64>>,
    pub thrust_ddot: Option<Vec<f64>>,
}

impl TimeSeries {
    /// Builds a series on the grid `t_k = k dt`.
    pub fn uniform(dt: f64, throttle: Vec<f64>, thrust: Vec<f64>) -> Result<Self, SeriesError> {
        let time = (0..throttle.len()).map(|k| k as f64 * dt).collect();
        let series = Self {
            time,
            throttle,
            thrust,
            thrust_dot: None,
            thrust_ddot: None,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn has_derivatives(&self) -> bool {
        self.thrust_dot.is_some() && self.thrust_ddot.is_some()
    }

    /// Sampling step, taken from the first two samples.
    pub fn dt(&self) -> Option<f64> {
        (self.time.len() >= 2).then(|| self.time[1] - self.time[0])
    }

    pub fn validate(&self) -> Result<(), SeriesError> {
        let n = self.time.len();
        let check = |column: &'static str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(SeriesError::LengthMismatch {
                    column,
                    len,
                    expected: n,
                })
            }
        };
        check("throttle_pct", self.throttle.len())?;
        check("thrust_n", self.thrust.len())?;
        if let Some(d) = &self.thrust_dot {
            check("thrust_dot", d.len())?;
        }
        if let Some(d) = &self.thrust_ddot {
            check("thrust_ddot", d.len())?;
        }
        if let Some(dt) = self.dt() {
            if !(dt > 0.0) {
                return Err(SeriesError::NonUniformGrid { index: 1 });
            }
            for k in 1..n {
                let step = self.time[k] - self.time[k - 1];
                // Absolute slack for the rounding of k*dt on long records.
                let slack = GRID_TOL * dt + 1e-12 * self.time[k].abs();
                if (step - dt).abs() > slack {
                    return Err(SeriesError::NonUniformGrid { index: k });
                }
            }
        }
        Ok(())
    }

    /// Writes `time_s,throttle_pct,thrust_n[,thrust_dot,thrust_ddot]`,
    /// shortest round-trip decimals, LF line endings.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SeriesError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let derivs = self.thrust_dot.as_ref().zip(self.thrust_ddot.as_ref());
        if derivs.is_some() {
            w.write_record(["time_s", "throttle_pct", "thrust_n", "thrust_dot", "thrust_ddot"])?;
        } else {
            w.write_record(["time_s", "throttle_pct", "thrust_n"])?;
        }
        for k in 0..self.len() {
            let mut row = vec![
                self.time[k].to_string(),
                self.throttle[k].to_string(),
                self.thrust[k].to_string(),
            ];
            if let Some((d1, d2)) = derivs {
                row.push(d1[k].to_string());
                row.push(d2[k].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`TimeSeries::write_csv`]; row numbers in
    /// errors count the header as row 1.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SeriesError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let with_derivs = match header.as_slice() {
            [a, b, c] if a == "time_s" && b == "throttle_pct" && c == "thrust_n" => false,
            [a, b, c, d, e]
                if a == "time_s"
                    && b == "throttle_pct"
                    && c == "thrust_n"
                    && d == "thrust_dot"
                    && e == "thrust_ddot" =>
            {
                true
            }
            _ => return Err(SeriesError::BadHeader(header.join(","))),
        };
        let mut s = TimeSeries::default();
        let (mut d1, mut d2) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| SeriesError::Malformed {
                row,
                message: e.to_string(),
            })?;
            let expected = if with_derivs { 5 } else { 3 };
            if rec.len() != expected {
                return Err(SeriesError::Malformed {
                    row,
                    message: format!("expected {expected} fields, found {}", rec.len()),
                });
            }
            let mut vals = [0.0f64; 5];
            for (j, field) in rec.iter().enumerate() {
                vals[j] = field.trim().parse().map_err(|_| SeriesError::Malformed {
                    row,
                    message: format!("`{field}` is not a number"),
                })?;
                if !vals[j].is_finite() {
                    return Err(SeriesError::Malformed {
                        row,
                        message: format!("non-finite value `{field}`"),
                    });
                }
            }
            s.time.push(vals[0]);
            s.throttle.push(vals[1]);
            s.thrust.push(vals[2]);
            if with_derivs {
                d1.push(vals[3]);
                d2.push(vals[4]);
            }
        }
        if s.is_empty() {
            return Err(SeriesError::Empty);
        }
        if with_derivs {
            s.thrust_dot = Some(d1);
            s.thrust_ddot = Some(d2);
        }
        s.validate()?;
        Ok(s)
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let cut = |v: &Vec<f64>| v[start..end].to_vec();
        Self {
            time: cut(&self.time),
            throttle: cut(&self.throttle),
            thrust: cut(&self.thrust),
            thrust_dot: self.thrust_dot.as_ref().map(cut),
            thrust_ddot: self.thrust_ddot.as_ref().map(cut),
        }
    }
}
